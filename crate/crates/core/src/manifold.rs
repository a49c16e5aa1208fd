//! Geometry of the product manifold `S(m,r) × Gr(l,r)`.
//!
//! The first factor is the oblique manifold of `m×r` matrices with unit-norm
//! columns (dictionaries), the second the Grassmannian represented by rank-`l`
//! orthogonal projectors in `ℝ^{r×r}`. Both inherit the Euclidean metric of
//! the embedding space, so tangent projections are orthogonal projections and
//! the product metric is a sum of Frobenius inner products.
//!
//! Curves on the manifold are generated by retractions rather than geodesics:
//!
//! ```text
//! sphere:     γ(t) = (d + tξ) / ‖d + tξ‖
//! Grassmann:  γ(t) = ζ(t) P ζ(t)ᵀ,   ζ(t) = qf(I + t(ΨP − PΨ))
//! ```
//!
//! where `qf` is the Q factor of the QR decomposition with positive `diag(R)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SparlowError};
use crate::linalg::{frob_dot, symmetrize, top_eigenvectors};

const UNIT_NORM_TOL: f64 = 1e-12;
const SINGULAR_STEP_NORM: f64 = 1e-14;
const QR_RANK_TOL: f64 = 1e-12;

/// A dictionary: an `m×r` matrix whose columns (atoms) have unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps a matrix whose columns are already unit-norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(SparlowError::Validation("dictionary must be non-empty".into()));
        }
        for (i, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(SparlowError::Validation(format!(
                    "atom {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Dictionary { atoms })
    }

    /// Normalizes every column; zero columns are rejected.
    pub fn normalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (i, mut col) in atoms.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(SparlowError::Validation(format!("atom {i} cannot be normalized")));
            }
            col /= norm;
        }
        Dictionary::new(atoms)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Signal dimension `m`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms `r`.
    pub fn atoms(&self) -> usize {
        self.atoms.ncols()
    }

    /// Largest `|d_iᵀ d_j|` over distinct atoms.
    pub fn max_coherence(&self) -> f64 {
        let gram = self.atoms.transpose() * &self.atoms;
        let r = gram.nrows();
        let mut best: f64 = 0.0;
        for j in 0..r {
            for i in (j + 1)..r {
                best = best.max(gram[(i, j)].abs());
            }
        }
        best
    }
}

/// A rank-`l` orthogonal projector in `ℝ^{r×r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    mat: DMatrix<f64>,
    rank: usize,
}

impl Projector {
    /// Validates symmetry, idempotency and trace.
    pub fn new(mat: DMatrix<f64>, rank: usize) -> Result<Self> {
        let p = Projector { mat, rank };
        p.check(1e-12, 1e-10)?;
        Ok(p)
    }

    /// `P = U Uᵀ` for a basis with orthonormal columns.
    pub fn from_basis(basis: &DMatrix<f64>) -> Result<Self> {
        let l = basis.ncols();
        let gram = basis.transpose() * basis;
        let err = (gram - DMatrix::identity(l, l)).norm();
        if err > 1e-10 {
            return Err(SparlowError::Validation(format!(
                "basis columns are not orthonormal (‖UᵀU − I‖ = {err:e})"
            )));
        }
        let mat = symmetrize(&(basis * basis.transpose()));
        Projector::new(mat, l)
    }

    /// Projector onto the first `l` coordinate axes.
    pub fn coordinate(r: usize, l: usize) -> Result<Self> {
        let mut mat = DMatrix::zeros(r, r);
        for i in 0..l.min(r) {
            mat[(i, i)] = 1.0;
        }
        Projector::new(mat, l)
    }

    pub(crate) fn from_parts_unchecked(mat: DMatrix<f64>, rank: usize) -> Self {
        Projector { mat, rank }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.mat.nrows()
    }

    /// Checks the projector invariants at the given tolerances.
    pub fn check(&self, sym_tol: f64, idem_tol: f64) -> Result<()> {
        let r = self.mat.nrows();
        if r != self.mat.ncols() {
            return Err(SparlowError::Dimension("projector must be square".into()));
        }
        if self.rank == 0 || self.rank >= r {
            return Err(SparlowError::Validation(format!(
                "projector rank {} must satisfy 1 ≤ l < {r}",
                self.rank
            )));
        }
        let asym = (&self.mat - self.mat.transpose()).norm();
        if !(asym <= sym_tol) {
            return Err(SparlowError::Validation(format!(
                "projector not symmetric ({asym:e})"
            )));
        }
        let idem = (&self.mat * &self.mat - &self.mat).norm();
        if !(idem <= idem_tol) {
            return Err(SparlowError::Validation(format!(
                "projector not idempotent ({idem:e})"
            )));
        }
        let tr_err = (self.mat.trace() - self.rank as f64).abs();
        if !(tr_err <= idem_tol) {
            return Err(SparlowError::Validation(format!(
                "projector trace off by {tr_err:e}"
            )));
        }
        Ok(())
    }

    /// Rebuilds the projector from its dominant `l` eigenvectors.
    pub fn reprojected(&self) -> Result<Self> {
        let basis = top_eigenvectors(&self.mat, self.rank)?;
        Ok(Projector {
            mat: symmetrize(&(&basis * basis.transpose())),
            rank: self.rank,
        })
    }

    /// Orthonormal basis `U` of the range, `P = UUᵀ`.
    ///
    /// Columns follow descending eigenvalue order and each column's entry of
    /// largest magnitude is positive.
    pub fn basis(&self) -> Result<DMatrix<f64>> {
        let (values, _) = crate::linalg::sorted_eigen(&self.mat)?;
        for k in 0..self.rank {
            if (values[k] - 1.0).abs() > 1e-6 {
                return Err(SparlowError::Eigen(format!(
                    "projector eigenvalue {} outside [1 − 1e-6, 1 + 1e-6]",
                    values[k]
                )));
            }
        }
        top_eigenvectors(&self.mat, self.rank)
    }
}

/// A point `(D, P)` on the product manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub dict: Dictionary,
    pub proj: Projector,
}

impl ProductPoint {
    pub fn new(dict: Dictionary, proj: Projector) -> Result<Self> {
        if dict.atoms() != proj.size() {
            return Err(SparlowError::Dimension(format!(
                "dictionary has {} atoms but projector acts on ℝ^{}",
                dict.atoms(),
                proj.size()
            )));
        }
        Ok(ProductPoint { dict, proj })
    }

    /// `√(‖D₁ − D₂‖²_F + ‖P₁ − P₂‖²_F)`.
    pub fn distance(&self, other: &ProductPoint) -> f64 {
        let dd = (self.dict.matrix() - other.dict.matrix()).norm_squared();
        let dp = (self.proj.matrix() - other.proj.matrix()).norm_squared();
        (dd + dp).sqrt()
    }
}

/// A tangent vector `(Ξ, Ψ)` at some point of the product manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentPair {
    pub dict_dir: DMatrix<f64>,
    pub proj_dir: DMatrix<f64>,
}

impl TangentPair {
    pub fn zeros(m: usize, r: usize) -> Self {
        TangentPair {
            dict_dir: DMatrix::zeros(m, r),
            proj_dir: DMatrix::zeros(r, r),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TangentPair {
            dict_dir: &self.dict_dir * s,
            proj_dir: &self.proj_dir * s,
        }
    }

    /// `self + s · other`.
    pub fn add_scaled(&self, s: f64, other: &TangentPair) -> Self {
        TangentPair {
            dict_dir: &self.dict_dir + &other.dict_dir * s,
            proj_dir: &self.proj_dir + &other.proj_dir * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.dict_dir.norm_squared() + self.proj_dir.norm_squared()).sqrt()
    }
}

/// `(d + tξ) / ‖d + tξ‖`.
pub fn sphere_retract(d: &DVector<f64>, xi: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if d.len() != xi.len() {
        return Err(SparlowError::Dimension("sphere retraction shapes differ".into()));
    }
    let v = d + xi * t;
    let norm = v.norm();
    if !(norm >= SINGULAR_STEP_NORM) {
        return Err(SparlowError::SingularStep { norm });
    }
    Ok(v / norm)
}

/// QR factorization `M = QR` with strictly positive `diag(R)`.
pub fn unique_qr(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() || n == 0 {
        return Err(SparlowError::Dimension(format!(
            "unique QR needs a non-empty square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SparlowError::Factorization("non-finite entries".into()));
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let max_diag = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let min_diag = (0..n).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(max_diag > 0.0) || min_diag <= QR_RANK_TOL * max_diag {
        return Err(SparlowError::Factorization(format!(
            "matrix is numerically rank deficient (|r_ii| range {min_diag:e}..{max_diag:e})"
        )));
    }
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}

/// `ζ(t) = qf(I + t(ΨP − PΨ))`, the rotation driving the Grassmann retraction.
pub fn grassmann_rotation(p: &Projector, psi: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let r = p.size();
    if psi.shape() != (r, r) {
        return Err(SparlowError::Dimension(format!(
            "Grassmann direction is {}×{}, expected {r}×{r}",
            psi.nrows(),
            psi.ncols()
        )));
    }
    let pm = p.matrix();
    let skew = psi * pm - pm * psi;
    let (q, _) = unique_qr(&(DMatrix::identity(r, r) + skew * t))?;
    Ok(q)
}

/// `ζ(t) P ζ(t)ᵀ`.
pub fn grassmann_retract(p: &Projector, psi: &DMatrix<f64>, t: f64) -> Result<Projector> {
    let zeta = grassmann_rotation(p, psi, t)?;
    let mat = symmetrize(&(&zeta * p.matrix() * zeta.transpose()));
    Ok(Projector::from_parts_unchecked(mat, p.rank()))
}

/// `⟨(D₁,P₁), (D₂,P₂)⟩ = tr(D₁D₂ᵀ) + tr(P₁P₂ᵀ)`.
pub fn product_metric(a: &TangentPair, b: &TangentPair) -> Result<f64> {
    if a.dict_dir.shape() != b.dict_dir.shape() || a.proj_dir.shape() != b.proj_dir.shape() {
        return Err(SparlowError::Dimension(
            "tangent pairs have different shapes".into(),
        ));
    }
    Ok(frob_dot(&a.dict_dir, &b.dict_dir) + frob_dot(&a.proj_dir, &b.proj_dir))
}

/// `G − D ddiag(DᵀG)`: removes from each column its component along the atom.
pub fn project_tangent_sphere(d: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = g.clone();
    for (i, mut col) in out.column_iter_mut().enumerate() {
        let atom = d.column(i);
        let c = atom.dot(&col);
        col.axpy(-c, &atom, 1.0);
    }
    out
}

/// `PG + GP − 2PGP` applied to the symmetric part of `G`.
pub fn project_tangent_grassmann(p: &Projector, g: &DMatrix<f64>) -> DMatrix<f64> {
    let g = symmetrize(g);
    let pm = p.matrix();
    let pg = pm * &g;
    let gp = &g * pm;
    let pgp = &pg * pm;
    symmetrize(&(pg + gp - pgp * 2.0))
}

/// Vector transport on the sphere along `γ_{d,ξ}`:
/// `(1/‖v‖)(I + vvᵀ/‖v‖²) ξ̃` with `v = d + tξ`.
pub fn sphere_transport(
    d: &DVector<f64>,
    xi: &DVector<f64>,
    t: f64,
    moved: &DVector<f64>,
) -> Result<DVector<f64>> {
    if d.len() != xi.len() || d.len() != moved.len() {
        return Err(SparlowError::Dimension("sphere transport shapes differ".into()));
    }
    let v = d + xi * t;
    let norm_sq = v.norm_squared();
    let norm = norm_sq.sqrt();
    if !(norm >= SINGULAR_STEP_NORM) {
        return Err(SparlowError::SingularStep { norm });
    }
    let along = v.dot(moved) / norm_sq;
    Ok((moved + v * along) / norm)
}

/// Vector transport on the Grassmannian: `ζ(t) Ψ̃ ζ(t)ᵀ`.
pub fn grassmann_transport(
    p: &Projector,
    psi: &DMatrix<f64>,
    t: f64,
    moved: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let zeta = grassmann_rotation(p, psi, t)?;
    transport_with_rotation(&zeta, moved)
}

fn transport_with_rotation(zeta: &DMatrix<f64>, moved: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if moved.shape() != zeta.shape() {
        return Err(SparlowError::Dimension(
            "Grassmann transport shapes differ".into(),
        ));
    }
    Ok(symmetrize(&(zeta * moved * zeta.transpose())))
}

/// Riemannian gradient of a function with Euclidean gradients `(G_D, G_P)`.
pub fn project_tangent(point: &ProductPoint, euclid: &TangentPair) -> TangentPair {
    TangentPair {
        dict_dir: project_tangent_sphere(point.dict.matrix(), &euclid.dict_dir),
        proj_dir: project_tangent_grassmann(&point.proj, &euclid.proj_dir),
    }
}

/// Retracts every atom along its column of `Ξ`.
pub fn retract_dictionary(d: &Dictionary, xi: &DMatrix<f64>, t: f64) -> Result<Dictionary> {
    if d.matrix().shape() != xi.shape() {
        return Err(SparlowError::Dimension(
            "dictionary direction shape differs".into(),
        ));
    }
    let mut out = d.matrix().clone();
    for i in 0..d.atoms() {
        let col = sphere_retract(&d.matrix().column(i).into_owned(), &xi.column(i).into_owned(), t)?;
        out.set_column(i, &col);
    }
    Ok(Dictionary { atoms: out })
}

/// `Γ_{M,H}(t)` on the product manifold.
pub fn retract(point: &ProductPoint, dir: &TangentPair, t: f64) -> Result<ProductPoint> {
    Ok(ProductPoint {
        dict: retract_dictionary(&point.dict, &dir.dict_dir, t)?,
        proj: grassmann_retract(&point.proj, &dir.proj_dir, t)?,
    })
}

/// `𝒯_{M,tH}(H̃)`: moves `moved` along the retraction curve of `dir`.
pub fn transport(
    point: &ProductPoint,
    dir: &TangentPair,
    t: f64,
    moved: &TangentPair,
) -> Result<TangentPair> {
    let d = point.dict.matrix();
    let mut dict_dir = moved.dict_dir.clone();
    for i in 0..d.ncols() {
        let col = sphere_transport(
            &d.column(i).into_owned(),
            &dir.dict_dir.column(i).into_owned(),
            t,
            &moved.dict_dir.column(i).into_owned(),
        )?;
        dict_dir.set_column(i, &col);
    }
    let zeta = grassmann_rotation(&point.proj, &dir.proj_dir, t)?;
    Ok(TangentPair {
        dict_dir,
        proj_dir: transport_with_rotation(&zeta, &moved.proj_dir)?,
    })
}
