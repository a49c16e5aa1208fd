//! Structure matrices for the nine trace-quotient variants.
//!
//! Every variant is expressed as a pair of generators `(𝒜, ℬ)` mapping a code
//! batch `Φ ∈ ℝ^{r×n}` to symmetric `r×r` matrices. A generator is a sum of
//! terms of three kinds:
//!
//! * `ΦZΦᵀ` (quadratic),
//! * `trace(ΦZΦᵀ)·I` (scaled identity),
//! * `c·I` (constant, the ridge part of the regression variants),
//!
//! where `Z ∈ ℝ^{n×n}` is symmetric and frozen once the pair is built.
//!
//! Label-dependent matrices are built directly in sample order: entry
//! `(i, j)` of a class-block matrix depends only on the classes of `i` and
//! `j`, so no explicit class-sorting permutation is materialized. Unlabeled
//! samples get zero rows and columns, which is the augmented (zero-padded)
//! form used by the semi-supervised variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SparlowError};
use crate::linalg::{min_eigenvalue, nearest_among, pairwise_sq_dists, symmetrize};
use crate::sparse::CodeBatch;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Pca,
    Lle,
    Laplacian,
    Lda,
    Mfa,
    Mvr,
    Sda,
    Slap,
    Smvr,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Pca,
        Variant::Lle,
        Variant::Laplacian,
        Variant::Lda,
        Variant::Mfa,
        Variant::Mvr,
        Variant::Sda,
        Variant::Slap,
        Variant::Smvr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pca => "pca",
            Variant::Lle => "lle",
            Variant::Laplacian => "lap",
            Variant::Lda => "lda",
            Variant::Mfa => "mfa",
            Variant::Mvr => "mvr",
            Variant::Sda => "sda",
            Variant::Slap => "slap",
            Variant::Smvr => "smvr",
        }
    }

    /// Fully supervised variants need every sample labeled.
    pub fn is_supervised(self) -> bool {
        matches!(self, Variant::Lda | Variant::Mfa | Variant::Mvr)
    }

    pub fn is_semi_supervised(self) -> bool {
        matches!(self, Variant::Sda | Variant::Slap | Variant::Smvr)
    }

    pub fn uses_labels(self) -> bool {
        self.is_supervised() || self.is_semi_supervised()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = SparlowError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "pca" => Variant::Pca,
            "lle" => Variant::Lle,
            "lap" | "laplacian" => Variant::Laplacian,
            "lda" => Variant::Lda,
            "mfa" => Variant::Mfa,
            "mvr" => Variant::Mvr,
            "sda" => Variant::Sda,
            "slap" => Variant::Slap,
            "smvr" => Variant::Smvr,
            other => return Err(SparlowError::Validation(format!("unknown variant '{other}'"))),
        })
    }
}

/// Per-sample labels; `-1` marks an unlabeled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<i64>,
    classes: Vec<i64>,
}

impl LabelSet {
    pub const UNLABELED: i64 = -1;

    pub fn new(labels: Vec<i64>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l < Self::UNLABELED) {
            return Err(SparlowError::Validation(format!(
                "label {bad} is invalid (class ids are ≥ 0, -1 marks unlabeled)"
            )));
        }
        let mut classes: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
        classes.sort_unstable();
        classes.dedup();
        Ok(LabelSet { labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw(&self) -> &[i64] {
        &self.labels
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels[i] >= 0
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.is_labeled(i)).collect()
    }

    pub fn all_labeled(&self) -> bool {
        self.labels.iter().all(|&l| l >= 0)
    }

    /// Position of the sample's class in [`LabelSet::classes`].
    pub fn class_index(&self, i: usize) -> Option<usize> {
        let l = self.labels[i];
        if l < 0 {
            None
        } else {
            self.classes.binary_search(&l).ok()
        }
    }

    /// Number of labeled samples per class, in class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for i in 0..self.labels.len() {
            if let Some(c) = self.class_index(i) {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Labels restricted to the given sample indices.
    pub fn subset(&self, indices: &[usize]) -> LabelSet {
        LabelSet::new(indices.iter().map(|&i| self.labels[i]).collect()).expect("subset of valid labels")
    }
}

/// Graph and regularization parameters for building a structure pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub variant: Variant,
    pub knn: usize,
    /// Heat-kernel width; `None` selects the mean squared kNN distance.
    pub heat_t: Option<f64>,
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu_mvr: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Regression targets, `d×n` for MVR or `d×n_l` for SMVR.
    pub targets: Option<DMatrix<f64>>,
}

impl GraphSpec {
    pub fn new(variant: Variant) -> Self {
        GraphSpec {
            variant,
            knn: 5,
            heat_t: None,
            k1: 5,
            k2: 10,
            alpha: 0.1,
            alpha1: 0.1,
            alpha2: 0.1,
            mu_mvr: 0.1,
            rho1: 0.1,
            rho2: 0.1,
            targets: None,
        }
    }
}

/// One summand of a structure generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `ΦZΦᵀ`
    Quadratic(DMatrix<f64>),
    /// `trace(ΦZΦᵀ)·I_r`
    ScaledIdentity(DMatrix<f64>),
    /// `c·I_r`
    Constant(f64),
}

/// A matrix-valued function `Φ ↦ Σ terms`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generator {
    pub terms: Vec<Term>,
}

impl Generator {
    pub fn quadratic(z: DMatrix<f64>) -> Self {
        Generator {
            terms: vec![Term::Quadratic(z)],
        }
    }

    pub fn scaled_identity(z: DMatrix<f64>) -> Self {
        Generator {
            terms: vec![Term::ScaledIdentity(z)],
        }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.terms.push(Term::Constant(c));
        self
    }

    fn check_dims(&self, n: usize) -> Result<()> {
        for t in &self.terms {
            if let Term::Quadratic(z) | Term::ScaledIdentity(z) = t {
                if z.shape() != (n, n) {
                    return Err(SparlowError::Dimension(format!(
                        "structure matrix is {}×{}, code batch has {n} samples",
                        z.nrows(),
                        z.ncols()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Materializes the generator at `Φ` (symmetrized).
    pub fn evaluate(&self, phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (r, n) = phi.shape();
        self.check_dims(n)?;
        let mut out = DMatrix::zeros(r, r);
        for t in &self.terms {
            match t {
                Term::Quadratic(z) => out += phi * z * phi.transpose(),
                Term::ScaledIdentity(z) => {
                    let tr = quad_trace(phi, z);
                    for i in 0..r {
                        out[(i, i)] += tr;
                    }
                }
                Term::Constant(c) => {
                    for i in 0..r {
                        out[(i, i)] += c;
                    }
                }
            }
        }
        Ok(symmetrize(&out))
    }

    /// Gradient of `Φ ↦ trace(P·G(Φ))` with respect to `Φ` (an `r×n` matrix).
    ///
    /// For symmetric `Z`: `2PΦZ` for a quadratic term, `2·trace(P)·ΦZ` for a
    /// scaled identity, and zero for a constant.
    pub fn trace_gradient(&self, phi: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (r, n) = phi.shape();
        self.check_dims(n)?;
        let mut out = DMatrix::zeros(r, n);
        let p_phi = p * phi;
        let tr_p = p.trace();
        for t in &self.terms {
            match t {
                Term::Quadratic(z) => out += &p_phi * z * 2.0,
                Term::ScaledIdentity(z) => out += phi * z * (2.0 * tr_p),
                Term::Constant(_) => {}
            }
        }
        Ok(out)
    }

    /// Sum of all quadratic-term matrices (zero if none).
    pub fn quadratic_part(&self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        for t in &self.terms {
            if let Term::Quadratic(z) = t {
                out += z;
            }
        }
        out
    }

    fn check_psd(&self, what: &str) -> Result<()> {
        for t in &self.terms {
            match t {
                Term::Quadratic(z) | Term::ScaledIdentity(z) => {
                    if z.iter().any(|v| !v.is_finite()) {
                        return Err(SparlowError::Validation(format!("{what}: non-finite entries")));
                    }
                    let low = min_eigenvalue(z);
                    if low < -PSD_TOL {
                        return Err(SparlowError::Validation(format!(
                            "{what}: structure matrix is not positive semidefinite (λ_min = {low:e})"
                        )));
                    }
                }
                Term::Constant(c) => {
                    if !(*c >= 0.0) {
                        return Err(SparlowError::Validation(format!(
                            "{what}: negative ridge constant {c}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn quad_trace(phi: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    // trace(ΦZΦᵀ) = ⟨Φ, ΦZ⟩_F
    crate::linalg::frob_dot(phi, &(phi * z))
}

/// Numerator and denominator generators of a trace quotient.
#[derive(Debug, Clone, PartialEq)]
pub struct StructurePair {
    pub numerator: Generator,
    pub denominator: Generator,
    n: usize,
}

impl StructurePair {
    /// Builds a pair, checking that the denominator is positive semidefinite.
    pub fn new(numerator: Generator, denominator: Generator, n: usize) -> Result<Self> {
        numerator.check_dims(n)?;
        denominator.check_dims(n)?;
        for t in numerator.terms.iter() {
            if let Term::Quadratic(z) | Term::ScaledIdentity(z) = t {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(SparlowError::Validation("numerator: non-finite entries".into()));
                }
            }
        }
        denominator.check_psd("denominator")?;
        Ok(StructurePair {
            numerator,
            denominator,
            n,
        })
    }

    pub fn samples(&self) -> usize {
        self.n
    }
}

/// Materializes `(𝒜(Φ), ℬ(Φ))`.
pub fn evaluate_pair(pair: &StructurePair, phi: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if phi.ncols() != pair.n {
        return Err(SparlowError::Dimension(format!(
            "pair built for {} samples, code batch has {}",
            pair.n,
            phi.ncols()
        )));
    }
    Ok((pair.numerator.evaluate(phi)?, pair.denominator.evaluate(phi)?))
}

/// `I − (1/k)11ᵀ`.
pub fn centering_matrix(k: usize) -> DMatrix<f64> {
    DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64)
}

/// `Y − Z` with `Y = diag(row sums of Z)` (diagonal of `Z` ignored).
pub fn graph_laplacian(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut l = -z.clone();
    for i in 0..n {
        l[(i, i)] = 0.0;
        let deg: f64 = (0..n).filter(|&j| j != i).map(|j| z[(i, j)]).sum();
        l[(i, i)] = deg;
    }
    l
}

pub fn build_pca(n: usize) -> Result<StructurePair> {
    if n < 2 {
        return Err(SparlowError::Validation("PCA needs at least 2 samples".into()));
    }
    let pi = centering_matrix(n);
    StructurePair::new(
        Generator::quadratic(pi.clone()),
        Generator::scaled_identity(pi),
        n,
    )
}

fn check_knn(knn: usize, n: usize) -> Result<()> {
    if knn == 0 || knn >= n {
        return Err(SparlowError::Validation(format!(
            "knn must satisfy 1 ≤ knn < n = {n}, got {knn}"
        )));
    }
    Ok(())
}

/// Barycentric reconstruction weights of each sample from its `knn` nearest
/// neighbors (row `i` holds the weights of sample `i`, rows sum to one).
pub fn lle_weights(x: &DMatrix<f64>, knn: usize) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    check_knn(knn, n)?;
    let dists = pairwise_sq_dists(x);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs = nearest_among(&dists, i, 0..n, knn);
        let xi = x.column(i);
        let diffs = DMatrix::from_fn(x.nrows(), knn, |a, b| xi[a] - x[(a, nbrs[b])]);
        let mut gram = diffs.tr_mul(&diffs);
        let tr = gram.trace();
        let reg = if tr > 0.0 { 1e-6 * tr } else { 1.0 };
        for k in 0..knn {
            gram[(k, k)] += reg;
        }
        let ones = DVector::from_element(knn, 1.0);
        let sol = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&ones))
            .or_else(|| gram.lu().solve(&ones))
            .ok_or_else(|| SparlowError::Factorization("singular LLE Gram matrix".into()))?;
        let total = sol.sum();
        for (k, &j) in nbrs.iter().enumerate() {
            w[(i, j)] = sol[k] / total;
        }
    }
    Ok(w)
}

/// `(I − W)ᵀ(I − W)`.
pub fn lle_matrix(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let m = DMatrix::identity(n, n) - w;
    symmetrize(&m.tr_mul(&m))
}

pub fn build_lle(x: &DMatrix<f64>, knn: usize) -> Result<StructurePair> {
    let z = lle_matrix(&lle_weights(x, knn)?);
    StructurePair::new(
        Generator::quadratic(z.clone()),
        Generator::scaled_identity(z),
        x.ncols(),
    )
}

/// Symmetric kNN adjacency ("either" rule) on the columns of `x`.
pub fn knn_adjacency(x: &DMatrix<f64>, knn: usize) -> Result<(DMatrix<bool>, DMatrix<f64>)> {
    let n = x.ncols();
    check_knn(knn, n)?;
    let dists = pairwise_sq_dists(x);
    let mut adj = DMatrix::from_element(n, n, false);
    for i in 0..n {
        for j in nearest_among(&dists, i, 0..n, knn) {
            adj[(i, j)] = true;
            adj[(j, i)] = true;
        }
    }
    Ok((adj, dists))
}

/// Mean squared distance over adjacent pairs, used when no heat width is given.
pub fn default_heat_t(adj: &DMatrix<bool>, dists: &DMatrix<f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for j in 0..adj.ncols() {
        for i in (j + 1)..adj.nrows() {
            if adj[(i, j)] {
                sum += dists[(i, j)];
                count += 1;
            }
        }
    }
    if count == 0 || !(sum > 0.0) {
        1.0
    } else {
        sum / count as f64
    }
}

fn heat_weights(adj: &DMatrix<bool>, dists: &DMatrix<f64>, t: f64, connected: bool) -> DMatrix<f64> {
    let n = adj.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i != j && adj[(i, j)] == connected {
            (-dists[(i, j)] / t).exp()
        } else {
            0.0
        }
    })
}

/// Heat-kernel similarity graph on the raw data.
#[derive(Debug, Clone)]
pub struct HeatGraph {
    /// Edge weights `z_ij = exp(−‖x_i − x_j‖²/t)` on kNN pairs.
    pub weights: DMatrix<f64>,
    /// Diagonal degree matrix.
    pub degree: DMatrix<f64>,
    /// Heat weights on the non-adjacent pairs.
    pub nonlocal: DMatrix<f64>,
    pub heat_t: f64,
}

impl HeatGraph {
    pub fn build(x: &DMatrix<f64>, knn: usize, heat_t: Option<f64>) -> Result<Self> {
        let (adj, dists) = knn_adjacency(x, knn)?;
        let t = match heat_t {
            Some(t) if t > 0.0 && t.is_finite() => t,
            Some(t) => return Err(SparlowError::Validation(format!("heat_t must be > 0, got {t}"))),
            None => default_heat_t(&adj, &dists),
        };
        let weights = heat_weights(&adj, &dists, t, true);
        let n = x.ncols();
        let degree = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| weights.row(i).sum()));
        let nonlocal = heat_weights(&adj, &dists, t, false);
        Ok(HeatGraph {
            weights,
            degree,
            nonlocal,
            heat_t: t,
        })
    }

    /// `L = Y − Z`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        &self.degree - &self.weights
    }

    /// `Lᴺ = Yᴺ − Zᴺ` on the complement of the kNN graph.
    pub fn nonlocal_laplacian(&self) -> DMatrix<f64> {
        graph_laplacian(&self.nonlocal)
    }
}

pub fn build_laplacian(x: &DMatrix<f64>, knn: usize, heat_t: Option<f64>) -> Result<StructurePair> {
    let g = HeatGraph::build(x, knn, heat_t)?;
    StructurePair::new(
        Generator::quadratic(g.weights),
        Generator::quadratic(g.degree),
        x.ncols(),
    )
}

/// Within-class (`Lʷ`) and between-class (`Lᵇ`) scatter generators over the
/// labeled samples; unlabeled rows and columns are zero.
pub fn scatter_matrices(labels: &LabelSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = labels.n_classes();
    if c < 2 {
        return Err(SparlowError::DegenerateLabels(format!(
            "need at least 2 classes among labeled samples, found {c}"
        )));
    }
    let counts = labels.class_counts();
    let n = labels.len();
    let idx: Vec<Option<usize>> = (0..n).map(|i| labels.class_index(i)).collect();
    let mut lw = DMatrix::zeros(n, n);
    let mut lb = DMatrix::zeros(n, n);
    let inv_c = 1.0 / c as f64;
    for j in 0..n {
        let Some(b) = idx[j] else { continue };
        for i in 0..n {
            let Some(a) = idx[i] else { continue };
            if a == b {
                lw[(i, j)] = if i == j { 1.0 } else { 0.0 } - 1.0 / counts[a] as f64;
            }
            let pi_ab = if a == b { 1.0 } else { 0.0 } - inv_c;
            lb[(i, j)] = pi_ab / ((counts[a] * counts[b]) as f64).sqrt();
        }
    }
    Ok((lw, lb))
}

pub fn build_lda(labels: &LabelSet) -> Result<StructurePair> {
    if !labels.all_labeled() {
        return Err(SparlowError::DegenerateLabels(
            "LDA requires every sample to be labeled".into(),
        ));
    }
    let (lw, lb) = scatter_matrices(labels)?;
    let n = labels.len();
    StructurePair::new(Generator::quadratic(lb), Generator::quadratic(lw), n)
}

/// MFA Laplacians `(L⁻, L⁺)` from neighborhoods of the code columns; samples
/// without a label do not take part (zero rows and columns).
pub fn mfa_laplacians(
    codes: &DMatrix<f64>,
    labels: &LabelSet,
    k1: usize,
    k2: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = codes.ncols();
    if labels.len() != n {
        return Err(SparlowError::Dimension(format!(
            "{} labels for {n} code columns",
            labels.len()
        )));
    }
    if labels.n_classes() < 2 {
        return Err(SparlowError::DegenerateLabels(
            "MFA needs at least 2 labeled classes".into(),
        ));
    }
    let labeled = labels.labeled_indices();
    if k1 == 0 || k2 == 0 || k2 >= labeled.len() {
        return Err(SparlowError::Validation(format!(
            "MFA neighborhood sizes must satisfy k1 ≥ 1 and 1 ≤ k2 < n = {}",
            labeled.len()
        )));
    }
    let counts = labels.class_counts();
    let dists = pairwise_sq_dists(codes);
    let mut zp = DMatrix::zeros(n, n);
    let mut zm = DMatrix::zeros(n, n);
    let mut clamped = BTreeMap::new();
    for &i in &labeled {
        let ci = labels.class_index(i);
        let class_size = counts[ci.unwrap()];
        let k_same = k1.min(class_size - 1);
        if k_same < k1 {
            clamped.insert(labels.raw()[i], k_same);
        }
        let same = labeled.iter().copied().filter(|&j| labels.class_index(j) == ci);
        for j in nearest_among(&dists, i, same, k_same) {
            zp[(i, j)] = 1.0;
            zp[(j, i)] = 1.0;
        }
        let other = labeled.iter().copied().filter(|&j| labels.class_index(j) != ci);
        for j in nearest_among(&dists, i, other, k2) {
            zm[(i, j)] = 1.0;
            zm[(j, i)] = 1.0;
        }
    }
    for (class, k) in clamped {
        warn!("MFA: class {class} is too small for k1 = {k1}; using k1 = {k}");
    }
    Ok((graph_laplacian(&zm), graph_laplacian(&zp)))
}

pub fn build_mfa(codes0: &CodeBatch, labels: &LabelSet, k1: usize, k2: usize) -> Result<StructurePair> {
    if !labels.all_labeled() {
        return Err(SparlowError::DegenerateLabels(
            "MFA requires every sample to be labeled".into(),
        ));
    }
    let (lm, lp) = mfa_laplacians(&codes0.codes, labels, k1, k2)?;
    StructurePair::new(Generator::quadratic(lm), Generator::quadratic(lp), codes0.len())
}

/// One-hot targets (`c×k`) for the given samples.
pub fn one_hot_targets(labels: &LabelSet, samples: &[usize]) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(labels.n_classes(), samples.len());
    for (col, &i) in samples.iter().enumerate() {
        if let Some(c) = labels.class_index(i) {
            z[(c, col)] = 1.0;
        }
    }
    z
}

/// `𝒜 = −ΦZᵀZΦᵀ`, `ℬ = ΦΦᵀ + μI`. Targets default to the one-hot label coding.
pub fn build_mvr(
    labels: Option<&LabelSet>,
    targets: Option<&DMatrix<f64>>,
    mu: f64,
    n: usize,
) -> Result<StructurePair> {
    let z = match (targets, labels) {
        (Some(t), _) => t.clone(),
        (None, Some(l)) => {
            if !l.all_labeled() {
                return Err(SparlowError::DegenerateLabels(
                    "MVR requires every sample to be labeled".into(),
                ));
            }
            one_hot_targets(l, &(0..l.len()).collect::<Vec<_>>())
        }
        (None, None) => return Err(SparlowError::Validation("MVR needs labels or targets".into())),
    };
    if z.ncols() != n {
        return Err(SparlowError::Dimension(format!(
            "targets have {} columns for {n} samples",
            z.ncols()
        )));
    }
    if !(mu >= 0.0) {
        return Err(SparlowError::Validation(format!("mu_mvr must be ≥ 0, got {mu}")));
    }
    StructurePair::new(
        Generator::quadratic(-symmetrize(&z.tr_mul(&z))),
        Generator::quadratic(DMatrix::identity(n, n)).with_constant(mu),
        n,
    )
}

fn require_some_labels(labels: &LabelSet) -> Result<()> {
    if labels.labeled_indices().is_empty() {
        return Err(SparlowError::DegenerateLabels("no labeled samples".into()));
    }
    Ok(())
}

/// `𝒜 = ΦL̃ᵇΦᵀ`, `ℬ = Φ(L̃ᵗ + αL)Φᵀ` with `Lᵗ = Lʷ + Lᵇ`.
pub fn build_sda(labels: &LabelSet, global_laplacian: &DMatrix<f64>, alpha: f64) -> Result<StructurePair> {
    require_some_labels(labels)?;
    let n = labels.len();
    if global_laplacian.shape() != (n, n) {
        return Err(SparlowError::Dimension(
            "global Laplacian size differs from labels".into(),
        ));
    }
    let (lw, lb) = scatter_matrices(labels)?;
    let lt = &lw + &lb;
    StructurePair::new(
        Generator::quadratic(lb),
        Generator::quadratic(lt + global_laplacian * alpha),
        n,
    )
}

/// `𝒜 = Φ(L̃⁻ + α₁Lᴺ)Φᵀ`, `ℬ = Φ(L̃⁺ + α₂Lᴺ)Φᵀ`.
pub fn build_slap(
    codes0: &CodeBatch,
    labels: &LabelSet,
    graph: &HeatGraph,
    k1: usize,
    k2: usize,
    alpha1: f64,
    alpha2: f64,
) -> Result<StructurePair> {
    require_some_labels(labels)?;
    let (lm, lp) = mfa_laplacians(&codes0.codes, labels, k1, k2)?;
    let ln = graph.nonlocal_laplacian();
    if ln.shape() != lm.shape() {
        return Err(SparlowError::Dimension(
            "global graph size differs from codes".into(),
        ));
    }
    StructurePair::new(
        Generator::quadratic(lm + &ln * alpha1),
        Generator::quadratic(lp + &ln * alpha2),
        codes0.len(),
    )
}

/// `𝒜 = −Φ_lZ_lᵀZ_lΦ_lᵀ`, `ℬ = Φ_lΦ_lᵀ + ρ₁I + ρ₂ΦLΦᵀ`, with the labeled
/// columns selected by zero-padding. `targets` are `d×n_l` in labeled order.
pub fn build_smvr(
    labels: &LabelSet,
    targets: Option<&DMatrix<f64>>,
    global_laplacian: &DMatrix<f64>,
    rho1: f64,
    rho2: f64,
) -> Result<StructurePair> {
    require_some_labels(labels)?;
    let n = labels.len();
    if global_laplacian.shape() != (n, n) {
        return Err(SparlowError::Dimension(
            "global Laplacian size differs from labels".into(),
        ));
    }
    if !(rho1 >= 0.0) || !(rho2 >= 0.0) {
        return Err(SparlowError::Validation("rho1 and rho2 must be ≥ 0".into()));
    }
    let labeled = labels.labeled_indices();
    let z = match targets {
        Some(t) => t.clone(),
        None => one_hot_targets(labels, &labeled),
    };
    if z.ncols() != labeled.len() {
        return Err(SparlowError::Dimension(format!(
            "targets have {} columns for {} labeled samples",
            z.ncols(),
            labeled.len()
        )));
    }
    let ztz = z.tr_mul(&z);
    let mut numer = DMatrix::zeros(n, n);
    let mut select = DMatrix::zeros(n, n);
    for (a, &i) in labeled.iter().enumerate() {
        select[(i, i)] = 1.0;
        for (b, &j) in labeled.iter().enumerate() {
            numer[(i, j)] = -ztz[(a, b)];
        }
    }
    StructurePair::new(
        Generator::quadratic(symmetrize(&numer)),
        Generator::quadratic(select + global_laplacian * rho2).with_constant(rho1),
        n,
    )
}

/// Builds the pair for `spec.variant`. Neighborhood graphs for LLE and the
/// heat-kernel variants use the raw data; MFA-type graphs use the initial codes.
pub fn build_pair(
    spec: &GraphSpec,
    x: &DMatrix<f64>,
    codes0: &CodeBatch,
    labels: Option<&LabelSet>,
) -> Result<StructurePair> {
    let n = x.ncols();
    if codes0.len() != n {
        return Err(SparlowError::Dimension("initial codes do not match data".into()));
    }
    let need_labels = || -> Result<&LabelSet> {
        let l = labels
            .ok_or_else(|| SparlowError::Validation(format!("variant {} requires labels", spec.variant)))?;
        if l.len() != n {
            return Err(SparlowError::Validation(format!(
                "{} labels for {n} samples",
                l.len()
            )));
        }
        Ok(l)
    };
    match spec.variant {
        Variant::Pca => build_pca(n),
        Variant::Lle => build_lle(x, spec.knn),
        Variant::Laplacian => build_laplacian(x, spec.knn, spec.heat_t),
        Variant::Lda => build_lda(need_labels()?),
        Variant::Mfa => build_mfa(codes0, need_labels()?, spec.k1, spec.k2),
        Variant::Mvr => {
            let l = if spec.targets.is_some() {
                labels
            } else {
                Some(need_labels()?)
            };
            build_mvr(l, spec.targets.as_ref(), spec.mu_mvr, n)
        }
        Variant::Sda => {
            let l = need_labels()?;
            let g = HeatGraph::build(x, spec.knn, spec.heat_t)?;
            build_sda(l, &g.laplacian(), spec.alpha)
        }
        Variant::Slap => {
            let l = need_labels()?;
            let g = HeatGraph::build(x, spec.knn, spec.heat_t)?;
            build_slap(codes0, l, &g, spec.k1, spec.k2, spec.alpha1, spec.alpha2)
        }
        Variant::Smvr => {
            let l = need_labels()?;
            let g = HeatGraph::build(x, spec.knn, spec.heat_t)?;
            build_smvr(l, spec.targets.as_ref(), &g.laplacian(), spec.rho1, spec.rho2)
        }
    }
}
