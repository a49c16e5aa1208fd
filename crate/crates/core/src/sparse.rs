//! Elastic-net sparse coding and the derivative of the code with respect to
//! the dictionary.
//!
//! For a sample `x` and dictionary `D` the code is the unique minimizer of
//!
//! ```text
//! ½‖x − Dφ‖² + λ₁‖φ‖₁ + λ₂‖φ‖²
//! ```
//!
//! computed by cyclic coordinate descent on the Gram matrix `DᵀD`, followed
//! by an exact solve of the stationarity equations restricted to the support.
//! On a fixed support `𝔏` the code satisfies
//! `(D_𝔏ᵀD_𝔏 + 2λ₂I) φ_𝔏 = D_𝔏ᵀx − λ₁ sign(φ_𝔏)`, which is what makes it
//! differentiable in `D`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SparlowError};
use crate::linalg::solve_spd;

/// Coefficients with `|φ_i|` below this are set to exactly zero.
pub const ZERO_SNAP: f64 = 1e-12;

/// Elastic-net penalty `λ₁‖φ‖₁ + λ₂‖φ‖²₂` with `λ₂ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticNetPrior {
    lambda1: f64,
    lambda2: f64,
}

impl ElasticNetPrior {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0) || !lambda1.is_finite() {
            return Err(SparlowError::Validation(format!(
                "lambda1 must be finite and ≥ 0, got {lambda1}"
            )));
        }
        if !(lambda2 > 0.0) || !lambda2.is_finite() {
            return Err(SparlowError::Validation(format!(
                "lambda2 must be finite and > 0, got {lambda2}"
            )));
        }
        Ok(ElasticNetPrior { lambda1, lambda2 })
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn penalty(&self, phi: &DVector<f64>) -> f64 {
        self.lambda1 * phi.lp_norm(1) + self.lambda2 * phi.norm_squared()
    }
}

/// Solver limits for coordinate descent.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_cd_iters: usize,
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_cd_iters: 10_000,
            kkt_tol: 1e-9,
        }
    }
}

/// A code vector together with its support (ascending indices of nonzeros).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub values: DVector<f64>,
    pub support: Vec<usize>,
}

impl SparseCode {
    /// Snaps tiny entries to zero and records the support.
    pub fn from_values(mut values: DVector<f64>) -> Self {
        let mut support = Vec::new();
        for (i, v) in values.iter_mut().enumerate() {
            if v.abs() < ZERO_SNAP {
                *v = 0.0;
            } else {
                support.push(i);
            }
        }
        SparseCode { values, support }
    }

    pub fn zeros(r: usize) -> Self {
        SparseCode {
            values: DVector::zeros(r),
            support: Vec::new(),
        }
    }
}

/// Codes for a batch of samples, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBatch {
    pub codes: DMatrix<f64>,
    pub supports: Vec<Vec<usize>>,
}

impl CodeBatch {
    pub fn len(&self) -> usize {
        self.codes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.ncols() == 0
    }

    pub fn code(&self, j: usize) -> SparseCode {
        SparseCode {
            values: self.codes.column(j).into_owned(),
            support: self.supports[j].clone(),
        }
    }

    /// Atoms that appear in no support.
    pub fn dead_atoms(&self) -> Vec<usize> {
        let mut used = vec![false; self.codes.nrows()];
        for s in &self.supports {
            for &i in s {
                used[i] = true;
            }
        }
        used.iter()
            .enumerate()
            .filter(|(_, u)| !**u)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `½‖x − Dφ‖² + λ₁‖φ‖₁ + λ₂‖φ‖²`.
pub fn elastic_net_objective(
    x: &DVector<f64>,
    d: &DMatrix<f64>,
    phi: &DVector<f64>,
    prior: &ElasticNetPrior,
) -> f64 {
    0.5 * (x - d * phi).norm_squared() + prior.penalty(phi)
}

fn soft_threshold(v: f64, thresh: f64) -> f64 {
    if v > thresh {
        v - thresh
    } else if v < -thresh {
        v + thresh
    } else {
        0.0
    }
}

/// Maximum violation of the subdifferential optimality conditions, given the
/// correlations `c = Dᵀ(x − Dφ)`.
fn kkt_from_correlation(corr: &DVector<f64>, phi: &DVector<f64>, prior: &ElasticNetPrior) -> f64 {
    let (l1, l2) = (prior.lambda1, prior.lambda2);
    corr.iter()
        .zip(phi.iter())
        .map(|(&c, &p)| {
            if p != 0.0 {
                (c - l1 * p.signum() - 2.0 * l2 * p).abs()
            } else {
                (c.abs() - l1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Maximum violation of the optimality conditions of the elastic-net problem:
///
/// * `φ_i ≠ 0`: `|d_iᵀ(x − Dφ) − λ₁ sign(φ_i) − 2λ₂φ_i|`
/// * `φ_i = 0`: `max(0, |d_iᵀ(x − Dφ)| − λ₁)`
pub fn kkt_residual(x: &DVector<f64>, d: &DMatrix<f64>, phi: &DVector<f64>, prior: &ElasticNetPrior) -> f64 {
    let corr = d.tr_mul(&(x - d * phi));
    kkt_from_correlation(&corr, phi, prior)
}

/// Sparse coder with a precomputed Gram matrix, reusable across samples.
#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    dict: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    prior: ElasticNetPrior,
    opts: SolverOptions,
}

impl<'a> Encoder<'a> {
    pub fn new(dict: &'a DMatrix<f64>, prior: ElasticNetPrior) -> Self {
        Encoder::with_options(dict, prior, SolverOptions::default())
    }

    pub fn with_options(dict: &'a DMatrix<f64>, prior: ElasticNetPrior, opts: SolverOptions) -> Self {
        Encoder {
            dict,
            gram: dict.tr_mul(dict),
            prior,
            opts,
        }
    }

    pub fn encode(&self, x: &DVector<f64>) -> Result<SparseCode> {
        if x.len() != self.dict.nrows() {
            return Err(SparlowError::Dimension(format!(
                "sample has length {}, dictionary has {} rows",
                x.len(),
                self.dict.nrows()
            )));
        }
        let corr = self.dict.tr_mul(x);
        self.encode_from_correlation(&corr)
    }

    fn residual_of(&self, corr: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        let c = corr - &self.gram * phi;
        kkt_from_correlation(&c, phi, &self.prior)
    }

    fn encode_from_correlation(&self, corr: &DVector<f64>) -> Result<SparseCode> {
        let r = self.gram.nrows();
        let (l1, l2) = (self.prior.lambda1, self.prior.lambda2);
        let mut phi = DVector::zeros(r);
        // q = Gφ, kept current under coordinate updates
        let mut q = DVector::zeros(r);
        let mut residual = self.residual_of(corr, &phi);
        let mut sweeps = 0;
        let mut pattern = sign_pattern(&phi);
        while residual > self.opts.kkt_tol && sweeps < self.opts.max_cd_iters {
            for i in 0..r {
                let gii = self.gram[(i, i)];
                let old = phi[i];
                let rho = corr[i] - q[i] + gii * old;
                let new = soft_threshold(rho, l1) / (gii + 2.0 * l2);
                if new != old {
                    q.axpy(new - old, &self.gram.column(i), 1.0);
                    phi[i] = new;
                }
            }
            sweeps += 1;
            residual = kkt_from_correlation(&(corr - &q), &phi, &self.prior);
            let next = sign_pattern(&phi);
            if next == pattern && residual > self.opts.kkt_tol {
                // stable active set: try the exact solve on it
                if let Some((p, res)) = self.polish(corr, &phi) {
                    if res <= self.opts.kkt_tol {
                        phi = p;
                        break;
                    }
                }
            }
            pattern = next;
        }
        residual = self.residual_of(corr, &phi);

        if let Some((p, res)) = self.polish(corr, &phi) {
            if res <= residual || res <= self.opts.kkt_tol {
                phi = p;
                residual = res;
            }
        }
        if residual > self.opts.kkt_tol {
            return Err(SparlowError::Convergence {
                iters: sweeps,
                residual,
            });
        }
        Ok(SparseCode::from_values(phi))
    }

    /// Exact solve of the stationarity equations on the current support.
    fn polish(&self, corr: &DVector<f64>, phi: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let support: Vec<usize> = (0..phi.len()).filter(|&i| phi[i].abs() >= ZERO_SNAP).collect();
        let mut out = DVector::zeros(phi.len());
        if !support.is_empty() {
            let k = support_system(&self.gram, &support, self.prior.lambda2);
            let rhs = DVector::from_iterator(
                support.len(),
                support
                    .iter()
                    .map(|&i| corr[i] - self.prior.lambda1 * phi[i].signum()),
            );
            let sol = solve_spd(&k, &rhs).ok()?;
            for (a, &i) in support.iter().enumerate() {
                if sol[a].signum() != phi[i].signum() || sol[a].abs() < ZERO_SNAP {
                    return None;
                }
                out[i] = sol[a];
            }
        }
        let res = self.residual_of(corr, &out);
        Some((out, res))
    }
}

fn sign_pattern(phi: &DVector<f64>) -> Vec<i8> {
    phi.iter()
        .map(|&v| {
            if v.abs() < ZERO_SNAP {
                0
            } else if v > 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// `G_𝔏𝔏 + 2λ₂I` for a Gram matrix `G = DᵀD`.
fn support_system(gram: &DMatrix<f64>, support: &[usize], lambda2: f64) -> DMatrix<f64> {
    let k = support.len();
    DMatrix::from_fn(k, k, |a, b| {
        gram[(support[a], support[b])] + if a == b { 2.0 * lambda2 } else { 0.0 }
    })
}

/// Solves the elastic-net regression for one sample.
pub fn sparse_encode(x: &DVector<f64>, d: &DMatrix<f64>, prior: &ElasticNetPrior) -> Result<SparseCode> {
    Encoder::new(d, *prior).encode(x)
}

/// Encodes every column of `X`. Per-sample work runs in parallel; results are
/// assembled in sample order.
pub fn batch_encode(x: &DMatrix<f64>, d: &DMatrix<f64>, prior: &ElasticNetPrior) -> Result<CodeBatch> {
    if x.nrows() != d.nrows() {
        return Err(SparlowError::Dimension(format!(
            "data has {} rows, dictionary has {}",
            x.nrows(),
            d.nrows()
        )));
    }
    let r = d.ncols();
    let n = x.ncols();
    let encoder = Encoder::new(d, *prior);
    let corr = d.tr_mul(x);
    let results: Vec<Result<SparseCode>> = (0..n)
        .into_par_iter()
        .map(|j| encoder.encode_from_correlation(&corr.column(j).into_owned()))
        .collect();

    let mut codes = DMatrix::zeros(r, n);
    let mut supports = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (j, res) in results.into_iter().enumerate() {
        match res {
            Ok(code) => {
                codes.set_column(j, &code.values);
                supports.push(code.support);
            }
            Err(SparlowError::Convergence { residual, .. }) => {
                failures.push((j, residual));
                supports.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(SparlowError::BatchConvergence { failures });
    }
    Ok(CodeBatch { codes, supports })
}

/// Hessian of the elastic-net penalty restricted to a support of size `k`: `2λ₂ I`.
pub fn hessian_on_support(prior: &ElasticNetPrior, k: usize) -> DMatrix<f64> {
    DMatrix::identity(k, k) * (2.0 * prior.lambda2)
}

fn restrict_columns(m: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), support.len(), |i, a| m[(i, support[a])])
}

/// `K = D_𝔏ᵀD_𝔏 + H_g(φ_𝔏)`.
fn jacobian_system(d_l: &DMatrix<f64>, prior: &ElasticNetPrior) -> DMatrix<f64> {
    d_l.tr_mul(d_l) + hessian_on_support(prior, d_l.ncols())
}

/// Directional derivative `Dφ(D)[H]` of the code at a certified optimum.
///
/// On the support it equals `K⁻¹(H_𝔏ᵀx − (H_𝔏ᵀD_𝔏 + D_𝔏ᵀH_𝔏)φ_𝔏)`; off the
/// support it is zero.
pub fn code_jacobian_apply(
    x: &DVector<f64>,
    d: &DMatrix<f64>,
    code: &SparseCode,
    h: &DMatrix<f64>,
    prior: &ElasticNetPrior,
) -> Result<DVector<f64>> {
    if h.shape() != d.shape() {
        return Err(SparlowError::Dimension(
            "direction must match dictionary shape".into(),
        ));
    }
    let r = d.ncols();
    let mut out = DVector::zeros(r);
    let support = &code.support;
    if support.is_empty() {
        return Ok(out);
    }
    let d_l = restrict_columns(d, support);
    let h_l = restrict_columns(h, support);
    let phi_l = DVector::from_iterator(support.len(), support.iter().map(|&i| code.values[i]));
    let rhs = h_l.tr_mul(x) - (h_l.tr_mul(&d_l) + d_l.tr_mul(&h_l)) * &phi_l;
    let sol = solve_spd(&jacobian_system(&d_l, prior), &rhs)?;
    for (a, &i) in support.iter().enumerate() {
        out[i] = sol[a];
    }
    Ok(out)
}

/// Adjoint of [`code_jacobian_apply`]: the `m×r` matrix `G` with
/// `⟨G, H⟩_F = ⟨g, Dφ(D)[H]⟩` for all `H`.
///
/// With `w = K⁻¹ g_𝔏` the support columns are `(x − Dφ) wᵀ − D_𝔏 w φ_𝔏ᵀ`.
pub fn code_jacobian_adjoint(
    x: &DVector<f64>,
    d: &DMatrix<f64>,
    code: &SparseCode,
    g: &DVector<f64>,
    prior: &ElasticNetPrior,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(d.nrows(), d.ncols());
    accumulate_jacobian_adjoint(&mut out, x, d, code, g, prior)?;
    Ok(out)
}

pub(crate) fn accumulate_jacobian_adjoint(
    out: &mut DMatrix<f64>,
    x: &DVector<f64>,
    d: &DMatrix<f64>,
    code: &SparseCode,
    g: &DVector<f64>,
    prior: &ElasticNetPrior,
) -> Result<()> {
    let support = &code.support;
    if support.is_empty() {
        return Ok(());
    }
    let d_l = restrict_columns(d, support);
    let phi_l = DVector::from_iterator(support.len(), support.iter().map(|&i| code.values[i]));
    let g_l = DVector::from_iterator(support.len(), support.iter().map(|&i| g[i]));
    let w = solve_spd(&jacobian_system(&d_l, prior), &g_l)?;
    let resid = x - &d_l * &phi_l;
    let dw = &d_l * &w;
    for (a, &i) in support.iter().enumerate() {
        let mut col = out.column_mut(i);
        col.axpy(w[a], &resid, 1.0);
        col.axpy(-phi_l[a], &dw, 1.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn prior(l1: f64, l2: f64) -> ElasticNetPrior {
        ElasticNetPrior::new(l1, l2).unwrap()
    }

    #[test]
    fn prior_rejects_invalid_weights() {
        assert!(ElasticNetPrior::new(-0.1, 0.1).is_err());
        assert!(ElasticNetPrior::new(0.1, 0.0).is_err());
        assert!(ElasticNetPrior::new(0.1, f64::NAN).is_err());
        assert!(ElasticNetPrior::new(0.0, 1e-3).is_ok());
    }

    #[test]
    fn zero_sample_gives_zero_code() {
        let d = DMatrix::identity(3, 3);
        let code = sparse_encode(&DVector::zeros(3), &d, &prior(0.2, 0.1)).unwrap();
        assert_eq!(code.values, DVector::zeros(3));
        assert!(code.support.is_empty());
    }

    #[test]
    fn identity_dictionary_soft_thresholds() {
        let d = DMatrix::identity(2, 2);
        let code = sparse_encode(&dvector![1.0, 0.0], &d, &prior(0.2, 0.1)).unwrap();
        assert_abs_diff_eq!(code.values, dvector![2.0 / 3.0, 0.0], epsilon = 1e-14);
        assert_eq!(code.support, vec![0]);

        let code = sparse_encode(&dvector![0.1, 0.0], &d, &prior(0.2, 0.1)).unwrap();
        assert_eq!(code.values, dvector![0.0, 0.0]);
    }

    #[test]
    fn batch_matches_per_column_oracle() {
        let d = DMatrix::identity(2, 2);
        let batch = batch_encode(&DMatrix::identity(2, 2), &d, &prior(0.2, 0.1)).unwrap();
        assert_abs_diff_eq!(
            batch.codes,
            DMatrix::identity(2, 2) * (2.0 / 3.0),
            epsilon = 1e-14
        );
        assert_eq!(batch.supports, vec![vec![0], vec![1]]);

        let empty = batch_encode(&DMatrix::zeros(2, 0), &d, &prior(0.2, 0.1)).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn batch_duplicates_give_duplicate_codes() {
        let d = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8]);
        let x = DMatrix::from_column_slice(2, 2, &[0.3, 0.9, 0.3, 0.9]);
        let batch = batch_encode(&x, &d, &prior(0.05, 0.01)).unwrap();
        assert_eq!(batch.codes.column(0), batch.codes.column(1));
    }

    #[test]
    fn kkt_residual_examples() {
        let d = DMatrix::identity(2, 2);
        let p = prior(0.2, 0.1);
        assert_eq!(kkt_residual(&DVector::zeros(2), &d, &DVector::zeros(2), &p), 0.0);
        let r = kkt_residual(&dvector![1.0, 0.0], &d, &dvector![0.0, 0.0], &p);
        assert_abs_diff_eq!(r, 0.8, epsilon = 1e-15);
        let r = kkt_residual(&dvector![1.0, 0.0], &d, &dvector![2.0 / 3.0, 0.0], &p);
        assert!(r < 1e-15);
    }

    #[test]
    fn jacobian_scalar_examples() {
        let d = DMatrix::identity(2, 2);
        let p = prior(0.2, 0.1);
        let x = dvector![1.0, 0.0];
        let code = sparse_encode(&x, &d, &p).unwrap();

        let h = DMatrix::zeros(2, 2);
        assert_eq!(
            code_jacobian_apply(&x, &d, &code, &h, &p).unwrap(),
            DVector::zeros(2)
        );

        let mut h = DMatrix::zeros(2, 2);
        h[(1, 0)] = 1.0;
        assert_abs_diff_eq!(
            code_jacobian_apply(&x, &d, &code, &h, &p).unwrap(),
            DVector::zeros(2),
            epsilon = 1e-15
        );

        let mut h = DMatrix::zeros(2, 2);
        h[(0, 0)] = 1.0;
        let dphi = code_jacobian_apply(&x, &d, &code, &h, &p).unwrap();
        assert_abs_diff_eq!(dphi, dvector![-5.0 / 18.0, 0.0], epsilon = 1e-14);

        // central differences of the encoder agree
        let step = 1e-6;
        let plus = sparse_encode(&x, &(&d + &h * step), &p).unwrap();
        let minus = sparse_encode(&x, &(&d - &h * step), &p).unwrap();
        let fd = (plus.values - minus.values) / (2.0 * step);
        assert_abs_diff_eq!(fd, dphi, epsilon = 1e-8);
    }

    #[test]
    fn jacobian_of_empty_support_is_zero() {
        let d = DMatrix::identity(2, 2);
        let p = prior(0.2, 0.1);
        let code = SparseCode::zeros(2);
        let h = DMatrix::from_element(2, 2, 1.0);
        let x = dvector![0.1, 0.0];
        assert_eq!(
            code_jacobian_apply(&x, &d, &code, &h, &p).unwrap(),
            DVector::zeros(2)
        );
    }

    #[test]
    fn single_atom_scalar_oracle() {
        // m = 1, D = [1], x = [1], λ₁ = λ₂ = 0.1: φ = (1 − 0.1)/(1 + 0.2) = 0.75
        let d = DMatrix::from_element(1, 1, 1.0);
        let p = prior(0.1, 0.1);
        let x = dvector![1.0];
        let code = sparse_encode(&x, &d, &p).unwrap();
        assert_abs_diff_eq!(code.values[0], 0.75, epsilon = 1e-15);
        // φ(δ) = (δ − λ₁)/(δ² + 2λ₂) ⇒ φ'(1) = (1·1.2 − 0.9·2)/1.44
        let expected = (1.2 - 0.9 * 2.0) / 1.44;
        let h = DMatrix::from_element(1, 1, 1.0);
        let dphi = code_jacobian_apply(&x, &d, &code, &h, &p).unwrap();
        assert_abs_diff_eq!(dphi[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn hessian_examples() {
        assert_eq!(
            hessian_on_support(&prior(0.0, 0.1), 3),
            DMatrix::identity(3, 3) * 0.2
        );
        assert_eq!(
            hessian_on_support(&prior(0.0, 0.5), 1),
            DMatrix::from_element(1, 1, 1.0)
        );
    }

    #[test]
    fn adjoint_matches_apply() {
        let d = DMatrix::from_column_slice(
            3,
            4,
            &[0.6, 0.8, 0.0, 0.0, 0.6, 0.8, 0.8, 0.0, 0.6, 0.0, 0.0, 1.0],
        );
        let x = dvector![0.5, 0.7, 0.4];
        let p = prior(0.05, 0.01);
        let code = sparse_encode(&x, &d, &p).unwrap();
        assert!(!code.support.is_empty());
        let h = DMatrix::from_fn(3, 4, |i, j| ((i * 4 + j) as f64).sin());
        let g = dvector![0.3, -1.0, 0.7, 0.2];
        let lhs = g.dot(&code_jacobian_apply(&x, &d, &code, &h, &p).unwrap());
        let adj = code_jacobian_adjoint(&x, &d, &code, &g, &p).unwrap();
        let rhs = crate::linalg::frob_dot(&adj, &h);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn dead_atoms_are_reported() {
        let batch = CodeBatch {
            codes: DMatrix::zeros(3, 2),
            supports: vec![vec![0], vec![0, 2]],
        };
        assert_eq!(batch.dead_atoms(), vec![1]);
    }

    #[test]
    fn non_convergence_is_an_error() {
        let d = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.999, 0.0447]);
        let enc = Encoder::with_options(
            &d,
            prior(0.0, 1e-6),
            SolverOptions {
                max_cd_iters: 1,
                kkt_tol: 1e-300,
            },
        );
        assert!(matches!(
            enc.encode(&dvector![0.3, 0.9]),
            Err(SparlowError::Convergence { .. })
        ));
    }
}
