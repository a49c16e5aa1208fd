//! The SparLow cost `J(D, P) = f(D, P) − μ₁g_c(D) − μ₂g_d(D)` and its gradients.
//!
//! `f` is the trace quotient of the structure pair evaluated on the elastic-net
//! codes of the data under `D`. The functions here accept raw matrices so they
//! can be probed off the manifold by finite differences.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SparlowError};
use crate::graphs::{evaluate_pair, StructurePair};
use crate::linalg::{symmetrize, trace_of_product};
use crate::manifold::{project_tangent, Dictionary, ProductPoint, TangentPair};
use crate::sparse::{accumulate_jacobian_adjoint, batch_encode, CodeBatch, ElasticNetPrior};

pub const DEFAULT_SIGMA: f64 = 1e-3;
pub const DEFAULT_MU1: f64 = 2.5e-4;
pub const DEFAULT_MU2: f64 = 5e-3;

const BARRIER_EDGE: f64 = 1.0 - 1e-12;
const GRAD_CHUNK: usize = 32;

/// Weights of the SparLow cost and the anchor dictionary `D*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparLowParams {
    pub sigma: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub anchor: Dictionary,
}

impl SparLowParams {
    pub fn new(sigma: f64, mu1: f64, mu2: f64, anchor: Dictionary) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SparlowError::Validation(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        if !(mu1 >= 0.0) || !(mu2 >= 0.0) || !mu1.is_finite() || !mu2.is_finite() {
            return Err(SparlowError::Validation(format!(
                "mu1 and mu2 must be ≥ 0, got {mu1} and {mu2}"
            )));
        }
        Ok(SparLowParams {
            sigma,
            mu1,
            mu2,
            anchor,
        })
    }

    pub fn with_defaults(anchor: Dictionary) -> Self {
        SparLowParams {
            sigma: DEFAULT_SIGMA,
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            anchor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveReport {
    pub f_value: f64,
    pub gc_value: f64,
    pub gd_value: f64,
    pub j_value: f64,
    /// `trace(PA)`
    pub numerator: f64,
    /// `trace(PB) + σ`
    pub denominator: f64,
}

/// `trace(PA) / (trace(PB) + σ)`.
pub fn trace_quotient_f(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, sigma: f64) -> Result<f64> {
    let (num, den) = quotient_parts(a, b, p, sigma)?;
    Ok(num / den)
}

fn quotient_parts(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, sigma: f64) -> Result<(f64, f64)> {
    let r = p.nrows();
    if a.shape() != (r, r) || b.shape() != (r, r) || p.ncols() != r {
        return Err(SparlowError::Dimension(format!(
            "trace quotient needs {r}×{r} matrices, got A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let den = trace_of_product(p, b) + sigma;
    if !(den > 0.0) {
        return Err(SparlowError::Guard(den));
    }
    Ok((trace_of_product(p, a), den))
}

fn coherences(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = d.tr_mul(d);
    let r = c.nrows();
    for j in 0..r {
        for i in 0..j {
            if c[(i, j)].abs() >= BARRIER_EDGE || !c[(i, j)].is_finite() {
                return Err(SparlowError::BarrierDomain {
                    i,
                    j,
                    value: c[(i, j)].abs(),
                });
            }
        }
    }
    Ok(c)
}

/// `g_c(D) = −Σ_{i<j} ½ log(1 − (d_iᵀd_j)²)`.
pub fn coherence_barrier(d: &DMatrix<f64>) -> Result<f64> {
    let c = coherences(d)?;
    let mut acc = 0.0;
    for j in 0..c.ncols() {
        for i in 0..j {
            acc -= 0.5 * (-c[(i, j)] * c[(i, j)]).ln_1p();
        }
    }
    Ok(acc)
}

/// `∇g_c(D) = D W` with `w_ij = c_ij / (1 − c_ij²)` off the diagonal.
pub fn coherence_barrier_grad(d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c = coherences(d)?;
    let r = c.nrows();
    let w = DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            0.0
        } else {
            c[(i, j)] / (1.0 - c[(i, j)] * c[(i, j)])
        }
    });
    Ok(d * w)
}

/// `½‖D − D*‖²_F`.
pub fn data_regularizer(d: &DMatrix<f64>, anchor: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(d, anchor)?;
    Ok(0.5 * (d - anchor).norm_squared())
}

pub fn data_regularizer_grad(d: &DMatrix<f64>, anchor: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_same_shape(d, anchor)?;
    Ok(d - anchor)
}

fn check_same_shape(d: &DMatrix<f64>, anchor: &DMatrix<f64>) -> Result<()> {
    if d.shape() != anchor.shape() {
        return Err(SparlowError::Dimension(format!(
            "dictionary is {:?}, anchor is {:?}",
            d.shape(),
            anchor.shape()
        )));
    }
    Ok(())
}

/// `(A − f·B) / (trace(PB) + σ)`, symmetrized.
pub fn euclidean_grad_p(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    sigma: f64,
    f_value: f64,
) -> Result<DMatrix<f64>> {
    let (_, den) = quotient_parts(a, b, p, sigma)?;
    Ok(symmetrize(&((a - b * f_value) / den)))
}

/// Everything computed while evaluating `J` at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: ObjectiveReport,
    pub codes: CodeBatch,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// `J` for fixed data, structure pair, prior and weights.
///
/// With frozen codes the dictionary no longer influences `f`, and the
/// dictionary gradient is zero.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    x: &'a DMatrix<f64>,
    pair: &'a StructurePair,
    prior: ElasticNetPrior,
    params: &'a SparLowParams,
    frozen: Option<&'a CodeBatch>,
}

impl<'a> Objective<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        pair: &'a StructurePair,
        prior: ElasticNetPrior,
        params: &'a SparLowParams,
    ) -> Result<Self> {
        if pair.samples() != x.ncols() {
            return Err(SparlowError::Dimension(format!(
                "structure pair built for {} samples, data has {}",
                pair.samples(),
                x.ncols()
            )));
        }
        if params.anchor.dim() != x.nrows() {
            return Err(SparlowError::Dimension(format!(
                "anchor dictionary has {} rows, data has {}",
                params.anchor.dim(),
                x.nrows()
            )));
        }
        Ok(Objective {
            x,
            pair,
            prior,
            params,
            frozen: None,
        })
    }

    /// Holds the codes fixed at `codes` (the dictionary is treated as frozen).
    pub fn with_frozen_codes(mut self, codes: &'a CodeBatch) -> Self {
        self.frozen = Some(codes);
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        self.x
    }

    pub fn pair(&self) -> &StructurePair {
        self.pair
    }

    pub fn prior(&self) -> &ElasticNetPrior {
        &self.prior
    }

    pub fn params(&self) -> &SparLowParams {
        self.params
    }

    pub fn evaluate(&self, d: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<Evaluation> {
        check_same_shape(d, self.params.anchor.matrix())?;
        let codes = match self.frozen {
            Some(c) => c.clone(),
            None => batch_encode(self.x, d, &self.prior)?,
        };
        let (a, b) = evaluate_pair(self.pair, &codes.codes)?;
        let (numerator, denominator) = quotient_parts(&a, &b, p, self.params.sigma)?;
        let f_value = numerator / denominator;
        let gc_value = if self.params.mu1 > 0.0 {
            coherence_barrier(d)?
        } else {
            0.0
        };
        let gd_value = data_regularizer(d, self.params.anchor.matrix())?;
        let j_value = f_value - self.params.mu1 * gc_value - self.params.mu2 * gd_value;
        Ok(Evaluation {
            report: ObjectiveReport {
                f_value,
                gc_value,
                gd_value,
                j_value,
                numerator,
                denominator,
            },
            codes,
            a,
            b,
        })
    }

    /// `∂f/∂Φ = (∂trace(P𝒜)/∂Φ − f·∂trace(Pℬ)/∂Φ) / (trace(PB) + σ)`.
    fn code_gradient(&self, p: &DMatrix<f64>, eval: &Evaluation) -> Result<DMatrix<f64>> {
        let phi = &eval.codes.codes;
        let ga = self.pair.numerator.trace_gradient(phi, p)?;
        let gb = self.pair.denominator.trace_gradient(phi, p)?;
        Ok((ga - gb * eval.report.f_value) / eval.report.denominator)
    }

    /// `∇f(D)` through the code Jacobians, reduced in a fixed order.
    fn trace_quotient_grad_d(
        &self,
        d: &DMatrix<f64>,
        p: &DMatrix<f64>,
        eval: &Evaluation,
    ) -> Result<DMatrix<f64>> {
        let m = self.code_gradient(p, eval)?;
        let n = self.x.ncols();
        let chunks: Vec<Result<DMatrix<f64>>> = (0..n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = DMatrix::zeros(d.nrows(), d.ncols());
                for j in (c * GRAD_CHUNK)..((c + 1) * GRAD_CHUNK).min(n) {
                    let code = eval.codes.code(j);
                    let g: DVector<f64> = m.column(j).into_owned();
                    let x = self.x.column(j).into_owned();
                    accumulate_jacobian_adjoint(&mut acc, &x, d, &code, &g, &self.prior)?;
                }
                Ok(acc)
            })
            .collect();
        let mut total = DMatrix::zeros(d.nrows(), d.ncols());
        for c in chunks {
            total += c?;
        }
        Ok(total)
    }

    /// Euclidean gradients `(∇J(D), ∇J(P))` at a point already evaluated.
    pub fn euclidean_gradient(
        &self,
        d: &DMatrix<f64>,
        p: &DMatrix<f64>,
        eval: &Evaluation,
    ) -> Result<TangentPair> {
        let grad_p = euclidean_grad_p(&eval.a, &eval.b, p, self.params.sigma, eval.report.f_value)?;
        let grad_d = if self.frozen.is_some() {
            DMatrix::zeros(d.nrows(), d.ncols())
        } else {
            let mut g = self.trace_quotient_grad_d(d, p, eval)?;
            if self.params.mu1 > 0.0 {
                g -= coherence_barrier_grad(d)? * self.params.mu1;
            }
            if self.params.mu2 > 0.0 {
                g -= data_regularizer_grad(d, self.params.anchor.matrix())? * self.params.mu2;
            }
            g
        };
        Ok(TangentPair {
            dict_dir: grad_d,
            proj_dir: grad_p,
        })
    }

    pub fn riemannian_gradient(&self, point: &ProductPoint, eval: &Evaluation) -> Result<TangentPair> {
        let euclid = self.euclidean_gradient(point.dict.matrix(), point.proj.matrix(), eval)?;
        Ok(riemannian_grad(point, &euclid))
    }
}

/// `∇J(D)` for codes already certified optimal for `(X, D)`.
pub fn euclidean_grad_d(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    codes: &CodeBatch,
    pair: &StructurePair,
    p: &DMatrix<f64>,
    prior: &ElasticNetPrior,
    params: &SparLowParams,
) -> Result<DMatrix<f64>> {
    let obj = Objective::new(x, pair, *prior, params)?;
    let (a, b) = evaluate_pair(pair, &codes.codes)?;
    let (numerator, denominator) = quotient_parts(&a, &b, p, params.sigma)?;
    let f_value = numerator / denominator;
    let eval = Evaluation {
        report: ObjectiveReport {
            f_value,
            gc_value: 0.0,
            gd_value: 0.0,
            j_value: f_value,
            numerator,
            denominator,
        },
        codes: codes.clone(),
        a,
        b,
    };
    Ok(obj.euclidean_gradient(d, p, &eval)?.dict_dir)
}

/// Projects Euclidean gradients onto the tangent space at `point`.
pub fn riemannian_grad(point: &ProductPoint, euclid: &TangentPair) -> TangentPair {
    project_tangent(point, euclid)
}

pub fn evaluate_j(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    p: &DMatrix<f64>,
    pair: &StructurePair,
    prior: &ElasticNetPrior,
    params: &SparLowParams,
) -> Result<ObjectiveReport> {
    Ok(Objective::new(x, pair, *prior, params)?.evaluate(d, p)?.report)
}
