//! Geometric conjugate gradient ascent on the product manifold.

use log::debug;

use crate::error::{Result, SparlowError};
use crate::manifold::{
    product_metric, project_tangent, retract, transport, Dictionary, ProductPoint, TangentPair,
};
use crate::objective::{Evaluation, Objective};

pub const ARMIJO_C1: f64 = 1e-4;
const GOLDEN: f64 = 0.381_966_011_250_105_1;
const REPROJECT_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct CGConfig {
    pub max_iters: usize,
    /// Stop when `√(‖ΔD‖²_F + ‖ΔP‖²_F)` falls below this.
    pub step_tol: f64,
    pub grad_tol: f64,
    pub ls_max_evals: usize,
    /// Relative bracket width at which golden-section refinement stops.
    pub ls_rel_tol: f64,
    /// `None` restarts every `r` iterations.
    pub restart_every: Option<usize>,
    pub seed: u64,
    /// Force `β = 0` (Riemannian steepest ascent).
    pub steepest: bool,
    pub verbose: bool,
}

impl Default for CGConfig {
    fn default() -> Self {
        CGConfig {
            max_iters: 200,
            step_tol: 1e-7,
            grad_tol: 1e-6,
            ls_max_evals: 40,
            ls_rel_tol: 1e-2,
            restart_every: None,
            seed: 0,
            steepest: false,
            verbose: false,
        }
    }
}

impl CGConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.step_tol > 0.0
            && self.grad_tol > 0.0
            && self.ls_max_evals > 0
            && self.ls_rel_tol > 0.0
            && self.restart_every.is_none_or(|k| k > 0);
        if ok {
            Ok(())
        } else {
            Err(SparlowError::Validation(format!(
                "invalid optimizer settings: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub j_value: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub beta: f64,
    pub accepted: bool,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CGTrace {
    pub initial_j: f64,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl CGTrace {
    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.accepted).count()
    }

    pub fn final_j(&self) -> f64 {
        self.records
            .iter()
            .rev()
            .find(|r| r.accepted)
            .map_or(self.initial_j, |r| r.j_value)
    }

    /// `J` after every accepted step, starting with the initial value.
    pub fn accepted_values(&self) -> Vec<f64> {
        std::iter::once(self.initial_j)
            .chain(self.records.iter().filter(|r| r.accepted).map(|r| r.j_value))
            .collect()
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.accepted_values().windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub step: f64,
    pub value: f64,
    pub evals: usize,
    pub stagnated: bool,
}

/// Maximizes `φ(t)` along a curve with `φ(0) = j0` and `φ'(0) = slope`.
///
/// An acceptable step satisfies `φ(t) ≥ j0 + c₁·t·slope` and `φ(t) > j0`. The search halves
/// or doubles `t_init` to bracket a maximum and refines it by golden
/// sections. Evaluation errors count as rejected trial points.
pub fn line_search<F>(
    mut phi: F,
    j0: f64,
    slope: f64,
    t_init: f64,
    max_evals: usize,
    rel_tol: f64,
) -> LineSearchResult
where
    F: FnMut(f64) -> Result<f64>,
{
    let stalled = |evals| LineSearchResult {
        step: 0.0,
        value: j0,
        evals,
        stagnated: true,
    };
    if !(slope > 0.0) || !(t_init > 0.0) || !t_init.is_finite() {
        return stalled(0);
    }
    let mut evals = 0usize;
    let mut sample = |t: f64, evals: &mut usize| -> f64 {
        *evals += 1;
        match phi(t) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    let armijo = |t: f64, v: f64| v > j0 && v >= j0 + ARMIJO_C1 * t * slope;

    let mut t = t_init;
    let mut v = sample(t, &mut evals);
    let mut shrunk = false;
    while !armijo(t, v) {
        if evals >= max_evals {
            return stalled(evals);
        }
        t *= 0.5;
        shrunk = true;
        v = sample(t, &mut evals);
    }
    let mut best = (t, v);

    let (mut lo, mut mid, mut hi) = (0.0, t, 2.0 * t);
    let mut f_mid = v;
    if !shrunk {
        loop {
            if evals >= max_evals {
                return finish(best, evals);
            }
            let v2 = sample(hi, &mut evals);
            if armijo(hi, v2) && v2 > best.1 {
                best = (hi, v2);
            }
            if v2 > f_mid {
                lo = mid;
                mid = hi;
                f_mid = v2;
                hi *= 2.0;
            } else {
                break;
            }
        }
    }

    while evals < max_evals && hi - lo > rel_tol * mid {
        let right = hi - mid > mid - lo;
        let x = if right {
            mid + GOLDEN * (hi - mid)
        } else {
            mid - GOLDEN * (mid - lo)
        };
        let fx = sample(x, &mut evals);
        if armijo(x, fx) && fx > best.1 {
            best = (x, fx);
        }
        if fx > f_mid {
            if right {
                lo = mid;
            } else {
                hi = mid;
            }
            mid = x;
            f_mid = fx;
        } else if right {
            hi = x;
        } else {
            lo = x;
        }
    }
    finish(best, evals)
}

fn finish(best: (f64, f64), evals: usize) -> LineSearchResult {
    LineSearchResult {
        step: best.0,
        value: best.1,
        evals,
        stagnated: false,
    }
}

/// `β = ⟨G_new, G_new − 𝒯G_old⟩ / ⟨H_old, G_old⟩`, clamped at zero.
pub fn beta_kh(g_new: &TangentPair, g_old_transported: &TangentPair, h_dot_g_old: f64) -> Result<f64> {
    let diff = g_new.add_scaled(-1.0, g_old_transported);
    let num = product_metric(g_new, &diff)?;
    if !(h_dot_g_old != 0.0) || !h_dot_g_old.is_finite() || !num.is_finite() {
        return Ok(0.0);
    }
    Ok((num / h_dot_g_old).max(0.0))
}

#[derive(Debug, Clone)]
pub struct CGOutcome {
    pub point: ProductPoint,
    pub evaluation: Evaluation,
    pub trace: CGTrace,
}

struct Trial {
    t: f64,
    point: ProductPoint,
    eval: Evaluation,
}

fn reprojected(point: &ProductPoint) -> Result<ProductPoint> {
    ProductPoint::new(
        Dictionary::normalized(point.dict.matrix().clone())?,
        point.proj.reprojected()?,
    )
}

fn drifted(point: &ProductPoint) -> bool {
    let d = point.dict.matrix();
    let atoms_off = d.column_iter().any(|c| (c.norm() - 1.0).abs() > 1e-13);
    atoms_off || point.proj.check(1e-13, 1e-12).is_err()
}

/// Runs CG ascent on `J` from `start`.
pub fn optimize(objective: &Objective<'_>, start: ProductPoint, config: &CGConfig) -> Result<CGOutcome> {
    config.validate()?;
    let r = start.proj.size();
    let restart_every = config.restart_every.unwrap_or(r).max(1);
    let at = |iteration: usize| {
        move |e: SparlowError| SparlowError::Iteration {
            iteration,
            source: Box::new(e),
        }
    };

    let mut point = start;
    let mut eval = objective
        .evaluate(point.dict.matrix(), point.proj.matrix())
        .map_err(at(0))?;
    let mut grad = objective.riemannian_gradient(&point, &eval).map_err(at(0))?;
    let mut dir = grad.clone();
    let mut dir_is_grad = true;
    let mut t_prev = 1.0 / grad.norm().max(f64::MIN_POSITIVE);
    let mut trace = CGTrace {
        initial_j: eval.report.j_value,
        records: Vec::new(),
        stop: StopReason::MaxIterations,
    };
    if config.verbose {
        eprintln!("iter\tJ\tgrad_norm\tstep\tbeta");
        eprintln!("0\t{:.12e}\t{:.6e}\t0\t0", eval.report.j_value, grad.norm());
    }
    if grad.norm() <= config.grad_tol {
        trace.stop = StopReason::GradientTolerance;
        return Ok(CGOutcome {
            point,
            evaluation: eval,
            trace,
        });
    }

    for it in 1..=config.max_iters {
        let j0 = eval.report.j_value;
        let mut slope = product_metric(&grad, &dir).map_err(at(it))?;
        if !(slope > 0.0) {
            dir = grad.clone();
            dir_is_grad = true;
            slope = product_metric(&grad, &grad).map_err(at(it))?;
        }

        let (search, trial) = loop {
            let mut trials: Vec<Trial> = Vec::new();
            let search = line_search(
                |t| {
                    let p = retract(&point, &dir, t)?;
                    let e = objective.evaluate(p.dict.matrix(), p.proj.matrix())?;
                    let v = e.report.j_value;
                    trials.push(Trial { t, point: p, eval: e });
                    Ok(v)
                },
                j0,
                slope,
                t_prev,
                config.ls_max_evals,
                config.ls_rel_tol,
            );
            if search.stagnated && !dir_is_grad {
                debug!("iteration {it}: line search stalled, restarting along the gradient");
                dir = grad.clone();
                dir_is_grad = true;
                slope = product_metric(&grad, &grad).map_err(at(it))?;
                continue;
            }
            let trial = trials.into_iter().find(|tr| tr.t == search.step);
            break (search, trial);
        };

        let Some(trial) = trial.filter(|_| !search.stagnated) else {
            trace.records.push(IterationRecord {
                iteration: it,
                j_value: j0,
                grad_norm: grad.norm(),
                step: 0.0,
                beta: 0.0,
                accepted: false,
                evals: search.evals,
            });
            trace.stop = StopReason::Stagnation;
            break;
        };

        let mut new_point = trial.point;
        let mut new_eval = trial.eval;
        if it % REPROJECT_EVERY == 0 && drifted(&new_point) {
            new_point = reprojected(&new_point).map_err(at(it))?;
            new_eval = objective
                .evaluate(new_point.dict.matrix(), new_point.proj.matrix())
                .map_err(at(it))?;
        }
        debug_assert!(new_point.proj.check(1e-10, 1e-8).is_ok());

        let new_grad = objective
            .riemannian_gradient(&new_point, &new_eval)
            .map_err(at(it))?;
        let h_dot_g = product_metric(&dir, &grad).map_err(at(it))?;
        let moved_grad = transport(&point, &dir, search.step, &grad).map_err(at(it))?;
        let moved_dir = transport(&point, &dir, search.step, &dir).map_err(at(it))?;
        let moved_grad = project_tangent(&new_point, &moved_grad);
        let moved_dir = project_tangent(&new_point, &moved_dir);
        let beta = if config.steepest || it % restart_every == 0 {
            0.0
        } else {
            beta_kh(&new_grad, &moved_grad, h_dot_g).map_err(at(it))?
        };

        let step_norm = new_point.distance(&point);
        let grad_norm = new_grad.norm();
        trace.records.push(IterationRecord {
            iteration: it,
            j_value: new_eval.report.j_value,
            grad_norm,
            step: search.step,
            beta,
            accepted: true,
            evals: search.evals,
        });
        if config.verbose {
            eprintln!(
                "{it}\t{:.12e}\t{grad_norm:.6e}\t{:.6e}\t{beta:.6e}",
                new_eval.report.j_value, search.step
            );
        }

        dir = new_grad.add_scaled(beta, &moved_dir);
        dir_is_grad = beta == 0.0;
        t_prev = search.step;
        point = new_point;
        eval = new_eval;
        grad = new_grad;

        if grad_norm <= config.grad_tol {
            trace.stop = StopReason::GradientTolerance;
            break;
        }
        if step_norm <= config.step_tol {
            trace.stop = StopReason::StepTolerance;
            break;
        }
    }

    Ok(CGOutcome {
        point,
        evaluation: eval,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    #[test]
    fn constant_curve_stagnates() {
        let res = line_search(|_| Ok(3.0), 3.0, 1.0, 1.0, 40, 1e-3);
        assert!(res.stagnated);
        assert_eq!(res.step, 0.0);
        assert!(res.evals <= 40);
    }

    #[test]
    fn quadratic_surrogate_peaks_at_one() {
        let f = |t: f64| -(t - 1.0) * (t - 1.0);
        for t0 in [1.0, 0.3, 0.01, 5.0, 37.0] {
            let res = line_search(|t| Ok(f(t)), -1.0, 2.0, t0, 40, 1e-4);
            assert!(!res.stagnated);
            assert_abs_diff_eq!(res.step, 1.0, epsilon = 1e-3);
            assert!(res.evals <= 40);
        }
    }

    #[test]
    fn accepted_step_increases_value() {
        let f = |t: f64| (3.0 * t).sin();
        let res = line_search(|t| Ok(f(t)), 0.0, 3.0, 0.1, 40, 1e-3);
        assert!(res.value > 0.0);
        assert!(res.value >= ARMIJO_C1 * res.step * 3.0);
    }

    #[test]
    fn errors_are_rejected_points() {
        let res = line_search(
            |t| {
                if t > 0.5 {
                    Err(SparlowError::Guard(0.0))
                } else {
                    Ok(t)
                }
            },
            0.0,
            1.0,
            4.0,
            40,
            1e-3,
        );
        assert!(!res.stagnated);
        assert!(res.step <= 0.5 && res.step > 0.0);
    }

    #[test]
    fn non_ascent_slope_stalls() {
        let res = line_search(|t| Ok(t), 0.0, -1.0, 1.0, 40, 1e-3);
        assert!(res.stagnated);
        assert_eq!(res.evals, 0);
    }

    fn pair(d: DMatrix<f64>) -> TangentPair {
        TangentPair {
            dict_dir: d,
            proj_dir: DMatrix::zeros(2, 2),
        }
    }

    #[test]
    fn beta_examples() {
        let g = pair(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(beta_kh(&g, &g, 5.0).unwrap(), 0.0);

        let g_old = pair(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let g_new = pair(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]));
        let beta = beta_kh(&g_new, &g_old, g_old.norm().powi(2)).unwrap();
        assert_abs_diff_eq!(beta, 4.0, epsilon = 1e-15);

        let neg = pair(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let big = pair(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]));
        assert_eq!(beta_kh(&neg, &big, 1.0).unwrap(), 0.0);
        assert_eq!(beta_kh(&g_new, &g_old, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(CGConfig::default().validate().is_ok());
        let bad = CGConfig {
            max_iters: 0,
            ..CGConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
