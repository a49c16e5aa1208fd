//! Finite-difference verification of the analytic gradients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SparlowError};
use crate::graphs::{build_pair, GraphSpec, LabelSet, Variant};
use crate::linalg::{frob_dot, symmetrize};
use crate::manifold::{project_tangent, retract, Dictionary, ProductPoint, Projector, TangentPair};
use crate::objective::{Objective, SparLowParams, DEFAULT_MU1, DEFAULT_MU2, DEFAULT_SIGMA};
use crate::pipeline::data::{normalize_columns, Dataset};
use crate::pipeline::train::{DEFAULT_LAMBDA1, DEFAULT_LAMBDA2};
use crate::sparse::{batch_encode, code_jacobian_apply, CodeBatch, ElasticNetPrior, Encoder};

const MAX_SIZE: usize = 4096;
const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub graph: GraphSpec,
    pub m: usize,
    pub r: usize,
    pub l: usize,
    pub n: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Central-difference step.
    pub step: f64,
    /// Random directions per check.
    pub probes: usize,
    /// Redraws allowed when a probe changes some support.
    pub max_redraws: usize,
    /// Deliberately scales the analytic dictionary gradient by 1.5.
    pub corrupt: bool,
}

impl GradCheckConfig {
    pub fn new(variant: Variant) -> Self {
        GradCheckConfig {
            graph: GraphSpec::new(variant),
            m: 8,
            r: 12,
            l: 3,
            n: 20,
            seed: 0,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            sigma: DEFAULT_SIGMA,
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            step: 1e-6,
            probes: 3,
            max_redraws: 10,
            corrupt: false,
        }
    }
}

/// Maximum relative errors over all probes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub grad_d: f64,
    pub grad_p: f64,
    pub riemannian: f64,
    pub jacobian: f64,
    /// Probes that kept changing supports and were skipped.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.grad_d
            .max(self.grad_p)
            .max(self.riemannian)
            .max(self.jacobian)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn unit_direction(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = gaussian(rng, rows, cols);
    let norm = g.norm();
    g / norm
}

/// Labels cycling through three classes; semi-supervised variants leave
/// every fifth sample unlabeled.
pub fn synthetic_labels(variant: Variant, n: usize) -> LabelSet {
    let labels = (0..n)
        .map(|i| {
            if variant.is_semi_supervised() && i % 5 == 4 {
                LabelSet::UNLABELED
            } else {
                (i % 3) as i64
            }
        })
        .collect();
    LabelSet::new(labels).expect("valid synthetic labels")
}

/// A seeded problem instance for gradient checks.
pub struct Instance {
    pub x: DMatrix<f64>,
    pub labels: Option<LabelSet>,
    pub point: ProductPoint,
    pub params: SparLowParams,
    pub prior: ElasticNetPrior,
}

pub fn random_instance(dataset: Option<&Dataset>, config: &GradCheckConfig) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let variant = config.graph.variant;
    let (x, labels) = match dataset {
        Some(ds) => (ds.x.clone(), ds.labels.clone()),
        None => {
            let x = normalize_columns(gaussian(&mut rng, config.m, config.n))?;
            let labels = variant.uses_labels().then(|| synthetic_labels(variant, config.n));
            (x, labels)
        }
    };
    let (m, r, l) = (x.nrows(), config.r, config.l);
    if m * r > MAX_SIZE {
        return Err(SparlowError::Validation(format!(
            "gradient checks are limited to m·r ≤ {MAX_SIZE}, got {}",
            m * r
        )));
    }
    if l == 0 || l >= r {
        return Err(SparlowError::Validation(format!("rank {l} outside 1..{r}")));
    }
    let dict = Dictionary::normalized(gaussian(&mut rng, m, r))?;
    let anchor = Dictionary::normalized(dict.matrix() + gaussian(&mut rng, m, r) * 0.1)?;
    let basis = gaussian(&mut rng, r, l).qr().q();
    let proj = Projector::from_basis(&basis)?;
    Ok(Instance {
        x,
        labels,
        point: ProductPoint::new(dict, proj)?,
        params: SparLowParams::new(config.sigma, config.mu1, config.mu2, anchor)?,
        prior: ElasticNetPrior::new(config.lambda1, config.lambda2)?,
    })
}

fn same_supports(a: &CodeBatch, b: &CodeBatch) -> bool {
    a.supports == b.supports
}

/// Runs every oracle on a seeded instance (or on `dataset` when given).
pub fn check_grad(dataset: Option<&Dataset>, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let inst = random_instance(dataset, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let h = config.step;
    let x = &inst.x;
    let d = inst.point.dict.matrix();
    let p = inst.point.proj.matrix();
    let (m, r) = d.shape();

    let codes0 = batch_encode(x, d, &inst.prior)?;
    let pair = build_pair(&config.graph, x, &codes0, inst.labels.as_ref())?;
    let obj = Objective::new(x, &pair, inst.prior, &inst.params)?;
    let eval = obj.evaluate(d, p)?;
    let mut euclid = obj.euclidean_gradient(d, p, &eval)?;
    if config.corrupt {
        euclid.dict_dir *= 1.5;
    }
    let riem = project_tangent(&inst.point, &euclid);
    let mut report = GradCheckReport::default();

    for _ in 0..config.probes {
        // dictionary gradient, off-manifold directions
        let mut done = false;
        for _ in 0..=config.max_redraws {
            let dir = unit_direction(&mut rng, m, r);
            let plus = obj.evaluate(&(d + &dir * h), p)?;
            let minus = obj.evaluate(&(d - &dir * h), p)?;
            if !same_supports(&plus.codes, &eval.codes) || !same_supports(&minus.codes, &eval.codes) {
                continue;
            }
            let fd = (plus.report.j_value - minus.report.j_value) / (2.0 * h);
            let err = relative_error(frob_dot(&euclid.dict_dir, &dir), fd);
            report.grad_d = report.grad_d.max(err);
            done = true;
            break;
        }
        report.skipped += usize::from(!done);

        // projector gradient, symmetric directions
        let dir = symmetrize(&unit_direction(&mut rng, r, r));
        let fp = obj.evaluate(d, &(p + &dir * h))?.report.j_value;
        let fm = obj.evaluate(d, &(p - &dir * h))?.report.j_value;
        let err = relative_error(frob_dot(&euclid.proj_dir, &dir), (fp - fm) / (2.0 * h));
        report.grad_p = report.grad_p.max(err);

        // Riemannian gradient along retraction curves
        let mut done = false;
        for _ in 0..=config.max_redraws {
            let raw = TangentPair {
                dict_dir: unit_direction(&mut rng, m, r),
                proj_dir: symmetrize(&unit_direction(&mut rng, r, r)),
            };
            let tangent = project_tangent(&inst.point, &raw);
            let plus = retract(&inst.point, &tangent, h)?;
            let minus = retract(&inst.point, &tangent, -h)?;
            let ep = obj.evaluate(plus.dict.matrix(), plus.proj.matrix())?;
            let em = obj.evaluate(minus.dict.matrix(), minus.proj.matrix())?;
            if !same_supports(&ep.codes, &eval.codes) || !same_supports(&em.codes, &eval.codes) {
                continue;
            }
            let fd = (ep.report.j_value - em.report.j_value) / (2.0 * h);
            let analytic =
                frob_dot(&riem.dict_dir, &tangent.dict_dir) + frob_dot(&riem.proj_dir, &tangent.proj_dir);
            report.riemannian = report.riemannian.max(relative_error(analytic, fd));
            done = true;
            break;
        }
        report.skipped += usize::from(!done);

        // code Jacobian of one sample
        let active: Vec<usize> = (0..x.ncols())
            .filter(|&j| !codes0.supports[j].is_empty())
            .collect();
        if active.is_empty() {
            continue;
        }
        let mut done = false;
        for _ in 0..=config.max_redraws {
            let j = active[rng.random_range(0..active.len())];
            let err = jacobian_probe(x.column(j).into_owned(), d, &inst.prior, h, &mut rng)?;
            if let Some(err) = err {
                report.jacobian = report.jacobian.max(err);
                done = true;
                break;
            }
        }
        report.skipped += usize::from(!done);
    }
    Ok(report)
}

/// Relative error of one Jacobian-vector product against central
/// differences, or `None` if the probe changed the support.
pub fn jacobian_probe(
    x: DVector<f64>,
    d: &DMatrix<f64>,
    prior: &ElasticNetPrior,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let (m, r) = d.shape();
    let dir = unit_direction(rng, m, r);
    let code = Encoder::new(d, *prior).encode(&x)?;
    let dp = d + &dir * h;
    let dm = d - &dir * h;
    let plus = Encoder::new(&dp, *prior).encode(&x)?;
    let minus = Encoder::new(&dm, *prior).encode(&x)?;
    if plus.support != code.support || minus.support != code.support {
        return Ok(None);
    }
    let fd = (plus.values - minus.values) / (2.0 * h);
    let analytic = code_jacobian_apply(&x, d, &code, &dir, prior)?;
    let scale = analytic.norm().max(fd.norm()).max(REL_FLOOR);
    Ok(Some((analytic - fd).norm() / scale))
}
