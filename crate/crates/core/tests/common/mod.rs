#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sparlow::graphs::{scatter_matrices, LabelSet};
use sparlow::pipeline::data::Dataset;
use sparlow::pipeline::init::init_projection;

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Three classes in ℝ^m: separated means plus class-specific low-rank
/// covariance and isotropic noise. Returns train and test sets drawn from
/// the same mixture.
pub struct Mixture {
    means: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    noise: f64,
}

impl Mixture {
    pub fn new(m: usize, classes: usize, separation: f64, rank: usize, noise: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = gaussian(&mut rng, m, 1);
        let means = (0..classes)
            .map(|_| &base + gaussian(&mut rng, m, 1) * separation)
            .collect();
        let factors = (0..classes).map(|_| gaussian(&mut rng, m, rank)).collect();
        Mixture {
            means,
            factors,
            noise,
        }
    }

    pub fn sample(&self, per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.means[0].nrows();
        let c = self.means.len();
        let mut x = DMatrix::zeros(m, per_class * c);
        let mut labels = Vec::with_capacity(per_class * c);
        for j in 0..per_class * c {
            let k = j % c;
            let z = gaussian(&mut rng, self.factors[k].ncols(), 1);
            let col = &self.means[k] + &self.factors[k] * z + gaussian(&mut rng, m, 1) * self.noise;
            x.set_column(j, &col.column(0));
            labels.push(k as i64);
        }
        Dataset::new(x, Some(LabelSet::new(labels).unwrap())).unwrap()
    }
}

/// Trace-ratio LDA on the raw data; returns the `l×n` embeddings of `train`
/// and `test`.
pub fn raw_lda(train: &Dataset, test: &Dataset, l: usize, sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let labels = train.labels.as_ref().unwrap();
    let (lw, lb) = scatter_matrices(labels).unwrap();
    let x = &train.x;
    let a = x * lb * x.transpose();
    let b = x * lw * x.transpose();
    let fit = init_projection(&a, &b, l, sigma).unwrap();
    let u = fit.proj.basis().unwrap();
    (u.tr_mul(&train.x), u.tr_mul(&test.x))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Elastic-net minimizer by accelerated proximal gradient with adaptive
/// restart, run to a fixed point.
pub fn fista(x: &DVector<f64>, d: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> DVector<f64> {
    let r = d.ncols();
    let gram = d.tr_mul(d);
    let dtx = d.tr_mul(x);
    let lip = gram.symmetric_eigenvalues().max() + 2.0 * lambda2;
    let step = 1.0 / lip;
    let prox = |v: f64| {
        let t = lambda1 * step;
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        }
    };
    let value = |phi: &DVector<f64>| {
        0.5 * (x - d * phi).norm_squared() + lambda1 * phi.lp_norm(1) + lambda2 * phi.norm_squared()
    };
    let mut phi = DVector::zeros(r);
    let mut y = phi.clone();
    let mut theta = 1.0_f64;
    let mut last = value(&phi);
    for _ in 0..200_000 {
        let grad = &gram * &y - &dtx + &y * (2.0 * lambda2);
        let next = (&y - grad * step).map(prox);
        let v = value(&next);
        if v > last {
            theta = 1.0;
            y = phi.clone();
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &next + (&next - &phi) * ((theta - 1.0) / theta_next);
        let moved = (&next - &phi).norm();
        phi = next;
        theta = theta_next;
        last = v;
        if moved <= 1e-15 {
            break;
        }
    }
    phi
}

/// A small labeled problem: `m=10`, three classes of `per_class` samples.
pub fn small_dataset(per_class: usize, seed: u64) -> Dataset {
    Mixture::new(10, 3, 0.5, 2, 0.3, seed).sample(per_class, seed + 500)
}
