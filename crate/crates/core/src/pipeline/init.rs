//! Data-driven starting points: MOD dictionary learning and the trace-ratio
//! projector.

use std::collections::HashSet;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SparlowError};
use crate::graphs::LabelSet;
use crate::linalg::{top_eigenvectors, trace_of_product};
use crate::manifold::{Dictionary, Projector};
use crate::sparse::{batch_encode, ElasticNetPrior};

const MOD_RIDGE: f64 = 1e-8;
const RATIO_TOL: f64 = 1e-10;
const RATIO_MAX_ITERS: usize = 100;

/// Indices of the first occurrence of every distinct column.
fn distinct_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..x.ncols())
        .filter(|&j| seen.insert(x.column(j).iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .collect()
}

/// MOD dictionary learning result.
#[derive(Debug, Clone)]
pub struct DictionaryFit {
    pub dict: Dictionary,
    /// `‖X − DΦ‖_F` after each encoding pass.
    pub errors: Vec<f64>,
}

impl DictionaryFit {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.errors.windows(2).all(|w| w[1] <= w[0] + slack)
    }
}

/// Alternates elastic-net coding with the least-squares update
/// `D ← XΦᵀ(ΦΦᵀ + εI)⁻¹` and column normalization.
///
/// Atoms start as `r` random distinct data columns. An atom left unused by
/// every code is replaced by the worst-reconstructed sample.
pub fn init_dictionary(
    x: &DMatrix<f64>,
    r: usize,
    prior: &ElasticNetPrior,
    iters: usize,
    seed: u64,
) -> Result<DictionaryFit> {
    if r == 0 || iters == 0 {
        return Err(SparlowError::Validation(format!(
            "dictionary learning needs r ≥ 1 and iters ≥ 1, got r = {r}, iters = {iters}"
        )));
    }
    if r > x.ncols() {
        warn!("learning {r} atoms from only {} samples", x.ncols());
    }
    let mut pool = distinct_columns(x);
    if pool.len() < r {
        return Err(SparlowError::Seeding {
            wanted: r,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let seeds: Vec<_> = pool[..r].iter().map(|&j| x.column(j)).collect();
    let mut d = Dictionary::normalized(DMatrix::from_columns(&seeds))?.into_matrix();

    let mut errors = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let codes = batch_encode(x, &d, prior)?;
        let phi = &codes.codes;
        let resid = x - &d * phi;
        errors.push(resid.norm());

        let mut gram = phi * phi.transpose();
        for i in 0..r {
            gram[(i, i)] += MOD_RIDGE;
        }
        let rhs = x * phi.transpose();
        let inv = gram
            .cholesky()
            .ok_or_else(|| SparlowError::Factorization("MOD normal equations".into()))?
            .inverse();
        let mut next = rhs * inv;

        let mut worst: Vec<usize> = (0..x.ncols()).collect();
        let col_err: Vec<f64> = resid.column_iter().map(|c| c.norm_squared()).collect();
        worst.sort_by(|&a, &b| col_err[b].total_cmp(&col_err[a]).then(a.cmp(&b)));
        let mut replacements = worst.into_iter();
        for i in 0..r {
            if next.column(i).norm() <= 1e-12 {
                let j = replacements.next().expect("at least r samples");
                next.set_column(i, &x.column(j));
            }
        }
        d = Dictionary::normalized(next)?.into_matrix();
    }
    let final_codes = batch_encode(x, &d, prior)?;
    errors.push((x - &d * &final_codes.codes).norm());
    let fit = DictionaryFit {
        dict: Dictionary::new(d)?,
        errors,
    };
    if let Some(k) = fit.errors.windows(2).position(|w| w[1] > w[0] + 1e-10) {
        warn!(
            "dictionary reconstruction error rose from {:.6e} to {:.6e} at alternation {}",
            fit.errors[k],
            fit.errors[k + 1],
            k + 1
        );
    }
    Ok(fit)
}

/// Splits `r` atoms across classes in proportion to their sizes
/// (largest remainder, at least one atom per class).
pub fn class_atom_counts(counts: &[usize], r: usize) -> Result<Vec<usize>> {
    let c = counts.len();
    if c == 0 || r < c {
        return Err(SparlowError::Validation(format!(
            "cannot split {r} atoms across {c} classes"
        )));
    }
    let total: usize = counts.iter().sum();
    let spare = r - c;
    let shares: Vec<f64> = counts
        .iter()
        .map(|&k| spare as f64 * k as f64 / total as f64)
        .collect();
    let mut sizes: Vec<usize> = shares.iter().map(|s| 1 + s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &k in order.iter().take(r - assigned) {
        sizes[k] += 1;
    }
    Ok(sizes)
}

/// Per-class dictionaries concatenated in class order, plus the atom ranges.
pub fn init_class_dictionaries(
    x: &DMatrix<f64>,
    labels: &LabelSet,
    r: usize,
    prior: &ElasticNetPrior,
    iters: usize,
    seed: u64,
) -> Result<(DictionaryFit, Vec<std::ops::Range<usize>>)> {
    let sizes = class_atom_counts(&labels.class_counts(), r)?;
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut ranges = Vec::with_capacity(sizes.len());
    let mut errors = Vec::new();
    let mut start = 0;
    for (c, &size) in sizes.iter().enumerate() {
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels.class_index(i) == Some(c))
            .collect();
        let xc = x.select_columns(&members);
        let fit = init_dictionary(&xc, size, prior, iters, seed.wrapping_add(c as u64))?;
        if errors.is_empty() {
            errors = vec![0.0; fit.errors.len()];
        }
        for (acc, e) in errors.iter_mut().zip(&fit.errors) {
            *acc += e * e;
        }
        blocks.push(fit.dict.into_matrix());
        ranges.push(start..start + size);
        start += size;
    }
    let cols: Vec<_> = blocks.iter().flat_map(|b| b.column_iter()).collect();
    let dict = Dictionary::new(DMatrix::from_columns(&cols))?;
    Ok((
        DictionaryFit {
            dict,
            errors: errors.into_iter().map(f64::sqrt).collect(),
        },
        ranges,
    ))
}

/// Trace-ratio iteration result.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub proj: Projector,
    /// `λ` after every update.
    pub lambdas: Vec<f64>,
}

impl ProjectionFit {
    pub fn value(&self) -> f64 {
        *self.lambdas.last().expect("at least one λ")
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.lambdas.windows(2).all(|w| w[1] >= w[0] - slack)
    }
}

/// Maximizes `trace(PA) / (trace(PB) + σ)` by alternating
/// `λ ← trace(PA)/(trace(PB) + σ)` and `P ← top-l eigenspace of A − λB`,
/// starting from the top-`l` eigenspace of `A`.
pub fn init_projection(a: &DMatrix<f64>, b: &DMatrix<f64>, l: usize, sigma: f64) -> Result<ProjectionFit> {
    let r = a.nrows();
    if a.shape() != (r, r) || b.shape() != (r, r) {
        return Err(SparlowError::Dimension(
            "A and B must be square of equal size".into(),
        ));
    }
    if l == 0 || l >= r {
        return Err(SparlowError::Validation(format!("rank {l} outside 1..{r}")));
    }
    let ratio = |p: &DMatrix<f64>| -> Result<f64> {
        let den = trace_of_product(p, b) + sigma;
        if !(den > 0.0) {
            return Err(SparlowError::Guard(den));
        }
        Ok(trace_of_product(p, a) / den)
    };
    let mut proj = Projector::from_basis(&top_eigenvectors(a, l)?)?;
    let mut lambdas = vec![ratio(proj.matrix())?];
    for _ in 0..RATIO_MAX_ITERS {
        let lambda = *lambdas.last().unwrap();
        let candidate = Projector::from_basis(&top_eigenvectors(&(a - b * lambda), l)?)?;
        let next = ratio(candidate.matrix())?;
        if next < lambda {
            // eigen-solver rounding; keep the better projector
            break;
        }
        proj = candidate;
        lambdas.push(next);
        if (next - lambda).abs() <= RATIO_TOL {
            break;
        }
    }
    Ok(ProjectionFit { proj, lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn trace_ratio_examples() {
        let a = diag(&[4.0, 1.0, 0.0]);
        let fit = init_projection(&a, &DMatrix::identity(3, 3), 1, 0.0).unwrap();
        assert_abs_diff_eq!(fit.proj.matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.value(), 4.0, epsilon = 1e-12);

        let fit = init_projection(&a, &diag(&[1.0, 2.0, 1.0]), 1, 0.0).unwrap();
        assert_abs_diff_eq!(fit.proj.matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.value(), 4.0, epsilon = 1e-12);

        for l in 1..3 {
            let eye = DMatrix::identity(3, 3);
            let fit = init_projection(&eye, &eye, l, 1e-3).unwrap();
            assert_abs_diff_eq!(fit.value(), l as f64 / (l as f64 + 1e-3), epsilon = 1e-12);
            assert!(fit.proj.check(1e-12, 1e-10).is_ok());
        }
    }

    #[test]
    fn trace_ratio_is_monotone() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 6 + j) as f64 * 0.31).sin());
        let a = &a * a.transpose();
        let g = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j) as f64 * 0.57).cos());
        let b = &g * g.transpose() + DMatrix::identity(6, 6) * 0.1;
        let fit = init_projection(&a, &b, 2, 1e-3).unwrap();
        assert!(fit.is_monotone(0.0));
        assert!(fit.lambdas.len() > 1);
    }

    #[test]
    fn class_counts_split() {
        assert_eq!(class_atom_counts(&[100, 100, 100], 40).unwrap(), vec![14, 13, 13]);
        assert_eq!(class_atom_counts(&[1, 99], 2).unwrap(), vec![1, 1]);
        assert_eq!(
            class_atom_counts(&[10, 30], 10).unwrap().iter().sum::<usize>(),
            10
        );
        assert!(class_atom_counts(&[5, 5, 5], 2).is_err());
    }

    #[test]
    fn seeding_needs_distinct_columns() {
        let x = DMatrix::from_fn(2, 3, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let prior = ElasticNetPrior::new(0.1, 0.1).unwrap();
        assert!(matches!(
            init_dictionary(&x, 2, &prior, 1, 0),
            Err(SparlowError::Seeding {
                wanted: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn single_atom_is_dominant_direction() {
        let x = DMatrix::from_fn(3, 10, |i, j| {
            if i == 0 {
                1.0
            } else {
                0.1 * ((i * 10 + j) as f64).sin()
            }
        });
        let x = crate::pipeline::data::normalize_columns(x).unwrap();
        let prior = ElasticNetPrior::new(0.01, 1e-3).unwrap();
        let fit = init_dictionary(&x, 1, &prior, 20, 3).unwrap();
        let d = fit.dict.matrix().column(0).into_owned();
        let codes = batch_encode(&x, fit.dict.matrix(), &prior).unwrap();
        let ls = (&x * codes.codes.transpose()).column(0).normalize();
        assert!((d - ls).norm() < 1e-3);
    }

    #[test]
    fn orthonormal_data_is_a_fixed_point() {
        let x = DMatrix::identity(4, 4);
        let prior = ElasticNetPrior::new(0.1, 1e-3).unwrap();
        let fit = init_dictionary(&x, 4, &prior, 3, 7).unwrap();
        let c = fit.dict.matrix().tr_mul(&x);
        for i in 0..4 {
            let hits = c.row(i).iter().filter(|v| (v.abs() - 1.0).abs() < 1e-12).count();
            assert_eq!(hits, 1);
        }
        assert!(fit.is_monotone(1e-10));
    }
}
