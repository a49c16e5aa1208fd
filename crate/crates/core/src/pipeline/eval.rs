//! Embedding, nearest-neighbor evaluation and feature export.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, SparlowError};
use crate::pipeline::data::write_csv_rows;
use crate::pipeline::model::Model;
use crate::sparse::batch_encode;

/// `UᵀΦ` for the codes of `x` under the model dictionary.
pub fn embed(model: &Model, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let codes = batch_encode(x, model.dict.matrix(), &model.prior)?;
    Ok(model.basis.tr_mul(&codes.codes))
}

/// Fraction of test columns whose nearest training column (Euclidean,
/// lowest index on ties) carries the same label. Unlabeled (`-1`) entries
/// are skipped on both sides.
pub fn evaluate_1nn(
    train: &DMatrix<f64>,
    train_labels: &[i64],
    test: &DMatrix<f64>,
    test_labels: &[i64],
) -> Result<f64> {
    if train.ncols() != train_labels.len() || test.ncols() != test_labels.len() {
        return Err(SparlowError::Dimension(
            "embeddings and labels differ in length".into(),
        ));
    }
    if train.nrows() != test.nrows() {
        return Err(SparlowError::Dimension(format!(
            "training embedding has {} rows, test embedding {}",
            train.nrows(),
            test.nrows()
        )));
    }
    let refs: Vec<usize> = (0..train.ncols()).filter(|&j| train_labels[j] >= 0).collect();
    let queries: Vec<usize> = (0..test.ncols()).filter(|&j| test_labels[j] >= 0).collect();
    if refs.is_empty() || queries.is_empty() {
        return Err(SparlowError::Validation(
            "1NN needs labeled training and test samples".into(),
        ));
    }
    let hits: usize = queries
        .par_iter()
        .map(|&q| {
            let y = test.column(q);
            let mut best = (f64::INFINITY, usize::MAX);
            for &j in &refs {
                let d = (train.column(j) - y).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            usize::from(train_labels[best.1] == test_labels[q])
        })
        .sum();
    Ok(hits as f64 / queries.len() as f64)
}

/// `[Du₁ … Du_l]`, an `m×l` matrix.
pub fn feature_matrix(model: &Model) -> DMatrix<f64> {
    model.dict.matrix() * &model.basis
}

/// Writes [`feature_matrix`] as CSV, one row per input dimension.
pub fn export_features(model: &Model, out: &Path) -> Result<()> {
    write_csv_rows(out, &feature_matrix(model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn self_match_is_perfect() {
        let e = DMatrix::from_fn(2, 6, |i, j| (i * 6 + j) as f64);
        let l = [0, 1, 2, 0, 1, 2];
        assert_eq!(evaluate_1nn(&e, &l, &e, &l).unwrap(), 1.0);
    }

    #[test]
    fn single_reference() {
        let train = dmatrix![0.0];
        let test = dmatrix![1.0, -3.0, 7.0];
        assert_eq!(evaluate_1nn(&train, &[4], &test, &[4, 4, 1]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let train = dmatrix![-1.0, 1.0];
        let test = dmatrix![0.0];
        assert_eq!(evaluate_1nn(&train, &[5, 6], &test, &[5]).unwrap(), 1.0);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let e = dmatrix![0.0];
        assert!(evaluate_1nn(&e, &[-1], &e, &[0]).is_err());
    }
}
