//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SparlowError};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Frobenius inner product `trace(A Bᵀ)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `trace(A B)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
///
/// Ties keep the solver's ordering, which is deterministic for identical input.
pub fn sorted_eigen(sym: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if sym.nrows() != sym.ncols() {
        return Err(SparlowError::Dimension(format!(
            "eigendecomposition of non-square {}×{} matrix",
            sym.nrows(),
            sym.ncols()
        )));
    }
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(SparlowError::Eigen("non-finite entries".into()));
    }
    let n = sym.nrows();
    let eig = SymmetricEigen::new(symmetrize(sym));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Orthonormal basis of the dominant `l`-dimensional eigenspace.
pub fn top_eigenvectors(sym: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
    let (_, vectors) = sorted_eigen(sym)?;
    if l > vectors.ncols() {
        return Err(SparlowError::Dimension(format!(
            "requested {l} eigenvectors of a {}×{} matrix",
            vectors.nrows(),
            vectors.ncols()
        )));
    }
    let mut basis = vectors.columns(0, l).into_owned();
    fix_column_signs(&mut basis);
    Ok(basis)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(sym)).eigenvalues.min()
}

/// Make each column's entry of largest magnitude positive (first index wins ties).
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col.len() > 0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Solve `K w = b` for symmetric positive definite `K`.
pub fn solve_spd(k: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    match k.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => k
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| SparlowError::Factorization("singular support system".into())),
    }
}

/// Squared Euclidean distances between all column pairs.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let d = (x.column(i) - x.column(j)).norm_squared();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Indices of the `k` nearest columns to column `i` among `candidates`
/// (ascending distance, ties broken by ascending index).
pub fn nearest_among(
    dists: &DMatrix<f64>,
    i: usize,
    candidates: impl Iterator<Item = usize>,
    k: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = candidates.filter(|&j| j != i).collect();
    pool.sort_by(|&a, &b| {
        dists[(i, a)]
            .partial_cmp(&dists[(i, b)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    pool.truncate(k);
    pool
}
