//! Small dense helpers shared by the projection and dictionary code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_MAX_ITERS: usize = 10_000;

/// Flips `v` so its entry of largest magnitude is positive (ties: lowest
/// index). Returns the applied sign.
pub fn sign_normalize(v: &mut [f64]) -> f64 {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
        -1.0
    } else {
        1.0
    }
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and every eigenvector sign-normalized.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::invalid("eigendecomposition needs a square matrix"));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite entry in symmetric eigenproblem"));
    }
    // symmetrize away rounding noise from the caller's products
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| Error::numerical("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        sign_normalize(&mut col);
        vectors.set_column(dst, &DVector::from_vec(col));
    }
    Ok((values, vectors))
}

/// Scales every column to unit Euclidean norm; zero columns are left alone.
pub fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

/// Squared Euclidean distance with a fixed left-to-right summation order, so
/// `sq_dist(a, b) == sq_dist(b, a)` bit for bit.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squares that does not depend on the order of `values`.
pub fn order_free_sum_sq(values: impl Iterator<Item = f64>) -> f64 {
    let mut sq: Vec<f64> = values.map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    sq.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_rule() {
        let mut v = [0.1, -0.5, 0.5];
        assert_eq!(sign_normalize(&mut v), -1.0);
        assert_eq!(v, [-0.1, 0.5, -0.5]);
        let mut w = [0.2, -0.1];
        assert_eq!(sign_normalize(&mut w), 1.0);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sym_eigen_desc(&m).unwrap();
        assert_eq!(vals, vec![5.0, 2.0, -1.0]);
        assert_eq!(vecs[(1, 0)], 1.0);
        assert_eq!(vecs[(0, 1)], 1.0);
        assert_eq!(vecs[(2, 2)], 1.0);
    }

    #[test]
    fn order_free_sum() {
        let a = order_free_sum_sq([1e-8, 3.0, 1e8, 0.1].into_iter());
        let b = order_free_sum_sq([0.1, 1e8, 1e-8, 3.0].into_iter());
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
