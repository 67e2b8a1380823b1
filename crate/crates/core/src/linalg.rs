//! Dense helpers for the handful of small symmetric systems the crate needs.

#![allow(clippy::needless_range_loop)]

use crate::{Error, Result, Scalar};

pub(crate) type Matrix<T> = Vec<Vec<T>>;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky<T: Scalar>(a: &[Vec<T>]) -> Result<Matrix<T>> {
    let n = a.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return Err(Error::invalid("matrix is not positive definite"));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub(crate) fn forward_sub<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub(crate) fn backward_sub<T: Scalar>(l: &[Vec<T>], y: &[T]) -> Vec<T> {
    let n = y.len();
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

pub(crate) fn chol_solve<T: Scalar>(l: &[Vec<T>], b: &[T]) -> Vec<T> {
    backward_sub(l, &forward_sub(l, b))
}

pub(crate) fn chol_logdet<T: Scalar>(l: &[Vec<T>]) -> T {
    let two = T::lit(2.0);
    l.iter().enumerate().map(|(i, row)| two * row[i].ln()).sum()
}

pub(crate) fn mat_vec<T: Scalar>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// `Aᵀ y` for `A` stored by rows.
pub(crate) fn mat_t_vec<T: Scalar>(a: &[Vec<T>], y: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for (row, &yi) in a.iter().zip(y) {
        for (o, &aij) in out.iter_mut().zip(row) {
            *o += aij * yi;
        }
    }
    out
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `A diag(d) Aᵀ + s·I` for `A` of shape rows × cols.
pub(crate) fn gram_plus_diag<T: Scalar>(a: &[Vec<T>], d: &[T], s: T) -> Matrix<T> {
    let n = a.len();
    let mut out = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut v = T::zero();
            for k in 0..d.len() {
                v += a[i][k] * d[k] * a[j][k];
            }
            if i == j {
                v += s;
            }
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// KL divergence between two full-covariance Gaussians, `KL(N(m0,S0) ‖ N(m1,S1))`.
pub(crate) fn gaussian_kl<T: Scalar>(
    m0: &[T],
    s0: &[Vec<T>],
    m1: &[T],
    s1: &[Vec<T>],
) -> Result<T> {
    let d = m0.len();
    let l0 = cholesky(s0)?;
    let l1 = cholesky(s1)?;
    // tr(S1⁻¹ S0) column by column
    let mut trace = T::zero();
    for j in 0..d {
        let col: Vec<T> = (0..d).map(|i| s0[i][j]).collect();
        trace += chol_solve(&l1, &col)[j];
    }
    let diff: Vec<T> = m1.iter().zip(m0).map(|(&a, &b)| a - b).collect();
    let w = forward_sub(&l1, &diff);
    let maha = dot(&w, &w);
    let half = T::lit(0.5);
    Ok(half * (trace + maha - T::from_usize_lossy(d) + chol_logdet(&l1) - chol_logdet(&l0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = vec![vec![4.0, 2.0, 0.4], vec![2.0, 3.0, 0.1], vec![0.4, 0.1, 1.5]];
        let l = cholesky(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-12);
            }
        }
        let b = [1.0, -2.0, 0.5];
        let x = chol_solve(&l, &b);
        let back = mat_vec(&a, &x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn univariate_kl() {
        // KL(N(1,2) ‖ N(0,3)) = ½(2/3 + 1/3 − 1 + ln 3 − ln 2)
        let kl = gaussian_kl(&[1.0], &[vec![2.0]], &[0.0], &[vec![3.0]]).unwrap();
        let want = 0.5 * (2.0f64 / 3.0 + 1.0 / 3.0 - 1.0 + 3.0f64.ln() - 2.0f64.ln());
        assert!((kl - want).abs() < 1e-14);
    }
}
