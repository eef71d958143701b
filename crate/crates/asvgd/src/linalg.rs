//! Dense symmetric positive definite factorization and solves.
//!
//! The kernel systems solved here are small (N up to a few thousand), so a
//! plain Cholesky factorization without pivoting or blocking is enough.

use ndarray::{Array2, ArrayView2};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Only the lower triangle of `a` is read. Returns `None` when a pivot is
/// non-positive or non-finite, which is the practical SPD test used across
/// the crate.
pub fn cholesky(a: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return None;
    }
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = l[i * n..i * n + j]
                .iter()
                .zip(&l[j * n..j * n + j])
                .map(|(x, y)| x * y)
                .sum();
            let s = a[(i, j)] - dot;
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(Array2::from_shape_vec((n, n), l).expect("square buffer"))
}

/// Solves `L Lᵀ X = B` for `X` given the lower Cholesky factor `L`.
///
/// `b` may have any number of columns; each is solved by forward then
/// backward substitution.
pub fn cholesky_solve(l: &Array2<f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = l.nrows();
    assert_eq!(n, b.nrows(), "factor and right-hand side disagree on n");
    let ls = l.as_slice().expect("factor is contiguous");
    let mut x = b.to_owned();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= ls[i * n + k] * x[(k, c)];
            }
            x[(i, c)] = s / ls[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= ls[k * n + i] * x[(k, c)];
            }
            x[(i, c)] = s / ls[i * n + i];
        }
    }
    x
}

/// Convenience check that `a` factors as SPD.
pub fn is_spd(a: ArrayView2<'_, f64>) -> bool {
    cholesky(a).is_some()
}

/// Maximum absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
