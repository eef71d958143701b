//! The two positive-definite kernels driving particle interaction.
//!
//! Both samplers evaluate kernels through [`KernelSpec`]: the generalized
//! bilinear kernel `K(x, y) = x'Ay + 1` and the Gaussian kernel
//! `K(x, y) = exp(-|x - y|^2 / (2 sigma^2))`. Gradients in the second
//! argument are never stored; by symmetry `grad2 K(x, y) = grad1 K(y, x)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::linalg;
use crate::{Error, Result};

/// Kernel choice plus its parameters.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    /// `K(x, y) = x'Ay + 1` with `A` symmetric positive definite.
    Bilinear { a: Array2<f64> },
    /// `K(x, y) = exp(-|x - y|^2 / (2 sigma2))` with `sigma2 > 0`.
    Gaussian { sigma2: f64 },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Bilinear { .. } => "bilinear",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }

    /// Checks parameter invariants against the ambient dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            KernelSpec::Bilinear { a } => {
                if a.nrows() != dim || a.ncols() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "kernel matrix A is {}x{}, expected {dim}x{dim}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                if linalg::asymmetry(a.view()) > 1e-9 || linalg::cholesky(a.view()).is_none() {
                    return Err(Error::NotSpd { name: "kernel matrix A".into() });
                }
            }
            KernelSpec::Gaussian { sigma2 } => {
                if !(sigma2.is_finite() && *sigma2 > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "gaussian kernel bandwidth sigma2 must be positive, got {sigma2}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_dims(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    spec.validate(x.len())
}

/// Squared Euclidean distance, accumulated per coordinate.
///
/// The direct form is kept (rather than expanding into norms and a dot
/// product) so near-coincident particles do not lose digits to cancellation.
fn dist2(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn kernel_eval(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(spec, x, y)?;
    Ok(match spec {
        KernelSpec::Bilinear { a } => x.dot(&a.dot(&y)) + 1.0,
        KernelSpec::Gaussian { sigma2 } => (-dist2(x, y) / (2.0 * sigma2)).exp(),
    })
}

/// Gradient of the kernel in its first argument.
pub fn kernel_grad1(
    spec: &KernelSpec,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    check_dims(spec, x, y)?;
    Ok(match spec {
        KernelSpec::Bilinear { a } => a.dot(&y),
        KernelSpec::Gaussian { sigma2 } => {
            let k = (-dist2(x, y) / (2.0 * sigma2)).exp();
            let mut g = Array1::zeros(x.len());
            for i in 0..x.len() {
                g[i] = -(x[i] - y[i]) / sigma2 * k;
            }
            g
        }
    })
}

/// Gradient in the second argument, derived from [`kernel_grad1`] by symmetry.
pub fn kernel_grad2(
    spec: &KernelSpec,
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    kernel_grad1(spec, y, x)
}

/// Dense kernel matrix `K[i, j] = K(X_i, X_j)`.
///
/// Each unordered pair is evaluated once and mirrored, so the result is
/// symmetric bit for bit.
pub fn kernel_matrix(spec: &KernelSpec, positions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = positions.nrows();
    spec.validate(positions.ncols())?;
    let mut k = Array2::<f64>::zeros((n, n));
    match spec {
        KernelSpec::Bilinear { a } => {
            // Rows of `ay` are A X_j, matching kernel_eval's x . (A y) order.
            let ay = positions.dot(&a.t());
            for i in 0..n {
                let xi = positions.row(i);
                for j in i..n {
                    let v = xi.dot(&ay.row(j)) + 1.0;
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
        }
        KernelSpec::Gaussian { sigma2 } => {
            let two_s2 = 2.0 * sigma2;
            for i in 0..n {
                k[(i, i)] = 1.0;
                for j in (i + 1)..n {
                    let v = (-dist2(positions.row(i), positions.row(j)) / two_s2).exp();
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
        }
    }
    Ok(k)
}

/// The Gaussian repulsion matrix `(diag(K 1) - K) X` shared by SVGD and the
/// accelerated momentum update.
pub fn gaussian_repulsion(k: ArrayView2<'_, f64>, positions: ArrayView2<'_, f64>) -> Array2<f64> {
    let row_sums: Array1<f64> = k.rows().into_iter().map(|r| r.sum()).collect();
    let mut out = k.dot(&positions);
    out *= -1.0;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let s = row_sums[i];
        for (c, p) in row.iter_mut().zip(positions.row(i).iter()) {
            *c += s * p;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2};

    fn fd_grad1(spec: &KernelSpec, x: &Array1<f64>, y: &Array1<f64>) -> Array1<f64> {
        let h = 1e-5;
        let mut g = Array1::zeros(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            g[i] = (kernel_eval(spec, xp.view(), y.view()).unwrap()
                - kernel_eval(spec, xm.view(), y.view()).unwrap())
                / (2.0 * h);
        }
        g
    }

    // Small deterministic generator so tests need no seeding boilerplate.
    struct XorShift(u64);
    impl XorShift {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        }
    }

    #[test]
    fn gaussian_eval_values() {
        let spec = KernelSpec::Gaussian { sigma2: 0.01 };
        let x = arr1(&[0.3, -0.7]);
        assert_eq!(kernel_eval(&spec, x.view(), x.view()).unwrap(), 1.0);
        // |x - y|^2 = 0.02 makes the exponent exactly -1.
        let y = arr1(&[0.4, -0.6]);
        assert_relative_eq!(
            kernel_eval(&spec, x.view(), y.view()).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn bilinear_eval_identity_matrix() {
        let spec = KernelSpec::Bilinear { a: Array2::eye(2) };
        let x = arr1(&[1.0, 1.0]);
        assert_eq!(kernel_eval(&spec, x.view(), x.view()).unwrap(), 3.0);
    }

    #[test]
    fn bilinear_grad_ignores_x() {
        let spec = KernelSpec::Bilinear {
            a: arr2(&[[2.0, 0.0], [0.0, 3.0]]),
        };
        let y = arr1(&[1.0, 1.0]);
        for x in [arr1(&[0.0, 0.0]), arr1(&[5.0, -1.0])] {
            let g = kernel_grad1(&spec, x.view(), y.view()).unwrap();
            assert_eq!(g.as_slice().unwrap(), &[2.0, 3.0]);
        }
    }

    #[test]
    fn gaussian_grad_zero_at_coincidence() {
        let spec = KernelSpec::Gaussian { sigma2: 0.5 };
        let x = arr1(&[0.2, 0.9]);
        let g = kernel_grad1(&spec, x.view(), x.view()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grads_match_finite_differences() {
        let specs = [
            KernelSpec::Gaussian { sigma2: 0.01 },
            KernelSpec::Gaussian { sigma2: 1.3 },
            KernelSpec::Bilinear {
                a: arr2(&[[1.5, 0.4], [0.4, 0.9]]),
            },
        ];
        let mut rng = XorShift(0x1234_5678_9abc_def0);
        for spec in &specs {
            for _ in 0..100 {
                let x = arr1(&[rng.next_f64(), rng.next_f64()]);
                let y = arr1(&[rng.next_f64(), rng.next_f64()]);
                let g = kernel_grad1(spec, x.view(), y.view()).unwrap();
                let fd = fd_grad1(spec, &x, &y);
                let scale = fd.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                for i in 0..2 {
                    assert!(
                        (g[i] - fd[i]).abs() / scale <= 1e-5,
                        "{} grad mismatch: {g} vs {fd}",
                        spec.name()
                    );
                }
            }
        }
    }

    #[test]
    fn grad2_is_grad1_with_swapped_arguments() {
        let spec = KernelSpec::Gaussian { sigma2: 0.7 };
        let x = arr1(&[1.0, -0.5]);
        let y = arr1(&[0.3, 0.8]);
        let g2 = kernel_grad2(&spec, x.view(), y.view()).unwrap();
        let g1 = kernel_grad1(&spec, y.view(), x.view()).unwrap();
        assert_eq!(g2, g1);
    }

    #[test]
    fn bilinear_matrix_hand_example() {
        let spec = KernelSpec::Bilinear { a: Array2::eye(2) };
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let k = kernel_matrix(&spec, x.view()).unwrap();
        assert_eq!(k, arr2(&[[2.0, 1.0], [1.0, 2.0]]));
    }

    #[test]
    fn matrix_is_bit_symmetric_and_matches_eval() {
        let mut rng = XorShift(99);
        let mut x = Array2::<f64>::zeros((17, 2));
        for v in x.iter_mut() {
            *v = rng.next_f64();
        }
        for spec in [
            KernelSpec::Gaussian { sigma2: 0.01 },
            KernelSpec::Bilinear {
                a: arr2(&[[2.0, 1.0], [1.0, 2.0]]),
            },
        ] {
            let k = kernel_matrix(&spec, x.view()).unwrap();
            for i in 0..17 {
                for j in 0..17 {
                    assert_eq!(k[(i, j)], k[(j, i)]);
                    let direct = kernel_eval(&spec, x.row(i), x.row(j)).unwrap();
                    if i <= j {
                        assert_eq!(k[(i, j)], direct);
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_matrix_diag_ones_entries_in_unit_interval() {
        let mut rng = XorShift(7);
        let mut x = Array2::<f64>::zeros((25, 2));
        for v in x.iter_mut() {
            // Keep the cloud tight so no pair underflows exp to zero.
            *v = (rng.next_f64() + 2.0) / 8.0;
        }
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.01 }, x.view()).unwrap();
        for i in 0..25 {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..25 {
                assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn regularized_gaussian_matrix_is_spd() {
        let mut rng = XorShift(44);
        let mut x = Array2::<f64>::zeros((60, 2));
        for v in x.iter_mut() {
            *v = rng.next_f64();
        }
        let mut k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.01 }, x.view()).unwrap();
        for i in 0..60 {
            k[(i, i)] += 0.1;
        }
        assert!(linalg::cholesky(k.view()).is_some());
    }

    #[test]
    fn repulsion_matches_brute_force() {
        let mut rng = XorShift(3);
        let mut x = Array2::<f64>::zeros((9, 2));
        for v in x.iter_mut() {
            *v = rng.next_f64();
        }
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.3 }, x.view()).unwrap();
        let rep = gaussian_repulsion(k.view(), x.view());
        for i in 0..9 {
            for c in 0..2 {
                let mut want = 0.0;
                for j in 0..9 {
                    want += k[(i, j)] * (x[(i, c)] - x[(j, c)]);
                }
                assert_relative_eq!(rep[(i, c)], want, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::Gaussian { sigma2: 0.0 }.validate(2).is_err());
        assert!(KernelSpec::Gaussian { sigma2: -1.0 }.validate(2).is_err());
        let asym = KernelSpec::Bilinear {
            a: arr2(&[[1.0, 0.5], [0.0, 1.0]]),
        };
        assert!(asym.validate(2).is_err());
        let indefinite = KernelSpec::Bilinear {
            a: arr2(&[[1.0, 2.0], [2.0, 1.0]]),
        };
        assert!(indefinite.validate(2).is_err());
        let wrong_dim = KernelSpec::Bilinear { a: Array2::eye(3) };
        assert!(wrong_dim.validate(2).is_err());
    }
}
