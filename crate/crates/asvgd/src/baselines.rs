//! Reference samplers the accelerated method is compared against: SVGD,
//! ULA, MALA, and underdamped Langevin dynamics.
//!
//! The stochastic steppers draw from the caller's generator in a canonical
//! order (particle-major, coordinate-minor; MALA draws each particle's
//! proposal normals before its acceptance uniform), so a fixed seed fully
//! determines a run.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::kernels::{gaussian_repulsion, kernel_matrix, KernelSpec};
use crate::targets::Target;
use crate::{Error, Result};

/// Shared knobs for baseline runs. `kernel` applies to SVGD only and
/// `friction` to ULD only.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub tau: f64,
    pub steps: usize,
    pub kernel: Option<KernelSpec>,
    pub friction: f64,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.friction.is_finite() && self.friction > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "friction must be positive, got {}",
                self.friction
            )));
        }
        if let Some(kernel) = &self.kernel {
            kernel.validate(dim)?;
        }
        Ok(())
    }
}

/// One deterministic SVGD step:
/// `X_i += (tau/N) sum_j [-K(X_j, X_i) grad_f(X_j) + grad_1 K(X_j, X_i)]`.
pub fn svgd_step(
    positions: &mut Array2<f64>,
    kernel: &KernelSpec,
    target: &Target,
    tau: f64,
) -> Result<()> {
    let n = positions.nrows() as f64;
    let k = kernel_matrix(kernel, positions.view())?;
    let grads = target.gradient_all(positions.view());
    let kg = k.dot(&grads);
    match kernel {
        KernelSpec::Gaussian { sigma2 } => {
            let rep = gaussian_repulsion(k.view(), positions.view());
            ndarray::Zip::from(positions)
                .and(&kg)
                .and(&rep)
                .for_each(|x, &drift, &r| *x += tau / n * (-drift + r / sigma2));
        }
        KernelSpec::Bilinear { a } => {
            // sum_j grad_1 K(X_j, X_i) = N A X_i, so the repulsion is tau X A.
            let xa = positions.dot(a);
            ndarray::Zip::from(positions)
                .and(&kg)
                .and(&xa)
                .for_each(|x, &drift, &r| *x += -tau / n * drift + tau * r);
        }
    }
    Ok(())
}

/// Unadjusted Langevin: `X <- X - tau grad_f(X) + sqrt(2 tau) xi`.
pub fn ula_step<R: Rng + ?Sized>(
    positions: &mut Array2<f64>,
    target: &Target,
    tau: f64,
    rng: &mut R,
) {
    let scale = (2.0 * tau).sqrt();
    for mut row in positions.rows_mut() {
        let g = target.gradient(row.view());
        for (c, x) in row.iter_mut().enumerate() {
            let xi: f64 = StandardNormal.sample(rng);
            *x += -tau * g[c] + scale * xi;
        }
    }
}

/// Log of the unnormalized MALA acceptance ratio for a move `from -> to`:
/// `-f(to) + f(from) + log q(from|to) - log q(to|from)` with
/// `log q(a|b) = -|a - b + tau grad_f(b)|^2 / (4 tau)`.
pub fn mala_log_ratio(
    target: &Target,
    tau: f64,
    from: ArrayView1<'_, f64>,
    to: ArrayView1<'_, f64>,
) -> f64 {
    let log_q = |a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>| {
        let gb = target.gradient(b);
        let mut ss = 0.0;
        for i in 0..a.len() {
            let r = a[i] - b[i] + tau * gb[i];
            ss += r * r;
        }
        -ss / (4.0 * tau)
    };
    target.potential(from) - target.potential(to) + log_q(from, to) - log_q(to, from)
}

/// Metropolis-adjusted Langevin step applied to each particle independently.
/// Returns the number of accepted proposals.
pub fn mala_step<R: Rng + ?Sized>(
    positions: &mut Array2<f64>,
    target: &Target,
    tau: f64,
    rng: &mut R,
) -> usize {
    let d = positions.ncols();
    let scale = (2.0 * tau).sqrt();
    let mut accepted = 0;
    let mut proposal = ndarray::Array1::zeros(d);
    for mut row in positions.rows_mut() {
        let g = target.gradient(row.view());
        for c in 0..d {
            let xi: f64 = StandardNormal.sample(rng);
            proposal[c] = row[c] - tau * g[c] + scale * xi;
        }
        let u: f64 = rng.gen();
        if u.ln() < mala_log_ratio(target, tau, row.view(), proposal.view()) {
            row.assign(&proposal);
            accepted += 1;
        }
    }
    accepted
}

/// Underdamped Langevin with unit mass, Euler-Maruyama discretized:
/// `X <- X + tau Vel`, then
/// `Vel <- Vel - tau (grad_f(X) + gamma Vel) + sqrt(2 gamma tau) xi`
/// with the gradient taken at the updated position.
pub fn uld_step<R: Rng + ?Sized>(
    positions: &mut Array2<f64>,
    velocities: &mut Array2<f64>,
    target: &Target,
    tau: f64,
    gamma: f64,
    rng: &mut R,
) {
    ndarray::Zip::from(&mut *positions)
        .and(&*velocities)
        .for_each(|x, &v| *x += tau * v);
    let scale = (2.0 * gamma * tau).sqrt();
    for (row, mut vel) in positions.rows().into_iter().zip(velocities.rows_mut()) {
        let g = target.gradient(row);
        for (c, v) in vel.iter_mut().enumerate() {
            let xi: f64 = StandardNormal.sample(rng);
            *v += -tau * (g[c] + gamma * *v) + scale * xi;
        }
    }
}
