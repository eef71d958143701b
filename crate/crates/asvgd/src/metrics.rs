//! KL diagnostics and per-step records for the comparison runs.
//!
//! The divergence to the target is estimated with a plug-in estimator: a
//! kernel density estimate of the particle cloud (isotropic Gaussian
//! mixture, Silverman bandwidth) evaluated at the particles themselves,
//! `KL ~ (1/N) sum_i [log rho_h(X_i) + f(X_i) + log Z]`. Absolute values
//! carry KDE bias and can go slightly negative; comparisons across samplers
//! use the same bandwidth rule so orderings are meaningful.

use ndarray::ArrayView2;

use crate::targets::Target;
use crate::{Error, Result};

/// Log-density of the particle mixture `(1/N) sum_i N(query; X_i, h^2 I)`.
///
/// Accumulated in log-sum-exp form; queries far from every particle give a
/// very negative but finite result.
pub fn kde_log_density(
    particles: ArrayView2<'_, f64>,
    bandwidth: f64,
    query: &[f64],
) -> Result<f64> {
    let (n, d) = (particles.nrows(), particles.ncols());
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "kde bandwidth must be positive, got {bandwidth}"
        )));
    }
    if n == 0 || query.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "kde over {n}x{d} particles with query of length {}",
            query.len()
        )));
    }
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut exponents = Vec::with_capacity(n);
    let mut max_e = f64::NEG_INFINITY;
    for row in particles.rows() {
        let d2: f64 = row
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let e = -d2 * inv;
        max_e = max_e.max(e);
        exponents.push(e);
    }
    let sum: f64 = exponents.iter().map(|e| (e - max_e).exp()).sum();
    let norm = (n as f64).ln()
        + d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln()
        + d as f64 * bandwidth.ln();
    Ok(max_e + sum.ln() - norm)
}

/// Silverman's rule `h = sigma_hat * (4 / ((d+2) N))^(1/(d+4))` with
/// `sigma_hat` the per-coordinate sample standard deviations averaged.
///
/// Returns the bandwidth and a flag that is true when the particles were
/// degenerate and the floor of 1e-6 was applied.
pub fn silverman_bandwidth(particles: ArrayView2<'_, f64>) -> Result<(f64, bool)> {
    let (n, d) = (particles.nrows(), particles.ncols());
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "silverman bandwidth needs at least 2 particles, got {n}"
        )));
    }
    let mut sigma_hat = 0.0;
    for col in particles.columns() {
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        sigma_hat += (ss / (n - 1) as f64).sqrt();
    }
    sigma_hat /= d as f64;
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    let h = sigma_hat * factor;
    if h < 1e-6 {
        Ok((1e-6, true))
    } else {
        Ok((h, false))
    }
}

/// Monte-Carlo KL estimate `(1/N) sum_i [log rho_h(X_i) + f(X_i) + log_z]`.
pub fn kl_estimate(
    particles: ArrayView2<'_, f64>,
    target: &Target,
    bandwidth: f64,
    log_z: f64,
) -> Result<f64> {
    let n = particles.nrows();
    if n == 0 {
        return Err(Error::InvalidConfig("kl estimate over empty ensemble".into()));
    }
    let mut total = 0.0;
    let mut query = vec![0.0; particles.ncols()];
    for row in particles.rows() {
        for (q, v) in query.iter_mut().zip(row.iter()) {
            *q = *v;
        }
        total += kde_log_density(particles, bandwidth, &query)? + target.potential(row) + log_z;
    }
    Ok(total / n as f64)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub kl_estimate: f64,
    pub mean: Vec<f64>,
    pub cov_trace: f64,
    /// Fraction of particles whose restart count was reset this step;
    /// zero for samplers without restarts.
    pub restart_fraction: f64,
    pub alpha_mean: f64,
}

/// Header matching [`StepRecord::csv_row`]: `step,kl,mean_0,...,mean_{d-1},
/// cov_trace,restart_fraction,alpha_mean`.
pub fn metrics_csv_header(dim: usize) -> String {
    let mut s = String::from("step,kl");
    for i in 0..dim {
        s.push_str(&format!(",mean_{i}"));
    }
    s.push_str(",cov_trace,restart_fraction,alpha_mean");
    s
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let mut s = format!("{},{}", self.step, self.kl_estimate);
        for m in &self.mean {
            s.push_str(&format!(",{m}"));
        }
        s.push_str(&format!(
            ",{},{},{}",
            self.cov_trace, self.restart_fraction, self.alpha_mean
        ));
        s
    }
}
