//! The accelerated stepper: position update, regularized density-momentum
//! solve, restart-driven damping, and the kernel-specific momentum updates.
//!
//! One step advances the ensemble as
//!
//! 1. `X += sqrt(tau) * Y`
//! 2. `V = N (K + eps I)^{-1} Y` by Cholesky, with a checked residual
//! 3. restarts (adaptive mode): per-particle speed restart, then the
//!    ensemble-wide gradient restart (Gaussian kernel only)
//! 4. `Y <- alpha . Y - (sqrt(tau)/N) K grad f + interaction`
//!
//! where the interaction is `(sqrt(tau)/(N sigma^2)) (diag(K 1) - K) X` for
//! the Gaussian kernel and `sqrt(tau) (1 + tr(V_new' K V_lag)/N^2) X A` for
//! the bilinear one. In the Gaussian update the two V-quadratic Hadamard
//! terms of the auxiliary matrix W are the same matrix and cancel exactly
//! (see `w_matrix_collapses_to_nk` below), so W never appears explicitly.
//!
//! The damping weight of particle i is `alpha_i = (c_i - 1)/(c_i + 2)` from
//! its restart count, or a constant beta; constant mode skips the restart
//! logic entirely. Epsilon regularizes only the V solve, not the Y update.

use ndarray::{Array2, ArrayView2};

use crate::ensemble::{init_ensemble, Ensemble, InitSpec};
use crate::kernels::{gaussian_repulsion, kernel_matrix, KernelSpec};
use crate::linalg;
use crate::targets::Target;
use crate::{Error, Result};

/// Momentum damping policy.
#[derive(Debug, Clone)]
pub enum Damping {
    /// Per-particle speed restart plus ensemble gradient restart.
    AdaptiveRestart,
    /// Fixed `alpha = beta` for every particle, restarts disabled.
    Constant { beta: f64 },
}

/// Which V enters the bilinear trace term `tr(V_new' K V_lag)`.
///
/// The accelerated update pairs the fresh V with the previous step's V
/// (`Mixed`); `Current` closes the loop with `V_new` on both sides instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLag {
    Mixed,
    Current,
}

#[derive(Debug, Clone)]
pub struct AsvgdConfig {
    pub kernel: KernelSpec,
    pub tau: f64,
    pub eps: f64,
    pub damping: Damping,
    pub steps: usize,
    pub bilinear_trace_lag: TraceLag,
}

impl AsvgdConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.kernel.validate(dim)?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularization eps must be nonnegative, got {}",
                self.eps
            )));
        }
        if let Damping::Constant { beta } = self.damping {
            if !(beta.is_finite() && 0.0 < beta && beta < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "constant damping beta must lie in (0, 1), got {beta}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step diagnostics handed to run hooks and kept in the [`RunRecord`].
#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: usize,
    /// Fraction of particles whose restart count was reset this step.
    pub restart_fraction: f64,
    pub alpha_mean: f64,
    pub solve_residual: f64,
    pub solve_rhs_norm: f64,
}

#[derive(Debug)]
pub struct RunRecord {
    pub ensemble: Ensemble,
    pub stats: Vec<StepStats>,
}

/// `X += sqrt(tau) Y`, retaining the old positions in `prev_positions`.
pub fn position_step(e: &mut Ensemble, tau: f64) {
    let st = tau.sqrt();
    std::mem::swap(&mut e.positions, &mut e.prev_positions);
    ndarray::Zip::from(&mut e.positions)
        .and(&e.prev_positions)
        .and(&e.momenta)
        .for_each(|x, &p, &y| *x = p + st * y);
}

/// Result of the regularized momentum solve `(K + eps I) V = N Y`.
#[derive(Debug)]
pub struct DensitySolve {
    pub density_momenta: Array2<f64>,
    /// `|(K + eps I) V - N Y|_F` after the solve.
    pub residual: f64,
    /// `|N Y|_F`, the scale the residual bound is relative to.
    pub rhs_norm: f64,
}

fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `(K + eps I) V = N Y` by Cholesky and enforces the residual
/// contract `|residual| <= 1e-8 max(1, |N Y|_F)`, refining once if needed.
pub fn density_momentum_update(
    e: &Ensemble,
    k: ArrayView2<'_, f64>,
    eps: f64,
) -> Result<DensitySolve> {
    let n = e.count();
    let mut system = k.to_owned();
    for i in 0..n {
        system[(i, i)] += eps;
    }
    let chol = linalg::cholesky(system.view()).ok_or_else(|| Error::Numerical {
        step: e.step_index,
        reason: "kernel system K + eps*I is not positive definite; increase eps \
                 (the Wasserstein regularization) to handle coincident particles"
            .into(),
    })?;
    let rhs = &e.momenta * n as f64;
    let mut v = linalg::cholesky_solve(&chol, rhs.view());
    let rhs_norm = frobenius(rhs.view());
    let bound = 1e-8 * rhs_norm.max(1.0);

    let mut gap = &system.dot(&v) - &rhs;
    let mut residual = frobenius(gap.view());
    if residual > bound {
        let correction = linalg::cholesky_solve(&chol, gap.view());
        v -= &correction;
        gap = &system.dot(&v) - &rhs;
        residual = frobenius(gap.view());
        if residual > bound {
            return Err(Error::Numerical {
                step: e.step_index,
                reason: format!(
                    "momentum solve residual {residual:e} exceeds bound {bound:e}"
                ),
            });
        }
    }
    Ok(DensitySolve {
        density_momenta: v,
        residual,
        rhs_norm,
    })
}

/// Per-particle speed restart: reset the count to 1 when the displacement
/// just made is strictly shorter than the previous one, else increment.
/// Returns how many particles were reset.
pub fn speed_restart(
    positions: ArrayView2<'_, f64>,
    prev_positions: ArrayView2<'_, f64>,
    prev2_positions: ArrayView2<'_, f64>,
    counts: &mut [u32],
) -> usize {
    let mut resets = 0;
    for (i, count) in counts.iter_mut().enumerate() {
        let new_sq: f64 = positions
            .row(i)
            .iter()
            .zip(prev_positions.row(i).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let old_sq: f64 = prev_positions
            .row(i)
            .iter()
            .zip(prev2_positions.row(i).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if new_sq.sqrt() < old_sq.sqrt() {
            *count = 1;
            resets += 1;
        } else {
            *count += 1;
        }
    }
    resets
}

/// The ensemble restart statistic
/// `tr(V' (K grad_f + (K - diag(K 1)) X))`.
///
/// Proportional to the rate of energy change along the flow; the stepper
/// resets every restart count when it is strictly positive.
pub fn gradient_restart_stat(
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    grads: ArrayView2<'_, f64>,
    positions: ArrayView2<'_, f64>,
) -> f64 {
    let kg = k.dot(&grads);
    let rep = gaussian_repulsion(k, positions);
    let mut stat = 0.0;
    for ((vi, ki), ri) in v.iter().zip(kg.iter()).zip(rep.iter()) {
        stat += vi * (ki - ri);
    }
    stat
}

/// Damping weights from restart counts: `(c - 1)/(c + 2)` per particle in
/// adaptive mode, `beta` everywhere in constant mode.
pub fn damping_values(counts: &[u32], mode: &Damping) -> Vec<f64> {
    match mode {
        Damping::AdaptiveRestart => counts
            .iter()
            .map(|&c| (c as f64 - 1.0) / (c as f64 + 2.0))
            .collect(),
        Damping::Constant { beta } => vec![*beta; counts.len()],
    }
}

/// Gaussian-kernel momentum update
/// `Y <- alpha . Y - (sqrt(tau)/N) K G + (sqrt(tau)/(N sigma2)) (diag(K 1) - K) X`.
pub fn momentum_step_gaussian(
    momenta: &mut Array2<f64>,
    alpha: &[f64],
    k: ArrayView2<'_, f64>,
    grads: ArrayView2<'_, f64>,
    positions: ArrayView2<'_, f64>,
    sigma2: f64,
    tau: f64,
) {
    let n = momenta.nrows() as f64;
    let st = tau.sqrt();
    let kg = k.dot(&grads);
    let rep = gaussian_repulsion(k, positions);
    for (i, mut row) in momenta.rows_mut().into_iter().enumerate() {
        for (c, y) in row.iter_mut().enumerate() {
            *y = alpha[i] * *y - st / n * kg[(i, c)] + st / (n * sigma2) * rep[(i, c)];
        }
    }
}

/// Bilinear-kernel momentum update
/// `Y <- alpha . Y - (sqrt(tau)/N) K G + sqrt(tau) (1 + tr(V_new' K V_lag)/N^2) X A`.
#[allow(clippy::too_many_arguments)]
pub fn momentum_step_bilinear(
    momenta: &mut Array2<f64>,
    alpha: &[f64],
    k: ArrayView2<'_, f64>,
    grads: ArrayView2<'_, f64>,
    positions: ArrayView2<'_, f64>,
    a: &Array2<f64>,
    v_new: ArrayView2<'_, f64>,
    v_lag: ArrayView2<'_, f64>,
    tau: f64,
) {
    let n = momenta.nrows() as f64;
    let st = tau.sqrt();
    let kg = k.dot(&grads);
    let kv = k.dot(&v_lag);
    let trace: f64 = v_new.iter().zip(kv.iter()).map(|(a, b)| a * b).sum();
    let scale = st * (1.0 + trace / (n * n));
    let xa = positions.dot(a);
    for (i, mut row) in momenta.rows_mut().into_iter().enumerate() {
        for (c, y) in row.iter_mut().enumerate() {
            *y = alpha[i] * *y - st / n * kg[(i, c)] + scale * xa[(i, c)];
        }
    }
}

/// Runs `config.steps` accelerated steps from a fresh ensemble drawn per
/// `init`. The hook fires after every completed step.
pub fn asvgd_run(
    config: &AsvgdConfig,
    target: &Target,
    init: &InitSpec,
    hook: impl FnMut(&Ensemble, &StepStats),
) -> Result<RunRecord> {
    let ensemble = init_ensemble(init)?;
    asvgd_run_from(config, ensemble, target, hook)
}

/// Runs `config.steps` accelerated steps from an existing ensemble, so
/// several samplers can share one initial particle draw.
pub fn asvgd_run_from(
    config: &AsvgdConfig,
    mut e: Ensemble,
    target: &Target,
    mut hook: impl FnMut(&Ensemble, &StepStats),
) -> Result<RunRecord> {
    let (n, d) = (e.count(), e.dim());
    config.validate(d)?;
    if target.dim != d {
        return Err(Error::DimensionMismatch(format!(
            "target '{}' has dimension {}, ensemble has {d}",
            target.name, target.dim
        )));
    }

    let mut stats = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let prev2 = e.prev_positions.clone();
        position_step(&mut e, config.tau);
        e.step_index += 1;

        let k = kernel_matrix(&config.kernel, e.positions.view())?;
        let grads = target.gradient_all(e.positions.view());
        let solve = density_momentum_update(&e, k.view(), config.eps)?;

        let mut resets = 0usize;
        if matches!(config.damping, Damping::AdaptiveRestart) {
            resets = speed_restart(
                e.positions.view(),
                e.prev_positions.view(),
                prev2.view(),
                &mut e.restart_counts,
            );
            if matches!(config.kernel, KernelSpec::Gaussian { .. }) {
                let stat = gradient_restart_stat(
                    k.view(),
                    solve.density_momenta.view(),
                    grads.view(),
                    e.positions.view(),
                );
                if stat > 0.0 {
                    e.restart_counts.iter_mut().for_each(|c| *c = 1);
                    resets = n;
                }
            }
        }
        let alpha = damping_values(&e.restart_counts, &config.damping);

        match &config.kernel {
            KernelSpec::Gaussian { sigma2 } => momentum_step_gaussian(
                &mut e.momenta,
                &alpha,
                k.view(),
                grads.view(),
                e.positions.view(),
                *sigma2,
                config.tau,
            ),
            KernelSpec::Bilinear { a } => {
                let v_lag = match config.bilinear_trace_lag {
                    TraceLag::Mixed => e.density_momenta.view(),
                    TraceLag::Current => solve.density_momenta.view(),
                };
                momentum_step_bilinear(
                    &mut e.momenta,
                    &alpha,
                    k.view(),
                    grads.view(),
                    e.positions.view(),
                    a,
                    solve.density_momenta.view(),
                    v_lag,
                    config.tau,
                );
            }
        }
        e.density_momenta = solve.density_momenta;

        if !e.is_finite() {
            return Err(Error::Numerical {
                step: e.step_index,
                reason: "positions or momenta became non-finite".into(),
            });
        }

        let step_stats = StepStats {
            step: e.step_index,
            restart_fraction: resets as f64 / n as f64,
            alpha_mean: alpha.iter().sum::<f64>() / n as f64,
            solve_residual: solve.residual,
            solve_rhs_norm: solve.rhs_norm,
        };
        hook(&e, &step_stats);
        stats.push(step_stats);
    }
    Ok(RunRecord { ensemble: e, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::gaussian_target;
    use approx::assert_relative_eq;
    use ndarray::{arr2, Array1};

    fn blank_ensemble(positions: Array2<f64>) -> Ensemble {
        let n = positions.nrows();
        let d = positions.ncols();
        Ensemble {
            prev_positions: positions.clone(),
            momenta: Array2::zeros((n, d)),
            density_momenta: Array2::zeros((n, d)),
            restart_counts: vec![1; n],
            step_index: 0,
            positions,
        }
    }

    #[test]
    fn position_step_hand_values() {
        let mut e = blank_ensemble(arr2(&[[1.0, 2.0]]));
        position_step(&mut e, 0.1);
        assert_eq!(e.positions, arr2(&[[1.0, 2.0]]));

        e.momenta = arr2(&[[1.0, 0.0]]);
        position_step(&mut e, 0.04);
        assert_eq!(e.positions, arr2(&[[1.2, 2.0]]));
        assert_eq!(e.prev_positions, arr2(&[[1.0, 2.0]]));
        assert_eq!(e.restart_counts, vec![1]);
        assert_eq!(e.step_index, 0);
    }

    #[test]
    fn density_solve_identity_kernel() {
        let mut e = blank_ensemble(arr2(&[[0.0, 0.0], [1.0, 1.0]]));
        e.momenta = arr2(&[[1.0, -2.0], [0.5, 3.0]]);
        let solve = density_momentum_update(&e, Array2::eye(2).view(), 0.0).unwrap();
        assert_eq!(solve.density_momenta, &e.momenta * 2.0);
        assert!(solve.residual <= 1e-8 * solve.rhs_norm.max(1.0));
    }

    #[test]
    fn density_solve_single_particle_regularized() {
        let mut e = blank_ensemble(arr2(&[[0.3, -0.1]]));
        e.momenta = arr2(&[[2.0, -4.0]]);
        let k = arr2(&[[1.0]]);
        let solve = density_momentum_update(&e, k.view(), 0.1).unwrap();
        assert_relative_eq!(solve.density_momenta[(0, 0)], 2.0 / 1.1, max_relative = 1e-15);
        assert_relative_eq!(solve.density_momenta[(0, 1)], -4.0 / 1.1, max_relative = 1e-15);
    }

    #[test]
    fn density_solve_zero_momenta() {
        let e = blank_ensemble(arr2(&[[0.0, 0.0], [1.0, 1.0]]));
        let k = arr2(&[[1.0, 0.5], [0.5, 1.0]]);
        let solve = density_momentum_update(&e, k.view(), 0.1).unwrap();
        assert!(solve.density_momenta.iter().all(|&v| v == 0.0));
        assert_eq!(solve.rhs_norm, 0.0);
    }

    #[test]
    fn density_solve_coincident_unregularized_fails() {
        // Two coincident particles make the Gaussian Gram matrix singular.
        let e = blank_ensemble(arr2(&[[1.0, 1.0], [1.0, 1.0]]));
        let k = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let err = density_momentum_update(&e, k.view(), 0.0).unwrap_err();
        assert!(err.to_string().contains("eps"), "{err}");
        assert!(density_momentum_update(&e, k.view(), 0.1).is_ok());
    }

    #[test]
    fn speed_restart_cases() {
        // Particle 0 slows down (0.5 then 0.3), particle 1 holds speed,
        // particle 2 starts from rest (prev == prev2).
        let prev2 = arr2(&[[0.0, 0.0], [0.0, 0.0], [4.0, 0.0]]);
        let prev = arr2(&[[0.5, 0.0], [0.3, 0.0], [4.0, 0.0]]);
        let pos = arr2(&[[0.8, 0.0], [0.6, 0.0], [4.2, 0.0]]);
        let mut counts = vec![5, 5, 5];
        let resets = speed_restart(pos.view(), prev.view(), prev2.view(), &mut counts);
        assert_eq!(counts, vec![1, 6, 6]);
        assert_eq!(resets, 1);
    }

    #[test]
    fn gradient_restart_stat_zero_v() {
        let k = arr2(&[[1.0, 0.2], [0.2, 1.0]]);
        let v = Array2::zeros((2, 2));
        let g = arr2(&[[1.0, 1.0], [2.0, -1.0]]);
        let x = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(gradient_restart_stat(k.view(), v.view(), g.view(), x.view()), 0.0);
    }

    #[test]
    fn gradient_restart_stat_single_particle() {
        // N=1: the X-term vanishes and the statistic is <V, grad f>.
        let k = arr2(&[[1.0]]);
        let v = arr2(&[[0.7, -0.2]]);
        let g = arr2(&[[2.0, 3.0]]);
        let x = arr2(&[[5.0, -5.0]]);
        let stat = gradient_restart_stat(k.view(), v.view(), g.view(), x.view());
        assert_relative_eq!(stat, 0.7 * 2.0 - 0.2 * 3.0, max_relative = 1e-15);
    }

    #[test]
    fn gradient_restart_stat_matches_double_sum() {
        struct XorShift(u64);
        impl XorShift {
            fn next_f64(&mut self) -> f64 {
                self.0 ^= self.0 << 13;
                self.0 ^= self.0 >> 7;
                self.0 ^= self.0 << 17;
                (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            }
        }
        let mut rng = XorShift(0xfeed_1234);
        let mut fill = |shape: (usize, usize)| {
            let mut m = Array2::<f64>::zeros(shape);
            for v in m.iter_mut() {
                *v = rng.next_f64();
            }
            m
        };
        let x = fill((5, 2));
        let v = fill((5, 2));
        let g = fill((5, 2));
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.5 }, x.view()).unwrap();

        let stat = gradient_restart_stat(k.view(), v.view(), g.view(), x.view());
        let mut brute = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let mut inner = 0.0;
                for c in 0..2 {
                    inner += v[(j, c)] * (g[(i, c)] + x[(i, c)] - x[(j, c)]);
                }
                brute += k[(i, j)] * inner;
            }
        }
        assert_relative_eq!(stat, brute, max_relative = 1e-10);
    }

    #[test]
    fn damping_value_table() {
        assert_eq!(damping_values(&[1], &Damping::AdaptiveRestart), vec![0.0]);
        assert_eq!(damping_values(&[4], &Damping::AdaptiveRestart), vec![0.5]);
        let constant = damping_values(&[1, 4, 9], &Damping::Constant { beta: 0.985 });
        assert_eq!(constant, vec![0.985; 3]);
    }

    #[test]
    fn w_matrix_collapses_to_nk() {
        // The expanded interaction matrix W = N K + (K V V') o K - K o (K V V')
        // contains the same Hadamard product twice with opposite signs, so
        // W reduces to N K for every V; the update therefore never forms it.
        let x = arr2(&[[0.1, 0.4], [-0.3, 0.2], [0.9, -0.5]]);
        let v = arr2(&[[1.0, 2.0], [-1.5, 0.5], [0.25, -3.0]]);
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.7 }, x.view()).unwrap();
        let kvv = k.dot(&v).dot(&v.t());
        let first = &kvv * &k;
        let second = &k * &kvv;
        assert_eq!(first, second);
        let w = 3.0 * &k + &first - &second;
        for (wij, kij) in w.iter().zip(k.iter()) {
            assert_relative_eq!(*wij, 3.0 * kij, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_momentum_single_particle_reduces_to_damped_gd() {
        let mut y = arr2(&[[0.5, -1.0]]);
        let k = arr2(&[[1.0]]);
        let g = arr2(&[[2.0, 1.0]]);
        let x = arr2(&[[3.0, 4.0]]);
        let tau = 0.04;
        momentum_step_gaussian(&mut y, &[0.25], k.view(), g.view(), x.view(), 0.01, tau);
        // Interaction vanishes at N=1: Y <- 0.25 Y - 0.2 grad.
        assert_relative_eq!(y[(0, 0)], 0.25 * 0.5 - 0.2 * 2.0, max_relative = 1e-15);
        assert_relative_eq!(y[(0, 1)], 0.25 * -1.0 - 0.2 * 1.0, max_relative = 1e-15);
    }

    #[test]
    fn gaussian_momentum_interaction_hand_value() {
        let mut y = Array2::zeros((2, 2));
        let x = arr2(&[[0.0, 0.0], [0.1, 0.0]]);
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 0.01 }, x.view()).unwrap();
        let g = Array2::zeros((2, 2));
        momentum_step_gaussian(&mut y, &[0.0, 0.0], k.view(), g.view(), x.view(), 0.01, 0.01);
        // K01 = exp(-1/2); row 0 interaction = (st/(N s2)) K01 (x0 - x1).
        let want = 0.1 / (2.0 * 0.01) * (-0.5f64).exp() * -0.1;
        assert_relative_eq!(y[(0, 0)], want, max_relative = 1e-14);
        assert_relative_eq!(y[(1, 0)], -want, max_relative = 1e-14);
        assert_eq!(y[(0, 1)], 0.0);
    }

    #[test]
    fn alpha_term_is_row_local() {
        let x = Array2::zeros((3, 2));
        let k = kernel_matrix(&KernelSpec::Gaussian { sigma2: 1.0 }, x.view()).unwrap();
        let g = Array2::zeros((3, 2));
        let alpha = [0.9, 0.5, 0.1];
        let mut full = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut zeroed = full.clone();
        zeroed.row_mut(1).fill(0.0);
        momentum_step_gaussian(&mut full, &alpha, k.view(), g.view(), x.view(), 1.0, 0.1);
        momentum_step_gaussian(&mut zeroed, &alpha, k.view(), g.view(), x.view(), 1.0, 0.1);
        assert_eq!(full.row(0), zeroed.row(0));
        assert_eq!(full.row(2), zeroed.row(2));
    }

    #[test]
    fn bilinear_momentum_hand_reductions() {
        let tau = 0.25;
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let a = Array2::eye(2);
        let k = kernel_matrix(&KernelSpec::Bilinear { a: a.clone() }, x.view()).unwrap();
        let g = arr2(&[[1.0, -1.0], [2.0, 0.0]]);
        let zero_v = Array2::zeros((2, 2));

        // V terms zero, alpha zero: Y = -(st/N) K G + st X A.
        let mut y = arr2(&[[9.0, 9.0], [9.0, 9.0]]);
        momentum_step_bilinear(
            &mut y,
            &[0.0, 0.0],
            k.view(),
            g.view(),
            x.view(),
            &a,
            zero_v.view(),
            zero_v.view(),
            tau,
        );
        let kg = k.dot(&g);
        for i in 0..2 {
            for c in 0..2 {
                assert_relative_eq!(
                    y[(i, c)],
                    -0.25 * kg[(i, c)] + 0.5 * x[(i, c)],
                    max_relative = 1e-14
                );
            }
        }

        // Zero gradient and zero positions: only damping survives.
        let mut y = arr2(&[[2.0, -2.0], [4.0, 8.0]]);
        let zero = Array2::zeros((2, 2));
        momentum_step_bilinear(
            &mut y,
            &[0.9, 0.9],
            k.view(),
            zero.view(),
            zero.view(),
            &a,
            zero_v.view(),
            zero_v.view(),
            tau,
        );
        assert_eq!(y, arr2(&[[1.8, -1.8], [3.6, 7.2]]));
    }

    #[test]
    fn bilinear_momentum_single_particle_scalar_check() {
        let tau = 0.09f64;
        let st = 0.3;
        let x = arr2(&[[2.0, -1.0]]);
        let a = Array2::eye(2);
        let k = arr2(&[[2.0 * 2.0 + 1.0 + 1.0]]);
        let g = arr2(&[[0.5, 0.25]]);
        let v_new = arr2(&[[1.0, 2.0]]);
        let v_lag = arr2(&[[-0.5, 1.0]]);
        let mut y = arr2(&[[0.4, 0.8]]);
        momentum_step_bilinear(
            &mut y,
            &[0.5],
            k.view(),
            g.view(),
            x.view(),
            &a,
            v_new.view(),
            v_lag.view(),
            tau,
        );
        let k11 = 6.0;
        let trace = k11 * (1.0 * -0.5 + 2.0 * 1.0);
        let scale = st * (1.0 + trace);
        assert_relative_eq!(y[(0, 0)], 0.5 * 0.4 - st * k11 * 0.5 + scale * 2.0, max_relative = 1e-14);
        assert_relative_eq!(y[(0, 1)], 0.5 * 0.8 - st * k11 * 0.25 + scale * -1.0, max_relative = 1e-14);
    }

    #[test]
    fn run_zero_steps_returns_init() {
        let config = AsvgdConfig {
            kernel: KernelSpec::Gaussian { sigma2: 0.01 },
            tau: 0.1,
            eps: 0.1,
            damping: Damping::AdaptiveRestart,
            steps: 0,
            bilinear_trace_lag: TraceLag::Mixed,
        };
        let target = gaussian_target(Array2::eye(2), Array1::zeros(2)).unwrap();
        let init = InitSpec {
            mean: Array1::zeros(2),
            covariance: Array2::eye(2),
            count: 8,
            seed: 1,
        };
        let reference = init_ensemble(&init).unwrap();
        let rec = asvgd_run(&config, &target, &init, |_, _| {}).unwrap();
        assert_eq!(rec.ensemble.positions, reference.positions);
        assert!(rec.stats.is_empty());
        assert_eq!(rec.ensemble.step_index, 0);
    }

    #[test]
    fn single_particle_matches_damped_gd_recursion() {
        let tau = 0.04f64;
        let beta = 0.6;
        let config = AsvgdConfig {
            kernel: KernelSpec::Gaussian { sigma2: 0.01 },
            tau,
            eps: 0.1,
            damping: Damping::Constant { beta },
            steps: 50,
            bilinear_trace_lag: TraceLag::Mixed,
        };
        let target = gaussian_target(Array2::eye(2), Array1::zeros(2)).unwrap();
        let init = InitSpec {
            mean: Array1::from(vec![2.0, -1.5]),
            covariance: Array2::eye(2) * 1e-12,
            count: 1,
            seed: 4,
        };
        let start = init_ensemble(&init).unwrap().positions;
        let rec = asvgd_run(&config, &target, &init, |_, _| {}).unwrap();

        let st = tau.sqrt();
        for c in 0..2 {
            let mut x = start[(0, c)];
            let mut y = 0.0;
            for _ in 0..50 {
                x += st * y;
                y = beta * y - st * x;
            }
            assert_relative_eq!(rec.ensemble.positions[(0, c)], x, max_relative = 1e-12);
            assert_relative_eq!(rec.ensemble.momenta[(0, c)], y, max_relative = 1e-12);
        }
    }

    #[test]
    fn hook_sees_every_step_and_stats_match() {
        let config = AsvgdConfig {
            kernel: KernelSpec::Gaussian { sigma2: 0.01 },
            tau: 0.1,
            eps: 0.1,
            damping: Damping::AdaptiveRestart,
            steps: 7,
            bilinear_trace_lag: TraceLag::Mixed,
        };
        let target = gaussian_target(Array2::eye(2), Array1::zeros(2)).unwrap();
        let init = InitSpec {
            mean: Array1::zeros(2),
            covariance: Array2::eye(2),
            count: 12,
            seed: 3,
        };
        let mut seen = Vec::new();
        let rec = asvgd_run(&config, &target, &init, |e, s| {
            assert!(e.is_finite());
            seen.push(s.step);
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(rec.stats.len(), 7);
        for s in &rec.stats {
            assert!(s.solve_residual <= 1e-8 * s.solve_rhs_norm.max(1.0));
            assert!((0.0..=1.0).contains(&s.restart_fraction));
        }
    }

    #[test]
    fn divergent_run_aborts_with_step_index() {
        let config = AsvgdConfig {
            kernel: KernelSpec::Gaussian { sigma2: 0.01 },
            tau: 1e8,
            eps: 0.1,
            damping: Damping::Constant { beta: 0.9 },
            steps: 100,
            bilinear_trace_lag: TraceLag::Mixed,
        };
        let target = crate::targets::quartic_target();
        let init = InitSpec {
            mean: Array1::from(vec![5.0, 5.0]),
            covariance: Array2::eye(2),
            count: 4,
            seed: 0,
        };
        match asvgd_run(&config, &target, &init, |_, _| {}) {
            Err(Error::Numerical { step, .. }) => assert!(step >= 1),
            other => panic!("expected numerical abort, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let base = AsvgdConfig {
            kernel: KernelSpec::Gaussian { sigma2: 0.01 },
            tau: 0.1,
            eps: 0.1,
            damping: Damping::AdaptiveRestart,
            steps: 10,
            bilinear_trace_lag: TraceLag::Mixed,
        };
        let mut bad_tau = base.clone();
        bad_tau.tau = 0.0;
        assert!(bad_tau.validate(2).is_err());
        let mut bad_eps = base.clone();
        bad_eps.eps = -0.1;
        assert!(bad_eps.validate(2).is_err());
        let mut bad_beta = base.clone();
        bad_beta.damping = Damping::Constant { beta: 1.0 };
        assert!(bad_beta.validate(2).is_err());
        assert!(base.validate(2).is_ok());
    }
}
