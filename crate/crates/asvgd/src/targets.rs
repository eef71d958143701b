//! Target distributions `pi = Z^{-1} exp(-f)`.
//!
//! A [`Target`] bundles the potential `f`, its gradient, and what is known
//! about the normalizer: a closed-form `log Z` when available, otherwise a
//! bounding box over which [`log_normalizer`] integrates `exp(-f)`
//! numerically (2D targets only, which is all the KL diagnostics need).

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::linalg;
use crate::{Error, Result};

type PotentialFn = Box<dyn Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync>;
type GradientFn = Box<dyn Fn(ArrayView1<'_, f64>) -> Array1<f64> + Send + Sync>;

pub struct Target {
    pub name: String,
    pub dim: usize,
    /// `log Z` in closed form; when set, quadrature is skipped.
    pub analytic_log_z: Option<f64>,
    /// Per-dimension `(lo, hi)` integration bounds for the numerical
    /// normalizer, sized so `exp(-f)` is negligible on the boundary.
    pub quad_box: Option<Vec<(f64, f64)>>,
    potential: PotentialFn,
    gradient: GradientFn,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_log_z", &self.analytic_log_z)
            .finish()
    }
}

impl Target {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        potential: impl Fn(ArrayView1<'_, f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(ArrayView1<'_, f64>) -> Array1<f64> + Send + Sync + 'static,
    ) -> Self {
        Target {
            name: name.into(),
            dim,
            analytic_log_z: None,
            quad_box: None,
            potential: Box::new(potential),
            gradient: Box::new(gradient),
        }
    }

    pub fn with_analytic_log_z(mut self, log_z: f64) -> Self {
        self.analytic_log_z = Some(log_z);
        self
    }

    pub fn with_quad_box(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.quad_box = Some(bounds);
        self
    }

    pub fn potential(&self, x: ArrayView1<'_, f64>) -> f64 {
        (self.potential)(x)
    }

    pub fn gradient(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        (self.gradient)(x)
    }

    /// Gradient of every particle, stacked row-wise.
    pub fn gradient_all(&self, positions: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(positions.raw_dim());
        for (row, mut dst) in positions.rows().into_iter().zip(out.rows_mut()) {
            dst.assign(&self.gradient(row));
        }
        out
    }
}

/// Gaussian potential `f(x) = (x - mean)' Q (x - mean) / 2` with precision Q.
pub fn gaussian_target(precision: Array2<f64>, mean: Array1<f64>) -> Result<Target> {
    let d = mean.len();
    if precision.nrows() != d || precision.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "precision is {}x{} but mean has length {d}",
            precision.nrows(),
            precision.ncols()
        )));
    }
    if linalg::asymmetry(precision.view()) > 1e-9 {
        return Err(Error::NotSpd { name: "precision".into() });
    }
    let chol = linalg::cholesky(precision.view())
        .ok_or_else(|| Error::NotSpd { name: "precision".into() })?;
    let log_det: f64 = (0..d).map(|i| 2.0 * chol[(i, i)].ln()).sum();
    let log_z = d as f64 / 2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;

    let (q_pot, m_pot) = (precision.clone(), mean.clone());
    let potential = move |x: ArrayView1<'_, f64>| {
        let w = &x - &m_pot;
        0.5 * w.dot(&q_pot.dot(&w))
    };
    let gradient = move |x: ArrayView1<'_, f64>| {
        let w = &x - &mean;
        precision.dot(&w)
    };
    Ok(Target::new("gaussian", d, potential, gradient)
        .with_analytic_log_z(log_z)
        .with_quad_box(vec![(-8.0, 8.0); d]))
}

/// Non-Lipschitz potential `f(x, y) = (x^4 + y^4) / 4`.
pub fn quartic_target() -> Target {
    let potential = |x: ArrayView1<'_, f64>| 0.25 * (x[0].powi(4) + x[1].powi(4));
    let gradient = |x: ArrayView1<'_, f64>| Array1::from(vec![x[0].powi(3), x[1].powi(3)]);
    Target::new("quartic", 2, potential, gradient).with_quad_box(vec![(-4.0, 4.0), (-4.0, 4.0)])
}

/// The double-bananas posterior: standard normal prior on `x` and a
/// log-Rosenbrock observation `y_obs = log 30` with noise scale 0.3.
///
/// `f(x) = |x|^2/2 + (log 30 - F(x))^2 / (2 * 0.3^2)` where
/// `F(x) = log((1 - x1)^2 + 100 (x2 - x1^2)^2)`, floored at 1e-300 inside the
/// log. The two posterior modes sit on the Rosenbrock level set `F = log 30`,
/// one in each `x1` half-plane.
pub fn double_bananas_target() -> Target {
    let y_obs = 30.0f64.ln();
    let noise_var = 0.3f64 * 0.3;

    let rosenbrock = |x1: f64, x2: f64| (1.0 - x1) * (1.0 - x1) + 100.0 * (x2 - x1 * x1) * (x2 - x1 * x1);

    let potential = move |x: ArrayView1<'_, f64>| {
        let g = rosenbrock(x[0], x[1]).max(1e-300);
        let r = y_obs - g.ln();
        0.5 * x.dot(&x) + r * r / (2.0 * noise_var)
    };
    let gradient = move |x: ArrayView1<'_, f64>| {
        let g = rosenbrock(x[0], x[1]).max(1e-300);
        let dg1 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
        let dg2 = 200.0 * (x[1] - x[0] * x[0]);
        let factor = (g.ln() - y_obs) / noise_var / g;
        Array1::from(vec![x[0] + factor * dg1, x[1] + factor * dg2])
    };
    // The box is wider than the visible mass: exp(-f) must drop below 1e-12
    // on the boundary for the truncated normalizer to be trustworthy.
    Target::new("double-bananas", 2, potential, gradient)
        .with_quad_box(vec![(-4.0, 4.0), (-2.0, 8.0)])
}

/// `log Z = log of the integral of exp(-f)` over the target's quadrature box.
///
/// Trapezoidal rule on a uniform grid, accumulated in log-sum-exp form so
/// large potentials cannot underflow the sum. Returns `analytic_log_z`
/// verbatim when the target carries one.
pub fn log_normalizer(target: &Target, grid_points_per_dim: usize) -> Result<f64> {
    if let Some(z) = target.analytic_log_z {
        return Ok(z);
    }
    if target.dim != 2 {
        return Err(Error::InvalidConfig(format!(
            "numerical normalization supports d=2 only, target '{}' has d={}",
            target.name, target.dim
        )));
    }
    if grid_points_per_dim < 16 {
        return Err(Error::InvalidConfig(format!(
            "quadrature grid too coarse: {grid_points_per_dim} points per dim, need at least 16"
        )));
    }
    let bounds = target.quad_box.as_ref().ok_or_else(|| {
        Error::InvalidConfig(format!("target '{}' has no quadrature box", target.name))
    })?;
    let n = grid_points_per_dim;
    let (x0, x1) = bounds[0];
    let (y0, y1) = bounds[1];
    let hx = (x1 - x0) / (n - 1) as f64;
    let hy = (y1 - y0) / (n - 1) as f64;

    let edge_logw = |i: usize| if i == 0 || i == n - 1 { 0.5f64.ln() } else { 0.0 };
    let mut terms = Vec::with_capacity(n * n);
    let mut point = Array1::zeros(2);
    let mut max_term = f64::NEG_INFINITY;
    for i in 0..n {
        point[0] = x0 + i as f64 * hx;
        for j in 0..n {
            point[1] = y0 + j as f64 * hy;
            let t = -target.potential(point.view()) + edge_logw(i) + edge_logw(j);
            max_term = max_term.max(t);
            terms.push(t);
        }
    }
    let sum: f64 = terms.iter().map(|t| (t - max_term).exp()).sum();
    Ok(max_term + sum.ln() + (hx * hy).ln())
}
