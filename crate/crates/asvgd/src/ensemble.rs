//! Particle-system state and deterministic Gaussian initialization.
//!
//! Every sampler in this crate evolves an [`Ensemble`]: an N x d matrix of
//! particle positions plus the auxiliary state ASVGD needs (momenta, density
//! momenta, the previous positions for the speed restart, and per-particle
//! restart counters).
//!
//! Initialization is reproducible by contract: positions are drawn from
//! `N(mean, covariance)` using a ChaCha20 generator keyed with
//! `seed_from_u64(seed)`, drawing standard normals particle by particle,
//! coordinate by coordinate, then applying the lower Cholesky factor of the
//! covariance. The same `InitSpec` therefore always yields bit-identical
//! ensembles.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::{Error, Result};

/// Joint particle state evolved by the samplers.
///
/// Matrix rows are particles. `momenta` is Y and `density_momenta` is V in
/// the accelerated update; both stay zero for samplers that do not use them.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub positions: Array2<f64>,
    pub momenta: Array2<f64>,
    pub density_momenta: Array2<f64>,
    /// Positions at the previous step, for the speed restart comparison.
    pub prev_positions: Array2<f64>,
    /// Per-particle restart counters, always at least 1.
    pub restart_counts: Vec<u32>,
    pub step_index: usize,
}

impl Ensemble {
    pub fn count(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// True when positions and momenta contain no NaN or infinity.
    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
            && self.momenta.iter().all(|v| v.is_finite())
    }
}

/// Gaussian initial distribution plus the seed that makes a run replayable.
#[derive(Debug, Clone)]
pub struct InitSpec {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    pub count: usize,
    pub seed: u64,
}

/// Draws `spec.count` particles from `N(mean, covariance)`.
///
/// Momenta, density momenta are zero, `prev_positions` equals `positions`
/// (so the first speed-restart comparison sees a zero previous displacement)
/// and all restart counts start at 1.
pub fn init_ensemble(spec: &InitSpec) -> Result<Ensemble> {
    let d = spec.mean.len();
    if spec.covariance.nrows() != d || spec.covariance.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "mean has length {d} but covariance is {}x{}",
            spec.covariance.nrows(),
            spec.covariance.ncols()
        )));
    }
    if spec.count == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    if linalg::asymmetry(spec.covariance.view()) > 1e-9 {
        return Err(Error::NotSpd { name: "covariance".into() });
    }
    let chol = linalg::cholesky(spec.covariance.view())
        .ok_or_else(|| Error::NotSpd { name: "covariance".into() })?;

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut positions = Array2::<f64>::zeros((spec.count, d));
    let mut z = vec![0.0f64; d];
    for mut row in positions.rows_mut() {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for i in 0..d {
            let mut v = spec.mean[i];
            for (k, zk) in z.iter().take(i + 1).enumerate() {
                v += chol[(i, k)] * zk;
            }
            row[i] = v;
        }
    }

    Ok(Ensemble {
        prev_positions: positions.clone(),
        momenta: Array2::zeros((spec.count, d)),
        density_momenta: Array2::zeros((spec.count, d)),
        restart_counts: vec![1; spec.count],
        step_index: 0,
        positions,
    })
}

/// Empirical mean and unbiased covariance of the particle positions.
///
/// With a single particle the covariance is not defined; it is reported as
/// all zeros and the returned flag is `true`.
pub fn sample_mean_cov(e: &Ensemble) -> (Array1<f64>, Array2<f64>, bool) {
    let (n, d) = (e.count(), e.dim());
    let mean = e.positions.mean_axis(ndarray::Axis(0)).expect("n >= 1");
    let mut cov = Array2::<f64>::zeros((d, d));
    if n < 2 {
        return (mean, cov, true);
    }
    for row in e.positions.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    (mean, cov, false)
}

/// Writes positions as CSV with header `x0,...,x{d-1}`.
///
/// Values use the shortest decimal representation that round-trips, so
/// [`read_particles_csv`] recovers the matrix exactly.
pub fn write_particles_csv(path: &Path, positions: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = String::new();
    let d = positions.ncols();
    for i in 0..d {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{i}"));
    }
    out.push('\n');
    for row in positions.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    file.write_all(out.as_bytes()).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a particle snapshot written by [`write_particles_csv`].
pub fn read_particles_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let parse_err = |reason: String| Error::Parse {
        path: path.to_owned(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err("empty file".into()))?;
    let d = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(parse_err(format!(
                "line {}: expected {d} fields, found {}",
                lineno + 2,
                fields.len()
            )));
        }
        for f in fields {
            values.push(
                f.parse::<f64>()
                    .map_err(|e| parse_err(format!("line {}: {e}", lineno + 2)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, d), values)
        .map_err(|e| parse_err(format!("shape error: {e}")))
}
