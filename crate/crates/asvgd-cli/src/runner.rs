//! Executes resolved run specifications and writes the experiment outputs.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use asvgd::baselines::{mala_step, svgd_step, ula_step, uld_step};
use asvgd::ensemble::{init_ensemble, write_particles_csv};
use asvgd::metrics::{kl_estimate, metrics_csv_header, silverman_bandwidth, StepRecord};
use asvgd::targets::{log_normalizer, Target};
use asvgd::{asvgd_run_from, AsvgdConfig, Error, Result, TraceLag};

use crate::config::{join_values, RunSpec, Sampler};
use crate::manifest::write_manifest;

/// Baseline noise uses a stream decorrelated from the initialization
/// stream by this xor constant.
pub const BASELINE_STREAM_XOR: u64 = 0x9e37_79b9_7f4a_7c15;

/// Grid resolution per dimension for the numerical log-normalizer.
const QUADRATURE_POINTS: usize = 400;

pub struct RunOutput {
    /// `(step, kl)` at every recorded metrics row, in step order.
    pub kl_series: Vec<(usize, f64)>,
}

/// Accumulates metrics rows, snapshots, and trajectories during a run;
/// everything is buffered and written once the sampler finishes.
struct Recorder<'a> {
    spec: &'a RunSpec,
    target: &'a Target,
    log_z: f64,
    tracked: Vec<usize>,
    trajectory_rows: Vec<Vec<String>>,
    metric_rows: Vec<String>,
    kl_series: Vec<(usize, f64)>,
    snapshots: Vec<(usize, Array2<f64>)>,
}

impl<'a> Recorder<'a> {
    fn new(spec: &'a RunSpec, target: &'a Target, log_z: f64) -> Self {
        let n = spec.init.count;
        let tracked: Vec<usize> = if spec.full_trajectories {
            (0..n).collect()
        } else if spec.trajectories == 0 {
            Vec::new()
        } else {
            let stride = (n / spec.trajectories).max(1);
            (0..n).step_by(stride).take(spec.trajectories).collect()
        };
        Recorder {
            spec,
            target,
            log_z,
            trajectory_rows: vec![Vec::new(); tracked.len()],
            tracked,
            metric_rows: Vec::new(),
            kl_series: Vec::new(),
            snapshots: Vec::new(),
        }
    }

    fn record(
        &mut self,
        step: usize,
        positions: ArrayView2<'_, f64>,
        restart_fraction: f64,
        alpha_mean: f64,
    ) {
        for (slot, &index) in self.tracked.iter().enumerate() {
            self.trajectory_rows[slot]
                .push(format!("{step},{}", join_values(positions.row(index).iter())));
        }
        if step > 0 && step % self.spec.snapshot_every == 0 {
            self.snapshots.push((step, positions.to_owned()));
        }
        if step == 0 || step == self.spec.steps || step % self.spec.metric_every == 0 {
            let kl = if positions.nrows() >= 2 {
                silverman_bandwidth(positions)
                    .and_then(|(h, _)| kl_estimate(positions, self.target, h, self.log_z))
                    .unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            let (mean, cov_trace) = moments(positions);
            let row = StepRecord {
                step,
                kl_estimate: kl,
                mean,
                cov_trace,
                restart_fraction,
                alpha_mean,
            };
            self.metric_rows.push(row.csv_row());
            self.kl_series.push((step, kl));
        }
    }

    fn flush(self) -> Result<Vec<(usize, f64)>> {
        let out = &self.spec.out;
        for (step, snapshot) in &self.snapshots {
            write_particles_csv(&out.join(format!("particles_{step}.csv")), snapshot.view())?;
        }

        let d = self.spec.target.dim();
        let mut metrics = metrics_csv_header(d);
        for row in &self.metric_rows {
            metrics.push('\n');
            metrics.push_str(row);
        }
        metrics.push('\n');
        write_text(&out.join("metrics.csv"), &metrics)?;

        let mut header = String::from("step");
        for c in 0..d {
            header.push_str(&format!(",x{c}"));
        }
        for (slot, &index) in self.tracked.iter().enumerate() {
            let mut text = header.clone();
            for row in &self.trajectory_rows[slot] {
                text.push('\n');
                text.push_str(row);
            }
            text.push('\n');
            write_text(&out.join(format!("trajectory_{index}.csv")), &text)?;
        }
        Ok(self.kl_series)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-coordinate mean and the trace of the unbiased sample covariance.
fn moments(positions: ArrayView2<'_, f64>) -> (Vec<f64>, f64) {
    let n = positions.nrows();
    let mut mean = Vec::with_capacity(positions.ncols());
    let mut trace = 0.0;
    for col in positions.columns() {
        let m = col.sum() / n as f64;
        if n > 1 {
            trace += col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        }
        mean.push(m);
    }
    (mean, trace)
}

fn ensure_finite(positions: &Array2<f64>, step: usize) -> Result<()> {
    if positions.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(Error::Numerical {
        step,
        reason: "particle positions became non-finite; reduce the step size".into(),
    })
}

/// Runs one sampler and writes its output directory.
pub fn run_one(spec: &RunSpec) -> Result<RunOutput> {
    fs::create_dir_all(&spec.out).map_err(|source| Error::Io {
        path: spec.out.clone(),
        source,
    })?;

    let target = spec.target.build()?;
    let log_z = match target.analytic_log_z {
        Some(z) => z,
        None => log_normalizer(&target, QUADRATURE_POINTS)?,
    };
    let start = init_ensemble(&spec.init)?;
    write_manifest(spec)?;
    write_particles_csv(&spec.out.join("particles_init.csv"), start.positions.view())?;

    let mut recorder = Recorder::new(spec, &target, log_z);
    recorder.record(0, start.positions.view(), 0.0, 0.0);

    let final_positions = match spec.sampler {
        Sampler::Asvgd => {
            let cfg = AsvgdConfig {
                kernel: spec.kernel.clone(),
                tau: spec.tau,
                eps: spec.eps,
                damping: spec.damping.clone(),
                steps: spec.steps,
                bilinear_trace_lag: TraceLag::Mixed,
            };
            let record = asvgd_run_from(&cfg, start, &target, |e, stats| {
                recorder.record(
                    stats.step,
                    e.positions.view(),
                    stats.restart_fraction,
                    stats.alpha_mean,
                );
            })?;
            record.ensemble.positions
        }
        Sampler::Svgd => {
            let mut positions = start.positions;
            for step in 1..=spec.steps {
                svgd_step(&mut positions, &spec.kernel, &target, spec.tau)?;
                ensure_finite(&positions, step)?;
                recorder.record(step, positions.view(), 0.0, 0.0);
            }
            positions
        }
        Sampler::Ula | Sampler::Mala | Sampler::Uld => {
            let mut positions = start.positions;
            let mut velocities = Array2::zeros(positions.raw_dim());
            let mut rng = ChaCha20Rng::seed_from_u64(spec.init.seed ^ BASELINE_STREAM_XOR);
            for step in 1..=spec.steps {
                match spec.sampler {
                    Sampler::Ula => ula_step(&mut positions, &target, spec.tau, &mut rng),
                    Sampler::Mala => {
                        mala_step(&mut positions, &target, spec.tau, &mut rng);
                    }
                    _ => uld_step(
                        &mut positions,
                        &mut velocities,
                        &target,
                        spec.tau,
                        spec.friction,
                        &mut rng,
                    ),
                }
                ensure_finite(&positions, step)?;
                recorder.record(step, positions.view(), 0.0, 0.0);
            }
            positions
        }
    };

    write_particles_csv(&spec.out.join("particles_final.csv"), final_positions.view())?;
    let kl_series = recorder.flush()?;
    println!(
        "{}: {} steps, outputs in {}",
        spec.sampler.name(),
        spec.steps,
        spec.out.display()
    );
    Ok(RunOutput { kl_series })
}

/// Runs each leg from the shared initial ensemble and writes the combined
/// `kl_compare.csv` (one KL column per sampler).
pub fn compare_runs(root: &Path, legs: &[RunSpec]) -> Result<()> {
    if legs.is_empty() {
        return Err(Error::InvalidConfig("compare needs at least one run".into()));
    }
    let first = &legs[0];
    for leg in &legs[1..] {
        if leg.target.key() != first.target.key() {
            return Err(Error::InvalidConfig(
                "compare runs must share the target".into(),
            ));
        }
        if leg.init.count != first.init.count
            || leg.init.seed != first.init.seed
            || leg.init.mean != first.init.mean
            || leg.init.covariance != first.init.covariance
        {
            return Err(Error::InvalidConfig(
                "compare runs must share the initial ensemble".into(),
            ));
        }
        if leg.steps != first.steps || leg.metric_every != first.metric_every {
            return Err(Error::InvalidConfig(
                "compare runs must share --steps and --metric-every".into(),
            ));
        }
    }

    fs::create_dir_all(root).map_err(|source| Error::Io {
        path: root.to_path_buf(),
        source,
    })?;

    let mut columns: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for leg in legs {
        let name = leg
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| leg.sampler.name().into());
        let output = run_one(leg)?;
        columns.push((name, output.kl_series));
    }

    let mut text = String::from("step");
    for (name, _) in &columns {
        text.push(',');
        text.push_str(name);
    }
    for row in 0..columns[0].1.len() {
        let (step, _) = columns[0].1[row];
        text.push_str(&format!("\n{step}"));
        for (_, series) in &columns {
            text.push_str(&format!(",{}", series[row].1));
        }
    }
    text.push('\n');
    let path = root.join("kl_compare.csv");
    write_text(&path, &text)?;
    println!("compare table in {}", path.display());
    Ok(())
}
