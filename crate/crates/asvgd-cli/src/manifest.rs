//! Flat `key=value` manifests that make every run replayable.
//!
//! The manifest records each resolved parameter with `{}` formatting, which
//! round-trips f64 values exactly; `read_manifest` therefore reconstructs
//! the run bit-for-bit.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use asvgd::kernels::KernelSpec;
use asvgd::{Damping, Error, InitSpec, Result};

use crate::config::{join_values, RunSpec, Sampler, TargetSpec};

pub fn manifest_string(spec: &RunSpec) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut push = |key: &str, value: String| lines.push(format!("{key}={value}"));

    push("sampler", spec.sampler.name().into());
    push("target", spec.target.name().into());
    if let TargetSpec::Gaussian { mean, precision } = &spec.target {
        push("target_mean", join_values(mean.iter()));
        push("target_precision", join_values(precision.iter()));
    }
    push("kernel", spec.kernel.name().into());
    push("sigma", format!("{}", spec.sigma));
    if let KernelSpec::Bilinear { a } = &spec.kernel {
        push("matrix_a", join_values(a.iter()));
    }
    push("tau", format!("{}", spec.tau));
    push("eps", format!("{}", spec.eps));
    match &spec.damping {
        Damping::AdaptiveRestart => push("damping", "restart".into()),
        Damping::Constant { beta } => {
            push("damping", "constant".into());
            push("beta", format!("{beta}"));
        }
    }
    push("friction", format!("{}", spec.friction));
    push("n", format!("{}", spec.init.count));
    push("steps", format!("{}", spec.steps));
    push("seed", format!("{}", spec.init.seed));
    push("init_mean", join_values(spec.init.mean.iter()));
    push("init_cov", join_values(spec.init.covariance.iter()));
    push("snapshot_every", format!("{}", spec.snapshot_every));
    push("metric_every", format!("{}", spec.metric_every));
    push("trajectories", format!("{}", spec.trajectories));
    push("full_trajectories", format!("{}", spec.full_trajectories));
    push("out", spec.out.display().to_string());
    lines.join("\n") + "\n"
}

pub fn write_manifest(spec: &RunSpec) -> Result<()> {
    let path = spec.out.join("manifest.txt");
    fs::write(&path, manifest_string(spec)).map_err(|source| Error::Io { path, source })
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_manifest(path: &Path) -> Result<RunSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut map: HashMap<String, String> = HashMap::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, format!("line {}: expected key=value", number + 1)))?;
        if map.insert(key.trim().into(), value.into()).is_some() {
            return Err(parse_err(path, format!("duplicate key '{}'", key.trim())));
        }
    }

    let req = |key: &str| -> Result<&str> {
        map.get(key)
            .map(String::as_str)
            .ok_or_else(|| parse_err(path, format!("missing key '{key}'")))
    };
    let req_f64 = |key: &str| -> Result<f64> {
        req(key)?
            .parse()
            .map_err(|_| parse_err(path, format!("key '{key}' is not a number")))
    };
    let req_usize = |key: &str| -> Result<usize> {
        req(key)?
            .parse()
            .map_err(|_| parse_err(path, format!("key '{key}' is not a count")))
    };
    let req_list = |key: &str| -> Result<Vec<f64>> {
        req(key)?
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| parse_err(path, format!("key '{key}' is not a number list")))
    };
    let square = |key: &str, values: Vec<f64>, d: usize| -> Result<Array2<f64>> {
        if values.len() != d * d {
            return Err(parse_err(
                path,
                format!("key '{key}' needs {} values, found {}", d * d, values.len()),
            ));
        }
        Ok(Array2::from_shape_vec((d, d), values).expect("length checked above"))
    };

    let sampler = Sampler::from_name(req("sampler")?)
        .ok_or_else(|| parse_err(path, "unknown sampler"))?;

    let target = match req("target")? {
        "gaussian" => {
            let mean = Array1::from_vec(req_list("target_mean")?);
            let precision = square("target_precision", req_list("target_precision")?, mean.len())?;
            TargetSpec::Gaussian { mean, precision }
        }
        "quartic" => TargetSpec::Quartic,
        "double-bananas" => TargetSpec::DoubleBananas,
        other => return Err(parse_err(path, format!("unknown target '{other}'"))),
    };
    let d = target.dim();

    let sigma = req_f64("sigma")?;
    let kernel = match req("kernel")? {
        "gaussian" => KernelSpec::Gaussian {
            sigma2: sigma * sigma,
        },
        "bilinear" => KernelSpec::Bilinear {
            a: square("matrix_a", req_list("matrix_a")?, d)?,
        },
        other => return Err(parse_err(path, format!("unknown kernel '{other}'"))),
    };

    let damping = match req("damping")? {
        "restart" => Damping::AdaptiveRestart,
        "constant" => Damping::Constant {
            beta: req_f64("beta")?,
        },
        other => return Err(parse_err(path, format!("unknown damping '{other}'"))),
    };

    let init = InitSpec {
        mean: Array1::from_vec(req_list("init_mean")?),
        covariance: square("init_cov", req_list("init_cov")?, d)?,
        count: req_usize("n")?,
        seed: req("seed")?
            .parse()
            .map_err(|_| parse_err(path, "key 'seed' is not an integer"))?,
    };

    Ok(RunSpec {
        sampler,
        target,
        kernel,
        sigma,
        tau: req_f64("tau")?,
        eps: req_f64("eps")?,
        damping,
        friction: req_f64("friction")?,
        init,
        steps: req_usize("steps")?,
        out: PathBuf::from(req("out")?),
        snapshot_every: req_usize("snapshot_every")?,
        metric_every: req_usize("metric_every")?,
        trajectories: req_usize("trajectories")?,
        full_trajectories: match req("full_trajectories")? {
            "true" => true,
            "false" => false,
            other => {
                return Err(parse_err(
                    path,
                    format!("key 'full_trajectories' must be true or false, got '{other}'"),
                ))
            }
        },
    })
}
