//! Argument model and its resolution into concrete run specifications.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use ndarray::{arr1, arr2, Array1, Array2};

use asvgd::kernels::KernelSpec;
use asvgd::targets::{double_bananas_target, gaussian_target, quartic_target, Target};
use asvgd::{linalg, Damping, Error, InitSpec, Result};

/// Particle-sampling experiment harness.
///
/// Runs ASVGD or a baseline sampler against a 2D benchmark target and writes
/// CSV metrics, particle snapshots, trajectories, and a replayable manifest.
#[derive(Parser, Debug, Clone, Default)]
#[command(name = "asvgd", version, about)]
pub struct Cli {
    /// Sampler to run.
    #[arg(long, value_enum)]
    pub sampler: Option<Sampler>,

    /// Target density.
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,

    /// Interaction kernel used by asvgd and svgd.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,

    /// Row-major entries of the bilinear kernel matrix A (d*d values,
    /// default identity).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub matrix_a: Option<Vec<f64>>,

    /// Gaussian kernel bandwidth sigma; the kernel uses sigma^2 [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,

    /// Step size tau [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,

    /// Step size for ula/mala/uld; defaults to --tau. Langevin samplers can
    /// need smaller steps than the interacting-particle ones.
    #[arg(long, allow_negative_numbers = true)]
    pub baseline_tau: Option<f64>,

    /// Regularization eps added to the kernel matrix in the momentum solve
    /// [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,

    /// Number of particles [default: 500]
    #[arg(long)]
    pub n: Option<usize>,

    /// Number of steps [default: 1000]
    #[arg(long)]
    pub steps: Option<usize>,

    /// Seed for the initial draw and for baseline noise [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Momentum damping mode for asvgd [default: restart]
    #[arg(long, value_enum)]
    pub damping: Option<DampingArg>,

    /// Constant damping value in (0,1); requires --damping constant
    /// [default: 0.985]
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,

    /// Friction gamma for uld [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub friction: Option<f64>,

    /// Initial ensemble mean, comma-separated (default zeros).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init_mean: Option<Vec<f64>>,

    /// Row-major initial covariance (d*d values, default identity).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init_cov: Option<Vec<f64>>,

    /// Gaussian target mean (default zeros).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub target_mean: Option<Vec<f64>>,

    /// Row-major Gaussian target covariance, inverted internally
    /// (default identity).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub target_cov: Option<Vec<f64>>,

    /// Output directory [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write particles_<step>.csv every this many steps [default: 100]
    #[arg(long)]
    pub snapshot_every: Option<usize>,

    /// Record a metrics row every this many steps [default: 10]
    #[arg(long)]
    pub metric_every: Option<usize>,

    /// Number of evenly-strided particle trajectory files [default: 50]
    #[arg(long)]
    pub trajectories: Option<usize>,

    /// Write a trajectory file for every particle.
    #[arg(long)]
    pub full_trajectories: bool,

    /// Canned experiment running asvgd, svgd, mala, and uld together.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,

    /// Comma-separated samplers to run from one shared initial ensemble.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub compare: Option<Vec<Sampler>>,

    /// Replay a run from a previously written manifest.txt.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Asvgd,
    Svgd,
    Ula,
    Mala,
    Uld,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Asvgd => "asvgd",
            Sampler::Svgd => "svgd",
            Sampler::Ula => "ula",
            Sampler::Mala => "mala",
            Sampler::Uld => "uld",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "asvgd" => Some(Sampler::Asvgd),
            "svgd" => Some(Sampler::Svgd),
            "ula" => Some(Sampler::Ula),
            "mala" => Some(Sampler::Mala),
            "uld" => Some(Sampler::Uld),
            _ => None,
        }
    }

    fn is_langevin(self) -> bool {
        matches!(self, Sampler::Ula | Sampler::Mala | Sampler::Uld)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Gaussian,
    Quartic,
    DoubleBananas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Bilinear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DampingArg {
    Restart,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Fig1,
    Fig2Quartic,
    Fig2Bananas,
    Fig2Anisotropic,
}

/// Target density plus its parameters, resolved from flags or a manifest.
#[derive(Debug, Clone)]
pub enum TargetSpec {
    Gaussian {
        mean: Array1<f64>,
        precision: Array2<f64>,
    },
    Quartic,
    DoubleBananas,
}

impl TargetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TargetSpec::Gaussian { .. } => "gaussian",
            TargetSpec::Quartic => "quartic",
            TargetSpec::DoubleBananas => "double-bananas",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { mean, .. } => mean.len(),
            TargetSpec::Quartic | TargetSpec::DoubleBananas => 2,
        }
    }

    pub fn build(&self) -> Result<Target> {
        match self {
            TargetSpec::Gaussian { mean, precision } => {
                gaussian_target(precision.clone(), mean.clone())
            }
            TargetSpec::Quartic => Ok(quartic_target()),
            TargetSpec::DoubleBananas => Ok(double_bananas_target()),
        }
    }

    /// Identity string used to reject comparisons across different targets.
    pub fn key(&self) -> String {
        match self {
            TargetSpec::Gaussian { mean, precision } => format!(
                "gaussian mean={} precision={}",
                join_values(mean.iter()),
                join_values(precision.iter())
            ),
            TargetSpec::Quartic => "quartic".into(),
            TargetSpec::DoubleBananas => "double-bananas".into(),
        }
    }
}

/// Everything one run needs; also exactly what `manifest.txt` records.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub sampler: Sampler,
    pub target: TargetSpec,
    pub kernel: KernelSpec,
    /// Bandwidth flag value; the Gaussian kernel uses `sigma * sigma`.
    pub sigma: f64,
    pub tau: f64,
    pub eps: f64,
    pub damping: Damping,
    pub friction: f64,
    pub init: InitSpec,
    pub steps: usize,
    pub out: PathBuf,
    pub snapshot_every: usize,
    pub metric_every: usize,
    pub trajectories: usize,
    pub full_trajectories: bool,
}

/// A resolved command line: either one run or a set sharing an init.
#[derive(Debug, Clone)]
pub enum Plan {
    Single(RunSpec),
    Compare { root: PathBuf, legs: Vec<RunSpec> },
}

pub fn join_values<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

macro_rules! flags_set {
    ($cli:expr, $( $field:ident ),+ $(,)?) => {{
        let mut set: Vec<&'static str> = Vec::new();
        $( if $cli.$field.is_some() {
            set.push(concat!("--", stringify!($field)));
        } )+
        set
    }};
}

/// Turns parsed flags into an executable plan, applying the protocol
/// defaults n=500, steps=1000, tau=sigma=eps=0.1, damping=restart.
pub fn resolve(cli: &Cli) -> Result<Plan> {
    if let Some(path) = &cli.from_manifest {
        let set = flags_set!(
            cli, sampler, target, kernel, matrix_a, sigma, tau, baseline_tau, eps, n,
            steps, seed, damping, beta, friction, init_mean, init_cov, target_mean,
            target_cov, snapshot_every, metric_every, trajectories, preset, compare
        );
        if !set.is_empty() || cli.full_trajectories {
            return Err(invalid(format!(
                "--from-manifest replays the recorded configuration; only --out may \
                 be overridden (got {})",
                if set.is_empty() { "--full-trajectories".into() } else { set.join(", ").replace('_', "-") }
            )));
        }
        let mut spec = crate::manifest::read_manifest(path)?;
        if let Some(out) = &cli.out {
            spec.out = out.clone();
        }
        validate_spec(&spec)?;
        return Ok(Plan::Single(spec));
    }

    if let Some(preset) = cli.preset {
        let set = flags_set!(
            cli, sampler, target, kernel, matrix_a, damping, beta, init_mean,
            init_cov, target_mean, target_cov, compare
        );
        if !set.is_empty() {
            return Err(invalid(format!(
                "--preset fixes the experiment; {} cannot be overridden (allowed: \
                 --out, --seed, --n, --steps, --tau, --baseline-tau, --sigma, --eps, \
                 --friction, and output cadence flags)",
                set.join(", ").replace('_', "-")
            )));
        }
        return resolve_preset(cli, preset);
    }

    if let Some(samplers) = &cli.compare {
        if cli.sampler.is_some() {
            return Err(invalid("--compare already names the samplers; drop --sampler"));
        }
        if samplers.is_empty() {
            return Err(invalid("--compare needs at least one sampler"));
        }
        let root = out_dir(cli);
        let legs = samplers
            .iter()
            .zip(leg_dirs(&root, samplers))
            .map(|(&sampler, dir)| build_spec(cli, sampler, dir))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Plan::Compare { root, legs });
    }

    let sampler = cli
        .sampler
        .ok_or_else(|| invalid("missing --sampler (or use --preset, --compare, or --from-manifest)"))?;
    Ok(Plan::Single(build_spec(cli, sampler, out_dir(cli))?))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Output directory per compare leg: the sampler name, suffixed with _2,
/// _3, ... when the same sampler appears more than once.
pub fn leg_dirs(root: &std::path::Path, samplers: &[Sampler]) -> Vec<PathBuf> {
    let mut seen: HashMap<&'static str, usize> = HashMap::new();
    samplers
        .iter()
        .map(|s| {
            let count = seen.entry(s.name()).or_insert(0);
            *count += 1;
            if *count == 1 {
                root.join(s.name())
            } else {
                root.join(format!("{}_{count}", s.name()))
            }
        })
        .collect()
}

fn build_spec(cli: &Cli, sampler: Sampler, out: PathBuf) -> Result<RunSpec> {
    let target = resolve_target(cli)?;
    let d = target.dim();
    let sigma = cli.sigma.unwrap_or(0.1);
    let kernel = resolve_kernel(cli, sigma, d)?;
    let tau = cli.tau.unwrap_or(0.1);
    let damping = resolve_damping(cli)?;

    let init_mean = match &cli.init_mean {
        Some(values) => arr1(values),
        None => Array1::zeros(d),
    };
    let init_cov = match &cli.init_cov {
        Some(values) => matrix_from_flag(values, d, "--init-cov")?,
        None => Array2::eye(d),
    };

    let spec = RunSpec {
        sampler,
        target,
        kernel,
        sigma,
        tau: if sampler.is_langevin() {
            cli.baseline_tau.unwrap_or(tau)
        } else {
            tau
        },
        eps: cli.eps.unwrap_or(0.1),
        damping,
        friction: cli.friction.unwrap_or(1.0),
        init: InitSpec {
            mean: init_mean,
            covariance: init_cov,
            count: cli.n.unwrap_or(500),
            seed: cli.seed.unwrap_or(0),
        },
        steps: cli.steps.unwrap_or(1000),
        out,
        snapshot_every: cli.snapshot_every.unwrap_or(100),
        metric_every: cli.metric_every.unwrap_or(10),
        trajectories: cli.trajectories.unwrap_or(50),
        full_trajectories: cli.full_trajectories,
    };
    validate_spec(&spec)?;
    Ok(spec)
}

fn resolve_target(cli: &Cli) -> Result<TargetSpec> {
    match cli.target.unwrap_or(TargetArg::Gaussian) {
        TargetArg::Gaussian => {
            let d = cli
                .target_mean
                .as_ref()
                .map(Vec::len)
                .or_else(|| cli.init_mean.as_ref().map(Vec::len))
                .unwrap_or(2);
            let mean = match &cli.target_mean {
                Some(values) => arr1(values),
                None => Array1::zeros(d),
            };
            let precision = match &cli.target_cov {
                Some(values) => invert_spd(&matrix_from_flag(values, d, "--target-cov")?)?,
                None => Array2::eye(d),
            };
            Ok(TargetSpec::Gaussian { mean, precision })
        }
        other => {
            if cli.target_mean.is_some() || cli.target_cov.is_some() {
                return Err(invalid(
                    "--target-mean/--target-cov only apply to the gaussian target",
                ));
            }
            Ok(match other {
                TargetArg::Quartic => TargetSpec::Quartic,
                _ => TargetSpec::DoubleBananas,
            })
        }
    }
}

fn resolve_kernel(cli: &Cli, sigma: f64, d: usize) -> Result<KernelSpec> {
    match cli.kernel.unwrap_or(KernelArg::Gaussian) {
        KernelArg::Gaussian => {
            if cli.matrix_a.is_some() {
                return Err(invalid("--matrix-a only applies to the bilinear kernel"));
            }
            Ok(KernelSpec::Gaussian {
                sigma2: sigma * sigma,
            })
        }
        KernelArg::Bilinear => {
            let a = match &cli.matrix_a {
                Some(values) => matrix_from_flag(values, d, "--matrix-a")?,
                None => Array2::eye(d),
            };
            Ok(KernelSpec::Bilinear { a })
        }
    }
}

fn resolve_damping(cli: &Cli) -> Result<Damping> {
    match cli.damping.unwrap_or(DampingArg::Restart) {
        DampingArg::Restart => {
            if cli.beta.is_some() {
                return Err(invalid("--beta requires --damping constant"));
            }
            Ok(Damping::AdaptiveRestart)
        }
        DampingArg::Constant => Ok(Damping::Constant {
            beta: cli.beta.unwrap_or(0.985),
        }),
    }
}

fn matrix_from_flag(values: &[f64], d: usize, flag: &str) -> Result<Array2<f64>> {
    if values.len() != d * d {
        return Err(invalid(format!(
            "{flag} needs {} row-major values for dimension {d}, got {}",
            d * d,
            values.len()
        )));
    }
    Ok(Array2::from_shape_vec((d, d), values.to_vec()).expect("shape checked above"))
}

/// Inverts a symmetric positive definite matrix via its Cholesky factor,
/// then symmetrizes to remove round-off asymmetry.
fn invert_spd(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let l = linalg::cholesky(cov.view()).ok_or_else(|| Error::NotSpd {
        name: "target covariance".into(),
    })?;
    let inv = linalg::cholesky_solve(&l, Array2::eye(cov.nrows()).view());
    Ok((&inv + &inv.t()) * 0.5)
}

fn resolve_preset(cli: &Cli, preset: PresetArg) -> Result<Plan> {
    let root = out_dir(cli);
    let tau = cli.tau.unwrap_or(0.1);
    let sigma = cli.sigma.unwrap_or(0.1);
    let gaussian_kernel = KernelSpec::Gaussian {
        sigma2: sigma * sigma,
    };
    let identity_bilinear = KernelSpec::Bilinear { a: Array2::eye(2) };

    // Kernel/damping/init per experiment; Langevin legs may need a smaller
    // step than the interacting-particle legs on the stiffer targets.
    let (target, init_mean, asvgd_kernel, svgd_kernel, damping, langevin_tau): (
        TargetSpec,
        Array1<f64>,
        KernelSpec,
        KernelSpec,
        Damping,
        f64,
    ) = match preset {
        PresetArg::Fig1 => (
            TargetSpec::Gaussian {
                mean: Array1::zeros(2),
                precision: arr2(&[[3.0, -2.0], [-2.0, 3.0]]),
            },
            arr1(&[1.0, 1.0]),
            identity_bilinear.clone(),
            identity_bilinear,
            Damping::Constant { beta: 0.2 },
            tau,
        ),
        PresetArg::Fig2Quartic => (
            TargetSpec::Quartic,
            arr1(&[0.0, 5.0]),
            gaussian_kernel.clone(),
            gaussian_kernel,
            Damping::AdaptiveRestart,
            0.005,
        ),
        PresetArg::Fig2Bananas => (
            TargetSpec::DoubleBananas,
            arr1(&[0.0, 7.0]),
            gaussian_kernel.clone(),
            gaussian_kernel,
            Damping::Constant { beta: 0.985 },
            0.01,
        ),
        PresetArg::Fig2Anisotropic => (
            TargetSpec::Gaussian {
                mean: arr1(&[1.0, 1.0]),
                precision: arr2(&[[0.1, 0.0], [0.0, 20.0]]),
            },
            Array1::zeros(2),
            gaussian_kernel.clone(),
            gaussian_kernel,
            Damping::AdaptiveRestart,
            0.02,
        ),
    };
    let langevin_tau = cli.baseline_tau.unwrap_or(langevin_tau);

    let init_cov = match preset {
        PresetArg::Fig1 => arr2(&[[3.0, 2.0], [2.0, 3.0]]),
        _ => Array2::eye(2),
    };

    let legs = [Sampler::Asvgd, Sampler::Svgd, Sampler::Mala, Sampler::Uld];
    let legs = legs
        .iter()
        .zip(leg_dirs(&root, &legs))
        .map(|(&sampler, dir)| {
            let spec = RunSpec {
                sampler,
                target: target.clone(),
                kernel: if sampler == Sampler::Asvgd {
                    asvgd_kernel.clone()
                } else {
                    svgd_kernel.clone()
                },
                sigma,
                tau: if sampler.is_langevin() { langevin_tau } else { tau },
                eps: cli.eps.unwrap_or(0.1),
                damping: if sampler == Sampler::Asvgd {
                    damping.clone()
                } else {
                    Damping::AdaptiveRestart
                },
                friction: cli.friction.unwrap_or(1.0),
                init: InitSpec {
                    mean: init_mean.clone(),
                    covariance: init_cov.clone(),
                    count: cli.n.unwrap_or(500),
                    seed: cli.seed.unwrap_or(0),
                },
                steps: cli.steps.unwrap_or(1000),
                out: dir,
                snapshot_every: cli.snapshot_every.unwrap_or(100),
                metric_every: cli.metric_every.unwrap_or(10),
                trajectories: cli.trajectories.unwrap_or(50),
                full_trajectories: cli.full_trajectories,
            };
            validate_spec(&spec)?;
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Plan::Compare { root, legs })
}

/// Rejects parameter values outside their documented domains.
pub fn validate_spec(spec: &RunSpec) -> Result<()> {
    let d = spec.target.dim();
    let positive = [
        (spec.tau, "--tau"),
        (spec.sigma, "--sigma"),
        (spec.friction, "--friction"),
    ];
    for (value, flag) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid(format!("{flag} must be positive, got {value}")));
        }
    }
    if !(spec.eps.is_finite() && spec.eps >= 0.0) {
        return Err(invalid(format!("--eps must be nonnegative, got {}", spec.eps)));
    }
    if let Damping::Constant { beta } = spec.damping {
        if !(beta.is_finite() && 0.0 < beta && beta < 1.0) {
            return Err(invalid(format!("--beta must lie in (0,1), got {beta}")));
        }
    }
    if spec.init.count == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    if spec.metric_every == 0 {
        return Err(invalid("--metric-every must be at least 1"));
    }
    if spec.snapshot_every == 0 {
        return Err(invalid("--snapshot-every must be at least 1"));
    }
    if spec.init.mean.len() != d {
        return Err(invalid(format!(
            "--init-mean has {} entries but the target '{}' has dimension {d}",
            spec.init.mean.len(),
            spec.target.name()
        )));
    }
    if spec.init.covariance.nrows() != d || spec.init.covariance.ncols() != d {
        return Err(invalid(format!(
            "--init-cov is {}x{} but the target '{}' has dimension {d}",
            spec.init.covariance.nrows(),
            spec.init.covariance.ncols(),
            spec.target.name()
        )));
    }
    spec.kernel.validate(d)?;
    if let TargetSpec::Gaussian { mean, precision } = &spec.target {
        if precision.nrows() != mean.len() || precision.ncols() != mean.len() {
            return Err(invalid("gaussian target mean and covariance dimensions differ"));
        }
    }
    Ok(())
}
