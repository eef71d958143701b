//! Command-line harness around the `asvgd` library.
//!
//! The binary runs one sampler per invocation (`--sampler`), a canned
//! multi-sampler experiment (`--preset`), or an ad-hoc comparison of several
//! samplers from one shared initial ensemble (`--compare`). Every run writes
//! a flat `manifest.txt` with all resolved parameters; `--from-manifest`
//! replays such a run bit-identically.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
//! sampler aborts numerically or an output file cannot be written.

pub mod config;
pub mod manifest;
pub mod runner;

pub use config::{resolve, Cli, Plan, RunSpec, Sampler, TargetSpec};
pub use runner::{compare_runs, run_one};

use asvgd::Error;

/// Executes a resolved plan.
pub fn execute(plan: &Plan) -> asvgd::Result<()> {
    match plan {
        Plan::Single(spec) => runner::run_one(spec).map(|_| ()),
        Plan::Compare { root, legs } => runner::compare_runs(root, legs),
    }
}

/// Maps library errors onto the documented exit statuses.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical { .. } | Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Resolves and executes a parsed command line, returning the exit status.
pub fn run(cli: &Cli) -> i32 {
    match resolve(cli).and_then(|plan| execute(&plan)) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
