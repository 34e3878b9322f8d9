//! Command-line experiments on toy distributions: train a noise-conditional
//! score network, sample and inpaint with Langevin dynamics, evaluate the
//! learned field, and rerun the three reference studies.
//!
//! Every command writes CSV artifacts (plus PNG previews) into `--out` and
//! exits 0 on success, 2 on configuration errors, 3 on numerical failures
//! and 4 on I/O errors, printing a single `error kind=... code=...` line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod repro;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
use output::OutDir;

/// `key=value` pairs printed to stdout after a successful command.
pub type Report = Vec<(String, String)>;

/// RNG stream layout. Training itself draws from stream 0 (batches) and
/// stream 1 (gradient probes) of the seed.
pub mod streams {
    pub const INIT: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const EVAL_POINTS: u64 = 4;
    pub const EXACT: u64 = 10;
    pub const VANILLA: u64 = 11;
    pub const ANNEALED: u64 = 12;
}

#[derive(Debug, Parser)]
#[command(
    name = "ncsn",
    version,
    about = "Score-based generative modeling on toy distributions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit a noise-conditional score network to the configured mixture.
    Train,
    /// Draw samples with annealed Langevin dynamics.
    Sample,
    /// Fill in unobserved coordinates given observed ones.
    Inpaint,
    /// Mode weights, score-field error and per-level score magnitudes.
    Eval,
    /// Rerun one of the reference studies.
    Repro {
        #[command(subcommand)]
        study: Study,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Study {
    /// Score-field accuracy near and away from the modes.
    Fig2,
    /// Mode weights of exact, plain Langevin and annealed Langevin samples.
    Fig3,
    /// Loss curves on a clean and a perturbed one-dimensional manifold.
    Manifold,
}

/// Resolves the config and overrides, then runs the command.
pub fn run(cli: &Cli) -> CliResult<Report> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let (_, Some(warning)) = cfg.schedule()? {
        eprintln!("warning: {warning}");
    }
    let out = OutDir::create(&cfg.out_dir())?;
    match cli.command {
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Sample => commands::cmd_sample(&cfg, &out),
        Command::Inpaint => commands::cmd_inpaint(&cfg, &out),
        Command::Eval => commands::cmd_eval(&cfg, &out),
        Command::Repro { study: Study::Fig2 } => repro::fig2(&cfg, &out),
        Command::Repro { study: Study::Fig3 } => repro::fig3(&cfg, &out),
        Command::Repro {
            study: Study::Manifold,
        } => repro::manifold(&cfg, &out),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<Report>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        CliError::config(
            e.to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .to_string(),
        )
    })?;
    run(&cli)
}

/// Raises glibc's mmap and trim thresholds. The engine allocates and frees
/// many large buffers per iteration; with the default dynamic thresholds
/// each one round-trips through mmap and page faults dominate run time.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables and is called before
    // any threads are spawned.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli =
            Cli::try_parse_from(["ncsn", "repro", "fig3", "--seed", "7", "--out", "x"]).unwrap();
        assert_eq!(cli.command, Command::Repro { study: Study::Fig3 });
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn unknown_subcommand_is_config_error() {
        let err = run_args(["ncsn", "fig9"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
