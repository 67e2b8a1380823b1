//! Command-line runner for Boltzmann tuning experiments.
//!
//! Every run reads one JSON [`config::RunConfig`], writes CSV and JSON
//! artifacts to an output directory, and exits with 0 (success), 2 (the β
//! search hit its iteration cap; artifacts are still written) or 1 (invalid
//! configuration or runtime error).

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod problem;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::Outcome;
use config::{Command, OracleSpec, RunConfig, Seeds};
use output::OutDir;

/// Environment variable holding the log filter (`error` … `trace`).
pub const LOG_ENV: &str = "BTUNE_LOG";

#[derive(Debug, Parser)]
#[command(name = "btune", version, about = "Boltzmann tuning of generative models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces the three configured seeds with N, N+1, N+2.
    #[arg(long, value_name = "N")]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Search β for a target and fit the tuned model.
    Tune(RunArgs),
    /// Warm-started fits along a β grid.
    Pareto(RunArgs),
    /// Compare candidate criteria by their gradient-norm profiles.
    Diagnose(RunArgs),
    /// Evaluate an oracle from a config file or from arguments.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed_override: Option<u64>,
    #[command(subcommand)]
    pub which: Option<OracleCmd>,
}

#[derive(Debug, Subcommand)]
pub enum OracleCmd {
    /// Closed-form tilt of a diagonal Gaussian by a linear criterion.
    Tilt {
        #[arg(long)]
        beta: f64,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        mean: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        var: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        a: Vec<f64>,
    },
    /// Random trials of the latent KL bound.
    KlBound {
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        latent_dim: usize,
        #[arg(long, default_value_t = 1)]
        data_dim: usize,
    },
}

fn resolve_out(arg: Option<&Path>, cfg: &RunConfig) -> Result<OutDir> {
    let dir = match arg {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(cfg.output.dir.as_ref().context("no --out given and no output.dir in the config")?),
    };
    OutDir::create(&dir)
}

fn seeds_for(cfg: &mut RunConfig, over: Option<u64>) -> Seeds {
    if let Some(n) = over {
        cfg.seeds = Seeds::from_override(n);
    }
    cfg.seeds
}

fn run_command(cmd: &Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Tune(a) | Cmd::Pareto(a) | Cmd::Diagnose(a) => {
            let kind = match cmd {
                Cmd::Tune(_) => Command::Tune,
                Cmd::Pareto(_) => Command::Pareto,
                _ => Command::Diagnose,
            };
            let mut cfg = RunConfig::load(&a.config)?;
            let seeds = seeds_for(&mut cfg, a.seed_override);
            cfg.validate(kind)?;
            let out = resolve_out(a.out.as_deref(), &cfg)?;
            match kind {
                Command::Tune => commands::tune::run(&cfg, seeds, &out),
                Command::Pareto => commands::pareto::run(&cfg, seeds, &out),
                _ => commands::diagnose::run(&cfg, seeds, &out),
            }
        }
        Cmd::Oracle(a) => {
            let (spec, mut seeds, out_cfg) = match (&a.which, &a.config) {
                (Some(w), _) => {
                    let spec = match w {
                        OracleCmd::Tilt { beta, mean, var, a } => OracleSpec::Tilt {
                            mean: mean.clone(),
                            var: var.clone(),
                            a: a.clone(),
                            beta: *beta,
                        },
                        OracleCmd::KlBound {
                            trials,
                            latent_dim,
                            data_dim,
                        } => OracleSpec::KlBound {
                            trials: *trials,
                            latent_dim: *latent_dim,
                            data_dim: *data_dim,
                        },
                    };
                    (spec, Seeds::default(), None)
                }
                (None, Some(path)) => {
                    let cfg = RunConfig::load(path)?;
                    cfg.validate(Command::Oracle)?;
                    (cfg.oracle.clone().unwrap(), cfg.seeds, cfg.output.dir.clone())
                }
                (None, None) => anyhow::bail!("oracle: give --config or an oracle subcommand"),
            };
            if let Some(n) = a.seed_override {
                seeds = Seeds::from_override(n);
            }
            let out = match (&a.out, out_cfg) {
                (Some(p), _) => Some(OutDir::create(p)?),
                (None, Some(d)) => Some(OutDir::create(Path::new(&d))?),
                _ => None,
            };
            commands::oracle::run(&spec, seeds, out.as_ref())
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_command(&cli.command) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::NotConverged) => {
            eprintln!("btune: beta search stopped at the iteration cap without meeting the target");
            2
        }
        Err(e) => {
            eprintln!("btune: error: {e:#}");
            1
        }
    }
}
