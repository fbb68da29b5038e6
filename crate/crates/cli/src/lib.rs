//! The `tyc` command line: fit, analyze, simulate, optimize and compare.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Bundled, Output};
use crate::config::{Overrides, ScenarioConfig};
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tyc", version, about = "Sex-ratio control models for invasive populations")]
pub struct Cli {
    /// Scenario file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write an SVG plot (simulate, optimize, compare).
    #[arg(long, global = true)]
    pub plot: bool,
    /// Seed for the random perturbation check of `optimize`.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Override the time step of the config.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Override the eradication threshold of the config.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit beta, delta and K to a `t,count` or `t,f,m` CSV.
    Fit {
        data: Option<PathBuf>,
        /// Use one of the bundled synthetic datasets instead of a file.
        #[arg(long, value_enum)]
        bundled: Option<Bundled>,
    },
    /// Equilibria, their stability and the global extinction condition.
    Analyze,
    /// Forward run with the constant controls of the config.
    Simulate,
    /// Optimal time-varying control by the forward-backward sweep.
    Optimize {
        /// Random feasible perturbations used to check optimality.
        #[arg(long, default_value_t = 20)]
        perturbations: usize,
    },
    /// Optimal strategies of several models side by side.
    Compare {
        /// Comma-separated models or ranges, e.g. `tyc0,fhms1` or `1-6`.
        #[arg(long, conflicts_with = "all_models")]
        models: Option<String>,
        /// All seven models (the default).
        #[arg(long)]
        all_models: bool,
    },
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        dt: cli.dt,
        epsilon: cli.epsilon,
    };
    let cfg = ScenarioConfig::load(cli.config.as_deref(), overrides)?;
    let out = Output {
        dir: cli.out_dir.clone(),
        plot: cli.plot,
    };
    match &cli.command {
        Command::Fit { data, bundled } => commands::fit(&cfg, data.as_deref(), *bundled, &out),
        Command::Analyze => commands::analyze(&cfg, &out),
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Optimize { perturbations } => commands::optimize(&cfg, cli.seed, *perturbations, &out),
        Command::Compare { models, .. } => {
            let ids = match models {
                Some(text) => commands::parse_models(text)?,
                None => tyc_core::ModelId::ALL.to_vec(),
            };
            commands::compare(&cfg, &ids, &out)
        }
    }
}
