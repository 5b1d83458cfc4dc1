//! `cspez`: batch runs for engagement-zone geometry, probability estimators,
//! surrogate training and chance-constrained planning.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cspez_core::Method;

use crate::config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "cspez", version, about = "Curve-straight probabilistic engagement zones and chance-constrained planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zone function z at the mean pursuer over the configured grid (CSV).
    CsbezGrid(Common),
    /// Probability level sets over the grid for each method with errors against Monte Carlo (CSV).
    CspezEval(Common),
    /// Error metrics of each estimator against Monte Carlo on random configurations (CSV).
    Compare(Common),
    /// Median absolute error per covariance-trace bin (CSV).
    TraceBins(Common),
    /// Monte Carlo labelled training data (binary columns plus a JSON sidecar).
    Label(Common),
    /// Trains the surrogate network (model file plus a JSON report).
    Train {
        #[command(flatten)]
        common: Common,
        /// Labelled data from `label`; overrides `surrogate.dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Plans one trajectory and validates it (JSON).
    Plan(Common),
    /// Plans every method and threshold combination (CSV).
    Table2(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML or JSON scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// linear, quadratic, nn or mc.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Trained surrogate; overrides `surrogate.model`.
    #[arg(long)]
    model: Option<PathBuf>,
}

/// A failed run and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const INFEASIBLE: u8 = 4;

    pub fn config(m: impl Into<String>) -> Self {
        Self {
            code: Self::CONFIG,
            message: m.into(),
        }
    }

    pub fn infeasible(m: impl Into<String>) -> Self {
        Self {
            code: Self::INFEASIBLE,
            message: m.into(),
        }
    }
}

impl From<cspez_core::Error> for Failure {
    fn from(e: cspez_core::Error) -> Self {
        use cspez_core::Error as E;
        let code = match e {
            E::InvalidArgument(_) | E::RangeConfig(_) | E::Model(_) => Self::CONFIG,
            E::Io(_) => Self::IO,
            _ => Self::NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: Self::IO,
            message: e.to_string(),
        }
    }
}

impl Common {
    /// Loads the configuration and applies the flag overrides.
    fn resolve(&self) -> Result<ScenarioConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).map_err(Failure::config)?,
            None => ScenarioConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w.max(1);
        }
        if let Some(m) = self.method {
            cfg.planner.method = m;
            cfg.eval.methods = vec![m];
        }
        if let Some(e) = self.epsilon {
            cfg.planner.epsilon = e;
        }
        if let Some(m) = &self.model {
            cfg.surrogate.model = Some(m.clone());
        }
        cfg.check().map_err(Failure::config)?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::CsbezGrid(c) => commands::csbez_grid(&c.resolve()?, c.out.as_deref()),
        Command::CspezEval(c) => commands::cspez_eval(&c.resolve()?, c.out.as_deref()),
        Command::Compare(c) => commands::compare(&c.resolve()?, c.out.as_deref()),
        Command::TraceBins(c) => commands::trace_bins(&c.resolve()?, c.out.as_deref()),
        Command::Label(c) => commands::label(&c.resolve()?, c.out.as_deref()),
        Command::Train { common, dataset } => {
            let mut cfg = common.resolve()?;
            if dataset.is_some() {
                cfg.surrogate.dataset = dataset;
            }
            commands::train(&cfg, common.out.as_deref())
        }
        Command::Plan(c) => commands::plan(&c.resolve()?, c.out.as_deref()),
        Command::Table2(c) => commands::table2(&c.resolve()?, c.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
