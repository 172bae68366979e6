//! Config-driven batch front-end behind the `ldrate` binary.
//!
//! ```text
//! ldrate <chain-info|rates|bridge-sample|infconv|contract|mc-verify> \
//!     --config exp.json --out results/ [--threads k] [--cache dir]
//! ```
//!
//! The seed comes from the config; `LDRATE_SEED` (or `--seed`) overrides it.

mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use config::{ChainConfig, ContractTask, ExperimentConfig, InfConvTask, McVerifyTask, RatePoint, RatesTask};
pub use run::{run, run_reporting, Artifacts, Command, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "ldrate", version, about = "Large-deviation rate functionals of finite Markov chains")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Bridge-sample cache directory.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "LDRATE_SEED")]
    pub seed: Option<u64>,
}

impl Cli {
    pub fn options(&self) -> RunOptions {
        RunOptions { config: self.config.clone(), out: self.out.clone(), threads: self.threads, cache: self.cache.clone(), seed: self.seed }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run_reporting(cli.command, &cli.options()),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
