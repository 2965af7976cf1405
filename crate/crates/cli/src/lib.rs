//! Batch driver for the heatlab verifications.

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run, Command, RunError};
pub use config::{ConfigError, PotentialKind, ScenarioConfig};
pub use report::{Check, Outcome};

/// Exit status when every verdict passes.
pub const EXIT_PASS: i32 = 0;
/// Exit status when a verification fails.
pub const EXIT_FAIL: i32 = 1;
/// Exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "heatlab", version, about = "Weighted-norm verifications for heat equations with complex potentials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Sub {
    /// Build and certify the first weight family and the limit family.
    ConstructWeights,
    /// Run the weight iteration and record its trace.
    Iterate,
    /// Evolve Gaussian data and check the solver.
    Evolve,
    /// Check the log-convexity bound on a computed trajectory.
    VerifyConvexity,
    /// Check the weighted bound and its stability under refinement.
    VerifyBound,
    /// Probe the extremal solution with weights near the threshold.
    Sharpness,
    /// Run every scenario, each into its own directory.
    All,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::ConstructWeights => Command::ConstructWeights,
            Sub::Iterate => Command::Iterate,
            Sub::Evolve => Command::Evolve,
            Sub::VerifyConvexity => Command::VerifyConvexity,
            Sub::VerifyBound => Command::VerifyBound,
            Sub::Sharpness => Command::Sharpness,
            Sub::All => Command::All,
        }
    }
}

/// Overrides applied on top of `--config`. Values go through
/// [`ScenarioConfig::set`] so flags and files are validated alike.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<String>,
    #[arg(long = "R", global = true, allow_hyphen_values = true)]
    pub r: Option<String>,
    #[arg(long = "K", global = true, allow_hyphen_values = true)]
    pub k: Option<String>,
    /// Overrides the command's primary tolerance.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol: Option<String>,
    #[arg(long = "grid-M", global = true, allow_hyphen_values = true)]
    pub grid_m: Option<String>,
    #[arg(long = "box-L", global = true, allow_hyphen_values = true)]
    pub box_l: Option<String>,
    #[arg(long = "grid-N", global = true, allow_hyphen_values = true)]
    pub grid_n: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub steps: Option<String>,
    /// none, gauss-real or gauss-imag.
    #[arg(long, global = true)]
    pub potential: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub amplitude: Option<String>,
    #[arg(long = "gamma-factor", global = true, allow_hyphen_values = true)]
    pub gamma_factor: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub xi: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub epsilon: Option<String>,
    /// Time slice for `sharpness`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub t: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also write `plot.svg` next to the CSV outputs.
    #[arg(long, global = true)]
    pub plot: bool,
}

impl Flags {
    pub fn to_config(&self) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs = [
            ("delta", &self.delta),
            ("R", &self.r),
            ("K", &self.k),
            ("tol", &self.tol),
            ("grid-M", &self.grid_m),
            ("box-L", &self.box_l),
            ("grid-N", &self.grid_n),
            ("steps", &self.steps),
            ("potential", &self.potential),
            ("amplitude", &self.amplitude),
            ("gamma-factor", &self.gamma_factor),
            ("xi", &self.xi),
            ("epsilon", &self.epsilon),
            ("t", &self.t),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if self.plot {
            cfg.plot = true;
        }
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    let cfg = match cli.flags.to_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("heatlab: {e}");
            return EXIT_CONFIG;
        }
    };
    let command = Command::from(cli.command);
    match run(command, &cfg) {
        Ok(outcome) => {
            println!("{} {}", command.name(), outcome.verdict_line());
            if outcome.pass() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(RunError::Config(msg)) => {
            eprintln!("heatlab: {msg}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("heatlab: {e}");
            EXIT_FAIL
        }
    }
}
