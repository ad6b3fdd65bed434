mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Stein–Malliavin normal-approximation experiments.
#[derive(Debug, Parser)]
#[command(name = "sml", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the covariance decay C(T) ~ M T^-alpha and report it as JSON.
    Covfit(CovfitArgs),
    /// Simulate F_T = V~(T)^-1/2 int f(X_t) dt over several horizons.
    CltSweep(CltSweepArgs),
    /// Distance to normality of standardized small-jump integrals.
    Smalljump(SmalljumpArgs),
    /// Fractional Lévy paths N^eps + sigma(eps) B^H with a kernel check.
    Flp(FlpArgs),
    /// Wiener OU times Poisson OU: variance, bound terms and rate.
    OuProduct(OuProductArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ModelKind {
    Fgn,
    FracOu,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "fgn")]
    pub model: ModelKind,
    #[arg(long)]
    pub hurst: Option<f64>,
    /// Mean-reversion rate of the fractional OU model.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// CSV file with header `lag,value`.
    #[arg(long)]
    pub table: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum MeasureKind {
    Atoms,
    PowerLaw,
    Table,
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    #[arg(long, value_enum, default_value = "atoms")]
    pub measure: MeasureKind,
    /// Atom list `x1:w1,x2:w2,...`.
    #[arg(long, default_value = "-1:0.5,1:0.5")]
    pub atoms: String,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// CSV file with header `x,density`.
    #[arg(long)]
    pub density: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Replicates per configuration.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Flat `key = value` file supplying defaults for any long flag.
    #[arg(long)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CovfitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e4)]
    pub tmax: f64,
    /// Also write the report (and a manifest) to this path.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CltSweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Subordinator: x, x2, x3, x+x2, cos or tanh.
    #[arg(long, default_value = "x")]
    pub f: String,
    #[arg(long, alias = "T", value_delimiter = ',', required = true)]
    pub horizons: Vec<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub dt: f64,
    #[arg(long, default_value_t = 1e4)]
    pub tmax: f64,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct SmalljumpArgs {
    #[command(flatten)]
    pub measure: MeasureArgs,
    #[arg(long, alias = "epsilon", value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    /// Time horizon of the jump integral.
    #[arg(long, default_value_t = 0.01)]
    pub t: f64,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct FlpArgs {
    #[arg(long)]
    pub hurst: f64,
    #[command(flatten)]
    pub measure: MeasureArgs,
    #[arg(long, alias = "epsilon")]
    pub eps: f64,
    /// Grid points on [0, horizon], including 0.
    #[arg(long, default_value_t = 129)]
    pub points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[command(flatten)]
    pub run: RunArgs,
    /// Path file: CSV when the name ends in `.csv`, otherwise an FLP1 block.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct OuProductArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub measure: MeasureArgs,
    #[arg(long, alias = "T", value_delimiter = ',', required = true)]
    pub horizons: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub out: String,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("sml: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sml: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
