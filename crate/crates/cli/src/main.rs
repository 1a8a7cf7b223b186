//! Command-line front end over the fitting and sampling library.
//!
//! Four subcommands: `simulate` draws a synthetic spectrum and its latent
//! counts, `fit` runs one deterministic driver, `sample` runs one chain,
//! `compare` races several drivers on the same data. All inputs are the
//! text formats from the library's io module; `--out` names a directory
//! that receives every file a subcommand writes.
//!
//! Exit codes are a contract for harnesses:
//!   0  success
//!   1  usage (bad flags, unknown algorithm, misused driver)
//!   2  input parse failure, with the file and line in the message
//!   3  plan or ordering validation failure, with the full report
//!
//! Every random quantity flows from `--seed`; apart from wall-clock
//! columns in fit traces, identical flags give byte-identical outputs.

mod commands;
mod fit_plan;
mod load;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Parse(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Runtime(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Parse(m)
            | CliError::Validation(m)
            | CliError::Runtime(m) => m,
        }
    }
}

impl From<specfit::error::FitError> for CliError {
    fn from(e: specfit::error::FitError) -> Self {
        use specfit::error::FitError;
        match e {
            FitError::Ordering(v) => CliError::Validation(v.to_string()),
            FitError::Usage(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<specfit::error::SamplerError> for CliError {
    fn from(e: specfit::error::SamplerError) -> Self {
        use specfit::error::SamplerError;
        match e {
            SamplerError::Plan(v) => CliError::Validation(v.to_string()),
            SamplerError::Usage(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<specfit::error::ModelError> for CliError {
    fn from(e: specfit::error::ModelError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "specfit", version, about = "Poisson spectral deconvolution tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic spectrum and its latent counts from a model.
    Simulate(SimulateArgs),
    /// Fit a model to a spectrum with one deterministic driver.
    Fit(FitArgs),
    /// Run one posterior chain and report mixing diagnostics.
    Sample(SampleArgs),
    /// Race several drivers on the same data, one combined trace.
    Compare(CompareArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Energy grid file.
    #[arg(long)]
    grid: String,
    /// Instrument response file.
    #[arg(long)]
    rsp: String,
    /// Model params file; its values are the simulation truth.
    #[arg(long)]
    params: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: String,
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    grid: String,
    #[arg(long)]
    rsp: String,
    /// Observed spectrum file.
    #[arg(long)]
    spectrum: String,
    /// Model params file; its values are the starting point.
    #[arg(long)]
    params: String,
    /// em | ecm | ecme | aecm | cda | nested | nested_cda | pxem | mcem
    #[arg(long)]
    alg: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Inner cycles per outer iteration (nested drivers).
    #[arg(long)]
    inner_n: Option<usize>,
    /// Imputations per iteration (mcem).
    #[arg(long)]
    mc_size: Option<usize>,
    /// Whether reduced-augmentation drivers may trim the imputation.
    #[arg(long, value_parser = ["off", "auto"])]
    amin: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: String,
    /// Step plan file overriding the algorithm's canonical cycle,
    /// `block,aug` per line.
    #[arg(long)]
    plan: Option<String>,
}

#[derive(clap::Args)]
struct SampleArgs {
    #[arg(long)]
    grid: String,
    #[arg(long)]
    rsp: String,
    #[arg(long)]
    spectrum: String,
    /// Model params file; its values start the chain.
    #[arg(long)]
    params: String,
    /// da | gibbs | blocked | pcg
    #[arg(long)]
    alg: Option<String>,
    /// Chain length; the first fifth is burn-in.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Repetitions of the non-first plan steps (blocked).
    #[arg(long)]
    inner_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: String,
    /// Sampler plan file, `draw:<vars> given:<vars> marg:<vars>` per line.
    #[arg(long)]
    plan: Option<String>,
}

#[derive(clap::Args)]
struct CompareArgs {
    #[arg(long)]
    grid: String,
    #[arg(long)]
    rsp: String,
    #[arg(long)]
    spectrum: String,
    #[arg(long)]
    params: String,
    /// Comma-separated list of fit algorithms.
    #[arg(long)]
    alg: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    inner_n: Option<usize>,
    #[arg(long)]
    mc_size: Option<usize>,
    #[arg(long, value_parser = ["off", "auto"])]
    amin: Option<String>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: String,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Simulate(args) => commands::simulate(&args),
        Cmd::Fit(args) => commands::fit(&args),
        Cmd::Sample(args) => commands::sample(&args),
        Cmd::Compare(args) => commands::compare(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
