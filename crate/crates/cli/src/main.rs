mod commands;
mod config;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use specbio::ErrorClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pca,
    Lda,
    Cca,
}

/// Spectral analysis of biomarker covariance.
#[derive(Debug, Parser, Serialize)]
#[command(name = "specbio", version, about)]
pub struct Cli {
    /// TOML configuration file (overrides $SPECBIO_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output format; csv is available for tabular results.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write the report here instead of stdout.
    #[arg(long, short = 'o', global = true)]
    pub output: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Build a model from a cohort CSV.
    Fit {
        cohort: PathBuf,
        /// Model JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectral fingerprint of a disease model against a reference.
    Perturb {
        reference: PathBuf,
        disease: PathBuf,
        /// Also solve H_d v = nu (H_0 + ridge I) v.
        #[arg(long)]
        discriminant: bool,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Prognostic scores of patients against a disease model.
    Score {
        model: PathBuf,
        patients: PathBuf,
        /// `auto` (bulk estimate) or a positive value.
        #[arg(long)]
        sigma2: Option<String>,
        /// Also compute the direct log-likelihood ratio and check Pi - l is constant.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Transfer diagnostics between a source and a target model.
    Transfer {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        r: Option<usize>,
    },
    /// Partition function and free energy over a beta grid.
    Thermo {
        model: PathBuf,
        /// `default`, `log:LO:HI:N`, or comma-separated values.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Generate a synthetic cohort.
    #[command(group(ArgGroup::new("kind").required(true).args(["regime", "spiked", "two_group"])))]
    Synth {
        /// no_interdependency | healthy_coordination | gain_of_coordination | loss_of_coordination
        #[arg(long)]
        regime: Option<String>,
        /// Comma-separated spike strengths (empty for the pure null).
        #[arg(long)]
        spiked: Option<String>,
        #[arg(long)]
        two_group: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cohort CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Sidecar JSON (default: OUT with extension .sidecar.json).
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        rate: Option<f64>,
    },
    /// PCA, LDA or CCA through the spectral machinery.
    Reduce {
        #[arg(long, value_enum)]
        method: Method,
        /// One cohort for pca; two for lda (healthy, disease) and cca (X, Y).
        #[arg(required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        r: Option<usize>,
        #[arg(long)]
        ridge: Option<f64>,
    },
}

pub fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Input => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Certificate => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(text) => {
            let written = match &cli.output {
                Some(path) => std::fs::write(path, &text),
                None => std::io::stdout().write_all(text.as_bytes()),
            };
            if let Err(e) = written {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
