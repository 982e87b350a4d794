//! The JSON envelope wrapped around every command's result.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use specbio::Result;

use crate::config::Config;

/// Bumped whenever the envelope or a payload changes shape.
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Numerics {
    pub symmetry_tol: f64,
    pub jacobi_tol: f64,
    pub max_sweeps: usize,
    pub pivot_floor: f64,
    pub psd_tol: f64,
    pub rank_tol: f64,
    pub bulk_fixed_point_tol: f64,
    pub bulk_max_iterations: usize,
    pub certificate_tol: f64,
    pub gap_floor: f64,
    pub reference_floor: f64,
    pub eigen_floor: f64,
}

impl Numerics {
    pub fn current() -> Self {
        use specbio::{hamiltonian as h, linalg as l, perturbation as p, prognostic as g};
        Numerics {
            symmetry_tol: l::SYMMETRY_TOL,
            jacobi_tol: l::JACOBI_TOL,
            max_sweeps: l::MAX_SWEEPS,
            pivot_floor: l::PIVOT_FLOOR,
            psd_tol: h::PSD_TOL,
            rank_tol: h::RANK_TOL,
            bulk_fixed_point_tol: h::BULK_FIXED_POINT_TOL,
            bulk_max_iterations: h::BULK_MAX_ITERATIONS,
            certificate_tol: p::CERT_TOL,
            gap_floor: p::GAP_FLOOR,
            reference_floor: p::REFERENCE_FLOOR,
            eigen_floor: g::EIGEN_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub source: Option<String>,
    pub settings: Config,
    pub numerics: Numerics,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope {
    pub schema_version: &'static str,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub arguments: Value,
    pub config: ResolvedConfig,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    pub warnings: Vec<String>,
    pub payload: Value,
}

/// Accumulates the pieces of an envelope while a command runs.
pub struct Recorder {
    command: String,
    arguments: Value,
    config: ResolvedConfig,
    inputs: Vec<InputDigest>,
    seeds: Vec<u64>,
    warnings: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str, arguments: Value, config: Config, source: Option<String>) -> Self {
        Recorder {
            command: command.to_owned(),
            arguments,
            config: ResolvedConfig {
                source,
                settings: config,
                numerics: Numerics::current(),
            },
            inputs: Vec::new(),
            seeds: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn settings(&self) -> &Config {
        &self.config.settings
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path)
            .map_err(|e| specbio::Error::Input(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        String::from_utf8(bytes).map_err(|_| specbio::Error::Input(format!("{} is not UTF-8", path.display())))
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn finish(self, payload: impl Serialize) -> Result<ReportEnvelope> {
        Ok(ReportEnvelope {
            schema_version: SCHEMA_VERSION,
            tool: "specbio",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            arguments: self.arguments,
            config: self.config,
            inputs: self.inputs,
            seeds: self.seeds,
            warnings: self.warnings,
            payload: serde_json::to_value(payload)?,
        })
    }
}
