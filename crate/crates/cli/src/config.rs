//! Run configuration: built-in defaults, optionally overlaid by a TOML file
//! given with `--config` or the `SPECBIO_CONFIG` environment variable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specbio::synth::{RegimeSpec, SpikedSpec, TwoGroupSpec};
use specbio::transfer::TransferPolicy;
use specbio::{Error, Result};

pub const CONFIG_ENV: &str = "SPECBIO_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    /// `auto` or a positive number.
    pub sigma2: String,
    pub top_k: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            sigma2: "auto".into(),
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermoConfig {
    pub grid: String,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        ThermoConfig {
            grid: "default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub ridge: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceConfig {
    pub r: usize,
    pub ridge: f64,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig { r: 2, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub r: usize,
    pub policy: TransferPolicy,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            r: 1,
            policy: TransferPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub regime: RegimeSpec,
    pub spiked: SpikedSpec,
    pub two_group: TwoGroupSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub score: ScoreConfig,
    pub thermo: ThermoConfig,
    pub perturb: PerturbConfig,
    pub transfer: TransferConfig,
    pub reduce: ReduceConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }

    /// The explicit path wins over the environment variable; with neither,
    /// built-in defaults apply. Returns the file that was read, if any.
    pub fn resolve(explicit: Option<&Path>) -> Result<(Config, Option<PathBuf>)> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
        match path {
            None => Ok((Config::default(), None)),
            Some(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| Error::Input(format!("cannot read config {}: {e}", p.display())))?;
                Ok((Config::parse(&text)?, Some(p)))
            }
        }
    }
}
