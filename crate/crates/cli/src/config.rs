//! TOML config files. Keys mirror the long flags (with underscores); any
//! flag given on the command line overrides the file.

use std::path::Path;

use orthocav::format::read_file;
use orthocav::CavError;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::args::{Method, Mode, OptimizerArg};

/// Missing file means all defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CavError> {
    path.map_or_else(|| Ok(T::default()), parse)
}

pub fn parse<T: DeserializeOwned>(path: &Path) -> Result<T, CavError> {
    let bytes = read_file(path)?;
    let label = path.display().to_string();
    let text = String::from_utf8(bytes).map_err(|_| CavError::Parse {
        context: label.clone(),
        message: "config is not UTF-8".into(),
    })?;
    toml::from_str(&text).map_err(|e| CavError::Parse {
        context: label,
        message: e.message().to_owned(),
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub method: Option<Method>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrthFile {
    pub random_seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub pairs: Option<String>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub eval_every: Option<usize>,
    pub min_avg_auroc: Option<f64>,
    pub max_avg_drop: Option<f64>,
    pub max_single_drop: Option<f64>,
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerFile {
    pub target: Option<String>,
    pub mode: Option<Mode>,
    pub step: Option<f64>,
    pub sweep: Option<String>,
    pub tau: Option<f64>,
}
