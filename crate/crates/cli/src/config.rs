//! JSON config file. Every section is optional and mirrors the flags:
//!
//! ```json
//! {
//!   "features": { "variant": "Filterbank", "n_mels": 64 },
//!   "suppression": { "mode": "adaptive", "a": 1.0, "b": 0.0, "beta": 0.8 },
//!   "loss": { "alpha": 10.0, "noise_head_weight": 0.1 },
//!   "train": { "learning_rate": 0.001, "steps": 300 },
//!   "mix": { "snr_lo_db": 1.0, "snr_hi_db": 10.0 },
//!   "eval": { "epsilon": 0.05 },
//!   "threads": 4
//! }
//! ```

use std::path::Path;

use serde::Deserialize;
use vflite::dataset::MixOptions;
use vflite::eval::EvalOptions;
use vflite::suppression::SuppressionConfig;
use vflite::training::{LossConfig, TrainConfig};
use vflite::{Error, FeatureConfig, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuppressionKeys {
    pub mode: String,
    pub w: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub features: Option<FeatureConfig>,
    pub suppression: Option<SuppressionKeys>,
    pub loss: Option<LossConfig>,
    pub train: Option<TrainConfig>,
    pub mix: Option<MixOptions>,
    pub eval: Option<EvalOptions>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn suppression(&self) -> Result<SuppressionConfig> {
        match &self.suppression {
            None => Ok(SuppressionConfig::default()),
            Some(k) => SuppressionConfig::from_keys(&k.mode, k.w, k.a, k.b, k.beta),
        }
    }
}
