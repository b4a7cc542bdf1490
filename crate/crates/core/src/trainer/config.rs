use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classgmm::{CovarianceType, MUSDB_CLASSES};
use crate::dsp::Window;
use crate::error::{Error, Result};
use crate::features::FrontendConfig;
use crate::losses::LossWeights;
use crate::system::{ModelKind, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub classes: Vec<String>,
    pub frontend: FrontendConfig,
    pub network: NetworkConfig,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub device: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

/// Keys accepted by [`TrainConfig::set`] and the flat config file.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "model",
    "covariance",
    "classes",
    "sample_rate",
    "window_size",
    "hop_size",
    "window",
    "mel_bins",
    "fmin",
    "fmax",
    "floor_db",
    "normalize",
    "gate_db",
    "layers",
    "hidden_units",
    "embedding_dim",
    "unit_normalize",
    "dc_weight",
    "l1_weight",
    "batch_size",
    "learning_rate",
    "max_epochs",
    "patience",
    "grad_clip",
    "seed",
    "device",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    /// Full-size network and 48 kHz frontend.
    pub fn full_scale() -> Self {
        Self {
            model: ModelKind::Gmm {
                covariance: CovarianceType::TiedSpherical,
            },
            classes: MUSDB_CLASSES.iter().map(|s| s.to_string()).collect(),
            frontend: FrontendConfig::full_scale(),
            network: NetworkConfig::full_scale(),
            loss_weights: LossWeights::default(),
            batch_size: 8,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            grad_clip: 5.0,
            seed: 0,
            device: "cpu".into(),
        }
    }

    /// Reduced network and 16 kHz frontend for CPU-sized experiments.
    pub fn desk_scale() -> Self {
        Self {
            frontend: FrontendConfig::desk_scale(),
            network: NetworkConfig::desk_scale(),
            max_epochs: 30,
            ..Self::full_scale()
        }
    }

    /// Loss weights actually used: the baseline has no embeddings, so it
    /// trains on the mask loss alone.
    pub fn effective_loss_weights(&self) -> LossWeights {
        if self.model.is_baseline() {
            LossWeights { dc: 0.0, l1: 1.0 }
        } else {
            self.loss_weights
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and nonnegative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be nonnegative".into()));
        }
        if self.device != "cpu" {
            return Err(Error::Config(format!("unsupported device `{}` (only cpu)", self.device)));
        }
        crate::classgmm::class_labels(&self.classes)?;
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.frontend;
        let n = &mut self.network;
        match key {
            "preset" => {
                *self = match value {
                    "full" => Self::full_scale(),
                    "desk" => Self::desk_scale(),
                    _ => return Err(Error::Config(format!("unknown preset `{value}` (full or desk)"))),
                }
            }
            "model" if value == "baseline" => self.model = ModelKind::Baseline,
            "model" | "covariance" => {
                self.model = ModelKind::Gmm {
                    covariance: value.parse()?,
                }
            }
            "classes" => self.classes = value.split(',').map(|s| s.trim().to_string()).collect(),
            "sample_rate" => f.sample_rate = parse(key, value)?,
            "window_size" => f.window_size = parse(key, value)?,
            "hop_size" => f.hop_size = parse(key, value)?,
            "window" => {
                f.window = match value {
                    "sqrt-hann" => Window::SqrtHann,
                    "hann" => Window::Hann,
                    "rectangular" => Window::Rectangular,
                    _ => return Err(Error::Config(format!("unknown window `{value}`"))),
                }
            }
            "mel_bins" => f.mel_bins = parse(key, value)?,
            "fmin" => f.fmin = parse(key, value)?,
            "fmax" => f.fmax = parse(key, value)?,
            "floor_db" => f.floor_db = parse(key, value)?,
            "normalize" => f.normalize = parse_bool(key, value)?,
            "gate_db" => f.gate_db = parse(key, value)?,
            "layers" => n.num_recurrent_layers = parse(key, value)?,
            "hidden_units" => n.hidden_units_per_direction = parse(key, value)?,
            "embedding_dim" => n.embedding_dim = parse(key, value)?,
            "unit_normalize" => n.unit_normalize = parse_bool(key, value)?,
            "dc_weight" => self.loss_weights.dc = parse(key, value)?,
            "l1_weight" => self.loss_weights.l1 = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "device" => self.device = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `#` starts a comment. A `preset` line
    /// is applied before every other key regardless of its position.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        for (k, v) in pairs.iter().filter(|(k, _)| k == "preset") {
            cfg.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_file() {
        let cfg = TrainConfig::from_kv_str(
            "# desk run\nmax_epochs = 5\npreset = desk\nmodel = diag\nclasses = a, b\nnormalize = off\n",
        )
        .unwrap();
        assert_eq!(cfg.max_epochs, 5);
        assert_eq!(cfg.frontend.sample_rate, 16_000);
        assert_eq!(cfg.model, ModelKind::Gmm { covariance: CovarianceType::Diagonal });
        assert_eq!(cfg.classes, ["a", "b"]);
        assert!(!cfg.frontend.normalize);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_kv_str("nonsense").is_err());
        assert!(TrainConfig::from_kv_str("frobnicate = 1").is_err());
        assert!(TrainConfig::from_kv_str("covariance = full").is_err());
        assert!(TrainConfig::from_kv_str("batch_size = -1").is_err());
        let mut cfg = TrainConfig::desk_scale();
        cfg.set("dc_weight", "0.7").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("l1_weight", "0.3").unwrap();
        cfg.validate().unwrap();
        cfg.set("device", "gpu").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "preset" => "desk",
            "model" => "baseline",
            "covariance" => "sphr",
            "classes" => "x,y",
            "window" => "hann",
            "normalize" | "unit_normalize" => "true",
            "device" => "cpu",
            _ => "3",
        };
        for key in CONFIG_KEYS {
            let mut cfg = TrainConfig::default();
            cfg.set(key, sample(key)).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn baseline_ignores_dc() {
        let mut cfg = TrainConfig::desk_scale();
        cfg.model = ModelKind::Baseline;
        assert_eq!(cfg.effective_loss_weights(), LossWeights { dc: 0.0, l1: 1.0 });
    }
}
