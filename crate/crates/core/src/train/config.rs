//! Flat experiment configuration, loadable from JSON with per-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};
use sha2::{Digest, Sha256};

use super::adam::AdamConfig;
use super::TrainError;
use crate::objectives::{LossConfig, PairReduction};
use crate::pairs::Strategy;
use crate::scorer::Activation;
use crate::synth::DatasetConfig;

/// Every knob of one training run. Serialized as a single flat JSON object
/// whose keys are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub rank_temperature: Option<f64>,
    pub sign_temperature: Option<f64>,
    pub lambda: f64,
    pub p_norm: f64,
    pub enable_r: bool,
    pub enable_rho: bool,
    pub enable_tau: bool,
    pub pair_reduction: PairReduction,
    /// Upper bound on pairs per step; `None` uses every pair.
    pub pair_cap: Option<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Drives weight initialisation and mini-batch sampling.
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Read samples from this CSV instead of generating them.
    pub dataset_csv: Option<PathBuf>,
    pub n_contents: usize,
    pub n_types: usize,
    pub n_severities: usize,
    pub feature_noise_sd: f64,
    pub mos_noise_sd: f64,
    pub content_dim: usize,
    pub data_seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        let data = DatasetConfig::default();
        let adam = AdamConfig::default();
        Self {
            strategy: Strategy::AllDiffering,
            temperature: loss.temperature,
            rank_temperature: loss.rank_temperature,
            sign_temperature: loss.sign_temperature,
            lambda: loss.lambda,
            p_norm: loss.p_norm,
            enable_r: loss.enable_r,
            enable_rho: loss.enable_rho,
            enable_tau: loss.enable_tau,
            pair_reduction: loss.pair_reduction,
            pair_cap: None,
            lr: 1e-4,
            batch_size: 64,
            epochs: 30,
            adam_betas: (adam.beta1, adam.beta2),
            adam_eps: adam.eps,
            seed: 0,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            dataset_csv: None,
            n_contents: data.n_contents,
            n_types: data.n_types,
            n_severities: data.n_severities,
            feature_noise_sd: data.feature_noise_sd,
            mos_noise_sd: data.mos_noise_sd,
            content_dim: data.content_dim,
            data_seed: data.seed,
            train_fraction: 0.7,
            split_seed: 0,
        }
    }
}

fn config_err(msg: impl Into<String>) -> TrainError {
    TrainError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            rank_temperature: self.rank_temperature,
            sign_temperature: self.sign_temperature,
            lambda: self.lambda,
            p_norm: self.p_norm,
            enable_r: self.enable_r,
            enable_rho: self.enable_rho,
            enable_tau: self.enable_tau,
            pair_reduction: self.pair_reduction,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            n_contents: self.n_contents,
            n_types: self.n_types,
            n_severities: self.n_severities,
            feature_noise_sd: self.feature_noise_sd,
            mos_noise_sd: self.mos_noise_sd,
            content_dim: self.content_dim,
            seed: self.data_seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(config_err(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(config_err("epochs must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(config_err(format!("adam_betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(config_err("adam_eps must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(config_err("hidden widths must be positive"));
        }
        if self.pair_cap == Some(0) {
            return Err(config_err("pair_cap must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.dataset_csv.is_none() {
            self.dataset()
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        Ok(())
    }

    fn to_map(&self) -> Map<String, Json> {
        match serde_json::to_value(self) {
            Ok(Json::Object(map)) => map,
            _ => unreachable!("config serializes to an object"),
        }
    }

    fn from_map(map: Map<String, Json>) -> Result<Self, TrainError> {
        serde_json::from_value(Json::Object(map)).map_err(|e| config_err(e.to_string()))
    }

    /// Parse a JSON object; missing keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replace `key` with `value`. The value is read as JSON when it parses,
    /// otherwise as a bare string, so `strategy=all-similar` and `lr=0.01`
    /// both work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let mut map = self.to_map();
        if !map.contains_key(key) {
            return Err(config_err(format!("unknown config key `{key}`")));
        }
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Json::String(value.into()));
        map.insert(key.to_string(), parsed);
        *self = Self::from_map(map).map_err(|e| config_err(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Canonical JSON: keys sorted, shortest round-trip floats.
    pub fn canonical_json(&self) -> String {
        // serde_json's map is ordered by key
        Json::Object(self.to_map()).to_string()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON with the
    /// seed removed, so every seed of one grid cell shares a hash.
    pub fn config_hash(&self) -> String {
        let mut map = self.to_map();
        map.remove("seed");
        let digest = Sha256::digest(Json::Object(map).to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.temperature, 0.01);
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.p_norm, 1.0);
        assert_eq!(c.adam_betas, (0.9, 0.999));
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ExperimentConfig {
            strategy: Strategy::FixedSimilar,
            lr: 3e-3,
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        let partial = ExperimentConfig::from_json(r#"{"batch_size": 8, "strategy": "all-similar"}"#).unwrap();
        assert_eq!(partial.batch_size, 8);
        assert_eq!(partial.strategy, Strategy::AllSimilar);
        assert_eq!(partial.epochs, 30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"learning_rate": 1}"#).is_err());
        let mut c = ExperimentConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("batch_size", "\"many\"").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.set("strategy", "fixed-similar").unwrap();
        c.set("lr", "0.01").unwrap();
        c.set("enable_tau", "false").unwrap();
        c.set("adam_betas", "[0.8, 0.99]").unwrap();
        assert_eq!(c.strategy, Strategy::FixedSimilar);
        assert_eq!(c.lr, 0.01);
        assert!(!c.enable_tau);
        assert_eq!(c.adam_betas, (0.8, 0.99));
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seed: 9,
            ..a.clone()
        };
        let c = ExperimentConfig {
            lambda: 0.5,
            ..a.clone()
        };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }

    #[test]
    fn invalid_values() {
        for (k, v) in [
            ("lr", "0"),
            ("batch_size", "1"),
            ("epochs", "0"),
            ("temperature", "-1"),
            ("train_fraction", "1"),
            ("adam_betas", "[1.0, 0.5]"),
        ] {
            let mut c = ExperimentConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }
}
