//! Run configuration: defaults carry the published hyperparameter values
//! (k=4, embedding dim 16, mu=0.15, batches 64, lr 0.001, momentum 0.9,
//! weight decay 5e-4, five pretrain epochs, unit loss weights); a TOML file
//! overrides the defaults and command-line flags override the file. Unknown
//! keys in the file are a hard error, and every run writes its resolved
//! configuration next to its outputs so it can be replayed verbatim.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llr::LambdaReg;
use crate::model::ModelConfig;
use crate::synthetic::GenConfig;
use crate::trainer::{DaTarget, TrainConfig};

/// `[generator]` section: world size plus the domain-shift scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub n_subjects: u32,
    pub samples_per_subject: usize,
    pub input_dim: usize,
    pub map_hidden: usize,
    pub yaw_range: (f64, f64),
    pub pitch_range: (f64, f64),
    pub bias_scale: f64,
    pub shift_scale: f64,
    pub appearance_scale: f64,
    pub gain_jitter: f64,
    pub noise_sigma: f64,
    pub feature_scale: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            n_subjects: 10,
            samples_per_subject: 1500,
            input_dim: g.input_dim,
            map_hidden: g.map_hidden,
            yaw_range: g.yaw_range,
            pitch_range: g.pitch_range,
            bias_scale: g.bias_scale,
            shift_scale: g.shift_scale,
            appearance_scale: g.appearance_scale,
            gain_jitter: g.gain_jitter,
            noise_sigma: g.noise_sigma,
            feature_scale: g.feature_scale,
        }
    }
}

impl GeneratorSection {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            input_dim: self.input_dim,
            map_hidden: self.map_hidden,
            yaw_range: self.yaw_range,
            pitch_range: self.pitch_range,
            bias_scale: self.bias_scale,
            shift_scale: self.shift_scale,
            appearance_scale: self.appearance_scale,
            gain_jitter: self.gain_jitter,
            noise_sigma: self.noise_sigma,
            feature_scale: self.feature_scale,
        }
    }
}

/// `[loso]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LosoSection {
    /// Restrict cross-validation to the first n subject ids (ablations).
    pub subjects: Option<usize>,
}

/// `[paths]` section; command-line flags override these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// The merged view every subcommand runs from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: GeneratorSection,
    pub loso: LosoSection,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Defaults, optionally overridden by a TOML file. Unknown keys fail.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| {
                    Error::Config(format!("{}: {e}", p.display()))
                })?
            }
        };
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.generator.gen_config().validate()?;
        if self.generator.n_subjects < 3 {
            return Err(Error::Config("generator.n_subjects must be >= 3".into()));
        }
        if self.model.input_dim != self.generator.input_dim {
            return Err(Error::Config(format!(
                "model.input_dim ({}) must match generator.input_dim ({})",
                self.model.input_dim, self.generator.input_dim
            )));
        }
        Ok(())
    }

    /// Resolved snapshot; feeding it back with no flags reproduces the run.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))
    }

    pub fn write_snapshot(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

/// Optional command-line overrides, applied over the loaded file. Field names
/// map one-to-one onto kebab-case flags.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub input_dim: Option<usize>,
    pub hidden_layers: Option<Vec<usize>>,
    pub embedding_dim: Option<usize>,
    pub activation: Option<String>,
    pub head_bias: Option<bool>,
    pub pretrain_epochs: Option<usize>,
    pub joint_iterations: Option<usize>,
    pub early_stop: Option<bool>,
    pub source_batch_size: Option<usize>,
    pub target_batch_size: Option<usize>,
    pub mu: Option<f64>,
    pub k: Option<usize>,
    pub lambda_reg: Option<f64>,
    pub lambda_epc: Option<f64>,
    pub lambda_gaze: Option<f64>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub da_target: Option<String>,
    pub checkpoint_interval: Option<usize>,
    pub n_subjects: Option<u32>,
    pub samples_per_subject: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub bias_scale: Option<f64>,
    pub shift_scale: Option<f64>,
    pub appearance_scale: Option<f64>,
    pub gain_jitter: Option<f64>,
    pub feature_scale: Option<f64>,
    pub loso_subjects: Option<usize>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.seed {
            cfg.seed = v;
            cfg.train.seed = v;
        }
        if let Some(v) = self.input_dim {
            cfg.model.input_dim = v;
            cfg.generator.input_dim = v;
        }
        if let Some(v) = &self.hidden_layers {
            cfg.model.hidden_layers = v.clone();
        }
        if let Some(v) = self.embedding_dim {
            cfg.model.embedding_dim = v;
        }
        if let Some(v) = &self.activation {
            cfg.model.activation = match v.as_str() {
                "relu" => crate::model::Activation::Relu,
                "tanh" => crate::model::Activation::Tanh,
                other => {
                    return Err(Error::Config(format!(
                        "unknown activation '{other}' (expected relu|tanh)"
                    )))
                }
            };
        }
        if let Some(v) = self.head_bias {
            cfg.model.head_bias = v;
        }
        if let Some(v) = self.pretrain_epochs {
            cfg.train.pretrain_epochs = v;
        }
        if let Some(v) = self.joint_iterations {
            cfg.train.joint_iterations = v;
        }
        if let Some(v) = self.early_stop {
            cfg.train.early_stop = v;
        }
        if let Some(v) = self.source_batch_size {
            cfg.train.source_batch_size = v;
        }
        if let Some(v) = self.target_batch_size {
            cfg.train.target_batch_size = v;
        }
        if let Some(v) = self.mu {
            cfg.train.neighbors.mu = v;
        }
        if let Some(v) = self.k {
            cfg.train.neighbors.k = v;
        }
        if let Some(v) = self.lambda_reg {
            cfg.train.neighbors.lambda_reg = LambdaReg::Absolute(v);
        }
        if let Some(v) = self.lambda_epc {
            cfg.train.loss_weights.lambda_epc = v;
        }
        if let Some(v) = self.lambda_gaze {
            cfg.train.loss_weights.lambda_gaze = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.optimizer.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.train.optimizer.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.train.optimizer.weight_decay = v;
        }
        if let Some(v) = &self.da_target {
            cfg.train.da_target = match v.as_str() {
                "groundtruth" => DaTarget::Groundtruth,
                "prediction" => DaTarget::Prediction,
                other => {
                    return Err(Error::Config(format!(
                        "unknown da-target '{other}' (expected groundtruth|prediction)"
                    )))
                }
            };
        }
        if let Some(v) = self.checkpoint_interval {
            cfg.train.checkpoint_interval = v;
        }
        if let Some(v) = self.n_subjects {
            cfg.generator.n_subjects = v;
        }
        if let Some(v) = self.samples_per_subject {
            cfg.generator.samples_per_subject = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.generator.noise_sigma = v;
        }
        if let Some(v) = self.bias_scale {
            cfg.generator.bias_scale = v;
        }
        if let Some(v) = self.shift_scale {
            cfg.generator.shift_scale = v;
        }
        if let Some(v) = self.appearance_scale {
            cfg.generator.appearance_scale = v;
        }
        if let Some(v) = self.gain_jitter {
            cfg.generator.gain_jitter = v;
        }
        if let Some(v) = self.feature_scale {
            cfg.generator.feature_scale = v;
        }
        if let Some(v) = self.loso_subjects {
            cfg.loso.subjects = Some(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train.neighbors.k, 4);
        assert_eq!(cfg.model.embedding_dim, 16);
        assert!((cfg.train.neighbors.mu - 0.15).abs() < 1e-15);
        assert_eq!(cfg.train.source_batch_size, 64);
        assert_eq!(cfg.train.target_batch_size, 64);
        assert!((cfg.train.optimizer.learning_rate - 1e-3).abs() < 1e-18);
        assert!((cfg.train.optimizer.momentum - 0.9).abs() < 1e-15);
        assert!((cfg.train.optimizer.weight_decay - 5e-4).abs() < 1e-18);
        assert_eq!(cfg.train.pretrain_epochs, 5);
        assert_eq!(cfg.train.loss_weights.lambda_epc, 1.0);
        assert_eq!(cfg.train.loss_weights.lambda_gaze, 1.0);
        assert_eq!(cfg.generator.n_subjects, 10);
        assert_eq!(cfg.generator.samples_per_subject, 1500);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn file_values_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 9\n[train]\npretrain_epochs = 2\n[train.neighbors]\nmu = 0.3\n")
            .unwrap();
        let cfg = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.pretrain_epochs, 2);
        assert!((cfg.train.neighbors.mu - 0.3).abs() < 1e-15);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.train.neighbors.k, 4);
    }

    #[test]
    fn unknown_keys_are_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "sead = 9\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
        std::fs::write(&path, "[train]\nlearning_rate_typo = 0.1\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train.neighbors]\nmu = 0.3\n").unwrap();
        let mut cfg = RunConfig::load(Some(&path)).unwrap();
        let ov = ConfigOverrides { mu: Some(0.05), seed: Some(7), ..Default::default() };
        ov.apply(&mut cfg).unwrap();
        assert!((cfg.train.neighbors.mu - 0.05).abs() < 1e-15);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn snapshot_roundtrips_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.seed = 1234;
        cfg.train.seed = 1234;
        cfg.train.neighbors.lambda_reg = LambdaReg::Absolute(2e-3);
        cfg.paths.data = Some(PathBuf::from("data.csv"));
        let dir = tempfile::tempdir().unwrap();
        cfg.write_snapshot(dir.path()).unwrap();
        let reloaded = RunConfig::load(Some(&dir.path().join("config.toml"))).unwrap();
        assert_eq!(reloaded, cfg);
    }

    #[test]
    fn mismatched_input_dims_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.input_dim = 12;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bad_override_values_are_rejected() {
        let mut cfg = RunConfig::default();
        let ov = ConfigOverrides { activation: Some("gelu".into()), ..Default::default() };
        assert!(ov.apply(&mut cfg).is_err());
        let ov = ConfigOverrides { da_target: Some("wrong".into()), ..Default::default() };
        assert!(ov.apply(&mut cfg).is_err());
    }
}
