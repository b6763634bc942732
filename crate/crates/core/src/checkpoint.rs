//! Versioned checkpoint files: model shape, flattened parameters in declared
//! order (extractor layers in sequence, then the head), optimizer state, rng
//! state, and the training-stage marker. JSON keeps the file self-describing;
//! f64 values round-trip exactly through serde_json's shortest
//! representation.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams, OptimizerState, Stage};

pub const SCHEMA_VERSION: u32 = 1;

/// One linear layer as stored on disk; `weight` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// State of the rng stream that was active when the checkpoint was written.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RngState {
    /// ChaCha key as hex.
    pub seed_hex: String,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
    pub stream: u64,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let mut seed_hex = String::with_capacity(64);
        for b in rng.get_seed() {
            let _ = write!(seed_hex, "{b:02x}");
        }
        let pos = rng.get_word_pos();
        RngState {
            seed_hex,
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
            stream: rng.get_stream(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub stage: Stage,
    pub config: ModelConfig,
    /// Extractor layers in sequence, then the head. The head's bias vector is
    /// empty when the model has no head bias.
    pub layers: Vec<LayerRecord>,
    pub optimizer: OptimizerState,
    pub rng: RngState,
}

fn matrix_row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

impl Checkpoint {
    pub fn from_model(model: &Model, rng: RngState) -> Self {
        let mut layers = Vec::with_capacity(model.params.extractor.len() + 1);
        for l in &model.params.extractor {
            layers.push(LayerRecord {
                rows: l.weight.nrows(),
                cols: l.weight.ncols(),
                weight: matrix_row_major(&l.weight),
                bias: l.bias.iter().copied().collect(),
            });
        }
        layers.push(LayerRecord {
            rows: model.params.head_weight.nrows(),
            cols: model.params.head_weight.ncols(),
            weight: matrix_row_major(&model.params.head_weight),
            bias: model
                .params
                .head_bias
                .as_ref()
                .map(|b| b.iter().copied().collect())
                .unwrap_or_default(),
        });
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            stage: model.stage,
            config: model.config.clone(),
            layers,
            optimizer: model.optimizer.clone(),
            rng,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                path: "<checkpoint>".into(),
                message: format!(
                    "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        self.config.validate()?;
        let expected_shapes = self.config.layer_shapes();
        if self.layers.len() != expected_shapes.len() {
            return Err(Error::DimensionMismatch {
                expected: expected_shapes.len(),
                got: self.layers.len(),
            });
        }
        let mut params = ModelParams::zeros(&self.config);
        let mut flat = Vec::new();
        for (rec, &(rows, cols)) in self.layers.iter().zip(&expected_shapes) {
            if rec.rows != rows || rec.cols != cols || rec.weight.len() != rows * cols {
                return Err(Error::DimensionMismatch { expected: rows * cols, got: rec.weight.len() });
            }
            flat.extend_from_slice(&rec.weight);
            flat.extend_from_slice(&rec.bias);
        }
        params.set_from_flat(&flat)?;
        Ok(Model {
            config: self.config,
            params,
            optimizer: self.optimizer,
            stage: self.stage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Convenience: write `model` (plus rng state) to `path`.
pub fn save_model(model: &Model, rng: RngState, path: &Path) -> Result<()> {
    Checkpoint::from_model(model, rng).save(path)
}

/// Convenience: read a model back from `path`.
pub fn load_model(path: &Path) -> Result<Model> {
    Checkpoint::load(path)?.into_model()
}

/// Per-layer summary used by checkpoint inspection.
#[derive(Debug, Clone)]
pub struct LayerStats {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn layer_stats(ckpt: &Checkpoint) -> Vec<LayerStats> {
    let n = ckpt.layers.len();
    ckpt.layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let name = if i + 1 == n { "head".to_string() } else { format!("extractor[{i}]") };
            let vals: Vec<f64> =
                l.weight.iter().chain(l.bias.iter()).copied().collect();
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count.max(1) as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / count.max(1) as f64;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            LayerStats { name, count, mean, std: var.sqrt(), min, max }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand_chacha::rand_core::SeedableRng;

    fn sample_model() -> Model {
        let config = ModelConfig {
            input_dim: 3,
            hidden_layers: vec![5],
            embedding_dim: 4,
            ..ModelConfig::default()
        };
        let params = init_params(&config, 17).unwrap();
        let mut opt = OptimizerState::default();
        opt.velocity = vec![0.125; params.n_params()];
        Model { config, params, optimizer: opt, stage: Stage::Pretrained }
    }

    #[test]
    fn roundtrip_is_value_exact() {
        let model = sample_model();
        let rng = RngState::capture(&ChaCha8Rng::seed_from_u64(7));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_model(&model, rng, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.stage, Stage::Pretrained);
        assert_eq!(loaded.config, model.config);
        // Bitwise equality of every parameter and velocity value.
        assert_eq!(loaded.params.flatten(), model.params.flatten());
        assert_eq!(loaded.optimizer.velocity, model.optimizer.velocity);
    }

    #[test]
    fn unsupported_schema_version_is_rejected() {
        let model = sample_model();
        let mut ckpt = Checkpoint::from_model(&model, RngState::default());
        ckpt.schema_version = 999;
        assert!(ckpt.into_model().is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = sample_model();
        let mut ckpt = Checkpoint::from_model(&model, RngState::default());
        ckpt.layers[0].weight.pop();
        assert!(ckpt.into_model().is_err());
    }

    #[test]
    fn stats_cover_every_layer() {
        let model = sample_model();
        let ckpt = Checkpoint::from_model(&model, RngState::default());
        let stats = layer_stats(&ckpt);
        assert_eq!(stats.len(), 3);
        assert_eq!(stats.last().unwrap().name, "head");
        assert!(stats.iter().all(|s| s.count > 0));
    }

    #[test]
    fn rng_state_capture_reflects_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let before = RngState::capture(&rng);
        let _: u64 = rand::Rng::random(&mut rng);
        let after = RngState::capture(&rng);
        assert_eq!(before.seed_hex, after.seed_hex);
        assert!(after.word_pos_lo > before.word_pos_lo);
    }
}
