//! Two-stage training: source-only pretraining, then joint optimization that
//! alternates between refreshing target hypothesis labels with parameters
//! frozen and updating parameters against the combined loss.
//!
//! Within each joint iteration a single forward pass per batch produces both
//! the frozen hypothesis labels and the differentiable embeddings; the
//! reconstruction weights are treated as constants during backpropagation.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_model, RngState};
use crate::epc::{self, Embedding, LossWeights};
use crate::error::{Error, Result};
use crate::gaze::{self, GazeAngles};
use crate::llr::{self, NeighborConfig};
use crate::model::{backward, sgd_step, Model, OptimizerConfig, Stage};
use crate::rng;
use crate::synthetic::{sample_indices, Sample, TargetSample};

/// Which source labels define neighborhoods and reconstruction weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaTarget {
    /// Source groundtruth labels (the accurate variant).
    Groundtruth,
    /// Source predictions (ablation variant).
    Prediction,
}

impl Default for DaTarget {
    fn default() -> Self {
        DaTarget::Groundtruth
    }
}

/// Moving-average window for the early-stop rule and the participation
/// warning.
pub const MONITOR_WINDOW: usize = 100;
/// Joint training stops early once the windowed mean of the combined loss
/// improves by less than this.
pub const EARLY_STOP_MIN_IMPROVEMENT: f64 = 1e-4;
/// A participation fraction below this over a full window flags a degenerate
/// run (selection interval too small).
pub const DEGENERATE_PARTICIPATION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub joint_iterations: usize,
    pub early_stop: bool,
    pub source_batch_size: usize,
    pub target_batch_size: usize,
    pub neighbors: NeighborConfig,
    pub loss_weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub da_target: DaTarget,
    /// Steps between interval checkpoints; 0 writes boundary files only.
    pub checkpoint_interval: usize,
    /// Derived from the run's top-level seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 5,
            joint_iterations: 1000,
            early_stop: true,
            source_batch_size: 64,
            target_batch_size: 64,
            neighbors: NeighborConfig::default(),
            loss_weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            da_target: DaTarget::default(),
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joint_iterations == 0 {
            return Err(Error::InvalidInput("joint_iterations must be >= 1".into()));
        }
        if self.source_batch_size == 0 || self.target_batch_size == 0 {
            return Err(Error::InvalidInput("batch sizes must be >= 1".into()));
        }
        self.neighbors.validate()?;
        self.loss_weights.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adapt,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Pretrain => write!(f, "pretrain"),
            Phase::Adapt => write!(f, "adapt"),
        }
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    pub step: usize,
    pub epoch: Option<usize>,
    pub l_gaze: f64,
    pub l_epc: f64,
    pub l_da: f64,
    pub participating: usize,
    pub skipped: usize,
    pub source_mae_deg: f64,
}

/// Per-epoch aggregate of the pretraining stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_l_gaze: f64,
    pub mean_source_mae_deg: f64,
}

/// Append-only record of one training run: one row per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    pub stopped_early_at: Option<usize>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "phase,step,epoch,l_gaze,l_epc,l_da,participating,skipped,source_mae_deg\n",
        );
        for s in &self.steps {
            let epoch = s.epoch.map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.phase,
                s.step,
                epoch,
                s.l_gaze,
                s.l_epc,
                s.l_da,
                s.participating,
                s.skipped,
                s.source_mae_deg
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    fn merge(&mut self, other: TrainLog) {
        self.steps.extend(other.steps);
        self.epochs.extend(other.epochs);
        self.warnings.extend(other.warnings);
        self.stopped_early_at = self.stopped_early_at.or(other.stopped_early_at);
    }
}

/// Where and how often the trainer writes interval checkpoints; stage
/// boundaries always get one.
#[derive(Debug, Clone)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Steps between interval checkpoints; 0 writes boundary files only.
    pub interval: usize,
}

impl CheckpointPolicy {
    fn at_interval(&self, model: &Model, phase: Phase, step: usize, rng: RngState) -> Result<()> {
        if self.interval > 0 && step > 0 && step % self.interval == 0 {
            let path = self.dir.join(format!("checkpoint_{phase}_{step:06}.json"));
            save_model(model, rng, &path)?;
        }
        Ok(())
    }

    fn at_boundary(&self, model: &Model, name: &str, rng: RngState) -> Result<()> {
        save_model(model, rng, &self.dir.join(name))
    }
}

fn features_matrix<'a>(dim: usize, features: impl ExactSizeIterator<Item = &'a nalgebra::DVector<f64>>) -> DMatrix<f64> {
    let n = features.len();
    let mut m = DMatrix::zeros(dim, n);
    for (c, f) in features.enumerate() {
        m.column_mut(c).copy_from(f);
    }
    m
}

/// Stage 1: `pretrain_epochs` full passes over the labeled source domain,
/// mini-batched with a per-epoch shuffle, supervised by the gaze loss alone.
pub fn pretrain(
    model: &mut Model,
    source: &[Sample],
    cfg: &TrainConfig,
    policy: Option<&CheckpointPolicy>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::InvalidInput("source domain is empty".into()));
    }
    let dim = model.config.input_dim;
    let mut log = TrainLog::default();
    let mut shuffle_rng = rng::stream(cfg.seed, "pretrain");
    let mut step = 0usize;

    for epoch in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = (0..source.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let mut epoch_gaze = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(cfg.source_batch_size) {
            let x = features_matrix(dim, chunk.iter().map(|&i| &source[i].features));
            let fwd = model.forward_batch(&x)?;
            let preds: Vec<GazeAngles> = (0..chunk.len()).map(|j| fwd.prediction(j)).collect();
            let gts: Vec<GazeAngles> = chunk.iter().map(|&i| source[i].gaze).collect();
            let (l_gaze, pred_grads) = gaze::gaze_loss_batch(&preds, &gts)?;
            let mut d_pred = DMatrix::zeros(2, chunk.len());
            for (j, g) in pred_grads.iter().enumerate() {
                d_pred[(0, j)] = g[0];
                d_pred[(1, j)] = g[1];
            }
            let d_emb = DMatrix::zeros(model.config.embedding_dim, chunk.len());
            let grads = backward(&model.config, &model.params, &fwd, &d_emb, &d_pred)?;
            sgd_step(&mut model.params, &grads, &mut model.optimizer)
                .map_err(|_| Error::NonFiniteUpdate { step })?;
            let mae_deg = l_gaze.to_degrees();
            log.steps.push(StepRecord {
                phase: Phase::Pretrain,
                step,
                epoch: Some(epoch),
                l_gaze,
                l_epc: 0.0,
                l_da: l_gaze,
                participating: 0,
                skipped: 0,
                source_mae_deg: mae_deg,
            });
            epoch_gaze += l_gaze;
            epoch_steps += 1;
            step += 1;
            if let Some(p) = policy {
                p.at_interval(model, Phase::Pretrain, step, RngState::capture(&shuffle_rng))?;
            }
        }
        if epoch_steps > 0 {
            log.epochs.push(EpochRecord {
                epoch,
                steps: epoch_steps,
                mean_l_gaze: epoch_gaze / epoch_steps as f64,
                mean_source_mae_deg: (epoch_gaze / epoch_steps as f64).to_degrees(),
            });
        }
    }
    model.stage = Stage::Pretrained;
    if let Some(p) = policy {
        p.at_boundary(model, "pretrained.json", RngState::capture(&shuffle_rng))?;
    }
    Ok(log)
}

/// Stage 2: joint optimization over `joint_iterations` mini-batch steps.
///
/// Per iteration: draw batches; one forward pass per batch yields frozen
/// hypothesis labels and the differentiable embeddings; each target with at
/// least k in-interval neighbors (against source groundtruth, or predictions
/// under [`DaTarget::Prediction`]) gets reconstruction weights and a
/// hypothesis embedding; the consistency and gaze losses drive one optimizer
/// step with the weights held constant.
pub fn adapt(
    model: &mut Model,
    source: &[Sample],
    target: &[TargetSample],
    cfg: &TrainConfig,
    policy: Option<&CheckpointPolicy>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("both domains must be non-empty".into()));
    }
    let mut log = TrainLog::default();
    if model.stage != Stage::Pretrained {
        log.warnings.push(format!(
            "adapt started from stage {:?}; expected a pretrained model",
            model.stage
        ));
    }
    let dim = model.config.input_dim;
    let fg = model.config.embedding_dim;
    let mut batch_rng = rng::stream(cfg.seed, "adapt.batch");

    let mut da_history: Vec<f64> = Vec::with_capacity(cfg.joint_iterations);
    let mut participation: VecDeque<(usize, usize)> = VecDeque::with_capacity(MONITOR_WINDOW);
    let mut degenerate_flagged = false;

    for m in 0..cfg.joint_iterations {
        let src_idx = sample_indices(source.len(), cfg.source_batch_size, &mut batch_rng);
        let tgt_idx = sample_indices(target.len(), cfg.target_batch_size, &mut batch_rng);

        let x_s = features_matrix(dim, src_idx.iter().map(|&i| &source[i].features));
        let x_t = features_matrix(dim, tgt_idx.iter().map(|&i| &target[i].features));
        let fwd_s = model.forward_batch(&x_s)?;
        let fwd_t = model.forward_batch(&x_t)?;

        // Hypothesis labels from the frozen forward pass of this iteration.
        let hypothesis_labels: Vec<GazeAngles> =
            (0..tgt_idx.len()).map(|j| fwd_t.prediction(j)).collect();
        let da_labels: Vec<GazeAngles> = match cfg.da_target {
            DaTarget::Groundtruth => src_idx.iter().map(|&i| source[i].gaze).collect(),
            DaTarget::Prediction => (0..src_idx.len()).map(|i| fwd_s.prediction(i)).collect(),
        };

        let target_embeddings: Vec<Embedding> =
            (0..tgt_idx.len()).map(|j| fwd_t.embedding_col(j)).collect();
        let mut hypotheses: Vec<Option<Embedding>> = vec![None; tgt_idx.len()];
        let mut assignments: Vec<Option<(Vec<usize>, Vec<f64>)>> = vec![None; tgt_idx.len()];
        for (j, &hyp) in hypothesis_labels.iter().enumerate() {
            let mut sel_rng = rng::substream(cfg.seed, "adapt.select", &[m as u64, j as u64]);
            let Some(neighborhood) =
                llr::select_neighbors(j, hyp, &da_labels, &cfg.neighbors, &mut sel_rng)
            else {
                continue;
            };
            let neighbor_labels: Vec<GazeAngles> =
                neighborhood.neighbor_indices.iter().map(|&i| da_labels[i]).collect();
            let s = llr::local_covariance(hyp, &neighbor_labels);
            let weights = llr::solve_weights(&s, &cfg.neighbors)?;
            let neighbor_embeddings: Vec<Embedding> = neighborhood
                .neighbor_indices
                .iter()
                .map(|&i| fwd_s.embedding_col(i))
                .collect();
            hypotheses[j] = Some(epc::hypothesis_embedding(&neighbor_embeddings, &weights)?);
            assignments[j] = Some((neighborhood.neighbor_indices, weights.values));
        }

        let (epc_res, epc_grads) = epc::epc_loss_with_grads(&target_embeddings, &hypotheses)?;
        let preds_s: Vec<GazeAngles> = (0..src_idx.len()).map(|i| fwd_s.prediction(i)).collect();
        let gts_s: Vec<GazeAngles> = src_idx.iter().map(|&i| source[i].gaze).collect();
        let (l_gaze, pred_grads) = gaze::gaze_loss_batch(&preds_s, &gts_s)?;
        let l_da = epc::da_loss(epc_res.loss, l_gaze, &cfg.loss_weights);

        // Upstream gradients. The reconstruction weights are constants here.
        let mut d_pred_s = DMatrix::zeros(2, src_idx.len());
        for (i, g) in pred_grads.iter().enumerate() {
            d_pred_s[(0, i)] = cfg.loss_weights.lambda_gaze * g[0];
            d_pred_s[(1, i)] = cfg.loss_weights.lambda_gaze * g[1];
        }
        let mut d_emb_s = DMatrix::zeros(fg, src_idx.len());
        let mut d_emb_t = DMatrix::zeros(fg, tgt_idx.len());
        for j in 0..tgt_idx.len() {
            let (Some(sign), Some((neighbors, weights))) = (&epc_grads[j], &assignments[j])
            else {
                continue;
            };
            for r in 0..fg {
                d_emb_t[(r, j)] = cfg.loss_weights.lambda_epc * sign[r];
            }
            for (&i, &w) in neighbors.iter().zip(weights) {
                for r in 0..fg {
                    d_emb_s[(r, i)] -= cfg.loss_weights.lambda_epc * w * sign[r];
                }
            }
        }

        let mut grads = backward(&model.config, &model.params, &fwd_s, &d_emb_s, &d_pred_s)?;
        let grads_t = backward(
            &model.config,
            &model.params,
            &fwd_t,
            &d_emb_t,
            &DMatrix::zeros(2, tgt_idx.len()),
        )?;
        grads.add_assign(&grads_t)?;
        sgd_step(&mut model.params, &grads, &mut model.optimizer)
            .map_err(|_| Error::NonFiniteUpdate { step: m })?;

        log.steps.push(StepRecord {
            phase: Phase::Adapt,
            step: m,
            epoch: None,
            l_gaze,
            l_epc: epc_res.loss,
            l_da,
            participating: epc_res.participating,
            skipped: epc_res.skipped,
            source_mae_deg: l_gaze.to_degrees(),
        });

        if participation.len() == MONITOR_WINDOW {
            participation.pop_front();
        }
        participation.push_back((epc_res.participating, tgt_idx.len()));
        if !degenerate_flagged && participation.len() == MONITOR_WINDOW {
            let (part, total): (usize, usize) =
                participation.iter().fold((0, 0), |(p, t), &(a, b)| (p + a, t + b));
            if (part as f64) < DEGENERATE_PARTICIPATION * total as f64 {
                log.warnings.push(format!(
                    "degenerate run: only {part}/{total} target samples participated over the \
                     last {MONITOR_WINDOW} iterations (mu too small?)"
                ));
                degenerate_flagged = true;
            }
        }

        da_history.push(l_da);
        if let Some(p) = policy {
            p.at_interval(model, Phase::Adapt, m + 1, RngState::capture(&batch_rng))?;
        }
        if cfg.early_stop && da_history.len() >= 2 * MONITOR_WINDOW {
            let n = da_history.len();
            let recent: f64 =
                da_history[n - MONITOR_WINDOW..].iter().sum::<f64>() / MONITOR_WINDOW as f64;
            let previous: f64 = da_history[n - 2 * MONITOR_WINDOW..n - MONITOR_WINDOW]
                .iter()
                .sum::<f64>()
                / MONITOR_WINDOW as f64;
            if previous - recent < EARLY_STOP_MIN_IMPROVEMENT {
                log.stopped_early_at = Some(m + 1);
                break;
            }
        }
    }

    model.stage = Stage::Adapted;
    if let Some(p) = policy {
        p.at_boundary(model, "adapted.json", RngState::capture(&batch_rng))?;
    }
    Ok(log)
}

/// Pretrain followed by adapt; returns the merged log.
pub fn train_full(
    model: &mut Model,
    source: &[Sample],
    target: &[TargetSample],
    cfg: &TrainConfig,
    policy: Option<&CheckpointPolicy>,
) -> Result<TrainLog> {
    let mut log = pretrain(model, source, cfg, policy)?;
    log.merge(adapt(model, source, target, cfg, policy)?);
    Ok(log)
}
