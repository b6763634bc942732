//! Evaluation: mean angular error in degrees, per-angle least-squares fits of
//! predicted against true angles (the per-subject bias shows up as the
//! intercept), leave-one-subject-out orchestration, and ablation sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{angular_error, GazeAngles};
use crate::model::{Model, ModelConfig, Stage};
use crate::rng;
use crate::synthetic::{leave_one_subject_out, Sample, TargetSample};
use crate::trainer::{adapt, pretrain, DaTarget, TrainConfig};

/// Ordinary least squares line y = slope * x + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Fit predicted-vs-true values; degenerate x variance yields a flat line
/// through the mean.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= f64::EPSILON * n {
        return LinearFit { slope: 0.0, intercept: my };
    }
    let slope = sxy / sxx;
    LinearFit { slope, intercept: my - slope * mx }
}

/// Per-subject evaluation: MAE in degrees plus the per-angle bias fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject_id: u32,
    pub samples: usize,
    pub mae_degrees: f64,
    pub yaw_fit: LinearFit,
    pub pitch_fit: LinearFit,
}

/// Build a report from aligned (prediction, groundtruth) pairs.
pub fn report_from_pairs(
    preds: &[GazeAngles],
    gts: &[GazeAngles],
    subject_id: u32,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::DimensionMismatch { expected: gts.len(), got: preds.len() });
    }
    if preds.len() < 2 {
        return Err(Error::TooFewSamples { got: preds.len(), need: 2 });
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += angular_error(*p, *g)?;
    }
    let mae_degrees = (sum / preds.len() as f64).to_degrees();
    let gt_yaw: Vec<f64> = gts.iter().map(|g| g.yaw).collect();
    let gt_pitch: Vec<f64> = gts.iter().map(|g| g.pitch).collect();
    let pr_yaw: Vec<f64> = preds.iter().map(|p| p.yaw).collect();
    let pr_pitch: Vec<f64> = preds.iter().map(|p| p.pitch).collect();
    Ok(EvalReport {
        subject_id,
        samples: preds.len(),
        mae_degrees,
        yaw_fit: ols_fit(&gt_yaw, &pr_yaw),
        pitch_fit: ols_fit(&gt_pitch, &pr_pitch),
    })
}

/// Predict every target sample and compare against the hidden labels.
pub fn evaluate(
    model: &Model,
    target: &[TargetSample],
    target_gt: &[GazeAngles],
    subject_id: u32,
) -> Result<EvalReport> {
    if target.len() != target_gt.len() {
        return Err(Error::DimensionMismatch { expected: target_gt.len(), got: target.len() });
    }
    let preds = predict_all(model, target)?;
    report_from_pairs(&preds, target_gt, subject_id)
}

fn predict_all(model: &Model, target: &[TargetSample]) -> Result<Vec<GazeAngles>> {
    let dim = model.config.input_dim;
    let mut x = nalgebra::DMatrix::zeros(dim, target.len());
    for (c, t) in target.iter().enumerate() {
        x.column_mut(c).copy_from(&t.features);
    }
    let fwd = model.forward_batch(&x)?;
    Ok((0..target.len()).map(|j| fwd.prediction(j)).collect())
}

/// Scatter rows (gt, pred) for external plotting; predictions are clamped to
/// the reporting range here and only here.
pub fn write_scatter(path: &Path, preds: &[GazeAngles], gts: &[GazeAngles]) -> Result<()> {
    let mut out = String::from("gt_yaw,gt_pitch,pred_yaw,pred_pitch\n");
    for (p, g) in preds.iter().zip(gts) {
        let c = p.clamped();
        out.push_str(&format!("{},{},{},{}\n", g.yaw, g.pitch, c.yaw, c.pitch));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Baseline (pretrained) and adapted reports for one held-out subject,
/// computed on the identical sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectOutcome {
    pub baseline: EvalReport,
    pub adapted: EvalReport,
}

/// Aggregates over all held-out subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationSummary {
    pub outcomes: Vec<SubjectOutcome>,
    pub mean_baseline_mae: f64,
    pub std_baseline_mae: f64,
    pub mean_adapted_mae: f64,
    pub std_adapted_mae: f64,
    /// (mean baseline - mean adapted) / mean baseline, in percent.
    pub improvement_percent: f64,
    pub mean_abs_pitch_intercept_baseline: f64,
    pub mean_abs_pitch_intercept_adapted: f64,
    pub mean_abs_yaw_intercept_baseline: f64,
    pub mean_abs_yaw_intercept_adapted: f64,
}

pub fn improvement_percent(baseline: f64, adapted: f64) -> f64 {
    if baseline == 0.0 {
        return 0.0;
    }
    (baseline - adapted) / baseline * 100.0
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CrossValidationSummary {
    fn from_outcomes(outcomes: Vec<SubjectOutcome>) -> Self {
        let base: Vec<f64> = outcomes.iter().map(|o| o.baseline.mae_degrees).collect();
        let adapted: Vec<f64> = outcomes.iter().map(|o| o.adapted.mae_degrees).collect();
        let (mean_baseline_mae, std_baseline_mae) = mean_std(&base);
        let (mean_adapted_mae, std_adapted_mae) = mean_std(&adapted);
        let mean_abs = |f: &dyn Fn(&SubjectOutcome) -> f64| {
            outcomes.iter().map(|o| f(o).abs()).sum::<f64>() / outcomes.len() as f64
        };
        CrossValidationSummary {
            improvement_percent: improvement_percent(mean_baseline_mae, mean_adapted_mae),
            mean_abs_pitch_intercept_baseline: mean_abs(&|o| o.baseline.pitch_fit.intercept),
            mean_abs_pitch_intercept_adapted: mean_abs(&|o| o.adapted.pitch_fit.intercept),
            mean_abs_yaw_intercept_baseline: mean_abs(&|o| o.baseline.yaw_fit.intercept),
            mean_abs_yaw_intercept_adapted: mean_abs(&|o| o.adapted.yaw_fit.intercept),
            outcomes,
            mean_baseline_mae,
            std_baseline_mae,
            mean_adapted_mae,
            std_adapted_mae,
        }
    }

    /// Subjects whose adapted MAE is strictly below baseline.
    pub fn improved_subjects(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.adapted.mae_degrees < o.baseline.mae_degrees)
            .count()
    }

    /// Machine-readable table: one row per subject plus a mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "subject,baseline_mae_deg,adapted_mae_deg,improvement_pct,\
             baseline_yaw_intercept,adapted_yaw_intercept,\
             baseline_pitch_intercept,adapted_pitch_intercept,\
             baseline_pitch_slope,adapted_pitch_slope\n",
        );
        for o in &self.outcomes {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                o.baseline.subject_id,
                o.baseline.mae_degrees,
                o.adapted.mae_degrees,
                improvement_percent(o.baseline.mae_degrees, o.adapted.mae_degrees),
                o.baseline.yaw_fit.intercept,
                o.adapted.yaw_fit.intercept,
                o.baseline.pitch_fit.intercept,
                o.adapted.pitch_fit.intercept,
                o.baseline.pitch_fit.slope,
                o.adapted.pitch_fit.slope,
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{},{},{},{},{},,\n",
            self.mean_baseline_mae,
            self.mean_adapted_mae,
            self.improvement_percent,
            self.mean_abs_yaw_intercept_baseline,
            self.mean_abs_yaw_intercept_adapted,
            self.mean_abs_pitch_intercept_baseline,
            self.mean_abs_pitch_intercept_adapted,
        ));
        out
    }
}

fn subject_ids(samples: &[Sample]) -> Vec<u32> {
    let mut ids: Vec<u32> = samples.iter().map(|s| s.subject_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// One leave-one-subject-out run for a single held-out subject: fresh model,
/// pretrain, baseline snapshot, adapt, adapted snapshot. Model init and both
/// training stages draw from streams derived from (seed, subject).
pub fn run_subject(
    samples: &[Sample],
    held_out: u32,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<SubjectOutcome> {
    let split = leave_one_subject_out(samples, held_out)?;
    let mut cfg = train_cfg.clone();
    cfg.seed = rng::derive_seed(seed, "subject.train", &[held_out as u64]);
    let init_seed = rng::derive_seed(seed, "subject.init", &[held_out as u64]);
    let mut model = Model::new(model_cfg.clone(), cfg.optimizer.state(), init_seed)?;
    pretrain(&mut model, &split.source, &cfg, None)?;
    let baseline = evaluate(&model, &split.target, &split.target_gt, held_out)?;
    adapt(&mut model, &split.source, &split.target, &cfg, None)?;
    debug_assert_eq!(model.stage, Stage::Adapted);
    let adapted = evaluate(&model, &split.target, &split.target_gt, held_out)?;
    Ok(SubjectOutcome { baseline, adapted })
}

/// Full leave-one-subject-out cross-validation. Subject runs are independent
/// (each owns its derived seeds) and execute in parallel; the aggregation
/// order is fixed by subject id, so results do not depend on scheduling.
/// `limit_subjects` restricts the sweep to the first n ids (ablation runs).
pub fn run_loso(
    samples: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    limit_subjects: Option<usize>,
) -> Result<CrossValidationSummary> {
    let mut ids = subject_ids(samples);
    if ids.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "leave-one-subject-out needs at least 3 subjects, got {}",
            ids.len()
        )));
    }
    if let Some(n) = limit_subjects {
        ids.truncate(n.max(1));
    }
    let outcomes: Result<Vec<SubjectOutcome>> = ids
        .par_iter()
        .map(|&id| run_subject(samples, id, model_cfg, train_cfg, seed))
        .collect();
    Ok(CrossValidationSummary::from_outcomes(outcomes?))
}

/// Sweep axes mirroring the published ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Selection interval.
    Mu,
    /// Neighbor count.
    K,
    /// Embedding dimension.
    Fg,
    /// Source pretraining epochs.
    Pretrain,
    /// Neighborhood labels: groundtruth vs prediction.
    DaTarget,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(AblationAxis::Mu),
            "k" => Ok(AblationAxis::K),
            "fg" => Ok(AblationAxis::Fg),
            "pretrain" => Ok(AblationAxis::Pretrain),
            "da-target" | "da_target" => Ok(AblationAxis::DaTarget),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (expected mu|k|fg|pretrain|da-target)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub summary: CrossValidationSummary,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "value,mean_baseline_mae_deg,mean_adapted_mae_deg,improvement_pct,improved_subjects\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.value,
                r.summary.mean_baseline_mae,
                r.summary.mean_adapted_mae,
                r.summary.improvement_percent,
                r.summary.improved_subjects(),
            ));
        }
        out
    }
}

fn apply_axis_value(
    axis: AblationAxis,
    value: &str,
    model_cfg: &mut ModelConfig,
    train_cfg: &mut TrainConfig,
) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("bad {what} value '{value}'"));
    match axis {
        AblationAxis::Mu => {
            train_cfg.neighbors.mu = value.parse().map_err(|_| bad("mu"))?;
        }
        AblationAxis::K => {
            train_cfg.neighbors.k = value.parse().map_err(|_| bad("k"))?;
        }
        AblationAxis::Fg => {
            model_cfg.embedding_dim = value.parse().map_err(|_| bad("fg"))?;
        }
        AblationAxis::Pretrain => {
            train_cfg.pretrain_epochs = value.parse().map_err(|_| bad("pretrain"))?;
        }
        AblationAxis::DaTarget => {
            train_cfg.da_target = match value {
                "groundtruth" => DaTarget::Groundtruth,
                "prediction" => DaTarget::Prediction,
                _ => return Err(bad("da-target")),
            };
        }
    }
    Ok(())
}

/// One full (or subject-limited) cross-validation per axis value.
pub fn ablation_sweep(
    samples: &[Sample],
    axis: AblationAxis,
    values: &[String],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    limit_subjects: Option<usize>,
) -> Result<AblationTable> {
    if values.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut mc = model_cfg.clone();
        let mut tc = train_cfg.clone();
        apply_axis_value(axis, value, &mut mc, &mut tc)?;
        let summary = run_loso(samples, &mc, &tc, seed, limit_subjects)?;
        rows.push(AblationRow { value: value.clone(), summary });
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthetic::{generate_world, GenConfig};
    use rand::Rng;

    fn g(yaw: f64, pitch: f64) -> GazeAngles {
        GazeAngles::new(yaw, pitch)
    }

    #[test]
    fn perfect_predictor_has_zero_error_and_identity_fit() {
        let gts = vec![g(0.1, -0.1), g(-0.2, 0.05), g(0.3, 0.1), g(0.0, -0.2)];
        let rep = report_from_pairs(&gts, &gts, 0).unwrap();
        assert_eq!(rep.mae_degrees, 0.0);
        assert!((rep.yaw_fit.slope - 1.0).abs() < 1e-12);
        assert!(rep.yaw_fit.intercept.abs() < 1e-12);
        assert!((rep.pitch_fit.slope - 1.0).abs() < 1e-12);
        assert!(rep.pitch_fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_on_symmetric_points() {
        // Closed form on the symmetric 4-point set: slope and intercept are
        // zero, MAE equals the shared angular offset (frozen from an
        // independent evaluation).
        let gts = vec![g(0.2, 0.1), g(-0.2, -0.1), g(0.2, -0.1), g(-0.2, 0.1)];
        let preds = vec![g(0.0, 0.0); 4];
        let rep = report_from_pairs(&preds, &gts, 0).unwrap();
        assert!(rep.yaw_fit.slope.abs() < 1e-12);
        assert!(rep.yaw_fit.intercept.abs() < 1e-12);
        assert!(rep.pitch_fit.slope.abs() < 1e-12);
        assert!(rep.pitch_fit.intercept.abs() < 1e-12);
        assert!((rep.mae_degrees - 12.794574962566395).abs() < 1e-9);
    }

    #[test]
    fn constant_pitch_shift_appears_as_the_intercept() {
        let mut r = rng::stream(61, "eval.shift");
        let gts: Vec<GazeAngles> =
            (0..50).map(|_| g(r.random_range(-0.5..0.5), r.random_range(-0.4..0.2))).collect();
        let preds: Vec<GazeAngles> = gts.iter().map(|p| g(p.yaw, p.pitch + 0.1)).collect();
        let rep = report_from_pairs(&preds, &gts, 0).unwrap();
        assert!((rep.pitch_fit.intercept - 0.1).abs() < 1e-10);
        assert!((rep.pitch_fit.slope - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ols_recovers_exact_affine_data() {
        let mut r = rng::stream(62, "eval.ols");
        for _ in 0..50 {
            let a = r.random_range(-2.0..2.0);
            let b = r.random_range(-1.0..1.0);
            let xs: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let fit = ols_fit(&xs, &ys);
            assert!((fit.slope - a).abs() < 1e-10);
            assert!((fit.intercept - b).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_x_gives_flat_fit_through_mean() {
        let fit = ols_fit(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]);
        assert_eq!(fit.slope, 0.0);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mae_is_permutation_invariant() {
        let mut r = rng::stream(63, "eval.perm");
        let gts: Vec<GazeAngles> =
            (0..40).map(|_| g(r.random_range(-0.5..0.5), r.random_range(-0.4..0.2))).collect();
        let preds: Vec<GazeAngles> =
            gts.iter().map(|p| g(p.yaw + r.random_range(-0.1..0.1), p.pitch)).collect();
        let rep1 = report_from_pairs(&preds, &gts, 0).unwrap();
        let mut order: Vec<usize> = (0..40).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let preds2: Vec<GazeAngles> = order.iter().map(|&i| preds[i]).collect();
        let gts2: Vec<GazeAngles> = order.iter().map(|&i| gts[i]).collect();
        let rep2 = report_from_pairs(&preds2, &gts2, 0).unwrap();
        assert!((rep1.mae_degrees - rep2.mae_degrees).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let e = report_from_pairs(&[g(0.0, 0.0)], &[g(0.0, 0.0)], 0);
        assert!(matches!(e, Err(Error::TooFewSamples { got: 1, need: 2 })));
    }

    #[test]
    fn improvement_percent_matches_reference_pair() {
        // Reference cross-check: a (4.84, 3.74) pair is a 22.7% improvement.
        let p = improvement_percent(4.84, 3.74);
        assert!((p - 22.7).abs() < 0.05, "got {p}");
    }

    fn fast_world_and_cfgs() -> (Vec<Sample>, ModelConfig, TrainConfig) {
        let gen = GenConfig { input_dim: 8, map_hidden: 12, ..GenConfig::default() };
        let world = generate_world(3, 60, &gen, 71).unwrap();
        let model_cfg = ModelConfig {
            input_dim: 8,
            hidden_layers: vec![16],
            embedding_dim: 6,
            ..ModelConfig::default()
        };
        let train_cfg = TrainConfig {
            pretrain_epochs: 1,
            joint_iterations: 5,
            early_stop: false,
            source_batch_size: 16,
            target_batch_size: 16,
            ..TrainConfig::default()
        };
        (world.samples, model_cfg, train_cfg)
    }

    #[test]
    fn loso_produces_one_outcome_pair_per_subject() {
        let (samples, mc, tc) = fast_world_and_cfgs();
        let summary = run_loso(&samples, &mc, &tc, 5, None).unwrap();
        assert_eq!(summary.outcomes.len(), 3);
        for o in &summary.outcomes {
            // Baseline and adapted reports come from the identical set.
            assert_eq!(o.baseline.samples, o.adapted.samples);
            assert_eq!(o.baseline.subject_id, o.adapted.subject_id);
        }
        let csv = summary.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 1);
    }

    #[test]
    fn single_value_sweep_equals_one_loso() {
        let (samples, mc, tc) = fast_world_and_cfgs();
        let table = ablation_sweep(
            &samples,
            AblationAxis::Mu,
            &["0.15".to_string()],
            &mc,
            &tc,
            5,
            None,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 1);
        let direct = run_loso(&samples, &mc, &tc, 5, None).unwrap();
        assert_eq!(table.rows[0].summary.mean_adapted_mae, direct.mean_adapted_mae);
        assert_eq!(table.rows[0].summary.to_csv(), direct.to_csv());
    }

    #[test]
    fn axis_values_apply_to_the_right_fields() {
        let mut mc = ModelConfig::default();
        let mut tc = TrainConfig::default();
        apply_axis_value(AblationAxis::Fg, "8", &mut mc, &mut tc).unwrap();
        assert_eq!(mc.embedding_dim, 8);
        apply_axis_value(AblationAxis::K, "6", &mut mc, &mut tc).unwrap();
        assert_eq!(tc.neighbors.k, 6);
        apply_axis_value(AblationAxis::DaTarget, "prediction", &mut mc, &mut tc).unwrap();
        assert_eq!(tc.da_target, DaTarget::Prediction);
        assert!(apply_axis_value(AblationAxis::Mu, "abc", &mut mc, &mut tc).is_err());
        assert!("da-target".parse::<AblationAxis>().is_ok());
        assert!("bogus".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn scatter_rows_are_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.csv");
        write_scatter(&path, &[g(2.0, -0.1)], &[g(0.3, -0.1)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let row = text.lines().nth(1).unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "0.3");
        let clamped_yaw: f64 = cols[2].parse().unwrap();
        assert!((clamped_yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
