//! Experiment CLI: dataset generation, the two training stages, evaluation,
//! leave-one-subject-out cross-validation, ablation sweeps, and checkpoint
//! inspection. Every run resolves its configuration (defaults <- file <-
//! flags) and writes the resolved snapshot beside its outputs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gazeadapt::checkpoint::{layer_stats, load_model, Checkpoint};
use gazeadapt::config::{ConfigOverrides, RunConfig};
use gazeadapt::error::{Error, Result};
use gazeadapt::evaluation::{
    ablation_sweep, evaluate, run_loso, write_scatter, AblationAxis,
};
use gazeadapt::model::Model;
use gazeadapt::rng;
use gazeadapt::synthetic::{generate_world, leave_one_subject_out, read_dataset, write_dataset};
use gazeadapt::trainer::{adapt, pretrain, CheckpointPolicy};

#[derive(Parser)]
#[command(name = "gazeadapt", version, about = "Domain-adaptive gaze regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed; all randomness derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Per-field overrides; kebab-case of the config field names.
#[derive(Args, Clone, Default)]
struct OverrideArgs {
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden_layers: Option<Vec<usize>>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    head_bias: Option<bool>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    joint_iterations: Option<usize>,
    #[arg(long)]
    early_stop: Option<bool>,
    #[arg(long)]
    source_batch_size: Option<usize>,
    #[arg(long)]
    target_batch_size: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Absolute L2 regularizer for the weight solve.
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    lambda_epc: Option<f64>,
    #[arg(long)]
    lambda_gaze: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// groundtruth | prediction
    #[arg(long)]
    da_target: Option<String>,
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    #[arg(long)]
    n_subjects: Option<u32>,
    #[arg(long)]
    samples_per_subject: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    bias_scale: Option<f64>,
    #[arg(long)]
    shift_scale: Option<f64>,
    #[arg(long)]
    appearance_scale: Option<f64>,
    #[arg(long)]
    gain_jitter: Option<f64>,
    #[arg(long)]
    feature_scale: Option<f64>,
    /// Restrict loso/ablate to the first n subject ids.
    #[arg(long)]
    loso_subjects: Option<usize>,
}

impl OverrideArgs {
    fn merge(&self, common: &CommonArgs) -> ConfigOverrides {
        ConfigOverrides {
            seed: common.seed,
            input_dim: self.input_dim,
            hidden_layers: self.hidden_layers.clone(),
            embedding_dim: self.embedding_dim,
            activation: self.activation.clone(),
            head_bias: self.head_bias,
            pretrain_epochs: self.pretrain_epochs,
            joint_iterations: self.joint_iterations,
            early_stop: self.early_stop,
            source_batch_size: self.source_batch_size,
            target_batch_size: self.target_batch_size,
            mu: self.mu,
            k: self.k,
            lambda_reg: self.lambda_reg,
            lambda_epc: self.lambda_epc,
            lambda_gaze: self.lambda_gaze,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            da_target: self.da_target.clone(),
            checkpoint_interval: self.checkpoint_interval,
            n_subjects: self.n_subjects,
            samples_per_subject: self.samples_per_subject,
            noise_sigma: self.noise_sigma,
            bias_scale: self.bias_scale,
            shift_scale: self.shift_scale,
            appearance_scale: self.appearance_scale,
            gain_jitter: self.gain_jitter,
            feature_scale: self.feature_scale,
            loso_subjects: self.loso_subjects,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject dataset plus its metadata sidecar.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Stage 1: source-only pretraining for one held-out split.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Dataset file (csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Subject id held out as the unlabeled target domain.
        #[arg(long)]
        held_out: u32,
    },
    /// Stage 2: joint domain-adaptation training from a pretrained checkpoint.
    Adapt {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        held_out: u32,
    },
    /// Evaluate a checkpoint on the held-out subject's hidden labels.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        held_out: u32,
    },
    /// Full leave-one-subject-out cross-validation (baseline vs adapted).
    Loso {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep one hyperparameter axis, one cross-validation per value.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// mu | k | fg | pretrain | da-target
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Print checkpoint config, stage marker, and parameter statistics.
    InspectCheckpoint {
        /// Checkpoint file.
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn resolve(common: &CommonArgs, overrides: &OverrideArgs) -> Result<RunConfig> {
    if let Some(p) = &common.config {
        require_file(p)?;
    }
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    overrides.merge(common).apply(&mut cfg)?;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.display().to_string()))
    }
}

fn out_dir(common: &CommonArgs, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| Error::Config("no output directory (--out or [paths] out)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn data_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let path = flag
        .clone()
        .or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| Error::Config("no dataset path (--data or [paths] data)".into()))?;
    require_file(&path)?;
    Ok(path)
}

fn checkpoint_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let path = flag
        .clone()
        .or_else(|| cfg.paths.checkpoint.clone())
        .ok_or_else(|| {
            Error::Config("no checkpoint path (--checkpoint or [paths] checkpoint)".into())
        })?;
    require_file(&path)?;
    Ok(path)
}

/// Per-subject seeds match the cross-validation runner, so a manual
/// pretrain/adapt chain reproduces the corresponding loso entry.
fn subject_train_cfg(cfg: &RunConfig, held_out: u32) -> gazeadapt::trainer::TrainConfig {
    let mut tc = cfg.train.clone();
    tc.seed = rng::derive_seed(cfg.seed, "subject.train", &[held_out as u64]);
    tc
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, overrides } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let world = generate_world(
                cfg.generator.n_subjects,
                cfg.generator.samples_per_subject,
                &cfg.generator.gen_config(),
                rng::derive_seed(cfg.seed, "data", &[]),
            )?;
            let path = dir.join("dataset.csv");
            write_dataset(&path, &world)?;
            cfg.write_snapshot(&dir)?;
            println!(
                "wrote {} samples ({} subjects) to {}",
                world.samples.len(),
                cfg.generator.n_subjects,
                path.display()
            );
        }
        Command::Pretrain { common, overrides, data, held_out } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let samples = read_dataset(&data_path(&data, &cfg)?)?;
            let split = leave_one_subject_out(&samples, held_out)?;
            let tc = subject_train_cfg(&cfg, held_out);
            let init_seed = rng::derive_seed(cfg.seed, "subject.init", &[held_out as u64]);
            let mut model = Model::new(cfg.model.clone(), tc.optimizer.state(), init_seed)?;
            let policy =
                CheckpointPolicy { dir: dir.clone(), interval: tc.checkpoint_interval };
            let log = pretrain(&mut model, &split.source, &tc, Some(&policy))?;
            print_warnings(&log.warnings);
            log.write_csv(&dir.join("pretrain_log.csv"))?;
            cfg.write_snapshot(&dir)?;
            let last = log.epochs.last().map(|e| e.mean_source_mae_deg).unwrap_or(f64::NAN);
            println!(
                "pretrained {} epochs on {} source samples; final source MAE {last:.3} deg; \
                 checkpoint {}",
                tc.pretrain_epochs,
                split.source.len(),
                dir.join("pretrained.json").display()
            );
        }
        Command::Adapt { common, overrides, data, checkpoint, held_out } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let samples = read_dataset(&data_path(&data, &cfg)?)?;
            let split = leave_one_subject_out(&samples, held_out)?;
            let mut model = load_model(&checkpoint_path(&checkpoint, &cfg)?)?;
            let tc = subject_train_cfg(&cfg, held_out);
            let policy =
                CheckpointPolicy { dir: dir.clone(), interval: tc.checkpoint_interval };
            let log = adapt(&mut model, &split.source, &split.target, &tc, Some(&policy))?;
            print_warnings(&log.warnings);
            log.write_csv(&dir.join("adapt_log.csv"))?;
            cfg.write_snapshot(&dir)?;
            let steps = log.steps.len();
            let stopped = log
                .stopped_early_at
                .map(|m| format!(" (early stop at {m})"))
                .unwrap_or_default();
            println!(
                "adapted for {steps} iterations{stopped}; checkpoint {}",
                dir.join("adapted.json").display()
            );
        }
        Command::Evaluate { common, overrides, data, checkpoint, held_out } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let samples = read_dataset(&data_path(&data, &cfg)?)?;
            let split = leave_one_subject_out(&samples, held_out)?;
            let model = load_model(&checkpoint_path(&checkpoint, &cfg)?)?;
            let report = evaluate(&model, &split.target, &split.target_gt, held_out)?;
            let preds: Vec<_> = split
                .target
                .iter()
                .map(|t| model.predict(&t.features))
                .collect::<Result<_>>()?;
            write_scatter(&dir.join("scatter.csv"), &preds, &split.target_gt)?;
            let text = toml::to_string_pretty(&report)
                .map_err(|e| Error::Config(format!("serialize report: {e}")))?;
            std::fs::write(dir.join("report.toml"), text)?;
            cfg.write_snapshot(&dir)?;
            println!(
                "subject {held_out}: MAE {:.3} deg over {} samples; yaw fit {:.4}x{:+.4}, \
                 pitch fit {:.4}x{:+.4}",
                report.mae_degrees,
                report.samples,
                report.yaw_fit.slope,
                report.yaw_fit.intercept,
                report.pitch_fit.slope,
                report.pitch_fit.intercept
            );
        }
        Command::Loso { common, overrides, data } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let samples = read_dataset(&data_path(&data, &cfg)?)?;
            let summary =
                run_loso(&samples, &cfg.model, &cfg.train, cfg.seed, cfg.loso.subjects)?;
            std::fs::write(dir.join("summary.csv"), summary.to_csv())?;
            let reports = dir.join("reports");
            std::fs::create_dir_all(&reports)?;
            for o in &summary.outcomes {
                let text = toml::to_string_pretty(o)
                    .map_err(|e| Error::Config(format!("serialize report: {e}")))?;
                std::fs::write(
                    reports.join(format!("subject_{}.toml", o.baseline.subject_id)),
                    text,
                )?;
            }
            cfg.write_snapshot(&dir)?;
            println!(
                "loso over {} subjects: baseline MAE {:.3} deg, adapted {:.3} deg \
                 ({:+.1}% improvement, {}/{} subjects improved)",
                summary.outcomes.len(),
                summary.mean_baseline_mae,
                summary.mean_adapted_mae,
                summary.improvement_percent,
                summary.improved_subjects(),
                summary.outcomes.len()
            );
        }
        Command::Ablate { common, overrides, data, axis, values } => {
            let cfg = resolve(&common, &overrides)?;
            let dir = out_dir(&common, &cfg)?;
            let samples = read_dataset(&data_path(&data, &cfg)?)?;
            let axis: AblationAxis = axis.parse()?;
            let table = ablation_sweep(
                &samples,
                axis,
                &values,
                &cfg.model,
                &cfg.train,
                cfg.seed,
                cfg.loso.subjects,
            )?;
            let name = format!("ablation_{}.csv", axis_name(axis));
            std::fs::write(dir.join(&name), table.to_csv())?;
            cfg.write_snapshot(&dir)?;
            println!("{}", table.to_csv().trim_end());
        }
        Command::InspectCheckpoint { checkpoint } => {
            require_file(&checkpoint)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            println!("schema_version: {}", ckpt.schema_version);
            println!("stage: {:?}", ckpt.stage);
            println!(
                "model: input_dim={} hidden={:?} embedding_dim={} activation={:?} head_bias={}",
                ckpt.config.input_dim,
                ckpt.config.hidden_layers,
                ckpt.config.embedding_dim,
                ckpt.config.activation,
                ckpt.config.head_bias
            );
            println!(
                "optimizer: lr={} momentum={} weight_decay={} velocity_len={}",
                ckpt.optimizer.learning_rate,
                ckpt.optimizer.momentum,
                ckpt.optimizer.weight_decay,
                ckpt.optimizer.velocity.len()
            );
            println!("rng: seed={} stream={}", ckpt.rng.seed_hex, ckpt.rng.stream);
            println!(
                "{:<14} {:>8} {:>12} {:>12} {:>12} {:>12}",
                "layer", "params", "mean", "std", "min", "max"
            );
            for s in layer_stats(&ckpt) {
                println!(
                    "{:<14} {:>8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    s.name, s.count, s.mean, s.std, s.min, s.max
                );
            }
        }
    }
    Ok(())
}

fn axis_name(axis: AblationAxis) -> &'static str {
    match axis {
        AblationAxis::Mu => "mu",
        AblationAxis::K => "k",
        AblationAxis::Fg => "fg",
        AblationAxis::Pretrain => "pretrain",
        AblationAxis::DaTarget => "da_target",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
