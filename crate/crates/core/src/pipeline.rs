//! End-to-end run: synthesize a robot, sample it, train the autoencoder and
//! compare the grouping modes over repeated trials.
//!
//! Every stage draws its seed from the top-level seed plus a fixed stage
//! index: robot 0, sampling 1, train/test split 2, autoencoder 3, and for
//! trial `t` the distance noise `4 + t` and the grouping `5 + t`.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autoenc::{extract_functional_matrix, init_model, train, Checkpoint, MlpModel, TrainConfig, TrainReport, TrainingMetadata};
use crate::datastore::{Dataset, NormalizationStats};
use crate::error::Result;
use crate::evalharness::{run_trials, GroundTruth, TrialSetup, TrialsReport, TRAIN_STAGE};
use crate::grouping::{GroupingConfig, Mode};
use crate::relgraph::GraphBuildConfig;
use crate::robotsim::{build_synthetic_robot, sample_random_postures, spatial_distance_matrix, PathCenter, RobotModel, SynthSpec};

pub const SYNTH_STAGE: u64 = 0;
pub const SAMPLE_STAGE: u64 = 1;
pub const SPLIT_STAGE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Robot layout; its own seed is replaced by the stage seed.
    pub robot: SynthSpec,
    pub samples: usize,
    pub train_fraction: f64,
    pub hidden: usize,
    pub latent: usize,
    pub train: TrainConfig,
    pub center: PathCenter,
    pub graph: GraphBuildConfig,
    pub grouping: GroupingConfig,
    pub modes: Vec<Mode>,
    pub trials: usize,
    pub bijective: bool,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            robot: SynthSpec::default(),
            samples: 100_000,
            train_fraction: 0.8,
            hidden: 300,
            latent: 12,
            train: TrainConfig::default(),
            center: PathCenter::default(),
            graph: GraphBuildConfig::default(),
            grouping: GroupingConfig {
                groups: 12,
                ..GroupingConfig::default()
            },
            modes: Mode::ALL.to_vec(),
            trials: 10,
            bijective: false,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn stage_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_add(stage)
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sample: f64,
    pub train: f64,
    pub trials: f64,
}

/// Products of the stages that feed the trials.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub robot: RobotModel,
    pub truth: GroundTruth,
    pub raw: Dataset,
    pub stats: NormalizationStats,
    pub train_set: Dataset,
    pub test_set: Dataset,
    pub distances: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub prepared: Prepared,
    pub model: MlpModel,
    pub train_report: TrainReport,
    pub trials: TrialsReport,
    pub timings: Timings,
}

impl PipelineOutput {
    pub fn checkpoint(&self, cfg: &PipelineConfig) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            metadata: TrainingMetadata {
                init_seed: cfg.stage_seed(TRAIN_STAGE),
                config: Some(train_config(cfg)),
                epochs_run: self.train_report.train_loss.len(),
                best_epoch: Some(self.train_report.best_epoch),
                best_test_loss: Some(self.train_report.best_test_loss()),
                channel_ids: self.prepared.train_set.ids().to_vec(),
            },
        }
    }
}

fn train_config(cfg: &PipelineConfig) -> TrainConfig {
    TrainConfig {
        seed: cfg.stage_seed(TRAIN_STAGE),
        ..cfg.train.clone()
    }
}

/// Robot, samples, normalized split and distance matrix.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let spec = SynthSpec {
        seed: cfg.stage_seed(SYNTH_STAGE),
        ..cfg.robot.clone()
    };
    let robot = build_synthetic_robot(&spec)?;
    let truth = GroundTruth::from_robot(&robot)?;
    let raw = sample_random_postures(&robot, cfg.samples, cfg.stage_seed(SAMPLE_STAGE))?;
    let (normalized, stats) = raw.normalize()?;
    let (train_set, test_set) = normalized.split_train_test(cfg.train_fraction, cfg.stage_seed(SPLIT_STAGE))?;
    let distances = spatial_distance_matrix(&robot, &robot.spread_pose(), cfg.center)?;
    Ok(Prepared {
        robot,
        truth,
        raw,
        stats,
        train_set,
        test_set,
        distances,
    })
}

/// Trains the autoencoder on prepared data.
pub fn train_autoencoder(cfg: &PipelineConfig, prepared: &Prepared) -> Result<(MlpModel, TrainReport)> {
    let model = init_model(prepared.train_set.channels(), cfg.latent, cfg.hidden, cfg.stage_seed(TRAIN_STAGE))?;
    train(model, &prepared.train_set, &prepared.test_set, &train_config(cfg))
}

/// Grouping trials with a trained model.
pub fn trials_for(cfg: &PipelineConfig, prepared: &Prepared, model: &MlpModel) -> Result<TrialsReport> {
    let setup = TrialSetup {
        w: extract_functional_matrix(model, cfg.graph.fold_batchnorm),
        distances: prepared.distances.clone(),
        x_ids: prepared.train_set.ids().to_vec(),
        graph: cfg.graph.clone(),
        grouping: cfg.grouping.clone(),
        modes: cfg.modes.clone(),
        bijective: cfg.bijective,
    };
    run_trials(&setup, &prepared.truth, cfg.trials, cfg.seed, cfg.jobs)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let prepared = prepare(cfg)?;
    timings.sample = t.elapsed().as_secs_f64();
    log::info!(
        "robot with {} muscles, {} samples ({:.1} s)",
        prepared.robot.muscle_count(),
        prepared.raw.rows(),
        timings.sample
    );

    let t = Instant::now();
    let (model, train_report) = train_autoencoder(cfg, &prepared)?;
    timings.train = t.elapsed().as_secs_f64();
    log::info!(
        "autoencoder best test loss {:.5} at epoch {} ({:.1} s)",
        train_report.best_test_loss(),
        train_report.best_epoch + 1,
        timings.train
    );

    let t = Instant::now();
    let trials = trials_for(cfg, &prepared, &model)?;
    timings.trials = t.elapsed().as_secs_f64();
    Ok(PipelineOutput {
        prepared,
        model,
        train_report,
        trials,
        timings,
    })
}
