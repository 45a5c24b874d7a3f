use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{mse, MlpModel};
use crate::datastore::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 300,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Loss history of one training run. Losses are eval-mode reconstruction MSE
/// on normalized data, measured after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Zero-based epoch with the lowest test loss.
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best_test_loss(&self) -> f64 {
        self.test_loss[self.best_epoch]
    }

    pub fn best_train_loss(&self) -> f64 {
        self.train_loss[self.best_epoch]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for (e, (tr, te)) in self.train_loss.iter().zip(&self.test_loss).enumerate() {
            let _ = writeln!(out, "{},{},{}", e + 1, tr, te);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e))
    }
}

/// Adaptive-moment optimizer state.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &mut MlpModel) -> Self {
        let shapes: Vec<usize> = model.parameters_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

const EVAL_CHUNK: usize = 4096;

/// Eval-mode mean squared reconstruction error over every row and channel.
pub fn reconstruction_loss(model: &MlpModel, data: ArrayView2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for chunk in data.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        let pred = model.predict(chunk)?;
        total += mse(&pred.view(), &chunk) * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// [`reconstruction_loss`] on a normalized dataset.
pub fn dataset_loss(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if !data.is_normalized() {
        return Err(Error::NotNormalized);
    }
    reconstruction_loss(model, data.values().view())
}

/// Mini-batch Adam on the mean squared reconstruction loss.
///
/// Rows are reshuffled every epoch from `cfg.seed`; a trailing batch with a
/// single row is dropped since batch statistics need two. The returned model
/// is the snapshot with the lowest test loss.
pub fn train(
    mut model: MlpModel,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if !train_set.is_normalized() || !test_set.is_normalized() {
        return Err(Error::NotNormalized);
    }
    for d in [train_set, test_set] {
        if d.channels() != model.input_size() {
            return Err(Error::DimensionMismatch {
                what: "dataset channels",
                expected: model.input_size(),
                got: d.channels(),
            });
        }
    }
    let x = train_set.values();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&mut model);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        test_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best = model.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch = x.select(Axis(0), idx);
            let trace = model.forward_train(batch.view())?;
            let (loss, grads) = model.backward(&trace, batch.view());
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            model.update_running_stats(&trace);
            adam.step(model.parameters_mut(), grads.slices(), cfg);
        }
        let train_loss = reconstruction_loss(&model, x.view())?;
        let test_loss = reconstruction_loss(&model, test_set.values().view())?;
        if !train_loss.is_finite() || !test_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} test {test_loss:.6}");
        report.train_loss.push(train_loss);
        report.test_loss.push(test_loss);
        if test_loss < report.test_loss[report.best_epoch] || epoch == 0 {
            report.best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok((best, report))
}
