//! Bottleneck autoencoder over channel data and the functional matrix
//! derived from its decoder.

mod model;
mod train;

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{
    init_model, mse, parameter_count, BatchNorm, Gradients, Linear, MlpModel, Mode, BN_EPS,
    BN_MOMENTUM,
};
pub use train::{dataset_loss, reconstruction_loss, train, TrainConfig, TrainReport};

/// Latent-to-channel connection strengths, `N_z × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMatrix {
    pub w: Array2<f64>,
}

impl FunctionalMatrix {
    pub fn latent_count(&self) -> usize {
        self.w.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.w.ncols()
    }
}

/// Product of the decoder weight matrices, oriented latent × channel.
///
/// Activations and batch normalization are ignored unless `fold_batchnorm`
/// is set, in which case each decoder hidden layer's eval-mode scale
/// `γ/sqrt(σ²+ε)` is multiplied into the rows of the weight feeding it.
pub fn extract_functional_matrix(model: &MlpModel, fold_batchnorm: bool) -> FunctionalMatrix {
    let layers = model.linears().len();
    let half = layers / 2;
    let mut product: Option<Array2<f64>> = None;
    for k in half..layers {
        let mut weight = model.linears()[k].weight.clone();
        if fold_batchnorm && k + 1 < layers {
            let scale = model.norms()[k].eval_scale();
            for (mut row, s) in weight.rows_mut().into_iter().zip(scale.iter()) {
                row *= *s;
            }
        }
        product = Some(match product {
            None => weight,
            Some(p) => weight.dot(&p),
        });
    }
    FunctionalMatrix {
        w: product.expect("at least one decoder layer").reversed_axes(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LinearFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormFile {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// Provenance stored alongside a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub init_seed: u64,
    pub config: Option<TrainConfig>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_test_loss: Option<f64>,
    pub channel_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    sizes: Vec<usize>,
    layers: Vec<LinearFile>,
    norms: Vec<NormFile>,
    #[serde(default)]
    metadata: TrainingMetadata,
}

/// A model checkpoint: parameters plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let m = &self.model;
        let file = ModelFile {
            sizes: m.sizes.clone(),
            layers: m
                .linears
                .iter()
                .map(|l| LinearFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            norms: m
                .norms
                .iter()
                .map(|n| NormFile {
                    gamma: n.gamma.to_vec(),
                    beta: n.beta.to_vec(),
                    running_mean: n.running_mean.to_vec(),
                    running_var: n.running_var.to_vec(),
                })
                .collect(),
            metadata: self.metadata.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let bad = |m: String| Error::InvalidArgument(format!("model checkpoint: {m}"));
        let sizes = file.sizes;
        if sizes.len() < 3 || file.layers.len() != sizes.len() - 1 {
            return Err(bad("layer count does not match sizes".into()));
        }
        if file.norms.len() != sizes.len() - 2 {
            return Err(bad("batch-norm count does not match sizes".into()));
        }
        let mut linears = Vec::new();
        for (k, l) in file.layers.into_iter().enumerate() {
            if l.rows != sizes[k + 1] || l.cols != sizes[k] || l.bias.len() != l.rows {
                return Err(bad(format!("layer {k} shape mismatch")));
            }
            let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight)
                .map_err(|e| bad(e.to_string()))?;
            linears.push(Linear {
                weight,
                bias: Array1::from(l.bias),
            });
        }
        let mut norms = Vec::new();
        for (k, n) in file.norms.into_iter().enumerate() {
            let w = sizes[k + 1];
            if [&n.gamma, &n.beta, &n.running_mean, &n.running_var]
                .iter()
                .any(|v| v.len() != w)
            {
                return Err(bad(format!("batch norm {k} width mismatch")));
            }
            if n.running_var.iter().any(|&v| !(v > 0.0)) {
                return Err(bad(format!("batch norm {k} has non-positive running variance")));
            }
            norms.push(BatchNorm {
                gamma: Array1::from(n.gamma),
                beta: Array1::from(n.beta),
                running_mean: Array1::from(n.running_mean),
                running_var: Array1::from(n.running_var),
            });
        }
        Ok(Checkpoint {
            model: MlpModel {
                sizes,
                linears,
                norms,
            },
            metadata: file.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Dataset;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn default_architecture_shapes() {
        let m = init_model(28, 12, 300, 1).unwrap();
        assert_eq!(m.sizes(), &[28, 300, 12, 300, 28]);
        assert_eq!(m.linears()[0].weight.dim(), (300, 28));
        assert_eq!(m.linears()[3].weight.dim(), (28, 300));
        assert_eq!(m.norms().len(), 3);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_model(6, 2, 5, 7).unwrap();
        let b = init_model(6, 2, 5, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(6, 2, 5, 8).unwrap());
        let bound = 1.0 / 6f64.sqrt();
        assert!(a.linears()[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(a.norms().iter().all(|n| n.gamma.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn latent_must_be_a_bottleneck() {
        assert!(init_model(6, 6, 5, 0).is_err());
        assert!(init_model(6, 0, 5, 0).is_err());
    }

    #[test]
    fn eval_forward_is_pure_and_batch_independent() {
        let mut model = init_model(6, 2, 5, 3).unwrap();
        let x = random_batch(16, 6, 1);
        // Move the running statistics away from their initial values.
        model.forward(x.view(), Mode::Train).unwrap();
        let a = model.forward(x.view(), Mode::Eval).unwrap();
        let b = model.forward(x.view(), Mode::Eval).unwrap();
        assert_eq!(a, b);
        let single = model.predict(x.slice(ndarray::s![3..4, ..])).unwrap();
        for (p, q) in single.row(0).iter().zip(a.row(3).iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut model = init_model(6, 2, 5, 3).unwrap();
        let before = model.norms()[0].running_mean.clone();
        model.forward(random_batch(8, 6, 2).view(), Mode::Train).unwrap();
        assert_ne!(model.norms()[0].running_mean, before);
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let mut model = init_model(6, 2, 5, 3).unwrap();
        let x = random_batch(1, 6, 1);
        assert!(model.forward(x.view(), Mode::Train).is_err());
        assert!(model.forward(x.view(), Mode::Eval).is_ok());
    }

    #[test]
    fn zero_model_outputs_zeros() {
        let mut model = init_model(6, 2, 5, 3).unwrap();
        for p in model.parameters_mut() {
            p.fill(0.0);
        }
        let out = model.predict(random_batch(4, 6, 9).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_loss_on_unit_variance_data_is_about_one() {
        let mut model = init_model(3, 1, 4, 3).unwrap();
        for p in model.parameters_mut() {
            p.fill(0.0);
        }
        let raw = random_batch(500, 3, 4);
        let d = Dataset::new(raw, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let (n, _) = d.normalize().unwrap();
        let loss = dataset_loss(&model, &n).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn mse_of_identical_matrices_is_zero() {
        let a = random_batch(3, 3, 0);
        assert_eq!(mse(&a.view(), &a.view()), 0.0);
        assert!(mse(&a.view(), &(&a + 1.0).view()) > 0.0);
    }

    fn with_decoder(first: Array2<f64>, second: Array2<f64>) -> MlpModel {
        // first: z -> hidden (hidden × z), second: hidden -> out (out × hidden)
        let mut m = MlpModel::new(&[2, 2, 1, 2, 2], 0).unwrap();
        m.linears[2].weight = first;
        m.linears[3].weight = second;
        m
    }

    #[test]
    fn functional_matrix_with_identity_output_factor() {
        let m = with_decoder(array![[1.0], [2.0]], Array2::eye(2));
        let f = extract_functional_matrix(&m, false);
        assert_eq!(f.w, array![[1.0, 2.0]]);
    }

    #[test]
    fn functional_matrix_hand_product() {
        // Row-vector convention: [1 2] · [[3 5] [4 6]] = [11 17].
        let m = with_decoder(array![[1.0], [2.0]], array![[3.0, 4.0], [5.0, 6.0]]);
        let f = extract_functional_matrix(&m, false);
        assert_eq!(f.w, array![[11.0, 17.0]]);
    }

    #[test]
    fn functional_matrix_folding_scales_hidden_units() {
        let mut m = with_decoder(array![[1.0], [2.0]], array![[3.0, 4.0], [5.0, 6.0]]);
        m.norms[2].gamma = array![2.0, 0.5];
        m.norms[2].running_var = array![1.0 - BN_EPS, 1.0 - BN_EPS];
        let f = extract_functional_matrix(&m, true);
        // hidden scaled to [2, 1]: [2 1] · [[3 5] [4 6]] = [10 16]
        assert!((f.w[[0, 0]] - 10.0).abs() < 1e-12);
        assert!((f.w[[0, 1]] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn functional_matrix_shape() {
        let m = init_model(28, 12, 300, 0).unwrap();
        assert_eq!(extract_functional_matrix(&m, false).w.dim(), (12, 28));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = init_model(6, 2, 5, 3).unwrap();
        model.forward(random_batch(8, 6, 2).view(), Mode::Train).unwrap();
        let ck = Checkpoint {
            model,
            metadata: TrainingMetadata {
                init_seed: 3,
                ..Default::default()
            },
        };
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn one_epoch_report_has_one_entry() {
        let raw = random_batch(50, 6, 5);
        let ids = (0..6).map(|i| i.to_string()).collect();
        let (d, _) = Dataset::new(raw, ids).unwrap().normalize().unwrap();
        let (tr, te) = d.split_train_test(0.8, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 10,
            ..Default::default()
        };
        let (_, report) = train(init_model(6, 2, 5, 0).unwrap(), &tr, &te, &cfg).unwrap();
        assert_eq!(report.train_loss.len(), 1);
        assert_eq!(report.test_loss.len(), 1);
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn training_requires_normalized_data() {
        let raw = random_batch(50, 6, 5);
        let ids: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let d = Dataset::new(raw, ids).unwrap();
        let (tr, te) = d.split_train_test(0.8, 1).unwrap();
        let r = train(init_model(6, 2, 5, 0).unwrap(), &tr, &te, &TrainConfig::default());
        assert!(matches!(r, Err(Error::NotNormalized)));
    }

    #[test]
    fn huge_learning_rate_diverges_with_epoch() {
        let raw = random_batch(40, 6, 5);
        let ids = (0..6).map(|i| i.to_string()).collect();
        let (d, _) = Dataset::new(raw, ids).unwrap().normalize().unwrap();
        let (tr, te) = d.split_train_test(0.8, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e300,
            ..Default::default()
        };
        match train(init_model(6, 2, 5, 0).unwrap(), &tr, &te, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
        }
    }
}
