use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Fraction of the running statistics kept at each training batch.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }

    /// Per-unit scale `γ / sqrt(σ² + ε)` under the running statistics.
    pub fn eval_scale(&self) -> Array1<f64> {
        Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|g, v| g / (v + BN_EPS).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; the model is not modified.
    Eval,
}

/// A symmetric bottleneck MLP: every hidden layer is linear → batch norm →
/// tanh, the output layer is linear only.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) sizes: Vec<usize>,
    pub(crate) linears: Vec<Linear>,
    pub(crate) norms: Vec<BatchNorm>,
}

/// Builds the standard `M → hidden → N_z → hidden → M` autoencoder.
pub fn init_model(m: usize, nz: usize, hidden: usize, seed: u64) -> Result<MlpModel> {
    if nz == 0 || nz >= m {
        return Err(Error::InvalidArgument(format!(
            "latent size {nz} must satisfy 1 <= N_z < M = {m}"
        )));
    }
    MlpModel::new(&[m, hidden, nz, hidden, m], seed)
}

impl MlpModel {
    /// Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 3 || sizes.len() % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "autoencoder needs an odd number (>= 3) of layers, got {}",
                sizes.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if sizes[0] != sizes[sizes.len() - 1] {
            return Err(Error::InvalidArgument("input and output sizes differ".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linears = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = || bound * (2.0 * rng.random::<f64>() - 1.0);
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), &mut draw);
            let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
            linears.push(Linear { weight, bias });
        }
        let norms = sizes[1..sizes.len() - 1]
            .iter()
            .map(|&w| BatchNorm::new(w))
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            linears,
            norms,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn latent_size(&self) -> usize {
        self.sizes[self.sizes.len() / 2]
    }

    pub fn linears(&self) -> &[Linear] {
        &self.linears
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    /// Trainable parameter count: weights, biases, and batch-norm scale and shift.
    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.sizes)
    }

    /// Every trainable parameter array, in a fixed order shared with [`Gradients`].
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.linears {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        for n in &mut self.norms {
            out.push(n.gamma.as_slice_mut().expect("standard layout"));
            out.push(n.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_size() {
            return Err(Error::DimensionMismatch {
                what: "batch columns",
                expected: self.input_size(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Reconstructs `batch`. Train mode normalizes with batch statistics and
    /// folds them into the running statistics.
    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.predict(batch),
            Mode::Train => {
                let trace = self.forward_train(batch)?;
                self.update_running_stats(&trace);
                Ok(trace.output)
            }
        }
    }

    /// Eval-mode forward pass; a pure function of the parameters and the rows.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let mut h = batch.to_owned();
        let last = self.linears.len() - 1;
        for (k, lin) in self.linears.iter().enumerate() {
            let mut a = h.dot(&lin.weight.t());
            a += &lin.bias;
            if k < last {
                let norm = &self.norms[k];
                let scale = norm.eval_scale();
                Zip::from(a.rows_mut()).for_each(|mut row| {
                    Zip::from(&mut row)
                        .and(&scale)
                        .and(&norm.running_mean)
                        .and(&norm.beta)
                        .for_each(|v, &s, &mu, &b| *v = ((*v - mu) * s + b).tanh());
                });
            }
            h = a;
        }
        Ok(h)
    }

    pub(crate) fn forward_train(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_batch(&batch)?;
        let n = batch.nrows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "train-mode batch needs at least 2 rows for batch statistics, got {n}"
            )));
        }
        let last = self.linears.len() - 1;
        let mut inputs = Vec::with_capacity(self.linears.len());
        let mut hidden = Vec::with_capacity(self.norms.len());
        let mut h = batch.to_owned();
        for (k, lin) in self.linears.iter().enumerate() {
            let mut a = h.dot(&lin.weight.t());
            a += &lin.bias;
            inputs.push(h);
            if k < last {
                let norm = &self.norms[k];
                let mean = a.mean_axis(Axis(0)).expect("non-empty batch");
                a -= &mean;
                let var = a.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                a *= &inv_std;
                let xhat = a;
                let mut out = &xhat * &norm.gamma;
                out += &norm.beta;
                out.mapv_inplace(f64::tanh);
                hidden.push(HiddenCache {
                    xhat,
                    inv_std,
                    mean,
                    var,
                });
                h = out;
            } else {
                h = a;
            }
        }
        Ok(Trace {
            inputs,
            hidden,
            output: h,
        })
    }

    pub(crate) fn update_running_stats(&mut self, trace: &Trace) {
        for (norm, cache) in self.norms.iter_mut().zip(&trace.hidden) {
            norm.running_mean *= BN_MOMENTUM;
            norm.running_mean.scaled_add(1.0 - BN_MOMENTUM, &cache.mean);
            norm.running_var *= BN_MOMENTUM;
            norm.running_var.scaled_add(1.0 - BN_MOMENTUM, &cache.var);
        }
    }

    /// Train-mode mean squared reconstruction loss of `batch` and its gradient
    /// with respect to every parameter. Running statistics are untouched.
    pub fn loss_and_gradients(&self, batch: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let trace = self.forward_train(batch)?;
        Ok(self.backward(&trace, batch))
    }

    pub(crate) fn backward(&self, trace: &Trace, target: ArrayView2<f64>) -> (f64, Gradients) {
        let n = target.nrows() as f64;
        let diff = &trace.output - &target;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let mut grad = diff * (2.0 / count);

        let last = self.linears.len() - 1;
        let mut d_linears = vec![None; self.linears.len()];
        let mut d_norms = vec![None; self.norms.len()];
        for k in (0..=last).rev() {
            if k < last {
                // `grad` is dL/d(tanh output) of hidden layer k.
                let cache = &trace.hidden[k];
                let out = &trace.inputs[k + 1];
                Zip::from(&mut grad).and(out).for_each(|g, &h| *g *= 1.0 - h * h);
                let d_gamma = (&grad * &cache.xhat).sum_axis(Axis(0));
                let d_beta = grad.sum_axis(Axis(0));
                let dxhat = grad * &self.norms[k].gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut da = dxhat * n;
                da -= &sum_dxhat;
                da -= &(&cache.xhat * &sum_dxhat_xhat);
                da *= &(&cache.inv_std / n);
                grad = da;
                d_norms[k] = Some((d_gamma, d_beta));
            }
            let input = &trace.inputs[k];
            // Products involving unit-length axes may come back in column-major order.
            let d_weight = grad.t().dot(input).as_standard_layout().into_owned();
            let d_bias = grad.sum_axis(Axis(0));
            let next = (k > 0).then(|| grad.dot(&self.linears[k].weight));
            d_linears[k] = Some((d_weight, d_bias));
            if let Some(g) = next {
                grad = g;
            }
        }
        let gradients = Gradients {
            linears: d_linears.into_iter().map(|g| g.expect("filled")).collect(),
            norms: d_norms.into_iter().map(|g| g.expect("filled")).collect(),
        };
        (loss, gradients)
    }
}

/// Trainable parameter count of an autoencoder with the given layer sizes.
pub fn parameter_count(sizes: &[usize]) -> usize {
    let linear: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let norm: usize = sizes[1..sizes.len() - 1].iter().map(|w| 2 * w).sum();
    linear + norm
}

pub(crate) struct HiddenCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Intermediate values of a train-mode pass, kept for backpropagation.
pub(crate) struct Trace {
    /// Input to each linear layer.
    inputs: Vec<Array2<f64>>,
    hidden: Vec<HiddenCache>,
    pub(crate) output: Array2<f64>,
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// `(d weight, d bias)` per linear layer.
    pub linears: Vec<(Array2<f64>, Array1<f64>)>,
    /// `(d gamma, d beta)` per batch-norm layer.
    pub norms: Vec<(Array1<f64>, Array1<f64>)>,
}

impl Gradients {
    /// Gradient arrays in the order of [`MlpModel::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in &self.linears {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        for (g, b) in &self.norms {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
}

/// Mean over all entries of the squared difference.
pub fn mse(prediction: &ArrayView2<f64>, target: &ArrayView2<f64>) -> f64 {
    let count = target.len() as f64;
    Zip::from(prediction)
        .and(target)
        .fold(0.0, |acc, p, t| acc + (p - t) * (p - t))
        / count
}
