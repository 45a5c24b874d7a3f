//! Analytic autoencoder gradients against central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redungroup::autoenc::{MlpModel, Mode};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor so parameters with an exactly-zero gradient (biases
/// feeding a batch norm) compare against finite-difference round-off.
const FLOOR: f64 = 1e-6;

fn batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>() * 2.0 - 1.0)
}

fn loss(model: &MlpModel, x: &Array2<f64>) -> f64 {
    model.loss_and_gradients(x.view()).unwrap().0
}

/// Worst relative error over every parameter, and the number checked.
fn worst_relative_error(model: &mut MlpModel, x: &Array2<f64>) -> (f64, usize) {
    let (_, grads) = model.loss_and_gradients(x.view()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = model.parameters_mut()[p][i];
            model.parameters_mut()[p][i] = orig + H;
            let up = loss(model, x);
            model.parameters_mut()[p][i] = orig - H;
            let down = loss(model, x);
            model.parameters_mut()[p][i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

fn perturbed_model(seed: u64) -> MlpModel {
    let mut model = MlpModel::new(&[6, 5, 2, 5, 6], seed).unwrap();
    // Move batch-norm scale and shift off their initial values so their
    // gradients are exercised away from the trivial point.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let n = model.parameters_mut().len();
    for p in model.parameters_mut().into_iter().skip(n - 6) {
        for v in p.iter_mut() {
            *v += rng.random::<f64>() - 0.5;
        }
    }
    model
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..5 {
        let mut model = perturbed_model(seed);
        let x = batch(8, 6, seed + 10);
        let (worst, checked) = worst_relative_error(&mut model, &x);
        assert_eq!(checked, model.parameter_count());
        assert!(worst < TOL, "seed {seed}: worst relative error {worst:e}");
    }
}

#[test]
fn gradients_match_after_running_stats_move() {
    // Train-mode gradients depend only on batch statistics, so they must stay
    // correct after the running statistics have been updated.
    let mut model = perturbed_model(7);
    model.forward(batch(10, 6, 1).view(), Mode::Train).unwrap();
    let x = batch(5, 6, 2);
    let (worst, _) = worst_relative_error(&mut model, &x);
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn loss_and_gradients_leave_running_stats_alone() {
    let model = perturbed_model(3);
    let before = model.clone();
    model.loss_and_gradients(batch(4, 6, 0).view()).unwrap();
    assert_eq!(model, before);
}

#[test]
fn single_latent_model_gradients() {
    // Unit-width layers exercise degenerate matrix shapes.
    let mut model = MlpModel::new(&[2, 3, 1, 3, 2], 4).unwrap();
    let x = batch(6, 2, 5);
    let (worst, checked) = worst_relative_error(&mut model, &x);
    assert_eq!(checked, model.parameter_count());
    assert!(worst < TOL, "worst relative error {worst:e}");
}
