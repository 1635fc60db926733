#![allow(dead_code)]

use llp::bagset::{partition_into_bags, BagDataset, ProportionVector};
use llp::datasets::{BlobData, Blobs};
use ndarray::Array2;
use rand::Rng;

/// Central differences of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / (‖a‖ + ‖b‖)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Relative error, or the absolute error when both gradients are numerically
/// zero (e.g. a bias that feeds straight into batch normalization).
pub fn grad_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let max_abs = analytic.iter().chain(numeric).fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs < 1e-8 {
        max_abs
    } else {
        rel_error(analytic, numeric)
    }
}

pub fn random_logits(rng: &mut impl Rng, n: usize, k: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, k), || rng.random_range(-scale..scale))
}

/// Rows drawn as softmaxes of bounded logits, so no entry is near the log clamp.
pub fn random_simplex_rows(rng: &mut impl Rng, n: usize, k: usize) -> Array2<f64> {
    let logits = random_logits(rng, n, k, 2.0);
    llp::netzoo::softmax::softmax_rows(logits.view())
}

pub fn random_prior(rng: &mut impl Rng, k: usize) -> ProportionVector<f64> {
    ProportionVector::new(llp::oracle::random_simplex(rng, k)).unwrap()
}

pub fn flatten(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

pub fn unflatten(x: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), x.to_vec()).unwrap()
}

/// Blob data and bags of `bag_size` over its training split.
pub fn blob_bags(classes: usize, n_train: usize, bag_size: usize, seed: u64) -> (BlobData<f64>, BagDataset) {
    let blobs = Blobs { classes, ..Blobs::default() };
    let data = blobs.generate::<f64>(n_train, n_train / 4, seed).unwrap();
    let bags = partition_into_bags(&data.data.train, bag_size, seed).unwrap();
    (data, bags)
}
