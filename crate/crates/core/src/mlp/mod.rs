//! Permutation-invariant set regressor for value functions: forward pass,
//! backpropagation, Adam training with early stopping, and persistence.

mod dense;
mod network;
mod train;

pub use dense::{Dense, Mlp, Trace};
pub use network::{coefficients, Dims, SetInput, SetNetwork, Target};
pub use train::{evaluate_regressor, label_of, train, TrainConfig, TrainReport};

/// Mean absolute error and mean absolute label.
pub fn mae_mal(predictions: &[f64], labels: &[f64]) -> (f64, f64) {
    let n = labels.len().max(1) as f64;
    let mae = predictions.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum::<f64>() / n;
    let mal = labels.iter().map(|l| l.abs()).sum::<f64>() / n;
    (mae, mal)
}
