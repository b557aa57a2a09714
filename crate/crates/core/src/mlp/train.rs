use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{coefficients, Dims, SetInput, SetNetwork, Target};
use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dims: Dims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.01,
            max_epochs: 1000,
            patience: 200,
            seed: 0,
            dims: Dims::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean scaled squared error per epoch.
    pub train_loss: Vec<f64>,
    pub initial_val_mae: f64,
    pub best_val_mae: f64,
    /// Epoch of the retained weights (0 = initialization).
    pub best_epoch: usize,
    /// Mean absolute label over the validation split.
    pub val_mal: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Borrowed view of one labelled sample.
pub(crate) struct Prepared<'a> {
    statics: &'a [Vec<f64>],
    decisions: &'a [Vec<f64>],
    coeffs: Vec<f64>,
    mask: Vec<f64>,
    label: f64,
}

impl Prepared<'_> {
    fn input(&self) -> SetInput<'_> {
        SetInput {
            statics: self.statics,
            decisions: self.decisions,
            coeffs: &self.coeffs,
            mask: &self.mask,
        }
    }
}

pub fn label_of(sample: &Sample, target: Target) -> f64 {
    match target {
        Target::Upper => sample.leader_value,
        Target::Lower => sample.follower_value,
    }
}

fn prepare<'a>(data: &'a Dataset, sample: &'a Sample, target: Target, masked: bool) -> Prepared<'a> {
    let inst = &data.instances[sample.instance_id];
    Prepared {
        statics: &data.static_features[sample.instance_id],
        decisions: &sample.h_features,
        coeffs: coefficients(inst, target),
        mask: if masked {
            sample.x.0.iter().map(|v| 1.0 - v).collect()
        } else {
            vec![1.0; sample.x.len()]
        },
        label: label_of(sample, target),
    }
}

/// `(MAE, MAL, max absolute error)` of `net` over the samples.
fn errors(net: &SetNetwork, samples: &[Prepared]) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Training("empty evaluation set".into()));
    }
    let (mut abs, mut mal, mut max) = (0.0, 0.0, 0.0f64);
    for s in samples {
        let err = (net.forward(&s.input())? - s.label).abs();
        abs += err;
        max = max.max(err);
        mal += s.label.abs();
    }
    let n = samples.len() as f64;
    Ok((abs / n, mal / n, max))
}

/// `(MAE, MAL)` of `net` on the samples of `data` (optionally one split only).
pub fn evaluate_regressor(net: &SetNetwork, data: &Dataset, split: Option<Split>) -> Result<(f64, f64)> {
    let prepared: Vec<Prepared> = data
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .map(|s| prepare(data, s, net.target, net.is_masked()))
        .collect();
    let (mae, mal, _) = errors(net, &prepared)?;
    Ok((mae, mal))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut SetNetwork, grad: &SetNetwork) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in net.params_mut().zip(grad.params()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on the mean squared error of the scaled labels, keeping the
/// weights with the best validation MAE.
pub fn train(data: &Dataset, target: Target, cfg: &TrainConfig) -> Result<(SetNetwork, TrainReport)> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let masked = data.config.kind == crate::problems::ProblemKind::Kip;
    let train_set: Vec<Prepared> = data
        .split(Split::Train)
        .map(|s| prepare(data, s, target, masked))
        .collect();
    let val_set: Vec<Prepared> = data.split(Split::Val).map(|s| prepare(data, s, target, masked)).collect();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Training("training and validation splits must be non-empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = SetNetwork::init(target, data.config.clone(), cfg.dims, &mut rng);
    let n = train_set.len() as f64;
    let rms = (train_set.iter().map(|s| s.label * s.label).sum::<f64>() / n).sqrt();
    net.label_scale = if rms > 0.0 { rms } else { 1.0 };
    let coeff_mass = train_set
        .iter()
        .map(|s| s.coeffs.iter().map(|c| c.abs()).sum::<f64>())
        .sum::<f64>()
        / n;
    net.coeff_scale = if coeff_mass > 0.0 { coeff_mass } else { 1.0 };

    let (initial_val_mae, val_mal, initial_max) = errors(&net, &val_set)?;
    net.val_max_abs_error = initial_max;
    let mut best = net.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        initial_val_mae,
        best_val_mae: initial_val_mae,
        best_epoch: 0,
        val_mal,
        epochs_run: 0,
        stopped_early: false,
    };
    let param_len = net.params().count();
    let mut adam = Adam::new(param_len, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = net.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                let target = s.label / net.label_scale;
                net.backward_raw(
                    &s.input(),
                    |pred| {
                        let resid = pred - target;
                        loss_sum += resid * resid;
                        2.0 * resid * scale
                    },
                    &mut grad,
                );
            }
            adam.step(&mut net, &grad);
        }
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became {loss} at epoch {epoch} (learning rate {}, batch size {})",
                cfg.learning_rate, cfg.batch_size
            )));
        }
        report.train_loss.push(loss);
        report.epochs_run = epoch;
        let (mae, _, max) = errors(&net, &val_set)?;
        if mae < report.best_val_mae {
            report.best_val_mae = mae;
            report.best_epoch = epoch;
            best = net.clone();
            best.val_max_abs_error = max;
        } else if epoch - report.best_epoch > cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok((best, report))
}
