//! Plain SGD over weights, biases and activation coefficients.

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::{batch_backward, GradientSet};
use crate::error::{check_len, Result, VnnError};
use crate::io::data::Dataset;
use crate::loss::{mean_loss, LossKind};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Step size for weights and biases.
    pub lr_weights: f64,
    /// Step size for activation coefficients.
    pub lr_alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_weights: 0.1,
            lr_alpha: 0.1,
            epochs: 1000,
            batch_size: 1,
            seed: 42,
            shuffle: true,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_weights", self.lr_weights), ("lr_alpha", self.lr_alpha)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(VnnError::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {lr}"
                )));
            }
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(VnnError::InvalidArgument(
                "batch_size and log_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss over the full training set after the epoch's updates.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub entries: Vec<EpochLog>,
    pub duration: Duration,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.train_loss)
    }
}

fn step_matrix(param: &Array2<f64>, grad: &Array2<f64>, lr: f64) -> Array2<f64> {
    ndarray::Zip::from(param).and(grad).map_collect(|&p, &g| p - lr * g)
}

fn step_vector(param: &Array1<f64>, grad: &Array1<f64>, lr: f64) -> Array1<f64> {
    ndarray::Zip::from(param).and(grad).map_collect(|&p, &g| p - lr * g)
}

fn check_shapes(net: &Network, grads: &GradientSet) -> Result<()> {
    check_len("gradient layer count", net.hidden().len(), grads.hidden.len())?;
    let mismatch = || VnnError::DimensionMismatch {
        context: "gradient shape",
        expected: 0,
        found: 0,
    };
    for (layer, g) in net.hidden().iter().zip(&grads.hidden) {
        let alpha_ok = g.alpha.as_ref().is_some_and(|a| a.dim() == layer.activation.coeffs().dim());
        if layer.weights.dim() != g.weights.dim() || layer.bias.len() != g.bias.len() || !alpha_ok {
            return Err(mismatch());
        }
    }
    let out = net.output();
    let alpha_ok = match (&out.activation, &grads.output.alpha) {
        (Some(a), Some(g)) => a.coeffs().dim() == g.dim(),
        (None, None) => true,
        _ => false,
    };
    if out.weights.dim() != grads.output.weights.dim() || out.bias.len() != grads.output.bias.len() || !alpha_ok {
        return Err(mismatch());
    }
    Ok(())
}

/// `θ ← θ - η·∂E/∂θ` with `lr_w` for weights and biases and `lr_a` for the
/// coefficients of layers whose coefficients are trainable. On error the
/// network is left unchanged.
pub fn sgd_step(net: &mut Network, grads: &GradientSet, lr_w: f64, lr_a: f64) -> Result<()> {
    check_shapes(net, grads)?;
    let mut next = net.clone();
    for (layer, g) in next.hidden_mut().iter_mut().zip(&grads.hidden) {
        layer.weights = step_matrix(&layer.weights, &g.weights, lr_w);
        layer.bias = step_vector(&layer.bias, &g.bias, lr_w);
        if layer.trainable_alpha {
            let da = g.alpha.as_ref().expect("checked above");
            *layer.activation.coeffs_mut() = step_matrix(layer.activation.coeffs(), da, lr_a);
        }
    }
    let out = next.output_mut();
    out.weights = step_matrix(&out.weights, &grads.output.weights, lr_w);
    out.bias = step_vector(&out.bias, &grads.output.bias, lr_w);
    if out.trainable_alpha {
        if let (Some(act), Some(da)) = (out.activation.as_mut(), grads.output.alpha.as_ref()) {
            *act.coeffs_mut() = step_matrix(act.coeffs(), da, lr_a);
        }
    }
    if !next.parameters_finite() {
        return Err(VnnError::NonFinite {
            stage: "parameter update",
            layer: 0,
        });
    }
    *net = next;
    Ok(())
}

/// Generator used to shuffle samples: ChaCha8 seeded with `seed`, stream 1
/// (stream 0 is used for parameter initialization).
pub fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Visit order for one epoch: `0..n`, Fisher–Yates shuffled when requested.
pub fn epoch_order(rng: &mut ChaCha8Rng, n: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

fn check_dataset(net: &Network, data: &Dataset, which: &'static str) -> Result<()> {
    check_len(which, net.input_width(), data.feature_width())?;
    check_len(which, net.output_width(), data.target_width())?;
    if data.is_empty() {
        return Err(VnnError::EmptyBatch);
    }
    Ok(())
}

/// Epoch-based minibatch SGD. Each epoch visits the samples in
/// [`epoch_order`], applies [`batch_backward`] + [`sgd_step`] per batch (the
/// last batch may be short) and then evaluates the mean training loss.
/// Entries are logged every `log_every` epochs and on the final epoch.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    kind: LossKind,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let start = Instant::now();
    cfg.validate()?;
    kind.check_scaling(net.output().scaling)?;
    check_dataset(net, train_set, "training data width")?;
    if let Some(v) = val_set {
        check_dataset(net, v, "validation data width")?;
    }

    let diverged = |epoch| {
        move |e: VnnError| match e {
            VnnError::NonFinite { .. } => VnnError::Diverged { epoch },
            other => other,
        }
    };

    let mut rng = shuffle_rng(cfg.seed);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&mut rng, train_set.len(), cfg.shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let samples = batch.iter().map(|&i| train_set.sample(i));
            let grads = batch_backward(net, samples, kind).map_err(diverged(epoch))?;
            sgd_step(net, &grads, cfg.lr_weights, cfg.lr_alpha).map_err(diverged(epoch))?;
        }
        let train_loss = mean_loss(net, train_set.iter(), kind).map_err(diverged(epoch))?;
        if !train_loss.is_finite() {
            return Err(VnnError::Diverged { epoch });
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            let val_loss = match val_set {
                Some(v) => Some(mean_loss(net, v.iter(), kind).map_err(diverged(epoch))?),
                None => None,
            };
            history.entries.push(EpochLog {
                epoch,
                train_loss,
                val_loss,
            });
        }
    }
    history.duration = start.elapsed();
    Ok(history)
}
