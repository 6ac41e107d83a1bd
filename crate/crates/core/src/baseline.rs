//! Conventional fixed-activation MLP with its own textbook backprop.
//!
//! Nothing here calls into `activation`, `backprop` or `loss`; the module is
//! the reference that a variational network with one-hot, frozen classic
//! coefficients must reproduce.

use ndarray::{Array1, Array2};

use crate::basis::{BasisKind, CLASSIC_IDENTITY, CLASSIC_RECTIFIER, CLASSIC_SIGMOID, CLASSIC_TANH};
use crate::error::{check_len, Result, VnnError};
use crate::io::data::Dataset;
use crate::loss::LossKind;
use crate::network::{Network, Scaling};
use crate::optim::{epoch_order, shuffle_rng, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedActivation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl FixedActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            FixedActivation::Identity => z,
            FixedActivation::Tanh => z.tanh(),
            FixedActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            FixedActivation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    fn slope(self, z: f64) -> f64 {
        match self {
            FixedActivation::Identity => 1.0,
            FixedActivation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            FixedActivation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            FixedActivation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fixed-activation MLP. `weights[k]` is `in × out` like the variational
/// network; the last entry is the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedNet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// One per hidden layer.
    pub activations: Vec<FixedActivation>,
    pub scaling: Scaling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedGradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

struct Pass {
    /// Inputs to each layer: `x`, then each hidden activation.
    inputs: Vec<Array1<f64>>,
    /// Hidden pre-activations.
    zs: Vec<Array1<f64>>,
    output: Array1<f64>,
}

fn softmax(v: &Array1<f64>) -> Array1<f64> {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = v.mapv(|x| (x - max).exp());
    let s = e.sum();
    e / s
}

impl FixedNet {
    /// Reads the weights of a variational network whose hidden activations
    /// are one-hot over the classic family and which has no output activation.
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut activations = Vec::new();
        for (l, layer) in net.hidden().iter().enumerate() {
            let act = &layer.activation;
            if act.family().kind() != BasisKind::Classic {
                return Err(VnnError::InvalidNetwork(format!("layer {} is not classic", l + 1)));
            }
            let first = act.coeffs().column(0).to_owned();
            let tied = act.coeffs().columns().into_iter().all(|c| c == first);
            let hot: Vec<usize> = first.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
            if !tied || hot.len() != 1 || first[hot[0]] != 1.0 {
                return Err(VnnError::InvalidNetwork(format!(
                    "layer {} coefficients are not one-hot",
                    l + 1
                )));
            }
            activations.push(match hot[0] {
                CLASSIC_IDENTITY => FixedActivation::Identity,
                CLASSIC_TANH => FixedActivation::Tanh,
                CLASSIC_SIGMOID => FixedActivation::Sigmoid,
                CLASSIC_RECTIFIER => FixedActivation::Relu,
                _ => unreachable!("classic family has four members"),
            });
        }
        if net.output().activation.is_some() {
            return Err(VnnError::InvalidNetwork("output activation has no fixed counterpart".into()));
        }
        let mut weights: Vec<Array2<f64>> = net.hidden().iter().map(|l| l.weights.clone()).collect();
        let mut biases: Vec<Array1<f64>> = net.hidden().iter().map(|l| l.bias.clone()).collect();
        weights.push(net.output().weights.clone());
        biases.push(net.output().bias.clone());
        Ok(FixedNet {
            weights,
            biases,
            activations,
            scaling: net.output().scaling,
        })
    }

    fn run(&self, x: &Array1<f64>) -> Result<Pass> {
        check_len("fixed network input", self.weights[0].nrows(), x.len())?;
        let mut inputs = vec![x.clone()];
        let mut zs = Vec::new();
        for (k, act) in self.activations.iter().enumerate() {
            let z = self.weights[k].t().dot(&inputs[k]) + &self.biases[k];
            let a = z.mapv(|v| act.apply(v));
            zs.push(z);
            inputs.push(a);
        }
        let last = self.activations.len();
        let z = self.weights[last].t().dot(&inputs[last]) + &self.biases[last];
        let output = match self.scaling {
            Scaling::Identity => z,
            Scaling::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Scaling::Softmax => softmax(&z),
        };
        Ok(Pass { inputs, zs, output })
    }
}

pub fn fixed_forward(fnet: &FixedNet, x: &Array1<f64>) -> Result<Array1<f64>> {
    fnet.run(x).map(|p| p.output)
}

pub fn fixed_backward(fnet: &FixedNet, x: &Array1<f64>, target: &Array1<f64>, kind: LossKind) -> Result<FixedGradients> {
    let pass = fnet.run(x)?;
    let o = &pass.output;
    check_len("fixed network target", o.len(), target.len())?;
    let err = o - target;
    let mut delta = match (fnet.scaling, kind) {
        (Scaling::Softmax, LossKind::CrossEntropy) => err,
        (_, LossKind::CrossEntropy) => {
            return Err(VnnError::InvalidArgument("cross_entropy needs softmax".into()));
        }
        (Scaling::Identity, LossKind::Mse) => err,
        (Scaling::Sigmoid, LossKind::Mse) => &err * &o.mapv(|s| s * (1.0 - s)),
        (Scaling::Softmax, LossKind::Mse) => {
            let inner = err.dot(o);
            o * &err.mapv(|e| e - inner)
        }
    };
    let layers = fnet.weights.len();
    let mut dw = vec![Array2::zeros((0, 0)); layers];
    let mut db = vec![Array1::zeros(0); layers];
    for k in (0..layers).rev() {
        let a = &pass.inputs[k];
        dw[k] = Array2::from_shape_fn((a.len(), delta.len()), |(p, j)| a[p] * delta[j]);
        db[k] = delta.clone();
        if k > 0 {
            let back = fnet.weights[k].dot(&delta);
            let act = fnet.activations[k - 1];
            delta = Array1::from_shape_fn(back.len(), |p| back[p] * act.slope(pass.zs[k - 1][p]));
        }
    }
    Ok(FixedGradients { weights: dw, biases: db })
}

/// Minibatch SGD on a fixed network with `cfg.lr_weights`, visiting samples
/// in the same order as [`crate::optim::train`] for the same config.
/// `lr_alpha` and the logging fields are ignored.
pub fn fixed_train(fnet: &mut FixedNet, data: &Dataset, kind: LossKind, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let lr = cfg.lr_weights;
    let mut rng = shuffle_rng(cfg.seed);
    for _ in 0..cfg.epochs {
        let order = epoch_order(&mut rng, data.len(), cfg.shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let mut sum: Option<FixedGradients> = None;
            for &i in batch {
                let (x, t) = data.sample(i);
                let g = fixed_backward(fnet, &x.to_owned(), &t.to_owned(), kind)?;
                match &mut sum {
                    None => sum = Some(g),
                    Some(s) => {
                        for k in 0..s.weights.len() {
                            s.weights[k] += &g.weights[k];
                            s.biases[k] += &g.biases[k];
                        }
                    }
                }
            }
            let g = sum.expect("chunks are non-empty");
            let n = batch.len() as f64;
            for k in 0..fnet.weights.len() {
                let step_w = g.weights[k].mapv(|v| v / n);
                let step_b = g.biases[k].mapv(|v| v / n);
                fnet.weights[k].zip_mut_with(&step_w, |w, &d| *w -= lr * d);
                fnet.biases[k].zip_mut_with(&step_b, |b, &d| *b -= lr * d);
            }
        }
    }
    Ok(())
}
