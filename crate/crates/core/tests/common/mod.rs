//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vnn::basis::CLASSIC_TANH;
use vnn::grad_check::{clear_kinks, Sample, KINK_MARGIN};
use vnn::io::Dataset;
use vnn::{ActivationMode, Architecture, BasisFamily, BasisKind, LossKind, Network, Scaling, VariationalActivation};

/// One randomized network plus a small batch to differentiate on.
pub struct Case {
    pub label: String,
    pub net: Network,
    pub samples: Vec<Sample>,
    pub loss: LossKind,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_input(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.random_range(-1.0..=1.0))
}

pub fn random_target(rng: &mut ChaCha8Rng, k: usize, loss: LossKind) -> Array1<f64> {
    match loss {
        LossKind::Mse => Array1::from_shape_fn(k, |_| rng.random_range(0.0..=1.0)),
        LossKind::CrossEntropy => {
            let w = Array1::from_shape_fn(k, |_| rng.random_range(0.05..=1.0));
            let s = w.sum();
            w / s
        }
    }
}

/// Perturbs every coefficient of an initialized activation by up to ±0.5/M so
/// that all basis terms contribute while values stay of order one.
fn random_coeffs(rng: &mut ChaCha8Rng, act: &VariationalActivation) -> VariationalActivation {
    let scale = 0.5 / act.family().size() as f64;
    let c = act.coeffs().mapv(|v| v + rng.random_range(-scale..=scale));
    VariationalActivation::new(*act.family(), act.mode(), act.width(), c).unwrap()
}

/// Deterministic sweep of `n` configurations. Factors cycle with co-prime
/// periods so that depth, family, M, mode, loss pair and the optional output
/// activation all vary independently; widths and ω are drawn per case.
pub fn sweep(n: usize) -> Vec<Case> {
    (0..n).map(sweep_case).collect()
}

pub fn sweep_case(i: usize) -> Case {
    let mut r = rng(1000 + i as u64);
    let kind = [BasisKind::Fourier, BasisKind::Polynomial, BasisKind::Classic][i % 3];
    let m = match (kind, [2, 4, 6][(i / 3) % 3]) {
        (BasisKind::Classic, 6) => 3,
        (_, m) => m,
    };
    let depth = 1 + (i + i / 3) % 3;
    let omega = if kind == BasisKind::Fourier { r.random_range(0.5..2.0) } else { 1.0 };
    let family = BasisFamily::new(kind, m, omega).unwrap();
    let (scaling, loss) = match i % 4 {
        0 | 2 => (Scaling::Identity, LossKind::Mse),
        1 => (Scaling::Softmax, LossKind::CrossEntropy),
        _ => (Scaling::Sigmoid, LossKind::Mse),
    };
    let variational_output = i % 5 == 2;
    let mut widths = vec![r.random_range(2..=6)];
    for _ in 0..depth {
        widths.push(r.random_range(2..=6));
    }
    widths.push(r.random_range(2..=6));
    // Alternate the leading mode; deeper layers get a random mode.
    let modes: Vec<ActivationMode> = (0..depth)
        .map(|l| {
            if l == 0 {
                if i.is_multiple_of(2) {
                    ActivationMode::Layer
                } else {
                    ActivationMode::Neuron
                }
            } else if r.random_bool(0.5) {
                ActivationMode::Layer
            } else {
                ActivationMode::Neuron
            }
        })
        .collect();
    let arch = Architecture {
        widths: widths.clone(),
        family,
        modes: modes.clone(),
        scaling,
        variational_output,
    };
    let mut net = Network::init(&arch, &mut r).unwrap();
    for layer in net.hidden_mut() {
        layer.activation = random_coeffs(&mut r, &layer.activation);
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..=0.5));
    }
    if let Some(act) = net.output().activation.clone() {
        net.output_mut().activation = Some(random_coeffs(&mut r, &act));
    }
    if i % 7 == 4 {
        net.set_trainable_alpha(0, false).unwrap();
    }
    let samples: Vec<Sample> = (0..3)
        .map(|_| {
            let x = random_input(&mut r, widths[0]);
            let t = random_target(&mut r, *widths.last().unwrap(), loss);
            (x, t)
        })
        .collect();
    if family.has_kink() {
        clear_kinks(&mut net, &samples, KINK_MARGIN).unwrap();
    }
    let label = format!(
        "#{i} {} M={m} widths={widths:?} modes={modes:?} {}/{}{}",
        kind.as_str(),
        scaling.as_str(),
        loss.as_str(),
        if variational_output { " +F_out" } else { "" }
    );
    Case {
        label,
        net,
        samples,
        loss,
    }
}

/// Random classic network whose hidden activations are one-hot on tanh and
/// frozen, together with a matching loss.
pub fn one_hot_tanh_network(seed: u64) -> (Network, LossKind) {
    let mut r = rng(seed);
    let depth = r.random_range(1..=3);
    let mut widths = vec![r.random_range(1..=6)];
    for _ in 0..depth {
        widths.push(r.random_range(1..=6));
    }
    widths.push(r.random_range(1..=5));
    let (scaling, loss) = match r.random_range(0..3) {
        0 => (Scaling::Identity, LossKind::Mse),
        1 => (Scaling::Sigmoid, LossKind::Mse),
        _ => (Scaling::Softmax, LossKind::CrossEntropy),
    };
    let mode = if r.random_bool(0.5) {
        ActivationMode::Layer
    } else {
        ActivationMode::Neuron
    };
    let m = r.random_range(CLASSIC_TANH + 1..=4);
    let arch = Architecture::new(widths, BasisFamily::classic(m).unwrap(), mode, scaling);
    let mut net = Network::init(&arch, &mut r).unwrap();
    for layer in net.hidden_mut() {
        layer.weights.mapv_inplace(|_| r.random_range(-1.5..=1.5));
        layer.bias.mapv_inplace(|_| r.random_range(-1.0..=1.0));
    }
    net.output_mut().weights.mapv_inplace(|_| r.random_range(-1.5..=1.5));
    net.output_mut().bias.mapv_inplace(|_| r.random_range(-1.0..=1.0));
    net.freeze_all_alpha();
    (net, loss)
}

pub fn xor() -> Dataset {
    vnn::io::parse_csv("0,0,0\n0,1,1\n1,0,1\n1,1,0\n", 1, false).unwrap()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn max_abs_diff1(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}
