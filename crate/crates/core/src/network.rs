//! Dense feed-forward network with variational activations.
//!
//! Weight matrices are stored `in_width × out_width`: entry `(j, l)` connects
//! source neuron `j` to destination neuron `l`, so a layer computes
//! `net = Wᵀ·a + b`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::activation::{ActivationMode, VariationalActivation};
use crate::basis::{logistic, BasisFamily};
use crate::error::{check_len, Result, VnnError};

/// Fixed map applied after the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scaling {
    Identity,
    Sigmoid,
    Softmax,
}

impl Scaling {
    pub fn as_str(self) -> &'static str {
        match self {
            Scaling::Identity => "identity",
            Scaling::Sigmoid => "sigmoid",
            Scaling::Softmax => "softmax",
        }
    }

    pub fn apply(self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Scaling::Identity => y.to_owned(),
            Scaling::Sigmoid => y.mapv(logistic),
            Scaling::Softmax => {
                let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps = y.mapv(|v| (v - max).exp());
                let total: f64 = exps.sum();
                exps / total
            }
        }
    }

    /// Vector–Jacobian product `Jᵀ·upstream`, where `J = ∂σ/∂y` evaluated at
    /// the point whose image is `scaled`. Softmax uses the full Jacobian.
    pub fn vjp(self, scaled: ArrayView1<'_, f64>, upstream: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Scaling::Identity => upstream.to_owned(),
            Scaling::Sigmoid => {
                Array1::from_shape_fn(scaled.len(), |l| scaled[l] * (1.0 - scaled[l]) * upstream[l])
            }
            Scaling::Softmax => {
                let inner: f64 = scaled.iter().zip(upstream.iter()).map(|(s, u)| s * u).sum();
                Array1::from_shape_fn(scaled.len(), |l| scaled[l] * (upstream[l] - inner))
            }
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scaling {
    type Err = VnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Scaling::Identity),
            "sigmoid" => Ok(Scaling::Sigmoid),
            "softmax" => Ok(Scaling::Softmax),
            other => Err(VnnError::InvalidArgument(format!("unknown output scaling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: VariationalActivation,
    pub trainable_alpha: bool,
}

impl HiddenLayer {
    pub fn in_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.weights.ncols()
    }
}

/// The output layer. `activation`, when present, is a layer-mode `F^(O)`
/// applied before the scaling function.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Option<VariationalActivation>,
    pub trainable_alpha: bool,
    pub scaling: Scaling,
}

impl OutputLayer {
    pub fn in_width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.weights.ncols()
    }
}

/// Shape and basis choices needed to initialize a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `[input, hidden_1, .., hidden_N, output]`, so at least three entries.
    pub widths: Vec<usize>,
    pub family: BasisFamily,
    /// One mode per hidden layer.
    pub modes: Vec<ActivationMode>,
    pub scaling: Scaling,
    pub variational_output: bool,
}

impl Architecture {
    pub fn new(
        widths: Vec<usize>,
        family: BasisFamily,
        mode: ActivationMode,
        scaling: Scaling,
    ) -> Self {
        let hidden = widths.len().saturating_sub(2);
        Architecture {
            widths,
            family,
            modes: vec![mode; hidden],
            scaling,
            variational_output: false,
        }
    }

    pub fn with_variational_output(mut self, on: bool) -> Self {
        self.variational_output = on;
        self
    }

    pub fn hidden_count(&self) -> usize {
        self.widths.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(VnnError::InvalidNetwork(
                "need an input width, at least one hidden width and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(VnnError::InvalidNetwork("layer widths must be positive".into()));
        }
        check_len("mode list", self.hidden_count(), self.modes.len())
    }
}

/// Glorot-style uniform bound `sqrt(6 / (in + out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<f64> {
    let bound = glorot_bound(fan_in, fan_out);
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    hidden: Vec<HiddenLayer>,
    output: OutputLayer,
}

/// Everything the backward sweep needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Array1<f64>,
    /// `net^(L)` per hidden layer.
    pub nets: Vec<Array1<f64>>,
    /// `a^(L) = F^(L)(net^(L))` per hidden layer.
    pub acts: Vec<Array1<f64>>,
    pub output_net: Array1<f64>,
    /// `F^(O)(net^(O))`, or a copy of `output_net` when there is no output activation.
    pub output_act: Array1<f64>,
    pub output: Array1<f64>,
}

/// `Wᵀ·a + b`, accumulating over the source index in ascending order.
pub(crate) fn affine(w: ArrayView2<'_, f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    Array1::from_shape_fn(w.ncols(), |l| {
        let mut s = 0.0;
        for j in 0..w.nrows() {
            s += w[[j, l]] * a[j];
        }
        s + b[l]
    })
}

fn ensure_finite(values: &Array1<f64>, stage: &'static str, layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(VnnError::NonFinite { stage, layer })
    }
}

impl Network {
    /// Assembles a network from explicit layers, checking every shape.
    pub fn from_parts(hidden: Vec<HiddenLayer>, output: OutputLayer) -> Result<Self> {
        if hidden.is_empty() {
            return Err(VnnError::InvalidNetwork("at least one hidden layer is required".into()));
        }
        let mut prev: Option<usize> = None;
        for layer in &hidden {
            if let Some(p) = prev {
                check_len("layer chaining", p, layer.in_width())?;
            }
            check_len("bias length", layer.out_width(), layer.bias.len())?;
            check_len("activation width", layer.out_width(), layer.activation.width())?;
            prev = Some(layer.out_width());
        }
        check_len("output layer chaining", prev.unwrap_or(0), output.in_width())?;
        check_len("output bias length", output.out_width(), output.bias.len())?;
        if let Some(act) = &output.activation {
            if act.mode() != ActivationMode::Layer {
                return Err(VnnError::InvalidNetwork(
                    "the output activation supports layer mode only".into(),
                ));
            }
            check_len("output activation width", output.out_width(), act.width())?;
        }
        if hidden.iter().any(|l| l.in_width() == 0 || l.out_width() == 0) || output.out_width() == 0 {
            return Err(VnnError::InvalidNetwork("layer widths must be positive".into()));
        }
        let net = Network { hidden, output };
        if !net.parameters_finite() {
            return Err(VnnError::InvalidNetwork("parameters must be finite".into()));
        }
        Ok(net)
    }

    /// Glorot-uniform weights, zero biases, default coefficient init.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let w = &arch.widths;
        let n = arch.hidden_count();
        let mut hidden = Vec::with_capacity(n);
        for l in 0..n {
            let (fan_in, fan_out) = (w[l], w[l + 1]);
            let weights = glorot(fan_in, fan_out, rng);
            let activation = VariationalActivation::init(arch.family, arch.modes[l], fan_out, rng)?;
            hidden.push(HiddenLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
                trainable_alpha: true,
            });
        }
        let (fan_in, fan_out) = (w[n], w[n + 1]);
        let weights = glorot(fan_in, fan_out, rng);
        let activation = if arch.variational_output {
            Some(VariationalActivation::init(arch.family, ActivationMode::Layer, fan_out, rng)?)
        } else {
            None
        };
        let output = OutputLayer {
            weights,
            bias: Array1::zeros(fan_out),
            activation,
            trainable_alpha: true,
            scaling: arch.scaling,
        };
        Network::from_parts(hidden, output)
    }

    pub fn hidden(&self) -> &[HiddenLayer] {
        &self.hidden
    }

    pub fn hidden_mut(&mut self) -> &mut [HiddenLayer] {
        &mut self.hidden
    }

    pub fn output(&self) -> &OutputLayer {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut OutputLayer {
        &mut self.output
    }

    pub fn input_width(&self) -> usize {
        self.hidden[0].in_width()
    }

    pub fn output_width(&self) -> usize {
        self.output.out_width()
    }

    /// `[input, hidden_1, .., hidden_N, output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.hidden.iter().map(HiddenLayer::out_width));
        w.push(self.output_width());
        w
    }

    /// Freezes (or unfreezes) the coefficients of hidden layer `layer` (0-based).
    pub fn set_trainable_alpha(&mut self, layer: usize, trainable: bool) -> Result<()> {
        let n = self.hidden.len();
        self.hidden
            .get_mut(layer)
            .ok_or_else(|| VnnError::InvalidArgument(format!("hidden layer {layer} out of range (0..{n})")))?
            .trainable_alpha = trainable;
        Ok(())
    }

    pub fn freeze_all_alpha(&mut self) {
        for layer in &mut self.hidden {
            layer.trainable_alpha = false;
        }
        self.output.trainable_alpha = false;
    }

    pub fn parameters_finite(&self) -> bool {
        let hidden_ok = self.hidden.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite())
                && l.bias.iter().all(|v| v.is_finite())
                && l.activation.coeffs().iter().all(|v| v.is_finite())
        });
        let out = &self.output;
        hidden_ok
            && out.weights.iter().all(|v| v.is_finite())
            && out.bias.iter().all(|v| v.is_finite())
            && out
                .activation
                .as_ref()
                .is_none_or(|a| a.coeffs().iter().all(|v| v.is_finite()))
    }

    /// Runs the forward pass and keeps every intermediate vector. Non-finite
    /// values are reported with a 1-based layer index (the output layer is
    /// `N + 1`).
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<ForwardTrace> {
        check_len("network input", self.input_width(), x.len())?;
        let mut nets = Vec::with_capacity(self.hidden.len());
        let mut acts: Vec<Array1<f64>> = Vec::with_capacity(self.hidden.len());
        for (idx, layer) in self.hidden.iter().enumerate() {
            let source = acts.last().map_or(x, |a| a.view());
            let net = affine(layer.weights.view(), source, layer.bias.view());
            ensure_finite(&net, "pre-activation", idx + 1)?;
            let act = layer.activation.activate(net.view())?;
            ensure_finite(&act, "activation", idx + 1)?;
            nets.push(net);
            acts.push(act);
        }
        let out_idx = self.hidden.len() + 1;
        let last = acts.last().expect("at least one hidden layer");
        let output_net = affine(self.output.weights.view(), last.view(), self.output.bias.view());
        ensure_finite(&output_net, "pre-activation", out_idx)?;
        let output_act = match &self.output.activation {
            Some(act) => act.activate(output_net.view())?,
            None => output_net.clone(),
        };
        ensure_finite(&output_act, "activation", out_idx)?;
        let output = self.output.scaling.apply(output_act.view());
        ensure_finite(&output, "output scaling", out_idx)?;
        Ok(ForwardTrace {
            input: x.to_owned(),
            nets,
            acts,
            output_net,
            output_act,
            output,
        })
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.forward(x).map(|t| t.output)
    }
}
