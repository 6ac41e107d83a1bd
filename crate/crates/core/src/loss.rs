//! Per-sample losses `E = Σ_l ℰ(t_l, output_l)` and the output gradient seed.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};

use crate::error::{check_len, Result, VnnError};
use crate::network::{ForwardTrace, Network, OutputLayer, Scaling};

/// Outputs are clamped to at least this value before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    /// Cross-entropy is only defined against softmax outputs.
    pub fn check_scaling(self, scaling: Scaling) -> Result<()> {
        if self == LossKind::CrossEntropy && scaling != Scaling::Softmax {
            return Err(VnnError::InvalidArgument(format!(
                "cross_entropy requires softmax output scaling, got {scaling}"
            )));
        }
        Ok(())
    }

    /// Validates a target vector for this loss.
    pub fn check_target(self, target: ArrayView1<'_, f64>) -> Result<()> {
        if target.iter().any(|t| !t.is_finite()) {
            return Err(VnnError::InvalidTarget("target contains non-finite values".into()));
        }
        if self == LossKind::CrossEntropy {
            if target.iter().any(|&t| t < 0.0) {
                return Err(VnnError::InvalidTarget("cross_entropy targets must be non-negative".into()));
            }
            let total: f64 = target.sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(VnnError::InvalidTarget(format!(
                    "cross_entropy targets must sum to 1, got {total}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = VnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            other => Err(VnnError::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

/// `mse`: `Σ (o - t)² / 2`; `cross_entropy`: `-Σ t ln(max(o, 1e-12))`.
pub fn loss_value(kind: LossKind, output: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> Result<f64> {
    check_len("loss target", output.len(), target.len())?;
    kind.check_target(target)?;
    Ok(match kind {
        LossKind::Mse => output
            .iter()
            .zip(target.iter())
            .map(|(o, t)| {
                let d = o - t;
                0.5 * d * d
            })
            .sum(),
        LossKind::CrossEntropy => -output
            .iter()
            .zip(target.iter())
            .map(|(&o, &t)| if t == 0.0 { 0.0 } else { t * o.max(LOG_CLAMP).ln() })
            .sum::<f64>(),
    })
}

/// Mean of [`loss_value`] over `samples`, evaluated with [`Network::predict`].
pub fn mean_loss<'a, I>(net: &Network, samples: I, kind: LossKind) -> Result<f64>
where
    I: IntoIterator<Item = (ArrayView1<'a, f64>, ArrayView1<'a, f64>)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, t) in samples {
        let out = net.predict(x)?;
        total += loss_value(kind, out.view(), t)?;
        count += 1;
    }
    if count == 0 {
        return Err(VnnError::EmptyBatch);
    }
    Ok(total / count as f64)
}

/// `∂ℰ/∂output`, including the zero slope of the log clamp.
pub fn loss_grad_wrt_output(
    kind: LossKind,
    output: ArrayView1<'_, f64>,
    target: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    check_len("loss target", output.len(), target.len())?;
    kind.check_target(target)?;
    Ok(match kind {
        LossKind::Mse => &output - &target,
        LossKind::CrossEntropy => Array1::from_shape_fn(output.len(), |l| {
            if target[l] == 0.0 || output[l] < LOG_CLAMP {
                0.0
            } else {
                -target[l] / output[l]
            }
        }),
    })
}

/// Gradients of the loss at the two points of the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    /// `∂E/∂y` where `y = F^(O)(net^(O))` is the input to the scaling function.
    pub wrt_activation: Array1<f64>,
    /// `∂E/∂net^(O)`, the seed of the backward sweep.
    pub wrt_net: Array1<f64>,
}

pub fn output_gradient(
    kind: LossKind,
    output: &OutputLayer,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
) -> Result<OutputGradient> {
    kind.check_scaling(output.scaling)?;
    let d_scaled = loss_grad_wrt_output(kind, trace.output.view(), target)?;
    let wrt_activation = output.scaling.vjp(trace.output.view(), d_scaled.view());
    let wrt_net = match &output.activation {
        Some(act) => act.activate_deriv(trace.output_net.view())? * &wrt_activation,
        None => wrt_activation.clone(),
    };
    Ok(OutputGradient {
        wrt_activation,
        wrt_net,
    })
}

/// `g^(O) = ∂E/∂net^(O)`: the loss gradient pulled back through the scaling
/// function and, when present, the output activation.
pub fn loss_output_grad(
    kind: LossKind,
    output: &OutputLayer,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    output_gradient(kind, output, trace, target).map(|g| g.wrt_net)
}
