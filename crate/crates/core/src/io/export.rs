//! Tabulates a learned activation `F` and its slope on a uniform grid.

use crate::error::{Result, VnnError};
use crate::network::Network;
use crate::activation::ActivationMode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub value: f64,
    pub slope: f64,
}

/// Samples hidden layer `layer` (0-based) on `steps` evenly spaced points of
/// `[x_min, x_max]`, endpoints included. `neuron` must be given exactly when
/// the layer is in neuron mode.
pub fn export_activation(
    net: &Network,
    layer: usize,
    neuron: Option<usize>,
    x_min: f64,
    x_max: f64,
    steps: usize,
) -> Result<Vec<CurvePoint>> {
    let hidden = net.hidden().get(layer).ok_or_else(|| {
        VnnError::InvalidArgument(format!(
            "layer {} out of range (network has {} hidden layers)",
            layer + 1,
            net.hidden().len()
        ))
    })?;
    let act = &hidden.activation;
    let j = match (act.mode(), neuron) {
        (ActivationMode::Layer, None) => 0,
        (ActivationMode::Layer, Some(_)) => {
            return Err(VnnError::InvalidArgument(format!(
                "layer {} shares one activation; do not pass a neuron",
                layer + 1
            )))
        }
        (ActivationMode::Neuron, None) => {
            return Err(VnnError::InvalidArgument(format!(
                "layer {} has per-neuron activations; pass a neuron",
                layer + 1
            )))
        }
        (ActivationMode::Neuron, Some(j)) if j < act.width() => j,
        (ActivationMode::Neuron, Some(j)) => {
            return Err(VnnError::InvalidArgument(format!(
                "neuron {} out of range (layer {} has {})",
                j + 1,
                layer + 1,
                act.width()
            )))
        }
    };
    if steps < 2 {
        return Err(VnnError::InvalidArgument("steps must be at least 2".into()));
    }
    if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
        return Err(VnnError::InvalidArgument(format!("invalid range {x_min}:{x_max}")));
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| {
            let x = if k == steps - 1 {
                x_max
            } else {
                x_min + (x_max - x_min) * (k as f64 / last)
            };
            CurvePoint {
                x,
                value: act.eval_neuron(j, x),
                slope: act.deriv_neuron(j, x),
            }
        })
        .collect())
}

/// CSV with header `x,F,dF`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("x,F,dF\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.x, p.value, p.slope));
    }
    s
}
