//! Gradients of the loss with respect to weights, biases and activation
//! coefficients.
//!
//! The production path is a single backward sweep. With `g = ∂E/∂net^(O)`:
//!
//! ```text
//! u^(N)   = W^(O) g
//! δ^(L)   = F'^(L)(net^(L)) ⊙ u^(L)
//! u^(L-1) = W^(L) δ^(L)
//! ```
//!
//! and the coefficient gradients are read off `u^(L)` against the basis matrix
//! `F^(L)[i][j] = f_i(net_j^(L))`: summed over neurons in layer mode, kept per
//! neuron in neuron mode.
//!
//! [`alpha_grad_layer_closed_form`] and [`alpha_grad_neuron_closed_form`]
//! evaluate the same quantities as explicit matrix chains. They cost
//! O(depth²) products and exist to cross-check the sweep.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::activation::ActivationMode;
use crate::error::{check_len, Result, VnnError};
use crate::loss::{loss_output_grad, output_gradient, LossKind};
use crate::network::{ForwardTrace, Network};

/// Gradients for one layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Always present for hidden layers; present on the output layer only
    /// when it carries a variational activation.
    pub alpha: Option<Array2<f64>>,
}

impl LayerGradients {
    fn map_inplace(&mut self, f: impl Fn(f64) -> f64 + Copy) {
        self.weights.mapv_inplace(f);
        self.bias.mapv_inplace(f);
        if let Some(a) = &mut self.alpha {
            a.mapv_inplace(f);
        }
    }

    fn add_assign(&mut self, other: &LayerGradients) {
        self.weights += &other.weights;
        self.bias += &other.bias;
        if let (Some(a), Some(b)) = (&mut self.alpha, &other.alpha) {
            *a += b;
        }
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
            && self.alpha.as_ref().is_none_or(|a| a.iter().all(|v| v.is_finite()))
    }
}

/// `∂E/∂W`, `∂E/∂b`, `∂E/∂α` for every layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub hidden: Vec<LayerGradients>,
    pub output: LayerGradients,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        let hidden = net
            .hidden()
            .iter()
            .map(|l| LayerGradients {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
                alpha: Some(Array2::zeros(l.activation.coeffs().raw_dim())),
            })
            .collect();
        let out = net.output();
        let output = LayerGradients {
            weights: Array2::zeros(out.weights.raw_dim()),
            bias: Array1::zeros(out.bias.len()),
            alpha: out.activation.as_ref().map(|a| Array2::zeros(a.coeffs().raw_dim())),
        };
        GradientSet { hidden, output }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerGradients> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerGradients> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.output))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in self.layers_mut() {
            l.map_inplace(|v| v * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for l in self.layers() {
            let alpha = l.alpha.iter().flat_map(|a| a.iter());
            for v in l.weights.iter().chain(l.bias.iter()).chain(alpha) {
                m = m.max(v.abs());
            }
        }
        m
    }

    fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.add_assign(b);
        }
        self.output.add_assign(&other.output);
    }
}

/// Intermediate vectors of one backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardState {
    /// `∇_{net^(O)} ℰ`.
    pub g_out: Array1<f64>,
    /// `∂E/∂y` at the input of the scaling function (after `F^(O)`).
    pub g_out_act: Array1<f64>,
    /// `∂E/∂a^(L)` per hidden layer.
    pub u: Vec<Array1<f64>>,
    /// `∂E/∂net^(L)` per hidden layer.
    pub delta: Vec<Array1<f64>>,
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    check_len("trace input", net.input_width(), trace.input.len())?;
    check_len("trace layer count", net.hidden().len(), trace.nets.len())?;
    check_len("trace layer count", net.hidden().len(), trace.acts.len())?;
    for (layer, (n, a)) in net.hidden().iter().zip(trace.nets.iter().zip(&trace.acts)) {
        check_len("trace pre-activation", layer.out_width(), n.len())?;
        check_len("trace activation", layer.out_width(), a.len())?;
    }
    check_len("trace output", net.output_width(), trace.output_net.len())?;
    check_len("trace output", net.output_width(), trace.output.len())
}

/// `W·v` with `W` stored `in × out`, giving a vector over the source layer.
fn pull_back(w: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(w.nrows(), |p| {
        let mut s = 0.0;
        for j in 0..w.ncols() {
            s += w[[p, j]] * v[j];
        }
        s
    })
}

/// Outer product `a ⊗ b`, shaped like a weight matrix.
fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(p, j)| a[p] * b[j])
}

pub fn backward_state(
    net: &Network,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
    kind: LossKind,
) -> Result<BackwardState> {
    check_trace(net, trace)?;
    check_len("target", net.output_width(), target.len())?;
    let og = output_gradient(kind, net.output(), trace, target)?;
    let n = net.hidden().len();
    let mut u = vec![Array1::zeros(0); n];
    let mut delta = vec![Array1::zeros(0); n];
    let mut upstream = pull_back(&net.output().weights, &og.wrt_net);
    for l in (0..n).rev() {
        let layer = &net.hidden()[l];
        let d = layer.activation.activate_deriv(trace.nets[l].view())? * &upstream;
        let next = pull_back(&layer.weights, &d);
        u[l] = upstream;
        delta[l] = d;
        upstream = next;
    }
    Ok(BackwardState {
        g_out: og.wrt_net,
        g_out_act: og.wrt_activation,
        u,
        delta,
    })
}

/// Single-sample gradients of `E` for every parameter.
pub fn backward(
    net: &Network,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
    kind: LossKind,
) -> Result<GradientSet> {
    let state = backward_state(net, trace, target, kind)?;
    let n = net.hidden().len();
    let mut hidden = Vec::with_capacity(n);
    for (l, layer) in net.hidden().iter().enumerate() {
        let source = if l == 0 { trace.input.view() } else { trace.acts[l - 1].view() };
        let u = &state.u[l];
        let act = &layer.activation;
        let alpha = if layer.trainable_alpha {
            let basis = act.family().basis_matrix(trace.nets[l].view());
            let per_neuron = &basis * u;
            match act.mode() {
                ActivationMode::Neuron => per_neuron,
                ActivationMode::Layer => per_neuron.sum_axis(Axis(1)).insert_axis(Axis(1)),
            }
        } else {
            Array2::zeros(act.coeffs().raw_dim())
        };
        let grads = LayerGradients {
            weights: outer(source, state.delta[l].view()),
            bias: state.delta[l].clone(),
            alpha: Some(alpha),
        };
        if !grads.all_finite() {
            return Err(VnnError::NonFinite {
                stage: "gradient",
                layer: l + 1,
            });
        }
        hidden.push(grads);
    }

    let out = net.output();
    let alpha_out = out.activation.as_ref().map(|act| {
        if out.trainable_alpha {
            let basis = act.family().basis_matrix(trace.output_net.view());
            (&basis * &state.g_out_act).sum_axis(Axis(1)).insert_axis(Axis(1))
        } else {
            Array2::zeros(act.coeffs().raw_dim())
        }
    });
    let output = LayerGradients {
        weights: outer(trace.acts[n - 1].view(), state.g_out.view()),
        bias: state.g_out.clone(),
        alpha: alpha_out,
    };
    if !output.all_finite() {
        return Err(VnnError::NonFinite {
            stage: "gradient",
            layer: n + 1,
        });
    }
    Ok(GradientSet { hidden, output })
}

/// Mean of per-sample gradients, accumulated in sample order.
pub fn batch_backward<'a, I>(net: &Network, samples: I, kind: LossKind) -> Result<GradientSet>
where
    I: IntoIterator<Item = (ArrayView1<'a, f64>, ArrayView1<'a, f64>)>,
{
    let mut total: Option<GradientSet> = None;
    let mut count = 0usize;
    for (x, t) in samples {
        let trace = net.forward(x)?;
        let g = backward(net, &trace, t, kind)?;
        match &mut total {
            None => total = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
        count += 1;
    }
    let mut total = total.ok_or(VnnError::EmptyBatch)?;
    if count > 1 {
        let inv = count as f64;
        for l in total.layers_mut() {
            l.map_inplace(|v| v / inv);
        }
    }
    Ok(total)
}

/// Weight matrix entering layer `idx`, where `idx == N` is the output layer.
fn weights_into(net: &Network, idx: usize) -> &Array2<f64> {
    match net.hidden().get(idx) {
        Some(layer) => &layer.weights,
        None => &net.output().weights,
    }
}

fn check_layer_index(net: &Network, layer: usize) -> Result<()> {
    let n = net.hidden().len();
    if layer < n {
        Ok(())
    } else {
        Err(VnnError::InvalidArgument(format!(
            "hidden layer {layer} out of range (network has {n})"
        )))
    }
}

/// Layer-mode coefficient gradient of hidden layer `layer` (0-based) as the
/// literal chain `F^(L) · W^(L+1) · W̃^(L+2) ⋯ W̃^(O) · g^(O)`, where
/// `W̃^(β)[i][j] = W^(β)[i][j] · F'^(β-1)(net_i^(β-1))`.
pub fn alpha_grad_layer_closed_form(
    net: &Network,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
    kind: LossKind,
    layer: usize,
) -> Result<Array1<f64>> {
    check_layer_index(net, layer)?;
    check_trace(net, trace)?;
    let act = &net.hidden()[layer].activation;
    if act.mode() != ActivationMode::Layer {
        return Err(VnnError::InvalidArgument(format!(
            "hidden layer {layer} uses neuron mode; the layer closed form needs layer mode"
        )));
    }
    let g = loss_output_grad(kind, net.output(), trace, target)?;
    let n = net.hidden().len();

    let mut v = g;
    for beta in (layer + 2..=n).rev() {
        let src = &net.hidden()[beta - 1];
        let slope = src.activation.activate_deriv(trace.nets[beta - 1].view())?;
        let w = weights_into(net, beta);
        let w_tilde = Array2::from_shape_fn(w.raw_dim(), |(i, j)| w[[i, j]] * slope[i]);
        v = w_tilde.dot(&v);
    }
    v = weights_into(net, layer + 1).dot(&v);
    let basis = act.family().basis_matrix(trace.nets[layer].view());
    Ok(basis.dot(&v))
}

/// Neuron-mode coefficient gradient of hidden layer `layer` (0-based) as the
/// nested pipeline `F^(L) ⊙ (W^(L+1) ∇F^(L+1) ⊙ ( ⋯ ⊙ (W^(O) g^(O))))`, with
/// `⊙` scaling column `j` of the left operand by entry `j` of the right.
pub fn alpha_grad_neuron_closed_form(
    net: &Network,
    trace: &ForwardTrace,
    target: ArrayView1<'_, f64>,
    kind: LossKind,
    layer: usize,
) -> Result<Array2<f64>> {
    check_layer_index(net, layer)?;
    check_trace(net, trace)?;
    let act = &net.hidden()[layer].activation;
    if act.mode() != ActivationMode::Neuron {
        return Err(VnnError::InvalidArgument(format!(
            "hidden layer {layer} uses layer mode; the neuron closed form needs neuron mode"
        )));
    }
    let g = loss_output_grad(kind, net.output(), trace, target)?;
    let n = net.hidden().len();

    let mut v = net.output().weights.dot(&g);
    for beta in (layer + 1..n).rev() {
        let l = &net.hidden()[beta];
        let grad_f = l.activation.activate_deriv(trace.nets[beta].view())?;
        v = l.weights.dot(&(&grad_f * &v));
    }
    let basis = act.family().basis_matrix(trace.nets[layer].view());
    Ok(basis * &v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::VariationalActivation;
    use crate::basis::BasisFamily;
    use crate::network::{Architecture, HiddenLayer, OutputLayer, Scaling};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_identity_net() -> Network {
        let poly = BasisFamily::polynomial(2).unwrap();
        Network::from_parts(
            vec![HiddenLayer {
                weights: array![[1.0]],
                bias: array![0.0],
                activation: VariationalActivation::layer(poly, 1, &[0.0, 1.0]).unwrap(),
                trainable_alpha: true,
            }],
            OutputLayer {
                weights: array![[1.0]],
                bias: array![0.0],
                activation: None,
                trainable_alpha: true,
                scaling: Scaling::Identity,
            },
        )
        .unwrap()
    }

    fn random_net(seed: u64, widths: Vec<usize>, mode: ActivationMode) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(widths, BasisFamily::fourier(4, 1.1).unwrap(), mode, Scaling::Identity);
        let mut net = Network::init(&arch, &mut rng).unwrap();
        for layer in net.hidden_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        net
    }

    #[test]
    fn scalar_identity_network() {
        let net = scalar_identity_net();
        let trace = net.forward(array![1.0].view()).unwrap();
        assert_eq!(trace.output, array![1.0]);
        let g = backward(&net, &trace, array![0.0].view(), LossKind::Mse).unwrap();
        assert_eq!(g.hidden[0].alpha.as_ref().unwrap(), &array![[1.0], [1.0]]);
        assert_eq!(g.hidden[0].weights, array![[1.0]]);
        assert_eq!(g.output.weights, array![[1.0]]);
        assert_eq!(g.output.bias, array![1.0]);
    }

    #[test]
    fn zero_output_weights_zero_last_alpha() {
        let mut net = random_net(1, vec![3, 4, 2], ActivationMode::Neuron);
        net.output_mut().weights.fill(0.0);
        let trace = net.forward(array![0.5, -0.2, 0.9].view()).unwrap();
        let g = backward(&net, &trace, array![1.0, -1.0].view(), LossKind::Mse).unwrap();
        assert!(g.hidden[0].alpha.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_layer_reports_zero_alpha() {
        let mut net = random_net(2, vec![2, 3, 3, 1], ActivationMode::Layer);
        net.set_trainable_alpha(0, false).unwrap();
        let trace = net.forward(array![0.5, -0.2].view()).unwrap();
        let g = backward(&net, &trace, array![1.0].view(), LossKind::Mse).unwrap();
        assert!(g.hidden[0].alpha.as_ref().unwrap().iter().all(|&v| v == 0.0));
        assert!(g.hidden[1].alpha.as_ref().unwrap().iter().any(|&v| v != 0.0));
        // the frozen layer still passes gradient through
        assert!(g.hidden[0].weights.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn delta_is_slope_times_u() {
        let net = random_net(3, vec![2, 5, 4, 2], ActivationMode::Neuron);
        let trace = net.forward(array![0.1, 0.7].view()).unwrap();
        let st = backward_state(&net, &trace, array![0.0, 1.0].view(), LossKind::Mse).unwrap();
        for (l, layer) in net.hidden().iter().enumerate() {
            let slope = layer.activation.activate_deriv(trace.nets[l].view()).unwrap();
            for j in 0..slope.len() {
                assert_eq!(st.delta[l][j], slope[j] * st.u[l][j]);
            }
        }
    }

    #[test]
    fn closed_form_depth_one_and_zero_seed() {
        let net = random_net(4, vec![2, 3, 2], ActivationMode::Layer);
        let trace = net.forward(array![0.3, -0.4].view()).unwrap();
        let t = array![0.2, 0.1];
        let g = loss_output_grad(LossKind::Mse, net.output(), &trace, t.view()).unwrap();
        let basis = net.hidden()[0].activation.family().basis_matrix(trace.nets[0].view());
        let direct = basis.dot(&net.output().weights.dot(&g));
        let closed = alpha_grad_layer_closed_form(&net, &trace, t.view(), LossKind::Mse, 0).unwrap();
        assert_eq!(closed, direct);

        let at_target = trace.output.clone();
        let zero = alpha_grad_layer_closed_form(&net, &trace, at_target.view(), LossKind::Mse, 0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_mode_errors() {
        let net = random_net(5, vec![2, 3, 2], ActivationMode::Neuron);
        let trace = net.forward(array![0.3, -0.4].view()).unwrap();
        let t = array![0.2, 0.1];
        assert!(alpha_grad_layer_closed_form(&net, &trace, t.view(), LossKind::Mse, 0).is_err());
        assert!(alpha_grad_neuron_closed_form(&net, &trace, t.view(), LossKind::Mse, 3).is_err());

        let net = random_net(5, vec![2, 3, 2], ActivationMode::Layer);
        assert!(alpha_grad_neuron_closed_form(&net, &trace, t.view(), LossKind::Mse, 0).is_err());
    }

    #[test]
    fn neuron_closed_form_width_one_equals_layer_form() {
        let make = |mode| {
            let mut net = random_net(6, vec![2, 3, 1, 2], ActivationMode::Layer);
            let alpha = [0.2, 0.9, -0.1, 0.3];
            let fam = *net.hidden()[1].activation.family();
            net.hidden_mut()[1].activation = match mode {
                ActivationMode::Layer => VariationalActivation::layer(fam, 1, &alpha).unwrap(),
                ActivationMode::Neuron => VariationalActivation::neuron_tied(fam, 1, &alpha).unwrap(),
            };
            net
        };
        let (ln, nn) = (make(ActivationMode::Layer), make(ActivationMode::Neuron));
        let x = array![0.4, 0.8];
        let t = array![1.0, 0.0];
        let lt = ln.forward(x.view()).unwrap();
        let nt = nn.forward(x.view()).unwrap();
        let lg = alpha_grad_layer_closed_form(&ln, &lt, t.view(), LossKind::Mse, 1).unwrap();
        let ng = alpha_grad_neuron_closed_form(&nn, &nt, t.view(), LossKind::Mse, 1).unwrap();
        for i in 0..4 {
            assert!((lg[i] - ng[[i, 0]]).abs() <= 1e-12);
        }
    }

    #[test]
    fn neuron_closed_form_zero_u() {
        let mut net = random_net(7, vec![2, 3, 2], ActivationMode::Neuron);
        net.output_mut().weights.fill(0.0);
        let trace = net.forward(array![0.3, -0.4].view()).unwrap();
        let g = alpha_grad_neuron_closed_form(&net, &trace, array![1.0, 1.0].view(), LossKind::Mse, 0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_examples() {
        let net = random_net(8, vec![2, 4, 3, 1], ActivationMode::Neuron);
        let (x1, t1) = (array![0.2, -0.6], array![0.5]);
        let (x2, t2) = (array![-1.0, 0.3], array![-0.5]);
        let single = backward(&net, &net.forward(x1.view()).unwrap(), t1.view(), LossKind::Mse).unwrap();

        let one = batch_backward(&net, [(x1.view(), t1.view())], LossKind::Mse).unwrap();
        assert_eq!(one, single);

        let twice = batch_backward(&net, [(x1.view(), t1.view()), (x1.view(), t1.view())], LossKind::Mse).unwrap();
        assert_eq!(twice, single);

        let other = backward(&net, &net.forward(x2.view()).unwrap(), t2.view(), LossKind::Mse).unwrap();
        let pair = batch_backward(&net, [(x1.view(), t1.view()), (x2.view(), t2.view())], LossKind::Mse).unwrap();
        let mut expect = single.clone();
        expect.add_assign(&other);
        expect.scale(0.5);
        let mut diff = pair.clone();
        let mut neg = expect.clone();
        neg.scale(-1.0);
        diff.add_assign(&neg);
        assert!(diff.max_abs() <= 1e-15);

        let empty: Vec<(ArrayView1<f64>, ArrayView1<f64>)> = vec![];
        assert_eq!(batch_backward(&net, empty, LossKind::Mse), Err(VnnError::EmptyBatch));
    }

    #[test]
    fn backward_shape_errors() {
        let net = random_net(9, vec![2, 3, 1], ActivationMode::Layer);
        let trace = net.forward(array![0.3, -0.4].view()).unwrap();
        assert!(matches!(
            backward(&net, &trace, array![1.0, 2.0].view(), LossKind::Mse),
            Err(VnnError::DimensionMismatch { .. })
        ));
        let other = random_net(9, vec![2, 4, 1], ActivationMode::Layer);
        assert!(backward(&other, &trace, array![1.0].view(), LossKind::Mse).is_err());
    }
}
