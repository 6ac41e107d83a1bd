//! Central finite-difference oracle over every trainable parameter.
//!
//! The oracle only touches [`Network::forward`] and [`loss::loss_value`]; it never
//! calls into the backward sweep, which is what it checks.

use std::fmt;

use ndarray::Array1;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::{batch_backward, GradientSet};
use crate::error::{Result, VnnError};
use crate::loss::{self, LossKind};
use crate::network::Network;

/// One labelled sample `(x, target)`.
pub type Sample = (Array1<f64>, Array1<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSite {
    Weight,
    Bias,
    Alpha,
    AlphaOut,
}

impl ParamSite {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamSite::Weight => "weight",
            ParamSite::Bias => "bias",
            ParamSite::Alpha => "alpha",
            ParamSite::AlphaOut => "alpha_out",
        }
    }
}

/// Address of a single scalar parameter. `layer` is 0-based over hidden
/// layers, with `N` (the hidden count) naming the output layer. Biases use
/// `col = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamCoordinate {
    pub site: ParamSite,
    pub layer: usize,
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for ParamCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}][{},{}]", self.site.as_str(), self.layer, self.row, self.col)
    }
}

fn invalid(coord: ParamCoordinate) -> VnnError {
    VnnError::InvalidArgument(format!("invalid parameter coordinate {coord}"))
}

/// Every parameter coordinate of `net`, in a fixed order: per layer, weights
/// row-major, then biases, then coefficients row-major.
pub fn coordinates(net: &Network) -> Vec<ParamCoordinate> {
    let mut out = Vec::new();
    let push_matrix = |site, layer, rows: usize, cols: usize, out: &mut Vec<ParamCoordinate>| {
        for row in 0..rows {
            for col in 0..cols {
                out.push(ParamCoordinate { site, layer, row, col });
            }
        }
    };
    for (l, layer) in net.hidden().iter().enumerate() {
        let (r, c) = layer.weights.dim();
        push_matrix(ParamSite::Weight, l, r, c, &mut out);
        push_matrix(ParamSite::Bias, l, layer.bias.len(), 1, &mut out);
        let (r, c) = layer.activation.coeffs().dim();
        push_matrix(ParamSite::Alpha, l, r, c, &mut out);
    }
    let n = net.hidden().len();
    let o = net.output();
    let (r, c) = o.weights.dim();
    push_matrix(ParamSite::Weight, n, r, c, &mut out);
    push_matrix(ParamSite::Bias, n, o.bias.len(), 1, &mut out);
    if let Some(act) = &o.activation {
        let (r, c) = act.coeffs().dim();
        push_matrix(ParamSite::AlphaOut, n, r, c, &mut out);
    }
    out
}

fn param_slot(net: &mut Network, coord: ParamCoordinate) -> Option<&mut f64> {
    let n = net.hidden().len();
    let ParamCoordinate { site, layer, row, col } = coord;
    match site {
        ParamSite::Weight if layer < n => net.hidden_mut()[layer].weights.get_mut((row, col)),
        ParamSite::Weight if layer == n => net.output_mut().weights.get_mut((row, col)),
        ParamSite::Bias if col != 0 => None,
        ParamSite::Bias if layer < n => net.hidden_mut()[layer].bias.get_mut(row),
        ParamSite::Bias if layer == n => net.output_mut().bias.get_mut(row),
        ParamSite::Alpha if layer < n => net.hidden_mut()[layer].activation.coeffs_mut().get_mut((row, col)),
        ParamSite::AlphaOut if layer == n => net
            .output_mut()
            .activation
            .as_mut()
            .and_then(|a| a.coeffs_mut().get_mut((row, col))),
        _ => None,
    }
}

/// Reads one parameter.
pub fn param_value(net: &Network, coord: ParamCoordinate) -> Result<f64> {
    let n = net.hidden().len();
    let ParamCoordinate { site, layer, row, col } = coord;
    let v = match site {
        ParamSite::Weight if layer < n => net.hidden()[layer].weights.get((row, col)),
        ParamSite::Weight if layer == n => net.output().weights.get((row, col)),
        ParamSite::Bias if col != 0 => None,
        ParamSite::Bias if layer < n => net.hidden()[layer].bias.get(row),
        ParamSite::Bias if layer == n => net.output().bias.get(row),
        ParamSite::Alpha if layer < n => net.hidden()[layer].activation.coeffs().get((row, col)),
        ParamSite::AlphaOut if layer == n => net
            .output()
            .activation
            .as_ref()
            .and_then(|a| a.coeffs().get((row, col))),
        _ => None,
    };
    v.copied().ok_or_else(|| invalid(coord))
}

/// Overwrites one parameter.
pub fn set_param(net: &mut Network, coord: ParamCoordinate, value: f64) -> Result<()> {
    *param_slot(net, coord).ok_or_else(|| invalid(coord))? = value;
    Ok(())
}

/// Reads the gradient entry matching `coord`.
pub fn gradient_value(grads: &GradientSet, coord: ParamCoordinate) -> Result<f64> {
    let n = grads.hidden.len();
    let ParamCoordinate { site, layer, row, col } = coord;
    let layer_grads = match layer.cmp(&n) {
        std::cmp::Ordering::Less => &grads.hidden[layer],
        std::cmp::Ordering::Equal => &grads.output,
        std::cmp::Ordering::Greater => return Err(invalid(coord)),
    };
    let v = match site {
        ParamSite::Weight => layer_grads.weights.get((row, col)),
        ParamSite::Bias if col == 0 => layer_grads.bias.get(row),
        ParamSite::Alpha if layer < n => layer_grads.alpha.as_ref().and_then(|a| a.get((row, col))),
        ParamSite::AlphaOut if layer == n => layer_grads.alpha.as_ref().and_then(|a| a.get((row, col))),
        _ => None,
    };
    v.copied().ok_or_else(|| invalid(coord))
}

/// Mean loss over `samples`.
pub fn mean_loss(net: &Network, samples: &[Sample], kind: LossKind) -> Result<f64> {
    loss::mean_loss(net, samples.iter().map(|(x, t)| (x.view(), t.view())), kind)
}

fn numeric_partial_batch(
    net: &Network,
    samples: &[Sample],
    kind: LossKind,
    coord: ParamCoordinate,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(VnnError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut work = net.clone();
    let orig = param_value(net, coord)?;
    set_param(&mut work, coord, orig + h)?;
    let plus = mean_loss(&work, samples, kind)?;
    set_param(&mut work, coord, orig - h)?;
    let minus = mean_loss(&work, samples, kind)?;
    Ok((plus - minus) / (2.0 * h))
}

/// `(E(θ + h·e) - E(θ - h·e)) / 2h` for the single parameter at `coord`.
/// Works on a private clone, so `net` is untouched.
pub fn numeric_partial(
    net: &Network,
    x: &Array1<f64>,
    target: &Array1<f64>,
    kind: LossKind,
    coord: ParamCoordinate,
    h: f64,
) -> Result<f64> {
    let sample = [(x.clone(), target.clone())];
    numeric_partial_batch(net, &sample, kind, coord, h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Above this many coordinates a seeded random subset of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            h: 1e-5,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_coords: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckFailure {
    pub coord: ParamCoordinate,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinate with the largest absolute error.
    pub worst: Option<ParamCoordinate>,
    pub failures: Vec<CheckFailure>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Failures as CSV: `site,layer,row,col,analytic,numeric`.
    pub fn failures_csv(&self) -> String {
        let mut s = String::from("site,layer,row,col,analytic,numeric\n");
        for f in &self.failures {
            let c = f.coord;
            s.push_str(&format!(
                "{},{},{},{},{:.16e},{:.16e}\n",
                c.site.as_str(),
                c.layer,
                c.row,
                c.col,
                f.analytic,
                f.numeric
            ));
        }
        s
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "checked      {:>10}", self.n_checked)?;
        writeln!(f, "max abs err  {:>10.3e}", self.max_abs_err)?;
        writeln!(f, "max rel err  {:>10.3e}", self.max_rel_err)?;
        if let Some(w) = self.worst {
            writeln!(f, "worst        {w:>10}")?;
        }
        writeln!(f, "failures     {:>10}", self.failures.len())?;
        for fail in &self.failures {
            writeln!(
                f,
                "  {:<24} analytic {:>+.9e}  numeric {:>+.9e}",
                fail.coord.to_string(),
                fail.analytic,
                fail.numeric
            )?;
        }
        Ok(())
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Coefficients of a frozen layer are not trainable parameters.
fn is_frozen(net: &Network, coord: ParamCoordinate) -> bool {
    match coord.site {
        ParamSite::Alpha => net.hidden().get(coord.layer).is_some_and(|l| !l.trainable_alpha),
        ParamSite::AlphaOut => !net.output().trainable_alpha,
        _ => false,
    }
}

/// Compares `analytic` against finite differences of the mean loss; frozen
/// coefficients are compared against 0. A coordinate fails when its absolute error exceeds `abs_tol` and its relative
/// error exceeds `rel_tol`.
pub fn compare_gradients(
    net: &Network,
    samples: &[Sample],
    kind: LossKind,
    analytic: &GradientSet,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    let mut coords = coordinates(net);
    if coords.len() > opts.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = sample(&mut rng, coords.len(), opts.max_coords).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }
    let mut report = CheckReport {
        n_checked: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        failures: Vec::new(),
    };
    for coord in coords {
        let a = gradient_value(analytic, coord)?;
        let n = if is_frozen(net, coord) {
            0.0
        } else {
            numeric_partial_batch(net, samples, kind, coord, opts.h).unwrap_or(f64::NAN)
        };
        let abs = (a - n).abs();
        let rel = relative_error(a, n);
        report.n_checked += 1;
        if abs > report.max_abs_err || abs.is_nan() {
            report.max_abs_err = abs;
            report.worst = Some(coord);
        }
        report.max_rel_err = report.max_rel_err.max(rel);
        if !(abs <= opts.abs_tol || rel <= opts.rel_tol) {
            report.failures.push(CheckFailure {
                coord,
                analytic: a,
                numeric: n,
            });
        }
    }
    Ok(report)
}

/// Runs [`batch_backward`] and compares it against the oracle.
pub fn check_gradients(
    net: &Network,
    samples: &[Sample],
    kind: LossKind,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    for (name, v) in [("h", opts.h), ("rel_tol", opts.rel_tol), ("abs_tol", opts.abs_tol)] {
        if v.is_nan() || v <= 0.0 {
            return Err(VnnError::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    let pairs = samples.iter().map(|(x, t)| (x.view(), t.view()));
    let grads = batch_backward(net, pairs, kind)?;
    compare_gradients(net, samples, kind, &grads, opts)
}

/// Default distance kept between any pre-activation and a rectifier kink.
pub const KINK_MARGIN: f64 = 1e-4;

fn bias_shift_clearing(values: &[f64], margin: f64) -> f64 {
    if values.iter().all(|v| v.abs() >= margin) {
        return 0.0;
    }
    for step in 1.. {
        for sign in [1.0, -1.0] {
            let s = sign * 2.0 * margin * step as f64;
            if values.iter().all(|v| (v + s).abs() >= margin) {
                return s;
            }
        }
    }
    unreachable!()
}

/// Shifts biases so that no pre-activation feeding a kinked basis (the
/// rectifier) lies within `margin` of 0 on any sample. Layers are processed
/// front to back. Returns the number of biases moved.
pub fn clear_kinks(net: &mut Network, samples: &[Sample], margin: f64) -> Result<usize> {
    let mut moved = 0;
    let n = net.hidden().len();
    for layer in 0..=n {
        let kinked = if layer < n {
            net.hidden()[layer].activation.family().has_kink()
        } else {
            net.output().activation.as_ref().is_some_and(|a| a.family().has_kink())
        };
        if !kinked {
            continue;
        }
        let traces = samples
            .iter()
            .map(|(x, _)| net.forward(x.view()))
            .collect::<Result<Vec<_>>>()?;
        let width = if layer < n { net.hidden()[layer].out_width() } else { net.output_width() };
        for j in 0..width {
            let values: Vec<f64> = traces
                .iter()
                .map(|t| if layer < n { t.nets[layer][j] } else { t.output_net[j] })
                .collect();
            let shift = bias_shift_clearing(&values, margin);
            if shift != 0.0 {
                let bias = if layer < n {
                    &mut net.hidden_mut()[layer].bias
                } else {
                    &mut net.output_mut().bias
                };
                bias[j] += shift;
                moved += 1;
            }
        }
    }
    Ok(moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{ActivationMode, VariationalActivation};
    use crate::basis::BasisFamily;
    use crate::network::{Architecture, HiddenLayer, OutputLayer, Scaling};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn linear_scalar(w: f64) -> Network {
        let poly = BasisFamily::polynomial(2).unwrap();
        Network::from_parts(
            vec![HiddenLayer {
                weights: array![[w]],
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

    fn fourier_net(seed: u64) -> (Network, Vec<Sample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(
            vec![3, 4, 3, 2],
            BasisFamily::fourier(4, 1.0).unwrap(),
            ActivationMode::Neuron,
            Scaling::Identity,
        );
        let net = Network::init(&arch, &mut rng).unwrap();
        let samples = (0..3)
            .map(|_| {
                (
                    Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0)),
                    Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        (net, samples)
    }

    const W0: ParamCoordinate = ParamCoordinate {
        site: ParamSite::Weight,
        layer: 0,
        row: 0,
        col: 0,
    };

    #[test]
    fn quadratic_scalar_case() {
        let net = linear_scalar(2.0);
        let n = numeric_partial(&net, &array![1.0], &array![0.0], LossKind::Mse, W0, 1e-5).unwrap();
        assert_relative_eq!(n, 2.0, max_relative = 1e-9);
    }

    #[test]
    fn zero_network_has_zero_partials() {
        let mut net = linear_scalar(0.0);
        net.output_mut().weights.fill(0.0);
        for coord in coordinates(&net) {
            let n = numeric_partial(&net, &array![0.7], &array![0.0], LossKind::Mse, coord, 1e-5).unwrap();
            assert_eq!(n, 0.0, "{coord}");
        }
    }

    #[test]
    fn perturbation_leaves_network_untouched() {
        let (net, samples) = fourier_net(1);
        let before = net.clone();
        for coord in coordinates(&net).into_iter().take(10) {
            numeric_partial(&net, &samples[0].0, &samples[0].1, LossKind::Mse, coord, 1e-5).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn random_fourier_network_passes() {
        let (net, samples) = fourier_net(2);
        let report = check_gradients(&net, &samples, LossKind::Mse, &CheckOptions::default()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.n_checked, coordinates(&net).len());
    }

    #[test]
    fn frozen_alpha_compares_zero_against_zero() {
        let (mut net, samples) = fourier_net(3);
        net.set_trainable_alpha(0, false).unwrap();
        let pairs = samples.iter().map(|(x, t)| (x.view(), t.view()));
        let grads = batch_backward(&net, pairs, LossKind::Mse).unwrap();
        for coord in coordinates(&net).into_iter().filter(|c| c.site == ParamSite::Alpha && c.layer == 0) {
            assert_eq!(gradient_value(&grads, coord).unwrap(), 0.0);
        }
        let report = compare_gradients(&net, &samples, LossKind::Mse, &grads, &CheckOptions::default()).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn frozen_alpha_with_nonzero_analytic_fails() {
        let (mut net, samples) = fourier_net(3);
        net.set_trainable_alpha(0, false).unwrap();
        let pairs = samples.iter().map(|(x, t)| (x.view(), t.view()));
        let mut grads = batch_backward(&net, pairs, LossKind::Mse).unwrap();
        grads.hidden[0].alpha.as_mut().unwrap()[[1, 2]] = 0.5;
        let report = compare_gradients(&net, &samples, LossKind::Mse, &grads, &CheckOptions::default()).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].numeric, 0.0);
    }

    #[test]
    fn corrupted_weight_gradient_is_reported() {
        let (net, samples) = fourier_net(4);
        let pairs = samples.iter().map(|(x, t)| (x.view(), t.view()));
        let mut grads = batch_backward(&net, pairs, LossKind::Mse).unwrap();
        grads.hidden[1].weights[[2, 1]] += 0.1;
        let report = compare_gradients(&net, &samples, LossKind::Mse, &grads, &CheckOptions::default()).unwrap();
        let bad = ParamCoordinate {
            site: ParamSite::Weight,
            layer: 1,
            row: 2,
            col: 1,
        };
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].coord, bad);
        assert_eq!(report.worst, Some(bad));
        assert!(report.failures_csv().lines().nth(1).unwrap().starts_with("weight,1,2,1,"));
    }

    #[test]
    fn subset_is_seeded() {
        let (net, samples) = fourier_net(5);
        let opts = CheckOptions {
            max_coords: 7,
            seed: 99,
            ..CheckOptions::default()
        };
        let a = check_gradients(&net, &samples, LossKind::Mse, &opts).unwrap();
        let b = check_gradients(&net, &samples, LossKind::Mse, &opts).unwrap();
        assert_eq!(a.n_checked, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_inputs() {
        let (net, samples) = fourier_net(6);
        let bad = ParamCoordinate {
            site: ParamSite::AlphaOut,
            layer: 2,
            row: 0,
            col: 0,
        };
        assert!(param_value(&net, bad).is_err());
        let oob = ParamCoordinate { row: 50, ..W0 };
        assert!(numeric_partial(&net, &samples[0].0, &samples[0].1, LossKind::Mse, oob, 1e-5).is_err());
        assert!(numeric_partial(&net, &samples[0].0, &samples[0].1, LossKind::Mse, W0, 0.0).is_err());
        let opts = CheckOptions {
            rel_tol: 0.0,
            ..CheckOptions::default()
        };
        assert!(check_gradients(&net, &samples, LossKind::Mse, &opts).is_err());
    }

    #[test]
    fn kink_clearing_moves_nets_off_zero() {
        let classic = BasisFamily::classic(4).unwrap();
        let mut net = Network::from_parts(
            vec![HiddenLayer {
                weights: Array2::from_elem((1, 2), 1.0),
                bias: array![0.0, 0.0],
                activation: VariationalActivation::layer(classic, 2, &[0.0, 0.0, 0.0, 1.0]).unwrap(),
                trainable_alpha: true,
            }],
            OutputLayer {
                weights: Array2::from_elem((2, 1), 1.0),
                bias: array![0.0],
                activation: None,
                trainable_alpha: true,
                scaling: Scaling::Identity,
            },
        )
        .unwrap();
        let samples = vec![(array![0.0], array![1.0]), (array![-0.00015], array![0.0])];
        let moved = clear_kinks(&mut net, &samples, KINK_MARGIN).unwrap();
        assert_eq!(moved, 2);
        for (x, _) in &samples {
            let t = net.forward(x.view()).unwrap();
            assert!(t.nets[0].iter().all(|v| v.abs() >= KINK_MARGIN));
        }
        let report = check_gradients(&net, &samples, LossKind::Mse, &CheckOptions::default()).unwrap();
        assert!(report.passed(), "{report}");
    }
}
