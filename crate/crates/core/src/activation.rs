//! Trainable activations `F(x) = Σ_i α_i f_i(x)` over a [`BasisFamily`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::basis::{BasisFamily, BasisKind, CLASSIC_TANH};
use crate::error::{check_len, Result, VnnError};

/// Whether coefficients are shared by the whole layer or owned per neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationMode {
    Layer,
    Neuron,
}

impl ActivationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ActivationMode::Layer => "layer",
            ActivationMode::Neuron => "neuron",
        }
    }
}

impl fmt::Display for ActivationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivationMode {
    type Err = VnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" => Ok(ActivationMode::Layer),
            "neuron" => Ok(ActivationMode::Neuron),
            other => Err(VnnError::InvalidArgument(format!("unknown activation mode `{other}`"))),
        }
    }
}

/// Coefficients over a basis family. `coeffs` is `M × 1` in layer mode and
/// `M × width` in neuron mode, where column `j` belongs to neuron `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalActivation {
    family: BasisFamily,
    mode: ActivationMode,
    width: usize,
    coeffs: Array2<f64>,
}

impl VariationalActivation {
    pub fn new(
        family: BasisFamily,
        mode: ActivationMode,
        width: usize,
        coeffs: Array2<f64>,
    ) -> Result<Self> {
        if width == 0 {
            return Err(VnnError::InvalidArgument("activation width must be positive".into()));
        }
        check_len("coefficient rows", family.size(), coeffs.nrows())?;
        let cols = match mode {
            ActivationMode::Layer => 1,
            ActivationMode::Neuron => width,
        };
        check_len("coefficient columns", cols, coeffs.ncols())?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(VnnError::NonFinite {
                stage: "activation coefficients",
                layer: 0,
            });
        }
        Ok(VariationalActivation {
            family,
            mode,
            width,
            coeffs,
        })
    }

    /// Layer-shared activation with coefficient vector `alpha`.
    pub fn layer(family: BasisFamily, width: usize, alpha: &[f64]) -> Result<Self> {
        let coeffs = Array2::from_shape_vec((alpha.len(), 1), alpha.to_vec())
            .expect("column vector shape");
        Self::new(family, ActivationMode::Layer, width, coeffs)
    }

    /// Per-neuron activation where every neuron starts with `alpha`.
    pub fn neuron_tied(family: BasisFamily, width: usize, alpha: &[f64]) -> Result<Self> {
        let coeffs = Array2::from_shape_fn((alpha.len(), width), |(i, _)| alpha[i]);
        Self::new(family, ActivationMode::Neuron, width, coeffs)
    }

    /// Default initialization: one-hot on tanh for the classic family (one-hot
    /// on identity when M = 1), otherwise uniform in `[-0.5/M, 0.5/M]` with the
    /// member closest to the identity set to 1 (`x` for polynomials, `sin(ωx)/ω`
    /// for fourier).
    pub fn init<R: Rng + ?Sized>(
        family: BasisFamily,
        mode: ActivationMode,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let m = family.size();
        let cols = match mode {
            ActivationMode::Layer => 1,
            ActivationMode::Neuron => width,
        };
        let mut coeffs = Array2::zeros((m, cols));
        for mut column in coeffs.columns_mut() {
            match family.kind() {
                BasisKind::Classic => {
                    column[CLASSIC_TANH.min(m - 1)] = 1.0;
                }
                BasisKind::Polynomial | BasisKind::Fourier => {
                    let bound = 0.5 / m as f64;
                    for c in column.iter_mut() {
                        *c = rng.random_range(-bound..=bound);
                    }
                    if m >= 2 {
                        column[1] = if family.kind() == BasisKind::Fourier {
                            1.0 / family.omega()
                        } else {
                            1.0
                        };
                    }
                }
            }
        }
        Self::new(family, mode, width, coeffs)
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn mode(&self) -> ActivationMode {
        self.mode
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub(crate) fn coeffs_mut(&mut self) -> &mut Array2<f64> {
        &mut self.coeffs
    }

    /// Column of `coeffs` that drives neuron `j`.
    #[inline]
    fn column_for(&self, j: usize) -> usize {
        match self.mode {
            ActivationMode::Layer => 0,
            ActivationMode::Neuron => j,
        }
    }

    /// `F_j(x)` for neuron `j`; accumulates members in ascending index order.
    pub fn eval_neuron(&self, j: usize, x: f64) -> f64 {
        let col = self.column_for(j);
        let mut acc = 0.0;
        for i in 0..self.family.size() {
            acc += self.coeffs[[i, col]] * self.family.eval_unchecked(i, x);
        }
        acc
    }

    /// `F_j'(x)` for neuron `j`.
    pub fn deriv_neuron(&self, j: usize, x: f64) -> f64 {
        let col = self.column_for(j);
        let mut acc = 0.0;
        for i in 0..self.family.size() {
            acc += self.coeffs[[i, col]] * self.family.deriv_unchecked(i, x);
        }
        acc
    }

    pub fn activate(&self, nets: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("activation input", self.width, nets.len())?;
        Ok(Array1::from_shape_fn(self.width, |j| self.eval_neuron(j, nets[j])))
    }

    pub fn activate_deriv(&self, nets: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("activation input", self.width, nets.len())?;
        Ok(Array1::from_shape_fn(self.width, |j| self.deriv_neuron(j, nets[j])))
    }
}
