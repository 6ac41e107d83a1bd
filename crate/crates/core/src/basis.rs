//! Ordered basis function families and their analytic derivatives.
//!
//! Members are addressed by a 0-based index `i`, so `eval(i, x)` is the
//! `(i+1)`-th function of the family.
//!
//! | kind         | member `i`                                                   |
//! |--------------|--------------------------------------------------------------|
//! | `Fourier`    | `0 → 1`, `2k-1 → sin(kωx)`, `2k → cos(kωx)`                  |
//! | `Polynomial` | `x^i`                                                        |
//! | `Classic`    | `[x, tanh x, 1/(1+e^-x), max(0, x)]`, at most 4 members       |

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};

use crate::error::{Result, VnnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Fourier,
    Polynomial,
    Classic,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Fourier => "fourier",
            BasisKind::Polynomial => "polynomial",
            BasisKind::Classic => "classic",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BasisKind {
    type Err = VnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier" => Ok(BasisKind::Fourier),
            "polynomial" => Ok(BasisKind::Polynomial),
            "classic" => Ok(BasisKind::Classic),
            other => Err(VnnError::InvalidFamily(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// Position of each member inside the classic family.
pub const CLASSIC_IDENTITY: usize = 0;
pub const CLASSIC_TANH: usize = 1;
pub const CLASSIC_SIGMOID: usize = 2;
pub const CLASSIC_RECTIFIER: usize = 3;

/// A finite, ordered family `f_1..f_M`. `omega` is only meaningful for
/// [`BasisKind::Fourier`] and is stored as 1.0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisFamily {
    kind: BasisKind,
    size: usize,
    omega: f64,
}

impl BasisFamily {
    pub fn new(kind: BasisKind, size: usize, omega: f64) -> Result<Self> {
        if size == 0 {
            return Err(VnnError::InvalidFamily("cut-off M must be at least 1".into()));
        }
        match kind {
            BasisKind::Classic if size > 4 => return Err(VnnError::ClassicTooLarge(size)),
            BasisKind::Fourier if !(omega.is_finite() && omega > 0.0) => {
                return Err(VnnError::InvalidFamily(format!(
                    "fourier omega must be finite and positive, got {omega}"
                )))
            }
            _ => {}
        }
        let omega = if kind == BasisKind::Fourier { omega } else { 1.0 };
        Ok(BasisFamily { kind, size, omega })
    }

    pub fn fourier(size: usize, omega: f64) -> Result<Self> {
        Self::new(BasisKind::Fourier, size, omega)
    }

    pub fn polynomial(size: usize) -> Result<Self> {
        Self::new(BasisKind::Polynomial, size, 1.0)
    }

    pub fn classic(size: usize) -> Result<Self> {
        Self::new(BasisKind::Classic, size, 1.0)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// The cut-off `M`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// True when some member is not differentiable everywhere (the rectifier).
    pub fn has_kink(&self) -> bool {
        self.kind == BasisKind::Classic && self.size > CLASSIC_RECTIFIER
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.size {
            Ok(())
        } else {
            Err(VnnError::IndexOutOfRange {
                index: i,
                size: self.size,
            })
        }
    }

    /// `f_i(x)`.
    pub fn eval(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.eval_unchecked(i, x))
    }

    /// `f_i'(x)`, analytic. The rectifier derivative at exactly 0 is 0.
    pub fn eval_deriv(&self, i: usize, x: f64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.deriv_unchecked(i, x))
    }

    pub(crate) fn eval_unchecked(&self, i: usize, x: f64) -> f64 {
        match self.kind {
            BasisKind::Fourier => {
                if i == 0 {
                    return 1.0;
                }
                let k = i.div_ceil(2) as f64;
                let phase = k * self.omega * x;
                if i % 2 == 1 {
                    phase.sin()
                } else {
                    phase.cos()
                }
            }
            BasisKind::Polynomial => x.powi(i as i32),
            BasisKind::Classic => match i {
                CLASSIC_IDENTITY => x,
                CLASSIC_TANH => x.tanh(),
                CLASSIC_SIGMOID => logistic(x),
                _ => x.max(0.0),
            },
        }
    }

    pub(crate) fn deriv_unchecked(&self, i: usize, x: f64) -> f64 {
        match self.kind {
            BasisKind::Fourier => {
                if i == 0 {
                    return 0.0;
                }
                let kw = i.div_ceil(2) as f64 * self.omega;
                let phase = kw * x;
                if i % 2 == 1 {
                    kw * phase.cos()
                } else {
                    -kw * phase.sin()
                }
            }
            BasisKind::Polynomial => {
                if i == 0 {
                    0.0
                } else {
                    i as f64 * x.powi(i as i32 - 1)
                }
            }
            BasisKind::Classic => match i {
                CLASSIC_IDENTITY => 1.0,
                CLASSIC_TANH => {
                    let t = x.tanh();
                    1.0 - t * t
                }
                CLASSIC_SIGMOID => {
                    let s = logistic(x);
                    s * (1.0 - s)
                }
                _ => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            },
        }
    }

    /// The `M × m` basis matrix with entry `(i, j) = f_i(nets[j])`.
    pub fn basis_matrix(&self, nets: ArrayView1<'_, f64>) -> Array2<f64> {
        Array2::from_shape_fn((self.size, nets.len()), |(i, j)| self.eval_unchecked(i, nets[j]))
    }

    /// Same layout as [`basis_matrix`](Self::basis_matrix) for the derivatives.
    pub fn deriv_matrix(&self, nets: ArrayView1<'_, f64>) -> Array2<f64> {
        Array2::from_shape_fn((self.size, nets.len()), |(i, j)| self.deriv_unchecked(i, nets[j]))
    }
}

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn families() -> Vec<BasisFamily> {
        vec![
            BasisFamily::fourier(7, 1.0).unwrap(),
            BasisFamily::fourier(5, 0.7).unwrap(),
            BasisFamily::polynomial(6).unwrap(),
            BasisFamily::classic(4).unwrap(),
        ]
    }

    #[test]
    fn spec_values() {
        let fourier = BasisFamily::fourier(4, 1.0).unwrap();
        assert_eq!(fourier.eval(1, 0.0).unwrap(), 0.0);
        assert_eq!(fourier.eval_deriv(0, 5.0).unwrap(), 0.0);

        let poly = BasisFamily::polynomial(3).unwrap();
        assert_eq!(poly.eval(2, 2.0).unwrap(), 4.0);
        assert_eq!(poly.eval_deriv(2, 2.0).unwrap(), 4.0);

        let classic = BasisFamily::classic(4).unwrap();
        // tanh(1) from an mpmath oracle
        assert_relative_eq!(classic.eval(1, 1.0).unwrap(), 0.7615941559557649, max_relative = 1e-15);
        assert_eq!(classic.eval_deriv(3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fourier_ordering() {
        let f = BasisFamily::fourier(5, 2.0).unwrap();
        let x = 0.3;
        assert_eq!(f.eval(0, x).unwrap(), 1.0);
        assert_eq!(f.eval(1, x).unwrap(), (2.0 * x).sin());
        assert_eq!(f.eval(2, x).unwrap(), (2.0 * x).cos());
        assert_eq!(f.eval(3, x).unwrap(), (4.0 * x).sin());
        assert_eq!(f.eval(4, x).unwrap(), (4.0 * x).cos());
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(BasisFamily::classic(5), Err(VnnError::ClassicTooLarge(5))));
        assert!(BasisFamily::polynomial(0).is_err());
        assert!(BasisFamily::fourier(3, 0.0).is_err());
        assert!(BasisFamily::fourier(3, -1.0).is_err());
        assert!(BasisFamily::fourier(3, f64::NAN).is_err());
    }

    #[test]
    fn index_out_of_range() {
        let f = BasisFamily::polynomial(3).unwrap();
        assert_eq!(
            f.eval(3, 1.0),
            Err(VnnError::IndexOutOfRange { index: 3, size: 3 })
        );
        assert!(f.eval_deriv(7, 1.0).is_err());
    }

    #[test]
    fn basis_matrix_examples() {
        let poly = BasisFamily::polynomial(2).unwrap();
        assert_eq!(poly.basis_matrix(array![0.0, 0.0].view()), array![[1.0, 1.0], [0.0, 0.0]]);

        let fourier = BasisFamily::fourier(1, 1.0).unwrap();
        assert_eq!(fourier.basis_matrix(array![3.7].view()), array![[1.0]]);

        let classic = BasisFamily::classic(2).unwrap();
        let m = classic.basis_matrix(array![1.0, -1.0].view());
        assert_eq!(m.row(0), array![1.0, -1.0]);
        assert_relative_eq!(m[[1, 0]], 0.7615941559557649, max_relative = 1e-15);
        assert_relative_eq!(m[[1, 1]], -0.7615941559557649, max_relative = 1e-15);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for fam in families() {
            for i in 0..fam.size() {
                for step in -40..=40 {
                    let x = step as f64 * 0.0625 + 0.01;
                    if fam.kind() == BasisKind::Classic && i == CLASSIC_RECTIFIER && x.abs() < 2.0 * h {
                        continue;
                    }
                    let numeric = (fam.eval(i, x + h).unwrap() - fam.eval(i, x - h).unwrap()) / (2.0 * h);
                    let analytic = fam.eval_deriv(i, x).unwrap();
                    let err = (numeric - analytic).abs();
                    let scale = numeric.abs().max(analytic.abs());
                    assert!(
                        err <= 1e-9 || err / scale <= 1e-6,
                        "{:?} member {i} at {x}: analytic {analytic} numeric {numeric}",
                        fam.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn logistic_is_finite_at_extremes() {
        assert_eq!(logistic(1000.0), 1.0);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(0.0), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn matrix_entries_equal_scalar_eval(nets in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            for fam in families() {
                let view = ndarray::ArrayView1::from(&nets[..]);
                let m = fam.basis_matrix(view);
                let d = fam.deriv_matrix(view);
                for i in 0..fam.size() {
                    for (j, &x) in nets.iter().enumerate() {
                        proptest::prop_assert_eq!(m[[i, j]].to_bits(), fam.eval(i, x).unwrap().to_bits());
                        proptest::prop_assert_eq!(d[[i, j]].to_bits(), fam.eval_deriv(i, x).unwrap().to_bits());
                    }
                }
            }
        }
    }
}
