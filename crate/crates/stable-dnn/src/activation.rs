//! Element-wise activation functions and their derivatives.

use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    TanH,
    ReLU,
}

impl Activation {
    #[inline]
    pub fn eval_scalar(self, x: f64) -> f64 {
        match self {
            Activation::TanH => x.tanh(),
            Activation::ReLU => x.max(0.0),
        }
    }

    /// Derivative; the ReLU subgradient at exactly 0 is taken as 0.
    #[inline]
    pub fn deriv_scalar(self, x: f64) -> f64 {
        match self {
            Activation::TanH => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(self, x: &Matrix) -> Matrix {
        x.map(|v| self.eval_scalar(v))
    }

    pub fn deriv(self, x: &Matrix) -> Matrix {
        x.map(|v| self.deriv_scalar(v))
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::TanH),
            "relu" => Ok(Activation::ReLU),
            other => Err(format!("unknown activation '{other}' (expected tanh or relu)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        assert_eq!(Activation::TanH.eval_scalar(0.0), 0.0);
        assert_eq!(Activation::TanH.deriv_scalar(0.0), 1.0);
    }

    #[test]
    fn tanh_at_half() {
        // High-precision reference values for tanh(0.5) and 1 - tanh(0.5)^2.
        assert!((Activation::TanH.eval_scalar(0.5) - 0.4621171572600098).abs() < 1e-12);
        assert!((Activation::TanH.deriv_scalar(0.5) - 0.7864477329659274).abs() < 1e-12);
    }

    #[test]
    fn relu_values_and_zero_convention() {
        let x = Matrix::from_vec(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(Activation::ReLU.eval(&x).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(Activation::ReLU.deriv(&x).as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn tanh_derivative_matches_finite_differences() {
        // 1000 deterministic points in [-3, 3].
        let step = 1e-5;
        for k in 0..1000 {
            let x = -3.0 + 6.0 * (k as f64 + 0.5) / 1000.0;
            let fd = (Activation::TanH.eval_scalar(x + step)
                - Activation::TanH.eval_scalar(x - step))
                / (2.0 * step);
            let an = Activation::TanH.deriv_scalar(x);
            assert!((fd - an).abs() <= 1e-7 * an.abs().max(1e-3), "x={x}");
        }
    }
}
