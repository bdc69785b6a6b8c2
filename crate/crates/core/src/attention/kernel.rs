use serde::{Deserialize, Serialize};

use crate::numeric::{sigmoid, Matrix};

/// Additive floor of the `relu_eps` feature map.
pub const RELU_EPS: f64 = 1e-6;

/// Elementwise nonnegative feature map `φ` replacing softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFn {
    /// `ln(1 + eˣ)`, strictly positive.
    #[default]
    Softplus,
    /// `max(x, 0) + 1e-6`.
    ReluEps,
}

impl KernelFn {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            KernelFn::Softplus => softplus(x),
            KernelFn::ReluEps => x.max(0.0) + RELU_EPS,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            KernelFn::Softplus => sigmoid(x),
            KernelFn::ReluEps => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn apply(self, x: &Matrix) -> Matrix {
        x.map(|v| self.eval(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFn::Softplus => "softplus",
            KernelFn::ReluEps => "relu_eps",
        }
    }
}

impl std::str::FromStr for KernelFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softplus" => Ok(KernelFn::Softplus),
            "relu_eps" | "relu" => Ok(KernelFn::ReluEps),
            other => Err(format!("unknown kernel `{other}` (expected softplus|relu_eps)")),
        }
    }
}

/// Overflow-safe `ln(1 + eˣ)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((KernelFn::Softplus.eval(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn relu_eps_floor() {
        assert_eq!(KernelFn::ReluEps.eval(-5.0), 1e-6);
        assert_eq!(KernelFn::ReluEps.eval(2.0), 2.0 + 1e-6);
    }

    #[test]
    fn softplus_large_argument() {
        // 40-digit reference: ln(1 + e^30) - 30 = 9.357622968839736779e-14
        let got = KernelFn::Softplus.eval(30.0);
        assert!((got - 30.0).abs() < 1e-9);
        assert!(((got - 30.0) - 9.357622968839737e-14).abs() < 4e-15);
        assert!(KernelFn::Softplus.eval(1000.0).is_finite());
        assert!(KernelFn::Softplus.eval(-1000.0) >= 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for k in [KernelFn::Softplus, KernelFn::ReluEps] {
            for &x in &[-3.0, -0.4, 0.3, 2.5] {
                let fd = (k.eval(x + h) - k.eval(x - h)) / (2.0 * h);
                assert!((fd - k.derivative(x)).abs() < 1e-8, "{k:?} at {x}");
            }
        }
    }

    #[test]
    fn nonnegative_everywhere() {
        for k in [KernelFn::Softplus, KernelFn::ReluEps] {
            for i in -200..200 {
                assert!(k.eval(i as f64 * 0.37) > 0.0);
            }
        }
    }
}
