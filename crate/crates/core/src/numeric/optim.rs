use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over a whole [`ParamStore`].
///
/// Every step checks gradients for non-finite values, updates values in
/// place, zeroes gradients and advances the store generation.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        hyper: AdamHyper,
        t: u64,
        m: Vec<Matrix>,
        v: Vec<Matrix>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::adam(lr, AdamHyper::default()),
        })
    }

    pub fn adam(lr: f64, hyper: AdamHyper) -> Self {
        Optimizer::Adam {
            lr,
            hyper,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, step: u64) -> Result<()> {
        store.check_grads_finite(step)?;
        match self {
            Optimizer::Sgd { lr } => sgd_step(store, *lr),
            Optimizer::Adam { lr, hyper, t, m, v } => {
                if m.is_empty() {
                    for (_, p) in store.iter() {
                        let (r, c) = p.value.shape();
                        m.push(Matrix::zeros(r, c));
                        v.push(Matrix::zeros(r, c));
                    }
                }
                *t += 1;
                adam_step(store, *lr, *hyper, *t, m, v);
            }
        }
        store.bump_generation();
        Ok(())
    }
}

/// `value -= lr · grad`, then zero the gradient.
pub fn sgd_step(store: &mut ParamStore, lr: f64) {
    for (_, p) in store.iter_mut() {
        for (w, g) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()) {
            *w -= lr * g;
        }
        p.zero_grad();
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(store: &mut ParamStore, lr: f64, h: AdamHyper, t: u64, m: &mut [Matrix], v: &mut [Matrix]) {
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    for (((_, p), m), v) in store.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
        let w = p.value.as_mut_slice();
        let g = p.grad.as_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for i in 0..w.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + h.eps);
        }
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Matrix::filled(1, 1, value));
        s.grad_mut(id).fill(grad);
        s
    }

    #[test]
    fn sgd_definition() {
        let mut s = single(1.0, 0.5);
        Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap().step(&mut s, 0).unwrap();
        let (_, p) = s.iter().next().unwrap();
        assert!((p.value.get(0, 0) - 0.95).abs() < 1e-15);
        assert_eq!(p.grad.get(0, 0), 0.0);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        for &g in &[0.3, -2.0, 1e-3] {
            let mut s = single(1.0, g);
            Optimizer::new(OptimizerKind::Adam, 0.01).unwrap().step(&mut s, 0).unwrap();
            let (_, p) = s.iter().next().unwrap();
            // m̂ = g, v̂ = g² after bias correction.
            let want = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.value.get(0, 0) - want).abs() < 1e-15, "g={g}");
        }
    }

    #[test]
    fn zero_grad_leaves_value() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = single(0.7, 0.0);
            Optimizer::new(kind, 0.1).unwrap().step(&mut s, 0).unwrap();
            assert_eq!(s.iter().next().unwrap().1.value.get(0, 0), 0.7);
        }
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut s = single(0.0, f64::NAN);
        let err = Optimizer::new(OptimizerKind::Sgd, 0.1)
            .unwrap()
            .step(&mut s, 3)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`p`") && msg.contains("step 3"), "{msg}");
    }

    #[test]
    fn step_advances_generation() {
        let mut s = single(0.0, 0.0);
        let g0 = s.generation();
        Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap().step(&mut s, 0).unwrap();
        assert_eq!(s.generation(), g0 + 1);
    }
}
