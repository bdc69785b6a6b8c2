//! Attention blocks.
//!
//! [`LinearAttention`] is the production path: degree-normalized kernel
//! attention evaluated as `D⁻¹ φ(Q)(φ(K)ᵀV)` with `D = diag(φ(Q)(φ(K)ᵀ1))`,
//! linear in both the query and key counts. [`SoftmaxAttention`] is the
//! dense `softmax(QKᵀ/√d)V` path used by the target-attention baselines, and
//! [`oracle`] evaluates kernel attention with an explicit weight matrix for
//! verification and benchmarking.

pub mod kernel;
pub mod linear;
pub mod oracle;
pub mod softmax;

use rand::Rng;

pub use kernel::KernelFn;
pub use linear::{
    linear_attention_backward, linear_attention_forward, AttentionOutput, LinearAttention, LinearCache, DEGREE_FLOOR,
};
pub use oracle::{dense_kernel_attention_oracle, dense_kernel_weights, ORACLE_MAX_CELLS};
pub use softmax::{dense_softmax_attention, softmax_weights, KeySelection, SoftmaxAttention, SoftmaxCache, SoftmaxOutput};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamId, ParamStore};

/// Query/key/value projections `W_Q: d_Q×d`, `W_K: d_K×d`, `W_V: d_V×d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Gradients with respect to the three attention inputs.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub e_q: Matrix,
    pub e_k: Matrix,
    pub e_v: Matrix,
}

impl AttentionParams {
    /// Normal init with standard deviation `1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        d: usize,
        rng: &mut R,
    ) -> Self {
        let (d_q, d_k, d_v) = dims;
        let mut proj = |suffix: &str, fan_in: usize| {
            let std = 1.0 / (fan_in.max(1) as f64).sqrt();
            store.add(
                format!("{name}.{suffix}"),
                Matrix::random_normal(fan_in, d, std, rng),
            )
        };
        let w_q = proj("w_q", d_q);
        let w_k = proj("w_k", d_k);
        let w_v = proj("w_v", d_v);
        AttentionParams { w_q, w_k, w_v }
    }

    /// Wraps existing projection matrices.
    pub fn from_matrices(store: &mut ParamStore, name: &str, w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        if w_q.cols() != w_k.cols() {
            return Err(Error::dim("attention params (W_Q vs W_K)", w_q.shape(), w_k.shape()));
        }
        Ok(AttentionParams {
            w_q: store.add(format!("{name}.w_q"), w_q),
            w_k: store.add(format!("{name}.w_k"), w_k),
            w_v: store.add(format!("{name}.w_v"), w_v),
        })
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.w_q, self.w_k, self.w_v]
    }

    /// `(Q, K, V)` after shape checks.
    pub(crate) fn project(
        &self,
        store: &ParamStore,
        e_q: &Matrix,
        e_k: &Matrix,
        e_v: &Matrix,
        op: &'static str,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let (w_q, w_k, w_v) = (store.value(self.w_q), store.value(self.w_k), store.value(self.w_v));
        if w_q.cols() != w_k.cols() {
            return Err(Error::dim(op, w_q.shape(), w_k.shape()));
        }
        if e_k.rows() != e_v.rows() {
            return Err(Error::dim(op, e_k.shape(), e_v.shape()));
        }
        if e_q.cols() != w_q.rows() {
            return Err(Error::dim(op, e_q.shape(), w_q.shape()));
        }
        if e_k.cols() != w_k.rows() {
            return Err(Error::dim(op, e_k.shape(), w_k.shape()));
        }
        if e_v.cols() != w_v.rows() {
            return Err(Error::dim(op, e_v.shape(), w_v.shape()));
        }
        Ok((e_q.matmul(w_q)?, e_k.matmul(w_k)?, e_v.matmul(w_v)?))
    }

    /// Accumulates `dW_x += E_xᵀ dX` and returns `dE_x = dX W_xᵀ` for each input.
    pub(crate) fn backprop_projections(
        &self,
        store: &mut ParamStore,
        inputs: (&Matrix, &Matrix, &Matrix),
        d_proj: (&Matrix, &Matrix, &Matrix),
    ) -> Result<InputGrads> {
        let mut grads = Vec::with_capacity(3);
        for ((id, e), d) in self
            .ids()
            .into_iter()
            .zip([inputs.0, inputs.1, inputs.2])
            .zip([d_proj.0, d_proj.1, d_proj.2])
        {
            let dw = e.t_matmul(d)?;
            store.grad_mut(id).add_assign(&dw)?;
            grads.push(d.matmul_t(store.value(id))?);
        }
        let e_v = grads.pop().unwrap();
        let e_k = grads.pop().unwrap();
        let e_q = grads.pop().unwrap();
        Ok(InputGrads { e_q, e_k, e_v })
    }
}
