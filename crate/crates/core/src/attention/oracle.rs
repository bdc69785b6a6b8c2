//! Kernel attention evaluated with an explicit `m×n` weight matrix.
//!
//! This is the `(φ(Q)φ(K)ᵀ)V` order that the linear path avoids. It shares
//! only the input projections with [`super::LinearAttention`]; weights, row
//! normalization and aggregation are computed element by element here.

use super::{AttentionParams, KernelFn, DEGREE_FLOOR};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

/// Largest `m·n` the oracle will materialize.
pub const ORACLE_MAX_CELLS: usize = 10_000_000;

/// Row-normalized kernel weights `A_ij = φ(q_i)·φ(k_j) / Σ_j' φ(q_i)·φ(k_j')`.
pub fn dense_kernel_weights(
    store: &ParamStore,
    e_q: &Matrix,
    e_k: &Matrix,
    params: AttentionParams,
    kernel: KernelFn,
) -> Result<Matrix> {
    let (m, n) = (e_q.rows(), e_k.rows());
    if m.saturating_mul(n) > ORACLE_MAX_CELLS {
        return Err(Error::Usage(format!(
            "dense oracle refuses {m}x{n} weights (limit {ORACLE_MAX_CELLS} cells)"
        )));
    }
    let w_q = store.value(params.w_q);
    let w_k = store.value(params.w_k);
    if e_q.cols() != w_q.rows() || e_k.cols() != w_k.rows() || w_q.cols() != w_k.cols() {
        return Err(Error::dim("dense_kernel_weights", e_q.shape(), e_k.shape()));
    }
    let phi_q = kernel.apply(&e_q.matmul(w_q)?);
    let phi_k = kernel.apply(&e_k.matmul(w_k)?);
    let d = phi_q.cols();

    let mut a = Matrix::zeros(m, n);
    for i in 0..m {
        let q = phi_q.row(i);
        let mut row_sum = 0.0;
        for j in 0..n {
            let k = phi_k.row(j);
            let mut w = 0.0;
            for t in 0..d {
                w += q[t] * k[t];
            }
            a.set(i, j, w);
            row_sum += w;
        }
        let denom = if row_sum < DEGREE_FLOOR { DEGREE_FLOOR } else { row_sum };
        for x in a.row_mut(i) {
            *x /= denom;
        }
    }
    Ok(a)
}

/// `A · V` with `A` from [`dense_kernel_weights`].
pub fn dense_kernel_attention_oracle(
    store: &ParamStore,
    e_q: &Matrix,
    e_k: &Matrix,
    e_v: &Matrix,
    params: AttentionParams,
    kernel: KernelFn,
) -> Result<Matrix> {
    if e_k.rows() != e_v.rows() || e_v.cols() != store.value(params.w_v).rows() {
        return Err(Error::dim("dense_kernel_attention_oracle", e_k.shape(), e_v.shape()));
    }
    let a = dense_kernel_weights(store, e_q, e_k, params, kernel)?;
    let v = e_v.matmul(store.value(params.w_v))?;
    let (m, n, dv) = (a.rows(), a.cols(), v.cols());
    let mut out = Matrix::zeros(m, dv);
    for i in 0..m {
        for j in 0..n {
            let w = a.get(i, j);
            for t in 0..dv {
                let cur = out.get(i, t);
                out.set(i, t, cur + w * v.get(j, t));
            }
        }
    }
    Ok(out)
}
