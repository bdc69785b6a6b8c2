//! Dense `softmax(QKᵀ/√d)V` attention, optionally restricted to a per-query
//! key subset. This is the exact-search path of the DIN and SIM baselines.

use super::{AttentionParams, InputGrads};
use crate::error::{Error, Result};
use crate::numeric::{dot, Matrix, ParamStore};
use crate::par;

/// Which keys each query attends to.
#[derive(Debug, Clone, Copy)]
pub enum KeySelection<'a> {
    All,
    /// One index list per query row. An empty list yields a zero output row.
    PerQuery(&'a [Vec<usize>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxAttention {
    pub params: AttentionParams,
}

#[derive(Debug, Clone)]
pub struct SoftmaxCache {
    generation: u64,
    params: AttentionParams,
    e_q: Matrix,
    e_k: Matrix,
    e_v: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Selected key indices per query; `None` means all keys.
    keys: Option<Vec<Vec<usize>>>,
    /// Softmax weights per query, aligned with its key list.
    weights: Vec<Vec<f64>>,
    scale: f64,
}

impl SoftmaxCache {
    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxOutput {
    pub output: Matrix,
    pub cache: SoftmaxCache,
}

impl SoftmaxAttention {
    pub fn new(params: AttentionParams) -> Self {
        SoftmaxAttention { params }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        e_q: &Matrix,
        e_k: &Matrix,
        e_v: &Matrix,
        keys: KeySelection<'_>,
    ) -> Result<SoftmaxOutput> {
        let (q, k, v) = self.params.project(store, e_q, e_k, e_v, "dense_softmax_attention")?;
        let (m, n) = (q.rows(), k.rows());
        let keys = match keys {
            KeySelection::All => None,
            KeySelection::PerQuery(sets) => {
                if sets.len() != m {
                    return Err(Error::dim("dense_softmax_attention keys", (m, n), (sets.len(), 0)));
                }
                if let Some(&bad) = sets.iter().flatten().find(|&&j| j >= n) {
                    return Err(Error::Usage(format!("key index {bad} out of range for {n} keys")));
                }
                Some(sets.to_vec())
            }
        };
        let scale = 1.0 / (q.cols().max(1) as f64).sqrt();
        let dv = v.cols();
        let rows: Vec<usize> = (0..m).collect();
        let per_row = par::map(&rows, |&i| {
            let qi = q.row(i);
            let idx: Box<dyn Iterator<Item = usize>> = match &keys {
                None => Box::new(0..n),
                Some(sets) => Box::new(sets[i].iter().copied()),
            };
            let scores: Vec<f64> = idx.map(|j| dot(qi, k.row(j)) * scale).collect();
            let weights = softmax(&scores);
            let mut out = vec![0.0; dv];
            for (t, &w) in weights.iter().enumerate() {
                let j = keys.as_ref().map_or(t, |s| s[i][t]);
                for (o, &x) in out.iter_mut().zip(v.row(j)) {
                    *o += w * x;
                }
            }
            (weights, out)
        });
        let mut output = Matrix::zeros(m, dv);
        let mut weights = Vec::with_capacity(m);
        for (i, (w, row)) in per_row.into_iter().enumerate() {
            output.row_mut(i).copy_from_slice(&row);
            weights.push(w);
        }
        Ok(SoftmaxOutput {
            output,
            cache: SoftmaxCache {
                generation: store.generation(),
                params: self.params,
                e_q: e_q.clone(),
                e_k: e_k.clone(),
                e_v: e_v.clone(),
                q,
                k,
                v,
                keys,
                weights,
                scale,
            },
        })
    }

    pub fn backward(&self, store: &mut ParamStore, grad_out: &Matrix, cache: &SoftmaxCache) -> Result<InputGrads> {
        if cache.params != self.params {
            return Err(Error::Usage("softmax attention cache belongs to a different block".into()));
        }
        if cache.generation != store.generation() {
            return Err(Error::Usage("stale softmax attention cache".into()));
        }
        let (m, n) = (cache.q.rows(), cache.k.rows());
        if grad_out.shape() != (m, cache.v.cols()) {
            return Err(Error::dim("dense_softmax_attention backward", grad_out.shape(), (m, cache.v.cols())));
        }
        let mut d_q = Matrix::zeros(m, cache.q.cols());
        let mut d_k = Matrix::zeros(n, cache.k.cols());
        let mut d_v = Matrix::zeros(n, cache.v.cols());
        for i in 0..m {
            let w = &cache.weights[i];
            if w.is_empty() {
                continue;
            }
            let g = grad_out.row(i);
            let key_of = |t: usize| cache.keys.as_ref().map_or(t, |s| s[i][t]);
            // ∂L/∂w_t = g · v_t
            let dw: Vec<f64> = (0..w.len()).map(|t| dot(g, cache.v.row(key_of(t)))).collect();
            let mean: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
            for t in 0..w.len() {
                let j = key_of(t);
                for (dvj, &gi) in d_v.row_mut(j).iter_mut().zip(g) {
                    *dvj += w[t] * gi;
                }
                let ds = w[t] * (dw[t] - mean) * cache.scale;
                if ds == 0.0 {
                    continue;
                }
                for (dq, &kj) in d_q.row_mut(i).iter_mut().zip(cache.k.row(j)) {
                    *dq += ds * kj;
                }
                for (dk, &qi) in d_k.row_mut(j).iter_mut().zip(cache.q.row(i)) {
                    *dk += ds * qi;
                }
            }
        }
        self.params
            .backprop_projections(store, (&cache.e_q, &cache.e_k, &cache.e_v), (&d_q, &d_k, &d_v))
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Full-key softmax attention output.
pub fn dense_softmax_attention(
    store: &ParamStore,
    e_q: &Matrix,
    e_k: &Matrix,
    e_v: &Matrix,
    params: AttentionParams,
) -> Result<Matrix> {
    Ok(SoftmaxAttention::new(params)
        .forward(store, e_q, e_k, e_v, KeySelection::All)?
        .output)
}

/// Explicit `m×n` softmax weight matrix.
pub fn softmax_weights(store: &ParamStore, e_q: &Matrix, e_k: &Matrix, params: AttentionParams) -> Result<Matrix> {
    let e_v = Matrix::zeros(e_k.rows(), store.value(params.w_v).rows());
    let out = SoftmaxAttention::new(params).forward(store, e_q, e_k, &e_v, KeySelection::All)?;
    let rows: Vec<&[f64]> = out.cache.weights.iter().map(|w| w.as_slice()).collect();
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, e_k.rows()));
    }
    Matrix::from_rows(&rows)
}
