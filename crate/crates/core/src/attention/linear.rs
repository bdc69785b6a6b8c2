use log::warn;

use super::{AttentionParams, InputGrads, KernelFn};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

/// Degree entries below this are clamped before inversion.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// Kernelized cross attention with optional degree normalization.
///
/// Never forms the `m×n` weight matrix: `S = φ(K)ᵀV` and `z = φ(K)ᵀ1` are
/// reduced over the keys first, then applied to each query row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearAttention {
    pub params: AttentionParams,
    pub kernel: KernelFn,
    /// `false` drops `D⁻¹` and returns the raw `φ(Q)(φ(K)ᵀV)` aggregate.
    pub normalize: bool,
}

/// Forward intermediates for [`LinearAttention::backward`].
#[derive(Debug, Clone)]
pub struct LinearCache {
    generation: u64,
    params: AttentionParams,
    kernel: KernelFn,
    normalize: bool,
    e_q: Matrix,
    e_k: Matrix,
    e_v: Matrix,
    q_raw: Matrix,
    k_raw: Matrix,
    phi_q: Matrix,
    phi_k: Matrix,
    v: Matrix,
    /// `φ(K)ᵀV`, `d×d_v`
    s: Matrix,
    /// `φ(K)ᵀ1`
    z: Vec<f64>,
    /// Floored degree per query row.
    degree: Vec<f64>,
    floored: Vec<bool>,
    output: Matrix,
}

impl LinearCache {
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn floored_rows(&self) -> usize {
        self.floored.iter().filter(|&&f| f).count()
    }

    pub fn phi_q(&self) -> &Matrix {
        &self.phi_q
    }

    pub fn phi_k(&self) -> &Matrix {
        &self.phi_k
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: Matrix,
    pub cache: LinearCache,
}

impl LinearAttention {
    pub fn new(params: AttentionParams, kernel: KernelFn) -> Self {
        LinearAttention {
            params,
            kernel,
            normalize: true,
        }
    }

    pub fn forward(&self, store: &ParamStore, e_q: &Matrix, e_k: &Matrix, e_v: &Matrix) -> Result<AttentionOutput> {
        if e_q.rows() == 0 || e_k.rows() == 0 {
            return Err(Error::dim("linear_attention_forward", e_q.shape(), e_k.shape()));
        }
        let (q_raw, k_raw, v) = self
            .params
            .project(store, e_q, e_k, e_v, "linear_attention_forward")?;
        let phi_q = self.kernel.apply(&q_raw);
        let phi_k = self.kernel.apply(&k_raw);

        // O(n) reductions over the keys.
        let s = phi_k.t_matmul(&v)?;
        let z = phi_k.col_sums();

        // O(m) application to the queries.
        let mut output = phi_q.matmul(&s)?;
        let m = output.rows();
        let mut degree = vec![1.0; m];
        let mut floored = vec![false; m];
        if self.normalize {
            let raw = phi_q.matvec(&z)?;
            for (i, d) in raw.into_iter().enumerate() {
                if d < DEGREE_FLOOR || !d.is_finite() {
                    floored[i] = true;
                    degree[i] = DEGREE_FLOOR;
                } else {
                    degree[i] = d;
                }
                let inv = 1.0 / degree[i];
                output.row_mut(i).iter_mut().for_each(|x| *x *= inv);
            }
            let n_floor = floored.iter().filter(|&&f| f).count();
            if n_floor > 0 {
                warn!("linear attention: {n_floor} of {m} degree entries hit the {DEGREE_FLOOR:e} floor");
            }
        }

        Ok(AttentionOutput {
            output: output.clone(),
            cache: LinearCache {
                generation: store.generation(),
                params: self.params,
                kernel: self.kernel,
                normalize: self.normalize,
                e_q: e_q.clone(),
                e_k: e_k.clone(),
                e_v: e_v.clone(),
                q_raw,
                k_raw,
                phi_q,
                phi_k,
                v,
                s,
                z,
                degree,
                floored,
                output,
            },
        })
    }

    /// Backpropagates `∂L/∂output` through the normalizer, both key-side
    /// reductions, the feature map and the projections. Cost is
    /// `O((m + n)·d²)`; the `m×n` weights are never formed.
    pub fn backward(&self, store: &mut ParamStore, grad_out: &Matrix, cache: &LinearCache) -> Result<InputGrads> {
        if cache.params != self.params || cache.kernel != self.kernel || cache.normalize != self.normalize {
            return Err(Error::Usage("linear attention cache belongs to a different block".into()));
        }
        if cache.generation != store.generation() {
            return Err(Error::Usage("stale linear attention cache".into()));
        }
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim("linear_attention_backward", grad_out.shape(), cache.output.shape()));
        }
        let m = grad_out.rows();
        let d = cache.z.len();

        // output_i = num_i / D_i
        let mut d_num = grad_out.clone();
        let mut d_deg = vec![0.0; m];
        if self.normalize {
            for i in 0..m {
                let inv = 1.0 / cache.degree[i];
                if !cache.floored[i] {
                    let g_dot_out: f64 = grad_out
                        .row(i)
                        .iter()
                        .zip(cache.output.row(i))
                        .map(|(g, o)| g * o)
                        .sum();
                    d_deg[i] = -g_dot_out * inv;
                }
                d_num.row_mut(i).iter_mut().for_each(|x| *x *= inv);
            }
        }

        // num = φ(Q) S, deg = φ(Q) z
        let mut d_phi_q = d_num.matmul_t(&cache.s)?;
        for i in 0..m {
            let dd = d_deg[i];
            if dd != 0.0 {
                for (g, &zj) in d_phi_q.row_mut(i).iter_mut().zip(&cache.z) {
                    *g += dd * zj;
                }
            }
        }
        let d_s = cache.phi_q.t_matmul(&d_num)?;
        let mut d_z = vec![0.0; d];
        for i in 0..m {
            let dd = d_deg[i];
            if dd != 0.0 {
                for (g, &p) in d_z.iter_mut().zip(cache.phi_q.row(i)) {
                    *g += dd * p;
                }
            }
        }

        // S = φ(K)ᵀ V, z = φ(K)ᵀ 1
        let mut d_phi_k = cache.v.matmul_t(&d_s)?;
        for j in 0..d_phi_k.rows() {
            for (g, &dz) in d_phi_k.row_mut(j).iter_mut().zip(&d_z) {
                *g += dz;
            }
        }
        let d_v = cache.phi_k.matmul(&d_s)?;

        let k = self.kernel;
        let d_q = d_phi_q.zip_map(&cache.q_raw, |g, x| g * k.derivative(x))?;
        let d_k = d_phi_k.zip_map(&cache.k_raw, |g, x| g * k.derivative(x))?;

        self.params
            .backprop_projections(store, (&cache.e_q, &cache.e_k, &cache.e_v), (&d_q, &d_k, &d_v))
    }
}

/// Normalized linear attention with the given kernel.
pub fn linear_attention_forward(
    store: &ParamStore,
    e_q: &Matrix,
    e_k: &Matrix,
    e_v: &Matrix,
    params: AttentionParams,
    kernel: KernelFn,
) -> Result<AttentionOutput> {
    LinearAttention::new(params, kernel).forward(store, e_q, e_k, e_v)
}

pub fn linear_attention_backward(
    store: &mut ParamStore,
    grad_out: &Matrix,
    cache: &LinearCache,
) -> Result<InputGrads> {
    LinearAttention {
        params: cache.params,
        kernel: cache.kernel,
        normalize: cache.normalize,
    }
    .backward(store, grad_out, cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::oracle::dense_kernel_weights;
    use crate::numeric::{dot, max_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        store: ParamStore,
        params: AttentionParams,
        e_q: Matrix,
        e_k: Matrix,
        e_v: Matrix,
    }

    fn setup(seed: u64, m: usize, n: usize, dims: (usize, usize, usize), d: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = AttentionParams::new(&mut store, "a", dims, d, &mut rng);
        Setup {
            e_q: Matrix::random_uniform(m, dims.0, -1.0, 1.0, &mut rng),
            e_k: Matrix::random_uniform(n, dims.1, -1.0, 1.0, &mut rng),
            e_v: Matrix::random_uniform(n, dims.2, -1.0, 1.0, &mut rng),
            store,
            params,
        }
    }

    #[test]
    fn single_key_copies_value_row() {
        let s = setup(1, 5, 1, (3, 3, 3), 4);
        for kernel in [KernelFn::Softplus, KernelFn::ReluEps] {
            let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, kernel).unwrap();
            let v = s.e_v.matmul(s.store.value(s.params.w_v)).unwrap();
            for i in 0..5 {
                for (a, b) in out.output.row(i).iter().zip(v.row(0)) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let mut s = setup(2, 4, 6, (3, 3, 3), 4);
        let first = s.e_k.row(0).to_vec();
        for j in 0..6 {
            s.e_k.row_mut(j).copy_from_slice(&first);
        }
        let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
        let mean = s.e_v.matmul(s.store.value(s.params.w_v)).unwrap().col_mean();
        for i in 0..4 {
            for (a, b) in out.output.row(i).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ones_values_give_ones() {
        for seed in 0..20 {
            let mut s = setup(seed, 7, 9, (3, 4, 2), 5);
            let w_v = s.params.w_v;
            // V = E_V W_V = 2 · 0.5 = 1 everywhere.
            s.e_v = Matrix::filled(9, 2, 0.5);
            s.store.value_mut(w_v).fill(1.0);
            let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
            for &x in out.output.as_slice() {
                assert!((x - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn underflowing_degree_is_floored() {
        // softplus(-1000) underflows to exactly 0, so row 0 has zero degree.
        let mut s = setup(3, 2, 4, (2, 2, 2), 3);
        let w_q = s.params.w_q;
        s.store.value_mut(w_q).fill(-500.0);
        s.e_q.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        s.e_q.row_mut(1).copy_from_slice(&[0.0, 0.0]);
        let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
        assert_eq!(out.cache.floored_rows(), 1);
        assert_eq!(out.cache.degree()[0], DEGREE_FLOOR);
        assert!(out.output.row(0).iter().all(|&x| x == 0.0));
        assert!(out.output.is_finite());
        let g = linear_attention_backward(&mut s.store, &Matrix::filled(2, 3, 1.0), &out.cache).unwrap();
        assert!(g.e_q.is_finite() && g.e_k.is_finite() && g.e_v.is_finite());
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut s = setup(4, 3, 5, (2, 3, 4), 3);
        let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
        let g = linear_attention_backward(&mut s.store, &Matrix::zeros(3, 3), &out.cache).unwrap();
        assert_eq!(g.e_q.max_abs() + g.e_k.max_abs() + g.e_v.max_abs(), 0.0);
        assert_eq!(s.store.grad_norm(), 0.0);
    }

    fn fd_check(kernel: KernelFn, normalize: bool, seed: u64) -> f64 {
        let mut s = setup(seed, 2, 3, (2, 2, 2), 2);
        let att = LinearAttention {
            params: s.params,
            kernel,
            normalize,
        };
        let cot = Matrix::random_normal(2, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(seed + 100));
        let f = |st: &ParamStore, q: &Matrix, k: &Matrix, v: &Matrix| {
            dot(att.forward(st, q, k, v).unwrap().output.as_slice(), cot.as_slice())
        };
        let out = att.forward(&s.store, &s.e_q, &s.e_k, &s.e_v).unwrap();
        let g = att.backward(&mut s.store, &cot, &out.cache).unwrap();
        let h = 1e-5;
        let mut worst = 0.0_f64;
        let mut record = |analytic: f64, numeric: f64| {
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-4));
        };
        for which in 0..3 {
            let (base, grad) = match which {
                0 => (&s.e_q, &g.e_q),
                1 => (&s.e_k, &g.e_k),
                _ => (&s.e_v, &g.e_v),
            };
            for idx in 0..base.as_slice().len() {
                let mut p = base.clone();
                p.as_mut_slice()[idx] += h;
                let mut mm = base.clone();
                mm.as_mut_slice()[idx] -= h;
                let (fp, fm) = match which {
                    0 => (f(&s.store, &p, &s.e_k, &s.e_v), f(&s.store, &mm, &s.e_k, &s.e_v)),
                    1 => (f(&s.store, &s.e_q, &p, &s.e_v), f(&s.store, &s.e_q, &mm, &s.e_v)),
                    _ => (f(&s.store, &s.e_q, &s.e_k, &p), f(&s.store, &s.e_q, &s.e_k, &mm)),
                };
                record(grad.as_slice()[idx], (fp - fm) / (2.0 * h));
            }
        }
        for id in s.params.ids() {
            for idx in 0..s.store.value(id).as_slice().len() {
                let analytic = s.store.grad(id).as_slice()[idx];
                let orig = s.store.value(id).as_slice()[idx];
                s.store.value_mut(id).as_mut_slice()[idx] = orig + h;
                let fp = f(&s.store, &s.e_q, &s.e_k, &s.e_v);
                s.store.value_mut(id).as_mut_slice()[idx] = orig - h;
                let fm = f(&s.store, &s.e_q, &s.e_k, &s.e_v);
                s.store.value_mut(id).as_mut_slice()[idx] = orig;
                record(analytic, (fp - fm) / (2.0 * h));
            }
        }
        worst
    }

    #[test]
    fn finite_difference_softplus() {
        for seed in 0..5 {
            let w = fd_check(KernelFn::Softplus, true, seed);
            assert!(w < 1e-5, "seed {seed}: {w}");
        }
    }

    #[test]
    fn finite_difference_relu_eps() {
        for seed in 10..15 {
            let w = fd_check(KernelFn::ReluEps, true, seed);
            assert!(w < 1e-5, "seed {seed}: {w}");
        }
    }

    #[test]
    fn finite_difference_unnormalized() {
        let w = fd_check(KernelFn::Softplus, false, 20);
        assert!(w < 1e-5, "{w}");
    }

    #[test]
    fn value_grad_matches_explicit_weights() {
        let mut s = setup(30, 4, 6, (3, 3, 3), 3);
        let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
        let cot = Matrix::random_normal(4, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(31));
        let g = linear_attention_backward(&mut s.store, &cot, &out.cache).unwrap();
        let a = dense_kernel_weights(&s.store, &s.e_q, &s.e_k, s.params, KernelFn::Softplus).unwrap();
        // dE_V = Aᵀ G W_Vᵀ
        let want = a
            .t_matmul(&cot)
            .unwrap()
            .matmul_t(s.store.value(s.params.w_v))
            .unwrap();
        assert!(max_rel_error(&g.e_v, &want, 1e-9) < 1e-9);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut s = setup(40, 2, 2, (2, 2, 2), 2);
        let out = linear_attention_forward(&s.store, &s.e_q, &s.e_k, &s.e_v, s.params, KernelFn::Softplus).unwrap();
        s.store.bump_generation();
        assert!(matches!(
            linear_attention_backward(&mut s.store, &Matrix::zeros(2, 2), &out.cache),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = setup(41, 2, 3, (2, 2, 2), 2);
        let bad_v = Matrix::zeros(4, 2);
        assert!(matches!(
            linear_attention_forward(&s.store, &s.e_q, &s.e_k, &bad_v, s.params, KernelFn::Softplus),
            Err(Error::Dimension { .. })
        ));
        let empty = Matrix::zeros(0, 2);
        assert!(linear_attention_forward(&s.store, &s.e_q, &empty, &empty, s.params, KernelFn::Softplus).is_err());
    }
}
