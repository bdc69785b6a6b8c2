//! ReLU multi-layer perceptron with a sigmoid scoring head.
//!
//! `F_{l+1} = ReLU(F_l W_l + b_l)`, `y = σ(F_L w + b)`; one row per candidate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamId, ParamStore};

/// Affine layer `x W + b` with `W: in×out`, `b: 1×out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// He-scaled normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Matrix::random_normal(fan_in, fan_out, std, rng),
        );
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out));
        Dense { weight, bias }
    }

    fn apply(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(store.value(self.weight))?;
        z.add_row_broadcast(store.value(self.bias).as_slice())?;
        Ok(z)
    }

    /// Accumulates `dW += xᵀ dz`, `db += 1ᵀ dz`; returns `dz Wᵀ`.
    fn backprop(&self, store: &mut ParamStore, x: &Matrix, dz: &Matrix) -> Result<Matrix> {
        let dw = x.t_matmul(dz)?;
        store.grad_mut(self.weight).add_assign(&dw)?;
        let db = dz.col_sums();
        for (g, d) in store.grad_mut(self.bias).as_mut_slice().iter_mut().zip(db) {
            *g += d;
        }
        dz.matmul_t(store.value(self.weight))
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    hidden: Vec<Dense>,
    head: Dense,
    in_dim: usize,
}

/// Intermediates retained by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    generation: u64,
    head: ParamId,
    /// Input to each layer, hidden layers first then the head.
    inputs: Vec<Matrix>,
    /// Hidden pre-activations (ReLU mask source).
    pre: Vec<Matrix>,
    output: Matrix,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = in_dim;
        for (l, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.hidden{l}"), fan_in, h, rng));
            fan_in = h;
        }
        let head = Dense::new(store, &format!("{name}.head"), fan_in, 1, rng);
        Mlp {
            hidden: layers,
            head,
            in_dim,
        }
    }

    /// Assembles an MLP from existing layers, checking that shapes chain.
    pub fn from_layers(store: &ParamStore, hidden: Vec<Dense>, head: Dense) -> Result<Self> {
        let in_dim = hidden
            .first()
            .map_or_else(|| store.value(head.weight).rows(), |d| store.value(d.weight).rows());
        let mut width = in_dim;
        for d in hidden.iter().chain(std::iter::once(&head)) {
            let w = store.value(d.weight);
            let b = store.value(d.bias);
            if w.rows() != width || b.shape() != (1, w.cols()) {
                return Err(Error::dim("mlp layers", (width, 0), w.shape()));
            }
            width = w.cols();
        }
        if width != 1 {
            return Err(Error::dim("mlp head", (width, 0), (1, 1)));
        }
        Ok(Mlp {
            hidden,
            head,
            in_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    /// Returns the `rows × 1` sigmoid scores and the backward cache.
    pub fn forward(&self, store: &ParamStore, input: &Matrix) -> Result<(Matrix, MlpCache)> {
        if input.cols() != self.in_dim {
            return Err(Error::dim("mlp_forward", input.shape(), (self.in_dim, 0)));
        }
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut x = input.clone();
        for layer in &self.hidden {
            let z = layer.apply(store, &x)?;
            let a = z.map(|v| v.max(0.0));
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let logits = self.head.apply(store, &x)?;
        inputs.push(x);
        let output = logits.map(sigmoid);
        Ok((
            output.clone(),
            MlpCache {
                generation: store.generation(),
                head: self.head.weight,
                inputs,
                pre,
                output,
            },
        ))
    }

    /// Backpropagates `∂L/∂y` (same shape as the output), accumulating
    /// parameter gradients; returns `∂L/∂input`.
    pub fn backward(&self, store: &mut ParamStore, grad_out: &Matrix, cache: &MlpCache) -> Result<Matrix> {
        if cache.head != self.head.weight || cache.inputs.len() != self.hidden.len() + 1 {
            return Err(Error::Usage("mlp cache belongs to a different network".into()));
        }
        if cache.generation != store.generation() {
            return Err(Error::Usage("stale mlp cache: parameters changed since forward".into()));
        }
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim("mlp_backward", grad_out.shape(), cache.output.shape()));
        }
        // dσ/dz = y(1 − y)
        let mut dz = grad_out.zip_map(&cache.output, |g, y| g * y * (1.0 - y))?;
        let mut dx = self.head.backprop(store, cache.inputs.last().unwrap(), &dz)?;
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            dz = dx.zip_map(&cache.pre[l], |g, z| if z > 0.0 { g } else { 0.0 })?;
            dx = layer.backprop(store, &cache.inputs[l], &dz)?;
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_params_give_half() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 3, &[4, 2], &mut rng(1));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).fill(0.0);
        }
        let x = Matrix::random_normal(5, 3, 1.0, &mut rng(2));
        let (y, _) = mlp.forward(&store, &x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_computed_single_layer() {
        // W = I, b = [0, -1], head w = [1, 1], b = 0.
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::identity(2));
        let b = store.add("b", Matrix::from_rows(&[[0.0, -1.0]]).unwrap());
        let hw = store.add("hw", Matrix::from_rows(&[[1.0], [1.0]]).unwrap());
        let hb = store.add("hb", Matrix::zeros(1, 1));
        let mlp = Mlp::from_layers(&store, vec![Dense { weight: w, bias: b }], Dense { weight: hw, bias: hb }).unwrap();
        let x = Matrix::from_rows(&[[2.0, 3.0], [-1.0, 0.5]]).unwrap();
        let (y, _) = mlp.forward(&store, &x).unwrap();
        // row 0: relu([2, 2]) -> 4; row 1: relu([-1, -0.5]) -> 0
        assert!((y.get(0, 0) - 1.0 / (1.0 + (-4.0f64).exp())).abs() < 1e-15);
        assert_eq!(y.get(1, 0), 0.5);
    }

    #[test]
    fn outputs_strictly_inside_unit_interval() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 6, &[8, 8], &mut rng(3));
        let x = Matrix::random_normal(32, 6, 1.0, &mut rng(4));
        let (y, _) = mlp.forward(&store, &x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 3, &[4], &mut rng(5));
        let x = Matrix::random_normal(4, 3, 1.0, &mut rng(6));
        let (y, cache) = mlp.forward(&store, &x).unwrap();
        let dx = mlp
            .backward(&mut store, &Matrix::zeros(y.rows(), 1), &cache)
            .unwrap();
        assert_eq!(dx.max_abs(), 0.0);
        assert_eq!(store.grad_norm(), 0.0);
    }

    #[test]
    fn finite_difference_two_layer() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 3, &[5, 4], &mut rng(7));
        let x = Matrix::random_normal(6, 3, 1.0, &mut rng(8));
        let cot = Matrix::random_normal(6, 1, 1.0, &mut rng(9));
        let loss = |s: &ParamStore, x: &Matrix| -> f64 {
            let (y, _) = mlp.forward(s, x).unwrap();
            crate::numeric::matrix::dot(y.as_slice(), cot.as_slice())
        };
        let (_, cache) = mlp.forward(&store, &x).unwrap();
        let dx = mlp.backward(&mut store, &cot, &cache).unwrap();
        let h = 1e-5;
        let mut worst = 0.0_f64;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for k in 0..store.value(id).as_slice().len() {
                let analytic = store.grad(id).as_slice()[k];
                let orig = store.value(id).as_slice()[k];
                store.value_mut(id).as_mut_slice()[k] = orig + h;
                let lp = loss(&store, &x);
                store.value_mut(id).as_mut_slice()[k] = orig - h;
                let lm = loss(&store, &x);
                store.value_mut(id).as_mut_slice()[k] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1e-6));
            }
        }
        for k in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= h;
            let numeric = (loss(&store, &xp) - loss(&store, &xm)) / (2.0 * h);
            worst = worst.max((dx.as_slice()[k] - numeric).abs() / numeric.abs().max(1e-6));
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn dead_relu_unit_gets_no_weight_grad() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 2, &[2], &mut rng(10));
        let first = *mlp.layers().next().unwrap();
        // Unit 1 has a hugely negative bias: dead for all inputs below.
        store.value_mut(first.bias).set(0, 1, -100.0);
        let x = Matrix::random_uniform(4, 2, -1.0, 1.0, &mut rng(11));
        let (_, cache) = mlp.forward(&store, &x).unwrap();
        mlp.backward(&mut store, &Matrix::filled(4, 1, 1.0), &cache).unwrap();
        let g = store.grad(first.weight);
        assert_eq!(g.get(0, 1), 0.0);
        assert_eq!(g.get(1, 1), 0.0);
        assert_eq!(store.grad(first.bias).get(0, 1), 0.0);
    }

    #[test]
    fn stale_cache_rejected() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "t", 2, &[2], &mut rng(12));
        let x = Matrix::zeros(1, 2);
        let (_, cache) = mlp.forward(&store, &x).unwrap();
        store.bump_generation();
        let err = mlp.backward(&mut store, &Matrix::zeros(1, 1), &cache).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
