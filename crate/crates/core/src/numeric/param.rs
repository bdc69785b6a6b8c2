use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub value: Matrix,
    pub grad: Matrix,
}

impl GradPair {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        GradPair {
            value,
            grad: Matrix::zeros(r, c),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    pair: GradPair,
}

/// Owns every trainable tensor of a model.
///
/// `generation` advances on every optimizer step; forward caches record it
/// so a backward pass against updated parameters is rejected.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    generation: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        self.entries.push(Entry {
            name,
            pair: GradPair::new(value),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].pair.value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].pair.value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].pair.grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.entries[id.0].pair.grad
    }

    pub fn pair_mut(&mut self, id: ParamId) -> &mut GradPair {
        &mut self.entries[id.0].pair
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &GradPair)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.pair))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut GradPair)> {
        self.entries.iter_mut().map(|e| (e.name.as_str(), &mut e.pair))
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.pair.zero_grad());
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.pair.grad.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            self.entries.iter_mut().for_each(|e| e.pair.grad.scale(s));
        }
        norm
    }

    /// First parameter whose gradient holds a NaN or infinity.
    pub fn check_grads_finite(&self, step: u64) -> Result<()> {
        match self.entries.iter().find(|e| !e.pair.grad.is_finite()) {
            Some(e) => Err(Error::Training {
                step,
                msg: format!("non-finite gradient in parameter `{}`", e.name),
            }),
            None => Ok(()),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.pair.value.as_slice().len())
            .sum()
    }
}
