//! Named parameter storage shared by both model families.

use ndarray::Array2;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Index of one parameter tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter matrices. Order is part of the
/// checkpoint format, so construction must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter_mut())
    }

    /// Total scalar parameter count, for the build report.
    pub fn total_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Per-parameter gradient accumulator aligned with a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Grads {
    values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            values: params
                .values
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Array2<f64>) {
        self.values[id.0] += grad;
    }

    pub fn add_scaled(&mut self, other: &Grads, factor: f64) {
        for (mine, theirs) in self.values.iter_mut().zip(&other.values) {
            mine.scaled_add(factor, theirs);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale all gradients so the global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for g in &mut self.values {
                *g *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.values.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// N(0, std) initialization.
pub fn normal_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("std is positive");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// U(-bound, bound) initialization, the usual recurrent-layer choice.
pub fn uniform_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("bound is positive");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}
