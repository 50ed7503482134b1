//! Minimal dense-network toolkit: a flat parameter pool, hand-written
//! forward/backward passes for the layers the recommenders need, and a
//! gradient store that merges deterministically across worker shards.
//!
//! Everything is `f64`; analytic gradients are verified against central
//! finite differences in the layer tests.

mod attention;
mod layers;

pub use attention::{
    AdditiveAttention, AdditiveCache, MaskedAdditiveCache, MultiHeadSelfAttention, SelfAttnCache,
    PersonalizedAttention, PersonalizedCache,
};
pub use layers::{Embedding, FeedForward, FfnCache, LayerNorm, LayerNormCache, Linear};

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewD};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("all positions are masked; caller must handle empty input")]
    AllPositionsMasked,
    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
}

/// Handle to one named tensor in a [`ParamPool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Flat, name-indexed parameter storage. Construction order is fixed, which
/// keeps optimizer state, gradient merging, and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamPool {
    values: Vec<ArrayD<f64>>,
    names: Vec<String>,
    by_name: HashMap<String, usize>,
}

impl ParamPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id.0);
        self.names.push(name);
        self.values.push(value);
        id
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> ArrayViewD<'_, f64> {
        self.values[id.0].view()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn as2(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.values[id.0]
            .view()
            .into_dimensionality()
            .expect("parameter is 2-d")
    }

    pub fn as1(&self, id: ParamId) -> ArrayView1<'_, f64> {
        self.values[id.0]
            .view()
            .into_dimensionality()
            .expect("parameter is 1-d")
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Per-parameter gradient accumulators matching a [`ParamPool`] layout.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<ArrayD<f64>>,
}

impl GradStore {
    pub fn zeros_like(pool: &ParamPool) -> Self {
        Self {
            grads: pool.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn grad(&self, id: ParamId) -> ArrayViewD<'_, f64> {
        self.grads[id.0].view()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.grads[id.0]
    }

    pub fn add1(&mut self, id: ParamId, delta: ArrayView1<f64>) {
        let mut g = self.grads[id.0]
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("gradient is 1-d");
        g += &delta;
    }

    pub fn add2(&mut self, id: ParamId, delta: ArrayView2<f64>) {
        let mut g = self.grads[id.0]
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("gradient is 2-d");
        g += &delta;
    }

    /// Elementwise add of another store produced from the same pool.
    pub fn merge(&mut self, other: &GradStore) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            *mine += theirs;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<f64>> {
        self.grads.iter()
    }
}

/// Xavier-uniform matrix init.
pub fn xavier2<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> ArrayD<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit)).into_dyn()
}

/// Gaussian init, used for embedding tables.
pub fn normal2<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> ArrayD<f64> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng)).into_dyn()
}

pub fn zeros1(len: usize) -> ArrayD<f64> {
    Array1::<f64>::zeros(len).into_dyn()
}

pub fn ones1(len: usize) -> ArrayD<f64> {
    Array1::<f64>::ones(len).into_dyn()
}

/// Uniform init in `[-1/sqrt(len), 1/sqrt(len)]` for query vectors.
pub fn query1<R: Rng>(rng: &mut R, len: usize) -> ArrayD<f64> {
    let limit = 1.0 / (len as f64).sqrt();
    Array1::from_shape_fn(len, |_| rng.gen_range(-limit..limit)).into_dyn()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax of a vector.
pub fn softmax1(scores: ArrayView1<f64>) -> Array1<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = scores.mapv(|s| (s - max).exp());
    let sum: f64 = out.sum();
    out.mapv_inplace(|e| e / sum);
    out
}

/// Backward of `softmax1`: given probabilities and upstream gradient,
/// return the gradient w.r.t. the scores.
pub fn softmax1_backward(probs: ArrayView1<f64>, dprobs: ArrayView1<f64>) -> Array1<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
    Array1::from_iter(probs.iter().zip(dprobs).map(|(p, d)| p * (d - dot)))
}

/// Row-wise stable softmax.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Row-wise softmax backward.
pub fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((p_row, d_row), mut o_row) in probs
        .rows()
        .into_iter()
        .zip(dprobs.rows())
        .zip(out.rows_mut())
    {
        let dot: f64 = p_row.iter().zip(d_row).map(|(p, d)| p * d).sum();
        for ((o, &p), &d) in o_row.iter_mut().zip(p_row).zip(d_row) {
            *o = p * (d - dot);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference checking shared by layer tests.

    use super::{GradStore, ParamId, ParamPool};

    pub const EPS: f64 = 1e-5;

    /// Symmetric relative error; differences below central-difference
    /// rounding noise count as exact so true-zero gradients pass.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        if (a - b).abs() < 1e-9 {
            return 0.0;
        }
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    /// Compare analytic parameter gradients against central differences of
    /// `loss`. Returns the max relative error over all checked scalars and
    /// the (analytic, numeric) pair behind it.
    pub fn check_params_detailed(
        pool: &mut ParamPool,
        grads: &GradStore,
        ids: &[ParamId],
        mut loss: impl FnMut(&ParamPool) -> f64,
    ) -> (f64, f64, f64) {
        let mut worst = (0.0f64, 0.0, 0.0);
        for &id in ids {
            let len = pool.value(id).len();
            for i in 0..len {
                let original = pool.value_mut(id).as_slice_mut().unwrap()[i];
                pool.value_mut(id).as_slice_mut().unwrap()[i] = original + EPS;
                let plus = loss(pool);
                pool.value_mut(id).as_slice_mut().unwrap()[i] = original - EPS;
                let minus = loss(pool);
                pool.value_mut(id).as_slice_mut().unwrap()[i] = original;
                let numeric = (plus - minus) / (2.0 * EPS);
                let analytic = grads.grad(id).as_slice().unwrap()[i];
                let err = rel_err(analytic, numeric);
                if err > worst.0 {
                    worst = (err, analytic, numeric);
                }
            }
        }
        worst
    }

    pub fn check_params(
        pool: &mut ParamPool,
        grads: &GradStore,
        ids: &[ParamId],
        loss: impl FnMut(&ParamPool) -> f64,
    ) -> f64 {
        let (worst, analytic, numeric) = check_params_detailed(pool, grads, ids, loss);
        if worst > 1e-6 {
            eprintln!("worst gradcheck entry: analytic={analytic} numeric={numeric}");
        }
        worst
    }

    /// Same check for the gradient w.r.t. a dense input array.
    pub fn check_input(
        input: &mut ndarray::Array2<f64>,
        analytic: &ndarray::Array2<f64>,
        mut loss: impl FnMut(&ndarray::Array2<f64>) -> f64,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..input.len() {
            let original = input.as_slice_mut().unwrap()[i];
            input.as_slice_mut().unwrap()[i] = original + EPS;
            let plus = loss(input);
            input.as_slice_mut().unwrap()[i] = original - EPS;
            let minus = loss(input);
            input.as_slice_mut().unwrap()[i] = original;
            let numeric = (plus - minus) / (2.0 * EPS);
            let a = analytic.as_slice().unwrap()[i];
            worst = worst.max(rel_err(a, numeric));
        }
        worst
    }
}
