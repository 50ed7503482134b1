//! Attention blocks: scaled-dot multi-head self-attention, additive
//! (query-vector) pooling, and its personalized variant where the query
//! comes from a user embedding.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::{
    softmax1, softmax1_backward, softmax_rows, softmax_rows_backward, xavier2, zeros1, GradStore,
    Linear, NnError, ParamId, ParamPool,
};

/// Multi-head self-attention over one sequence, no positional information.
/// Callers pass only valid positions, so no key mask is needed.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadSelfAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct SelfAttnCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention probabilities, each `[n, n]`.
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl MultiHeadSelfAttention {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        dim: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(dim.is_multiple_of(n_heads), "dim {dim} not divisible by {n_heads} heads");
        Self {
            wq: Linear::new(pool, &format!("{scope}.q"), dim, dim, rng),
            wk: Linear::new(pool, &format!("{scope}.k"), dim, dim, rng),
            wv: Linear::new(pool, &format!("{scope}.v"), dim, dim, rng),
            wo: Linear::new(pool, &format!("{scope}.out"), dim, dim, rng),
            n_heads,
        }
    }

    pub fn forward(&self, pool: &ParamPool, x: &Array2<f64>) -> (Array2<f64>, SelfAttnCache) {
        let n = x.nrows();
        let dim = x.ncols();
        let dh = dim / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.wq.forward(pool, x);
        let k = self.wk.forward(pool, x);
        let v = self.wv.forward(pool, x);

        let mut context = Array2::zeros((n, dim));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()) * scale;
            let p = softmax_rows(&scores);
            context.slice_mut(cols).assign(&p.dot(&vh));
            probs.push(p);
        }
        let y = self.wo.forward(pool, &context);
        (y, SelfAttnCache { x: x.clone(), q, k, v, probs, context })
    }

    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &SelfAttnCache,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let dim = dy.ncols();
        let dh = dim / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let dcontext = self.wo.backward(pool, &cache.context, dy, grads);

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = &cache.probs[h];
            let dch = dcontext.slice(cols);
            let vh = cache.v.slice(cols);
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);

            let dp = dch.dot(&vh.t());
            dv.slice_mut(cols).assign(&p.t().dot(&dch));
            let dscores = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&dscores.dot(&kh));
            dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
        }

        let mut dx = self.wq.backward(pool, &cache.x, &dq, grads);
        dx += &self.wk.backward(pool, &cache.x, &dk, grads);
        dx += &self.wv.backward(pool, &cache.x, &dv, grads);
        dx
    }
}

/// Additive attention pooling: `score_i = q . tanh(W h_i + b)`, softmax over
/// positions, weighted sum of the rows.
#[derive(Debug, Clone, Copy)]
pub struct AdditiveAttention {
    pub w: ParamId,
    pub b: ParamId,
    pub q: ParamId,
}

#[derive(Debug, Clone)]
pub struct AdditiveCache {
    h: Array2<f64>,
    activated: Array2<f64>,
    pub weights: Array1<f64>,
    pub pooled: Array1<f64>,
}

impl AdditiveAttention {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: pool.add(format!("{scope}.proj.weight"), xavier2(rng, dim, hidden)),
            b: pool.add(format!("{scope}.proj.bias"), zeros1(hidden)),
            q: pool.add(format!("{scope}.query"), super::query1(rng, hidden)),
        }
    }

    /// Pool `h` (`[n, dim]`, n >= 1, every row valid).
    pub fn forward(&self, pool: &ParamPool, h: &Array2<f64>) -> AdditiveCache {
        assert!(h.nrows() >= 1, "additive attention needs at least one row");
        let activated = (h.dot(&pool.as2(self.w)) + pool.as1(self.b)).mapv(f64::tanh);
        let scores = activated.dot(&pool.as1(self.q));
        let weights = softmax1(scores.view());
        let pooled = weights.dot(h);
        AdditiveCache { h: h.clone(), activated, weights, pooled }
    }

    /// Masked variant: rows where `mask == 0` get weight exactly zero and do
    /// not influence the pooled vector. Errors when every position is
    /// masked.
    pub fn forward_masked(
        &self,
        pool: &ParamPool,
        h: &Array2<f64>,
        mask: &[u8],
    ) -> Result<MaskedAdditiveCache, NnError> {
        assert_eq!(h.nrows(), mask.len(), "mask length must match rows");
        let valid: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (m != 0).then_some(i))
            .collect();
        if valid.is_empty() {
            return Err(NnError::AllPositionsMasked);
        }
        let compact = gather_rows(h, &valid);
        let inner = self.forward(pool, &compact);
        let mut weights = Array1::zeros(h.nrows());
        for (slot, &row) in valid.iter().enumerate() {
            weights[row] = inner.weights[slot];
        }
        Ok(MaskedAdditiveCache { inner, valid, full_rows: h.nrows(), weights })
    }

    /// Accumulates parameter gradients and returns `dH`.
    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &AdditiveCache,
        d_pooled: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        // pooled = weights^T H
        let dweights = cache.h.dot(d_pooled);
        let mut dh = outer(&cache.weights, d_pooled);

        let dscores = softmax1_backward(cache.weights.view(), dweights.view());
        // scores = activated . q, activated = tanh(H W + b)
        grads.add1(self.q, cache.activated.t().dot(&dscores).view());
        let dactivated = outer(&dscores, &pool.as1(self.q).to_owned());
        let dpre = &dactivated * &cache.activated.mapv(|t| 1.0 - t * t);
        grads.add2(self.w, cache.h.t().dot(&dpre).view());
        grads.add1(self.b, dpre.sum_axis(Axis(0)).view());
        dh += &dpre.dot(&pool.as2(self.w).t());
        dh
    }
}

#[derive(Debug, Clone)]
pub struct MaskedAdditiveCache {
    inner: AdditiveCache,
    valid: Vec<usize>,
    full_rows: usize,
    /// Weights scattered back to the full row count; zero on masked rows.
    pub weights: Array1<f64>,
}

impl MaskedAdditiveCache {
    pub fn pooled(&self) -> &Array1<f64> {
        &self.inner.pooled
    }

    pub fn backward(
        &self,
        layer: &AdditiveAttention,
        pool: &ParamPool,
        d_pooled: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let compact = layer.backward(pool, &self.inner, d_pooled, grads);
        let mut dh = Array2::zeros((self.full_rows, compact.ncols()));
        for (slot, &row) in self.valid.iter().enumerate() {
            dh.row_mut(row).assign(&compact.row(slot));
        }
        dh
    }
}

/// Additive attention whose query is a learned transform of a user
/// embedding instead of a shared parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct PersonalizedAttention {
    pub query_proj: Linear,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct PersonalizedCache {
    h: Array2<f64>,
    user_emb: Array1<f64>,
    query_pre: Array1<f64>,
    query: Array1<f64>,
    activated: Array2<f64>,
    pub weights: Array1<f64>,
    pub pooled: Array1<f64>,
}

impl PersonalizedAttention {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        dim: usize,
        hidden: usize,
        user_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query_proj: Linear::new(pool, &format!("{scope}.query_proj"), user_dim, hidden, rng),
            w: pool.add(format!("{scope}.proj.weight"), xavier2(rng, dim, hidden)),
            b: pool.add(format!("{scope}.proj.bias"), zeros1(hidden)),
        }
    }

    pub fn forward(
        &self,
        pool: &ParamPool,
        h: &Array2<f64>,
        user_emb: &Array1<f64>,
    ) -> PersonalizedCache {
        assert!(h.nrows() >= 1, "personalized attention needs at least one row");
        let user_row = user_emb.view().insert_axis(Axis(0)).to_owned();
        let query_pre = self
            .query_proj
            .forward(pool, &user_row)
            .row(0)
            .to_owned();
        let query = query_pre.mapv(f64::tanh);
        let activated = (h.dot(&pool.as2(self.w)) + pool.as1(self.b)).mapv(f64::tanh);
        let scores = activated.dot(&query);
        let weights = softmax1(scores.view());
        let pooled = weights.dot(h);
        PersonalizedCache {
            h: h.clone(),
            user_emb: user_emb.clone(),
            query_pre,
            query,
            activated,
            weights,
            pooled,
        }
    }

    /// Returns `(dH, d_user_emb)`.
    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &PersonalizedCache,
        d_pooled: &Array1<f64>,
        grads: &mut GradStore,
    ) -> (Array2<f64>, Array1<f64>) {
        let dweights = cache.h.dot(d_pooled);
        let mut dh = outer(&cache.weights, d_pooled);

        let dscores = softmax1_backward(cache.weights.view(), dweights.view());
        // scores = activated . query, both sides learned.
        let dquery = cache.activated.t().dot(&dscores);
        let dactivated = outer(&dscores, &cache.query);
        let dpre = &dactivated * &cache.activated.mapv(|t| 1.0 - t * t);
        grads.add2(self.w, cache.h.t().dot(&dpre).view());
        grads.add1(self.b, dpre.sum_axis(Axis(0)).view());
        dh += &dpre.dot(&pool.as2(self.w).t());

        let dquery_pre = &dquery * &cache.query_pre.mapv(|t| 1.0 - t.tanh() * t.tanh());
        let user_row = cache.user_emb.view().insert_axis(Axis(0)).to_owned();
        let duser = self.query_proj.backward(
            pool,
            &user_row,
            &dquery_pre.view().insert_axis(Axis(0)).to_owned(),
            grads,
        );
        (dh, duser.row(0).to_owned())
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[[i, j]] = av * bv;
        }
    }
    out
}

fn gather_rows(h: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), h.ncols()));
    for (mut dst, &src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&h.row(src));
    }
    out
}
