//! Dense layers: linear, layer norm, embedding lookup, feed-forward block.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{gelu, gelu_prime, xavier2, zeros1, GradStore, ParamId, ParamPool};

/// `y = x W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: pool.add(format!("{scope}.weight"), xavier2(rng, d_in, d_out)),
            b: pool.add(format!("{scope}.bias"), zeros1(d_out)),
        }
    }

    pub fn forward(&self, pool: &ParamPool, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&pool.as2(self.w)) + pool.as1(self.b)
    }

    /// Accumulates parameter gradients and returns `dx`. `x` must be the
    /// forward input.
    pub fn backward(
        &self,
        pool: &ParamPool,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        grads.add2(self.w, x.t().dot(dy).view());
        grads.add1(self.b, dy.sum_axis(Axis(0)).view());
        dy.dot(&pool.as2(self.w).t())
    }
}

/// Row-wise layer normalization over the feature axis.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(pool: &mut ParamPool, scope: &str, dim: usize) -> Self {
        Self {
            gamma: pool.add(format!("{scope}.gamma"), super::ones1(dim)),
            beta: pool.add(format!("{scope}.beta"), zeros1(dim)),
            eps: 1e-12,
        }
    }

    pub fn forward(&self, pool: &ParamPool, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let mut normalized = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (i, mut row) in normalized.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v - mean[i]);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            row.mapv_inplace(|v| v * istd);
        }
        let y = &normalized * &pool.as1(self.gamma) + pool.as1(self.beta);
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &LayerNormCache,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let d = dy.ncols() as f64;
        grads.add1(self.gamma, (dy * &cache.normalized).sum_axis(Axis(0)).view());
        grads.add1(self.beta, dy.sum_axis(Axis(0)).view());

        let gamma = pool.as1(self.gamma);
        let dnorm = dy * &gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let dn = dnorm.row(i);
            let xhat = cache.normalized.row(i);
            let sum_dn: f64 = dn.sum();
            let sum_dn_xhat: f64 = dn.iter().zip(xhat).map(|(a, b)| a * b).sum();
            let istd = cache.inv_std[i];
            for j in 0..dy.ncols() {
                dx[[i, j]] = istd / d * (d * dn[j] - sum_dn - xhat[j] * sum_dn_xhat);
            }
        }
        dx
    }
}

/// Row lookup into a `[vocab, dim]` table.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            table: pool.add(format!("{scope}.table"), super::normal2(rng, vocab, dim, 0.02)),
        }
    }

    pub fn forward(&self, pool: &ParamPool, ids: &[usize]) -> Array2<f64> {
        let table = pool.as2(self.table);
        let mut out = Array2::zeros((ids.len(), table.ncols()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&table.row(id));
        }
        out
    }

    pub fn backward(&self, ids: &[usize], dy: &Array2<f64>, grads: &mut GradStore) {
        let mut table = grads
            .grad_mut(self.table)
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("embedding gradient is 2-d");
        for (row, &id) in dy.rows().into_iter().zip(ids) {
            let mut target = table.row_mut(id);
            target += &row;
        }
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn new<R: Rng>(
        pool: &mut ParamPool,
        scope: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            lin1: Linear::new(pool, &format!("{scope}.lin1"), dim, hidden, rng),
            lin2: Linear::new(pool, &format!("{scope}.lin2"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, pool: &ParamPool, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
        let pre = self.lin1.forward(pool, x);
        let act = pre.mapv(gelu);
        let y = self.lin2.forward(pool, &act);
        (y, FfnCache { x: x.clone(), pre, act })
    }

    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &FfnCache,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let dact = self.lin2.backward(pool, &cache.act, dy, grads);
        let dpre = &dact * &cache.pre.mapv(gelu_prime);
        self.lin1.backward(pool, &cache.x, &dpre, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pool = ParamPool::new();
        let layer = Linear::new(&mut pool, "lin", 4, 3, &mut rng);
        let x = random_input(&mut rng, 5, 4);
        let probe = random_input(&mut rng, 5, 3);

        let mut grads = GradStore::zeros_like(&pool);
        let dx = layer.backward(&pool, &x, &probe, &mut grads);

        let loss = |p: &ParamPool| (layer.forward(p, &x) * &probe).sum();
        let worst = gradcheck::check_params(&mut pool, &grads, &[layer.w, layer.b], loss);
        assert!(worst < 1e-6, "param rel err {worst}");

        let mut x_var = x.clone();
        let worst = gradcheck::check_input(&mut x_var, &dx, |xv| {
            (layer.forward(&pool, xv) * &probe).sum()
        });
        assert!(worst < 1e-6, "input rel err {worst}");
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pool = ParamPool::new();
        let layer = LayerNorm::new(&mut pool, "ln", 6);
        // Nudge gamma off its all-ones init so the test is not special-cased.
        pool.value_mut(layer.gamma)
            .mapv_inplace(|g| g + rng.gen_range(-0.2..0.2));
        let x = random_input(&mut rng, 4, 6);
        let probe = random_input(&mut rng, 4, 6);

        let mut grads = GradStore::zeros_like(&pool);
        let (_, cache) = layer.forward(&pool, &x);
        let dx = layer.backward(&pool, &cache, &probe, &mut grads);

        let loss = |p: &ParamPool| (layer.forward(p, &x).0 * &probe).sum();
        let worst = gradcheck::check_params(&mut pool, &grads, &[layer.gamma, layer.beta], loss);
        assert!(worst < 1e-6, "param rel err {worst}");

        let mut x_var = x.clone();
        let worst = gradcheck::check_input(&mut x_var, &dx, |xv| {
            (layer.forward(&pool, xv).0 * &probe).sum()
        });
        assert!(worst < 1e-5, "input rel err {worst}");
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let mut pool = ParamPool::new();
        let layer = LayerNorm::new(&mut pool, "ln", 4);
        let x = ndarray::arr2(&[[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]]);
        let (y, _) = layer.forward(&pool, &x);
        for row in y.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_scatters_gradients_with_repeats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pool = ParamPool::new();
        let emb = Embedding::new(&mut pool, "emb", 5, 3, &mut rng);
        let ids = [2usize, 4, 2];
        let probe = random_input(&mut rng, 3, 3);

        let mut grads = GradStore::zeros_like(&pool);
        emb.backward(&ids, &probe, &mut grads);

        let loss = |p: &ParamPool| (emb.forward(p, &ids) * &probe).sum();
        let worst = gradcheck::check_params(&mut pool, &grads, &[emb.table], loss);
        assert!(worst < 1e-6, "rel err {worst}");

        // Row 2 appears twice, so its gradient is the sum of both rows.
        let g = grads.grad(emb.table);
        let expected = probe.row(0).to_owned() + probe.row(2);
        for j in 0..3 {
            assert!((g[[2, j]] - expected[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn feedforward_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pool = ParamPool::new();
        let ffn = FeedForward::new(&mut pool, "ffn", 4, 7, &mut rng);
        let x = random_input(&mut rng, 3, 4);
        let probe = random_input(&mut rng, 3, 4);

        let mut grads = GradStore::zeros_like(&pool);
        let (_, cache) = ffn.forward(&pool, &x);
        let dx = ffn.backward(&pool, &cache, &probe, &mut grads);

        let ids: Vec<_> = pool.ids().collect();
        let loss = |p: &ParamPool| (ffn.forward(p, &x).0 * &probe).sum();
        let worst = gradcheck::check_params(&mut pool, &grads, &ids, loss);
        assert!(worst < 1e-5, "param rel err {worst}");

        let mut x_var = x.clone();
        let worst = gradcheck::check_input(&mut x_var, &dx, |xv| {
            (ffn.forward(&pool, xv).0 * &probe).sum()
        });
        assert!(worst < 1e-5, "input rel err {worst}");
    }
}
