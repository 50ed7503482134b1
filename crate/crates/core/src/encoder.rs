//! Trainable transformer text encoder producing one vector per news item.
//!
//! Tokens pass through learned token + position embeddings, a stack of
//! post-norm transformer layers, a linear projection to the news-vector
//! width, and additive-attention pooling over non-padding positions.
//! Padding never influences valid positions, so the encoder gathers the
//! valid positions up front and runs compact sequences; reported pooling
//! weights are scattered back to full length with zeros on padding.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::nn::{
    AdditiveAttention, AdditiveCache, Embedding, FeedForward, FfnCache, GradStore, LayerNorm,
    LayerNormCache, Linear, MultiHeadSelfAttention, NnError, ParamPool, SelfAttnCache,
};
use crate::tokenizer::TokenizedNews;

/// Architecture hyperparameters of the text encoder.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Size of the learned position table; encoded sequences must not be
    /// longer than this.
    pub max_position: usize,
    /// Width of the projected news vector.
    pub d_news: usize,
    /// Hidden width of the pooling attention.
    pub attn_hidden: usize,
}

/// One post-norm transformer layer.
#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    attn: MultiHeadSelfAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

struct EncoderLayerCache {
    attn: SelfAttnCache,
    ln1: LayerNormCache,
    ffn: FfnCache,
    ln2: LayerNormCache,
}

impl EncoderLayer {
    fn new<R: Rng>(pool: &mut ParamPool, scope: &str, config: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            attn: MultiHeadSelfAttention::new(
                pool,
                &format!("{scope}.attn"),
                config.d_model,
                config.n_heads,
                rng,
            ),
            ln1: LayerNorm::new(pool, &format!("{scope}.ln1"), config.d_model),
            ffn: FeedForward::new(
                pool,
                &format!("{scope}.ffn"),
                config.d_model,
                config.d_ff,
                rng,
            ),
            ln2: LayerNorm::new(pool, &format!("{scope}.ln2"), config.d_model),
        }
    }

    fn forward(&self, pool: &ParamPool, x: &Array2<f64>) -> (Array2<f64>, EncoderLayerCache) {
        let (a, attn_cache) = self.attn.forward(pool, x);
        let (h, ln1_cache) = self.ln1.forward(pool, &(x + &a));
        let (f, ffn_cache) = self.ffn.forward(pool, &h);
        let (y, ln2_cache) = self.ln2.forward(pool, &(&h + &f));
        (y, EncoderLayerCache { attn: attn_cache, ln1: ln1_cache, ffn: ffn_cache, ln2: ln2_cache })
    }

    fn backward(
        &self,
        pool: &ParamPool,
        cache: &EncoderLayerCache,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let dr2 = self.ln2.backward(pool, &cache.ln2, dy, grads);
        let dh = &dr2 + &self.ffn.backward(pool, &cache.ffn, &dr2, grads);
        let dr1 = self.ln1.backward(pool, &cache.ln1, &dh, grads);
        &dr1 + &self.attn.backward(pool, &cache.attn, &dr1, grads)
    }
}

/// The full text encoder. Parameter names start with `plm.` for the
/// transformer trunk and `head.news.` for the projection and pooling head.
pub struct TextEncoder {
    pub config: EncoderConfig,
    tok_emb: Embedding,
    pos_emb: Embedding,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
    proj: Linear,
    pooling: AdditiveAttention,
}

/// Forward state for one encoded news item.
pub struct NewsEncodeCache {
    token_rows: Vec<usize>,
    position_rows: Vec<usize>,
    emb_ln: LayerNormCache,
    layer_caches: Vec<EncoderLayerCache>,
    hidden: Array2<f64>,
    pool_cache: AdditiveCache,
    /// Pooling weights over the full (padded) sequence; zero on padding.
    pub attention_weights: Array1<f64>,
    pub news_vector: Array1<f64>,
}

impl TextEncoder {
    pub fn new<R: Rng>(pool: &mut ParamPool, config: EncoderConfig, rng: &mut R) -> Self {
        let tok_emb = Embedding::new(pool, "plm.tok_emb", config.vocab_size, config.d_model, rng);
        let pos_emb = Embedding::new(pool, "plm.pos_emb", config.max_position, config.d_model, rng);
        let emb_ln = LayerNorm::new(pool, "plm.emb_ln", config.d_model);
        let layers = (0..config.n_layers)
            .map(|i| EncoderLayer::new(pool, &format!("plm.layer{i}"), &config, rng))
            .collect();
        let proj = Linear::new(pool, "head.news.proj", config.d_model, config.d_news, rng);
        let pooling = AdditiveAttention::new(
            pool,
            "head.news.pooling",
            config.d_news,
            config.attn_hidden,
            rng,
        );
        Self { config, tok_emb, pos_emb, emb_ln, layers, proj, pooling }
    }

    /// Encode one tokenized news item. Deterministic: no dropout anywhere.
    pub fn encode(
        &self,
        pool: &ParamPool,
        tokenized: &TokenizedNews,
    ) -> Result<NewsEncodeCache, NnError> {
        let valid: Vec<usize> = tokenized
            .attention_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (m != 0).then_some(i))
            .collect();
        if valid.is_empty() {
            return Err(NnError::AllPositionsMasked);
        }
        if *valid.last().unwrap() >= self.config.max_position {
            return Err(NnError::DimensionMismatch {
                context: "sequence position exceeds the encoder position table",
                expected: self.config.max_position,
                found: *valid.last().unwrap() + 1,
            });
        }
        let token_rows: Vec<usize> = valid
            .iter()
            .map(|&i| tokenized.token_ids[i] as usize)
            .collect();
        if let Some(&bad) = token_rows.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(NnError::DimensionMismatch {
                context: "token id exceeds the encoder vocabulary",
                expected: self.config.vocab_size,
                found: bad + 1,
            });
        }

        let x = self.tok_emb.forward(pool, &token_rows) + self.pos_emb.forward(pool, &valid);
        let (mut hidden, emb_ln) = self.emb_ln.forward(pool, &x);
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(pool, &hidden);
            layer_caches.push(cache);
            hidden = next;
        }
        let projected = self.proj.forward(pool, &hidden);
        let pool_cache = self.pooling.forward(pool, &projected);

        let mut attention_weights = Array1::zeros(tokenized.max_len);
        for (slot, &row) in valid.iter().enumerate() {
            attention_weights[row] = pool_cache.weights[slot];
        }
        Ok(NewsEncodeCache {
            token_rows,
            position_rows: valid,
            emb_ln,
            layer_caches,
            hidden,
            news_vector: pool_cache.pooled.clone(),
            pool_cache,
            attention_weights,
        })
    }

    /// Inference-only encode, discarding the cache.
    pub fn encode_vector(
        &self,
        pool: &ParamPool,
        tokenized: &TokenizedNews,
    ) -> Result<Array1<f64>, NnError> {
        Ok(self.encode(pool, tokenized)?.news_vector)
    }

    /// Backpropagate a gradient w.r.t. the news vector into the parameter
    /// store.
    pub fn backward(
        &self,
        pool: &ParamPool,
        cache: &NewsEncodeCache,
        d_news_vector: &Array1<f64>,
        grads: &mut GradStore,
    ) {
        let dprojected = self.pooling.backward(pool, &cache.pool_cache, d_news_vector, grads);
        let mut dhidden = self.proj.backward(pool, &cache.hidden, &dprojected, grads);
        for (layer, layer_cache) in self.layers.iter().zip(&cache.layer_caches).rev() {
            dhidden = layer.backward(pool, layer_cache, &dhidden, grads);
        }
        let dx = self.emb_ln.backward(pool, &cache.emb_ln, &dhidden, grads);
        self.tok_emb.backward(&cache.token_rows, &dx, grads);
        self.pos_emb.backward(&cache.position_rows, &dx, grads);
    }

    /// Backward pass that stops after the projection and pooling head,
    /// leaving the transformer trunk untouched; used by the frozen-trunk
    /// training mode.
    pub fn backward_head_only(
        &self,
        pool: &ParamPool,
        cache: &NewsEncodeCache,
        d_news_vector: &Array1<f64>,
        grads: &mut GradStore,
    ) {
        let dprojected = self.pooling.backward(pool, &cache.pool_cache, d_news_vector, grads);
        let _ = self.proj.backward(pool, &cache.hidden, &dprojected, grads);
    }

    /// Projected per-token states for one cache; test hook for the
    /// single-position pooling contract.
    pub fn projected_states(&self, pool: &ParamPool, cache: &NewsEncodeCache) -> Array2<f64> {
        self.proj.forward(pool, &cache.hidden)
    }
}
