//! User-encoder strategies.
//!
//! The three variants turn a history of news vectors (plus, for the
//! personalized variant, a user id embedding) into one user vector. They
//! share the [`UserEncoder`] trait and are built through a name-keyed
//! registry so the active variant is a runtime choice.
//!
//! * `naml`: additive attention pooling over the history.
//! * `nrms`: multi-head self-attention over the history (no positional
//!   encoding, so pooling is permutation invariant), then additive
//!   attention.
//! * `npa`: additive attention whose query is a learned transform of a
//!   per-user embedding; unknown users share a fallback embedding row.
//!
//! Every variant returns a learned cold-start vector for an empty history.

use ndarray::{Array1, Array2};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::{
    AdditiveAttention, AdditiveCache, Embedding, GradStore, MultiHeadSelfAttention, ParamPool,
    PersonalizedAttention, PersonalizedCache, SelfAttnCache,
};

/// Architecture selector for the user encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Naml,
    Nrms,
    Npa,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::Naml => "naml",
            Arch::Nrms => "nrms",
            Arch::Npa => "npa",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        registry()
            .iter()
            .find(|e| e.name == s)
            .map(|e| e.arch)
            .ok_or_else(|| {
                let known: Vec<&str> = registry().iter().map(|e| e.name).collect();
                format!("unknown user encoder {s:?}; expected one of {}", known.join(", "))
            })
    }
}

/// Dimensions shared by all user-encoder strategies.
#[derive(Debug, Clone, Copy)]
pub struct UserEncoderConfig {
    pub d_news: usize,
    pub attn_hidden: usize,
    /// Self-attention heads (`nrms` only). Must divide `d_news`.
    pub n_heads: usize,
    /// User-embedding width (`npa` only).
    pub user_dim: usize,
    /// User-embedding rows including the shared fallback at index 0
    /// (`npa` only).
    pub n_users: usize,
}

/// One forward pass through a user encoder, able to backpropagate itself.
pub trait UserPass: Send {
    fn user_vector(&self) -> &Array1<f64>;

    /// Final pooling weights over history positions; `None` for the
    /// cold-start path.
    fn attention_weights(&self) -> Option<&Array1<f64>>;

    /// Accumulate parameter gradients and return the gradient w.r.t. the
    /// history matrix (`[n, d_news]`, empty for cold start).
    fn backward(
        &self,
        params: &ParamPool,
        d_user: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64>;
}

/// A user-encoder strategy. `history` rows are news vectors, most recent
/// last; `user_slot` indexes the user-embedding table (0 = fallback) and is
/// ignored by non-personalized variants.
pub trait UserEncoder: Send + Sync {
    fn arch(&self) -> Arch;

    fn encode(
        &self,
        params: &ParamPool,
        history: &Array2<f64>,
        user_slot: usize,
    ) -> Box<dyn UserPass>;
}

/// Registry entry tying a name to a constructor.
pub struct ArchEntry {
    pub arch: Arch,
    pub name: &'static str,
    pub summary: &'static str,
    pub build: fn(&mut ParamPool, &UserEncoderConfig, &mut dyn RngCore) -> Box<dyn UserEncoder>,
}

/// All registered user-encoder strategies.
pub fn registry() -> &'static [ArchEntry] {
    &[
        ArchEntry {
            arch: Arch::Naml,
            name: "naml",
            summary: "additive attention over history news vectors",
            build: |pool, cfg, rng| Box::new(NamlEncoder::new(pool, cfg, rng)),
        },
        ArchEntry {
            arch: Arch::Nrms,
            name: "nrms",
            summary: "multi-head self-attention over history, then additive attention",
            build: |pool, cfg, rng| Box::new(NrmsEncoder::new(pool, cfg, rng)),
        },
        ArchEntry {
            arch: Arch::Npa,
            name: "npa",
            summary: "personalized attention with a query from the user-id embedding",
            build: |pool, cfg, rng| Box::new(NpaEncoder::new(pool, cfg, rng)),
        },
    ]
}

/// Instantiate the strategy registered under `arch`, allocating its
/// parameters in `pool`.
pub fn build_user_encoder(
    arch: Arch,
    pool: &mut ParamPool,
    config: &UserEncoderConfig,
    rng: &mut dyn RngCore,
) -> Box<dyn UserEncoder> {
    let entry = registry()
        .iter()
        .find(|e| e.arch == arch)
        .expect("every Arch value is registered");
    (entry.build)(pool, config, rng)
}

fn cold_start_param(pool: &mut ParamPool, d_news: usize) -> crate::nn::ParamId {
    pool.add("head.user.cold_start", crate::nn::zeros1(d_news))
}

struct ColdStartPass {
    vector: Array1<f64>,
    param: crate::nn::ParamId,
    d_news: usize,
}

impl UserPass for ColdStartPass {
    fn user_vector(&self) -> &Array1<f64> {
        &self.vector
    }

    fn attention_weights(&self) -> Option<&Array1<f64>> {
        None
    }

    fn backward(
        &self,
        _params: &ParamPool,
        d_user: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        grads.add1(self.param, d_user.view());
        Array2::zeros((0, self.d_news))
    }
}

// --- naml ---

struct NamlEncoder {
    pooling: AdditiveAttention,
    cold_start: crate::nn::ParamId,
    d_news: usize,
}

impl NamlEncoder {
    fn new(pool: &mut ParamPool, cfg: &UserEncoderConfig, rng: &mut dyn RngCore) -> Self {
        Self {
            pooling: AdditiveAttention::new(
                pool,
                "head.user.pooling",
                cfg.d_news,
                cfg.attn_hidden,
                &mut &mut *rng,
            ),
            cold_start: cold_start_param(pool, cfg.d_news),
            d_news: cfg.d_news,
        }
    }
}

struct NamlPass {
    cache: AdditiveCache,
    pooling: AdditiveAttention,
}

impl UserEncoder for NamlEncoder {
    fn arch(&self) -> Arch {
        Arch::Naml
    }

    fn encode(
        &self,
        params: &ParamPool,
        history: &Array2<f64>,
        _user_slot: usize,
    ) -> Box<dyn UserPass> {
        if history.nrows() == 0 {
            return Box::new(ColdStartPass {
                vector: params.as1(self.cold_start).to_owned(),
                param: self.cold_start,
                d_news: self.d_news,
            });
        }
        let cache = self.pooling.forward(params, history);
        Box::new(NamlPass { cache, pooling: self.pooling })
    }
}

impl UserPass for NamlPass {
    fn user_vector(&self) -> &Array1<f64> {
        &self.cache.pooled
    }

    fn attention_weights(&self) -> Option<&Array1<f64>> {
        Some(&self.cache.weights)
    }

    fn backward(
        &self,
        params: &ParamPool,
        d_user: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        self.pooling.backward(params, &self.cache, d_user, grads)
    }
}

// --- nrms ---

struct NrmsEncoder {
    self_attn: MultiHeadSelfAttention,
    pooling: AdditiveAttention,
    cold_start: crate::nn::ParamId,
    d_news: usize,
}

impl NrmsEncoder {
    fn new(pool: &mut ParamPool, cfg: &UserEncoderConfig, rng: &mut dyn RngCore) -> Self {
        Self {
            self_attn: MultiHeadSelfAttention::new(
                pool,
                "head.user.self_attn",
                cfg.d_news,
                cfg.n_heads,
                &mut &mut *rng,
            ),
            pooling: AdditiveAttention::new(
                pool,
                "head.user.pooling",
                cfg.d_news,
                cfg.attn_hidden,
                &mut &mut *rng,
            ),
            cold_start: cold_start_param(pool, cfg.d_news),
            d_news: cfg.d_news,
        }
    }
}

struct NrmsPass {
    attn_cache: SelfAttnCache,
    pool_cache: AdditiveCache,
    self_attn: MultiHeadSelfAttention,
    pooling: AdditiveAttention,
}

impl UserEncoder for NrmsEncoder {
    fn arch(&self) -> Arch {
        Arch::Nrms
    }

    fn encode(
        &self,
        params: &ParamPool,
        history: &Array2<f64>,
        _user_slot: usize,
    ) -> Box<dyn UserPass> {
        if history.nrows() == 0 {
            return Box::new(ColdStartPass {
                vector: params.as1(self.cold_start).to_owned(),
                param: self.cold_start,
                d_news: self.d_news,
            });
        }
        let (mixed, attn_cache) = self.self_attn.forward(params, history);
        let pool_cache = self.pooling.forward(params, &mixed);
        Box::new(NrmsPass {
            attn_cache,
            pool_cache,
            self_attn: self.self_attn,
            pooling: self.pooling,
        })
    }
}

impl UserPass for NrmsPass {
    fn user_vector(&self) -> &Array1<f64> {
        &self.pool_cache.pooled
    }

    fn attention_weights(&self) -> Option<&Array1<f64>> {
        Some(&self.pool_cache.weights)
    }

    fn backward(
        &self,
        params: &ParamPool,
        d_user: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let dmixed = self.pooling.backward(params, &self.pool_cache, d_user, grads);
        self.self_attn.backward(params, &self.attn_cache, &dmixed, grads)
    }
}

// --- npa ---

struct NpaEncoder {
    user_emb: Embedding,
    attention: PersonalizedAttention,
    cold_start: crate::nn::ParamId,
    d_news: usize,
}

impl NpaEncoder {
    fn new(pool: &mut ParamPool, cfg: &UserEncoderConfig, rng: &mut dyn RngCore) -> Self {
        Self {
            user_emb: Embedding::new(
                pool,
                "head.user.embedding",
                cfg.n_users.max(1),
                cfg.user_dim,
                &mut &mut *rng,
            ),
            attention: PersonalizedAttention::new(
                pool,
                "head.user.personalized",
                cfg.d_news,
                cfg.attn_hidden,
                cfg.user_dim,
                &mut &mut *rng,
            ),
            cold_start: cold_start_param(pool, cfg.d_news),
            d_news: cfg.d_news,
        }
    }
}

struct NpaPass {
    cache: PersonalizedCache,
    user_slot: usize,
    user_emb: Embedding,
    attention: PersonalizedAttention,
}

impl UserEncoder for NpaEncoder {
    fn arch(&self) -> Arch {
        Arch::Npa
    }

    fn encode(
        &self,
        params: &ParamPool,
        history: &Array2<f64>,
        user_slot: usize,
    ) -> Box<dyn UserPass> {
        if history.nrows() == 0 {
            return Box::new(ColdStartPass {
                vector: params.as1(self.cold_start).to_owned(),
                param: self.cold_start,
                d_news: self.d_news,
            });
        }
        let table = params.as2(self.user_emb.table);
        let slot = if user_slot < table.nrows() { user_slot } else { 0 };
        let emb = table.row(slot).to_owned();
        let cache = self.attention.forward(params, history, &emb);
        Box::new(NpaPass {
            cache,
            user_slot: slot,
            user_emb: self.user_emb,
            attention: self.attention,
        })
    }
}

impl UserPass for NpaPass {
    fn user_vector(&self) -> &Array1<f64> {
        &self.cache.pooled
    }

    fn attention_weights(&self) -> Option<&Array1<f64>> {
        Some(&self.cache.weights)
    }

    fn backward(
        &self,
        params: &ParamPool,
        d_user: &Array1<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        let (dh, demb) = self.attention.backward(params, &self.cache, d_user, grads);
        let demb_rows = demb.insert_axis(ndarray::Axis(0));
        self.user_emb.backward(&[self.user_slot], &demb_rows, grads);
        dh
    }
}
