//! Recommender assembly: configuration, news/user encoding, similarity
//! scoring, and checkpoint serialization.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::CompositionMode;
use crate::describe::DescriptionCache;
use crate::encoder::{EncoderConfig, NewsEncodeCache, TextEncoder};
use crate::mind::Impression;
use crate::nn::{GradStore, NnError, ParamPool};
use crate::tokenizer::{Tokenizer, WordPieceTokenizer, WordTokenizer, MIN_MAX_LEN};
use crate::user::{build_user_encoder, Arch, UserEncoder, UserEncoderConfig, UserPass};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown text encoder {0:?}; expected toy, distilbert-base, or bert-base")]
    UnknownPlm(String),
    #[error("history of {len} items exceeds the configured maximum of {max}; truncate before encoding")]
    HistoryTooLong { len: usize, max: usize },
    #[error("score requires equal dimensions, got {left} and {right}")]
    ScoreDimMismatch { left: usize, right: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
}

/// Architecture choice plus every training hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Text encoder identifier; see [`resolve_plm`].
    pub plm_name: String,
    /// News/user vector width.
    pub d_news: usize,
    /// Hidden width of every additive-attention block.
    pub attn_hidden: usize,
    /// Self-attention heads in the `nrms` user encoder.
    pub n_heads: usize,
    /// User-embedding width for `npa`.
    pub user_dim: usize,
    /// Most recent history items kept per user.
    pub history_len: usize,
    /// Negatives sampled per positive during training.
    pub k_negatives: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Token cap for title-only composition.
    pub max_len_title: usize,
    /// Token cap for the two augmented compositions.
    pub max_len_augmented: usize,
    pub mode: CompositionMode,
    pub seed: u64,
    /// Worker shards for data-parallel gradient computation. Results are
    /// deterministic for a fixed value; 1 reproduces the serial order.
    pub workers: usize,
    /// Skip transformer-trunk updates (heads still train). Faster, but a
    /// departure from end-to-end fine-tuning; off by default.
    pub frozen_plm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Naml,
            plm_name: "toy".to_string(),
            d_news: 256,
            attn_hidden: 200,
            n_heads: 8,
            user_dim: 50,
            history_len: 50,
            k_negatives: 4,
            lr: 1e-4,
            batch_size: 128,
            epochs: 3,
            max_len_title: 96,
            max_len_augmented: 160,
            mode: CompositionMode::TitleOnly,
            seed: 42,
            workers: 1,
            frozen_plm: false,
        }
    }
}

impl ModelConfig {
    pub fn effective_max_len(&self) -> usize {
        if self.mode.is_augmented() {
            self.max_len_augmented
        } else {
            self.max_len_title
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.history_len == 0 {
            return fail("history_len must be at least 1".into());
        }
        if self.k_negatives == 0 {
            return fail("k_negatives must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr must be positive and finite, got {}", self.lr));
        }
        if self.effective_max_len() < MIN_MAX_LEN {
            return fail(format!(
                "max_len {} is below the minimum of {MIN_MAX_LEN}",
                self.effective_max_len()
            ));
        }
        if self.arch == Arch::Nrms && !self.d_news.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_news {} must be divisible by n_heads {} for nrms",
                self.d_news, self.n_heads
            ));
        }
        if self.d_news == 0 || self.attn_hidden == 0 || self.user_dim == 0 {
            return fail("model dimensions must be positive".into());
        }
        resolve_plm(&self.plm_name)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlmFamily {
    /// Small trainable encoder with a corpus-built word vocabulary.
    Toy,
    /// BERT-shaped encoder expecting a WordPiece `vocab.txt`.
    BertLike,
}

/// Shape preset for a text-encoder identifier.
#[derive(Debug, Clone)]
pub struct PlmSpec {
    pub name: String,
    pub family: PlmFamily,
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Vocabulary size fixed by the pretrained tokenizer, when applicable.
    pub fixed_vocab: Option<usize>,
    pub max_position: usize,
}

pub fn resolve_plm(name: &str) -> Result<PlmSpec, ModelError> {
    match name {
        "toy" => Ok(PlmSpec {
            name: name.into(),
            family: PlmFamily::Toy,
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            fixed_vocab: None,
            max_position: 512,
        }),
        "distilbert-base" => Ok(PlmSpec {
            name: name.into(),
            family: PlmFamily::BertLike,
            n_layers: 6,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            fixed_vocab: Some(30_522),
            max_position: 512,
        }),
        "bert-base" => Ok(PlmSpec {
            name: name.into(),
            family: PlmFamily::BertLike,
            n_layers: 12,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            fixed_vocab: Some(30_522),
            max_position: 512,
        }),
        other => Err(ModelError::UnknownPlm(other.to_string())),
    }
}

/// Encoder dimensions for a resolved spec and tokenizer vocabulary.
pub fn encoder_config(spec: &PlmSpec, vocab_size: usize, config: &ModelConfig) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        d_model: spec.d_model,
        n_layers: spec.n_layers,
        n_heads: spec.n_heads,
        d_ff: spec.d_ff,
        max_position: spec.max_position.max(config.effective_max_len()),
        d_news: config.d_news,
        attn_hidden: config.attn_hidden,
    }
}

/// Users seen in training, each assigned a stable slot; slot 0 is the
/// shared fallback for unknown users.
#[derive(Debug, Clone, Default)]
pub struct UserVocab {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl UserVocab {
    pub fn from_impressions(impressions: &[Impression]) -> Self {
        let mut vocab = Self::default();
        for imp in impressions {
            if !vocab.index.contains_key(&imp.user_id) {
                vocab.index.insert(imp.user_id.clone(), vocab.ids.len() + 1);
                vocab.ids.push(imp.user_id.clone());
            }
        }
        vocab
    }

    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect();
        Self { ids, index }
    }

    /// Embedding slot for a user id; 0 for users unseen in training.
    pub fn slot(&self, user_id: &str) -> usize {
        self.index.get(user_id).copied().unwrap_or(0)
    }

    /// Embedding rows needed, including the fallback row.
    pub fn n_slots(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Dot-product similarity; higher means more likely click.
pub fn score(user: &Array1<f64>, news: &Array1<f64>) -> Result<f64, ModelError> {
    if user.len() != news.len() {
        return Err(ModelError::ScoreDimMismatch { left: user.len(), right: news.len() });
    }
    Ok(user.dot(news))
}

/// The full model: text encoder plus one user-encoder strategy, sharing a
/// parameter pool.
pub struct Recommender {
    pub config: ModelConfig,
    pub params: ParamPool,
    pub encoder: TextEncoder,
    pub user_encoder: Box<dyn UserEncoder>,
    pub user_vocab: UserVocab,
}

impl Recommender {
    /// Build a freshly initialized model. Initialization order is fixed, so
    /// equal seeds give bitwise-equal parameters.
    pub fn new(
        config: ModelConfig,
        encoder_config: EncoderConfig,
        user_vocab: UserVocab,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut params = ParamPool::new();
        let encoder = TextEncoder::new(&mut params, encoder_config, &mut rng);
        let user_encoder = build_user_encoder(
            config.arch,
            &mut params,
            &UserEncoderConfig {
                d_news: config.d_news,
                attn_hidden: config.attn_hidden,
                n_heads: config.n_heads,
                user_dim: config.user_dim,
                n_users: user_vocab.n_slots(),
            },
            &mut rng,
        );
        Ok(Self { config, params, encoder, user_encoder, user_vocab })
    }

    pub fn encode_news(
        &self,
        tokenized: &crate::tokenizer::TokenizedNews,
    ) -> Result<NewsEncodeCache, ModelError> {
        if tokenized.max_len != self.config.effective_max_len() {
            return Err(ModelError::Config(format!(
                "tokenized max_len {} does not match the configured max_len {}",
                tokenized.max_len,
                self.config.effective_max_len()
            )));
        }
        Ok(self.encoder.encode(&self.params, tokenized)?)
    }

    pub fn encode_news_vector(
        &self,
        tokenized: &crate::tokenizer::TokenizedNews,
    ) -> Result<Array1<f64>, ModelError> {
        Ok(self.encode_news(tokenized)?.news_vector)
    }

    /// Encode a user from history news vectors (rows, most recent last).
    /// The caller truncates history to `history_len` beforehand; a longer
    /// history is a contract violation.
    pub fn encode_user(
        &self,
        history: &Array2<f64>,
        user_id: &str,
    ) -> Result<Box<dyn UserPass>, ModelError> {
        if history.nrows() > self.config.history_len {
            return Err(ModelError::HistoryTooLong {
                len: history.nrows(),
                max: self.config.history_len,
            });
        }
        let slot = self.user_vocab.slot(user_id);
        Ok(self.user_encoder.encode(&self.params, history, slot))
    }

    pub fn grads(&self) -> GradStore {
        GradStore::zeros_like(&self.params)
    }
}

// --- checkpointing ---

pub const CHECKPOINT_SCHEMA: &str = "newsrec-checkpoint/1";
const PLM_TENSORS: &str = "plm.safetensors";
const HEAD_TENSORS: &str = "heads.safetensors";

/// Tokenizer description stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: String,
    pub name: String,
    pub vocab: Vec<String>,
}

impl TokenizerSpec {
    pub fn of(tokenizer: &dyn Tokenizer, vocab: Vec<String>) -> Self {
        let kind = if tokenizer.name() == "word" { "word" } else { "wordpiece" };
        Self { kind: kind.to_string(), name: tokenizer.name().to_string(), vocab }
    }

    pub fn build(&self) -> Result<Box<dyn Tokenizer>, ModelError> {
        match self.kind.as_str() {
            "word" => Ok(Box::new(WordTokenizer::from_vocab(self.vocab.clone()))),
            "wordpiece" => WordPieceTokenizer::from_vocab(self.vocab.clone(), self.name.clone())
                .map(|t| Box::new(t) as Box<dyn Tokenizer>)
                .map_err(ModelError::Config),
            other => Err(ModelError::Config(format!("unknown tokenizer kind {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointSidecar {
    schema: String,
    model: ModelConfig,
    encoder: EncoderConfig,
    tokenizer_kind: String,
    tokenizer_name: String,
    n_users: usize,
}

fn ck_err(path: &Path, reason: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint { path: path.to_path_buf(), reason: reason.to_string() }
}

fn write_tensor_file(
    path: &Path,
    pool: &ParamPool,
    select: impl Fn(&str) -> bool,
) -> Result<(), ModelError> {
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for id in pool.ids() {
        let name = pool.name(id);
        if !select(name) {
            continue;
        }
        let value = pool.value(id);
        let mut bytes = Vec::with_capacity(value.len() * 8);
        for &x in value.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        buffers.push((name.to_string(), value.shape().to_vec(), bytes));
    }
    let views: Vec<(&str, safetensors::tensor::TensorView)> = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            let view =
                safetensors::tensor::TensorView::new(safetensors::Dtype::F64, shape.clone(), bytes)
                    .expect("tensor view is consistent");
            (name.as_str(), view)
        })
        .collect();
    let blob = safetensors::serialize(views, &None).map_err(|e| ck_err(path, e))?;
    std::fs::write(path, blob).map_err(|e| ck_err(path, e))
}

fn load_tensor_file(path: &Path, pool: &mut ParamPool) -> Result<usize, ModelError> {
    let blob = std::fs::read(path).map_err(|e| ck_err(path, e))?;
    let tensors = safetensors::SafeTensors::deserialize(&blob).map_err(|e| ck_err(path, e))?;
    let mut loaded = 0;
    for (name, view) in tensors.tensors() {
        let id = pool
            .find(&name)
            .ok_or_else(|| ck_err(path, format!("unexpected tensor {name}")))?;
        if view.shape() != pool.value(id).shape() {
            return Err(ck_err(
                path,
                format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    view.shape(),
                    pool.value(id).shape()
                ),
            ));
        }
        if view.dtype() != safetensors::Dtype::F64 {
            return Err(ck_err(path, format!("tensor {name} is not f64")));
        }
        let data = view.data();
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let shaped = ArrayD::from_shape_vec(pool.value(id).raw_dim(), values)
            .map_err(|e| ck_err(path, e))?;
        *pool.value_mut(id) = shaped;
        loaded += 1;
    }
    Ok(loaded)
}

/// Write a checkpoint directory: transformer trunk and head tensors in
/// safetensors files, a JSON sidecar with the full configuration, the
/// tokenizer vocabulary, the user vocabulary, and (for generated mode) the
/// description cache the model was trained with.
pub fn save_checkpoint(
    dir: &Path,
    model: &Recommender,
    tokenizer_spec: &TokenizerSpec,
    descriptions: Option<&DescriptionCache>,
) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| ck_err(dir, e))?;
    let sidecar = CheckpointSidecar {
        schema: CHECKPOINT_SCHEMA.to_string(),
        model: model.config.clone(),
        encoder: model.encoder.config.clone(),
        tokenizer_kind: tokenizer_spec.kind.clone(),
        tokenizer_name: tokenizer_spec.name.clone(),
        n_users: model.user_vocab.ids().len(),
    };
    let config_path = dir.join("config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
    )
    .map_err(|e| ck_err(&config_path, e))?;

    write_tensor_file(&dir.join(PLM_TENSORS), &model.params, |n| n.starts_with("plm."))?;
    write_tensor_file(&dir.join(HEAD_TENSORS), &model.params, |n| !n.starts_with("plm."))?;

    let tok_path = dir.join("tokenizer.json");
    std::fs::write(
        &tok_path,
        serde_json::to_string(tokenizer_spec).expect("tokenizer spec serializes"),
    )
    .map_err(|e| ck_err(&tok_path, e))?;

    let users_path = dir.join("users.json");
    std::fs::write(
        &users_path,
        serde_json::to_string(model.user_vocab.ids()).expect("user ids serialize"),
    )
    .map_err(|e| ck_err(&users_path, e))?;

    if let Some(cache) = descriptions {
        let map: std::collections::BTreeMap<&str, &crate::describe::CategoryDescription> =
            cache.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let desc_path = dir.join("descriptions.json");
        std::fs::write(
            &desc_path,
            serde_json::to_string_pretty(&map).expect("descriptions serialize"),
        )
        .map_err(|e| ck_err(&desc_path, e))?;
    }
    Ok(())
}

/// Model, tokenizer, and optional embedded description cache.
pub type LoadedCheckpoint = (Recommender, Box<dyn Tokenizer>, Option<DescriptionCache>);

/// Load a checkpoint directory written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint, ModelError> {
    let config_path = dir.join("config.json");
    let raw = std::fs::read_to_string(&config_path).map_err(|e| ck_err(&config_path, e))?;
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&raw).map_err(|e| ck_err(&config_path, e))?;
    if sidecar.schema != CHECKPOINT_SCHEMA {
        return Err(ck_err(
            &config_path,
            format!("unsupported schema {:?}", sidecar.schema),
        ));
    }

    let tok_path = dir.join("tokenizer.json");
    let raw = std::fs::read_to_string(&tok_path).map_err(|e| ck_err(&tok_path, e))?;
    let tokenizer_spec: TokenizerSpec =
        serde_json::from_str(&raw).map_err(|e| ck_err(&tok_path, e))?;
    let tokenizer = tokenizer_spec.build()?;

    let users_path = dir.join("users.json");
    let raw = std::fs::read_to_string(&users_path).map_err(|e| ck_err(&users_path, e))?;
    let user_ids: Vec<String> = serde_json::from_str(&raw).map_err(|e| ck_err(&users_path, e))?;
    let user_vocab = UserVocab::from_ids(user_ids);

    let mut model = Recommender::new(sidecar.model, sidecar.encoder, user_vocab)?;
    let loaded = load_tensor_file(&dir.join(PLM_TENSORS), &mut model.params)?
        + load_tensor_file(&dir.join(HEAD_TENSORS), &mut model.params)?;
    if loaded != model.params.len() {
        return Err(ck_err(
            dir,
            format!("checkpoint holds {loaded} tensors, model needs {}", model.params.len()),
        ));
    }

    let desc_path = dir.join("descriptions.json");
    let descriptions = if desc_path.exists() {
        Some(DescriptionCache::open(&desc_path).map_err(|e| ck_err(&desc_path, e))?)
    } else {
        None
    };
    Ok((model, tokenizer, descriptions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn score_matches_hand_computations() {
        assert_eq!(score(&array![1.0, 0.0], &array![0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score(&array![1.0, 1.0], &array![1.0, 1.0]).unwrap(), 2.0);
        let s = score(&array![0.5, -2.0, 3.0], &array![4.0, 0.25, 1.0]).unwrap();
        assert!((s - 4.5).abs() < 1e-12);
        assert!(matches!(
            score(&array![1.0], &array![1.0, 2.0]),
            Err(ModelError::ScoreDimMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn score_is_symmetric() {
        let u = array![0.3, -1.7, 2.2, 0.0];
        let v = array![-0.4, 0.9, 1.1, 5.0];
        assert_eq!(score(&u, &v).unwrap(), score(&v, &u).unwrap());
    }

    #[test]
    fn default_config_is_valid_and_degenerate_values_are_not() {
        let config = ModelConfig::default();
        config.validate().unwrap();

        let broken = ModelConfig { epochs: 0, ..config.clone() };
        assert!(broken.validate().is_err());
        let broken = ModelConfig { k_negatives: 0, ..config.clone() };
        assert!(broken.validate().is_err());
        let broken = ModelConfig { arch: Arch::Nrms, d_news: 250, n_heads: 8, ..config.clone() };
        assert!(broken.validate().is_err());
        let fine = ModelConfig { arch: Arch::Nrms, d_news: 256, n_heads: 8, ..config };
        fine.validate().unwrap();
    }

    #[test]
    fn max_len_follows_mode() {
        let config = ModelConfig { mode: CompositionMode::TitleOnly, ..Default::default() };
        assert_eq!(config.effective_max_len(), 96);
        let config = ModelConfig { mode: CompositionMode::TitleGenerated, ..Default::default() };
        assert_eq!(config.effective_max_len(), 160);
    }

    #[test]
    fn plm_presets_resolve() {
        assert_eq!(resolve_plm("toy").unwrap().n_layers, 2);
        let d = resolve_plm("distilbert-base").unwrap();
        assert_eq!((d.n_layers, d.d_model, d.fixed_vocab), (6, 768, Some(30_522)));
        let b = resolve_plm("bert-base").unwrap();
        assert_eq!((b.n_layers, b.d_model), (12, 768));
        assert!(matches!(resolve_plm("gpt-17"), Err(ModelError::UnknownPlm(_))));
    }

    #[test]
    fn user_vocab_slots_are_stable_with_fallback_zero() {
        use crate::mind::Candidate;
        let imp = |user: &str| Impression {
            impression_id: "1".into(),
            user_id: user.into(),
            time_raw: String::new(),
            timestamp: None,
            history: vec![],
            candidates: vec![Candidate { news_id: "N1".into(), clicked: true }],
        };
        let vocab = UserVocab::from_impressions(&[imp("U7"), imp("U3"), imp("U7")]);
        assert_eq!(vocab.slot("U7"), 1);
        assert_eq!(vocab.slot("U3"), 2);
        assert_eq!(vocab.slot("U999"), 0);
        assert_eq!(vocab.n_slots(), 3);
    }

    fn tiny_model(seed: u64) -> (Recommender, crate::tokenizer::WordTokenizer) {
        let tokenizer = crate::tokenizer::WordTokenizer::build_from_texts([
            "alpha beta gamma delta",
            "epsilon zeta",
        ]);
        let config = ModelConfig {
            d_news: 6,
            attn_hidden: 5,
            n_heads: 2,
            user_dim: 4,
            max_len_title: 8,
            seed,
            arch: Arch::Npa,
            ..Default::default()
        };
        let enc_cfg = EncoderConfig {
            vocab_size: tokenizer.vocab_size(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_position: 8,
            d_news: config.d_news,
            attn_hidden: config.attn_hidden,
        };
        let vocab = UserVocab::from_ids(vec!["U1".into(), "U2".into()]);
        let model = Recommender::new(config, enc_cfg, vocab).unwrap();
        (model, tokenizer)
    }

    #[test]
    fn equal_seeds_give_equal_parameters() {
        let (a, _) = tiny_model(9);
        let (b, _) = tiny_model(9);
        let (c, _) = tiny_model(10);
        for id in a.params.ids() {
            assert_eq!(a.params.value(id), b.params.value(id));
        }
        let differs = a
            .params
            .ids()
            .any(|id| a.params.value(id) != c.params.value(id));
        assert!(differs);
    }

    #[test]
    fn history_longer_than_limit_is_a_contract_violation() {
        let (model, _) = tiny_model(1);
        let history = Array2::zeros((model.config.history_len + 1, 6));
        assert!(matches!(
            model.encode_user(&history, "U1"),
            Err(ModelError::HistoryTooLong { .. })
        ));
    }

    #[test]
    fn tokenized_max_len_mismatch_is_rejected() {
        let (model, tokenizer) = tiny_model(2);
        let enc = tokenizer.encode("alpha beta", 16).unwrap();
        assert!(model.encode_news(&enc).is_err());
        let enc = tokenizer.encode("alpha beta", 8).unwrap();
        assert!(model.encode_news(&enc).is_ok());
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let (model, tokenizer) = tiny_model(3);
        let spec = TokenizerSpec::of(&tokenizer, tokenizer.vocab().to_vec());
        save_checkpoint(dir.path(), &model, &spec, None).unwrap();

        let (loaded, loaded_tok, descriptions) = load_checkpoint(dir.path()).unwrap();
        assert!(descriptions.is_none());
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.user_vocab.ids(), model.user_vocab.ids());
        for id in model.params.ids() {
            let other = loaded.params.find(model.params.name(id)).unwrap();
            assert_eq!(model.params.value(id), loaded.params.value(other));
        }

        let enc = loaded_tok.encode("alpha beta gamma", 8).unwrap();
        let original = model.encode_news_vector(&enc).unwrap();
        let reloaded = loaded.encode_news_vector(&enc).unwrap();
        assert_eq!(original, reloaded);
    }

    #[test]
    fn checkpoint_with_descriptions_carries_them() {
        use crate::describe::CategoryDescription;
        use crate::mind::CategoryKey;
        let dir = tempfile::tempdir().unwrap();
        let (model, tokenizer) = tiny_model(4);
        let spec = TokenizerSpec::of(&tokenizer, tokenizer.vocab().to_vec());
        let mut cache = DescriptionCache::in_memory();
        cache.insert(CategoryDescription {
            key: CategoryKey("tv-golden-globes".into()),
            text: "Awards coverage.".into(),
            generator_model: "fixture".into(),
            prompt_fingerprint: "f".into(),
            word_count: 2,
        });
        save_checkpoint(dir.path(), &model, &spec, Some(&cache)).unwrap();
        let (_, _, loaded) = load_checkpoint(dir.path()).unwrap();
        let loaded = loaded.expect("descriptions travel with the checkpoint");
        assert_eq!(
            loaded.get(&CategoryKey("tv-golden-globes".into())).unwrap().text,
            "Awards coverage."
        );
    }
}
