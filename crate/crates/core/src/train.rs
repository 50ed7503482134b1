//! Training: 1-positive / K-negative sample construction, the softmax
//! ranking loss, a decoupled-weight-decay Adam optimizer, and the epoch
//! loop.
//!
//! Gradient work is sharded over `workers` contiguous chunks whose partial
//! results merge in chunk order, so a fixed seed and worker count give
//! bitwise-identical loss curves.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::{compose, tokenize, ComposeError};
use crate::describe::DescriptionCache;
use crate::encoder::NewsEncodeCache;
use crate::mind::{Impression, NewsCatalog};
use crate::model::{
    encoder_config, resolve_plm, ModelConfig, ModelError, PlmFamily, Recommender, TokenizerSpec,
    UserVocab,
};
use crate::nn::{GradStore, NnError, ParamPool};
use crate::tokenizer::{TokenizedNews, Tokenizer, WordPieceTokenizer, WordTokenizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training set is empty after sample construction")]
    EmptyTrainingSet,
    #[error("label index {label} out of range for {len} scores")]
    LabelOutOfRange { label: usize, len: usize },
    #[error("scores contain a non-finite value")]
    NonFiniteScores,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr}); training aborted")]
    NonFiniteLoss { epoch: usize, batch: usize, lr: f64 },
    #[error("{0} requires a WordPiece vocabulary file; pass one via --vocab")]
    MissingVocabFile(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One ranking example: a positive and `k` sampled negatives from the same
/// impression, shuffled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub user_id: String,
    /// Most recent history first truncated to the configured length,
    /// oldest first.
    pub history: Vec<String>,
    /// `k + 1` candidate news ids.
    pub candidates: Vec<String>,
    /// Position of the positive within `candidates`.
    pub label_index: usize,
}

/// Expand one impression into one sample per positive. Negatives are drawn
/// uniformly from the impression's negatives: without replacement when at
/// least `k` are available, with replacement otherwise. Impressions with no
/// negatives yield nothing.
pub fn build_training_samples<R: Rng>(
    impression: &Impression,
    k: usize,
    history_len: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let negatives: Vec<&str> = impression
        .candidates
        .iter()
        .filter(|c| !c.clicked)
        .map(|c| c.news_id.as_str())
        .collect();
    if negatives.is_empty() {
        return Vec::new();
    }
    let start = impression.history.len().saturating_sub(history_len);
    let history: Vec<String> = impression.history[start..].to_vec();

    let mut samples = Vec::new();
    for positive in impression.candidates.iter().filter(|c| c.clicked) {
        let mut slots: Vec<(&str, bool)> = Vec::with_capacity(k + 1);
        slots.push((positive.news_id.as_str(), true));
        if negatives.len() >= k {
            for idx in rand::seq::index::sample(rng, negatives.len(), k) {
                slots.push((negatives[idx], false));
            }
        } else {
            for _ in 0..k {
                slots.push((negatives[rng.gen_range(0..negatives.len())], false));
            }
        }
        slots.shuffle(rng);
        let label_index = slots.iter().position(|(_, pos)| *pos).expect("one positive");
        samples.push(TrainingSample {
            user_id: impression.user_id.clone(),
            history: history.clone(),
            candidates: slots.iter().map(|(id, _)| id.to_string()).collect(),
            label_index,
        });
    }
    samples
}

/// Cross-entropy of softmax(scores) against the positive's index, computed
/// with max-subtraction.
pub fn ranking_softmax_loss(scores: &[f64], label_index: usize) -> Result<f64, TrainError> {
    Ok(ranking_softmax_loss_grad(scores, label_index)?.0)
}

/// Loss plus its gradient w.r.t. the scores.
pub fn ranking_softmax_loss_grad(
    scores: &[f64],
    label_index: usize,
) -> Result<(f64, Vec<f64>), TrainError> {
    if label_index >= scores.len() {
        return Err(TrainError::LabelOutOfRange { label: label_index, len: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(TrainError::NonFiniteScores);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_sum_exp = max + sum_exp.ln();
    let loss = log_sum_exp - scores[label_index];
    let mut grad: Vec<f64> = scores
        .iter()
        .map(|s| (s - log_sum_exp).exp())
        .collect();
    grad[label_index] -= 1.0;
    Ok((loss, grad))
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    skip: Vec<bool>,
}

impl AdamW {
    pub fn new(pool: &ParamPool, lr: f64) -> Self {
        let zeros: Vec<ArrayD<f64>> = pool
            .ids()
            .map(|id| ArrayD::zeros(pool.value(id).raw_dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            t: 0,
            m: zeros.clone(),
            v: zeros,
            skip: vec![false; pool.len()],
        }
    }

    /// Exclude parameters whose name starts with `prefix` from updates.
    pub fn freeze_prefix(&mut self, pool: &ParamPool, prefix: &str) {
        for (i, id) in pool.ids().enumerate() {
            if pool.name(id).starts_with(prefix) {
                self.skip[i] = true;
            }
        }
    }

    pub fn step(&mut self, pool: &mut ParamPool, grads: &GradStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, id) in pool.ids().collect::<Vec<_>>().into_iter().enumerate() {
            if self.skip[i] {
                continue;
            }
            let g = grads.grad(id);
            let g = g.as_slice().expect("gradients are contiguous");
            let m = self.m[i].as_slice_mut().expect("contiguous");
            let v = self.v[i].as_slice_mut().expect("contiguous");
            let theta = pool.value_mut(id).as_slice_mut().expect("contiguous");
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -=
                    self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta[j]);
            }
        }
    }

    pub fn info(&self, grad_clip_norm: f64) -> OptimizerInfo {
        OptimizerInfo {
            name: "adamw".to_string(),
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            grad_clip_norm,
        }
    }
}

/// Optimizer settings echoed into the training report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub samples: usize,
    pub wall_time_s: f64,
    pub seed: u64,
}

/// Summary of a whole run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Ranking samples per epoch (one per usable positive).
    pub sample_count: usize,
    pub epoch_losses: Vec<f64>,
    pub wall_time_s: f64,
    /// Impressions skipped for lack of negatives.
    pub skipped_no_negative: usize,
    /// Impressions skipped because a candidate id is missing from the
    /// catalog.
    pub skipped_unknown_news: usize,
    pub optimizer: OptimizerInfo,
}

/// Everything `fit` needs besides the configuration.
pub struct FitData<'a> {
    pub catalog: &'a NewsCatalog,
    pub impressions: &'a [Impression],
    pub descriptions: &'a DescriptionCache,
    /// WordPiece vocabulary file, required for BERT-family encoders.
    pub wordpiece_vocab: Option<&'a Path>,
}

pub struct TrainOutcome {
    pub model: Recommender,
    pub tokenizer: Box<dyn Tokenizer>,
    pub tokenizer_spec: TokenizerSpec,
    pub report: TrainReport,
}

const GRAD_CLIP_NORM: f64 = 1.0;
const EPOCH_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Compose, tokenize, and index the catalog for one mode.
pub fn tokenized_corpus(
    catalog: &NewsCatalog,
    config: &ModelConfig,
    descriptions: &DescriptionCache,
    tokenizer: &dyn Tokenizer,
) -> Result<HashMap<String, TokenizedNews>, ComposeError> {
    let max_len = config.effective_max_len();
    let mut out = HashMap::with_capacity(catalog.len());
    for article in catalog.iter() {
        let composed = compose(article, config.mode, descriptions, tokenizer.sep_surface())?;
        let encoded = tokenize(&composed, tokenizer, max_len)?;
        out.insert(article.news_id.clone(), encoded);
    }
    Ok(out)
}

/// Build the tokenizer required by the configured encoder family.
pub fn build_tokenizer(
    config: &ModelConfig,
    catalog: &NewsCatalog,
    descriptions: &DescriptionCache,
    wordpiece_vocab: Option<&Path>,
) -> Result<(Box<dyn Tokenizer>, TokenizerSpec), TrainError> {
    let spec = resolve_plm(&config.plm_name)?;
    match spec.family {
        PlmFamily::Toy => {
            // Vocabulary comes from the composed training corpus; [SEP] is
            // a special token, so composing with its surface form first is
            // safe.
            let mut texts = Vec::with_capacity(catalog.len());
            for article in catalog.iter() {
                let composed =
                    compose(article, config.mode, descriptions, crate::tokenizer::SEP_TOKEN)?;
                texts.push(composed.full_text);
            }
            let tokenizer = WordTokenizer::build_from_texts(texts.iter().map(|s| s.as_str()));
            let spec = TokenizerSpec::of(&tokenizer, tokenizer.vocab().to_vec());
            Ok((Box::new(tokenizer), spec))
        }
        PlmFamily::BertLike => {
            let path = wordpiece_vocab
                .ok_or_else(|| TrainError::MissingVocabFile(config.plm_name.clone()))?;
            let tokenizer = WordPieceTokenizer::from_vocab_file(path, config.plm_name.clone())
                .map_err(ComposeError::from)?;
            let spec = TokenizerSpec::of(&tokenizer, tokenizer.vocab().to_vec());
            Ok((Box::new(tokenizer), spec))
        }
    }
}

/// Train a fresh model. `on_epoch` runs after every epoch with the current
/// model state; the hook is where callers write checkpoints and log lines.
pub fn fit(
    config: &ModelConfig,
    data: &FitData,
    mut on_epoch: impl FnMut(&EpochRecord, &Recommender, &TokenizerSpec) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let started = Instant::now();
    let plm = resolve_plm(&config.plm_name)?;

    let (tokenizer, tokenizer_spec) =
        build_tokenizer(config, data.catalog, data.descriptions, data.wordpiece_vocab)?;
    let corpus = tokenized_corpus(data.catalog, config, data.descriptions, tokenizer.as_ref())?;

    // Impressions with candidates outside the catalog cannot be scored.
    let mut skipped_unknown_news = 0;
    let usable: Vec<&Impression> = data
        .impressions
        .iter()
        .filter(|imp| {
            let known = imp.candidates.iter().all(|c| corpus.contains_key(&c.news_id));
            if !known {
                skipped_unknown_news += 1;
            }
            known
        })
        .collect();

    let user_vocab = UserVocab::from_impressions(data.impressions);
    let mut model = Recommender::new(
        config.clone(),
        encoder_config(&plm, tokenizer.vocab_size(), config),
        user_vocab,
    )?;
    let mut optimizer = AdamW::new(&model.params, config.lr);
    if config.frozen_plm {
        optimizer.freeze_prefix(&model.params, "plm.");
    }

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut sample_count = 0;
    let mut skipped_no_negative = 0;
    for epoch in 1..=config.epochs {
        let epoch_started = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(
            config.seed ^ (epoch as u64).wrapping_mul(EPOCH_SEED_STRIDE),
        );
        let mut samples = Vec::new();
        let mut no_negative = 0;
        for imp in &usable {
            let built =
                build_training_samples(imp, config.k_negatives, config.history_len, &mut rng);
            if built.is_empty() && imp.n_positives() > 0 {
                no_negative += 1;
            }
            for mut sample in built {
                // History entries missing from the catalog cannot be
                // encoded; drop them, keeping order.
                sample.history.retain(|id| corpus.contains_key(id));
                samples.push(sample);
            }
        }
        if epoch == 1 {
            skipped_no_negative = no_negative;
        }
        if samples.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        samples.shuffle(&mut rng);
        sample_count = samples.len();

        let mut loss_sum = 0.0;
        for (batch_index, batch) in samples.chunks(config.batch_size).enumerate() {
            let (batch_loss, mut grads) = batch_step(&model, &corpus, batch, config.workers)?;
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    lr: config.lr,
                });
            }
            loss_sum += batch_loss;
            let norm = grads.global_norm();
            if norm > GRAD_CLIP_NORM {
                grads.scale(GRAD_CLIP_NORM / norm);
            }
            optimizer.step(&mut model.params, &grads);
        }

        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / sample_count as f64,
            samples: sample_count,
            wall_time_s: epoch_started.elapsed().as_secs_f64(),
            seed: config.seed,
        };
        epoch_losses.push(record.mean_loss);
        on_epoch(&record, &model, &tokenizer_spec)?;
    }

    let report = TrainReport {
        seed: config.seed,
        sample_count,
        epoch_losses,
        wall_time_s: started.elapsed().as_secs_f64(),
        skipped_no_negative,
        skipped_unknown_news,
        optimizer: optimizer.info(GRAD_CLIP_NORM),
    };
    Ok(TrainOutcome { model, tokenizer, tokenizer_spec, report })
}

struct ChunkOutput {
    loss_sum: f64,
    grads: GradStore,
    d_news: Array2<f64>,
}

/// Forward/backward over one batch. News appearing in several samples is
/// encoded once; its gradient contributions accumulate before the single
/// encoder backward pass.
fn batch_step(
    model: &Recommender,
    corpus: &HashMap<String, TokenizedNews>,
    batch: &[TrainingSample],
    workers: usize,
) -> Result<(f64, GradStore), TrainError> {
    // Unique news in deterministic first-seen order.
    let mut unique: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for sample in batch {
        for id in sample.history.iter().chain(sample.candidates.iter()) {
            index.entry(id.as_str()).or_insert_with(|| {
                unique.push(id.as_str());
                unique.len() - 1
            });
        }
    }

    let caches: Vec<NewsEncodeCache> = unique
        .par_iter()
        .map(|id| model.encoder.encode(&model.params, &corpus[*id]))
        .collect::<Result<_, _>>()?;
    let d_news_width = model.config.d_news;
    let mut news_vectors = Array2::zeros((unique.len(), d_news_width));
    for (i, cache) in caches.iter().enumerate() {
        news_vectors.row_mut(i).assign(&cache.news_vector);
    }

    // User-encoder forward/backward per sample, sharded deterministically.
    let chunk_size = batch.len().div_ceil(workers.max(1));
    let chunk_outputs: Vec<Result<ChunkOutput, TrainError>> = batch
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut out = ChunkOutput {
                loss_sum: 0.0,
                grads: GradStore::zeros_like(&model.params),
                d_news: Array2::zeros((unique.len(), d_news_width)),
            };
            for sample in chunk {
                let mut history = Array2::zeros((sample.history.len(), d_news_width));
                for (row, id) in sample.history.iter().enumerate() {
                    history.row_mut(row).assign(&news_vectors.row(index[id.as_str()]));
                }
                let slot = model.user_vocab.slot(&sample.user_id);
                let pass = model.user_encoder.encode(&model.params, &history, slot);
                let user = pass.user_vector();

                let candidate_rows: Vec<usize> =
                    sample.candidates.iter().map(|id| index[id.as_str()]).collect();
                let scores: Vec<f64> = candidate_rows
                    .iter()
                    .map(|&row| user.dot(&news_vectors.row(row)))
                    .collect();
                let (loss, dscores) = ranking_softmax_loss_grad(&scores, sample.label_index)?;
                out.loss_sum += loss;

                let mut d_user = Array1::zeros(d_news_width);
                for (&row, &ds) in candidate_rows.iter().zip(&dscores) {
                    d_user.scaled_add(ds, &news_vectors.row(row));
                    out.d_news.row_mut(row).scaled_add(ds, user);
                }
                let d_history = pass.backward(&model.params, &d_user, &mut out.grads);
                for (row, id) in sample.history.iter().enumerate() {
                    out.d_news
                        .row_mut(index[id.as_str()])
                        .scaled_add(1.0, &d_history.row(row));
                }
            }
            Ok(out)
        })
        .collect();

    let mut grads = GradStore::zeros_like(&model.params);
    let mut d_news = Array2::zeros((unique.len(), d_news_width));
    let mut loss_sum = 0.0;
    for chunk in chunk_outputs {
        let chunk = chunk?;
        loss_sum += chunk.loss_sum;
        grads.merge(&chunk.grads);
        d_news += &chunk.d_news;
    }

    // Encoder backward per unique news, same sharding scheme.
    let news_ids: Vec<usize> = (0..unique.len()).collect();
    let chunk_size = news_ids.len().div_ceil(workers.max(1));
    let encoder_grads: Vec<GradStore> = news_ids
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut shard = GradStore::zeros_like(&model.params);
            for &i in chunk {
                let d_vec = d_news.row(i).to_owned();
                if d_vec.iter().all(|&v| v == 0.0) {
                    continue;
                }
                if model.config.frozen_plm {
                    model
                        .encoder
                        .backward_head_only(&model.params, &caches[i], &d_vec, &mut shard);
                } else {
                    model.encoder.backward(&model.params, &caches[i], &d_vec, &mut shard);
                }
            }
            shard
        })
        .collect();
    for shard in &encoder_grads {
        grads.merge(shard);
    }

    // Mean over the batch.
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((loss_sum, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mind::Candidate;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn impression(positives: usize, negatives: usize, history: usize) -> Impression {
        let mut candidates = Vec::new();
        for i in 0..positives {
            candidates.push(Candidate { news_id: format!("P{i}"), clicked: true });
        }
        for i in 0..negatives {
            candidates.push(Candidate { news_id: format!("Q{i}"), clicked: false });
        }
        Impression {
            impression_id: "1".into(),
            user_id: "U1".into(),
            time_raw: String::new(),
            timestamp: None,
            history: (0..history).map(|i| format!("H{i}")).collect(),
            candidates,
        }
    }

    #[test]
    fn one_sample_per_positive_with_k_plus_one_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = build_training_samples(&impression(1, 9, 3), 4, 50, &mut rng);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].candidates.len(), 5);
        assert_eq!(samples[0].candidates[samples[0].label_index], "P0");

        let samples = build_training_samples(&impression(2, 6, 0), 4, 50, &mut rng);
        assert_eq!(samples.len(), 2);
    }

    #[test]
    fn scarce_negatives_are_drawn_with_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = build_training_samples(&impression(1, 2, 0), 4, 50, &mut rng);
        assert_eq!(samples[0].candidates.len(), 5);
        for (i, id) in samples[0].candidates.iter().enumerate() {
            if i == samples[0].label_index {
                continue;
            }
            assert!(id == "Q0" || id == "Q1", "negative {id} from the available pool");
        }
    }

    #[test]
    fn zero_negatives_yield_no_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(build_training_samples(&impression(2, 0, 1), 4, 50, &mut rng).is_empty());
    }

    #[test]
    fn history_keeps_the_most_recent_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = build_training_samples(&impression(1, 4, 60), 4, 50, &mut rng);
        assert_eq!(samples[0].history.len(), 50);
        assert_eq!(samples[0].history.first().unwrap(), "H10");
        assert_eq!(samples[0].history.last().unwrap(), "H59");
    }

    #[test]
    fn sampling_is_reproducible_for_a_fixed_seed() {
        let imp = impression(3, 7, 5);
        let a = build_training_samples(&imp, 4, 50, &mut ChaCha8Rng::seed_from_u64(7));
        let b = build_training_samples(&imp, 4, 50, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn samples_always_satisfy_their_invariants(
            positives in 1usize..4,
            negatives in 1usize..12,
            k in 1usize..6,
            seed in 0u64..1000,
        ) {
            let imp = impression(positives, negatives, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = build_training_samples(&imp, k, 50, &mut rng);
            prop_assert_eq!(samples.len(), positives);
            for sample in samples {
                prop_assert_eq!(sample.candidates.len(), k + 1);
                prop_assert!(sample.label_index <= k);
                prop_assert!(sample.candidates[sample.label_index].starts_with('P'));
                let negs = sample
                    .candidates
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != sample.label_index)
                    .count();
                prop_assert_eq!(negs, k);
            }
        }
    }

    #[test]
    fn equal_scores_give_ln_of_count() {
        let loss = ranking_softmax_loss(&[0.0; 5], 0).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn separated_scores_saturate_to_zero() {
        let loss = ranking_softmax_loss(&[10.0, -10.0, -10.0, -10.0, -10.0], 0).unwrap();
        assert!(loss < 1e-4);
    }

    #[test]
    fn two_candidate_closed_form() {
        let loss = ranking_softmax_loss(&[1.0, 0.0], 0).unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-9);
    }

    #[test]
    fn loss_is_shift_invariant() {
        let base = ranking_softmax_loss(&[0.3, -1.2, 2.0, 0.7], 2).unwrap();
        let shifted = ranking_softmax_loss(&[100.3, 98.8, 102.0, 100.7], 2).unwrap();
        assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        assert!(matches!(
            ranking_softmax_loss(&[0.0, 1.0], 2),
            Err(TrainError::LabelOutOfRange { label: 2, len: 2 })
        ));
        assert!(matches!(
            ranking_softmax_loss(&[f64::NAN, 1.0], 0),
            Err(TrainError::NonFiniteScores)
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let scores = [0.4, -0.9, 1.3, 0.1, -2.0];
        let (_, grad) = ranking_softmax_loss_grad(&scores, 2).unwrap();
        for i in 0..scores.len() {
            let eps = 1e-6;
            let mut plus = scores;
            plus[i] += eps;
            let mut minus = scores;
            minus[i] -= eps;
            let numeric = (ranking_softmax_loss(&plus, 2).unwrap()
                - ranking_softmax_loss(&minus, 2).unwrap())
                / (2.0 * eps);
            let rel = (grad[i] - numeric).abs() / (grad[i].abs() + numeric.abs()).max(1e-8);
            assert!(rel < 1e-6, "component {i}: {} vs {numeric}", grad[i]);
        }
    }

    #[test]
    fn adamw_single_step_matches_hand_computation() {
        let mut pool = ParamPool::new();
        let id = pool.add("w", ndarray::arr1(&[1.0]).into_dyn());
        let mut grads = GradStore::zeros_like(&pool);
        grads.add1(id, ndarray::arr1(&[0.5]).view());

        let mut opt = AdamW::new(&pool, 0.1);
        opt.step(&mut pool, &grads);

        // One step with bias correction at t = 1.
        let m_hat = 0.5f64;
        let v_hat = 0.25f64;
        let expected = 1.0 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.01 * 1.0);
        let got = pool.value(id).as_slice().unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn adamw_freeze_prefix_skips_updates() {
        let mut pool = ParamPool::new();
        let frozen = pool.add("plm.w", ndarray::arr1(&[1.0]).into_dyn());
        let live = pool.add("head.w", ndarray::arr1(&[1.0]).into_dyn());
        let mut grads = GradStore::zeros_like(&pool);
        grads.add1(frozen, ndarray::arr1(&[0.5]).view());
        grads.add1(live, ndarray::arr1(&[0.5]).view());

        let mut opt = AdamW::new(&pool, 0.1);
        opt.freeze_prefix(&pool, "plm.");
        opt.step(&mut pool, &grads);
        assert_eq!(pool.value(frozen).as_slice().unwrap()[0], 1.0);
        assert!(pool.value(live).as_slice().unwrap()[0] < 1.0);
    }
}
