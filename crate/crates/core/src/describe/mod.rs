//! Category description generation and caching.
//!
//! Every category key gets the same system prompt plus a one-line user
//! message naming the key. Responses are cached in a single JSON document so
//! training and evaluation runs are reproducible without network access.

mod client;
mod http;

pub use client::{CountingClient, FixtureClient, LlmClient, LlmError, RetryPolicy};
pub use http::{HttpClientConfig, HttpLlmClient};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mind::CategoryKey;

/// System prompt sent with every description request.
pub const SYSTEM_MESSAGE: &str = "You are a wonderful news writer. You assist readers by \
providing more detailed and useful information about the articles. User inputs the specific \
category for a news article using the format 'The news category is {category}'. Please provide \
a detailed explanation, in about 50 words, **in English**, on the category of the articles \
entered (such as politics, economics, sports, etc.). Please avoid using symbols such as double \
quotes (\") and single quotes ('), asterisks (*), and similar for emphasis as much as possible.";

/// Prefix of the user message; also the template-based composition sentence.
pub const CATEGORY_SENTENCE_PREFIX: &str = "The news category is ";

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error("description for {key} failed after {attempts} attempts: {reason}")]
    Generation {
        key: CategoryKey,
        attempts: u32,
        reason: String,
    },
    #[error("model returned an empty description for {key}")]
    EmptyResponse { key: CategoryKey },
    #[error("{failed} of {total} descriptions failed; completed entries were persisted. First failure: {first}")]
    Partial {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("description cache is empty")]
    EmptyCache,
    #[error("cache file {path}: {source}")]
    CacheIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cache file {path} is not valid JSON: {source}")]
    CacheFormat {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// The exact message pair sent to the model for one category key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system_message: String,
    pub user_message: String,
}

impl PromptPair {
    /// Stable hex digest over both messages.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system_message.as_bytes());
        hasher.update(b"\n");
        hasher.update(self.user_message.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Build the canonical prompt for a category key. Pure: equal keys give
/// byte-identical prompts.
pub fn build_prompt(key: &CategoryKey) -> PromptPair {
    PromptPair {
        system_message: SYSTEM_MESSAGE.to_string(),
        user_message: format!("{CATEGORY_SENTENCE_PREFIX}{key}"),
    }
}

/// Whitespace-token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// A generated description plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDescription {
    #[serde(skip)]
    pub key: CategoryKey,
    pub text: String,
    pub generator_model: String,
    pub prompt_fingerprint: String,
    pub word_count: usize,
}

/// On-disk cache: JSON object mapping key to entry, keys sorted on write.
#[derive(Debug, Clone)]
pub struct DescriptionCache {
    entries: BTreeMap<CategoryKey, CategoryDescription>,
    path: Option<PathBuf>,
}

impl DescriptionCache {
    pub fn in_memory() -> Self {
        Self { entries: BTreeMap::new(), path: None }
    }

    /// Open a cache bound to `path`; a missing file is an empty cache.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, DescribeError> {
        let path = path.into();
        let entries = match std::fs::read_to_string(&path) {
            Ok(raw) => {
                let map: BTreeMap<String, CategoryDescription> = serde_json::from_str(&raw)
                    .map_err(|source| DescribeError::CacheFormat {
                        path: path.clone(),
                        source,
                    })?;
                map.into_iter()
                    .map(|(k, mut v)| {
                        let key = CategoryKey(k);
                        v.key = key.clone();
                        (key, v)
                    })
                    .collect()
            }
            Err(err) if err.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(DescribeError::CacheIo { path, source }),
        };
        Ok(Self { entries, path: Some(path) })
    }

    pub fn get(&self, key: &CategoryKey) -> Option<&CategoryDescription> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, description: CategoryDescription) {
        self.entries.insert(description.key.clone(), description);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CategoryKey, &CategoryDescription)> {
        self.entries.iter()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Write the cache to its path (no-op for in-memory caches). The write
    /// goes through a temp file in the same directory, then a rename.
    pub fn save(&self) -> Result<(), DescribeError> {
        let Some(path) = &self.path else { return Ok(()) };
        let map: BTreeMap<&str, &CategoryDescription> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v))
            .collect();
        let body = serde_json::to_string_pretty(&map).expect("cache serializes");
        let tmp = path.with_extension("json.tmp");
        let io = |source| DescribeError::CacheIo { path: path.clone(), source };
        std::fs::write(&tmp, body.as_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }
}

/// Outcome counts for a [`generate_all`] run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GenerateReport {
    pub total: usize,
    /// Entries produced by client calls in this run.
    pub generated: usize,
    /// Entries already present in the cache.
    pub from_cache: usize,
    pub failures: Vec<(String, String)>,
}

/// Fetch one description, consulting the cache first. A hit returns the
/// cached entry without any client call; a miss makes exactly one (retried)
/// call, stores the trimmed response, and returns it. Empty responses are
/// never cached.
pub fn generate_description(
    key: &CategoryKey,
    client: &dyn LlmClient,
    cache: &mut DescriptionCache,
    retry: &RetryPolicy,
) -> Result<CategoryDescription, DescribeError> {
    if let Some(hit) = cache.get(key) {
        return Ok(hit.clone());
    }
    let description = fetch_description(key, client, retry)?;
    cache.insert(description.clone());
    Ok(description)
}

fn fetch_description(
    key: &CategoryKey,
    client: &dyn LlmClient,
    retry: &RetryPolicy,
) -> Result<CategoryDescription, DescribeError> {
    let prompt = build_prompt(key);
    let raw = retry
        .run(|| client.complete(&prompt))
        .map_err(|(attempts, err)| DescribeError::Generation {
            key: key.clone(),
            attempts,
            reason: err.to_string(),
        })?;
    let text = raw.trim().to_string();
    if text.is_empty() {
        return Err(DescribeError::EmptyResponse { key: key.clone() });
    }
    Ok(CategoryDescription {
        key: key.clone(),
        word_count: word_count(&text),
        prompt_fingerprint: prompt.fingerprint(),
        generator_model: client.model_id().to_string(),
        text,
    })
}

/// Options for [`generate_all`].
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Regenerate keys that already have a cached entry.
    pub force: bool,
    /// Worker threads making client calls.
    pub concurrency: usize,
    /// Minimum spacing between request starts, shared across workers.
    pub min_request_interval: Option<std::time::Duration>,
    pub retry: RetryPolicy,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            force: false,
            concurrency: 4,
            min_request_interval: None,
            retry: RetryPolicy::default(),
        }
    }
}

/// Spaces request starts at least `interval` apart across all workers.
struct RateLimiter {
    interval: std::time::Duration,
    next_start: Mutex<std::time::Instant>,
}

impl RateLimiter {
    fn new(interval: std::time::Duration) -> Self {
        Self { interval, next_start: Mutex::new(std::time::Instant::now()) }
    }

    fn wait_turn(&self) {
        let now = std::time::Instant::now();
        let wake_at = {
            let mut next = self.next_start.lock().unwrap();
            let wake_at = (*next).max(now);
            *next = wake_at + self.interval;
            wake_at
        };
        let pause = wake_at.saturating_duration_since(now);
        if !pause.is_zero() {
            std::thread::sleep(pause);
        }
    }
}

/// Generate descriptions for every key in `vocab`, skipping cached entries
/// unless `force` is set. Up to `concurrency` requests run at once; cache
/// writes stay on the calling thread and the file is persisted after every
/// new entry, so a failed run keeps its completed keys.
pub fn generate_all(
    vocab: &[CategoryKey],
    client: &dyn LlmClient,
    cache: &mut DescriptionCache,
    options: &GenerateOptions,
) -> Result<GenerateReport, DescribeError> {
    let mut report = GenerateReport { total: vocab.len(), ..Default::default() };
    let missing: Vec<&CategoryKey> = vocab
        .iter()
        .filter(|key| options.force || cache.get(key).is_none())
        .collect();
    report.from_cache = vocab.len() - missing.len();

    let limiter = options.min_request_interval.map(RateLimiter::new);
    let queue = Mutex::new(missing.into_iter());
    let (tx, rx) = mpsc::channel::<Result<CategoryDescription, DescribeError>>();
    std::thread::scope(|scope| {
        for _ in 0..options.concurrency.max(1) {
            let tx = tx.clone();
            let queue = &queue;
            let retry = &options.retry;
            let limiter = limiter.as_ref();
            scope.spawn(move || loop {
                let Some(key) = queue.lock().unwrap().next() else { break };
                if let Some(limiter) = limiter {
                    limiter.wait_turn();
                }
                if tx.send(fetch_description(key, client, retry)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Ok(description) => {
                    cache.insert(description);
                    report.generated += 1;
                    if let Err(err) = cache.save() {
                        report.failures.push(("<cache>".into(), err.to_string()));
                    }
                }
                Err(err) => {
                    let key = match &err {
                        DescribeError::Generation { key, .. }
                        | DescribeError::EmptyResponse { key } => key.to_string(),
                        _ => String::new(),
                    };
                    report.failures.push((key, err.to_string()));
                }
            }
        }
    });

    cache.save()?;
    if report.failures.is_empty() {
        Ok(report)
    } else {
        Err(DescribeError::Partial {
            failed: report.failures.len(),
            total: report.total,
            first: format!("{}: {}", report.failures[0].0, report.failures[0].1),
        })
    }
}

/// Arithmetic mean of per-entry word counts.
pub fn corpus_word_stats(cache: &DescriptionCache) -> Result<f64, DescribeError> {
    if cache.is_empty() {
        return Err(DescribeError::EmptyCache);
    }
    let total: usize = cache.iter().map(|(_, d)| d.word_count).sum();
    Ok(total as f64 / cache.len() as f64)
}

/// Advisory range for the corpus mean word count; the prompt asks for about
/// fifty words, so means far outside this band suggest a prompt or model
/// regression.
pub const MEAN_WORDS_ADVISORY: (f64, f64) = (30.0, 90.0);

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> CategoryKey {
        CategoryKey(s.to_string())
    }

    const GOLDEN_GLOBES_FIXTURE: &str = "The TV-Golden Globes category focuses on news related \
to the Golden Globe Awards specifically within the television industry. This includes \
nominations, winners, notable moments from the ceremony, reactions, and any controversies or \
highlights surrounding the event, which honors excellence in TV.";

    #[test]
    fn prompt_user_message_is_templated() {
        let p = build_prompt(&key("tv-golden-globes"));
        assert_eq!(p.user_message, "The news category is tv-golden-globes");
        assert_eq!(p.system_message, SYSTEM_MESSAGE);

        let q = build_prompt(&key("finance-real-estate"));
        assert_eq!(q.user_message, "The news category is finance-real-estate");
    }

    #[test]
    fn prompt_is_deterministic() {
        let a = build_prompt(&key("tv-golden-globes"));
        let b = build_prompt(&key("tv-golden-globes"));
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), build_prompt(&key("news-politics")).fingerprint());
    }

    #[test]
    fn fixture_description_counts_41_words() {
        assert_eq!(word_count(GOLDEN_GLOBES_FIXTURE), 41);
    }

    #[test]
    fn fixture_backed_generation_matches_expected_opening() {
        let client = FixtureClient::from_entries([(
            "tv-golden-globes".to_string(),
            GOLDEN_GLOBES_FIXTURE.to_string(),
        )]);
        let mut cache = DescriptionCache::in_memory();
        let d = generate_description(
            &key("tv-golden-globes"),
            &client,
            &mut cache,
            &RetryPolicy::immediate(),
        )
        .unwrap();
        assert!(d.text.starts_with(
            "The TV-Golden Globes category focuses on news related to the Golden Globe Awards"
        ));
        assert_eq!(d.word_count, 41);
        assert_eq!(d.generator_model, "fixture");
    }

    #[test]
    fn cache_hit_makes_no_client_call() {
        let inner = FixtureClient::from_entries([("a-b".to_string(), "desc one".to_string())]);
        let client = CountingClient::new(inner);
        let mut cache = DescriptionCache::in_memory();
        let retry = RetryPolicy::immediate();
        let first = generate_description(&key("a-b"), &client, &mut cache, &retry).unwrap();
        assert_eq!(client.calls(), 1);
        let second = generate_description(&key("a-b"), &client, &mut cache, &retry).unwrap();
        assert_eq!(client.calls(), 1);
        assert_eq!(first, second);
    }

    #[test]
    fn empty_response_is_an_error_and_not_cached() {
        let client = FixtureClient::from_entries([("a-b".to_string(), "   ".to_string())]);
        let mut cache = DescriptionCache::in_memory();
        let err =
            generate_description(&key("a-b"), &client, &mut cache, &RetryPolicy::immediate())
                .unwrap_err();
        assert!(matches!(err, DescribeError::EmptyResponse { .. }));
        assert!(cache.is_empty());
    }

    #[test]
    fn generate_all_calls_once_per_missing_key() {
        let entries = [("a-b", "one"), ("c-d", "two"), ("e-f", "three")]
            .map(|(k, v)| (k.to_string(), v.to_string()));
        let vocab: Vec<CategoryKey> = ["a-b", "c-d", "e-f"].iter().map(|s| key(s)).collect();

        let client = CountingClient::new(FixtureClient::from_entries(entries.clone()));
        let mut cache = DescriptionCache::in_memory();
        let report =
            generate_all(&vocab, &client, &mut cache, &GenerateOptions::default()).unwrap();
        assert_eq!((report.generated, report.from_cache), (3, 0));
        assert_eq!(client.calls(), 3);
        assert_eq!(cache.len(), 3);

        // Incremental rerun with two entries already cached.
        let client = CountingClient::new(FixtureClient::from_entries(entries));
        let mut partial = DescriptionCache::in_memory();
        partial.insert(cache.get(&key("a-b")).unwrap().clone());
        partial.insert(cache.get(&key("c-d")).unwrap().clone());
        let report =
            generate_all(&vocab, &client, &mut partial, &GenerateOptions::default()).unwrap();
        assert_eq!((report.generated, report.from_cache), (1, 2));
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn generate_all_keeps_completed_keys_on_partial_failure() {
        let client = FixtureClient::from_entries([("a-b".to_string(), "fine".to_string())]);
        let vocab = vec![key("a-b"), key("missing-key")];
        let mut cache = DescriptionCache::in_memory();
        let err = generate_all(&vocab, &client, &mut cache, &GenerateOptions::default())
            .unwrap_err();
        assert!(err.to_string().contains("missing-key"), "error names the key: {err}");
        assert!(cache.get(&key("a-b")).is_some());
    }

    #[test]
    fn rate_limiter_spaces_request_starts() {
        let entries = [("a-b", "one"), ("c-d", "two"), ("e-f", "three")]
            .map(|(k, v)| (k.to_string(), v.to_string()));
        let client = FixtureClient::from_entries(entries);
        let vocab: Vec<CategoryKey> = ["a-b", "c-d", "e-f"].iter().map(|s| key(s)).collect();
        let mut cache = DescriptionCache::in_memory();
        let options = GenerateOptions {
            min_request_interval: Some(std::time::Duration::from_millis(30)),
            ..Default::default()
        };
        let started = std::time::Instant::now();
        generate_all(&vocab, &client, &mut cache, &options).unwrap();
        // Three spaced starts need at least two full intervals.
        assert!(started.elapsed() >= std::time::Duration::from_millis(60));
    }

    #[test]
    fn generate_all_respects_existing_entries_unless_forced() {
        let client =
            CountingClient::new(FixtureClient::from_entries([("a-b".to_string(), "new".to_string())]));
        let vocab = vec![key("a-b")];
        let mut cache = DescriptionCache::in_memory();
        cache.insert(CategoryDescription {
            key: key("a-b"),
            text: "old".into(),
            generator_model: "m".into(),
            prompt_fingerprint: "f".into(),
            word_count: 1,
        });

        generate_all(&vocab, &client, &mut cache, &GenerateOptions::default()).unwrap();
        assert_eq!(cache.get(&key("a-b")).unwrap().text, "old");
        assert_eq!(client.calls(), 0);

        let opts = GenerateOptions { force: true, ..Default::default() };
        generate_all(&vocab, &client, &mut cache, &opts).unwrap();
        assert_eq!(cache.get(&key("a-b")).unwrap().text, "new");
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn cache_round_trips_and_sorts_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.json");
        let mut cache = DescriptionCache::open(&path).unwrap();
        for k in ["zeta-z", "alpha-a", "mid-m"] {
            cache.insert(CategoryDescription {
                key: key(k),
                text: format!("text for {k}"),
                generator_model: "fixture".into(),
                prompt_fingerprint: build_prompt(&key(k)).fingerprint(),
                word_count: 3,
            });
        }
        cache.save().unwrap();

        let raw = std::fs::read_to_string(&path).unwrap();
        let alpha = raw.find("alpha-a").unwrap();
        let mid = raw.find("mid-m").unwrap();
        let zeta = raw.find("zeta-z").unwrap();
        assert!(alpha < mid && mid < zeta, "keys sorted lexicographically on disk");

        let reloaded = DescriptionCache::open(&path).unwrap();
        assert_eq!(reloaded.len(), 3);
        for k in ["zeta-z", "alpha-a", "mid-m"] {
            assert_eq!(reloaded.get(&key(k)), cache.get(&key(k)));
        }
    }

    #[test]
    fn word_stats_mean() {
        let mut cache = DescriptionCache::in_memory();
        assert!(matches!(corpus_word_stats(&cache), Err(DescribeError::EmptyCache)));

        let entry = |k: &str, n: usize| CategoryDescription {
            key: key(k),
            text: vec!["w"; n].join(" "),
            generator_model: "m".into(),
            prompt_fingerprint: "f".into(),
            word_count: n,
        };
        cache.insert(entry("a-a", 41));
        assert_eq!(corpus_word_stats(&cache).unwrap(), 41.0);
        cache.insert(entry("b-b", 40));
        cache.insert(entry("c-c", 60));
        let mean = corpus_word_stats(&cache).unwrap();
        assert!((mean - 47.0).abs() < 1e-12);

        let mut pair = DescriptionCache::in_memory();
        pair.insert(entry("a-a", 40));
        pair.insert(entry("b-b", 60));
        assert_eq!(corpus_word_stats(&pair).unwrap(), 50.0);
    }
}
