//! Completion client abstraction: a live HTTP client and a fixture client
//! share this interface so every pipeline stage runs offline.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use thiserror::Error;

use super::PromptPair;

#[derive(Debug, Error)]
pub enum LlmError {
    /// Worth retrying: timeouts, connection resets, 429/5xx responses.
    #[error("transient: {0}")]
    Transient(String),
    /// Not worth retrying: bad credentials, malformed request, missing
    /// fixture entry.
    #[error("{0}")]
    Fatal(String),
}

/// Anything that can turn a prompt into a completion.
pub trait LlmClient: Send + Sync {
    /// Identifier recorded in description provenance metadata.
    fn model_id(&self) -> &str;

    fn complete(&self, prompt: &PromptPair) -> Result<String, LlmError>;
}

/// Bounded retry with exponential backoff, applied to transient errors only.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    /// No backoff between attempts; for tests.
    pub fn immediate() -> Self {
        Self { max_attempts: 3, base_delay: Duration::ZERO }
    }

    /// Run `call` until it succeeds or the attempt budget is spent. The
    /// error side carries how many attempts were made.
    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, LlmError>,
    ) -> Result<T, (u32, LlmError)> {
        let attempts = self.max_attempts.max(1);
        for attempt in 1..=attempts {
            match call() {
                Ok(value) => return Ok(value),
                Err(err @ LlmError::Fatal(_)) => return Err((attempt, err)),
                Err(err @ LlmError::Transient(_)) => {
                    if attempt == attempts {
                        return Err((attempt, err));
                    }
                    let backoff = self.base_delay * 2u32.saturating_pow(attempt - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
        unreachable!("loop returns on final attempt")
    }
}

/// Offline client answering from a `key -> text` JSON file.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    entries: BTreeMap<String, String>,
}

impl FixtureClient {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Fatal(format!("fixture file {}: {e}", path.display())))?;
        let entries: BTreeMap<String, String> = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Fatal(format!("fixture file {}: {e}", path.display())))?;
        Ok(Self { entries })
    }
}

impl LlmClient for FixtureClient {
    fn model_id(&self) -> &str {
        "fixture"
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, LlmError> {
        let key = prompt
            .user_message
            .strip_prefix(super::CATEGORY_SENTENCE_PREFIX)
            .unwrap_or(&prompt.user_message);
        self.entries
            .get(key)
            .cloned()
            .ok_or_else(|| LlmError::Fatal(format!("fixture has no entry for key {key}")))
    }
}

/// Wrapper that counts completed calls; used to assert cache behavior.
pub struct CountingClient<C> {
    inner: C,
    calls: AtomicU64,
}

impl<C: LlmClient> CountingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<C: LlmClient> LlmClient for CountingClient<C> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, prompt: &PromptPair) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt)
    }
}
