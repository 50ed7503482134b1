//! Tokenizers for the text encoder.
//!
//! Two implementations share one interface: a corpus-built word tokenizer
//! for the small trainable encoder, and a WordPiece tokenizer loading a
//! `vocab.txt` for BERT-family encoders. Both produce fixed-length id
//! sequences with `[CLS]`/`[SEP]` wrapping, right truncation, and `[PAD]`
//! fill, and both treat special-token surface forms atomically so a
//! mid-text `[SEP]` from composition survives normalization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

/// Smallest cap that still fits `[CLS] token [SEP]` plus one padding slot.
pub const MIN_MAX_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("max_len {max_len} is below the minimum of {MIN_MAX_LEN}")]
    MaxLenTooSmall { max_len: usize },
    #[error("vocab file {path}: {reason}")]
    BadVocab { path: String, reason: String },
}

/// Fixed-length encoding of one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedNews {
    pub token_ids: Vec<u32>,
    /// 1 exactly on non-padding positions.
    pub attention_mask: Vec<u8>,
    pub max_len: usize,
}

impl TokenizedNews {
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

pub trait Tokenizer: Send + Sync {
    /// Identifier recorded in checkpoints and preprocessed corpora.
    fn name(&self) -> &str;

    /// Surface form of the separator token used when composing text.
    fn sep_surface(&self) -> &str {
        SEP_TOKEN
    }

    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str, max_len: usize) -> Result<TokenizedNews, TokenizeError>;

    /// Best-effort inverse of `encode`: specials stripped except interior
    /// separators, pieces rejoined.
    fn decode(&self, token_ids: &[u32]) -> String;
}

/// Lowercase, keep special tokens atomic, and split punctuation off into
/// single-character tokens.
fn basic_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&piece) {
            out.push(piece.to_string());
            continue;
        }
        let mut run = String::new();
        for ch in piece.to_lowercase().chars() {
            if ch.is_alphanumeric() {
                run.push(ch);
            } else {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(ch.to_string());
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

fn wrap_and_pad(
    body: Vec<u32>,
    max_len: usize,
    cls_id: u32,
    sep_id: u32,
    pad_id: u32,
) -> Result<TokenizedNews, TokenizeError> {
    if max_len < MIN_MAX_LEN {
        return Err(TokenizeError::MaxLenTooSmall { max_len });
    }
    let keep = body.len().min(max_len - 2);
    let mut token_ids = Vec::with_capacity(max_len);
    token_ids.push(cls_id);
    token_ids.extend_from_slice(&body[..keep]);
    token_ids.push(sep_id);
    let content = token_ids.len();
    token_ids.resize(max_len, pad_id);
    let mut attention_mask = vec![1u8; content];
    attention_mask.resize(max_len, 0);
    Ok(TokenizedNews { token_ids, attention_mask, max_len })
}

/// Word-level tokenizer whose vocabulary is built from the training corpus.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordTokenizer {
    /// Build a vocabulary from `texts` in first-seen token order, after the
    /// four special tokens. Deterministic for a fixed corpus order.
    pub fn build_from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for text in texts {
            for token in basic_tokens(text) {
                if !index.contains_key(&token) {
                    index.insert(token.clone(), vocab.len() as u32);
                    vocab.push(token);
                }
            }
        }
        Self { vocab, index }
    }

    /// Rebuild from a saved token list (checkpoint loading).
    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { vocab, index }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}

impl Tokenizer for WordTokenizer {
    fn name(&self) -> &str {
        "word"
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, text: &str, max_len: usize) -> Result<TokenizedNews, TokenizeError> {
        let unk = self.index[UNK_TOKEN];
        let body: Vec<u32> = basic_tokens(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(unk))
            .collect();
        wrap_and_pad(body, max_len, self.index[CLS_TOKEN], self.index[SEP_TOKEN], self.index[PAD_TOKEN])
    }

    fn decode(&self, token_ids: &[u32]) -> String {
        let mut words = Vec::new();
        for &id in token_ids {
            let token = match self.vocab.get(id as usize) {
                Some(t) => t.as_str(),
                None => UNK_TOKEN,
            };
            if token == PAD_TOKEN || token == CLS_TOKEN {
                continue;
            }
            words.push(token.to_string());
        }
        if words.last().map(String::as_str) == Some(SEP_TOKEN) {
            words.pop();
        }
        words.join(" ")
    }
}

/// Greedy longest-match WordPiece over a `vocab.txt` (one token per line),
/// `##` marking word-internal continuations.
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    name: String,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    max_chars_per_word: usize,
}

impl WordPieceTokenizer {
    pub fn from_vocab_file(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self, TokenizeError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| TokenizeError::BadVocab {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let vocab: Vec<String> = raw.lines().map(|l| l.trim_end().to_string()).collect();
        Self::from_vocab(vocab, name).map_err(|reason| TokenizeError::BadVocab {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn from_vocab(vocab: Vec<String>, name: impl Into<String>) -> Result<Self, String> {
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for special in SPECIAL_TOKENS {
            if !index.contains_key(special) {
                return Err(format!("vocabulary lacks required token {special}"));
            }
        }
        Ok(Self { name: name.into(), vocab, index, max_chars_per_word: 100 })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        if word.chars().count() > self.max_chars_per_word {
            out.push(self.index[UNK_TOKEN]);
            return;
        }
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut pieces = Vec::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate = format!("##{candidate}");
                }
                if let Some(&id) = self.index.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.index[UNK_TOKEN]);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, text: &str, max_len: usize) -> Result<TokenizedNews, TokenizeError> {
        let mut body = Vec::new();
        for token in basic_tokens(text) {
            if let Some(&id) = self.index.get(&token) {
                body.push(id);
            } else {
                self.word_pieces(&token, &mut body);
            }
        }
        wrap_and_pad(body, max_len, self.index[CLS_TOKEN], self.index[SEP_TOKEN], self.index[PAD_TOKEN])
    }

    fn decode(&self, token_ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in token_ids {
            let token = match self.vocab.get(id as usize) {
                Some(t) => t.as_str(),
                None => UNK_TOKEN,
            };
            if token == PAD_TOKEN || token == CLS_TOKEN {
                continue;
            }
            if let Some(tail) = token.strip_prefix("##") {
                out.push_str(tail);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
        if let Some(stripped) = out.strip_suffix(&format!(" {SEP_TOKEN}")) {
            out = stripped.to_string();
        }
        out
    }
}
