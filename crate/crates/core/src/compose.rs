//! Encoder input composition: title alone, title + template sentence, or
//! title + generated category description, joined by the encoder's
//! separator token.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::describe::{DescriptionCache, CATEGORY_SENTENCE_PREFIX};
use crate::mind::{category_key, CategoryKey, NewsArticle};
use crate::tokenizer::{TokenizeError, TokenizedNews, Tokenizer};

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("no cached description for category {key}; run generate-descriptions first")]
    MissingDescription { key: CategoryKey },
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("corpus file: {0}")]
    CorpusIo(#[from] std::io::Error),
    #[error("corpus file line {line}: {source}")]
    CorpusFormat { line: usize, source: serde_json::Error },
}

/// The three experimental input variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    TitleOnly,
    TitleTemplate,
    TitleGenerated,
}

impl CompositionMode {
    pub const ALL: [CompositionMode; 3] = [
        CompositionMode::TitleOnly,
        CompositionMode::TitleTemplate,
        CompositionMode::TitleGenerated,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CompositionMode::TitleOnly => "title",
            CompositionMode::TitleTemplate => "template",
            CompositionMode::TitleGenerated => "generated",
        }
    }

    /// Whether the mode appends category text after the separator.
    pub fn is_augmented(&self) -> bool {
        !matches!(self, CompositionMode::TitleOnly)
    }
}

impl std::fmt::Display for CompositionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CompositionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "title" => Ok(CompositionMode::TitleOnly),
            "template" => Ok(CompositionMode::TitleTemplate),
            "generated" => Ok(CompositionMode::TitleGenerated),
            other => Err(format!(
                "unknown composition mode {other:?}; expected title, template, or generated"
            )),
        }
    }
}

/// The exact string fed to the news encoder for one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedNewsText {
    pub news_id: String,
    pub mode: CompositionMode,
    pub d_title: String,
    pub d_desc: Option<String>,
    pub full_text: String,
}

/// Compose the encoder input for `article` under `mode`. `sep` is the
/// separator surface form of the tokenizer in use. Title-only never
/// consults the cache; generated mode fails loudly on a missing key.
pub fn compose(
    article: &NewsArticle,
    mode: CompositionMode,
    descriptions: &DescriptionCache,
    sep: &str,
) -> Result<ComposedNewsText, ComposeError> {
    let d_title = article.title.clone();
    let d_desc = match mode {
        CompositionMode::TitleOnly => None,
        CompositionMode::TitleTemplate => Some(format!(
            "{CATEGORY_SENTENCE_PREFIX}{}",
            category_key(article)
        )),
        CompositionMode::TitleGenerated => {
            let key = category_key(article);
            let entry = descriptions
                .get(&key)
                .ok_or(ComposeError::MissingDescription { key })?;
            Some(entry.text.clone())
        }
    };
    let full_text = match &d_desc {
        None => d_title.clone(),
        Some(desc) => format!("{d_title} {sep} {desc}"),
    };
    Ok(ComposedNewsText {
        news_id: article.news_id.clone(),
        mode,
        d_title,
        d_desc,
        full_text,
    })
}

/// Tokenize a composed text to a fixed-length sequence.
pub fn tokenize(
    composed: &ComposedNewsText,
    tokenizer: &dyn Tokenizer,
    max_len: usize,
) -> Result<TokenizedNews, ComposeError> {
    Ok(tokenizer.encode(&composed.full_text, max_len)?)
}

/// Header line of a preprocessed-corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub schema: String,
    pub tokenizer: String,
    pub mode: CompositionMode,
    pub max_len: usize,
}

pub const CORPUS_SCHEMA: &str = "newsrec-corpus/1";

/// One record of a preprocessed-corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub news_id: String,
    pub full_text: String,
    pub token_ids: Vec<u32>,
}

/// Write composed+tokenized records as JSON lines: one header line, then one
/// record per news id.
pub fn write_corpus<W: Write>(
    mut out: W,
    header: &CorpusHeader,
    records: &[CorpusRecord],
) -> Result<(), ComposeError> {
    writeln!(out, "{}", serde_json::to_string(header).expect("header serializes"))?;
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(
    reader: R,
) -> Result<(CorpusHeader, Vec<CorpusRecord>), ComposeError> {
    let mut lines = reader.lines();
    let header_line = lines.next().transpose()?.unwrap_or_default();
    let header: CorpusHeader = serde_json::from_str(&header_line)
        .map_err(|source| ComposeError::CorpusFormat { line: 1, source })?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|source| ComposeError::CorpusFormat { line: i + 2, source })?;
        records.push(record);
    }
    Ok((header, records))
}
