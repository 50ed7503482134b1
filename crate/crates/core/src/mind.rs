//! MIND-format ingestion: news catalog and impression logs.
//!
//! `news.tsv` rows are `news_id \t category \t subcategory \t title \t
//! abstract \t url \t title_entities \t abstract_entities`; only the first
//! six columns are kept, the entity columns are discarded. `behaviors.tsv`
//! rows are `impression_id \t user_id \t time \t history \t impressions`
//! where history is a space-separated list of news ids and impressions is a
//! space-separated list of `newsid-0` / `newsid-1` tokens.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected at least {expected} tab-separated columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {field} is empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: candidate token {token:?} is missing a -0/-1 label suffix")]
    BadCandidate { line: usize, token: String },
    #[error("line {line}: impression has no candidates")]
    NoCandidates { line: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One catalog entry. Entity annotations from the raw file are not retained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: Option<String>,
    pub url: Option<String>,
}

impl NewsArticle {
    /// Serialize back to a `news.tsv` row (six columns, no entity columns).
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.news_id,
            self.category,
            self.subcategory,
            self.title,
            self.abstract_text.as_deref().unwrap_or(""),
            self.url.as_deref().unwrap_or(""),
        )
    }
}

/// Two-level category key in display form, e.g. `tv-golden-globes`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryKey(pub String);

impl CategoryKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CategoryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// `category + "-" + subcategory`, lowercased.
pub fn category_key(article: &NewsArticle) -> CategoryKey {
    CategoryKey(format!(
        "{}-{}",
        article.category.to_lowercase(),
        article.subcategory.to_lowercase()
    ))
}

/// One candidate of an impression with its click label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub news_id: String,
    pub clicked: bool,
}

/// One serving event: a user, their (possibly empty) click history, and a
/// labeled candidate list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    /// Raw time column, kept verbatim for round-tripping.
    pub time_raw: String,
    /// Leniently parsed timestamp; `None` when the raw form is unrecognized.
    pub timestamp: Option<NaiveDateTime>,
    /// Oldest first, as given in the log.
    pub history: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl Impression {
    pub fn n_positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.clicked).count()
    }

    pub fn n_negatives(&self) -> usize {
        self.candidates.len() - self.n_positives()
    }

    /// Serialize back to a `behaviors.tsv` row.
    pub fn to_tsv(&self) -> String {
        let history = self.history.join(" ");
        let candidates = self
            .candidates
            .iter()
            .map(|c| format!("{}-{}", c.news_id, c.clicked as u8))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.impression_id, self.user_id, self.time_raw, history, candidates
        )
    }
}

/// Parsed news catalog with duplicate bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct NewsCatalog {
    pub articles: Vec<NewsArticle>,
    /// Rows dropped because their `news_id` was already seen (first kept).
    pub duplicates_skipped: usize,
    index: HashMap<String, usize>,
}

impl NewsCatalog {
    /// Build a catalog from in-memory articles with the same keep-first
    /// duplicate rule as parsing.
    pub fn from_articles(articles: impl IntoIterator<Item = NewsArticle>) -> Self {
        let mut catalog = NewsCatalog::default();
        for article in articles {
            if catalog.index.contains_key(&article.news_id) {
                catalog.duplicates_skipped += 1;
                continue;
            }
            catalog
                .index
                .insert(article.news_id.clone(), catalog.articles.len());
            catalog.articles.push(article);
        }
        catalog
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, news_id: &str) -> Option<&NewsArticle> {
        self.index.get(news_id).map(|&i| &self.articles[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &NewsArticle> {
        self.articles.iter()
    }
}

/// Aggregate counts in the usual benchmark-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_news: usize,
    pub n_impressions: usize,
    pub n_clicks: usize,
}

impl DatasetStats {
    /// `key: value` lines for the CLI stats report.
    pub fn to_text(&self) -> String {
        format!(
            "users: {}\nnews: {}\nimpressions: {}\nclicks: {}\n",
            self.n_users, self.n_news, self.n_impressions, self.n_clicks
        )
    }
}

/// Reference counts for the full MIND split used in the published
/// comparison table; `stats` flags divergence from these as informational.
pub const REFERENCE_STATS: DatasetStats = DatasetStats {
    n_users: 94_057,
    n_news: 65_238,
    n_impressions: 230_117,
    n_clicks: 347_727,
};

/// Insert thousands separators: `94057` -> `"94,057"`.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn non_empty(value: &str, line: usize, field: &'static str) -> Result<String, IngestError> {
    let trimmed = value.trim();
    if trimmed.is_empty() {
        Err(IngestError::EmptyField { line, field })
    } else {
        Ok(trimmed.to_string())
    }
}

fn opt_column(columns: &[&str], idx: usize) -> Option<String> {
    columns
        .get(idx)
        .map(|s| s.trim_end_matches('\r'))
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
}

/// Parse a `news.tsv` stream. Order-preserving; duplicate ids keep the first
/// occurrence and bump `duplicates_skipped`.
pub fn parse_news<R: BufRead>(reader: R) -> Result<NewsCatalog, IngestError> {
    let mut catalog = NewsCatalog::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() < 4 {
            return Err(IngestError::ColumnCount {
                line: lineno,
                expected: 4,
                found: columns.len(),
            });
        }
        let article = NewsArticle {
            news_id: non_empty(columns[0], lineno, "news_id")?,
            category: non_empty(columns[1], lineno, "category")?.to_lowercase(),
            subcategory: non_empty(columns[2], lineno, "subcategory")?.to_lowercase(),
            title: non_empty(columns[3], lineno, "title")?,
            abstract_text: opt_column(&columns, 4),
            url: opt_column(&columns, 5),
        };
        if catalog.index.contains_key(&article.news_id) {
            catalog.duplicates_skipped += 1;
            continue;
        }
        catalog
            .index
            .insert(article.news_id.clone(), catalog.articles.len());
        catalog.articles.push(article);
    }
    Ok(catalog)
}

const BEHAVIOR_TIME_FORMATS: [&str; 2] = ["%m/%d/%Y %I:%M:%S %p", "%Y-%m-%d %H:%M:%S"];

fn parse_time(raw: &str) -> Option<NaiveDateTime> {
    BEHAVIOR_TIME_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw.trim(), fmt).ok())
}

/// Parse a `behaviors.tsv` stream.
pub fn parse_behaviors<R: BufRead>(reader: R) -> Result<Vec<Impression>, IngestError> {
    let mut impressions = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() < 5 {
            return Err(IngestError::ColumnCount {
                line: lineno,
                expected: 5,
                found: columns.len(),
            });
        }
        let history: Vec<String> = columns[3]
            .split_whitespace()
            .map(|s| s.to_string())
            .collect();
        let candidate_column = columns[4].trim();
        if candidate_column.is_empty() {
            return Err(IngestError::NoCandidates { line: lineno });
        }
        let mut candidates = Vec::new();
        for token in candidate_column.split_whitespace() {
            let (news_id, label) =
                token.rsplit_once('-').ok_or_else(|| IngestError::BadCandidate {
                    line: lineno,
                    token: token.to_string(),
                })?;
            let clicked = match label {
                "0" => false,
                "1" => true,
                _ => {
                    return Err(IngestError::BadCandidate {
                        line: lineno,
                        token: token.to_string(),
                    })
                }
            };
            if news_id.is_empty() {
                return Err(IngestError::BadCandidate {
                    line: lineno,
                    token: token.to_string(),
                });
            }
            candidates.push(Candidate {
                news_id: news_id.to_string(),
                clicked,
            });
        }
        let time_raw = columns[2].to_string();
        impressions.push(Impression {
            impression_id: non_empty(columns[0], lineno, "impression_id")?,
            user_id: non_empty(columns[1], lineno, "user_id")?,
            timestamp: parse_time(&time_raw),
            time_raw,
            history,
            candidates,
        });
    }
    Ok(impressions)
}

/// Deduplicated category keys in first-seen order.
pub fn build_category_vocab(articles: &[NewsArticle]) -> Vec<CategoryKey> {
    let mut seen = HashSet::new();
    let mut vocab = Vec::new();
    for article in articles {
        let key = category_key(article);
        if seen.insert(key.clone()) {
            vocab.push(key);
        }
    }
    vocab
}

/// Count distinct users, catalog size, impressions, and positive labels.
pub fn dataset_stats(catalog: &NewsCatalog, impressions: &[Impression]) -> DatasetStats {
    let users: HashSet<&str> = impressions.iter().map(|i| i.user_id.as_str()).collect();
    let clicks = impressions.iter().map(|i| i.n_positives()).sum();
    DatasetStats {
        n_users: users.len(),
        n_news: catalog.len(),
        n_impressions: impressions.len(),
        n_clicks: clicks,
    }
}
