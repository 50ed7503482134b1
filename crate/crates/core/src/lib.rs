//! Content-based news recommendation with LLM-generated category descriptions.
//!
//! The pipeline has four stages:
//!
//! 1. [`mind`] parses the MIND-format news catalog (`news.tsv`) and click
//!    logs (`behaviors.tsv`) into typed records.
//! 2. [`describe`] asks a chat-completion model for a short description of
//!    every news category and caches the answers on disk.
//! 3. [`compose`] joins each article title with its category text (none,
//!    template, or generated description) and [`tokenizer`] turns the result
//!    into fixed-length token sequences.
//! 4. [`model`] encodes news and users with a trainable transformer text
//!    encoder plus one of three user-encoder strategies (see [`user`]),
//!    [`train`] fits it with a sampled softmax ranking loss, and [`metrics`]
//!    scores impressions with AUC / MRR / nDCG.
//!
//! [`synthetic`] generates small category-driven datasets for smoke tests
//! and end-to-end signal experiments.

pub mod compose;
pub mod describe;
pub mod encoder;
pub mod metrics;
pub mod mind;
pub mod model;
pub mod nn;
pub mod synthetic;
pub mod tokenizer;
pub mod train;
pub mod user;
