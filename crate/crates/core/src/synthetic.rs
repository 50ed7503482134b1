//! Synthetic category-driven datasets for smoke tests and signal
//! experiments.
//!
//! Titles draw from a shared noise pool and carry no category information;
//! clicks depend only on each user's preferred category. Fixture
//! descriptions give every category a distinctive vocabulary, so a model
//! can separate categories through description text but not through titles
//! alone.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::describe::{build_prompt, word_count, CategoryDescription, DescriptionCache};
use crate::mind::{category_key, Candidate, Impression, NewsArticle, NewsCatalog};

const MAINS: [&str; 8] = [
    "arbor", "breeze", "cobble", "drift", "ember", "fjord", "grove", "harbor",
];
const SUBS: [&str; 2] = ["north", "south"];

const TITLE_NOISE: [&str; 16] = [
    "daily", "update", "briefing", "notes", "roundup", "report", "overview", "recap", "digest",
    "bulletin", "today", "weekly", "morning", "evening", "latest", "summary",
];

/// Distinct content words; category `c` owns the slice `[8c, 8c + 8)`.
const TOPIC_WORDS: [&str; 128] = [
    "orchard", "vineyard", "harvest", "pruning", "soil", "irrigation", "grafting", "compost",
    "sailing", "regatta", "mast", "rigging", "spinnaker", "mooring", "tide", "knots",
    "masonry", "mortar", "scaffold", "granite", "chisel", "keystone", "archway", "quarry",
    "glacier", "moraine", "crevasse", "icefall", "serac", "firn", "altitude", "basecamp",
    "forge", "anvil", "bellows", "quench", "tempering", "ingot", "smelting", "alloy",
    "kayak", "paddle", "rapids", "portage", "eddy", "whitewater", "gorge", "outfitter",
    "canopy", "understory", "sapling", "lichen", "fungi", "mycelium", "deadwood", "thicket",
    "lighthouse", "breakwater", "dockyard", "ferry", "cargo", "customs", "quay", "ballast",
    "telescope", "nebula", "quasar", "parallax", "aperture", "eyepiece", "transit", "occultation",
    "pottery", "kiln", "glaze", "wheel", "slip", "bisque", "stoneware", "porcelain",
    "apiary", "hive", "nectar", "pollen", "swarm", "queen", "drone", "honeycomb",
    "falconry", "talon", "plumage", "raptor", "perch", "jess", "quarry2", "mews",
    "geyser", "caldera", "magma", "fumarole", "basalt", "obsidian", "tephra", "vent",
    "loom", "warp", "weft", "shuttle", "dye", "fiber", "spindle", "tapestry",
    "orchestra", "podium", "overture", "crescendo", "libretto", "aria", "encore", "rehearsal",
    "archive", "manuscript", "vellum", "scriptorium", "folio", "codex", "palimpsest", "ledger",
];

/// Shape of a generated dataset.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Number of categories; at most 16, built from main/sub pairs.
    pub n_categories: usize,
    pub n_articles: usize,
    pub n_train_impressions: usize,
    pub n_eval_impressions: usize,
    /// History items per impression.
    pub history_len: usize,
    /// Non-clicked candidates per impression (one click each).
    pub negatives_per_impression: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_categories: 10,
            n_articles: 200,
            n_train_impressions: 1000,
            n_eval_impressions: 300,
            history_len: 8,
            negatives_per_impression: 4,
            seed: 17,
        }
    }
}

pub struct SyntheticData {
    pub catalog: NewsCatalog,
    pub train: Vec<Impression>,
    pub eval: Vec<Impression>,
    pub descriptions: DescriptionCache,
}

impl SyntheticData {
    /// Category texts as a fixture-client map (`key -> text`).
    pub fn fixture_entries(&self) -> BTreeMap<String, String> {
        self.descriptions
            .iter()
            .map(|(k, d)| (k.to_string(), d.text.clone()))
            .collect()
    }
}

fn category_of(index: usize) -> (&'static str, &'static str) {
    (MAINS[index / SUBS.len()], SUBS[index % SUBS.len()])
}

/// A fixed set of noise titles. Articles reuse them round-robin so every
/// title string appears in every category equally often: titles carry no
/// category information even through memorization.
fn noise_titles(rng: &mut ChaCha20Rng, count: usize) -> Vec<String> {
    (0..count)
        .map(|_| {
            let words = rng.gen_range(4..=7);
            (0..words)
                .map(|_| *TITLE_NOISE.choose(rng).expect("non-empty pool"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn description_text(category_index: usize) -> String {
    let words = &TOPIC_WORDS[category_index * 8..category_index * 8 + 8];
    format!(
        "Coverage of {}, {}, and {} stories, with regular reporting on {}, {}, {}, {}, and {}.",
        words[0], words[1], words[2], words[3], words[4], words[5], words[6], words[7]
    )
}

fn make_impression(
    id: usize,
    user_id: String,
    rng: &mut ChaCha20Rng,
    spec: &SyntheticSpec,
    by_category: &[Vec<String>],
    preferred: usize,
) -> Impression {
    let pool = &by_category[preferred];
    let history: Vec<String> = pool
        .choose_multiple(rng, spec.history_len.min(pool.len()))
        .cloned()
        .collect();

    let mut candidates = Vec::with_capacity(spec.negatives_per_impression + 1);
    candidates.push(Candidate {
        news_id: pool.choose(rng).expect("articles exist").clone(),
        clicked: true,
    });
    for _ in 0..spec.negatives_per_impression {
        let mut other = rng.gen_range(0..spec.n_categories);
        while other == preferred {
            other = rng.gen_range(0..spec.n_categories);
        }
        candidates.push(Candidate {
            news_id: by_category[other].choose(rng).expect("articles exist").clone(),
            clicked: false,
        });
    }
    candidates.shuffle(rng);

    Impression {
        impression_id: format!("I{id}"),
        user_id,
        time_raw: "11/15/2019 8:00:00 AM".to_string(),
        timestamp: None,
        history,
        candidates,
    }
}

/// Generate a dataset where clicks follow category affinity only.
pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.n_categories >= 2, "need at least two categories");
    assert!(
        spec.n_categories <= MAINS.len() * SUBS.len(),
        "at most {} categories supported",
        MAINS.len() * SUBS.len()
    );
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let n_titles = (spec.n_articles / spec.n_categories).clamp(1, 20);
    let titles = noise_titles(&mut rng, n_titles);
    let mut articles = Vec::with_capacity(spec.n_articles);
    let mut by_category: Vec<Vec<String>> = vec![Vec::new(); spec.n_categories];
    for i in 0..spec.n_articles {
        let cat = i % spec.n_categories;
        let (main, sub) = category_of(cat);
        let news_id = format!("N{i:04}");
        by_category[cat].push(news_id.clone());
        articles.push(NewsArticle {
            news_id,
            category: main.to_string(),
            subcategory: sub.to_string(),
            title: titles[(i / spec.n_categories) % n_titles].clone(),
            abstract_text: None,
            url: None,
        });
    }
    let catalog = NewsCatalog::from_articles(articles);

    let mut descriptions = DescriptionCache::in_memory();
    for cat in 0..spec.n_categories {
        let (main, sub) = category_of(cat);
        let key = category_key(&NewsArticle {
            news_id: String::new(),
            category: main.to_string(),
            subcategory: sub.to_string(),
            title: "x".to_string(),
            abstract_text: None,
            url: None,
        });
        let text = description_text(cat);
        descriptions.insert(CategoryDescription {
            word_count: word_count(&text),
            prompt_fingerprint: build_prompt(&key).fingerprint(),
            generator_model: "fixture".to_string(),
            key,
            text,
        });
    }

    let n_train_users = (spec.n_train_impressions / 4).max(1);
    let train_prefs: Vec<usize> = (0..n_train_users)
        .map(|_| rng.gen_range(0..spec.n_categories))
        .collect();
    let train: Vec<Impression> = (0..spec.n_train_impressions)
        .map(|i| {
            let user = rng.gen_range(0..n_train_users);
            make_impression(
                i,
                format!("U{user}"),
                &mut rng,
                spec,
                &by_category,
                train_prefs[user],
            )
        })
        .collect();

    let eval: Vec<Impression> = (0..spec.n_eval_impressions)
        .map(|i| {
            let preferred = rng.gen_range(0..spec.n_categories);
            make_impression(
                spec.n_train_impressions + i,
                format!("E{i}"),
                &mut rng,
                spec,
                &by_category,
                preferred,
            )
        })
        .collect();

    SyntheticData { catalog, train, eval, descriptions }
}
