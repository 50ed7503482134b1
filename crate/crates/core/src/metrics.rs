//! Impression-level ranking metrics: AUC, MRR, nDCG@k, and their averages
//! over an impression log.
//!
//! AUC uses the rank-based Mann–Whitney statistic with tie-averaged ranks
//! (ties count half). MRR averages the reciprocal ranks of every positive.
//! nDCG uses binary gain with a `log2(rank + 1)` discount. Sorting is
//! stable with descending scores, so ties break by original candidate
//! order.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compose::ComposeError;
use crate::describe::DescriptionCache;
use crate::mind::{Impression, NewsCatalog};
use crate::model::{ModelError, Recommender};
use crate::tokenizer::Tokenizer;
use crate::train::tokenized_corpus;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: impression has {0}")]
    Undefined(&'static str),
    #[error("k must be at least 1")]
    BadCutoff,
    #[error("scores contain a non-finite value")]
    NonFiniteScores,
    #[error("labels and scores have different lengths ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_inputs(labels: &[u8], scores: &[f64]) -> Result<(usize, usize), EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScores);
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((n_pos, labels.len() - n_pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counting half. Undefined without at least one of each.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    let (n_pos, n_neg) = check_inputs(labels, scores)?;
    if n_pos == 0 {
        return Err(EvalError::Undefined("no positive candidate"));
    }
    if n_neg == 0 {
        return Err(EvalError::Undefined("no negative candidate"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Tie-averaged 1-based ranks over ascending scores.
    let mut positive_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let average_rank = (start + 1 + end + 1) as f64 / 2.0;
        for &i in &order[start..=end] {
            if labels[i] != 0 {
                positive_rank_sum += average_rank;
            }
        }
        start = end + 1;
    }

    let u = positive_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Indices sorted by descending score; stable, so ties keep original order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    order
}

/// Mean reciprocal rank over all positives.
pub fn mrr(labels: &[u8], scores: &[f64]) -> Result<f64, EvalError> {
    let (n_pos, _) = check_inputs(labels, scores)?;
    if n_pos == 0 {
        return Err(EvalError::Undefined("no positive candidate"));
    }
    let order = descending_order(scores);
    let sum: f64 = order
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i] != 0)
        .map(|(rank0, _)| 1.0 / (rank0 + 1) as f64)
        .sum();
    Ok(sum / n_pos as f64)
}

/// Binary-gain nDCG at cutoff `k`.
pub fn ndcg_at_k(labels: &[u8], scores: &[f64], k: usize) -> Result<f64, EvalError> {
    let (n_pos, _) = check_inputs(labels, scores)?;
    if k == 0 {
        return Err(EvalError::BadCutoff);
    }
    if n_pos == 0 {
        return Err(EvalError::Undefined("no positive candidate"));
    }
    let order = descending_order(scores);
    let discount = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .map(|(rank0, &i)| labels[i] as f64 * discount(rank0))
        .sum();
    let ideal: f64 = (0..n_pos.min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// Averaged metrics over an impression log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    /// Impressions contributing to the means.
    pub n_scored: usize,
    /// Impressions excluded for any reason; `n_scored + n_skipped` covers
    /// the whole log.
    pub n_skipped: usize,
    /// Skipped for lacking a positive or a negative.
    pub n_skipped_degenerate: usize,
    /// Skipped because they reference news absent from the catalog.
    pub n_skipped_unknown_news: usize,
}

impl MetricReport {
    /// Aligned plain-text table, metric columns in the conventional order.
    pub fn to_table(&self) -> String {
        format!(
            "{:<8}{:<8}{:<8}{:<8}\n{:<8.4}{:<8.4}{:<8.4}{:<8.4}\n",
            "AUC", "MRR", "nDCG@5", "nDCG@10", self.auc, self.mrr, self.ndcg5, self.ndcg10
        )
    }
}

/// Score every impression with the model and average the four metrics.
/// News vectors are computed once per unique news id.
pub fn evaluate(
    model: &Recommender,
    tokenizer: &dyn Tokenizer,
    catalog: &NewsCatalog,
    impressions: &[Impression],
    descriptions: &DescriptionCache,
) -> Result<MetricReport, EvalError> {
    let corpus = tokenized_corpus(catalog, &model.config, descriptions, tokenizer)?;

    // Unique news referenced by the log, first-seen order for determinism.
    let mut referenced: Vec<&str> = Vec::new();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for imp in impressions {
        for id in imp
            .history
            .iter()
            .chain(imp.candidates.iter().map(|c| &c.news_id))
        {
            if corpus.contains_key(id.as_str()) && !seen.contains_key(id.as_str()) {
                seen.insert(id.as_str(), referenced.len());
                referenced.push(id.as_str());
            }
        }
    }
    let vectors: Vec<Array1<f64>> = referenced
        .par_iter()
        .map(|id| model.encoder.encode_vector(&model.params, &corpus[*id]))
        .collect::<Result<_, _>>()
        .map_err(ModelError::from)?;

    let mut report = MetricReport {
        auc: 0.0,
        mrr: 0.0,
        ndcg5: 0.0,
        ndcg10: 0.0,
        n_scored: 0,
        n_skipped: 0,
        n_skipped_degenerate: 0,
        n_skipped_unknown_news: 0,
    };
    for imp in impressions {
        let known = imp
            .history
            .iter()
            .chain(imp.candidates.iter().map(|c| &c.news_id))
            .all(|id| seen.contains_key(id.as_str()));
        if !known {
            report.n_skipped += 1;
            report.n_skipped_unknown_news += 1;
            continue;
        }
        let n_pos = imp.n_positives();
        if n_pos == 0 || n_pos == imp.candidates.len() {
            report.n_skipped += 1;
            report.n_skipped_degenerate += 1;
            continue;
        }

        let start = imp.history.len().saturating_sub(model.config.history_len);
        let recent = &imp.history[start..];
        let mut history = Array2::zeros((recent.len(), model.config.d_news));
        for (row, id) in recent.iter().enumerate() {
            history.row_mut(row).assign(&vectors[seen[id.as_str()]]);
        }
        let pass = model.encode_user(&history, &imp.user_id)?;
        let user = pass.user_vector();

        let labels: Vec<u8> = imp.candidates.iter().map(|c| c.clicked as u8).collect();
        let scores: Vec<f64> = imp
            .candidates
            .iter()
            .map(|c| user.dot(&vectors[seen[c.news_id.as_str()]]))
            .collect();

        report.auc += auc(&labels, &scores)?;
        report.mrr += mrr(&labels, &scores)?;
        report.ndcg5 += ndcg_at_k(&labels, &scores, 5)?;
        report.ndcg10 += ndcg_at_k(&labels, &scores, 10)?;
        report.n_scored += 1;
    }

    if report.n_scored > 0 {
        let n = report.n_scored as f64;
        report.auc /= n;
        report.mrr /= n;
        report.ndcg5 /= n;
        report.ndcg10 /= n;
    }
    Ok(report)
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Independent brute-force reference implementations used by tests.

    /// All positive/negative pairs, counting ties as half.
    pub fn auc_pairwise(labels: &[u8], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li == 0 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn naive_order(scores: &[f64]) -> Vec<usize> {
        // Insertion of index keys one by one, strictly-greater swaps only,
        // which keeps equal scores in original order.
        let mut order: Vec<usize> = Vec::new();
        for i in 0..scores.len() {
            let mut at = order.len();
            while at > 0 && scores[order[at - 1]] < scores[i] {
                at -= 1;
            }
            order.insert(at, i);
        }
        order
    }

    pub fn mrr_naive(labels: &[u8], scores: &[f64]) -> f64 {
        let order = naive_order(scores);
        let mut total = 0.0;
        let mut count = 0.0;
        for (rank0, &i) in order.iter().enumerate() {
            if labels[i] != 0 {
                total += 1.0 / (rank0 as f64 + 1.0);
                count += 1.0;
            }
        }
        total / count
    }

    pub fn ndcg_naive(labels: &[u8], scores: &[f64], k: usize) -> f64 {
        let order = naive_order(scores);
        let mut dcg = 0.0;
        for (rank0, &i) in order.iter().take(k).enumerate() {
            dcg += labels[i] as f64 / ((rank0 + 2) as f64).log2();
        }
        let n_pos = labels.iter().filter(|&&l| l != 0).count();
        let mut idcg = 0.0;
        for rank0 in 0..n_pos.min(k) {
            idcg += 1.0 / ((rank0 + 2) as f64).log2();
        }
        dcg / idcg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_on_perfect_and_inverted_rankings() {
        assert_eq!(auc(&[1, 0], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[1, 0], &[0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn auc_counts_mixed_pairs() {
        let value = auc(&[1, 0, 1, 0], &[0.8, 0.7, 0.6, 0.5]).unwrap();
        assert!((value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_ties_count_half() {
        let value = auc(&[1, 0], &[0.5, 0.5]).unwrap();
        assert!((value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_impressions_are_undefined() {
        assert!(matches!(auc(&[1, 1], &[0.1, 0.2]), Err(EvalError::Undefined(_))));
        assert!(matches!(auc(&[0, 0], &[0.1, 0.2]), Err(EvalError::Undefined(_))));
        assert!(matches!(mrr(&[0, 0], &[0.1, 0.2]), Err(EvalError::Undefined(_))));
        assert!(matches!(
            ndcg_at_k(&[0, 0], &[0.1, 0.2], 5),
            Err(EvalError::Undefined(_))
        ));
    }

    #[test]
    fn mrr_hand_cases() {
        assert_eq!(mrr(&[1, 0, 0], &[0.9, 0.5, 0.1]).unwrap(), 1.0);
        let value = mrr(&[0, 1, 0, 1], &[0.9, 0.8, 0.3, 0.1]).unwrap();
        assert!((value - 0.375).abs() < 1e-12);
        let value = mrr(&[1, 1, 1], &[0.9, 0.8, 0.7]).unwrap();
        assert!((value - 11.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn ndcg_hand_cases() {
        assert_eq!(ndcg_at_k(&[1, 0, 0], &[0.9, 0.5, 0.1], 5).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[0, 1], &[0.9, 0.5], 1).unwrap(), 0.0);
        let value = ndcg_at_k(&[1, 0, 0, 1], &[0.9, 0.8, 0.7, 0.6], 5).unwrap();
        let expected = (1.0 + 1.0 / 5.0f64.log2()) / (1.0 + 1.0 / 3.0f64.log2());
        assert!((value - expected).abs() < 1e-12);
        assert!((value - 0.8772).abs() < 1e-4);
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let labels = [1u8, 0, 1, 0, 0, 1, 0];
        let scores = [0.3, -0.2, 0.9, 0.3, 0.11, -0.5, 0.0];
        let base = auc(&labels, &scores).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.5 * s + 11.0).collect();
        assert!((base - auc(&labels, &exp).unwrap()).abs() < 1e-12);
        assert!((base - auc(&labels, &affine).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_match_oracles_on_random_impressions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.gen_range(2..30);
            let mut labels = vec![0u8; n];
            labels[0] = 1;
            for l in labels.iter_mut().skip(1) {
                *l = rng.gen_bool(0.3) as u8;
            }
            if labels.iter().all(|&l| l == 1) {
                labels[n - 1] = 0;
            }
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.25) {
                        0.5
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            let a = auc(&labels, &scores).unwrap();
            assert!((a - oracle::auc_pairwise(&labels, &scores)).abs() < 1e-12);
            let m = mrr(&labels, &scores).unwrap();
            assert!((m - oracle::mrr_naive(&labels, &scores)).abs() < 1e-12);
            for k in [1, 5, 10] {
                let nd = ndcg_at_k(&labels, &scores, k).unwrap();
                assert!((nd - oracle::ndcg_naive(&labels, &scores, k)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval_and_ndcg_grows_with_k(
            seed in 0u64..500,
            n in 3usize..25,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut labels = vec![0u8; n];
            labels[rng.gen_range(0..n)] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

            let a = auc(&labels, &scores).unwrap();
            let m = mrr(&labels, &scores).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&m));
            let mut last = 0.0;
            for k in 1..=n {
                let nd = ndcg_at_k(&labels, &scores, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&nd));
                prop_assert!(nd + 1e-12 >= last, "ndcg must not shrink with k");
                last = nd;
            }
        }

        #[test]
        fn permutation_invariance_with_distinct_scores(seed in 0u64..200) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels = [1u8, 0, 0, 1, 0, 0, 1, 0];
            let scores = [0.9, 0.1, 0.85, 0.4, 0.2, 0.7, 0.3, 0.6];
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut rng);
            let plabels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let pscores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();

            prop_assert!((auc(&labels, &scores).unwrap() - auc(&plabels, &pscores).unwrap()).abs() < 1e-12);
            prop_assert!((mrr(&labels, &scores).unwrap() - mrr(&plabels, &pscores).unwrap()).abs() < 1e-12);
            prop_assert!((ndcg_at_k(&labels, &scores, 5).unwrap() - ndcg_at_k(&plabels, &pscores, 5).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn report_table_is_aligned() {
        let report = MetricReport {
            auc: 0.713,
            mrr: 0.326,
            ndcg5: 0.363,
            ndcg10: 0.425,
            n_scored: 10,
            n_skipped: 0,
            n_skipped_degenerate: 0,
            n_skipped_unknown_news: 0,
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("AUC"));
        assert!(lines[0].contains("nDCG@10"));
        assert!(lines[1].starts_with("0.7130"));
    }
}
