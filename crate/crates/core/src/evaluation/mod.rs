//! Next-item ranking metrics and the selector comparison harness.

mod compare;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use compare::{
    compare_selectors, compare_with, prepare_shared, select_subset, subset_samples, EvalReport,
    EvalRow, SharedArtifacts, SummaryRow,
};

use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::target::TargetParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_evaluated: usize,
    /// Test samples whose target is outside the catalog.
    pub n_skipped: usize,
}

impl RankingMetrics {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall[&k]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[&k]
    }

    /// Both metrics non-decreasing in `K`, NDCG never above recall.
    pub fn is_consistent(&self) -> bool {
        let mono = |m: &BTreeMap<usize, f64>| m.values().zip(m.values().skip(1)).all(|(a, b)| a <= b);
        mono(&self.recall)
            && mono(&self.ndcg)
            && self
                .ndcg
                .iter()
                .all(|(k, n)| (0.0..=1.0).contains(n) && *n <= self.recall[k] + 1e-12)
    }
}

/// 1-based rank of `target` among all items not in `history` (the target
/// itself always competes). Ties go to the lower item index.
pub fn rank_of_target(scores: &[f64], history: &[usize], target: usize) -> usize {
    let excluded: HashSet<usize> = history.iter().copied().filter(|&i| i != target).collect();
    let y = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && !excluded.contains(&j) && (s > y || (s == y && j < target)))
        .count()
}

/// `1 / log2(1 + rank)` within the cutoff, else 0.
pub fn ndcg_for_rank(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / (1.0 + rank as f64).log2()
    } else {
        0.0
    }
}

/// Ranks the catalog for every test sequence with `score` and averages
/// Recall@K and NDCG@K.
pub fn rank_and_score<F>(score: F, test: &[UserSequence], ks: &[usize]) -> Result<RankingMetrics>
where
    F: Fn(&UserSequence) -> Vec<f64> + Sync,
{
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("cutoffs must be positive".into()));
    }
    let ranks: Vec<Option<usize>> = test
        .par_iter()
        .map(|s| {
            let scores = score(s);
            (s.target < scores.len()).then(|| rank_of_target(&scores, &s.history, s.target))
        })
        .collect();
    let evaluated: Vec<usize> = ranks.iter().flatten().copied().collect();
    let n = evaluated.len();
    let mean = |f: &dyn Fn(usize) -> f64| {
        if n == 0 {
            0.0
        } else {
            evaluated.iter().map(|&r| f(r)).sum::<f64>() / n as f64
        }
    };
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        recall.insert(k, mean(&|r| if r <= k { 1.0 } else { 0.0 }));
        ndcg.insert(k, mean(&|r| ndcg_for_rank(r, k)));
    }
    let metrics = RankingMetrics {
        recall,
        ndcg,
        n_evaluated: n,
        n_skipped: test.len() - n,
    };
    debug_assert!(metrics.is_consistent());
    Ok(metrics)
}

/// [`rank_and_score`] with the target model's logits.
pub fn evaluate_target(params: &TargetParams, test: &[UserSequence], ks: &[usize]) -> Result<RankingMetrics> {
    rank_and_score(|s| params.logits(s), test, ks)
}

#[cfg(test)]
mod tests;
