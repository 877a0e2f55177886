//! Overall scores and subset selection.
//!
//! The overall score of a sample adds the influence term from the surrogate
//! to `λ` times the target's effort. Selection stratifies the overall scores
//! into `K` bins and walks them from the smallest upward, drawing an even
//! share of the remaining budget from each, so low- and high-score regions of
//! the data are both represented.

mod baselines;

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{baseline_select, el2n_scores, grand_scores, top_by_score};

use crate::error::{Error, Result};
use crate::influence::SampleScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub user_id: String,
    /// Stored influence value, `(1/n) gᵀ ihvp`.
    pub influence: f64,
    pub effort: f64,
    pub overall: f64,
    pub group_index: usize,
}

/// Subset size, either a fraction of the training set or an absolute count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Ratio(f64),
    Count(usize),
}

impl Budget {
    /// Number of samples to select from `n`.
    pub fn resolve(self, n: usize) -> Result<usize> {
        let count = match self {
            Budget::Count(c) => c,
            Budget::Ratio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::InvalidConfig(format!("budget ratio {r} outside (0, 1]")));
                }
                ((r * n as f64).floor() as usize).max(1)
            }
        };
        if count == 0 || count > n {
            return Err(Error::Budget { budget: count, n });
        }
        Ok(count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Dealrec,
    Random,
    Grand,
    El2n,
    Ccs,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Dealrec,
        Strategy::Random,
        Strategy::Grand,
        Strategy::El2n,
        Strategy::Ccs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dealrec => "dealrec",
            Strategy::Random => "random",
            Strategy::Grand => "grand",
            Strategy::El2n => "el2n",
            Strategy::Ccs => "ccs",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// `K` bins of equal width over `[min, max]`.
    EqualWidth,
    /// `K` bins holding (nearly) equal numbers of samples.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub budget: Budget,
    pub n_groups: usize,
    pub lambda: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub binning: Binning,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            budget: Budget::Ratio(0.02),
            n_groups: 50,
            lambda: 0.5,
            strategy: Strategy::Dealrec,
            seed: 0,
            binning: Binning::EqualWidth,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::InvalidConfig("n_groups must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// One stratum and what the selection took from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTally {
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
    pub taken: usize,
    /// Per-group budget in force when this group was visited.
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: usize,
    pub n_groups: usize,
    pub lambda: f64,
    /// Selected sample ids, in draw order.
    pub selected: Vec<String>,
    pub groups: Vec<GroupTally>,
}

impl Subset {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Combines stored influence values with effort:
/// `overall = influence / n + λ · effort`.
///
/// Records follow the order of `influence`; both inputs must cover the same
/// sample ids.
pub fn overall_scores(
    influence: &[SampleScore],
    effort: &[SampleScore],
    lambda: f64,
    n: usize,
) -> Result<Vec<ScoreRecord>> {
    let efforts: HashMap<&str, f64> = effort.iter().map(|e| (e.sample_id.as_str(), e.value)).collect();
    let a: BTreeSet<&str> = influence.iter().map(|s| s.sample_id.as_str()).collect();
    let b: BTreeSet<&str> = efforts.keys().copied().collect();
    if a != b || a.len() != influence.len() || b.len() != effort.len() {
        let mut diff: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
        if diff.is_empty() {
            diff.push("duplicate sample ids".into());
        }
        return Err(Error::MismatchedIds(diff));
    }
    if n == 0 {
        return Err(Error::InvalidInput("n must be positive".into()));
    }
    let inv_n = 1.0 / n as f64;
    influence
        .iter()
        .map(|s| {
            let effort = efforts[s.sample_id.as_str()];
            let overall = inv_n * s.value + lambda * effort;
            if !overall.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite overall score for {}", s.sample_id)));
            }
            Ok(ScoreRecord {
                sample_id: s.sample_id.clone(),
                user_id: s.user_id.clone(),
                influence: s.value,
                effort,
                overall,
                group_index: 0,
            })
        })
        .collect()
}

/// JSON lines, one record per sample.
pub fn records_to_jsonl(records: &[ScoreRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).expect("plain data")).unwrap();
    }
    out
}

/// Group index of every value. Returns the indices and the `(lo, hi)` range
/// of each group.
pub fn assign_groups(values: &[f64], k: usize, binning: Binning) -> (Vec<usize>, Vec<(f64, f64)>) {
    assert!(k >= 1);
    let n = values.len();
    if n == 0 {
        return (Vec::new(), vec![(0.0, 0.0); k]);
    }
    match binning {
        Binning::EqualWidth => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / k as f64;
            if width <= 0.0 || !width.is_finite() {
                warn!("all scores identical; selection degenerates to a uniform draw");
                let mut ranges = vec![(hi, hi); k];
                ranges[0] = (lo, hi);
                return (vec![0; n], ranges);
            }
            let groups = values
                .iter()
                .map(|&x| (((x - lo) / width).floor() as usize).min(k - 1))
                .collect();
            let ranges = (0..k)
                .map(|g| {
                    let end = if g + 1 == k { hi } else { lo + width * (g + 1) as f64 };
                    (lo + width * g as f64, end)
                })
                .collect();
            (groups, ranges)
        }
        Binning::Quantile => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let mut groups = vec![0; n];
            let mut ranges = vec![(f64::NAN, f64::NAN); k];
            for (rank, &i) in order.iter().enumerate() {
                let g = rank * k / n;
                groups[i] = g;
                let r = &mut ranges[g];
                if r.0.is_nan() {
                    r.0 = values[i];
                }
                r.1 = values[i];
            }
            (groups, ranges)
        }
    }
}

/// Stratified draw over `values`: returns selected indices (in draw order)
/// and per-group tallies.
pub fn stratified_select(
    values: &[f64],
    k: usize,
    budget: usize,
    binning: Binning,
    seed: u64,
) -> Result<(Vec<usize>, Vec<GroupTally>)> {
    let n = values.len();
    if k == 0 {
        return Err(Error::InvalidConfig("n_groups must be >= 1".into()));
    }
    if budget == 0 || budget > n {
        return Err(Error::Budget { budget, n });
    }
    let (assignment, ranges) = assign_groups(values, k, binning);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &g) in assignment.iter().enumerate() {
        members[g].push(i);
    }
    let mut tallies: Vec<GroupTally> = ranges
        .iter()
        .zip(&members)
        .map(|(&(lo, hi), m)| GroupTally { lo, hi, size: m.len(), taken: 0, quota: 0 })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(budget);
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut quota = budget / k;
    while !remaining.is_empty() {
        // Fewest members first; `remaining` stays sorted so ties go to the lower index.
        let pos = (0..remaining.len())
            .min_by_key(|&p| members[remaining[p]].len())
            .expect("non-empty");
        let g = remaining.remove(pos);
        let take = quota.min(members[g].len());
        for j in index::sample(&mut rng, members[g].len(), take) {
            let i = members[g][j];
            chosen[i] = true;
            selected.push(i);
        }
        tallies[g].taken = take;
        tallies[g].quota = quota;
        if !remaining.is_empty() {
            quota = (budget - selected.len()) / remaining.len();
        }
    }
    if selected.len() < budget {
        let pool: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
        for j in index::sample(&mut rng, pool.len(), budget - selected.len()) {
            let i = pool[j];
            selected.push(i);
            tallies[assignment[i]].taken += 1;
        }
    }
    Ok((selected, tallies))
}

/// Coverage-enhanced stratified selection over the records' overall scores;
/// fills in each record's `group_index`.
pub fn coverage_select(records: &mut [ScoreRecord], cfg: &SelectionConfig) -> Result<Subset> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("no score records".into()));
    }
    let budget = cfg.budget.resolve(records.len())?;
    let values: Vec<f64> = records.iter().map(|r| r.overall).collect();
    let (assignment, _) = assign_groups(&values, cfg.n_groups, cfg.binning);
    for (r, g) in records.iter_mut().zip(assignment) {
        r.group_index = g;
    }
    let (picked, groups) = stratified_select(&values, cfg.n_groups, budget, cfg.binning, cfg.seed)?;
    Ok(Subset {
        strategy: cfg.strategy,
        seed: cfg.seed,
        budget,
        n_groups: cfg.n_groups,
        lambda: cfg.lambda,
        selected: picked.into_iter().map(|i| records[i].sample_id.clone()).collect(),
        groups,
    })
}
