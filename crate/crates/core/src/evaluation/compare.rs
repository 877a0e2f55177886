use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{evaluate_target, RankingMetrics};
use crate::config::PipelineConfig;
use crate::dataset::{Dataset, UserSequence};
use crate::error::{Error, Result};
use crate::influence::{influence_scores, SampleScore};
use crate::selection::{baseline_select, coverage_select, overall_scores, SelectionConfig, Strategy, Subset};
use crate::surrogate::{train_surrogate, SurrogateParams};
use crate::target::{effort_scores, finetune_fewshot, pretrain_target, TargetParams};

/// Everything the strategies share: one surrogate, one influence pass, one
/// pretrained target and its effort scores.
#[derive(Debug, Clone)]
pub struct SharedArtifacts {
    pub surrogate: SurrogateParams,
    pub influence: Vec<SampleScore>,
    pub pretrained: TargetParams,
    pub effort: Vec<SampleScore>,
    /// Wall-clock seconds per shared phase.
    pub phases: BTreeMap<String, f64>,
}

pub fn prepare_shared(data: &Dataset, cfg: &PipelineConfig) -> Result<SharedArtifacts> {
    let mut phases = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, phases: &mut BTreeMap<String, f64>| {
        phases.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };
    let surrogate = train_surrogate(data, &cfg.surrogate.model, &cfg.surrogate.train)?.params;
    lap("train_surrogate", &mut phases);
    let influence = influence_scores(&surrogate, &data.train, &cfg.influence)?.scores;
    lap("score_influence", &mut phases);
    let pretrained = pretrain_target(data, &cfg.target.model)?.params;
    lap("pretrain_target", &mut phases);
    let effort = effort_scores(&pretrained, &data.train)?.efforts;
    lap("score_effort", &mut phases);
    Ok(SharedArtifacts {
        surrogate,
        influence,
        pretrained,
        effort,
        phases,
    })
}

/// Runs one strategy with the given selection settings.
pub fn select_subset(
    strategy: Strategy,
    data: &Dataset,
    shared: &SharedArtifacts,
    cfg: &SelectionConfig,
) -> Result<Subset> {
    let cfg = SelectionConfig {
        strategy,
        ..cfg.clone()
    };
    match strategy {
        Strategy::Dealrec => {
            let mut records = overall_scores(&shared.influence, &shared.effort, cfg.lambda, data.train.len())?;
            coverage_select(&mut records, &cfg)
        }
        _ => baseline_select(strategy, &data.train, Some(&shared.surrogate), &cfg),
    }
}

/// The training samples named by `subset`, in selection order.
pub fn subset_samples(train: &[UserSequence], subset: &Subset) -> Result<Vec<UserSequence>> {
    let by_id: HashMap<String, &UserSequence> = train.iter().map(|s| (s.sample_id(), s)).collect();
    let mut missing = Vec::new();
    let picked = subset
        .selected
        .iter()
        .filter_map(|id| {
            let s = by_id.get(id).map(|s| (*s).clone());
            if s.is_none() {
                missing.push(id.clone());
            }
            s
        })
        .collect();
    if missing.is_empty() {
        Ok(picked)
    } else {
        Err(Error::MismatchedIds(missing))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// A strategy name, or `full` for fine-tuning on the whole training set.
    pub strategy: String,
    pub seed: u64,
    pub metrics: Option<RankingMetrics>,
    pub error: Option<String>,
    pub select_s: f64,
    pub finetune_s: f64,
    pub evaluate_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// The pretrained target before any fine-tuning.
    pub pretrained: RankingMetrics,
    pub rows: Vec<EvalRow>,
    pub summary: Vec<SummaryRow>,
    pub phases: BTreeMap<String, f64>,
}

/// Prepares the shared artifacts, then evaluates every (strategy, seed).
pub fn compare_selectors(
    data: &Dataset,
    strategies: &[Strategy],
    seeds: &[u64],
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    let shared = prepare_shared(data, cfg)?;
    compare_with(data, &shared, strategies, seeds, cfg)
}

/// For each (strategy, seed): select, fine-tune from the shared pretrained
/// target, rank the test set. A failing run is recorded and the rest go on.
pub fn compare_with(
    data: &Dataset,
    shared: &SharedArtifacts,
    strategies: &[Strategy],
    seeds: &[u64],
    cfg: &PipelineConfig,
) -> Result<EvalReport> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("need at least one strategy and one seed".into()));
    }
    let ks = &cfg.evaluation.ks;
    let started = Instant::now();
    let pretrained = evaluate_target(&shared.pretrained, &data.test, ks)?;
    let mut phases = shared.phases.clone();
    phases.insert("evaluate_pretrained".into(), started.elapsed().as_secs_f64());

    let mut runs: Vec<(String, Option<Strategy>)> =
        strategies.iter().map(|s| (s.name().to_string(), Some(*s))).collect();
    if cfg.evaluation.full_finetune {
        runs.push(("full".into(), None));
    }
    let mut rows = Vec::new();
    for (name, strategy) in &runs {
        for &seed in seeds {
            let row = run_one(data, shared, *strategy, seed, cfg);
            match &row.error {
                Some(e) => warn!("{name} seed {seed} failed: {e}"),
                None => info!("{name} seed {seed} done"),
            }
            rows.push(EvalRow {
                strategy: name.clone(),
                ..row
            });
        }
    }
    let summary = summarize(&rows, ks);
    Ok(EvalReport {
        ks: ks.clone(),
        pretrained,
        rows,
        summary,
        phases,
    })
}

fn run_one(
    data: &Dataset,
    shared: &SharedArtifacts,
    strategy: Option<Strategy>,
    seed: u64,
    cfg: &PipelineConfig,
) -> EvalRow {
    let mut row = EvalRow {
        strategy: String::new(),
        seed,
        metrics: None,
        error: None,
        select_s: 0.0,
        finetune_s: 0.0,
        evaluate_s: 0.0,
    };
    let result = (|| -> Result<RankingMetrics> {
        let t = Instant::now();
        let samples = match strategy {
            Some(strategy) => {
                let sel = SelectionConfig {
                    seed,
                    ..cfg.selection.clone()
                };
                subset_samples(&data.train, &select_subset(strategy, data, shared, &sel)?)?
            }
            None => data.train.clone(),
        };
        row.select_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let tcfg = crate::optim::TrainConfig {
            seed,
            ..cfg.target.finetune.clone()
        };
        let tuned = finetune_fewshot(&shared.pretrained, &samples, &tcfg)?.params;
        row.finetune_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let metrics = evaluate_target(&tuned, &data.test, &cfg.evaluation.ks)?;
        row.evaluate_s = t.elapsed().as_secs_f64();
        Ok(metrics)
    })();
    match result {
        Ok(m) => row.metrics = Some(m),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn summarize(rows: &[EvalRow], ks: &[usize]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.strategy.as_str()) {
            names.push(&r.strategy);
        }
    }
    let mut out = Vec::new();
    for name in names {
        let ok: Vec<&RankingMetrics> = rows
            .iter()
            .filter(|r| r.strategy == name)
            .filter_map(|r| r.metrics.as_ref())
            .collect();
        if ok.is_empty() {
            continue;
        }
        for metric in ["recall", "ndcg"] {
            for &k in ks {
                let xs: Vec<f64> = ok
                    .iter()
                    .map(|m| if metric == "recall" { m.recall_at(k) } else { m.ndcg_at(k) })
                    .collect();
                let (mean, std) = mean_std(&xs);
                out.push(SummaryRow {
                    strategy: name.to_string(),
                    metric: metric.into(),
                    k,
                    mean,
                    std,
                    n_seeds: xs.len(),
                });
            }
        }
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    /// Mean over seeds, if the strategy produced any result.
    pub fn mean(&self, strategy: &str, metric: &str, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.strategy == strategy && r.metric == metric && r.k == k)
            .map(|r| r.mean)
    }

    /// The metric for one (strategy, seed) run.
    pub fn value(&self, strategy: &str, seed: u64, metric: &str, k: usize) -> Option<f64> {
        let m = self
            .rows
            .iter()
            .find(|r| r.strategy == strategy && r.seed == seed)?
            .metrics
            .as_ref()?;
        Some(if metric == "recall" { m.recall_at(k) } else { m.ndcg_at(k) })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// Flat rows `strategy,seed,metric,K,value,wallclock_s`; failed runs get
    /// one row with metric `failed` and an empty value.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["strategy", "seed", "metric", "K", "value", "wallclock_s"])
            .expect("in-memory");
        for r in &self.rows {
            let wall = format!("{:.6}", r.select_s + r.finetune_s + r.evaluate_s);
            let seed = r.seed.to_string();
            match &r.metrics {
                Some(m) => {
                    for (metric, map) in [("recall", &m.recall), ("ndcg", &m.ndcg)] {
                        for (k, v) in map {
                            w.write_record([&r.strategy, &seed, metric, &k.to_string(), &v.to_string(), &wall])
                                .expect("in-memory");
                        }
                    }
                }
                None => w
                    .write_record([r.strategy.as_str(), &seed, "failed", "0", "", &wall])
                    .expect("in-memory"),
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// Fixed-width table of mean ± std per strategy.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<10}", "strategy").unwrap();
        for metric in ["R", "N"] {
            for k in &self.ks {
                write!(out, " {:>17}", format!("{metric}@{k}")).unwrap();
            }
        }
        out.push('\n');
        let mut names: Vec<&str> = Vec::new();
        for r in &self.summary {
            if !names.contains(&r.strategy.as_str()) {
                names.push(&r.strategy);
            }
        }
        for name in names {
            write!(out, "{name:<10}").unwrap();
            for metric in ["recall", "ndcg"] {
                for &k in &self.ks {
                    let r = self
                        .summary
                        .iter()
                        .find(|r| r.strategy == name && r.metric == metric && r.k == k)
                        .expect("summary covers every cutoff");
                    write!(out, " {:>17}", format!("{:.4}±{:.4}", r.mean, r.std)).unwrap();
                }
            }
            out.push('\n');
        }
        write!(out, "{:<10}", "pretrained").unwrap();
        for at in [RankingMetrics::recall_at, RankingMetrics::ndcg_at] {
            for &k in &self.ks {
                write!(out, " {:>17}", format!("{:.4}", at(&self.pretrained, k))).unwrap();
            }
        }
        out.push('\n');
        for r in self.rows.iter().filter(|r| r.error.is_some()) {
            writeln!(out, "{} seed {} failed: {}", r.strategy, r.seed, r.error.as_deref().unwrap_or("")).unwrap();
        }
        out
    }
}
