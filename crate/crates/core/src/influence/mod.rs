//! Influence of removing each training sample on the empirical risk.
//!
//! Removing `s` moves the parameters by roughly `(1/n) H⁻¹ ∇L(s)`; the
//! resulting first-order change of the mean training loss is
//! `(1/n) ∇L(s)ᵀ H⁻¹ v̄` with `v̄ = (1/n) Σ_i ∇L(s_i)`. Because `H⁻¹` is
//! symmetric, the vector `H⁻¹ v̄` is shared by every sample, so a single
//! stochastic inverse-HVP solve plus one inner product per sample scores the
//! whole training set.
//!
//! Sign convention: a positive score means removing the sample increases the
//! empirical risk.

mod lissa;
pub mod oracle;
pub mod validation;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use lissa::{estimate_ihvp, HvpConfig, IhvpEstimate, NORM_RECORD_INTERVAL};
pub use oracle::{exact_ihvp_oracle, loo_oracle, naive_influence_scores, ExactSolver, LooOutcome};

use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::model::{mean_gradient, per_sample, SampleModel};
use crate::vecops::{all_finite, dot};

/// A per-sample score keyed by sample and user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub user_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfluenceDiagnostics {
    /// Inverse-HVP recursions run; equals `repeats` unless a retry happened.
    pub solver_calls: usize,
    pub scale: f64,
    pub iterate_norms: Vec<Vec<(usize, f64)>>,
    /// Average gradient plus the inverse-HVP recursion. Wall-clock fields are
    /// left out of the JSON so reruns reproduce it byte for byte.
    #[serde(skip)]
    pub solve_seconds: f64,
    /// The per-sample inner products.
    #[serde(skip)]
    pub scoring_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceResult {
    /// `(1/n) ∇L(s)ᵀ (H + μI)⁻¹ v̄` per training sample, in training order.
    pub scores: Vec<SampleScore>,
    /// The shared vector `(H + μI)⁻¹ v̄`.
    pub ihvp: Vec<f64>,
    pub diagnostics: InfluenceDiagnostics,
}

/// `(1/n) Σ_i ∇L(s_i)`.
pub fn average_gradient<M: SampleModel + ?Sized>(model: &M, train: &[UserSequence]) -> Vec<f64> {
    mean_gradient(model, train)
}

/// Scores every training sample with one inverse-HVP solve.
pub fn influence_scores<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    cfg: &HvpConfig,
) -> Result<InfluenceResult> {
    let started = Instant::now();
    let v = average_gradient(model, train);
    influence_scores_against(model, train, &v, cfg, started)
}

/// Like [`influence_scores`] with an explicit right-hand side in place of the
/// average gradient.
pub fn influence_scores_for<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    v: &[f64],
    cfg: &HvpConfig,
) -> Result<InfluenceResult> {
    influence_scores_against(model, train, v, cfg, Instant::now())
}

fn influence_scores_against<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    v: &[f64],
    cfg: &HvpConfig,
    started: Instant,
) -> Result<InfluenceResult> {
    let est = estimate_ihvp(model, train, v, cfg)?;
    let solve_seconds = started.elapsed().as_secs_f64();
    let scoring = Instant::now();
    let values = score_against(model, train, &est.value);
    let scoring_seconds = scoring.elapsed().as_secs_f64();
    if !all_finite(&values) {
        return Err(Error::InvalidInput("non-finite influence score".into()));
    }
    let scores = train
        .iter()
        .zip(values)
        .map(|(s, value)| SampleScore {
            sample_id: s.sample_id(),
            user_id: s.user_id.clone(),
            value,
        })
        .collect();
    Ok(InfluenceResult {
        scores,
        ihvp: est.value,
        diagnostics: InfluenceDiagnostics {
            solver_calls: est.recursions,
            scale: est.scale,
            iterate_norms: est.norms,
            solve_seconds,
            scoring_seconds,
        },
    })
}

/// `(1/n) ∇L(s)ᵀ w` for every sample.
pub fn score_against<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    w: &[f64],
) -> Vec<f64> {
    let inv_n = 1.0 / train.len() as f64;
    per_sample(model, train, |m, s| inv_n * dot(&m.gradient(s), w))
}

/// Predicted `θ̂_{−s} − θ̂ ≈ (1/n) (H + μI)⁻¹ ∇L(s)`.
pub fn parameter_change<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    s: &UserSequence,
    cfg: &HvpConfig,
) -> Result<Vec<f64>> {
    let g = model.gradient(s);
    let mut est = estimate_ihvp(model, train, &g, cfg)?.value;
    let inv_n = 1.0 / train.len() as f64;
    est.iter_mut().for_each(|x| *x *= inv_n);
    Ok(est)
}

impl InfluenceResult {
    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.value).collect()
    }

    /// JSON lines `{"sample_id":…, "user_id":…, "influence":…}`.
    pub fn to_jsonl(&self) -> String {
        scores_to_jsonl(&self.scores, "influence")
    }

    /// Iterate norms every [`NORM_RECORD_INTERVAL`] steps plus solver counters.
    pub fn diagnostics_json(&self) -> String {
        serde_json::to_string_pretty(&self.diagnostics).expect("plain data")
    }
}

pub(crate) fn scores_to_jsonl(scores: &[SampleScore], field: &str) -> String {
    let mut out = String::new();
    for s in scores {
        let obj = serde_json::json!({
            "sample_id": s.sample_id,
            "user_id": s.user_id,
            field: s.value,
        });
        writeln!(out, "{obj}").unwrap();
    }
    out
}

/// Parses the JSON lines written by [`InfluenceResult::to_jsonl`] and its
/// effort counterpart; `field` names the value column.
pub fn scores_from_jsonl(text: &str, field: &str) -> Result<Vec<SampleScore>> {
    #[derive(Deserialize)]
    struct Row {
        sample_id: String,
        user_id: String,
        #[serde(flatten)]
        rest: serde_json::Map<String, serde_json::Value>,
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let row: Row = serde_json::from_str(line)?;
            let value = row
                .rest
                .get(field)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::InvalidInput(format!("missing {field:?} in {line}")))?;
            Ok(SampleScore {
                sample_id: row.sample_id,
                user_id: row.user_id,
                value,
            })
        })
        .collect()
}
