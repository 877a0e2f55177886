//! The convex toy on which the stochastic influence path is checked against
//! its brute-force oracles.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{estimate_ihvp, influence_scores, parameter_change, HvpConfig, LooOutcome};
use super::oracle::{exact_ihvp_oracle, loo_oracle, naive_influence_scores};
use crate::dataset::{build_sequences, generate_synthetic, SplitSpec, SyntheticSpec, UserSequence};
use crate::error::{Error, Result};
use crate::model::mean_gradient;
use crate::optim::TrainConfig;
use crate::surrogate::{train_surrogate_weighted, SurrogateConfig, TrainedSurrogate};
use crate::vecops::{cosine, relative_error, spearman};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_train: usize,
    pub data: SyntheticSpec,
    pub min_history: usize,
    pub surrogate: SurrogateConfig,
    /// Full-batch schedule; its weight decay doubles as the HVP damping.
    pub train: TrainConfig,
    pub hvp: HvpConfig,
    pub n_probes: usize,
    pub probe_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let weight_decay = 0.05;
        ToyConfig {
            n_train: 200,
            data: SyntheticSpec {
                n_users: 400,
                n_items: 50,
                density: 0.1,
                drift: 0.0,
                seed: 1,
                ..Default::default()
            },
            min_history: 1,
            surrogate: SurrogateConfig {
                embed_dim: 8,
                convex_mode: true,
                init_scale: 0.5,
                seed: 1,
            },
            train: TrainConfig {
                epochs: 20_000,
                batch_size: usize::MAX,
                learning_rate: 2.0,
                weight_decay,
                seed: 0,
                tolerance: Some(1e-10),
            },
            hvp: HvpConfig {
                iterations: 5000,
                damping: weight_decay,
                scale: 10.0,
                repeats: 4,
                batch_per_step: 8,
                seed: 1,
                max_retries: 4,
            },
            n_probes: 30,
            probe_seed: 1,
        }
    }
}

impl ToyConfig {
    /// Same toy with every seed shifted by `offset`.
    pub fn reseeded(&self, offset: u64) -> Self {
        let mut c = self.clone();
        c.data.seed += offset;
        c.surrogate.seed += offset;
        c.hvp.seed += offset;
        c.probe_seed += offset;
        c
    }
}

pub struct ToyProblem {
    pub train: Vec<UserSequence>,
    pub n_items: usize,
    pub fitted: TrainedSurrogate,
}

pub fn build_toy(cfg: &ToyConfig) -> Result<ToyProblem> {
    let log = generate_synthetic(&cfg.data)?;
    let mut data = build_sequences(&log, &SplitSpec::default(), cfg.min_history)?;
    if data.train.len() < cfg.n_train {
        return Err(Error::InvalidConfig(format!(
            "toy data has {} training samples, need {}",
            data.train.len(),
            cfg.n_train
        )));
    }
    data.truncate_train(cfg.n_train);
    let fitted =
        train_surrogate_weighted(&data.train, data.n_items(), &cfg.surrogate, &cfg.train, None)?;
    Ok(ToyProblem {
        n_items: data.n_items(),
        train: data.train,
        fitted,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_train: usize,
    pub learnable_dim: usize,
    /// Stochastic vs exact `(H + μI)⁻¹ v̄`, relative L2.
    pub ihvp_relative_error: f64,
    /// Shared-vector scores vs one exact solve per sample, relative L2.
    pub single_solve_relative_error: f64,
    /// Influence scores vs leave-one-out risk changes over the probes.
    pub spearman: f64,
    /// Predicted vs retrained parameter change, per probe.
    pub parameter_cosines: Vec<f64>,
    pub unconverged_probes: usize,
}

impl ValidationReport {
    /// Thresholds the stochastic path must meet against its oracles.
    pub const MAX_IHVP_ERROR: f64 = 0.05;
    pub const MAX_SINGLE_SOLVE_ERROR: f64 = 1e-6;
    pub const MIN_SPEARMAN: f64 = 0.8;
    pub const MIN_COSINE: f64 = 0.9;

    /// One line per violated threshold; empty when everything holds.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.ihvp_relative_error <= Self::MAX_IHVP_ERROR) {
            out.push(format!("IHVP relative error {:.4} > {}", self.ihvp_relative_error, Self::MAX_IHVP_ERROR));
        }
        if !(self.single_solve_relative_error <= Self::MAX_SINGLE_SOLVE_ERROR) {
            out.push(format!(
                "single-solve relative error {:.2e} > {:e}",
                self.single_solve_relative_error,
                Self::MAX_SINGLE_SOLVE_ERROR
            ));
        }
        if !(self.spearman >= Self::MIN_SPEARMAN) {
            out.push(format!("Spearman {:.3} < {}", self.spearman, Self::MIN_SPEARMAN));
        }
        let worst = self.parameter_cosines.iter().copied().fold(f64::INFINITY, f64::min);
        if !(worst >= Self::MIN_COSINE) {
            out.push(format!("parameter-change cosine {worst:.3} < {}", Self::MIN_COSINE));
        }
        out
    }
}

/// Runs the whole oracle suite on one toy.
pub fn run_validation(cfg: &ToyConfig) -> Result<ValidationReport> {
    let toy = build_toy(cfg)?;
    let model = &toy.fitted.params;
    let damping = cfg.hvp.damping;

    let v = mean_gradient(model, &toy.train);
    let stochastic = estimate_ihvp(model, &toy.train, &v, &cfg.hvp)?.value;
    let exact = exact_ihvp_oracle(model, &toy.train, &v, damping)?;

    let shared = super::score_against(model, &toy.train, &exact);
    let naive = naive_influence_scores(model, &toy.train, damping)?;

    let scores = influence_scores(model, &toy.train, &cfg.hvp)?.values();
    let probes = pick_probes(toy.train.len(), cfg.n_probes, cfg.probe_seed);
    let (_, outcomes) = loo_oracle(&toy.train, toy.n_items, &cfg.surrogate, &cfg.train, &probes)?;
    let predicted: Vec<f64> = outcomes.iter().map(|o| scores[o.index]).collect();
    let actual: Vec<f64> = outcomes.iter().map(|o| o.risk_change).collect();

    let parameter_cosines = outcomes
        .iter()
        .map(|o: &LooOutcome| {
            let pred = parameter_change(model, &toy.train, &toy.train[o.index], &cfg.hvp)?;
            Ok(cosine(&pred, &o.delta_theta))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ValidationReport {
        n_train: toy.train.len(),
        learnable_dim: v.len(),
        ihvp_relative_error: relative_error(&stochastic, &exact),
        single_solve_relative_error: relative_error(&shared, &naive),
        spearman: spearman(&predicted, &actual),
        parameter_cosines,
        unconverged_probes: outcomes.iter().filter(|o| !o.converged).count(),
    })
}

/// `count` distinct sample indices drawn with `seed`.
pub fn pick_probes(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    idx
}
