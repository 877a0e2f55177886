//! Damped, scaled stochastic Neumann-series estimate of `(H + μI)⁻¹ v`.
//!
//! With `H = (1/n) Σ_i ∇²L(s_i)` the recursion
//!
//! ```text
//! h_0 = v
//! h_t = v + h_{t−1} − (Ĥ_t h_{t−1} + μ h_{t−1}) / σ
//! ```
//!
//! where `Ĥ_t` is the Hessian of a uniformly drawn mini-batch, converges in
//! expectation to `σ (H + μI)⁻¹ v` whenever `σ > λ_max(H) + μ`. The estimate
//! returned is `h_T / σ`, averaged over independent repeats.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::model::SampleModel;
use crate::vecops::{all_finite, axpy, norm};

/// Iterate norms are recorded every this many steps.
pub const NORM_RECORD_INTERVAL: usize = 100;
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HvpConfig {
    pub iterations: usize,
    pub damping: f64,
    pub scale: f64,
    pub repeats: usize,
    pub batch_per_step: usize,
    pub seed: u64,
    /// Times the scale is doubled after a divergence before giving up.
    pub max_retries: usize,
}

impl Default for HvpConfig {
    fn default() -> Self {
        HvpConfig {
            iterations: 5000,
            damping: 0.01,
            scale: 10.0,
            repeats: 1,
            batch_per_step: 1,
            seed: 0,
            max_retries: 4,
        }
    }
}

impl HvpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping >= 0.0) || !(self.scale > 0.0) {
            return Err(Error::InvalidConfig(
                "damping must be >= 0 and scale > 0".into(),
            ));
        }
        if self.repeats == 0 || self.batch_per_step == 0 {
            return Err(Error::InvalidConfig(
                "repeats and batch_per_step must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IhvpEstimate {
    pub value: Vec<f64>,
    /// Scale actually used, after any divergence retries.
    pub scale: f64,
    /// Number of recursions run (one per repeat, plus retried attempts).
    pub recursions: usize,
    /// `(step, ‖h_t‖)` every [`NORM_RECORD_INTERVAL`] steps, per repeat.
    pub norms: Vec<Vec<(usize, f64)>>,
}

/// Estimates `(H + μI)⁻¹ v` over `train`.
pub fn estimate_ihvp<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    v: &[f64],
    cfg: &HvpConfig,
) -> Result<IhvpEstimate> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if v.len() != model.learnable_dim() || !all_finite(v) {
        return Err(Error::InvalidInput(
            "vector must be finite with the learnable dimension".into(),
        ));
    }
    let m = v.len();
    if norm(v) == 0.0 {
        return Ok(IhvpEstimate {
            value: vec![0.0; m],
            scale: cfg.scale,
            recursions: 0,
            norms: Vec::new(),
        });
    }
    if cfg.iterations == 0 {
        warn!("zero HVP iterations; returning v / scale");
        return Ok(IhvpEstimate {
            value: v.iter().map(|x| x / cfg.scale).collect(),
            scale: cfg.scale,
            recursions: 0,
            norms: Vec::new(),
        });
    }

    let mut scale = cfg.scale;
    let mut recursions = 0;
    for attempt in 0..=cfg.max_retries {
        let runs: Vec<std::result::Result<Run, usize>> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| recursion(model, train, v, cfg, scale, r as u64))
            .collect();
        recursions += cfg.repeats;
        match runs.iter().find_map(|r| r.as_ref().err()) {
            Some(&step) => {
                if attempt == cfg.max_retries {
                    return Err(Error::Diverged { step, scale });
                }
                warn!("inverse-HVP recursion diverged at step {step} with scale {scale}; doubling");
                scale *= 2.0;
            }
            None => {
                let mut value = vec![0.0; m];
                let mut norms = Vec::with_capacity(cfg.repeats);
                for run in runs.into_iter().map(|r| r.unwrap()) {
                    axpy(1.0 / (scale * cfg.repeats as f64), &run.h, &mut value);
                    norms.push(run.norms);
                }
                return Ok(IhvpEstimate {
                    value,
                    scale,
                    recursions,
                    norms,
                });
            }
        }
    }
    unreachable!("loop returns on the last attempt")
}

struct Run {
    h: Vec<f64>,
    norms: Vec<(usize, f64)>,
}

/// One recursion; `Err(step)` on divergence.
fn recursion<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    v: &[f64],
    cfg: &HvpConfig,
    scale: f64,
    repeat: u64,
) -> std::result::Result<Run, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(repeat);
    let limit = DIVERGENCE_FACTOR * norm(v);
    let b = cfg.batch_per_step;
    let decay = 1.0 - cfg.damping / scale;
    let mut h = v.to_vec();
    let mut hv = vec![0.0; v.len()];
    let mut norms = vec![(0, norm(&h))];
    for t in 1..=cfg.iterations {
        hv.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..b {
            let s = &train[rng.gen_range(0..train.len())];
            model.add_hvp(s, &h, 1.0 / b as f64, &mut hv);
        }
        // h ← v + (1 − μ/σ) h − Ĥ h / σ
        for ((hi, hvi), vi) in h.iter_mut().zip(&hv).zip(v) {
            *hi = vi + decay * *hi - hvi / scale;
        }
        if t % NORM_RECORD_INTERVAL == 0 || t == cfg.iterations {
            let n = norm(&h);
            if !(n <= limit) {
                return Err(t);
            }
            norms.push((t, n));
        }
    }
    Ok(Run { h, norms })
}
