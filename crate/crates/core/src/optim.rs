//! Mini-batch gradient descent with weight decay and a fixed step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::model::{mean_loss, SampleModel};
use crate::vecops::{axpy, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop early once the full-objective gradient norm drops below this.
    pub tolerance: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.5,
            weight_decay: 1e-4,
            seed: 0,
            tolerance: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_loss: f64,
    /// Mean batch loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
    /// Set when `tolerance` was given and reached.
    pub converged: bool,
    pub final_grad_norm: Option<f64>,
}

/// Minimizes `(1/N) Σ_i w_i L(s_i) + (λ/2) ‖θ‖²` over the learnable
/// coordinates, where `N = samples.len()` regardless of the weights. A zero
/// weight removes a sample while keeping the batch schedule and the
/// normalization of the full run.
pub fn fit<M: SampleModel>(
    model: &mut M,
    samples: &[UserSequence],
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if let Some(w) = weights {
        assert_eq!(w.len(), samples.len(), "one weight per sample");
    }
    let n = samples.len();
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let m = model.learnable_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let full_batch = cfg.batch_size >= n;

    let mut trace = TrainTrace {
        initial_loss: weighted_loss(model, samples, weights),
        ..Default::default()
    };
    let mut theta = model.learnable();
    let mut grad = vec![0.0; m];
    for _epoch in 0..cfg.epochs {
        if !full_batch {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let denom = if full_batch { n } else { batch.len() } as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let w = weight(i);
                if w != 0.0 {
                    batch_loss += w * model.add_gradient(&samples[i], w / denom, &mut grad);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: trace.steps });
            }
            epoch_loss += batch_loss;
            seen += batch.len() as f64;
            axpy(cfg.weight_decay, &theta, &mut grad);
            if full_batch {
                if let Some(tol) = cfg.tolerance {
                    let gn = norm(&grad);
                    trace.final_grad_norm = Some(gn);
                    if gn < tol {
                        trace.converged = true;
                        break;
                    }
                }
            }
            axpy(-cfg.learning_rate, &grad, &mut theta);
            model.set_learnable(&theta);
            trace.steps += 1;
        }
        trace.epoch_losses.push(epoch_loss / seen);
        if trace.converged {
            break;
        }
        if let (Some(tol), false) = (cfg.tolerance, full_batch) {
            let gn = objective_gradient_norm(model, samples, weights, cfg.weight_decay);
            trace.final_grad_norm = Some(gn);
            if gn < tol {
                trace.converged = true;
                break;
            }
        }
    }
    trace.final_loss = weighted_loss(model, samples, weights);
    if !trace.final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: trace.steps });
    }
    Ok(trace)
}

fn weighted_loss<M: SampleModel>(model: &M, samples: &[UserSequence], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => mean_loss(model, samples),
        Some(w) => {
            samples
                .iter()
                .zip(w)
                .filter(|(_, &w)| w != 0.0)
                .map(|(s, &w)| w * model.loss(s))
                .sum::<f64>()
                / samples.len() as f64
        }
    }
}

/// Norm of the gradient of the regularized objective minimized by [`fit`].
pub fn objective_gradient_norm<M: SampleModel>(
    model: &M,
    samples: &[UserSequence],
    weights: Option<&[f64]>,
    weight_decay: f64,
) -> f64 {
    let n = samples.len() as f64;
    let mut g = vec![0.0; model.learnable_dim()];
    for (i, s) in samples.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w != 0.0 {
            model.add_gradient(s, w / n, &mut g);
        }
    }
    axpy(weight_decay, &model.learnable(), &mut g);
    norm(&g)
}
