//! Brute-force references for the stochastic influence path: explicit
//! Hessian assembly with a direct solve, the naive one-solve-per-sample
//! influence, and leave-one-out retraining.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::model::{mean_loss, SampleModel};
use crate::optim::{objective_gradient_norm, TrainConfig};
use crate::surrogate::{train_surrogate_weighted, SurrogateConfig, TrainedSurrogate};
use crate::vecops::{dot, sub};

/// Largest learnable dimension the explicit-Hessian oracle accepts.
pub const MAX_EXPLICIT_DIM: usize = 2000;

/// Cholesky factor of `H + μI` with `H = (1/n) Σ_i ∇²L(s_i)`.
pub struct ExactSolver {
    factor: Cholesky<f64, Dyn>,
}

impl ExactSolver {
    pub fn new<M: SampleModel + ?Sized>(
        model: &M,
        train: &[UserSequence],
        damping: f64,
    ) -> Result<Self> {
        let m = model.learnable_dim();
        if m > MAX_EXPLICIT_DIM {
            return Err(Error::TooLarge {
                dim: m,
                limit: MAX_EXPLICIT_DIM,
            });
        }
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let inv_n = 1.0 / train.len() as f64;
        let mut h = DMatrix::<f64>::zeros(m, m);
        for s in train {
            match model.explicit_hessian(s) {
                Some(hs) => {
                    for (dst, src) in h.as_mut_slice().iter_mut().zip(&hs) {
                        *dst += inv_n * src;
                    }
                }
                None => {
                    let mut e = vec![0.0; m];
                    for k in 0..m {
                        e[k] = 1.0;
                        let col = model.hvp(s, &e);
                        e[k] = 0.0;
                        for (r, c) in col.iter().enumerate() {
                            h[(r, k)] += inv_n * c;
                        }
                    }
                }
            }
        }
        // symmetrize against finite-difference noise
        let h = (&h + h.transpose()) * 0.5 + DMatrix::identity(m, m) * damping;
        let factor = Cholesky::new(h).ok_or(Error::Singular)?;
        Ok(ExactSolver { factor })
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let x = self.factor.solve(&DVector::from_column_slice(v));
        x.as_slice().to_vec()
    }
}

/// `(H + μI)⁻¹ v` by direct solve.
pub fn exact_ihvp_oracle<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    v: &[f64],
    damping: f64,
) -> Result<Vec<f64>> {
    Ok(ExactSolver::new(model, train, damping)?.solve(v))
}

/// Influence scores the slow way: one exact solve `(H + μI)⁻¹ ∇L(s)` per
/// sample, then the average inner product with every training gradient.
pub fn naive_influence_scores<M: SampleModel + ?Sized>(
    model: &M,
    train: &[UserSequence],
    damping: f64,
) -> Result<Vec<f64>> {
    let solver = ExactSolver::new(model, train, damping)?;
    let n = train.len() as f64;
    let grads: Vec<Vec<f64>> = train.iter().map(|s| model.gradient(s)).collect();
    Ok(grads
        .iter()
        .map(|g| {
            let x = solver.solve(g);
            grads.iter().map(|gi| dot(gi, &x) / n).sum::<f64>() / n
        })
        .collect())
}

/// Ground truth for one removed sample.
#[derive(Debug, Clone)]
pub struct LooOutcome {
    pub index: usize,
    pub sample_id: String,
    /// `mean_i L(s_i, θ̂_{−s}) − mean_i L(s_i, θ̂)` over the full training set.
    pub risk_change: f64,
    /// `θ̂_{−s} − θ̂` over the learnable coordinates.
    pub delta_theta: Vec<f64>,
    pub converged: bool,
}

/// Gradient norm below which an untoleranced retrain counts as converged.
const CONVERGED_GRAD_NORM: f64 = 1e-6;

/// Retrains the surrogate once on the full set and once per probe with that
/// sample's weight set to zero, from the same initialization and schedule.
/// The objective keeps its `1/n` normalization, which is exactly the
/// `ε = −1/n` reweighting the influence approximation linearizes.
pub fn loo_oracle(
    train: &[UserSequence],
    n_items: usize,
    scfg: &SurrogateConfig,
    tcfg: &TrainConfig,
    probes: &[usize],
) -> Result<(TrainedSurrogate, Vec<LooOutcome>)> {
    if let Some(&bad) = probes.iter().find(|&&p| p >= train.len()) {
        return Err(Error::InvalidInput(format!("probe {bad} is not a training sample")));
    }
    let base = train_surrogate_weighted(train, n_items, scfg, tcfg, None)?;
    let base_risk = mean_loss(&base.params, train);
    let base_theta = base.params.learnable();
    let outcomes = probes
        .par_iter()
        .map(|&p| {
            let mut w = vec![1.0; train.len()];
            w[p] = 0.0;
            let t = train_surrogate_weighted(train, n_items, scfg, tcfg, Some(&w))?;
            let converged = match tcfg.tolerance {
                Some(_) => t.trace.converged,
                None => {
                    objective_gradient_norm(&t.params, train, Some(&w), tcfg.weight_decay)
                        < CONVERGED_GRAD_NORM
                }
            };
            Ok(LooOutcome {
                index: p,
                sample_id: train[p].sample_id(),
                risk_change: mean_loss(&t.params, train) - base_risk,
                delta_theta: sub(&t.params.learnable(), &base_theta),
                converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, outcomes))
}
