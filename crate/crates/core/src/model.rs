//! The per-sample model contract shared by the surrogate and the target.
//!
//! Everything downstream (training, influence estimation, effort scores,
//! baseline selectors) talks to a model only through [`SampleModel`]: a loss,
//! its gradient over the learnable coordinates, and Hessian-vector products.

use rayon::prelude::*;

use crate::dataset::UserSequence;
use crate::vecops::{axpy, norm};

/// Samples per parallel work unit. Partial sums are combined in chunk order,
/// so reductions are bit-identical for any thread count.
const CHUNK: usize = 64;

pub trait SampleModel: Sync {
    /// Number of learnable coordinates.
    fn learnable_dim(&self) -> usize;

    /// Current values of the learnable coordinates.
    fn learnable(&self) -> Vec<f64>;

    fn set_learnable(&mut self, values: &[f64]);

    /// Per-sample negative log-likelihood.
    fn loss(&self, s: &UserSequence) -> f64;

    /// Adds `weight * ∇L(s)` into `out` and returns `L(s)`.
    fn add_gradient(&self, s: &UserSequence, weight: f64, out: &mut [f64]) -> f64;

    /// Adds `weight * ∇²L(s) v` into `out`.
    fn add_hvp(&self, s: &UserSequence, v: &[f64], weight: f64, out: &mut [f64]);

    /// Class probabilities over the item catalog.
    fn predict(&self, s: &UserSequence) -> Vec<f64>;

    /// Explicit per-sample Hessian, row-major, when the model has one in
    /// closed form.
    fn explicit_hessian(&self, _s: &UserSequence) -> Option<Vec<f64>> {
        None
    }

    fn gradient(&self, s: &UserSequence) -> Vec<f64> {
        let mut g = vec![0.0; self.learnable_dim()];
        self.add_gradient(s, 1.0, &mut g);
        g
    }

    fn hvp(&self, s: &UserSequence, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.learnable_dim()];
        self.add_hvp(s, v, 1.0, &mut out);
        out
    }
}

/// Central finite differences of the gradient along `v`:
/// `(∇L(θ + r v̂) − ∇L(θ − r v̂)) / 2r · ‖v‖`.
pub fn finite_difference_hvp<M: SampleModel + Clone>(
    model: &M,
    s: &UserSequence,
    v: &[f64],
    step: f64,
    weight: f64,
    out: &mut [f64],
) {
    let vn = norm(v);
    if vn == 0.0 {
        return;
    }
    let theta = model.learnable();
    let mut shifted = model.clone();
    let mut probe = theta.clone();
    axpy(step / vn, v, &mut probe);
    shifted.set_learnable(&probe);
    let mut diff = vec![0.0; theta.len()];
    shifted.add_gradient(s, 1.0, &mut diff);
    probe.copy_from_slice(&theta);
    axpy(-step / vn, v, &mut probe);
    shifted.set_learnable(&probe);
    shifted.add_gradient(s, -1.0, &mut diff);
    axpy(weight * vn / (2.0 * step), &diff, out);
}

/// `(1/n) Σ_i ∇L(s_i)`.
pub fn mean_gradient<M: SampleModel + ?Sized>(model: &M, samples: &[UserSequence]) -> Vec<f64> {
    let m = model.learnable_dim();
    if samples.is_empty() {
        return vec![0.0; m];
    }
    let w = 1.0 / samples.len() as f64;
    let partials: Vec<Vec<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; m];
            for s in chunk {
                model.add_gradient(s, w, &mut g);
            }
            g
        })
        .collect();
    let mut total = vec![0.0; m];
    for p in &partials {
        axpy(1.0, p, &mut total);
    }
    total
}

/// Mean loss over `samples` (0 when empty).
pub fn mean_loss<M: SampleModel + ?Sized>(model: &M, samples: &[UserSequence]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let partials: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|s| model.loss(s)).sum::<f64>())
        .collect();
    partials.iter().sum::<f64>() / samples.len() as f64
}

/// Applies `f` to every sample in parallel, preserving order.
pub fn per_sample<M, T, F>(model: &M, samples: &[UserSequence], f: F) -> Vec<T>
where
    M: SampleModel + ?Sized,
    T: Send,
    F: Fn(&M, &UserSequence) -> T + Sync,
{
    samples.par_iter().map(|s| f(model, s)).collect()
}
