//! Mean-pool cross-entropy (MPCE) next-item model used as the cheap
//! surrogate on which influence scores are computed.
//!
//! For a sample `(x, y)` the user state is the mean of the input embeddings of
//! the history, `u = (1/|x|) Σ_{i∈x} A[i]`, the logits are `z = B u`, and the
//! loss is the full-softmax cross-entropy `−log softmax(z)[y]`.
//!
//! In convex mode the input table `A` is frozen at its random initialization
//! and only `B` is learned. The loss is then a log-sum-exp of a linear map of
//! the parameters, hence convex, and every per-sample Hessian is positive
//! semidefinite with the closed form `(diag(p) − ppᵀ) ⊗ uuᵀ`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Dataset, UserSequence};
use crate::error::{Error, Result};
use crate::model::{finite_difference_hvp, SampleModel};
use crate::optim::{fit, TrainConfig, TrainTrace};
use crate::vecops::softmax_in_place;

/// Step used by the finite-difference HVP in full mode.
pub const FD_HVP_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub embed_dim: usize,
    pub convex_mode: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            embed_dim: 8,
            convex_mode: true,
            init_scale: 0.5,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || !(self.init_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "embed_dim must be >= 1 and init_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Flat parameters `θ = [A | B]`, both `n_items × dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    pub theta: Vec<f64>,
    pub n_items: usize,
    pub dim: usize,
    pub convex_mode: bool,
}

impl SurrogateParams {
    /// Gaussian initialization with standard deviation `init_scale`.
    pub fn init(n_items: usize, cfg: &SurrogateConfig) -> Result<Self> {
        cfg.validate()?;
        if n_items == 0 {
            return Err(Error::InvalidInput("empty item catalog".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, cfg.init_scale).expect("positive scale");
        let theta = (0..2 * n_items * cfg.embed_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(SurrogateParams {
            theta,
            n_items,
            dim: cfg.embed_dim,
            convex_mode: cfg.convex_mode,
        })
    }

    fn table_len(&self) -> usize {
        self.n_items * self.dim
    }

    pub fn input_table(&self) -> &[f64] {
        &self.theta[..self.table_len()]
    }

    pub fn output_table(&self) -> &[f64] {
        &self.theta[self.table_len()..]
    }

    fn learnable_offset(&self) -> usize {
        if self.convex_mode {
            self.table_len()
        } else {
            0
        }
    }

    /// Mean input embedding of the history.
    pub fn user_state(&self, history: &[usize]) -> Vec<f64> {
        let d = self.dim;
        let a = self.input_table();
        let mut u = vec![0.0; d];
        for &i in history {
            for (uk, ak) in u.iter_mut().zip(&a[i * d..(i + 1) * d]) {
                *uk += ak;
            }
        }
        let inv = 1.0 / history.len().max(1) as f64;
        u.iter_mut().for_each(|x| *x *= inv);
        u
    }

    /// Logits `B u`.
    pub fn logits(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        self.output_table()
            .chunks_exact(d)
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Returns `(u, p, loss)`.
    fn forward(&self, s: &UserSequence) -> (Vec<f64>, Vec<f64>, f64) {
        let u = self.user_state(&s.history);
        let mut p = self.logits(&u);
        let z_y = p[s.target];
        let lse = softmax_in_place(&mut p);
        (u, p, (lse - z_y).max(0.0))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dim: self.dim as u64,
            n_items: self.n_items as u64,
            mode: self.convex_mode as u64,
            values: self.theta.clone(),
            mask: None,
            descriptor: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (n_items, dim) = (ck.n_items as usize, ck.dim as usize);
        if ck.mode > 1 || ck.mask.is_some() || ck.values.len() != 2 * n_items * dim {
            return Err(Error::Checkpoint("not a surrogate checkpoint".into()));
        }
        Ok(SurrogateParams {
            theta: ck.values.clone(),
            n_items,
            dim,
            convex_mode: ck.mode == 1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl SampleModel for SurrogateParams {
    fn learnable_dim(&self) -> usize {
        self.theta.len() - self.learnable_offset()
    }

    fn learnable(&self) -> Vec<f64> {
        self.theta[self.learnable_offset()..].to_vec()
    }

    fn set_learnable(&mut self, values: &[f64]) {
        let off = self.learnable_offset();
        self.theta[off..].copy_from_slice(values);
    }

    fn loss(&self, s: &UserSequence) -> f64 {
        self.forward(s).2
    }

    fn add_gradient(&self, s: &UserSequence, weight: f64, out: &mut [f64]) -> f64 {
        let d = self.dim;
        let (u, mut p, loss) = self.forward(s);
        p[s.target] -= 1.0;
        let err = p;
        let tl = self.table_len();
        let (out_a, out_b) = if self.convex_mode {
            (None, out)
        } else {
            let (a, b) = out.split_at_mut(tl);
            (Some(a), b)
        };
        for (j, row) in out_b.chunks_exact_mut(d).enumerate() {
            let c = weight * err[j];
            if c != 0.0 {
                for (g, uk) in row.iter_mut().zip(&u) {
                    *g += c * uk;
                }
            }
        }
        if let Some(out_a) = out_a {
            // ∂L/∂A[i] = (1/|x|) Bᵀ (p − e_y) for each occurrence of i in x
            let mut bt_err = vec![0.0; d];
            for (row, e) in self.output_table().chunks_exact(d).zip(&err) {
                for (acc, b) in bt_err.iter_mut().zip(row) {
                    *acc += e * b;
                }
            }
            let c = weight / s.history.len() as f64;
            for &i in &s.history {
                for (g, v) in out_a[i * d..(i + 1) * d].iter_mut().zip(&bt_err) {
                    *g += c * v;
                }
            }
        }
        loss
    }

    fn add_hvp(&self, s: &UserSequence, v: &[f64], weight: f64, out: &mut [f64]) {
        if !self.convex_mode {
            finite_difference_hvp(self, s, v, FD_HVP_STEP, weight, out);
            return;
        }
        // (H V)[j] = p_j (q_j − pᵀq) u with q_j = u · V[j]
        let d = self.dim;
        let (u, p, _) = self.forward(s);
        let q: Vec<f64> = v
            .chunks_exact(d)
            .map(|row| row.iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        for (j, row) in out.chunks_exact_mut(d).enumerate() {
            let c = weight * p[j] * (q[j] - pq);
            if c != 0.0 {
                for (o, uk) in row.iter_mut().zip(&u) {
                    *o += c * uk;
                }
            }
        }
    }

    fn predict(&self, s: &UserSequence) -> Vec<f64> {
        self.forward(s).1
    }

    fn explicit_hessian(&self, s: &UserSequence) -> Option<Vec<f64>> {
        if !self.convex_mode {
            return None;
        }
        let (d, n) = (self.dim, self.n_items);
        let m = n * d;
        let (u, p, _) = self.forward(s);
        let mut h = vec![0.0; m * m];
        for j in 0..n {
            for k in 0..n {
                let c = if j == k { p[j] - p[j] * p[k] } else { -p[j] * p[k] };
                for a in 0..d {
                    for b in 0..d {
                        h[(j * d + a) * m + k * d + b] = c * u[a] * u[b];
                    }
                }
            }
        }
        Some(h)
    }
}

/// Fitted surrogate plus its training trace.
#[derive(Debug, Clone)]
pub struct TrainedSurrogate {
    pub params: SurrogateParams,
    pub trace: TrainTrace,
}

/// Fits the surrogate on `data.train`.
pub fn train_surrogate(
    data: &Dataset,
    cfg: &SurrogateConfig,
    tcfg: &TrainConfig,
) -> Result<TrainedSurrogate> {
    train_surrogate_weighted(&data.train, data.n_items(), cfg, tcfg, None)
}

/// Same schedule as [`train_surrogate`] with optional per-sample weights;
/// used by the leave-one-out oracle.
pub fn train_surrogate_weighted(
    train: &[UserSequence],
    n_items: usize,
    cfg: &SurrogateConfig,
    tcfg: &TrainConfig,
    weights: Option<&[f64]>,
) -> Result<TrainedSurrogate> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut params = SurrogateParams::init(n_items, cfg)?;
    let trace = fit(&mut params, train, weights, tcfg)?;
    Ok(TrainedSurrogate { params, trace })
}

#[cfg(test)]
mod tests;
