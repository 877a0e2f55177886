use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stratified_select, SelectionConfig, Strategy, Subset};
use crate::dataset::UserSequence;
use crate::error::{Error, Result};
use crate::model::{per_sample, SampleModel};
use crate::vecops::norm;

/// Per-sample gradient norm, averaged over the given checkpoints.
pub fn grand_scores<M: SampleModel>(checkpoints: &[&M], samples: &[UserSequence]) -> Vec<f64> {
    let mut total = vec![0.0; samples.len()];
    for m in checkpoints {
        for (t, g) in total.iter_mut().zip(per_sample(*m, samples, |m, s| norm(&m.gradient(s)))) {
            *t += g;
        }
    }
    let k = checkpoints.len().max(1) as f64;
    total.iter_mut().for_each(|t| *t /= k);
    total
}

/// `‖p(s) − onehot(y)‖₂` under the model's predictive distribution.
pub fn el2n_scores<M: SampleModel>(model: &M, samples: &[UserSequence]) -> Vec<f64> {
    per_sample(model, samples, |m, s| {
        let mut p = m.predict(s);
        p[s.target] -= 1.0;
        norm(&p)
    })
}

/// Indices of the `budget` largest scores, ties broken by lower index.
pub fn top_by_score(scores: &[f64], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order
}

/// Selects with one of the comparison strategies. `surrogate` is required
/// for GraNd, EL2N and CCS.
pub fn baseline_select<M: SampleModel>(
    strategy: Strategy,
    samples: &[UserSequence],
    surrogate: Option<&M>,
    cfg: &SelectionConfig,
) -> Result<Subset> {
    cfg.validate()?;
    let n = samples.len();
    let budget = cfg.budget.resolve(n)?;
    let need = || {
        surrogate.ok_or_else(|| Error::InvalidInput(format!("{strategy} needs a trained surrogate")))
    };
    let (picked, groups) = match strategy {
        Strategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (index::sample(&mut rng, n, budget).into_vec(), Vec::new())
        }
        Strategy::Grand => (top_by_score(&grand_scores(&[need()?], samples), budget), Vec::new()),
        Strategy::El2n => (top_by_score(&el2n_scores(need()?, samples), budget), Vec::new()),
        Strategy::Ccs => {
            let scores = el2n_scores(need()?, samples);
            stratified_select(&scores, cfg.n_groups, budget, cfg.binning, cfg.seed)?
        }
        Strategy::Dealrec => {
            return Err(Error::InvalidInput(
                "dealrec selects from overall scores; use coverage_select".into(),
            ))
        }
    };
    Ok(Subset {
        strategy,
        seed: cfg.seed,
        budget,
        n_groups: cfg.n_groups,
        lambda: cfg.lambda,
        selected: picked.into_iter().map(|i| samples[i].sample_id()).collect(),
        groups,
    })
}
