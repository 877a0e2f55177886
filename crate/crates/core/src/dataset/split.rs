use std::collections::HashMap;
use std::ops::Range;

use log::warn;

use super::{Catalog, Dataset, Interaction, SplitSpec, UserSequence};
use crate::error::{Error, Result};

/// Contiguous prefix / middle / suffix of a time-sorted log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

/// Sizes are `⌊r_train·N⌋`, `⌊r_valid·N⌋` and the remainder.
pub fn temporal_split(n: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    spec.validate()?;
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 interactions to split, got {n}"
        )));
    }
    // The epsilon keeps exact products such as 0.1 * 30 from flooring down.
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let n_train = floor(spec.ratios[0]).min(n);
    let n_valid = floor(spec.ratios[1]).min(n - n_train);
    if n_valid == 0 {
        if spec.require_valid {
            return Err(Error::InvalidInput(format!(
                "validation window is empty for {n} interactions"
            )));
        }
        warn!("validation window is empty for {n} interactions");
    }
    Ok(SplitRanges {
        train: 0..n_train,
        valid: n_train..n_train + n_valid,
        test: n_train + n_valid..n,
    })
}

/// Filters by rating, sorts globally by time and turns every interaction that
/// has at least `min_history` predecessors from the same user into a sample.
/// The window of the target interaction decides which split it lands in.
pub fn build_sequences(
    interactions: &[Interaction],
    spec: &SplitSpec,
    min_history: usize,
) -> Result<Dataset> {
    spec.validate()?;
    if min_history == 0 {
        return Err(Error::InvalidConfig("min_history must be >= 1".into()));
    }
    let mut log: Vec<&Interaction> = interactions
        .iter()
        .filter(|i| match (spec.rating_threshold, i.rating) {
            (Some(t), Some(r)) => r >= t,
            _ => true,
        })
        .collect();
    if log.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    log.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user_id.cmp(&b.user_id))
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    let ranges = temporal_split(log.len(), spec)?;

    let mut catalog = Catalog::new();
    for i in &log {
        catalog.intern(&i.item_id);
    }

    let mut timelines: HashMap<&str, Vec<usize>> = HashMap::new();
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (g, inter) in log.iter().enumerate() {
        let item = catalog.get(&inter.item_id).expect("interned above");
        let timeline = timelines.entry(inter.user_id.as_str()).or_default();
        if timeline.len() >= min_history {
            let start = timeline.len().saturating_sub(spec.max_history);
            let sample = UserSequence {
                user_id: inter.user_id.clone(),
                history: timeline[start..].to_vec(),
                target: item,
                timestamp: inter.timestamp,
                position: timeline.len() + 1,
            };
            if ranges.train.contains(&g) {
                train.push(sample);
            } else if ranges.valid.contains(&g) {
                valid.push(sample);
            } else {
                test.push(sample);
            }
        }
        timeline.push(item);
    }
    if train.is_empty() {
        warn!("no training samples: every user has fewer than {} interactions in the training window", min_history + 1);
    }
    Ok(Dataset {
        catalog,
        train,
        valid,
        test,
    })
}
