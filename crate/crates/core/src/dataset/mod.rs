//! Interaction logs, chronological user sequences and the temporal split.

mod ingest;
mod io;
mod split;
mod synthetic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use ingest::{ingest_interactions, parse_interactions, Format, IngestReport};
pub use io::{load_dataset, save_dataset};
pub use split::{build_sequences, temporal_split, SplitRanges};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};

/// One user-item event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
}

impl Interaction {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Interaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            timestamp,
            rating: None,
        }
    }

    pub fn with_rating(mut self, rating: f64) -> Self {
        self.rating = Some(rating);
        self
    }

    pub(crate) fn validate(&self) -> std::result::Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        if let Some(r) = self.rating {
            if !(1.0..=5.0).contains(&r) {
                return Err(format!("rating {r} outside [1, 5]"));
            }
        }
        Ok(())
    }
}

/// A training sample `(x, y)`: a chronological history and the item that
/// immediately followed it.
///
/// `position` is the 1-based index of the target within the user's filtered
/// timeline, so `(user_id, position)` identifies a sample uniquely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: String,
    pub history: Vec<usize>,
    pub target: usize,
    pub timestamp: i64,
    pub position: usize,
}

impl UserSequence {
    pub fn sample_id(&self) -> String {
        format!("{}#{}", self.user_id, self.position)
    }
}

/// Item catalog with contiguous indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `item_id`, inserting it if unseen.
    pub fn intern(&mut self, item_id: &str) -> usize {
        if let Some(&i) = self.index.get(item_id) {
            return i;
        }
        let i = self.items.len();
        self.items.push(item_id.to_owned());
        self.index.insert(item_id.to_owned(), i);
        i
    }

    pub fn get(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn item(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

/// Controls the rating filter and the temporal split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub rating_threshold: Option<f64>,
    /// Histories keep only the most recent `max_history` items.
    pub max_history: usize,
    /// Fail instead of warning when the validation window is empty.
    pub require_valid: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.8, 0.1, 0.1],
            rating_threshold: Some(4.0),
            max_history: 20,
            require_valid: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative, got {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        if self.max_history == 0 {
            return Err(Error::InvalidConfig("max_history must be >= 1".into()));
        }
        Ok(())
    }
}

/// Train/valid/test samples over a shared item catalog.
///
/// `train` is ordered by target time, so a prefix of it is a temporal prefix
/// of the training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub train: Vec<UserSequence>,
    pub valid: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
}

impl Dataset {
    pub fn n_items(&self) -> usize {
        self.catalog.len()
    }

    /// Keeps only the first `n` training samples (the earliest ones).
    pub fn truncate_train(&mut self, n: usize) {
        self.train.truncate(n);
    }
}
