use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{CorpusError, ReviewRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    /// `ratings / (users · items)` as a fraction.
    pub density: f64,
}

impl DatasetStats {
    pub fn from_counts(users: usize, items: usize, ratings: usize) -> Result<Self, CorpusError> {
        if users == 0 || items == 0 || ratings == 0 {
            return Err(CorpusError::Empty);
        }
        Ok(Self {
            users,
            items,
            ratings,
            density: ratings as f64 / (users as f64 * items as f64),
        })
    }

    pub fn density_percent(&self) -> f64 {
        self.density * 100.0
    }

    /// Density as printed in dataset tables, e.g. `0.798%`.
    pub fn render_density(&self) -> String {
        format!("{:.3}%", self.density_percent())
    }
}

pub fn dataset_stats(records: &[ReviewRecord]) -> Result<DatasetStats, CorpusError> {
    let users: HashSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let items: HashSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
    DatasetStats::from_counts(users.len(), items.len(), records.len())
}
