use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, EvalError, SCHEMA_VERSION};
use crate::corpus::{Dataset, Split};
use crate::embeddings::{init_trainable_table, EmbeddingStore};
use crate::model::Variant;
use crate::trainer::{evaluate_mse, train, TrainConfig};

/// Word backends for an ablation: the primary store for every variant but
/// `w2v`, which uses the static table.
#[derive(Clone, Copy, Debug)]
pub struct AblationStores<'a> {
    pub primary: &'a EmbeddingStore,
    pub static_table: &'a EmbeddingStore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub method: String,
    /// Test MSE per seed, aligned with the report's `seeds`.
    pub seed_mse: Vec<f64>,
    pub median_mse: f64,
    /// `median_mse − median_mse(full)`: the stacked part of the bar chart.
    pub increment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        write_json(path, self)
    }

    /// Text bars: `█` up to the full model's median, `▒` for the increment.
    pub fn render_bars(&self, width: usize) -> String {
        let max = self.rows.iter().map(|r| r.median_mse).fold(0.0, f64::max);
        let scale = if max > 0.0 { width as f64 / max } else { 0.0 };
        let mut out = String::new();
        for r in &self.rows {
            let base = (r.median_mse - r.increment.max(0.0)) * scale;
            let extra = r.increment.max(0.0) * scale;
            out.push_str(&format!(
                "{:<9} {:.4} {}{}\n",
                r.method,
                r.median_mse,
                "█".repeat(base.round() as usize),
                "▒".repeat(extra.round() as usize)
            ));
        }
        out
    }
}

/// Trains and tests every variant once per seed on one shared split.
/// A trainable primary table is re-initialised from each run's seed.
pub fn run_ablation(
    dataset: &Dataset,
    stores: AblationStores<'_>,
    base: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport, EvalError> {
    if seeds.is_empty() {
        return Err(EvalError::Empty);
    }
    let test_ids = dataset.split_ids(Split::Test);
    if test_ids.is_empty() {
        return Err(EvalError::Empty);
    }
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let mses = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let cfg = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let reseeded;
            let store = match (variant, stores.primary) {
                (Variant::W2v, _) => stores.static_table,
                (_, EmbeddingStore::Trainable(t)) => {
                    reseeded = EmbeddingStore::Trainable(init_trainable_table(t.table.shape()[0], cfg.k, seed));
                    &reseeded
                }
                (_, s) => s,
            };
            let outcome = train(&cfg, dataset, store)?;
            let mse = evaluate_mse(&outcome.model, dataset, store, &test_ids, cfg.batch_size)?;
            log::info!("ablation {} seed {seed}: test MSE {mse:.5}", variant.method_name());
            Ok(mse)
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;

    let per_variant: Vec<Vec<f64>> = mses.chunks(seeds.len()).map(<[f64]>::to_vec).collect();
    let full_median = median(&per_variant[0]);
    let rows = Variant::ALL
        .iter()
        .zip(per_variant)
        .map(|(&variant, seed_mse)| {
            let median_mse = median(&seed_mse);
            AblationRow {
                variant,
                method: variant.method_name().to_string(),
                seed_mse,
                median_mse,
                increment: median_mse - full_median,
            }
        })
        .collect();
    Ok(AblationReport {
        schema_version: SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        rows,
    })
}
