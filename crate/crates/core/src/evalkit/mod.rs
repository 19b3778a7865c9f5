//! Metrics, result tables, ablation runs and attention export.

mod ablation;
mod attention;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Tensor;
use crate::binio::write_atomic;
use crate::corpus::{Dataset, Side};
use crate::embeddings::{EmbeddingStore, ReviewRef};
use crate::model::{Model, ModelError};
use crate::trainer::TrainError;

pub use ablation::{run_ablation, AblationReport, AblationRow, AblationStores};
pub use attention::{attention_report, export_attention, render_html, AttentionReport, ReviewAttention};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("baseline MSE must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("no pair ({user}, {item}) in the dataset")]
    UnknownPair { user: String, item: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<f64, EvalError> {
    if predictions.len() != targets.len() {
        return Err(EvalError::Length(predictions.len(), targets.len()));
    }
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let sse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / predictions.len() as f64)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `logits` (`[n, C]`) whose argmax equals the label.
pub fn sentiment_accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64, EvalError> {
    let n = logits.shape()[0];
    if n != labels.len() {
        return Err(EvalError::Length(n, labels.len()));
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = (0..n).filter(|&r| argmax(logits.row(r)) == labels[r]).count();
    Ok(hits as f64 / n as f64)
}

/// `(baseline − ours) / baseline × 100`.
pub fn relative_improvement(baseline_mse: f64, our_mse: f64) -> Result<f64, EvalError> {
    if !(baseline_mse > 0.0) {
        return Err(EvalError::NonPositiveBaseline(baseline_mse));
    }
    Ok((baseline_mse - our_mse) / baseline_mse * 100.0)
}

/// Signed percentage with two decimals, e.g. `+1.81%`.
pub fn render_improvement(percent: f64) -> String {
    let rounded = (percent * 100.0).round() / 100.0;
    if rounded == 0.0 {
        "0.00%".to_string()
    } else {
        format!("{rounded:+.2}%")
    }
}

/// `results.json`: method → dataset → test MSE.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub results: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub mse: BTreeMap<String, f64>,
    /// Improvement of the reference method over this row, per dataset (%).
    pub improvement: BTreeMap<String, f64>,
}

impl ResultsFile {
    pub fn new() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            results: BTreeMap::new(),
        }
    }

    /// Reads `path`, or starts empty when it does not exist.
    pub fn load_or_new(path: &Path) -> Result<Self, EvalError> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| EvalError::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    pub fn insert(&mut self, method: &str, dataset: &str, mse: f64) {
        self.results
            .entry(method.to_string())
            .or_default()
            .insert(dataset.to_string(), mse);
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        write_json(path, self)
    }

    /// Rows with the improvement of `reference` over every other method,
    /// recomputed from the stored MSEs.
    pub fn rows(&self, reference: &str) -> Result<Vec<ResultRow>, EvalError> {
        let ours = self.results.get(reference);
        self.results
            .iter()
            .map(|(method, mse)| {
                let mut improvement = BTreeMap::new();
                if let Some(ours) = ours.filter(|_| method != reference) {
                    for (ds, &base) in mse {
                        if let Some(&o) = ours.get(ds) {
                            improvement.insert(ds.clone(), relative_improvement(base, o)?);
                        }
                    }
                }
                Ok(ResultRow {
                    method: method.clone(),
                    mse: mse.clone(),
                    improvement,
                })
            })
            .collect()
    }

    /// Plain-text table: one column per dataset, `mse (improvement)`.
    pub fn render_table(&self, reference: &str) -> Result<String, EvalError> {
        let datasets: std::collections::BTreeSet<&String> = self.results.values().flat_map(|m| m.keys()).collect();
        let mut out = format!("{:<12}", "method");
        for d in &datasets {
            out.push_str(&format!(" {d:>22}"));
        }
        out.push('\n');
        for row in self.rows(reference)? {
            out.push_str(&format!("{:<12}", row.method));
            for d in &datasets {
                let cell = match (row.mse.get(*d), row.improvement.get(*d)) {
                    (Some(m), Some(i)) => format!("{m:.3} ({})", render_improvement(*i)),
                    (Some(m), None) => format!("{m:.3}"),
                    _ => "-".to_string(),
                };
                out.push_str(&format!(" {cell:>22}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Held-out review classification through one tower: every pair's own
/// review in `pair_ids` is encoded and classified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewSentimentEval {
    pub side: Side,
    pub reviews: usize,
    pub accuracy: f64,
    /// Reviews containing at least one marked token.
    pub marked_reviews: usize,
    /// Of those, reviews whose mean α on marked tokens exceeds 1/true_length.
    pub above_uniform: usize,
    pub mean_marked_alpha: f64,
}

impl ReviewSentimentEval {
    pub fn above_uniform_fraction(&self) -> f64 {
        if self.marked_reviews == 0 {
            0.0
        } else {
            self.above_uniform as f64 / self.marked_reviews as f64
        }
    }
}

/// Classifies the own reviews of `pair_ids` with `side`'s sentiment learner
/// and measures word attention on tokens for which `marked` holds.
pub fn review_sentiment_eval(
    model: &Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    pair_ids: &[usize],
    side: Side,
    marked: impl Fn(&str) -> bool,
) -> Result<ReviewSentimentEval, EvalError> {
    if pair_ids.is_empty() {
        return Err(EvalError::Empty);
    }
    let refs: Vec<ReviewRef<'_>> = pair_ids
        .iter()
        .map(|&id| ReviewRef {
            review: &dataset.pairs[id].review,
            key: None,
        })
        .collect();
    let (logits, alpha) = model.classify_reviews(store, side, &refs)?;
    let labels: Vec<usize> = pair_ids.iter().map(|&id| dataset.pairs[id].label.index()).collect();
    let accuracy = sentiment_accuracy(&logits, &labels)?;
    let (mut marked_reviews, mut above, mut alpha_sum, mut alpha_n) = (0, 0, 0.0, 0usize);
    for (r, &id) in pair_ids.iter().enumerate() {
        let review = &dataset.pairs[id].review;
        let weights: Vec<f64> = review
            .real_ids()
            .iter()
            .enumerate()
            .filter(|(_, &t)| dataset.vocab.token(t).is_some_and(&marked))
            .map(|(pos, _)| alpha.row(r)[pos])
            .collect();
        if weights.is_empty() {
            continue;
        }
        marked_reviews += 1;
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        if mean > 1.0 / review.true_length as f64 {
            above += 1;
        }
        alpha_sum += weights.iter().sum::<f64>();
        alpha_n += weights.len();
    }
    Ok(ReviewSentimentEval {
        side,
        reviews: pair_ids.len(),
        accuracy,
        marked_reviews,
        above_uniform: above,
        mean_marked_alpha: if alpha_n == 0 { 0.0 } else { alpha_sum / alpha_n as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert!(matches!(mse(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(mse(&[1.0], &[]), Err(EvalError::Length(1, 0))));
    }

    #[test]
    fn constant_mean_predictor_scores_the_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<f64> = (0..500).map(|_| rng.random_range(1.0..5.0)).collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert!((mse(&vec![mean; t.len()], &t).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples_and_tie_rule() {
        let logits = Tensor::matrix(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 3.0]]);
        assert_eq!(sentiment_accuracy(&logits, &[0, 2]).unwrap(), 1.0);
        let uniform = Tensor::zeros(&[4, 3]);
        assert_eq!(sentiment_accuracy(&uniform, &[2, 2, 2, 2]).unwrap(), 0.0);
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
    }

    #[test]
    fn random_labels_score_a_third() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let logits = Tensor::new(vec![n, 3], (0..3 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let acc = sentiment_accuracy(&logits, &labels).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 0.02, "{acc}");
    }

    #[test]
    fn improvement_rendering() {
        assert_eq!(render_improvement(relative_improvement(0.773, 0.759).unwrap()), "+1.81%");
        assert_eq!(render_improvement(relative_improvement(1.084, 1.047).unwrap()), "+3.41%");
        assert_eq!(render_improvement(relative_improvement(0.9, 0.9).unwrap()), "0.00%");
        assert_eq!(render_improvement(relative_improvement(1.0, 1.1).unwrap()), "-10.00%");
        assert!(matches!(relative_improvement(0.0, 1.0), Err(EvalError::NonPositiveBaseline(_))));
    }

    #[test]
    fn results_file_round_trip_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.json");
        let mut r = ResultsFile::load_or_new(&path).unwrap();
        r.insert("SIFN", "music", 0.759);
        r.insert("CARP", "music", 0.773);
        r.save(&path).unwrap();
        let back = ResultsFile::load_or_new(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.schema_version, SCHEMA_VERSION);
        let table = back.render_table("SIFN").unwrap();
        assert!(table.contains("0.773 (+1.81%)"), "{table}");
        let rows = back.rows("SIFN").unwrap();
        assert!(rows.iter().find(|r| r.method == "SIFN").unwrap().improvement.is_empty());
    }
}
