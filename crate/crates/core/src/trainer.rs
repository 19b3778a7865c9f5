//! Minibatch Adam training with validation-based early stopping, the λ grid
//! search, and the per-epoch history files.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, ParamStore, Tensor};
use crate::corpus::{batch_order, Batch, Dataset, Split};
use crate::embeddings::EmbeddingStore;
use crate::model::{record_forward, Mode, Model, ModelConfig, ModelError, Variant};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the {} split is empty", .0.as_str())]
    EmptySplit(Split),
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Best model seen before the divergence, if any epoch completed.
        best: Option<Box<Model>>,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Also record eval-mode MSE on the training split every epoch.
    pub track_train_mse: bool,
    /// Stop as soon as the tracked training MSE falls below this value.
    pub target_train_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 16,
            batch_size: 100,
            learning_rate: 0.001,
            dropout: 0.2,
            lambda: 1.0,
            lambda_grid: vec![0.1, 1.0, 10.0],
            max_epochs: 100,
            patience: 10,
            seed: 42,
            variant: Variant::Full,
            clip_norm: Some(5.0),
            track_train_mse: false,
            target_train_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.k == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("k, batch_size and patience must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.lambda_grid.is_empty() {
            return bad("lambda grid must be nonempty");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda grid values must be finite and ≥ 0");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset, store: &EmbeddingStore) -> Result<ModelConfig, TrainError> {
        Ok(ModelConfig::for_dataset(
            dataset,
            store,
            self.k,
            self.variant,
            self.lambda,
            self.dropout,
            self.seed,
        )?)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Frozen rows are left untouched; a
/// non-finite gradient aborts before anything is modified.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    for (p, g) in params.iter().zip(grads) {
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { param: p.name.clone() });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let inner = p.value.numel() / p.value.shape()[0];
        let frozen = &p.frozen_rows;
        let (pv, md, vd) = (p.value.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            if !frozen.is_empty() && frozen.contains(&(i / inner)) {
                continue;
            }
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gi;
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pv[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub rating_loss: f64,
    pub sentiment_loss: f64,
    pub val_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE (the initial
    /// model when no epoch ran).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Wall-clock seconds per epoch, kept apart from the deterministic history.
    pub epoch_seconds: Vec<f64>,
}

impl TrainOutcome {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.history[e - 1].val_mse)
    }
}

/// Eval-mode squared-error sum and count over `pair_ids`, batched in parallel.
/// Batch sums are reduced in batch order, so the result does not depend on
/// the thread count.
pub fn evaluate_sse(
    model: &Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    pair_ids: &[usize],
    batch_size: usize,
) -> Result<(f64, usize), ModelError> {
    let chunks: Vec<&[usize]> = pair_ids.chunks(batch_size.max(1)).collect();
    let sums = chunks
        .par_iter()
        .map(|ids| {
            let batch = Batch::from_pairs(dataset, ids, true);
            let (pred, _) = model.predict(store, &batch)?;
            Ok(pred.iter().zip(&batch.ratings).map(|(p, r)| (p - r) * (p - r)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>, ModelError>>()?;
    Ok((sums.iter().sum(), pair_ids.len()))
}

pub fn evaluate_mse(
    model: &Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    pair_ids: &[usize],
    batch_size: usize,
) -> Result<f64, ModelError> {
    if pair_ids.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (sse, n) = evaluate_sse(model, dataset, store, pair_ids, batch_size)?;
    Ok(sse / n as f64)
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains from a fresh initialisation.
pub fn train(config: &TrainConfig, dataset: &Dataset, store: &EmbeddingStore) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let model = Model::new(config.model_config(dataset, store)?, store)?;
    train_model(config, model, dataset, store)
}

/// Trains `model` in place of a fresh initialisation.
pub fn train_model(
    config: &TrainConfig,
    mut model: Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.config.check_store(store)?;
    let train_ids = dataset.split_ids(Split::Train);
    let val_ids = dataset.split_ids(Split::Validation);
    if train_ids.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_ids.is_empty() && config.max_epochs > 0 {
        return Err(TrainError::EmptySplit(Split::Validation));
    }
    let mut adam = AdamState::new(&model.params);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let diverged = |epoch: usize, reason: String, best: &Option<(usize, f64, Model)>| TrainError::Diverged {
        epoch,
        reason,
        best: best.as_ref().map(|(_, _, m)| Box::new(m.clone())),
    };

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let (mut loss_sum, mut rating_sum, mut sent_sum) = (0.0, 0.0, 0.0);
        let order = batch_order(train_ids.len(), config.batch_size, Some(shuffle_seed(config.seed, epoch)));
        for (bi, positions) in order.iter().enumerate() {
            let ids: Vec<usize> = positions.iter().map(|&p| train_ids[p]).collect();
            let batch = Batch::from_pairs(dataset, &ids, true);
            let mut graph = Graph::new();
            let bindings = model.params.bind(&mut graph);
            let mode = Mode::Train {
                epoch: epoch as u64,
                batch: bi as u64,
            };
            let fwd = record_forward(&model.config, &mut graph, &bindings, store, &batch, mode)?;
            let losses = fwd.losses(&graph);
            if !losses.loss.is_finite() {
                return Err(diverged(epoch, format!("loss {} in batch {bi}", losses.loss), &best));
            }
            graph.backward(fwd.loss).map_err(ModelError::from)?;
            let mut grads = model.params.gradients(&graph, &bindings);
            drop(graph);
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            match adam_step(&mut model.params, &grads, &mut adam, config.learning_rate) {
                Err(TrainError::NonFiniteGradient { param }) => {
                    return Err(diverged(epoch, format!("non-finite gradient in {param}"), &best));
                }
                other => other?,
            }
            let w = ids.len() as f64;
            loss_sum += losses.loss * w;
            rating_sum += losses.rating_loss * w;
            sent_sum += losses.sentiment_loss * w;
        }
        let n = train_ids.len() as f64;
        let val_mse = evaluate_mse(&model, dataset, store, &val_ids, config.batch_size)?;
        if !val_mse.is_finite() {
            return Err(diverged(epoch, format!("validation MSE {val_mse}"), &best));
        }
        let train_mse = if config.track_train_mse {
            Some(evaluate_mse(&model, dataset, store, &train_ids, config.batch_size)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            rating_loss: rating_sum / n,
            sentiment_loss: sent_sum / n,
            val_mse,
            train_mse,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} L_r {:.5} L_s {:.5} val_mse {:.5}",
            record.loss,
            record.rating_loss,
            record.sentiment_loss,
            record.val_mse
        );
        history.push(record);
        epoch_seconds.push(started.elapsed().as_secs_f64());

        if best.as_ref().is_none_or(|(_, b, _)| val_mse < *b) {
            best = Some((epoch, val_mse, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config
            .target_train_mse
            .zip(train_mse)
            .is_some_and(|(target, mse)| mse < target)
        {
            break;
        }
        if since_best >= config.patience {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    let (best_epoch, model) = match best {
        Some((e, _, m)) => (Some(e), m),
        None => (None, model),
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
        epoch_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub val_mse: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub rows: Vec<LambdaRow>,
    pub best_lambda: f64,
}

/// Picks the row with the lowest validation MSE; ties go to the smaller λ.
pub fn select_lambda(rows: &[LambdaRow]) -> Option<f64> {
    rows.iter()
        .min_by(|a, b| a.val_mse.total_cmp(&b.val_mse).then(a.lambda.total_cmp(&b.lambda)))
        .map(|r| r.lambda)
}

/// Trains once per grid value (in parallel) and reports validation MSEs.
pub fn tune_lambda(
    config: &TrainConfig,
    dataset: &Dataset,
    store: &EmbeddingStore,
) -> Result<(LambdaReport, Vec<TrainOutcome>), TrainError> {
    config.validate()?;
    let results = config
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                ..config.clone()
            };
            let outcome = train(&cfg, dataset, store)?;
            let row = LambdaRow {
                lambda,
                val_mse: outcome.best_val_mse().unwrap_or(f64::INFINITY),
                best_epoch: outcome.best_epoch,
            };
            Ok((row, outcome))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (rows, outcomes): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let best_lambda = select_lambda(&rows).expect("grid is nonempty");
    Ok((LambdaReport { rows, best_lambda }, outcomes))
}

fn write_lines<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, &r).expect("serializable");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&buf).map_err(io)
}

/// `history.jsonl`: one deterministic record per epoch.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    write_lines(path, history)
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Config(format!("bad history line: {e}"))))
        .collect()
}

/// `timing.jsonl`: wall-clock seconds per epoch.
pub fn write_timing(path: &Path, seconds: &[f64]) -> Result<(), TrainError> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        seconds: f64,
    }
    write_lines(
        path,
        seconds.iter().enumerate().map(|(i, &s)| Row { epoch: i + 1, seconds: s }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![x]));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_counts_the_step() {
        let mut p = scalar_store(0.7);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![0.0])], &mut s, 0.1).unwrap();
        assert_eq!(p.get("x").unwrap().value.data(), &[0.7]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        for g in [3.0, -0.002] {
            let mut p = scalar_store(1.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &[Tensor::vector(vec![g])], &mut s, 0.01).unwrap();
            let delta = p.get("x").unwrap().value.data()[0] - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn hundred_steps_on_a_parabola() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            let x = p.get("x").unwrap().value.data()[0];
            adam_step(&mut p, &[Tensor::vector(vec![2.0 * x])], &mut s, 0.1).unwrap();
        }
        assert!(p.get("x").unwrap().value.data()[0].abs() < 0.1);
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        // independent scalar re-statement of the update rule
        let grads = [0.5, -1.0, 0.25, 2.0];
        let (mut x, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        let mut p = scalar_store(0.3);
        let mut s = AdamState::new(&p);
        for (t, g) in grads.iter().enumerate() {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            adam_step(&mut p, &[Tensor::vector(vec![*g])], &mut s, 0.05).unwrap();
        }
        assert!((p.get("x").unwrap().value.data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn frozen_rows_are_untouched_and_nan_names_the_parameter() {
        let mut p = ParamStore::new();
        p.insert_frozen("table", Tensor::filled(&[2, 2], 1.0), vec![0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::filled(&[2, 2], 1.0)], &mut s, 0.1).unwrap();
        assert_eq!(p.get("table").unwrap().value.row(0), &[1.0, 1.0]);
        assert!(p.get("table").unwrap().value.row(1)[0] < 1.0);
        let err = adam_step(&mut p, &[Tensor::filled(&[2, 2], f64::NAN)], &mut s, 0.1).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { ref param } if param == "table"));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }

    #[test]
    fn lambda_ties_go_to_the_smaller_value() {
        let row = |lambda, val_mse| LambdaRow {
            lambda,
            val_mse,
            best_epoch: Some(1),
        };
        assert_eq!(select_lambda(&[row(10.0, 0.5), row(1.0, 0.5), row(0.1, 0.7)]), Some(1.0));
        assert_eq!(select_lambda(&[row(1.0, 0.9)]), Some(1.0));
    }

    #[test]
    fn history_round_trips_without_wall_clock() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        let h = vec![EpochRecord {
            epoch: 1,
            loss: 1.5,
            rating_loss: 1.0,
            sentiment_loss: 0.5,
            val_mse: 1.1,
            train_mse: None,
        }];
        write_history(&path, &h).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("seconds"));
        assert_eq!(read_history(&path).unwrap(), h);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrainConfig {
            lambda_grid: vec![],
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
