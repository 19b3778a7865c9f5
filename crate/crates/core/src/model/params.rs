use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::autograd::{ParamStore, Tensor};
use crate::corpus::{NUM_CLASSES, PAD_ID};
use crate::embeddings::{EmbeddingStore, INIT_STD, PROJECTION_PARAM, TABLE_PARAM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    WordTable,
}

/// Parameter names and shapes for `config`, in registration order.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let k = config.k;
    let v = config.variant;
    let mut out = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, init: Init| out.push((name.to_string(), shape, init));
    if config.backend == crate::embeddings::BackendKind::TrainableTable {
        push(TABLE_PARAM, vec![config.vocab_size, k], Init::WordTable);
    }
    if config.has_projection() {
        push(PROJECTION_PARAM, vec![config.native_width, k], Init::Normal);
    }
    for (side, n) in [("user", config.n_users), ("item", config.n_items)] {
        push(&format!("{side}.word_attn.w"), vec![k, 1], Init::Normal);
        push(&format!("{side}.word_attn.b"), vec![1], Init::Zero);
        push(&format!("{side}.id_table"), vec![n, k], Init::Normal);
        push(&format!("{side}.concat_proj"), vec![2 * k, k], Init::Normal);
        if v.has_review_attention() {
            push(&format!("{side}.review_attn.w"), vec![k, 1], Init::Normal);
            push(&format!("{side}.review_attn.b"), vec![1], Init::Zero);
        }
    }
    if v.has_sentiment_head() {
        push("sentiment.w", vec![k, NUM_CLASSES], Init::Normal);
        push("sentiment.b", vec![NUM_CLASSES], Init::Zero);
    }
    if v.uses_fm() {
        push("fm.bias", vec![1], Init::Zero);
        push("fm.linear", vec![4 * k, 1], Init::Normal);
        push("fm.factors", vec![4 * k, k], Init::Normal);
    } else {
        if v.has_fusion() {
            push("fusion.w", vec![k, k], Init::Normal);
            push("interact.w", vec![k, k], Init::Normal);
        }
        push("interact.b", vec![k], Init::Zero);
        push("rating.w", vec![k, 1], Init::Normal);
        push("user.bias", vec![config.n_users, 1], Init::Zero);
        push("item.bias", vec![config.n_items, 1], Init::Zero);
    }
    out
}

pub fn param_names(config: &ModelConfig) -> Vec<String> {
    layout(config).into_iter().map(|(n, _, _)| n).collect()
}

/// Closed-form number of scalar parameters for `config`.
pub fn param_count(config: &ModelConfig) -> usize {
    let k = config.k;
    let v = config.variant;
    let c = NUM_CLASSES;
    let per_side = |n: usize| (k + 1) + n * k + 2 * k * k + if v.has_review_attention() { k + 1 } else { 0 };
    let words = match config.backend {
        crate::embeddings::BackendKind::TrainableTable => config.vocab_size * k,
        _ if config.native_width != k => config.native_width * k,
        _ => 0,
    };
    let sentiment = if v.has_sentiment_head() { k * c + c } else { 0 };
    let head = if v.uses_fm() {
        1 + 4 * k + 4 * k * k
    } else {
        let fusion = if v.has_fusion() { 2 * k * k } else { 0 };
        fusion + k + k + config.n_users + config.n_items
    };
    words + per_side(config.n_users) + per_side(config.n_items) + sentiment + head
}

/// Fresh parameters: weights N(0, 0.01²), biases and bias tables zero, the
/// word table copied from a trainable store with its PAD row frozen.
pub fn init_params(config: &ModelConfig, store: &EmbeddingStore) -> Result<ParamStore, ModelError> {
    config.validate()?;
    config.check_store(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut params = ParamStore::new();
    for (name, shape, init) in layout(config) {
        match init {
            Init::Zero => params.insert(&name, Tensor::zeros(&shape)),
            Init::Normal => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                params.insert(&name, Tensor::new(shape, data)?);
            }
            Init::WordTable => {
                let EmbeddingStore::Trainable(t) = store else {
                    unreachable!("layout only requests a word table for trainable stores")
                };
                params.insert_frozen(&name, t.table.clone(), vec![PAD_ID as usize]);
            }
        }
    }
    Ok(params)
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, store: &EmbeddingStore) -> Result<Self, ModelError> {
        let params = init_params(&config, store)?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_elements()
    }

    /// Redraws every non-frozen entry from N(0, std²). Used to move away from
    /// the near-linear regime of the default initialisation in gradient checks.
    pub fn randomize(&mut self, std: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("valid normal");
        for p in self.params.iter_mut() {
            let inner = p.value.numel() / p.value.shape()[0];
            let frozen = p.frozen_rows.clone();
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let v = normal.sample(&mut rng);
                if !frozen.contains(&(i / inner)) {
                    *x = v;
                }
            }
        }
    }
}
