//! Small random problems for gradient checks and forward-pass sweeps.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{record_forward, Mode, Model, ModelConfig, ModelError, Variant};
use crate::autograd::{grad_check, GradCheckConfig, GradCheckReport};
use crate::corpus::{Batch, Profile, SentimentLabel, Side, TokenizedReview};
use crate::embeddings::{init_trainable_table, BackendKind, Coverage, EmbeddingStore, StaticTable};

pub const PROBE_VOCAB: usize = 12;

#[derive(Clone, Debug)]
pub struct ProbeShape {
    pub variant: Variant,
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub batch: usize,
    /// Every profile keeps at least this many real slots.
    pub min_real: usize,
}

impl ProbeShape {
    pub fn new(variant: Variant, k: usize, m: usize, l: usize, batch: usize) -> Self {
        Self {
            variant,
            k,
            m,
            l,
            batch,
            min_real: 1,
        }
    }
}

/// A randomly initialised model with random labelled profiles.
#[derive(Clone, Debug)]
pub struct Probe {
    pub model: Model,
    pub store: EmbeddingStore,
    pub users: Vec<Profile>,
    pub items: Vec<Profile>,
    pub user_ids: Vec<usize>,
    pub item_ids: Vec<usize>,
    pub ratings: Vec<f64>,
}

fn random_review(rng: &mut ChaCha8Rng, l: usize, min_len: usize) -> TokenizedReview {
    let len = rng.random_range(min_len.min(l)..=l);
    let ids: Vec<u32> = (0..len).map(|_| rng.random_range(2..PROBE_VOCAB as u32)).collect();
    TokenizedReview::from_ids(&ids, l)
}

fn random_profile(rng: &mut ChaCha8Rng, side: Side, owner: &str, m: usize, l: usize, min_real: usize, min_len: usize) -> Profile {
    let mut p = Profile::empty(owner, side, m, l);
    let real = rng.random_range(min_real.min(m)..=m);
    let mut slots: Vec<usize> = (0..m).collect();
    for i in 0..real {
        let j = rng.random_range(i..m);
        slots.swap(i, j);
    }
    for &j in &slots[..real] {
        p.reviews[j] = random_review(rng, l, min_len);
        p.review_mask[j] = true;
        p.labels[j] = SentimentLabel::from_index(rng.random_range(0..3));
        p.sources[j] = Some(rng.random_range(0..1000));
    }
    p
}

impl Probe {
    /// Parameters are drawn with std 0.5 so that every nonlinearity is
    /// exercised away from its linear regime; dropout is off. The first
    /// profile of each side is full with reviews of at least two tokens, so
    /// both attention levels always carry gradient; the rest are random.
    pub fn random(shape: &ProbeShape, seed: u64) -> Result<Self, ModelError> {
        let (k, m, l, b) = (shape.k, shape.m, shape.l, shape.batch);
        let static_words = shape.variant == Variant::W2v;
        let cfg = ModelConfig {
            k,
            m,
            l,
            variant: shape.variant,
            lambda: 1.0,
            dropout: 0.0,
            seed,
            backend: if static_words {
                BackendKind::StaticTable
            } else {
                BackendKind::TrainableTable
            },
            native_width: k,
            vocab_size: PROBE_VOCAB,
            n_users: b + 1,
            n_items: b + 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = init_trainable_table(PROBE_VOCAB, k, seed);
        let store = if static_words {
            let mut t = table.table;
            for x in t.data_mut().iter_mut().skip(k) {
                *x = rng.random_range(-1.0..1.0);
            }
            EmbeddingStore::Static(StaticTable {
                table: t,
                coverage: Coverage { found: 0, total: 0 },
            })
        } else {
            EmbeddingStore::Trainable(table)
        };
        let mut model = Model::new(cfg, &store)?;
        model.randomize(0.5, seed.wrapping_add(100));
        let users = (0..b)
            .map(|i| {
                let (min_real, min_len) = if i == 0 { (m, 2) } else { (shape.min_real, 1) };
                random_profile(&mut rng, Side::User, &format!("u{i}"), m, l, min_real, min_len)
            })
            .collect();
        let items = (0..b)
            .map(|i| {
                let (min_real, min_len) = if i == 0 { (m, 2) } else { (shape.min_real, 1) };
                random_profile(&mut rng, Side::Item, &format!("i{i}"), m, l, min_real, min_len)
            })
            .collect();
        let ratings = (0..b).map(|_| f64::from(rng.random_range(1..=5u8))).collect();
        Ok(Self {
            model,
            store,
            users,
            items,
            user_ids: (1..=b).collect(),
            item_ids: (1..=b).rev().collect(),
            ratings,
        })
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            pair_ids: (0..self.ratings.len()).collect(),
            users: self.user_ids.clone(),
            items: self.item_ids.clone(),
            user_profiles: self.users.iter().map(Cow::Borrowed).collect(),
            item_profiles: self.items.iter().map(Cow::Borrowed).collect(),
            ratings: self.ratings.clone(),
        }
    }

    /// Finite-difference check of every parameter against the total loss.
    pub fn grad_check(&self, config: &GradCheckConfig) -> Result<GradCheckReport, ModelError> {
        let batch = self.batch();
        let mut params = self.model.params.clone();
        grad_check(&mut params, config, |g, b| {
            record_forward(&self.model.config, g, b, &self.store, &batch, Mode::Eval).map(|fwd| fwd.loss)
        })
    }
}
