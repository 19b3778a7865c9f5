//! The rating model: per-side sentiment learners with word attention, a
//! rating learner (ID embeddings, concat projection, review attention,
//! fusion, interaction) and the rating / sentiment / joint losses.

mod checkpoint;
mod forward;
mod params;
mod probe;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::AutogradError;
use crate::corpus::{Dataset, Side};
use crate::embeddings::{BackendKind, EmbeddingError, EmbeddingStore};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{record_forward, ForwardGraph, ForwardTrace, Losses, Mode, SideTrace, SideVars};
pub use params::{init_params, param_count, param_names, Model};
pub use probe::{Probe, ProbeShape, PROBE_VOCAB};

/// Floor applied to predicted class probabilities before the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] AutogradError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("unknown variant `{0}` (expected full, sa, fn, in, w2v or sp)")]
    UnknownVariant(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{side} profile {owner}: slot {slot} {problem}")]
    Label {
        side: Side,
        owner: String,
        slot: usize,
        problem: &'static str,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("checkpoint {0}")]
    Checkpoint(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The full model and its five single-module ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    /// Unweighted mean over reviews instead of review attention.
    Sa,
    /// No fusion network.
    Fn,
    /// Factorization machine instead of the interactive network + rating head.
    In,
    /// Static pretrained word table.
    W2v,
    /// No sentiment supervision.
    Sp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::Sa,
        Variant::Fn,
        Variant::In,
        Variant::W2v,
        Variant::Sp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Sa => "sa",
            Variant::Fn => "fn",
            Variant::In => "in",
            Variant::W2v => "w2v",
            Variant::Sp => "sp",
        }
    }

    /// Name used in result tables, e.g. `SIFN_sp`.
    pub fn method_name(self) -> &'static str {
        match self {
            Variant::Full => "SIFN",
            Variant::Sa => "SIFN_sa",
            Variant::Fn => "SIFN_fn",
            Variant::In => "SIFN_in",
            Variant::W2v => "SIFN_w2v",
            Variant::Sp => "SIFN_sp",
        }
    }

    pub fn has_sentiment_head(self) -> bool {
        self != Variant::Sp
    }

    pub fn has_review_attention(self) -> bool {
        self != Variant::Sa
    }

    pub fn has_fusion(self) -> bool {
        !matches!(self, Variant::Fn | Variant::In)
    }

    pub fn uses_fm(self) -> bool {
        self == Variant::In
    }

    /// λ actually applied to the sentiment loss.
    pub fn effective_lambda(self, lambda: f64) -> f64 {
        if self.has_sentiment_head() {
            lambda
        } else {
            0.0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let short = match lower.as_str() {
            "sifn" => "full",
            other => other.strip_prefix("sifn_").unwrap_or(other),
        };
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == short)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Everything that fixes parameter shapes and forward behaviour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub variant: Variant,
    pub lambda: f64,
    pub dropout: f64,
    pub seed: u64,
    pub backend: BackendKind,
    /// Width of the backend's word vectors (projected to `k` when different).
    pub native_width: usize,
    pub vocab_size: usize,
    /// ID-space sizes including the UNK row.
    pub n_users: usize,
    pub n_items: usize,
}

impl ModelConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn for_dataset(
        dataset: &Dataset,
        store: &EmbeddingStore,
        k: usize,
        variant: Variant,
        lambda: f64,
        dropout: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let cfg = Self {
            k,
            m: dataset.m,
            l: dataset.l,
            variant,
            lambda,
            dropout,
            seed,
            backend: store.kind(),
            native_width: store.native_width(),
            vocab_size: store.table_rows().unwrap_or(dataset.vocab.len()),
            n_users: dataset.users.len(),
            n_items: dataset.items.len(),
        };
        cfg.validate()?;
        cfg.check_store(store)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.k == 0 || self.m == 0 || self.l == 0 || self.native_width == 0 {
            return bad("k, m, l and the word-vector width must be positive".into());
        }
        if self.n_users == 0 || self.n_items == 0 || self.vocab_size == 0 {
            return bad("ID spaces and vocabulary must be nonempty".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a finite value ≥ 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.variant == Variant::W2v && self.backend != BackendKind::StaticTable {
            return bad("variant w2v needs a static word table".into());
        }
        if self.backend == BackendKind::TrainableTable && self.native_width != self.k {
            return bad(format!(
                "trainable table width {} must equal k = {}",
                self.native_width, self.k
            ));
        }
        Ok(())
    }

    /// Checks that `store` is the backend this configuration was built for.
    pub fn check_store(&self, store: &EmbeddingStore) -> Result<(), ModelError> {
        if store.kind() != self.backend || store.native_width() != self.native_width {
            return Err(ModelError::Config(format!(
                "store is {:?} of width {}, model expects {:?} of width {}",
                store.kind(),
                store.native_width(),
                self.backend,
                self.native_width
            )));
        }
        if let Some(rows) = store.table_rows() {
            if rows != self.vocab_size {
                return Err(ModelError::Config(format!(
                    "word table has {rows} rows, model expects {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        self.variant.effective_lambda(self.lambda)
    }

    /// Whether frozen word vectors go through a learned projection to `k`.
    pub fn has_projection(&self) -> bool {
        self.backend != BackendKind::TrainableTable && self.native_width != self.k
    }
}
