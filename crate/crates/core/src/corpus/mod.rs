//! Review ingestion and preprocessing: parsing, k-core filtering, sentiment
//! labels, tokenization, splitting, per-owner profiles and batching.

mod batch;
mod dataset;
mod kcore;
mod label;
mod parse;
mod profile;
mod split;
mod stats;
mod vocab;

pub use batch::{batch_order, make_batches, Batch};
pub use dataset::{preprocess, read_dataset, write_dataset, ColdStartReport, Dataset, IdSpace, Pair, PreprocessConfig};
pub use kcore::kcore_filter;
pub use label::{derive_sentiment_label, SentimentLabel, NUM_CLASSES};
pub use parse::{parse_reviews, parse_reviews_str, ParseReport, ReviewFormat};
pub use profile::{build_profiles, Profile, ProfileSet, Side, TokenizedReview};
pub use split::{split_dataset, split_indices, Split, SplitIndices};
pub use stats::{dataset_stats, DatasetStats};
pub use vocab::{build_vocab, tokenize, Vocab, PAD_ID, UNK_ID};

use std::path::PathBuf;

use thiserror::Error;

/// One observed (user, item, rating, review) interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub text: String,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{invalid} of {total} lines are invalid; is this the Amazon JSON-lines format?")]
    TooManyInvalid { invalid: usize, total: usize },
    #[error("k-core filtering with min_reviews={min_reviews} left no interactions; try a smaller min_reviews")]
    EmptyAfterFilter { min_reviews: usize },
    #[error("rating {0} outside [1, 5]")]
    RatingOutOfRange(f64),
    #[error("{records} records are too few to populate train/validation/test with ratios {ratios:?}")]
    TooFewRecords { records: usize, ratios: [f64; 3] },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed {file}: {reason}")]
    Format { file: String, reason: String },
    #[error("empty input")]
    Empty,
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: &str, reason: impl Into<String>) -> Self {
        Self::Format {
            file: file.to_string(),
            reason: reason.into(),
        }
    }
}
