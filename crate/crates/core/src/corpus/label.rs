use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Number of sentiment classes.
pub const NUM_CLASSES: usize = 3;

/// Review polarity derived from its star rating with a threshold of 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Self::Negative),
            1 => Some(Self::Neutral),
            2 => Some(Self::Positive),
            _ => None,
        }
    }
}

/// `> 3` positive, `< 3` negative, `== 3` neutral. Ratings are rounded to one
/// decimal first so a parsed `3.0000000001` still counts as neutral.
pub fn derive_sentiment_label(rating: f64) -> Result<SentimentLabel, CorpusError> {
    let r = (rating * 10.0).round() / 10.0;
    if !(1.0..=5.0).contains(&r) {
        return Err(CorpusError::RatingOutOfRange(rating));
    }
    Ok(if r > 3.0 {
        SentimentLabel::Positive
    } else if r < 3.0 {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert_eq!(derive_sentiment_label(5.0).unwrap(), SentimentLabel::Positive);
        assert_eq!(derive_sentiment_label(3.0).unwrap(), SentimentLabel::Neutral);
        assert_eq!(derive_sentiment_label(2.0).unwrap(), SentimentLabel::Negative);
        assert_eq!(derive_sentiment_label(3.0 + 1e-9).unwrap(), SentimentLabel::Neutral);
    }

    #[test]
    fn out_of_range() {
        assert!(derive_sentiment_label(0.5).is_err());
        assert!(derive_sentiment_label(5.5).is_err());
        assert!(derive_sentiment_label(f64::NAN).is_err());
    }

    #[test]
    fn grid_partition() {
        for step in 10..=50 {
            let r = step as f64 / 10.0;
            let label = derive_sentiment_label(r).unwrap();
            let expect = match step {
                s if s < 30 => SentimentLabel::Negative,
                30 => SentimentLabel::Neutral,
                _ => SentimentLabel::Positive,
            };
            assert_eq!(label, expect, "rating {r}");
        }
    }

    #[test]
    fn index_round_trip() {
        for i in 0..NUM_CLASSES {
            assert_eq!(SentimentLabel::from_index(i).unwrap().index(), i);
        }
        assert!(SentimentLabel::from_index(3).is_none());
    }
}
