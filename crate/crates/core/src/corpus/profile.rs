use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{derive_sentiment_label, CorpusError, ReviewRecord, SentimentLabel, Vocab, PAD_ID};

/// A review as `l` token ids, padded with [`PAD_ID`] after `true_length`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedReview {
    pub token_ids: Vec<u32>,
    pub true_length: usize,
}

impl TokenizedReview {
    /// Truncates to the first `l` ids or pads up to `l`.
    pub fn from_ids(ids: &[u32], l: usize) -> Self {
        let true_length = ids.len().min(l);
        let mut token_ids = ids[..true_length].to_vec();
        token_ids.resize(l, PAD_ID);
        Self { token_ids, true_length }
    }

    pub fn padding(l: usize) -> Self {
        Self {
            token_ids: vec![PAD_ID; l],
            true_length: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_length == 0
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.token_ids.len()).map(|i| i < self.true_length).collect()
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.token_ids[..self.true_length]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::User => "user",
            Side::Item => "item",
        })
    }
}

/// The `m` review slots attached to one user or item.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub owner_id: String,
    pub side: Side,
    pub reviews: Vec<TokenizedReview>,
    pub review_mask: Vec<bool>,
    pub labels: Vec<Option<SentimentLabel>>,
    /// Record id each real slot came from.
    pub sources: Vec<Option<usize>>,
}

impl Profile {
    /// All-pad profile used for cold-start owners.
    pub fn empty(owner_id: &str, side: Side, m: usize, l: usize) -> Self {
        Self {
            owner_id: owner_id.to_string(),
            side,
            reviews: vec![TokenizedReview::padding(l); m],
            review_mask: vec![false; m],
            labels: vec![None; m],
            sources: vec![None; m],
        }
    }

    pub fn slots(&self) -> usize {
        self.reviews.len()
    }

    pub fn real_count(&self) -> usize {
        self.review_mask.iter().filter(|&&b| b).count()
    }

    /// Key used by contextual embedding stores, e.g. `user:A1`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.side, self.owner_id)
    }

    /// The profile with every slot sourced from `record` masked out.
    pub fn without_source(&self, record: usize) -> Cow<'_, Profile> {
        if !self.sources.contains(&Some(record)) {
            return Cow::Borrowed(self);
        }
        let mut p = self.clone();
        for j in 0..p.slots() {
            if p.sources[j] == Some(record) {
                p.reviews[j] = TokenizedReview::padding(p.reviews[j].len());
                p.review_mask[j] = false;
                p.labels[j] = None;
                p.sources[j] = None;
            }
        }
        Cow::Owned(p)
    }
}

pub type ProfileSet = BTreeMap<String, Profile>;

/// Builds user and item profiles from training records `(record id, record)`.
///
/// Owners with more than `m` reviews keep the `m` most recent by timestamp
/// (missing timestamps sort oldest, ties keep input order); the kept reviews
/// are stored oldest first.
pub fn build_profiles(
    train: &[(usize, &ReviewRecord)],
    m: usize,
    l: usize,
    vocab: &Vocab,
) -> Result<(ProfileSet, ProfileSet), CorpusError> {
    if m == 0 || l == 0 {
        return Err(CorpusError::InvalidArgument("m and l must be positive".into()));
    }
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut by_item: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, (_, r)) in train.iter().enumerate() {
        by_user.entry(&r.user_id).or_default().push(pos);
        by_item.entry(&r.item_id).or_default().push(pos);
    }
    let build = |side: Side, groups: BTreeMap<&str, Vec<usize>>| -> Result<ProfileSet, CorpusError> {
        let mut out = ProfileSet::new();
        for (owner, mut positions) in groups {
            positions.sort_by_key(|&p| (train[p].1.timestamp.unwrap_or(i64::MIN), p));
            let keep = &positions[positions.len().saturating_sub(m)..];
            let mut profile = Profile::empty(owner, side, m, l);
            for (slot, &p) in keep.iter().enumerate() {
                let (id, record) = train[p];
                profile.reviews[slot] = TokenizedReview::from_ids(&vocab.encode(&record.text), l);
                profile.review_mask[slot] = profile.reviews[slot].true_length > 0;
                profile.labels[slot] = Some(derive_sentiment_label(record.rating)?);
                profile.sources[slot] = Some(id);
            }
            out.insert(owner.to_string(), profile);
        }
        Ok(out)
    };
    Ok((build(Side::User, by_user)?, build(Side::Item, by_item)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn rec(u: &str, i: &str, rating: f64, text: &str, ts: i64) -> ReviewRecord {
        ReviewRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating,
            text: text.into(),
            timestamp: Some(ts),
        }
    }

    #[test]
    fn short_profile_is_padded() {
        let records = [rec("u", "a", 5.0, "great", 1), rec("u", "b", 1.0, "awful", 2)];
        let vocab = build_vocab(records.iter().map(|r| r.text.as_str()), 1);
        let train: Vec<_> = records.iter().enumerate().collect();
        let (users, items) = build_profiles(&train, 3, 4, &vocab).unwrap();
        let p = &users["u"];
        assert_eq!(p.review_mask, vec![true, true, false]);
        assert_eq!(p.labels, vec![Some(SentimentLabel::Positive), Some(SentimentLabel::Negative), None]);
        assert_eq!(p.sources, vec![Some(0), Some(1), None]);
        assert_eq!(p.reviews[2], TokenizedReview::padding(4));
        assert_eq!(items.len(), 2);
        assert_eq!(items["a"].key(), "item:a");
    }

    #[test]
    fn truncates_long_reviews() {
        let r = TokenizedReview::from_ids(&[5, 6, 7, 8, 9, 10, 11], 5);
        assert_eq!(r.token_ids, vec![5, 6, 7, 8, 9]);
        assert_eq!(r.true_length, 5);
        assert!(r.mask().iter().all(|&b| b));
        let r = TokenizedReview::from_ids(&[5], 3);
        assert_eq!(r.mask(), vec![true, false, false]);
    }

    #[test]
    fn keeps_most_recent_m() {
        let records = [
            rec("u", "a", 5.0, "one", 30),
            rec("u", "b", 4.0, "two", 10),
            rec("u", "c", 2.0, "three", 20),
        ];
        let vocab = build_vocab(records.iter().map(|r| r.text.as_str()), 1);
        let train: Vec<_> = records.iter().enumerate().collect();
        let (users, _) = build_profiles(&train, 2, 2, &vocab).unwrap();
        assert_eq!(users["u"].sources, vec![Some(2), Some(0)]);
    }

    #[test]
    fn labels_follow_each_source_rating() {
        let records = [rec("u", "a", 3.0, "meh", 1), rec("v", "a", 4.0, "nice", 2)];
        let vocab = build_vocab(records.iter().map(|r| r.text.as_str()), 1);
        let train: Vec<_> = records.iter().enumerate().collect();
        let (_, items) = build_profiles(&train, 2, 2, &vocab).unwrap();
        assert_eq!(
            items["a"].labels,
            vec![Some(SentimentLabel::Neutral), Some(SentimentLabel::Positive)]
        );
    }

    #[test]
    fn masking_own_review() {
        let records = [rec("u", "a", 5.0, "great", 1), rec("u", "b", 1.0, "awful", 2)];
        let vocab = build_vocab(records.iter().map(|r| r.text.as_str()), 1);
        let train: Vec<_> = records.iter().enumerate().collect();
        let (users, _) = build_profiles(&train, 3, 4, &vocab).unwrap();
        let p = &users["u"];
        assert!(matches!(p.without_source(7), Cow::Borrowed(_)));
        let masked = p.without_source(1);
        assert_eq!(masked.review_mask, vec![true, false, false]);
        assert_eq!(masked.real_count(), 1);
    }
}
