use std::collections::HashMap;

use super::{CorpusError, ReviewRecord};

/// Repeatedly drops records whose user or item has fewer than `min_reviews`
/// interactions until nothing changes. Input order is preserved.
pub fn kcore_filter(records: Vec<ReviewRecord>, min_reviews: usize) -> Result<Vec<ReviewRecord>, CorpusError> {
    if min_reviews == 0 {
        return Err(CorpusError::InvalidArgument("min_reviews must be at least 1".into()));
    }
    let mut current = records;
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &current {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let keep: Vec<bool> = current
            .iter()
            .map(|r| users[r.user_id.as_str()] >= min_reviews && items[r.item_id.as_str()] >= min_reviews)
            .collect();
        if keep.iter().all(|&k| k) {
            break;
        }
        let mut it = keep.into_iter();
        current.retain(|_| it.next().unwrap_or(false));
    }
    if current.is_empty() {
        return Err(CorpusError::EmptyAfterFilter { min_reviews });
    }
    Ok(current)
}
