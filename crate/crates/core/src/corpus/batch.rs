use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Profile};

/// A minibatch of observed pairs; every vector is indexed by batch position.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub pair_ids: Vec<usize>,
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub user_profiles: Vec<Cow<'a, Profile>>,
    pub item_profiles: Vec<Cow<'a, Profile>>,
    pub ratings: Vec<f64>,
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }

    /// Assembles a batch from pair ids. With `mask_own_review`, a pair's own
    /// review is masked out of both of its profiles.
    pub fn from_pairs(dataset: &'a Dataset, pair_ids: &[usize], mask_own_review: bool) -> Self {
        let mut b = Batch {
            pair_ids: Vec::with_capacity(pair_ids.len()),
            users: Vec::with_capacity(pair_ids.len()),
            items: Vec::with_capacity(pair_ids.len()),
            user_profiles: Vec::with_capacity(pair_ids.len()),
            item_profiles: Vec::with_capacity(pair_ids.len()),
            ratings: Vec::with_capacity(pair_ids.len()),
        };
        for &id in pair_ids {
            let p = &dataset.pairs[id];
            let up = &dataset.user_profiles[p.user];
            let ip = &dataset.item_profiles[p.item];
            b.pair_ids.push(id);
            b.users.push(p.user);
            b.items.push(p.item);
            if mask_own_review {
                b.user_profiles.push(up.without_source(id));
                b.item_profiles.push(ip.without_source(id));
            } else {
                b.user_profiles.push(Cow::Borrowed(up));
                b.item_profiles.push(Cow::Borrowed(ip));
            }
            b.ratings.push(p.rating);
        }
        b
    }
}

/// Positions `0..n` grouped into batches of `batch_size` (last may be
/// short), shuffled when a seed is given.
pub fn batch_order(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn make_batches<'a>(
    dataset: &'a Dataset,
    pair_ids: &[usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
    mask_own_review: bool,
) -> impl Iterator<Item = Batch<'a>> + 'a {
    let groups: Vec<Vec<usize>> = batch_order(pair_ids.len(), batch_size, shuffle_seed)
        .into_iter()
        .map(|g| g.into_iter().map(|i| pair_ids[i]).collect())
        .collect();
    groups
        .into_iter()
        .map(move |ids| Batch::from_pairs(dataset, &ids, mask_own_review))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_with_short_tail() {
        let sizes: Vec<usize> = batch_order(250, 100, Some(3)).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![100, 100, 50]);
    }

    #[test]
    fn same_seed_same_order() {
        assert_eq!(batch_order(37, 5, Some(8)), batch_order(37, 5, Some(8)));
        assert_eq!(batch_order(4, 3, None), vec![vec![0, 1, 2], vec![3]]);
    }

    proptest! {
        #[test]
        fn batches_are_a_permutation(n in 0usize..300, bs in 1usize..64, seed in any::<u64>()) {
            let mut all: Vec<usize> = batch_order(n, bs, Some(seed)).concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
