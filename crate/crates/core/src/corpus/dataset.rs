//! The preprocessed dataset: in-memory form and its on-disk directory
//! (`vocab.tsv`, `splits.jsonl`, `profiles.bin`, `stats.json`).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::{
    build_profiles, build_vocab, dataset_stats, derive_sentiment_label, kcore_filter, split_indices, tokenize,
    CorpusError, DatasetStats, Profile, ReviewRecord, SentimentLabel, Side, Split, TokenizedReview, Vocab,
};
use crate::binio::{verify_crc, write_atomic, ByteReader, ByteWriter};

const PROFILE_MAGIC: &[u8; 8] = b"SIFNPROF";
const PROFILE_VERSION: u32 = 1;
const STATS_SCHEMA_VERSION: u32 = 1;

/// Dense index space over user or item ids. Index 0 is reserved for
/// owners unseen in training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdSpace {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdSpace {
    pub const UNK: usize = 0;

    /// Ids are assigned in sorted order starting at 1.
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<&str> = ids.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        let ids: Vec<String> = std::iter::once("<unk>").chain(sorted).map(str::to_string).collect();
        let index = ids.iter().enumerate().skip(1).map(|(i, s)| (s.clone(), i)).collect();
        Self { ids, index }
    }

    /// Index of `id`, or [`IdSpace::UNK`].
    pub fn lookup(&self, id: &str) -> usize {
        self.index.get(id).copied().unwrap_or(Self::UNK)
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    /// Table size including the UNK row.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.len() <= 1
    }
}

/// One observed interaction after preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: usize,
    pub user_id: String,
    pub item_id: String,
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub split: Split,
    pub timestamp: Option<i64>,
    /// The pair's own review, never part of its own profiles at scoring time.
    pub review: TokenizedReview,
    pub label: SentimentLabel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ColdStartReport {
    pub validation_users: usize,
    pub validation_items: usize,
    pub test_users: usize,
    pub test_items: usize,
}

#[derive(Clone, Debug)]
pub struct PreprocessConfig {
    pub min_reviews: usize,
    pub min_freq: usize,
    pub m: usize,
    pub l: usize,
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_reviews: 5,
            min_freq: 1,
            m: 10,
            l: 100,
            ratios: [0.8, 0.1, 0.1],
            seed: 42,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub m: usize,
    pub l: usize,
    pub users: IdSpace,
    pub items: IdSpace,
    pub pairs: Vec<Pair>,
    /// Aligned with `users`; entry 0 is the all-pad cold-start profile.
    pub user_profiles: Vec<Profile>,
    pub item_profiles: Vec<Profile>,
    pub stats: DatasetStats,
}

impl Dataset {
    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.pairs.iter().filter(|p| p.split == split).map(|p| p.id).collect()
    }

    pub fn cold_start(&self) -> ColdStartReport {
        let mut r = ColdStartReport::default();
        for p in &self.pairs {
            match p.split {
                Split::Validation => {
                    r.validation_users += usize::from(p.user == IdSpace::UNK);
                    r.validation_items += usize::from(p.item == IdSpace::UNK);
                }
                Split::Test => {
                    r.test_users += usize::from(p.user == IdSpace::UNK);
                    r.test_items += usize::from(p.item == IdSpace::UNK);
                }
                Split::Train => {}
            }
        }
        r
    }

    pub fn pair_by_ids(&self, user_id: &str, item_id: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.user_id == user_id && p.item_id == item_id)
    }
}

/// Full preprocessing: drop reviews with no tokens, k-core filter, split,
/// build the vocabulary and profiles from the training split only.
pub fn preprocess(records: Vec<ReviewRecord>, config: &PreprocessConfig) -> Result<Dataset, CorpusError> {
    let before = records.len();
    let records: Vec<ReviewRecord> = records.into_iter().filter(|r| !tokenize(&r.text).is_empty()).collect();
    if records.len() < before {
        info!("dropped {} reviews with no tokens", before - records.len());
    }
    let records = kcore_filter(records, config.min_reviews)?;
    let stats = dataset_stats(&records)?;
    let split = split_indices(records.len(), config.ratios, config.seed)?;
    let tags = split.assignment(records.len());

    let vocab = build_vocab(split.train.iter().map(|&i| records[i].text.as_str()), config.min_freq);
    let train: Vec<(usize, &ReviewRecord)> = split.train.iter().map(|&i| (i, &records[i])).collect();
    let (user_map, item_map) = build_profiles(&train, config.m, config.l, &vocab)?;

    let users = IdSpace::from_ids(user_map.keys().map(String::as_str));
    let items = IdSpace::from_ids(item_map.keys().map(String::as_str));
    let pairs = records
        .iter()
        .enumerate()
        .map(|(id, r)| {
            Ok(Pair {
                id,
                user_id: r.user_id.clone(),
                item_id: r.item_id.clone(),
                user: users.lookup(&r.user_id),
                item: items.lookup(&r.item_id),
                rating: r.rating,
                split: tags[id],
                timestamp: r.timestamp,
                review: TokenizedReview::from_ids(&vocab.encode(&r.text), config.l),
                label: derive_sentiment_label(r.rating)?,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;

    let dataset = Dataset {
        user_profiles: aligned_profiles(&users, user_map, Side::User, config.m, config.l),
        item_profiles: aligned_profiles(&items, item_map, Side::Item, config.m, config.l),
        vocab,
        m: config.m,
        l: config.l,
        users,
        items,
        pairs,
        stats,
    };
    let cold = dataset.cold_start();
    if cold != ColdStartReport::default() {
        info!("cold-start pairs get all-pad profiles: {cold:?}");
    }
    Ok(dataset)
}

fn aligned_profiles(
    space: &IdSpace,
    mut map: BTreeMap<String, Profile>,
    side: Side,
    m: usize,
    l: usize,
) -> Vec<Profile> {
    (0..space.len())
        .map(|i| {
            if i == IdSpace::UNK {
                Profile::empty("<unk>", side, m, l)
            } else {
                map.remove(space.id(i)).expect("profile for every indexed owner")
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    id: usize,
    user: String,
    item: String,
    rating: f64,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    timestamp: Option<i64>,
    tokens: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    schema_version: u32,
    users: usize,
    items: usize,
    ratings: usize,
    density: f64,
    density_percent: f64,
    m: usize,
    l: usize,
    vocab_size: usize,
    train: usize,
    validation: usize,
    test: usize,
    cold_start: ColdStartReport,
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let put = |name: &str, data: &[u8]| {
        let path = dir.join(name);
        write_atomic(&path, data).map_err(|e| CorpusError::io(path, e))
    };

    let mut vocab = String::new();
    for (id, token) in dataset.vocab.tokens().iter().enumerate() {
        vocab.push_str(&format!("{token}\t{id}\n"));
    }
    put("vocab.tsv", vocab.as_bytes())?;

    let mut splits = String::new();
    for p in &dataset.pairs {
        let line = SplitLine {
            id: p.id,
            user: p.user_id.clone(),
            item: p.item_id.clone(),
            rating: p.rating,
            split: p.split,
            timestamp: p.timestamp,
            tokens: p.review.real_ids().to_vec(),
        };
        splits.push_str(&serde_json::to_string(&line).expect("serializable"));
        splits.push('\n');
    }
    put("splits.jsonl", splits.as_bytes())?;

    put("profiles.bin", &encode_profiles(dataset))?;

    let count = |s| dataset.pairs.iter().filter(|p| p.split == s).count();
    let stats = StatsFile {
        schema_version: STATS_SCHEMA_VERSION,
        users: dataset.stats.users,
        items: dataset.stats.items,
        ratings: dataset.stats.ratings,
        density: dataset.stats.density,
        density_percent: dataset.stats.density_percent(),
        m: dataset.m,
        l: dataset.l,
        vocab_size: dataset.vocab.len(),
        train: count(Split::Train),
        validation: count(Split::Validation),
        test: count(Split::Test),
        cold_start: dataset.cold_start(),
    };
    put(
        "stats.json",
        serde_json::to_string_pretty(&stats).expect("serializable").as_bytes(),
    )
}

fn encode_profiles(dataset: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(PROFILE_MAGIC);
    w.u32(PROFILE_VERSION);
    w.u32(dataset.m as u32);
    w.u32(dataset.l as u32);
    let owners: Vec<(usize, &Profile)> = dataset
        .user_profiles
        .iter()
        .enumerate()
        .skip(1)
        .chain(dataset.item_profiles.iter().enumerate().skip(1))
        .collect();
    w.u32(owners.len() as u32);
    for (index, p) in owners {
        w.u8(match p.side {
            Side::User => 0,
            Side::Item => 1,
        });
        w.u32(index as u32);
        w.str(&p.owner_id);
        w.u32(p.real_count() as u32);
        for j in (0..p.slots()).filter(|&j| p.review_mask[j]) {
            w.u64(p.sources[j].expect("real slot has a source") as u64);
            w.u8(p.labels[j].expect("real slot has a label").index() as u8);
            w.u32(p.reviews[j].true_length as u32);
            for &t in &p.reviews[j].token_ids {
                w.u32(t);
            }
        }
    }
    w.finish_with_crc()
}

fn decode_profiles(data: &[u8]) -> Result<(usize, usize, Vec<(usize, Profile)>), String> {
    let payload = verify_crc(data)?;
    let mut r = ByteReader::new(payload);
    if r.take(8)? != PROFILE_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != PROFILE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let m = r.u32()? as usize;
    let l = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let side = match r.u8()? {
            0 => Side::User,
            1 => Side::Item,
            s => return Err(format!("bad side tag {s}")),
        };
        let index = r.u32()? as usize;
        let owner = r.str()?;
        let real = r.u32()? as usize;
        if real > m {
            return Err(format!("owner {owner} has {real} reviews but m = {m}"));
        }
        let mut p = Profile::empty(&owner, side, m, l);
        for j in 0..real {
            p.sources[j] = Some(r.u64()? as usize);
            p.labels[j] = Some(SentimentLabel::from_index(r.u8()? as usize).ok_or("bad label")?);
            let true_length = r.u32()? as usize;
            let token_ids = (0..l).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            p.reviews[j] = TokenizedReview { token_ids, true_length };
            p.review_mask[j] = true;
        }
        out.push((index, p));
    }
    if r.remaining() != 0 {
        return Err("trailing bytes".into());
    }
    Ok((m, l, out))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, CorpusError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| CorpusError::io(path, e))
    };

    let vocab_text = String::from_utf8(read("vocab.tsv")?).map_err(|e| CorpusError::format("vocab.tsv", e.to_string()))?;
    let mut tokens = Vec::new();
    for (n, line) in vocab_text.lines().enumerate() {
        let (token, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| CorpusError::format("vocab.tsv", format!("line {} lacks a tab", n + 1)))?;
        if id.parse::<usize>().ok() != Some(n) {
            return Err(CorpusError::format("vocab.tsv", format!("line {} has id {id}", n + 1)));
        }
        tokens.push(token.to_string());
    }
    let vocab = Vocab::from_tokens(tokens).ok_or_else(|| CorpusError::format("vocab.tsv", "missing reserved tokens"))?;

    let stats: StatsFile =
        serde_json::from_slice(&read("stats.json")?).map_err(|e| CorpusError::format("stats.json", e.to_string()))?;
    let (m, l, owners) = decode_profiles(&read("profiles.bin")?).map_err(|e| CorpusError::format("profiles.bin", e))?;
    if (m, l) != (stats.m, stats.l) {
        return Err(CorpusError::format("profiles.bin", "m/l disagree with stats.json"));
    }

    let mut user_map = BTreeMap::new();
    let mut item_map = BTreeMap::new();
    for (_, p) in owners {
        match p.side {
            Side::User => user_map.insert(p.owner_id.clone(), p),
            Side::Item => item_map.insert(p.owner_id.clone(), p),
        };
    }
    let users = IdSpace::from_ids(user_map.keys().map(String::as_str));
    let items = IdSpace::from_ids(item_map.keys().map(String::as_str));

    let splits_text =
        String::from_utf8(read("splits.jsonl")?).map_err(|e| CorpusError::format("splits.jsonl", e.to_string()))?;
    let mut pairs = Vec::new();
    for (n, line) in splits_text.lines().enumerate() {
        let s: SplitLine =
            serde_json::from_str(line).map_err(|e| CorpusError::format("splits.jsonl", format!("line {}: {e}", n + 1)))?;
        if s.id != n {
            return Err(CorpusError::format("splits.jsonl", format!("line {} has id {}", n + 1, s.id)));
        }
        pairs.push(Pair {
            id: s.id,
            user: users.lookup(&s.user),
            item: items.lookup(&s.item),
            user_id: s.user,
            item_id: s.item,
            rating: s.rating,
            split: s.split,
            timestamp: s.timestamp,
            review: TokenizedReview::from_ids(&s.tokens, l),
            label: derive_sentiment_label(s.rating)?,
        });
    }

    Ok(Dataset {
        user_profiles: aligned_profiles(&users, user_map, Side::User, m, l),
        item_profiles: aligned_profiles(&items, item_map, Side::Item, m, l),
        vocab,
        m,
        l,
        users,
        items,
        pairs,
        stats: DatasetStats {
            users: stats.users,
            items: stats.items,
            ratings: stats.ratings,
            density: stats.density,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_records() -> Vec<ReviewRecord> {
        let mut out = Vec::new();
        for u in 0..6 {
            for i in 0..6 {
                let rating = 1.0 + ((u + i) % 5) as f64;
                out.push(ReviewRecord {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i}"),
                    rating,
                    text: format!("word{u} thing{i} rated {rating}"),
                    timestamp: Some((u * 10 + i) as i64),
                });
            }
        }
        out
    }

    #[test]
    fn profiles_only_hold_training_reviews() {
        let ds = preprocess(
            grid_records(),
            &PreprocessConfig {
                min_reviews: 2,
                m: 4,
                l: 6,
                ..Default::default()
            },
        )
        .unwrap();
        let train: std::collections::HashSet<usize> = ds.split_ids(Split::Train).into_iter().collect();
        for p in ds.user_profiles.iter().chain(&ds.item_profiles) {
            for s in p.sources.iter().flatten() {
                assert!(train.contains(s));
            }
        }
        assert_eq!(ds.user_profiles[0].real_count(), 0);
        assert_eq!(ds.pairs.len(), 36);
    }

    #[test]
    fn empty_texts_are_dropped() {
        let mut records = grid_records();
        records[0].text = "  !! ".into();
        let ds = preprocess(
            records,
            &PreprocessConfig {
                min_reviews: 1,
                m: 2,
                l: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.pairs.len(), 35);
    }

    #[test]
    fn directory_round_trip() {
        let ds = preprocess(
            grid_records(),
            &PreprocessConfig {
                min_reviews: 2,
                m: 3,
                l: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.vocab, ds.vocab);
        assert_eq!(back.pairs, ds.pairs);
        assert_eq!(back.user_profiles, ds.user_profiles);
        assert_eq!(back.item_profiles, ds.item_profiles);
        assert_eq!(back.stats, ds.stats);
    }

    #[test]
    fn corrupted_profiles_are_rejected() {
        let ds = preprocess(
            grid_records(),
            &PreprocessConfig {
                min_reviews: 2,
                m: 3,
                l: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("profiles.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(CorpusError::Format { .. })));
    }

    #[test]
    fn id_space_reserves_unknown() {
        let s = IdSpace::from_ids(["b", "a", "b"]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.lookup("a"), 1);
        assert_eq!(s.lookup("zzz"), IdSpace::UNK);
        assert_eq!(s.id(2), "b");
    }
}
