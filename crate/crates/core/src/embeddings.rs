//! Word-vector backends producing the `l × k` matrix for a review.
//!
//! * static table: GloVe-style text file, frozen
//! * trainable table: randomly initialised, updated by the optimizer
//! * contextual store: precomputed per-review matrices (`SIFNEMB1`), frozen,
//!   optionally projected to `k` by a learned map

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Bindings, Graph, Tensor, Var};
use crate::binio::{verify_crc, ByteReader, ByteWriter};
use crate::corpus::{Dataset, TokenizedReview, Vocab, PAD_ID};

pub const CONTEXTUAL_MAGIC: &[u8; 8] = b"SIFNEMB1";
const CONTEXTUAL_HEADER: usize = 16;
/// Standard deviation for randomly initialised word vectors.
pub const INIT_STD: f64 = 0.01;

pub const TABLE_PARAM: &str = "embed.table";
pub const PROJECTION_PARAM: &str = "embed.proj";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} components, found {found}")]
    InconsistentWidth { line: usize, expected: usize, found: usize },
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error("contextual store corrupted: {0}")]
    Checksum(String),
    #[error("no contextual matrix for review ({owner}, {ordinal})")]
    MissingKey { owner: String, ordinal: usize },
    #[error("store width {found} does not match configured width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Graph(#[from] AutogradError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A review to encode, plus its contextual-store key when it sits in a
/// profile slot.
#[derive(Clone, Copy, Debug)]
pub struct ReviewRef<'a> {
    pub review: &'a TokenizedReview,
    pub key: Option<(&'a str, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct StaticTable {
    pub table: Tensor,
    pub coverage: Coverage,
}

#[derive(Clone, Debug)]
pub struct TrainableTable {
    /// Initial values; the live copy is a model parameter.
    pub table: Tensor,
}

#[derive(Clone, Debug)]
pub struct ContextualStore {
    width: usize,
    l: usize,
    index: HashMap<(String, usize), usize>,
    blocks: Vec<f32>,
}

#[derive(Clone, Debug)]
pub enum EmbeddingStore {
    Static(StaticTable),
    Trainable(TrainableTable),
    Contextual(ContextualStore),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    StaticTable,
    TrainableTable,
    ContextualStore,
}

fn random_table(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut data: Vec<f64> = (0..rows * k).map(|_| normal.sample(rng)).collect();
    data[PAD_ID as usize * k..(PAD_ID as usize + 1) * k].fill(0.0);
    data
}

/// Reads a GloVe-format text table (`token v1 … vk` per line) aligned to
/// `vocab`. Vocabulary tokens missing from the file are drawn from
/// N(0, 0.01²); the PAD row is zero.
pub fn load_static_table(path: &Path, vocab: &Vocab, seed: u64) -> Result<StaticTable, EmbeddingError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    let mut width = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EmbeddingError::Format(format!("line {}: {e}", n + 1)))?;
        let k = *width.get_or_insert(values.len());
        if values.len() != k || k == 0 {
            return Err(EmbeddingError::InconsistentWidth {
                line: n + 1,
                expected: k,
                found: values.len(),
            });
        }
        if vocab.get(token).is_some() {
            vectors.insert(token.to_string(), values);
        }
    }
    let k = width.ok_or_else(|| EmbeddingError::Format("no vectors in file".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = random_table(vocab.len(), k, &mut rng);
    let mut found = 0;
    for (id, token) in vocab.tokens().iter().enumerate().skip(2) {
        if let Some(v) = vectors.get(token) {
            data[id * k..(id + 1) * k].copy_from_slice(v);
            found += 1;
        }
    }
    Ok(StaticTable {
        table: Tensor::new(vec![vocab.len(), k], data).expect("table shape"),
        coverage: Coverage {
            found,
            total: vocab.len().saturating_sub(2),
        },
    })
}

/// Random N(0, 0.01²) table with a zero PAD row.
pub fn init_trainable_table(vocab_size: usize, k: usize, seed: u64) -> TrainableTable {
    assert!(k >= 1 && vocab_size >= 1, "table needs positive dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainableTable {
        table: Tensor::new(vec![vocab_size, k], random_table(vocab_size, k, &mut rng)).expect("table shape"),
    }
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    owner_id: String,
    ordinal: usize,
    offset: u64,
}

/// Writes a contextual store: `(owner key, slot ordinal, l×width row-major
/// matrix)` entries in the given order.
pub fn write_contextual_store<'a>(
    index_path: &Path,
    matrix_path: &Path,
    width: usize,
    l: usize,
    entries: impl IntoIterator<Item = (&'a str, usize, &'a [f32])>,
) -> Result<(), EmbeddingError> {
    let mut w = ByteWriter::new();
    w.bytes(CONTEXTUAL_MAGIC);
    w.u32(width as u32);
    w.u32(l as u32);
    let mut index = String::new();
    for (owner, ordinal, block) in entries {
        if block.len() != width * l {
            return Err(EmbeddingError::Format(format!(
                "block for ({owner}, {ordinal}) has {} values, expected {}",
                block.len(),
                width * l
            )));
        }
        let line = IndexLine {
            owner_id: owner.to_string(),
            ordinal,
            offset: w.len() as u64,
        };
        index.push_str(&serde_json::to_string(&line).expect("serializable"));
        index.push('\n');
        for &v in block {
            w.f32(v);
        }
    }
    std::fs::write(matrix_path, w.finish_with_crc()).map_err(io_err(matrix_path))?;
    std::fs::write(index_path, index).map_err(io_err(index_path))?;
    Ok(())
}

/// Loads a contextual store, validating magic, CRC32, index offsets and
/// (when given) the expected `l`.
pub fn load_contextual_store(
    index_path: &Path,
    matrix_path: &Path,
    expected_l: Option<usize>,
) -> Result<ContextualStore, EmbeddingError> {
    let bytes = std::fs::read(matrix_path).map_err(io_err(matrix_path))?;
    let payload = verify_crc(&bytes).map_err(EmbeddingError::Checksum)?;
    let mut r = ByteReader::new(payload);
    if r.take(8).map_err(EmbeddingError::Format)? != CONTEXTUAL_MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let width = r.u32().map_err(EmbeddingError::Format)? as usize;
    let l = r.u32().map_err(EmbeddingError::Format)? as usize;
    if width == 0 || l == 0 {
        return Err(EmbeddingError::Format("zero width or length".into()));
    }
    if let Some(expected) = expected_l {
        if expected != l {
            return Err(EmbeddingError::Format(format!("store has l = {l}, dataset has l = {expected}")));
        }
    }
    let block_bytes = width * l * 4;
    if !r.remaining().is_multiple_of(block_bytes) {
        return Err(EmbeddingError::Format("matrix data is not a whole number of blocks".into()));
    }
    let n_blocks = r.remaining() / block_bytes;
    let blocks = (0..n_blocks * width * l)
        .map(|_| r.f32())
        .collect::<Result<Vec<_>, _>>()
        .map_err(EmbeddingError::Format)?;

    let text = std::fs::read_to_string(index_path).map_err(io_err(index_path))?;
    let mut index = HashMap::new();
    let mut last: Option<u64> = None;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: IndexLine =
            serde_json::from_str(line).map_err(|e| EmbeddingError::Format(format!("index line {}: {e}", n + 1)))?;
        if last.is_some_and(|prev| entry.offset <= prev) {
            return Err(EmbeddingError::Format(format!("index offsets not increasing at line {}", n + 1)));
        }
        last = Some(entry.offset);
        let rel = entry
            .offset
            .checked_sub(CONTEXTUAL_HEADER as u64)
            .ok_or_else(|| EmbeddingError::Format(format!("offset {} inside header", entry.offset)))?
            as usize;
        if !rel.is_multiple_of(block_bytes) || rel / block_bytes >= n_blocks {
            return Err(EmbeddingError::Format(format!("offset {} is not a block start", entry.offset)));
        }
        index.insert((entry.owner_id, entry.ordinal), rel / block_bytes);
    }
    Ok(ContextualStore { width, l, index, blocks })
}

impl ContextualStore {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, owner: &str, ordinal: usize) -> bool {
        self.index.contains_key(&(owner.to_string(), ordinal))
    }

    /// The stored `l × width` block.
    pub fn lookup(&self, owner: &str, ordinal: usize) -> Result<&[f32], EmbeddingError> {
        let block = self
            .index
            .get(&(owner.to_string(), ordinal))
            .ok_or_else(|| EmbeddingError::MissingKey {
                owner: owner.to_string(),
                ordinal,
            })?;
        let n = self.width * self.l;
        Ok(&self.blocks[block * n..(block + 1) * n])
    }

    /// Fraction of real profile slots in `dataset` the store can resolve.
    pub fn coverage(&self, dataset: &Dataset) -> Coverage {
        let mut c = Coverage { found: 0, total: 0 };
        for p in dataset.user_profiles.iter().chain(&dataset.item_profiles).filter(|p| p.real_count() > 0) {
            let key = p.key();
            for j in (0..p.slots()).filter(|&j| p.review_mask[j]) {
                c.total += 1;
                c.found += usize::from(self.contains(&key, j));
            }
        }
        c
    }
}

impl EmbeddingStore {
    pub fn kind(&self) -> BackendKind {
        match self {
            EmbeddingStore::Static(_) => BackendKind::StaticTable,
            EmbeddingStore::Trainable(_) => BackendKind::TrainableTable,
            EmbeddingStore::Contextual(_) => BackendKind::ContextualStore,
        }
    }

    /// Width of the vectors the backend itself produces.
    pub fn native_width(&self) -> usize {
        match self {
            EmbeddingStore::Static(t) => t.table.shape()[1],
            EmbeddingStore::Trainable(t) => t.table.shape()[1],
            EmbeddingStore::Contextual(c) => c.width,
        }
    }

    /// Row count of table backends.
    pub fn table_rows(&self) -> Option<usize> {
        match self {
            EmbeddingStore::Static(t) => Some(t.table.shape()[0]),
            EmbeddingStore::Trainable(t) => Some(t.table.shape()[0]),
            EmbeddingStore::Contextual(_) => None,
        }
    }

    /// Values of one review's `l × native_width` matrix, outside any graph.
    /// Pad positions are zero rows; the trainable backend uses its initial
    /// table.
    pub fn encode_review(&self, review: ReviewRef<'_>) -> Result<Tensor, EmbeddingError> {
        let l = review.review.len();
        let k = self.native_width();
        let mut data = vec![0.0; l * k];
        match self {
            EmbeddingStore::Static(StaticTable { table, .. }) | EmbeddingStore::Trainable(TrainableTable { table }) => {
                for (pos, &id) in review.review.real_ids().iter().enumerate() {
                    data[pos * k..(pos + 1) * k].copy_from_slice(table.row(id as usize));
                }
            }
            EmbeddingStore::Contextual(store) => {
                self.fill_contextual(store, review, &mut data)?;
            }
        }
        Ok(Tensor::new(vec![l, k], data).expect("review shape"))
    }

    fn fill_contextual(&self, store: &ContextualStore, review: ReviewRef<'_>, out: &mut [f64]) -> Result<(), EmbeddingError> {
        let (owner, ordinal) = review.key.ok_or_else(|| EmbeddingError::MissingKey {
            owner: "<unkeyed review>".into(),
            ordinal: 0,
        })?;
        if review.review.len() != store.l {
            return Err(EmbeddingError::Format(format!(
                "review length {} vs store length {}",
                review.review.len(),
                store.l
            )));
        }
        let block = store.lookup(owner, ordinal)?;
        let n = review.review.true_length * store.width;
        for (dst, &src) in out[..n].iter_mut().zip(&block[..n]) {
            *dst = f64::from(src);
        }
        Ok(())
    }

    /// Records the word matrices of `reviews` in `graph` as one
    /// `[reviews·l, k]` tensor. The trainable backend indexes the bound
    /// `embed.table`; frozen backends pass through `embed.proj` when bound.
    pub fn encode_graph(
        &self,
        graph: &mut Graph,
        bindings: &Bindings,
        reviews: &[ReviewRef<'_>],
    ) -> Result<Var, EmbeddingError> {
        let l = reviews.first().map_or(0, |r| r.review.len());
        match self {
            EmbeddingStore::Trainable(_) => {
                let ids: Vec<usize> = reviews
                    .iter()
                    .flat_map(|r| r.review.token_ids.iter().map(|&t| t as usize))
                    .collect();
                Ok(graph.gather_rows(bindings.var(TABLE_PARAM), &ids)?)
            }
            EmbeddingStore::Static(_) | EmbeddingStore::Contextual(_) => {
                let k = self.native_width();
                let mut data = Vec::with_capacity(reviews.len() * l * k);
                for r in reviews {
                    data.extend(self.encode_review(*r)?.into_data());
                }
                let raw = graph.constant(Tensor::new(vec![reviews.len() * l, k], data)?);
                match bindings.get(PROJECTION_PARAM) {
                    Some(proj) => Ok(graph.matmul(raw, proj)?),
                    None => Ok(raw),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamStore;
    use crate::corpus::build_vocab;

    fn vocab() -> Vocab {
        build_vocab(["good bad good", "meh"], 1)
    }

    #[test]
    fn static_table_reads_vectors_and_zeroes_pad() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("glove.txt");
        std::fs::write(&path, "good 0.1 0.2\nunrelated 9 9\n").unwrap();
        let v = vocab();
        let t = load_static_table(&path, &v, 1).unwrap();
        assert_eq!(t.table.row(v.id("good") as usize), &[0.1, 0.2]);
        assert_eq!(t.table.row(PAD_ID as usize), &[0.0, 0.0]);
        assert_eq!(t.coverage, Coverage { found: 1, total: 3 });
        assert!((t.coverage.fraction() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn static_table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("glove.txt");
        std::fs::write(&path, "good 0.1 0.2\nbad 0.3\n").unwrap();
        assert!(matches!(
            load_static_table(&path, &vocab(), 1),
            Err(EmbeddingError::InconsistentWidth {
                line: 2,
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(
            load_static_table(&dir.path().join("missing.txt"), &vocab(), 1),
            Err(EmbeddingError::Io { .. })
        ));
    }

    #[test]
    fn trainable_table_is_seeded_with_zero_pad() {
        let a = init_trainable_table(50, 8, 3);
        let b = init_trainable_table(50, 8, 3);
        assert_eq!(a.table, b.table);
        assert!(a.table.row(0).iter().all(|&x| x == 0.0));
        assert_ne!(a.table, init_trainable_table(50, 8, 4).table);
    }

    #[test]
    fn trainable_table_mean_is_near_zero() {
        let t = init_trainable_table(2001, 16, 11);
        let vals = &t.table.data()[16..];
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * INIT_STD / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn pad_review_encodes_to_zeros_and_rows_follow_table() {
        let store = EmbeddingStore::Trainable(init_trainable_table(6, 3, 1));
        let pad = TokenizedReview::padding(4);
        let z = store.encode_review(ReviewRef { review: &pad, key: None }).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let r = TokenizedReview::from_ids(&[3, 5], 4);
        let m = store.encode_review(ReviewRef { review: &r, key: None }).unwrap();
        let EmbeddingStore::Trainable(t) = &store else { unreachable!() };
        assert_eq!(m.row(0), t.table.row(3));
        assert_eq!(m.row(1), t.table.row(5));
        assert!(m.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pad_rows_receive_zero_gradient_through_masked_attention() {
        let table = init_trainable_table(6, 3, 1);
        let store = EmbeddingStore::Trainable(table.clone());
        let mut params = ParamStore::new();
        params.insert_frozen(TABLE_PARAM, table.table.clone(), vec![0]);
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let r = TokenizedReview::from_ids(&[2, 4], 4);
        let e = store.encode_graph(&mut g, &b, &[ReviewRef { review: &r, key: None }]).unwrap();
        let w = g.constant(Tensor::new(vec![3, 1], vec![0.5, -1.0, 2.0]).unwrap());
        let logits = g.matmul(e, w).unwrap();
        let logits = g.reshape(logits, &[1, 4]).unwrap();
        let alpha = g.softmax_lastdim(logits, Some(&r.mask())).unwrap();
        let e3 = g.reshape(e, &[1, 4, 3]).unwrap();
        let s = g.weighted_sum(e3, alpha, 1).unwrap();
        let sq = g.mul(s, s).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        let grad = g.grad(b.var(TABLE_PARAM)).unwrap();
        assert!(grad.row(0).iter().all(|&x| x == 0.0));
        assert!(grad.row(2).iter().any(|&x| x != 0.0));
    }

    fn write_store(dir: &Path) -> (PathBuf, PathBuf) {
        let idx = dir.join("index.jsonl");
        let mat = dir.join("matrix.bin");
        let a: Vec<f32> = (0..6).map(|x| x as f32 * 0.5).collect();
        let b: Vec<f32> = (0..6).map(|x| -(x as f32)).collect();
        write_contextual_store(&idx, &mat, 2, 3, [("user:u", 0, a.as_slice()), ("item:i", 1, b.as_slice())]).unwrap();
        (idx, mat)
    }

    #[test]
    fn contextual_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (idx, mat) = write_store(dir.path());
        let store = load_contextual_store(&idx, &mat, Some(3)).unwrap();
        assert_eq!(store.len(), 2);
        let expect: Vec<f32> = (0..6).map(|x| -(x as f32)).collect();
        assert_eq!(store.lookup("item:i", 1).unwrap(), expect.as_slice());
        assert!(matches!(
            store.lookup("item:i", 0),
            Err(EmbeddingError::MissingKey { ordinal: 0, .. })
        ));
    }

    #[test]
    fn truncated_matrix_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let (idx, mat) = write_store(dir.path());
        let bytes = std::fs::read(&mat).unwrap();
        std::fs::write(&mat, &bytes[..bytes.len() - 6]).unwrap();
        assert!(matches!(
            load_contextual_store(&idx, &mat, None),
            Err(EmbeddingError::Checksum(_))
        ));
    }

    #[test]
    fn contextual_rows_differ_across_reviews_for_same_token() {
        let dir = tempfile::tempdir().unwrap();
        let (idx, mat) = write_store(dir.path());
        let store = EmbeddingStore::Contextual(load_contextual_store(&idx, &mat, None).unwrap());
        // both reviews start with token 7
        let r = TokenizedReview::from_ids(&[7, 8], 3);
        let a = store.encode_review(ReviewRef { review: &r, key: Some(("user:u", 0)) }).unwrap();
        let b = store.encode_review(ReviewRef { review: &r, key: Some(("item:i", 1)) }).unwrap();
        assert_ne!(a.row(0), b.row(0));
        // pad position zeroed even though the stored block has values there
        assert_eq!(a.row(2), &[0.0, 0.0]);
    }
}
