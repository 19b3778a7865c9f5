use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, ModelError, LOG_FLOOR};
use crate::autograd::{Bindings, Graph, Tensor, Var};
use crate::corpus::{Batch, Profile, Side, NUM_CLASSES};
use crate::embeddings::{EmbeddingStore, ReviewRef};

/// Training mode carries the coordinates that key the dropout streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { epoch: u64, batch: u64 },
}

#[derive(Clone, Copy, Debug)]
enum Site {
    Review(Side),
    Aggregate(Side),
}

impl Site {
    fn code(self) -> u64 {
        match self {
            Site::Review(Side::User) => 1,
            Site::Review(Side::Item) => 2,
            Site::Aggregate(Side::User) => 3,
            Site::Aggregate(Side::Item) => 4,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, epoch: u64, batch: u64, site: Site) -> u64 {
    [epoch, batch, site.code()].into_iter().fold(splitmix(seed), |h, x| splitmix(h ^ x))
}

/// Inverted dropout; identity in eval mode.
fn dropout(graph: &mut Graph, x: Var, cfg: &ModelConfig, mode: Mode, site: Site) -> Result<Var, ModelError> {
    let Mode::Train { epoch, batch } = mode else {
        return Ok(x);
    };
    if cfg.dropout == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - cfg.dropout;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch, batch, site));
    let shape = graph.value(x).shape().to_vec();
    let n = graph.value(x).numel();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = graph.constant(Tensor::new(shape, mask)?);
    Ok(graph.mul(x, mask)?)
}

fn pname(side: Side, leaf: &str) -> String {
    format!("{side}.{leaf}")
}

/// Word attention and weighted-sum pooling for a set of reviews:
/// returns `s` `[n, k]` and `α` `[n, l]`.
pub(crate) fn sentiment_learner(
    cfg: &ModelConfig,
    graph: &mut Graph,
    bindings: &Bindings,
    store: &EmbeddingStore,
    side: Side,
    reviews: &[ReviewRef<'_>],
) -> Result<(Var, Var), ModelError> {
    let (n, l, k) = (reviews.len(), cfg.l, cfg.k);
    if let Some(bad) = reviews.iter().find(|r| r.review.len() != l) {
        return Err(ModelError::Config(format!("review of length {} with l = {l}", bad.review.len())));
    }
    let e = store.encode_graph(graph, bindings, reviews)?;
    let logits = graph.matmul(e, bindings.var(&pname(side, "word_attn.w")))?;
    let logits = graph.add(logits, bindings.var(&pname(side, "word_attn.b")))?;
    let logits = graph.tanh(logits)?;
    let logits = graph.reshape(logits, &[n, l])?;
    let mask: Vec<bool> = reviews.iter().flat_map(|r| r.review.mask()).collect();
    let alpha = graph.softmax_lastdim(logits, Some(&mask))?;
    let e3 = graph.reshape(e, &[n, l, k])?;
    let s = graph.weighted_sum(e3, alpha, 1)?;
    Ok((s, alpha))
}

fn sentiment_head(graph: &mut Graph, bindings: &Bindings, s: Var) -> Result<Var, ModelError> {
    let logits = graph.matmul(s, bindings.var("sentiment.w"))?;
    Ok(graph.add(logits, bindings.var("sentiment.b"))?)
}

/// Graph handles for one tower.
#[derive(Clone, Debug)]
pub struct SideVars {
    /// `[n_real, l]`, one row per real review slot (see `real_slots`).
    pub word_attention: Option<Var>,
    /// `[B·m, k]`; zero rows at masked slots.
    pub review_vectors: Var,
    /// `[n_nonempty, m]`, one row per profile with a real review.
    pub review_attention: Option<Var>,
    /// `[B, k]`; zero for profiles without reviews.
    pub aggregate: Var,
    pub id_embedding: Var,
    /// `[n_real, C]`.
    pub sentiment_logits: Option<Var>,
    pub sentiment_loss: Option<Var>,
    /// Flat `b·m + j` slot index of each real review.
    pub real_slots: Vec<usize>,
    pub nonempty: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn side_tower(
    cfg: &ModelConfig,
    graph: &mut Graph,
    bindings: &Bindings,
    store: &EmbeddingStore,
    side: Side,
    profiles: &[Cow<'_, Profile>],
    ids: &[usize],
    mode: Mode,
) -> Result<SideVars, ModelError> {
    let (b, m, k) = (profiles.len(), cfg.m, cfg.k);
    let mut real_slots = Vec::new();
    for (bi, p) in profiles.iter().enumerate() {
        if p.slots() != m {
            return Err(ModelError::Config(format!("profile {} has {} slots, m = {m}", p.key(), p.slots())));
        }
        for j in 0..m {
            let problem = match (p.review_mask[j], p.labels[j].is_some()) {
                (true, false) if cfg.variant.has_sentiment_head() => Some("has a review but no label"),
                (false, true) => Some("is masked but carries a label"),
                _ => None,
            };
            if let Some(problem) = problem {
                return Err(ModelError::Label {
                    side,
                    owner: p.owner_id.clone(),
                    slot: j,
                    problem,
                });
            }
            if p.review_mask[j] {
                real_slots.push(bi * m + j);
            }
        }
    }
    let keys: Vec<String> = profiles.iter().map(|p| p.key()).collect();

    let (review_vectors, word_attention, sentiment_logits, sentiment_loss) = if real_slots.is_empty() {
        (graph.constant(Tensor::zeros(&[b * m, k])), None, None, None)
    } else {
        let refs: Vec<ReviewRef<'_>> = real_slots
            .iter()
            .map(|&f| ReviewRef {
                review: &profiles[f / m].reviews[f % m],
                key: Some((keys[f / m].as_str(), f % m)),
            })
            .collect();
        let (s, alpha) = sentiment_learner(cfg, graph, bindings, store, side, &refs)?;
        let s = dropout(graph, s, cfg, mode, Site::Review(side))?;
        let (logits, loss) = if cfg.variant.has_sentiment_head() {
            let logits = sentiment_head(graph, bindings, s)?;
            // −(1/B) Σ_b (1/m_real_b) Σ_j log ŷ_j[y_j]
            let mut w = vec![0.0; real_slots.len() * NUM_CLASSES];
            for (n, &f) in real_slots.iter().enumerate() {
                let p = &profiles[f / m];
                let y = p.labels[f % m].expect("checked above").index();
                w[n * NUM_CLASSES + y] = -1.0 / (b as f64 * p.real_count() as f64);
            }
            let probs = graph.softmax_lastdim(logits, None)?;
            let probs = graph.clamp_min(probs, LOG_FLOOR);
            let logp = graph.log(probs)?;
            let w = graph.constant(Tensor::new(vec![real_slots.len(), NUM_CLASSES], w)?);
            let picked = graph.mul(logp, w)?;
            (Some(logits), Some(graph.sum(picked)))
        } else {
            (None, None)
        };
        (graph.scatter_rows(s, &real_slots, b * m)?, Some(alpha), logits, loss)
    };

    let table = bindings.var(&pname(side, "id_table"));
    let id_embedding = graph.gather_rows(table, ids)?;
    let repeated: Vec<usize> = ids.iter().flat_map(|&i| std::iter::repeat_n(i, m)).collect();
    let id_rep = graph.gather_rows(table, &repeated)?;
    let cat = graph.concat_cols(review_vectors, id_rep)?;
    let o = graph.matmul(cat, bindings.var(&pname(side, "concat_proj")))?;

    let nonempty: Vec<usize> = (0..b).filter(|&bi| profiles[bi].real_count() > 0).collect();
    let (aggregate, review_attention) = if nonempty.is_empty() {
        (graph.constant(Tensor::zeros(&[b, k])), None)
    } else {
        let mask: Vec<bool> = nonempty
            .iter()
            .flat_map(|&bi| profiles[bi].review_mask.iter().copied())
            .collect();
        let beta = if cfg.variant.has_review_attention() {
            let logits = graph.matmul(o, bindings.var(&pname(side, "review_attn.w")))?;
            let logits = graph.add(logits, bindings.var(&pname(side, "review_attn.b")))?;
            let logits = graph.tanh(logits)?;
            let logits = graph.reshape(logits, &[b, m])?;
            let logits = graph.gather_rows(logits, &nonempty)?;
            graph.softmax_lastdim(logits, Some(&mask))?
        } else {
            let weights = nonempty
                .iter()
                .flat_map(|&bi| {
                    let p = &profiles[bi];
                    let w = 1.0 / p.real_count() as f64;
                    p.review_mask.iter().map(move |&r| if r { w } else { 0.0 })
                })
                .collect();
            graph.constant(Tensor::new(vec![nonempty.len(), m], weights)?)
        };
        let o3 = graph.reshape(o, &[b, m, k])?;
        let o3 = graph.gather_rows(o3, &nonempty)?;
        let d = graph.weighted_sum(o3, beta, 1)?;
        let d = dropout(graph, d, cfg, mode, Site::Aggregate(side))?;
        (graph.scatter_rows(d, &nonempty, b)?, Some(beta))
    };

    Ok(SideVars {
        word_attention,
        review_vectors,
        review_attention,
        aggregate,
        id_embedding,
        sentiment_logits,
        sentiment_loss,
        real_slots,
        nonempty,
    })
}

/// Second-order factorization machine over `x` `[B, n]`: `[B]` scores.
fn factorization_machine(graph: &mut Graph, bindings: &Bindings, x: Var) -> Result<Var, ModelError> {
    let b = graph.value(x).shape()[0];
    let v = bindings.var("fm.factors");
    let linear = graph.matmul(x, bindings.var("fm.linear"))?;
    let linear = graph.add(linear, bindings.var("fm.bias"))?;
    // ½ Σ_f [(x·V)_f² − (x²·V²)_f]
    let xv = graph.matmul(x, v)?;
    let sq_of_sum = graph.mul(xv, xv)?;
    let x2 = graph.mul(x, x)?;
    let v2 = graph.mul(v, v)?;
    let sum_of_sq = graph.matmul(x2, v2)?;
    let diff = graph.sub(sq_of_sum, sum_of_sq)?;
    let pair = graph.sum_axis(diff, 1)?;
    let pair = graph.scale(pair, 0.5);
    let linear = graph.reshape(linear, &[b])?;
    Ok(graph.add(linear, pair)?)
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    pub user: SideVars,
    pub item: SideVars,
    pub fusion: Option<Var>,
    pub preference: Option<Var>,
    /// `[B]`
    pub prediction: Var,
    pub rating_loss: Var,
    /// Mean of the two sides' losses; `None` without a sentiment head.
    pub sentiment_loss: Option<Var>,
    pub loss: Var,
}

/// Records the whole model for `batch` into `graph`.
pub fn record_forward(
    cfg: &ModelConfig,
    graph: &mut Graph,
    bindings: &Bindings,
    store: &EmbeddingStore,
    batch: &Batch<'_>,
    mode: Mode,
) -> Result<ForwardGraph, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let b = batch.len();
    let user = side_tower(cfg, graph, bindings, store, Side::User, &batch.user_profiles, &batch.users, mode)?;
    let item = side_tower(cfg, graph, bindings, store, Side::Item, &batch.item_profiles, &batch.items, mode)?;

    let (fusion, preference, prediction) = if cfg.variant.uses_fm() {
        let x = graph.concat_cols(user.aggregate, user.id_embedding)?;
        let x = graph.concat_cols(x, item.aggregate)?;
        let x = graph.concat_cols(x, item.id_embedding)?;
        (None, None, factorization_machine(graph, bindings, x)?)
    } else {
        let fusion = if cfg.variant.has_fusion() {
            let projected = graph.matmul(item.aggregate, bindings.var("fusion.w"))?;
            Some(graph.mul(user.aggregate, projected)?)
        } else {
            None
        };
        let u = graph.add(user.aggregate, user.id_embedding)?;
        let i = graph.add(item.aggregate, item.id_embedding)?;
        let mut p = graph.mul(u, i)?;
        if let Some(f) = fusion {
            let wf = graph.matmul(f, bindings.var("interact.w"))?;
            p = graph.add(p, wf)?;
        }
        let p = graph.add(p, bindings.var("interact.b"))?;
        let r = graph.matmul(p, bindings.var("rating.w"))?;
        let bu = graph.gather_rows(bindings.var("user.bias"), &batch.users)?;
        let bi = graph.gather_rows(bindings.var("item.bias"), &batch.items)?;
        let r = graph.add(r, bu)?;
        let r = graph.add(r, bi)?;
        (fusion, Some(p), graph.reshape(r, &[b])?)
    };

    let target = graph.constant(Tensor::vector(batch.ratings.clone()));
    let diff = graph.sub(prediction, target)?;
    let sq = graph.mul(diff, diff)?;
    let rating_loss = graph.mean(sq);

    let sentiment_loss = if cfg.variant.has_sentiment_head() {
        let zero = || Tensor::scalar(0.0);
        let lu = user.sentiment_loss.unwrap_or_else(|| graph.constant(zero()));
        let li = item.sentiment_loss.unwrap_or_else(|| graph.constant(zero()));
        let total = graph.add(lu, li)?;
        Some(graph.scale(total, 0.5))
    } else {
        None
    };
    let lambda = cfg.effective_lambda();
    let loss = match sentiment_loss {
        Some(ls) if lambda > 0.0 => {
            let weighted = graph.scale(ls, lambda);
            graph.add(rating_loss, weighted)?
        }
        _ => rating_loss,
    };

    Ok(ForwardGraph {
        user,
        item,
        fusion,
        preference,
        prediction,
        rating_loss,
        sentiment_loss,
        loss,
    })
}

/// Per-tower values laid out on the full `(B, m, ·)` grid; masked slots are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SideTrace {
    /// `[B, m, l]`
    pub word_attention: Tensor,
    /// `[B, m]`
    pub review_attention: Tensor,
    /// `[B, m, k]`
    pub review_vectors: Tensor,
    /// `[B, k]`
    pub aggregate: Tensor,
    /// `[B, m, C]`; `None` without a sentiment head.
    pub sentiment_logits: Option<Tensor>,
    /// `[B·m]`
    pub review_mask: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub user: SideTrace,
    pub item: SideTrace,
    pub fusion: Option<Tensor>,
    pub preference: Option<Tensor>,
    pub predictions: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub loss: f64,
    pub rating_loss: f64,
    /// Reported as 0 for variants without sentiment supervision.
    pub sentiment_loss: f64,
}

fn spread_rows(values: &Tensor, rows: &[usize], total: usize, shape: Vec<usize>) -> Tensor {
    let inner = values.numel() / values.shape()[0].max(1);
    let mut out = vec![0.0; total * inner];
    for (i, &r) in rows.iter().enumerate() {
        out[r * inner..(r + 1) * inner].copy_from_slice(&values.data()[i * inner..(i + 1) * inner]);
    }
    Tensor::new(shape, out).expect("trace shape")
}

impl SideTrace {
    fn extract(cfg: &ModelConfig, graph: &Graph, vars: &SideVars, profiles: &[Cow<'_, Profile>]) -> Self {
        let (b, m, l, k) = (profiles.len(), cfg.m, cfg.l, cfg.k);
        let zeros = |shape: &[usize]| Tensor::zeros(shape);
        let word_attention = match vars.word_attention {
            Some(a) => spread_rows(graph.value(a), &vars.real_slots, b * m, vec![b, m, l]),
            None => zeros(&[b, m, l]),
        };
        let review_attention = match vars.review_attention {
            Some(a) => spread_rows(graph.value(a), &vars.nonempty, b, vec![b, m]),
            None => zeros(&[b, m]),
        };
        let sentiment_logits = vars
            .sentiment_logits
            .map(|s| spread_rows(graph.value(s), &vars.real_slots, b * m, vec![b, m, NUM_CLASSES]));
        Self {
            word_attention,
            review_attention,
            review_vectors: graph.value(vars.review_vectors).clone().reshaped(vec![b, m, k]).expect("shape"),
            aggregate: graph.value(vars.aggregate).clone(),
            sentiment_logits,
            review_mask: profiles.iter().flat_map(|p| p.review_mask.iter().copied()).collect(),
        }
    }
}

impl ForwardGraph {
    pub fn losses(&self, graph: &Graph) -> Losses {
        Losses {
            loss: graph.value(self.loss).item(),
            rating_loss: graph.value(self.rating_loss).item(),
            sentiment_loss: self.sentiment_loss.map_or(0.0, |v| graph.value(v).item()),
        }
    }

    pub fn trace(&self, cfg: &ModelConfig, graph: &Graph, batch: &Batch<'_>) -> ForwardTrace {
        ForwardTrace {
            user: SideTrace::extract(cfg, graph, &self.user, &batch.user_profiles),
            item: SideTrace::extract(cfg, graph, &self.item, &batch.item_profiles),
            fusion: self.fusion.map(|v| graph.value(v).clone()),
            preference: self.preference.map(|v| graph.value(v).clone()),
            predictions: graph.value(self.prediction).data().to_vec(),
        }
    }
}

impl Model {
    /// Forward pass without gradients.
    pub fn forward(
        &self,
        store: &EmbeddingStore,
        batch: &Batch<'_>,
        mode: Mode,
    ) -> Result<(ForwardTrace, Losses), ModelError> {
        let mut graph = Graph::new();
        let bindings = self.params.bind(&mut graph);
        let fwd = record_forward(&self.config, &mut graph, &bindings, store, batch, mode)?;
        Ok((fwd.trace(&self.config, &graph, batch), fwd.losses(&graph)))
    }

    /// Eval-mode predictions and losses for `batch`.
    pub fn predict(&self, store: &EmbeddingStore, batch: &Batch<'_>) -> Result<(Vec<f64>, Losses), ModelError> {
        let mut graph = Graph::new();
        let bindings = self.params.bind(&mut graph);
        let fwd = record_forward(&self.config, &mut graph, &bindings, store, batch, Mode::Eval)?;
        Ok((graph.value(fwd.prediction).data().to_vec(), fwd.losses(&graph)))
    }

    /// Runs one tower's sentiment learner and head on standalone reviews,
    /// returning logits `[n, C]` and word attention `[n, l]`.
    pub fn classify_reviews(
        &self,
        store: &EmbeddingStore,
        side: Side,
        reviews: &[ReviewRef<'_>],
    ) -> Result<(Tensor, Tensor), ModelError> {
        if !self.config.variant.has_sentiment_head() {
            return Err(ModelError::Config(format!(
                "variant {} has no sentiment head",
                self.config.variant
            )));
        }
        if reviews.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut graph = Graph::new();
        let bindings = self.params.bind(&mut graph);
        let (s, alpha) = sentiment_learner(&self.config, &mut graph, &bindings, store, side, reviews)?;
        let logits = sentiment_head(&mut graph, &bindings, s)?;
        Ok((graph.value(logits).clone(), graph.value(alpha).clone()))
    }
}
