//! Planted-signal synthetic review corpora.
//!
//! Ratings follow `round(μ + b_u + b_i + ⟨p_u, q_i⟩ + ε)` clamped to 1..=5.
//! Every review is exactly `review_len` tokens: `planted` sentiment words
//! drawn from the list matching the rating's label, the rest filler words.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{derive_sentiment_label, CorpusError, ReviewRecord, SentimentLabel};

pub const NEGATIVE_WORDS: [&str; 4] = ["hated", "cheap", "broken", "awful"];
pub const NEUTRAL_WORDS: [&str; 4] = ["okay", "average", "fine", "decent"];
pub const POSITIVE_WORDS: [&str; 4] = ["love", "perfect", "great", "excellent"];

pub fn sentiment_words(label: SentimentLabel) -> &'static [&'static str; 4] {
    match label {
        SentimentLabel::Negative => &NEGATIVE_WORDS,
        SentimentLabel::Neutral => &NEUTRAL_WORDS,
        SentimentLabel::Positive => &POSITIVE_WORDS,
    }
}

pub fn is_sentiment_word(token: &str) -> bool {
    [NEGATIVE_WORDS, NEUTRAL_WORDS, POSITIVE_WORDS].iter().any(|l| l.contains(&token))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// Probability that a (user, item) pair is observed.
    pub density: f64,
    pub latent_dim: usize,
    pub latent_std: f64,
    pub bias_std: f64,
    /// σ of the rating noise before rounding.
    pub noise: f64,
    pub filler_vocab: usize,
    pub review_len: usize,
    /// Sentiment words per review; 0 makes the text pure noise.
    pub planted: usize,
    /// Width of the companion static word table.
    pub glove_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 20,
            items: 10,
            density: 1.0,
            latent_dim: 3,
            latent_std: 0.6,
            bias_std: 0.6,
            noise: 0.0,
            filler_vocab: 50,
            review_len: 10,
            planted: 2,
            glove_dim: 16,
            seed: 7,
        }
    }
}

/// Ground truth written next to the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub schema_version: u32,
    pub config: SynthConfig,
    pub global_mean: f64,
    pub user_bias: BTreeMap<String, f64>,
    pub item_bias: BTreeMap<String, f64>,
    pub user_latent: BTreeMap<String, Vec<f64>>,
    pub item_latent: BTreeMap<String, Vec<f64>>,
    pub sentiment_words: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub records: Vec<ReviewRecord>,
    pub planted: Planted,
    /// `(token, vector)` rows of the static word table.
    pub glove: Vec<(String, Vec<f64>)>,
}

fn user_id(u: usize) -> String {
    format!("U{u:04}")
}

fn item_id(i: usize) -> String {
    format!("I{i:04}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, CorpusError> {
    let c = config;
    if c.users == 0 || c.items == 0 || c.review_len == 0 || c.filler_vocab == 0 || c.glove_dim == 0 {
        return Err(CorpusError::InvalidArgument("synth sizes must be positive".into()));
    }
    if c.planted > c.review_len {
        return Err(CorpusError::InvalidArgument("more planted words than review length".into()));
    }
    if !(c.density > 0.0 && c.density <= 1.0) {
        return Err(CorpusError::InvalidArgument("density must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let latent = Normal::new(0.0, c.latent_std.max(0.0)).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    let bias = Normal::new(0.0, c.bias_std.max(0.0)).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, c.noise.max(0.0)).map_err(|e| CorpusError::InvalidArgument(e.to_string()))?;
    let global_mean = 3.0;

    let bu: Vec<f64> = (0..c.users).map(|_| bias.sample(&mut rng)).collect();
    let bi: Vec<f64> = (0..c.items).map(|_| bias.sample(&mut rng)).collect();
    let pu: Vec<Vec<f64>> = (0..c.users)
        .map(|_| (0..c.latent_dim).map(|_| latent.sample(&mut rng)).collect())
        .collect();
    let qi: Vec<Vec<f64>> = (0..c.items)
        .map(|_| (0..c.latent_dim).map(|_| latent.sample(&mut rng)).collect())
        .collect();
    let fillers: Vec<String> = (0..c.filler_vocab).map(|i| format!("w{i}")).collect();

    let mut records = Vec::new();
    let mut clock = 1_400_000_000i64;
    for u in 0..c.users {
        for i in 0..c.items {
            if c.density < 1.0 && rng.random::<f64>() >= c.density {
                continue;
            }
            let dot: f64 = pu[u].iter().zip(&qi[i]).map(|(a, b)| a * b).sum();
            let raw = global_mean + bu[u] + bi[i] + dot + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, 5.0);
            let label = derive_sentiment_label(rating)?;
            let mut tokens: Vec<&str> = (0..c.review_len)
                .map(|_| fillers.choose(&mut rng).expect("nonempty").as_str())
                .collect();
            let mut positions: Vec<usize> = (0..c.review_len).collect();
            for n in 0..c.planted {
                let j = rng.random_range(n..c.review_len);
                positions.swap(n, j);
                tokens[positions[n]] = sentiment_words(label).choose(&mut rng).expect("nonempty");
            }
            clock += rng.random_range(1..10_000);
            records.push(ReviewRecord {
                user_id: user_id(u),
                item_id: item_id(i),
                rating,
                text: tokens.join(" "),
                timestamp: Some(clock),
            });
        }
    }

    // Static table: sentiment words share a class direction, fillers are noise.
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let class_dirs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..c.glove_dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut glove = Vec::new();
    for label in [SentimentLabel::Negative, SentimentLabel::Neutral, SentimentLabel::Positive] {
        for w in sentiment_words(label) {
            let v = class_dirs[label.index()]
                .iter()
                .map(|d| d + 0.3 * unit.sample(&mut rng))
                .collect();
            glove.push((w.to_string(), v));
        }
    }
    for w in &fillers {
        glove.push((w.clone(), (0..c.glove_dim).map(|_| unit.sample(&mut rng)).collect()));
    }

    let to_map = |prefix: fn(usize) -> String, v: &[f64]| v.iter().enumerate().map(|(i, x)| (prefix(i), *x)).collect();
    let to_vmap = |prefix: fn(usize) -> String, v: &[Vec<f64>]| {
        v.iter().enumerate().map(|(i, x)| (prefix(i), x.clone())).collect()
    };
    let planted = Planted {
        schema_version: 1,
        config: c.clone(),
        global_mean,
        user_bias: to_map(user_id, &bu),
        item_bias: to_map(item_id, &bi),
        user_latent: to_vmap(user_id, &pu),
        item_latent: to_vmap(item_id, &qi),
        sentiment_words: [
            ("negative", NEGATIVE_WORDS),
            ("neutral", NEUTRAL_WORDS),
            ("positive", POSITIVE_WORDS),
        ]
        .into_iter()
        .map(|(k, ws)| (k.to_string(), ws.iter().map(|w| w.to_string()).collect()))
        .collect(),
    };
    Ok(SynthCorpus {
        records,
        planted,
        glove,
    })
}

/// Writes `reviews.jsonl` (Amazon field names), `glove.txt` and
/// `planted.json` into `dir`.
pub fn write_synth(corpus: &SynthCorpus, dir: &Path) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut reviews = String::new();
    for r in &corpus.records {
        let line = serde_json::json!({
            "reviewerID": r.user_id,
            "asin": r.item_id,
            "overall": r.rating,
            "reviewText": r.text,
            "unixReviewTime": r.timestamp,
        });
        reviews.push_str(&line.to_string());
        reviews.push('\n');
    }
    let path = dir.join("reviews.jsonl");
    std::fs::write(&path, reviews).map_err(|e| CorpusError::io(&path, e))?;

    let mut glove = String::new();
    for (w, v) in &corpus.glove {
        glove.push_str(w);
        for x in v {
            glove.push_str(&format!(" {x}"));
        }
        glove.push('\n');
    }
    let path = dir.join("glove.txt");
    std::fs::write(&path, glove).map_err(|e| CorpusError::io(&path, e))?;

    let path = dir.join("planted.json");
    let json = serde_json::to_string_pretty(&corpus.planted).expect("serializable");
    std::fs::write(&path, json).map_err(|e| CorpusError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_reviews, tokenize, ReviewFormat};

    #[test]
    fn sentiment_words_match_the_rating_label() {
        let corpus = generate(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.records.len(), 200);
        for r in &corpus.records {
            let tokens = tokenize(&r.text);
            assert_eq!(tokens.len(), 10);
            let label = derive_sentiment_label(r.rating).unwrap();
            let planted: Vec<&String> = tokens.iter().filter(|t| is_sentiment_word(t)).collect();
            assert_eq!(planted.len(), 2);
            assert!(planted.iter().all(|t| sentiment_words(label).contains(&t.as_str())));
        }
    }

    #[test]
    fn ratings_follow_the_planted_function() {
        let corpus = generate(&SynthConfig::default()).unwrap();
        let p = &corpus.planted;
        for r in &corpus.records {
            let dot: f64 = p.user_latent[&r.user_id]
                .iter()
                .zip(&p.item_latent[&r.item_id])
                .map(|(a, b)| a * b)
                .sum();
            let expect = (p.global_mean + p.user_bias[&r.user_id] + p.item_bias[&r.item_id] + dot)
                .round()
                .clamp(1.0, 5.0);
            assert_eq!(r.rating, expect);
        }
        // every class occurs
        let labels: std::collections::BTreeSet<_> = corpus
            .records
            .iter()
            .map(|r| derive_sentiment_label(r.rating).unwrap())
            .collect();
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn pure_noise_text_has_no_sentiment_words() {
        let cfg = SynthConfig {
            planted: 0,
            ..SynthConfig::default()
        };
        let corpus = generate(&cfg).unwrap();
        assert!(corpus
            .records
            .iter()
            .all(|r| tokenize(&r.text).iter().all(|t| !is_sentiment_word(t))));
    }

    #[test]
    fn written_corpus_parses_back_and_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&SynthConfig::default()).unwrap();
        write_synth(&corpus, dir.path()).unwrap();
        let parsed = parse_reviews(&dir.path().join("reviews.jsonl"), ReviewFormat::AmazonJsonLines).unwrap();
        assert_eq!(parsed.records, corpus.records);
        let again = generate(&SynthConfig::default()).unwrap();
        assert_eq!(again.records, corpus.records);
        let glove = std::fs::read_to_string(dir.path().join("glove.txt")).unwrap();
        assert_eq!(glove.lines().count(), 12 + 50);
    }
}
