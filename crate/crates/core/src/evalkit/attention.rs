use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{argmax, io_err, write_json, EvalError, SCHEMA_VERSION};
use crate::binio::write_atomic;
use crate::corpus::{Batch, Dataset, SentimentLabel, Side};
use crate::embeddings::EmbeddingStore;
use crate::model::{Mode, Model, SideTrace, Variant};

/// One real review slot of a scored pair, with its word and review attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewAttention {
    pub side: Side,
    pub slot: usize,
    pub tokens: Vec<String>,
    /// Word attention over `tokens` (pad positions dropped).
    pub alpha: Vec<f64>,
    /// Review attention β; uniform over real slots for `sa`.
    pub review_weight: f64,
    pub sentiment_prediction: Option<SentimentLabel>,
    pub sentiment_probs: Option<[f64; 3]>,
    pub label: Option<SentimentLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub schema_version: u32,
    pub user_id: String,
    pub item_id: String,
    pub variant: Variant,
    pub predicted_rating: f64,
    pub true_rating: f64,
    pub reviews: Vec<ReviewAttention>,
}

fn softmax3(logits: &[f64]) -> [f64; 3] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    [e[0] / z, e[1] / z, e[2] / z]
}

fn side_reviews(model: &Model, dataset: &Dataset, batch: &Batch<'_>, trace: &SideTrace, side: Side) -> Vec<ReviewAttention> {
    let profile = match side {
        Side::User => &batch.user_profiles[0],
        Side::Item => &batch.item_profiles[0],
    };
    let m = profile.slots();
    let real = profile.real_count();
    let uses_beta = model.config.variant.has_review_attention();
    (0..m)
        .filter(|&j| profile.review_mask[j])
        .map(|j| {
            let review = &profile.reviews[j];
            let n = review.true_length;
            let logits = trace.sentiment_logits.as_ref().map(|t| t.row(j).to_vec());
            ReviewAttention {
                side,
                slot: j,
                tokens: dataset.vocab.decode(review.real_ids()),
                alpha: trace.word_attention.row(j)[..n].to_vec(),
                review_weight: if uses_beta {
                    trace.review_attention.row(0)[j]
                } else {
                    1.0 / real as f64
                },
                sentiment_prediction: logits.as_ref().and_then(|l| SentimentLabel::from_index(argmax(l))),
                sentiment_probs: logits.as_ref().map(|l| softmax3(l)),
                label: profile.labels[j],
            }
        })
        .collect()
}

/// Eval-mode attention for one observed pair; its own review is masked
/// out of both profiles exactly as at scoring time.
pub fn attention_report(
    model: &Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    user_id: &str,
    item_id: &str,
) -> Result<AttentionReport, EvalError> {
    let pair = dataset.pair_by_ids(user_id, item_id).ok_or_else(|| EvalError::UnknownPair {
        user: user_id.to_string(),
        item: item_id.to_string(),
    })?;
    let batch = Batch::from_pairs(dataset, &[pair.id], true);
    let (trace, _) = model.forward(store, &batch, Mode::Eval)?;
    let mut reviews = side_reviews(model, dataset, &batch, &trace.user, Side::User);
    reviews.extend(side_reviews(model, dataset, &batch, &trace.item, Side::Item));
    Ok(AttentionReport {
        schema_version: SCHEMA_VERSION,
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        variant: model.config.variant,
        predicted_rating: trace.predictions[0],
        true_rating: pair.rating,
        reviews,
    })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone HTML: each token shaded with opacity α / max α of its review.
pub fn render_html(report: &AttentionReport) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{u} / {i}</title>\n\
         <style>body{{font-family:sans-serif}} .tok{{padding:1px 2px;margin:1px;display:inline-block}}</style>\n\
         </head><body>\n<h2>{u} &rarr; {i}</h2>\n<p>{} predicted {:.3}, actual {:.1}</p>\n",
        escape(report.variant.method_name()),
        report.predicted_rating,
        report.true_rating,
        u = escape(&report.user_id),
        i = escape(&report.item_id),
    );
    for side in [Side::User, Side::Item] {
        let _ = writeln!(out, "<h3>{side} reviews</h3>");
        for r in report.reviews.iter().filter(|r| r.side == side) {
            let max = r.alpha.iter().copied().fold(0.0, f64::max);
            let sentiment = r.sentiment_prediction.map_or("-".to_string(), |s| format!("{s:?}").to_lowercase());
            let _ = write!(
                out,
                "<div><small>slot {} &beta;={:.3} sentiment={}</small><br>",
                r.slot, r.review_weight, sentiment
            );
            for (tok, &a) in r.tokens.iter().zip(&r.alpha) {
                let opacity = if max > 0.0 { a / max } else { 0.0 };
                let _ = write!(
                    out,
                    "<span class=\"tok\" title=\"{a:.4}\" style=\"background:rgba(220,40,40,{opacity:.3})\">{}</span>",
                    escape(tok)
                );
            }
            out.push_str("</div>\n");
        }
    }
    out.push_str("</body></html>\n");
    out
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `<user>_<item>.json` and `.html` under `out_dir` for every pair.
pub fn export_attention(
    model: &Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    pairs: &[(String, String)],
    out_dir: &Path,
) -> Result<Vec<AttentionReport>, EvalError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    pairs
        .iter()
        .map(|(u, i)| {
            let report = attention_report(model, dataset, store, u, i)?;
            let stem = format!("{}_{}", file_stem(u), file_stem(i));
            write_json(&out_dir.join(format!("{stem}.json")), &report)?;
            let html = out_dir.join(format!("{stem}.html"));
            write_atomic(&html, render_html(&report).as_bytes()).map_err(io_err(&html))?;
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess, PreprocessConfig};
    use crate::embeddings::init_trainable_table;
    use crate::model::ModelConfig;
    use crate::synth::{generate, SynthConfig};

    fn setup(variant: Variant) -> (Dataset, EmbeddingStore, Model) {
        let corpus = generate(&SynthConfig {
            users: 6,
            items: 5,
            ..Default::default()
        })
        .unwrap();
        let ds = preprocess(
            corpus.records,
            &PreprocessConfig {
                min_reviews: 1,
                m: 3,
                l: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let store = EmbeddingStore::Trainable(init_trainable_table(ds.vocab.len(), 4, 1));
        let cfg = ModelConfig::for_dataset(&ds, &store, 4, variant, 1.0, 0.0, 3).unwrap();
        let mut model = Model::new(cfg, &store).unwrap();
        model.randomize(0.5, 9);
        (ds, store, model)
    }

    #[test]
    fn report_attention_is_normalised_and_matches_prediction() {
        let (ds, store, model) = setup(Variant::Full);
        let p = &ds.pairs[0];
        let r = attention_report(&model, &ds, &store, &p.user_id, &p.item_id).unwrap();
        let batch = Batch::from_pairs(&ds, &[p.id], true);
        let (pred, _) = model.predict(&store, &batch).unwrap();
        assert_eq!(r.predicted_rating, pred[0]);
        assert!(!r.reviews.is_empty());
        for side in [Side::User, Side::Item] {
            let rs: Vec<_> = r.reviews.iter().filter(|x| x.side == side).collect();
            if !rs.is_empty() {
                let beta: f64 = rs.iter().map(|x| x.review_weight).sum();
                assert!((beta - 1.0).abs() < 1e-9);
            }
        }
        for rev in &r.reviews {
            assert_eq!(rev.tokens.len(), rev.alpha.len());
            assert!((rev.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let probs = rev.sentiment_probs.unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sa_reports_uniform_review_weights_and_sp_has_no_sentiment() {
        let (ds, store, model) = setup(Variant::Sa);
        let p = &ds.pairs[0];
        let r = attention_report(&model, &ds, &store, &p.user_id, &p.item_id).unwrap();
        let users: Vec<_> = r.reviews.iter().filter(|x| x.side == Side::User).collect();
        for u in &users {
            assert!((u.review_weight - 1.0 / users.len() as f64).abs() < 1e-12);
        }
        let (ds, store, model) = setup(Variant::Sp);
        let r = attention_report(&model, &ds, &store, &p.user_id, &p.item_id).unwrap();
        assert!(r.reviews.iter().all(|x| x.sentiment_probs.is_none()));
    }

    #[test]
    fn unknown_pair_is_an_error() {
        let (ds, store, model) = setup(Variant::Full);
        let err = attention_report(&model, &ds, &store, "nobody", "nothing").unwrap_err();
        assert!(matches!(err, EvalError::UnknownPair { .. }));
    }

    #[test]
    fn export_writes_json_and_html() {
        let (ds, store, model) = setup(Variant::Full);
        let dir = tempfile::tempdir().unwrap();
        let p = &ds.pairs[1];
        export_attention(&model, &ds, &store, &[(p.user_id.clone(), p.item_id.clone())], dir.path()).unwrap();
        let stem = format!("{}_{}", p.user_id, p.item_id);
        let json = std::fs::read_to_string(dir.path().join(format!("{stem}.json"))).unwrap();
        let back: AttentionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.user_id, p.user_id);
        let html = std::fs::read_to_string(dir.path().join(format!("{stem}.html"))).unwrap();
        assert!(html.contains("rgba(220,40,40,1.000)"));
    }

    #[test]
    fn file_stems_are_sanitised() {
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
