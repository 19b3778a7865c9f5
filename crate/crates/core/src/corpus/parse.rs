use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::{CorpusError, ReviewRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReviewFormat {
    /// One JSON object per line with `reviewerID`, `asin`, `overall`,
    /// `reviewText` and optional `unixReviewTime`.
    #[default]
    AmazonJsonLines,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct AmazonLine {
    #[serde(rename = "reviewerID")]
    reviewer_id: String,
    asin: String,
    overall: f64,
    review_text: String,
    unix_review_time: Option<i64>,
}

#[derive(Clone, Debug, Default)]
pub struct ParseReport {
    pub records: Vec<ReviewRecord>,
    /// Non-blank lines seen.
    pub lines: usize,
    pub invalid: usize,
}

pub fn parse_reviews(path: &Path, format: ReviewFormat) -> Result<ParseReport, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_reviews_str(&text, format)
}

/// Parses review lines; invalid lines are counted and skipped, and more than
/// half of them being invalid aborts.
pub fn parse_reviews_str(text: &str, format: ReviewFormat) -> Result<ParseReport, CorpusError> {
    let ReviewFormat::AmazonJsonLines = format;
    let mut report = ParseReport::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        report.lines += 1;
        match serde_json::from_str::<AmazonLine>(line) {
            Ok(r) if (1.0..=5.0).contains(&r.overall) => report.records.push(ReviewRecord {
                user_id: r.reviewer_id,
                item_id: r.asin,
                rating: r.overall,
                text: r.review_text,
                timestamp: r.unix_review_time,
            }),
            _ => report.invalid += 1,
        }
    }
    if report.lines == 0 {
        warn!("review input is empty");
    } else if report.invalid * 2 > report.lines {
        return Err(CorpusError::TooManyInvalid {
            invalid: report.invalid,
            total: report.lines,
        });
    } else if report.invalid > 0 {
        warn!("skipped {} invalid review lines of {}", report.invalid, report.lines);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_amazon_fields() {
        let line = r#"{"reviewerID":"A1","asin":"B1","overall":5.0,"reviewText":"love it"}"#;
        let report = parse_reviews_str(line, ReviewFormat::AmazonJsonLines).unwrap();
        assert_eq!(
            report.records,
            vec![ReviewRecord {
                user_id: "A1".into(),
                item_id: "B1".into(),
                rating: 5.0,
                text: "love it".into(),
                timestamp: None,
            }]
        );
    }

    #[test]
    fn reads_optional_timestamp_and_ignores_extra_fields() {
        let line = r#"{"reviewerID":"A1","asin":"B1","overall":2,"reviewText":"meh","unixReviewTime":1400000000,"summary":"x"}"#;
        let report = parse_reviews_str(line, ReviewFormat::AmazonJsonLines).unwrap();
        assert_eq!(report.records[0].timestamp, Some(1_400_000_000));
        assert_eq!(report.records[0].rating, 2.0);
    }

    #[test]
    fn empty_input_is_empty_list() {
        let report = parse_reviews_str("", ReviewFormat::AmazonJsonLines).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.lines, 0);
    }

    #[test]
    fn counts_invalid_lines() {
        let text = [
            r#"{"reviewerID":"A1","asin":"B1","overall":4.0,"reviewText":"ok"}"#,
            r#"{"reviewerID":"A2","asin":"B1","overall":9.0,"reviewText":"bad rating"}"#,
            r#"{"reviewerID":"A3","asin":"B2","overall":3.0,"reviewText":"fine"}"#,
        ]
        .join("\n");
        let report = parse_reviews_str(&text, ReviewFormat::AmazonJsonLines).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.invalid, 1);
    }

    #[test]
    fn majority_invalid_aborts() {
        let text = "not json\nalso not json\n{\"reviewerID\":\"A\",\"asin\":\"B\",\"overall\":1,\"reviewText\":\"x\"}";
        let err = parse_reviews_str(text, ReviewFormat::AmazonJsonLines).unwrap_err();
        assert!(matches!(err, CorpusError::TooManyInvalid { invalid: 2, total: 3 }));
    }

    #[test]
    fn unreadable_file() {
        let err = parse_reviews(Path::new("/nonexistent/reviews.jsonl"), ReviewFormat::AmazonJsonLines).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }
}
