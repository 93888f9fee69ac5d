//! Evaluation: character/word error rates, per-entity precision/recall/F1,
//! page-classification reports and a corpus-level driver.

mod classification;
mod corpus;
mod entity;

pub use classification::{
    classification_report, ClassMetrics, ClassificationReport, ConfusionMatrix,
};
pub use corpus::{
    evaluate_corpus, evaluate_pages, load_page_dir, CorpusReport, HouseholdTally, PageEval,
};
pub use entity::{entities, entity_scores, EntityScore, TagCounts};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PageTranscript;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no prediction matches any truth page")]
    NoMatchingPages,
    #[error("{path}: {message}")]
    BadFixture { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Levenshtein distance over arbitrary sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character-level Levenshtein distance.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

/// Page text without tags: values joined by single spaces, records by newlines.
pub fn plain_text(page: &PageTranscript) -> String {
    page.records
        .iter()
        .map(|r| {
            r.fields
                .values()
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Raw edit counts plus the derived rates. Rates over an empty reference
/// are 0 when nothing was predicted and infinite otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub cer: f64,
    pub wer: f64,
    pub char_edits: usize,
    pub char_total: usize,
    pub word_edits: usize,
    pub word_total: usize,
}

fn rate(edits: usize, total: usize) -> f64 {
    match (edits, total) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        (e, t) => e as f64 / t as f64,
    }
}

impl ErrorRates {
    pub fn from_counts(
        char_edits: usize,
        char_total: usize,
        word_edits: usize,
        word_total: usize,
    ) -> Self {
        Self {
            cer: rate(char_edits, char_total),
            wer: rate(word_edits, word_total),
            char_edits,
            char_total,
            word_edits,
            word_total,
        }
    }

    /// Micro-average: pools counts, so longer pages weigh more.
    pub fn combine(&self, other: &ErrorRates) -> ErrorRates {
        Self::from_counts(
            self.char_edits + other.char_edits,
            self.char_total + other.char_total,
            self.word_edits + other.word_edits,
            self.word_total + other.word_total,
        )
    }
}

pub fn error_rates(truth: &PageTranscript, pred: &PageTranscript) -> ErrorRates {
    text_error_rates(&plain_text(truth), &plain_text(pred))
}

pub fn text_error_rates(truth: &str, pred: &str) -> ErrorRates {
    let tc: Vec<char> = truth.chars().collect();
    let pc: Vec<char> = pred.chars().collect();
    let tw: Vec<&str> = truth.split_whitespace().collect();
    let pw: Vec<&str> = pred.split_whitespace().collect();
    ErrorRates::from_counts(
        edit_distance(&tc, &pc),
        tc.len(),
        edit_distance(&tw, &pw),
        tw.len(),
    )
}

/// `a / b`, or `None` when `b` is zero.
pub(crate) fn ratio(a: u64, b: u64) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

pub(crate) fn harmonic(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "  n/a".to_string(), |v| format!("{v:.3}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EntityTag, PersonRecord};

    fn one(value: &str) -> PageTranscript {
        PageTranscript::new(
            "p",
            0,
            vec![PersonRecord::from_fields([(EntityTag::Link, value)])],
        )
    }

    #[test]
    fn distance_basics() {
        assert_eq!(char_distance("kitten", "sitting"), 3);
        assert_eq!(char_distance("", "abc"), 3);
        assert_eq!(char_distance("abc", ""), 3);
        assert_eq!(char_distance("née", "nee"), 1);
    }

    #[test]
    fn identical_pages_have_zero_rates() {
        let r = error_rates(&one("chef"), &one("chef"));
        assert_eq!((r.cer, r.wer), (0.0, 0.0));
    }

    #[test]
    fn single_substitution() {
        let r = error_rates(&one("chef"), &one("chez"));
        assert_eq!(r.cer, 0.25);
        assert_eq!(r.wer, 1.0);
    }

    #[test]
    fn deleted_word() {
        let truth = PageTranscript::new(
            "p",
            0,
            vec![PersonRecord::from_fields([
                (EntityTag::SurnameHead, "Gendre"),
                (EntityTag::Firstname, "Pierre"),
            ])],
        );
        let pred = PageTranscript::new(
            "p",
            0,
            vec![PersonRecord::from_fields([(
                EntityTag::SurnameHead,
                "Gendre",
            )])],
        );
        let r = error_rates(&truth, &pred);
        assert_eq!((r.char_edits, r.char_total), (7, 13));
        assert_eq!(r.cer, 7.0 / 13.0);
        assert_eq!(r.wer, 0.5);
    }

    #[test]
    fn empty_reference_is_flagged() {
        let r = error_rates(&PageTranscript::default(), &one("x"));
        assert_eq!(r.char_total, 0);
        assert!(r.cer.is_infinite());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"cer\":null"));
        assert_eq!(
            error_rates(&PageTranscript::default(), &PageTranscript::default()).cer,
            0.0
        );
    }

    #[test]
    fn rates_may_exceed_one() {
        let r = text_error_rates("a", "bcd");
        assert_eq!(r.cer, 3.0);
    }
}
