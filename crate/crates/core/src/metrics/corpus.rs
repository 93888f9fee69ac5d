use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    entity_scores, error_rates, fmt_opt, EntityScore, ErrorRates, MetricsError, TagCounts,
};
use crate::domain::{parse_fixture, PageTranscript};
use crate::household::{group_page, matching_households};
use crate::label_codec::decode_lenient;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseholdTally {
    pub matched: usize,
    pub total: usize,
}

impl HouseholdTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.matched as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageEval {
    pub name: String,
    pub missing_prediction: bool,
    pub error_rates: ErrorRates,
    pub entities: TagCounts,
    pub households: HouseholdTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub pages: Vec<PageEval>,
    pub error_rates: ErrorRates,
    pub entities: EntityScore,
    pub households: HouseholdTally,
    /// Predictions with no truth counterpart; ignored in the figures.
    pub unmatched_predictions: Vec<String>,
}

impl CorpusReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let missing = self.pages.iter().filter(|p| p.missing_prediction).count();
        let _ = writeln!(
            out,
            "pages: {} ({} without prediction)",
            self.pages.len(),
            missing
        );
        let r = &self.error_rates;
        let _ = writeln!(
            out,
            "CER {:.2}% ({} / {} chars)   WER {:.2}% ({} / {} words)",
            r.cer * 100.0,
            r.char_edits,
            r.char_total,
            r.wer * 100.0,
            r.word_edits,
            r.word_total
        );
        let _ = writeln!(
            out,
            "households correctly grouped: {} / {} ({})",
            self.households.matched,
            self.households.total,
            fmt_opt(self.households.accuracy())
        );
        let _ = writeln!(out, "\nentities (exact text match):");
        out.push_str(&self.entities.render_table());
        out
    }
}

/// Evaluates `(name, truth, prediction)` triples. A missing prediction
/// counts as an empty page, so all of its truth is deleted.
pub fn evaluate_pages(pages: &[(String, PageTranscript, Option<PageTranscript>)]) -> CorpusReport {
    let empty = PageTranscript::default();
    let mut report = CorpusReport {
        pages: Vec::with_capacity(pages.len()),
        error_rates: ErrorRates::default(),
        entities: EntityScore::default(),
        households: HouseholdTally::default(),
        unmatched_predictions: Vec::new(),
    };
    for (name, truth, pred) in pages {
        let p = pred.as_ref().unwrap_or(&empty);
        let rates = error_rates(truth, p);
        let ents = entity_scores(truth, p);
        let rows = |page: &PageTranscript| -> Vec<Vec<usize>> {
            group_page(page)
                .into_iter()
                .map(|h| h.positions.into_iter().map(|pos| pos.row).collect())
                .collect()
        };
        let (matched, total) = matching_households(&rows(p), &rows(truth));
        let households = HouseholdTally { matched, total };

        report.error_rates = report.error_rates.combine(&rates);
        report.entities.add(&ents);
        report.households.matched += matched;
        report.households.total += total;
        report.pages.push(PageEval {
            name: name.clone(),
            missing_prediction: pred.is_none(),
            error_rates: rates,
            entities: ents.total,
            households,
        });
    }
    report
}

/// Loads every page file of a directory keyed by file stem. `.label` files
/// are decoded leniently; anything else is read as a page fixture.
pub fn load_page_dir(dir: &Path) -> Result<BTreeMap<String, PageTranscript>, MetricsError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if !path.is_file() || stem.starts_with('.') {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let page = if path.extension().is_some_and(|e| e == "label") {
            decode_lenient(&text).transcript
        } else {
            parse_fixture(&text)
                .map_err(|e| MetricsError::BadFixture {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
                .transcript
        };
        out.insert(stem.to_string(), page);
    }
    Ok(out)
}

pub fn evaluate_corpus(truth_dir: &Path, pred_dir: &Path) -> Result<CorpusReport, MetricsError> {
    let truth = load_page_dir(truth_dir)?;
    let mut preds = load_page_dir(pred_dir)?;
    if !truth.keys().any(|k| preds.contains_key(k)) {
        return Err(MetricsError::NoMatchingPages);
    }
    let triples: Vec<_> = truth
        .into_iter()
        .map(|(name, t)| {
            let p = preds.remove(&name);
            (name, t, p)
        })
        .collect();
    let mut report = evaluate_pages(&triples);
    report.unmatched_predictions = preds.into_keys().collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{write_fixture, EntityTag, PageFixture, PersonRecord};

    fn page(values: &[(&str, bool)]) -> PageTranscript {
        PageTranscript::new(
            "p",
            0,
            values
                .iter()
                .map(|&(v, head)| {
                    let tag = if head {
                        EntityTag::SurnameHead
                    } else {
                        EntityTag::Surname
                    };
                    PersonRecord::from_fields([(tag, v)])
                })
                .collect(),
        )
    }

    fn write(dir: &Path, name: &str, p: &PageTranscript) {
        fs::write(dir.join(name), write_fixture(&PageFixture::from(p.clone()))).unwrap();
    }

    #[test]
    fn same_directory_scores_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.page", &page(&[("A", true), ("b", false)]));
        write(dir.path(), "b.page", &page(&[("C", true)]));
        let r = evaluate_corpus(dir.path(), dir.path()).unwrap();
        assert_eq!(r.error_rates.cer, 0.0);
        assert_eq!(r.entities.total.f1(), Some(1.0));
        assert_eq!(
            r.households,
            HouseholdTally {
                matched: 2,
                total: 2
            }
        );
    }

    #[test]
    fn missing_prediction_is_all_deletions() {
        let truth = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let a = page(&[("Abc", true)]);
        write(truth.path(), "a.page", &a);
        write(truth.path(), "b.page", &page(&[("Defg", true)]));
        write(pred.path(), "a.page", &a);
        let r = evaluate_corpus(truth.path(), pred.path()).unwrap();
        let b = r.pages.iter().find(|p| p.name == "b").unwrap();
        assert!(b.missing_prediction);
        assert_eq!((b.error_rates.char_edits, b.error_rates.char_total), (4, 4));
        assert_eq!(r.error_rates.char_edits, 4);
        assert_eq!(r.error_rates.char_total, 7);
    }

    #[test]
    fn label_predictions_are_decoded() {
        let truth = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        write(
            truth.path(),
            "a.page",
            &page(&[("Gendre", true), ("Paraud", false)]),
        );
        fs::write(pred.path().join("a.label"), "<s-h>Gendre\n<s>Parau").unwrap();
        let r = evaluate_corpus(truth.path(), pred.path()).unwrap();
        assert_eq!(r.error_rates.char_edits, 1);
        assert_eq!(r.entities.total.tp, 1);
        assert!(r.render_text().contains("CER"));
    }

    #[test]
    fn no_overlap_is_an_error() {
        let truth = tempfile::tempdir().unwrap();
        let pred = tempfile::tempdir().unwrap();
        write(truth.path(), "a.page", &page(&[("A", true)]));
        write(pred.path(), "z.page", &page(&[("A", true)]));
        assert!(matches!(
            evaluate_corpus(truth.path(), pred.path()),
            Err(MetricsError::NoMatchingPages)
        ));
    }
}
