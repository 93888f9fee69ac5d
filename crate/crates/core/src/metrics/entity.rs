use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fmt_opt, harmonic, ratio};
use crate::domain::{EntityTag, PageTranscript};

/// `(tag, text)` items of a page in reading order.
pub fn entities(page: &PageTranscript) -> Vec<(EntityTag, &str)> {
    page.records
        .iter()
        .flat_map(|r| r.fields.iter().map(|(t, v)| (*t, v.as_str())))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl TagCounts {
    /// `None` when nothing was predicted.
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `None` when there is no support.
    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        harmonic(self.precision(), self.recall())
    }

    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn add(&mut self, other: &TagCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Per-tag counts plus their micro-averaged total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityScore {
    pub per_tag: BTreeMap<EntityTag, TagCounts>,
    pub total: TagCounts,
}

impl Default for EntityScore {
    fn default() -> Self {
        Self {
            per_tag: EntityTag::ALL
                .iter()
                .map(|t| (*t, TagCounts::default()))
                .collect(),
            total: TagCounts::default(),
        }
    }
}

impl EntityScore {
    pub fn add(&mut self, other: &EntityScore) {
        for (tag, counts) in &other.per_tag {
            self.per_tag.entry(*tag).or_default().add(counts);
        }
        self.total.add(&other.total);
    }

    /// Table with P, R, F1 and support per tag, undefined ratios shown as n/a.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>6} {:>6} {:>8}",
            "Tag", "P", "R", "F1", "Support"
        );
        let mut rows: Vec<_> = self.per_tag.iter().collect();
        rows.sort_by_key(|(t, _)| t.name());
        for (tag, c) in rows {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>6} {:>6} {:>8}",
                tag.name().to_lowercase(),
                fmt_opt(c.precision()),
                fmt_opt(c.recall()),
                fmt_opt(c.f1()),
                c.support()
            );
        }
        let t = &self.total;
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>6} {:>6} {:>8}",
            "total",
            fmt_opt(t.precision()),
            fmt_opt(t.recall()),
            fmt_opt(t.f1()),
            t.support()
        );
        out
    }
}

/// Scores predicted entities against the truth. An order-preserving longest
/// common subsequence over exact `(tag, text)` pairs marks the true
/// positives; everything else is a false positive or a miss.
pub fn entity_scores(truth: &PageTranscript, pred: &PageTranscript) -> EntityScore {
    score_sequences(&entities(truth), &entities(pred))
}

pub(crate) fn score_sequences(
    truth: &[(EntityTag, &str)],
    pred: &[(EntityTag, &str)],
) -> EntityScore {
    let (n, m) = (truth.len(), pred.len());
    let width = m + 1;
    // lcs[i][j] = LCS length of truth[i..] and pred[j..]
    let mut lcs = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i * width + j] = if truth[i] == pred[j] {
                lcs[(i + 1) * width + j + 1] + 1
            } else {
                lcs[(i + 1) * width + j].max(lcs[i * width + j + 1])
            };
        }
    }

    let mut score = EntityScore::default();
    let bump = |score: &mut EntityScore, tag: EntityTag, f: fn(&mut TagCounts)| {
        f(score.per_tag.entry(tag).or_default());
        f(&mut score.total);
    };
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if truth[i] == pred[j] {
            bump(&mut score, truth[i].0, |c| c.tp += 1);
            i += 1;
            j += 1;
        } else if lcs[(i + 1) * width + j] >= lcs[i * width + j + 1] {
            bump(&mut score, truth[i].0, |c| c.fn_ += 1);
            i += 1;
        } else {
            bump(&mut score, pred[j].0, |c| c.fp += 1);
            j += 1;
        }
    }
    for t in &truth[i..] {
        bump(&mut score, t.0, |c| c.fn_ += 1);
    }
    for p in &pred[j..] {
        bump(&mut score, p.0, |c| c.fp += 1);
    }
    score
}
