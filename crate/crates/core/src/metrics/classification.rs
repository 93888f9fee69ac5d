use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fmt_opt, harmonic, ratio};
use crate::domain::PageClass;

/// Counts indexed `[predicted][truth]`. Column sums are truth supports.
///
/// Precision divides the diagonal by the row sum and recall by the column
/// sum, so reading a published matrix with its axes swapped exchanges the
/// two. Check the orientation before comparing against reported scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: PageClass, pred: PageClass) {
        self.counts[pred.index()][truth.index()] += 1;
    }

    pub fn get(&self, pred: PageClass, truth: PageClass) -> u64 {
        self.counts[pred.index()][truth.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn predicted_count(&self, class: PageClass) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn truth_count(&self, class: PageClass) -> u64 {
        self.counts.iter().map(|row| row[class.index()]).sum()
    }

    pub fn metrics(&self, class: PageClass) -> ClassMetrics {
        let tp = self.get(class, class);
        let precision = ratio(tp, self.predicted_count(class));
        let recall = ratio(tp, self.truth_count(class));
        ClassMetrics {
            class,
            precision,
            recall,
            f1: harmonic(precision, recall),
            support: self.truth_count(class),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: PageClass,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub matrix: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: Option<f64>,
}

impl ClassificationReport {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Self {
        let correct: u64 = PageClass::ALL.iter().map(|&c| matrix.get(c, c)).sum();
        Self {
            per_class: PageClass::ALL.iter().map(|&c| matrix.metrics(c)).collect(),
            accuracy: ratio(correct, matrix.total()),
            matrix,
        }
    }

    pub fn class(&self, class: PageClass) -> &ClassMetrics {
        &self.per_class[class.index()]
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>6} {:>6} {:>8}",
            "Class", "P", "R", "F1", "Support"
        );
        for m in &self.per_class {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>6} {:>6} {:>8}",
                m.class.name(),
                fmt_opt(m.precision),
                fmt_opt(m.recall),
                fmt_opt(m.f1),
                m.support
            );
        }
        let _ = writeln!(out, "\nConfusion matrix (rows: predicted, columns: truth)");
        let _ = write!(out, "{:<8}", "");
        for c in PageClass::ALL {
            let _ = write!(out, " {:>7}", c.name());
        }
        out.push('\n');
        for p in PageClass::ALL {
            let _ = write!(out, "{:<8}", p.name());
            for t in PageClass::ALL {
                let _ = write!(out, " {:>7}", self.matrix.get(p, t));
            }
            out.push('\n');
        }
        out
    }
}

pub fn classification_report(pairs: &[(PageClass, PageClass)]) -> ClassificationReport {
    let mut matrix = ConfusionMatrix::default();
    for &(truth, pred) in pairs {
        matrix.add(truth, pred);
    }
    ClassificationReport::from_matrix(matrix)
}
