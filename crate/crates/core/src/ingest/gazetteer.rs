use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_name, normalized_similarity};
use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub code: String,
    pub canonical_name: String,
    pub department: String,
    /// Historical spellings that also identify the commune.
    pub valid_names: Vec<String>,
}

/// Authority list of communes with pre-normalized names.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    normalized: Vec<Vec<String>>,
}

impl Gazetteer {
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self, IngestError> {
        let mut codes = BTreeSet::new();
        for e in &entries {
            if e.canonical_name.trim().is_empty() {
                return Err(IngestError::InvalidGazetteer(format!(
                    "entry {} has no name",
                    e.code
                )));
            }
            if !codes.insert(e.code.as_str()) {
                return Err(IngestError::InvalidGazetteer(format!(
                    "duplicate code {}",
                    e.code
                )));
            }
        }
        let normalized = entries
            .iter()
            .map(|e| {
                let mut names: Vec<String> = std::iter::once(&e.canonical_name)
                    .chain(&e.valid_names)
                    .map(|n| normalize_name(n))
                    .filter(|n| !n.is_empty())
                    .collect();
                names.dedup();
                names
            })
            .collect();
        Ok(Self {
            entries,
            normalized,
        })
    }

    /// Reads `code,canonical_name,department,variants` with `|`-separated variants.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, IngestError> {
        #[derive(Deserialize)]
        struct Row {
            code: String,
            canonical_name: String,
            #[serde(default)]
            department: String,
            #[serde(default)]
            variants: String,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            entries.push(GazetteerEntry {
                code: row.code,
                canonical_name: row.canonical_name,
                department: row.department,
                valid_names: row
                    .variants
                    .split('|')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(String::from)
                    .collect(),
            });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn by_code(&self, code: &str) -> Option<&GazetteerEntry> {
        self.entries.iter().find(|e| e.code == code)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Minimum similarity for a candidate to be listed.
    pub threshold: f64,
    /// Minimum similarity for automatic acceptance.
    pub auto_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            auto_threshold: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub canonical_name: String,
    pub department: String,
    pub score: f64,
    /// The canonical or historical name that produced the score.
    pub matched_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchStatus {
    Accepted(String),
    Ambiguous,
    Unmatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub status: MatchStatus,
    pub candidates: Vec<Candidate>,
}

/// Ranks gazetteer entries by normalized Levenshtein similarity to `name`.
///
/// Ties are broken by department hint, then shorter canonical name, then
/// code. A candidate is accepted automatically only when it is the single
/// one above the auto threshold (or the single such one in the hinted
/// department).
pub fn match_commune(
    name: &str,
    gazetteer: &Gazetteer,
    department_hint: Option<&str>,
    config: &MatchConfig,
) -> Result<MatchOutcome, IngestError> {
    if gazetteer.is_empty() {
        return Err(IngestError::EmptyGazetteer);
    }
    let query = normalize_name(name);
    let in_hint = |c: &Candidate| {
        department_hint.is_some_and(|d| c.department.eq_ignore_ascii_case(d.trim()))
    };

    let mut candidates: Vec<Candidate> = Vec::new();
    if !query.is_empty() {
        for (entry, names) in gazetteer.entries.iter().zip(&gazetteer.normalized) {
            let best = names
                .iter()
                .map(|n| (normalized_similarity(&query, n), n))
                .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)));
            if let Some((score, matched)) = best {
                if score >= config.threshold {
                    candidates.push(Candidate {
                        code: entry.code.clone(),
                        canonical_name: entry.canonical_name.clone(),
                        department: entry.department.clone(),
                        score,
                        matched_name: matched.clone(),
                    });
                }
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| in_hint(b).cmp(&in_hint(a)))
            .then_with(|| {
                a.canonical_name
                    .chars()
                    .count()
                    .cmp(&b.canonical_name.chars().count())
            })
            .then_with(|| a.code.cmp(&b.code))
    });

    let strong: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.score >= config.auto_threshold)
        .collect();
    let hinted: Vec<&&Candidate> = strong.iter().filter(|c| in_hint(c)).collect();
    let status = match (strong.as_slice(), hinted.as_slice()) {
        ([only], _) => MatchStatus::Accepted(only.code.clone()),
        (_, [only]) => MatchStatus::Accepted(only.code.clone()),
        _ if candidates.is_empty() => MatchStatus::Unmatched,
        _ => MatchStatus::Ambiguous,
    };
    Ok(MatchOutcome { status, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(code: &str, name: &str, dep: &str, variants: &[&str]) -> GazetteerEntry {
        GazetteerEntry {
            code: code.into(),
            canonical_name: name.into(),
            department: dep.into(),
            valid_names: variants.iter().map(|v| v.to_string()).collect(),
        }
    }

    fn gaz() -> Gazetteer {
        Gazetteer::new(vec![
            entry("03190", "Moulins", "03", &["Moulins-sur-Allier"]),
            entry("03195", "Neuilly-le-Réal", "03", &[]),
            entry("58000", "Saint-Martin", "58", &[]),
            entry("03250", "Saint-Martin", "03", &[]),
        ])
        .unwrap()
    }

    #[test]
    fn exact_name_is_accepted() {
        let m = match_commune("Neuilly-le-Réal", &gaz(), None, &MatchConfig::default()).unwrap();
        assert_eq!(m.status, MatchStatus::Accepted("03195".into()));
        assert_eq!(m.candidates[0].score, 1.0);
    }

    #[test]
    fn one_letter_typo_needs_review() {
        let m = match_commune("Moulin", &gaz(), None, &MatchConfig::default()).unwrap();
        assert_eq!(m.status, MatchStatus::Ambiguous);
        assert_eq!(m.candidates.len(), 1);
        assert!((m.candidates[0].score - 6.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn historical_variant_matches() {
        let m = match_commune("MOULINS SUR ALLIER", &gaz(), None, &MatchConfig::default()).unwrap();
        assert_eq!(m.status, MatchStatus::Accepted("03190".into()));
        assert_eq!(m.candidates[0].matched_name, "moulins sur allier");
    }

    #[test]
    fn unrelated_name_is_unmatched() {
        let m = match_commune("Xyzabc", &gaz(), None, &MatchConfig::default()).unwrap();
        assert_eq!(m.status, MatchStatus::Unmatched);
        assert!(m.candidates.is_empty());
    }

    #[test]
    fn homonyms_need_a_hint() {
        let cfg = MatchConfig::default();
        let m = match_commune("Saint Martin", &gaz(), None, &cfg).unwrap();
        assert_eq!(m.status, MatchStatus::Ambiguous);
        assert_eq!(m.candidates[0].code, "03250");
        let m = match_commune("Saint Martin", &gaz(), Some("58"), &cfg).unwrap();
        assert_eq!(m.status, MatchStatus::Accepted("58000".into()));
        assert_eq!(m.candidates[0].code, "58000");
    }

    #[test]
    fn empty_gazetteer_is_an_error() {
        let g = Gazetteer::new(vec![]).unwrap();
        assert!(matches!(
            match_commune("Moulins", &g, None, &MatchConfig::default()),
            Err(IngestError::EmptyGazetteer)
        ));
    }

    #[test]
    fn reads_csv_and_rejects_duplicate_codes() {
        let g = Gazetteer::from_csv(
            "code,canonical_name,department,variants\n1,Moulins,03,Molins|Moulins sur Allier\n"
                .as_bytes(),
        )
        .unwrap();
        assert_eq!(
            g.entries()[0].valid_names,
            vec!["Molins", "Moulins sur Allier"]
        );
        let dup = "code,canonical_name,department,variants\n1,A,03,\n1,B,03,\n";
        assert!(Gazetteer::from_csv(dup.as_bytes()).is_err());
    }
}
