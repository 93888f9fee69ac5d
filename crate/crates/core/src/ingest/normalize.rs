use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::metrics::edit_distance;

fn normalize_once(s: &str) -> String {
    let folded: String = s
        .to_lowercase()
        .nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(|c| match c {
            'œ' => vec!['o', 'e'],
            'æ' => vec!['a', 'e'],
            'ß' => vec!['s', 's'],
            c => c.to_lowercase().collect(),
        })
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases, folds diacritics, turns punctuation and hyphens into spaces
/// and collapses whitespace. Idempotent.
pub fn normalize_name(s: &str) -> String {
    let mut cur = normalize_once(s);
    // a few compatibility characters only settle after a second pass
    for _ in 0..4 {
        let next = normalize_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

/// `1 - distance / max(len)` over already-normalized names.
pub(crate) fn normalized_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(&a, &b) as f64 / longest as f64
}

/// Similarity in `[0, 1]` of two raw names after normalization.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    normalized_similarity(&normalize_name(a), &normalize_name(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_accents_case_and_punctuation() {
        assert_eq!(normalize_name("Neuilly-le-Réal"), "neuilly le real");
        assert_eq!(
            normalize_name("  SAINT-POURÇAIN-sur-Sioule "),
            "saint pourcain sur sioule"
        );
        assert_eq!(normalize_name("L'Œuvre"), "l oeuvre");
        assert_eq!(normalize_name("---"), "");
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(name_similarity("Neuilly-le-Réal", "Neuilly-le-Réal"), 1.0);
        assert_eq!(name_similarity("neuilly le real", "NEUILLY-LE-REAL"), 1.0);
        assert!((name_similarity("Moulin", "Moulins") - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(name_similarity("", ""), 1.0);
        assert_eq!(name_similarity("abc", ""), 0.0);
    }
}
