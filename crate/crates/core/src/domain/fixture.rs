//! Plain-text fixture format for page transcripts.
//!
//! ```text
//! # page_id: p001
//! # page_index: 3
//! # class: LIST
//! SURNAME_HEAD=Gendre<TAB>FIRSTNAME=Pierre<TAB>AGE=75
//! SURNAME=Paraud<TAB>FIRSTNAME=Marie
//! ---
//! # page_id: p002
//! ...
//! ```
//!
//! One record per line, tab-separated `TAG=value` pairs, pages separated by a
//! `---` line. `#` lines carry page directives or comments. UTF-8 throughout.

use std::fmt::Write as _;

use thiserror::Error;

use super::{EntityTag, PageClass, PageTranscript, PersonRecord};

pub const PAGE_SEPARATOR: &str = "---";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("fixture line {line}: {message}")]
pub struct FixtureError {
    pub line: usize,
    pub message: String,
}

/// A transcript plus the page class, when the fixture records one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PageFixture {
    pub class: Option<PageClass>,
    pub transcript: PageTranscript,
}

impl From<PageTranscript> for PageFixture {
    fn from(transcript: PageTranscript) -> Self {
        Self {
            class: None,
            transcript,
        }
    }
}

pub fn write_fixture(page: &PageFixture) -> String {
    let mut out = String::new();
    let t = &page.transcript;
    if !t.page_id.is_empty() {
        let _ = writeln!(out, "# page_id: {}", t.page_id);
    }
    let _ = writeln!(out, "# page_index: {}", t.page_index);
    if let Some(class) = page.class {
        let _ = writeln!(out, "# class: {class}");
    }
    for record in &t.records {
        let line: Vec<String> = record
            .fields
            .iter()
            .map(|(tag, value)| format!("{tag}={value}"))
            .collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

pub fn write_pages(pages: &[PageFixture]) -> String {
    pages
        .iter()
        .map(write_fixture)
        .collect::<Vec<_>>()
        .join(&format!("{PAGE_SEPARATOR}\n"))
}

/// Parses a single-page fixture. Extra pages are an error.
pub fn parse_fixture(text: &str) -> Result<PageFixture, FixtureError> {
    let mut pages = parse_pages(text)?;
    match pages.len() {
        0 => Ok(PageFixture::default()),
        1 => Ok(pages.remove(0)),
        n => Err(FixtureError {
            line: 0,
            message: format!("expected one page, found {n}"),
        }),
    }
}

pub fn parse_pages(text: &str) -> Result<Vec<PageFixture>, FixtureError> {
    let mut pages = Vec::new();
    let mut current = PageFixture::default();
    let mut touched = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| FixtureError {
            line: lineno,
            message,
        };
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.trim() == PAGE_SEPARATOR {
            pages.push(std::mem::take(&mut current));
            touched = false;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        touched = true;
        if let Some(directive) = line.trim_start().strip_prefix('#') {
            if let Some((key, value)) = directive.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "page_id" => current.transcript.page_id = value.to_string(),
                    "page_index" => {
                        current.transcript.page_index = value
                            .parse()
                            .map_err(|_| err(format!("bad page_index {value:?}")))?
                    }
                    "class" => {
                        current.class = Some(value.parse().map_err(|e| err(format!("{e}")))?)
                    }
                    _ => {}
                }
            }
            continue;
        }

        let mut fields = Vec::new();
        for cell in line.split('\t') {
            let (name, value) = cell
                .split_once('=')
                .ok_or_else(|| err(format!("expected TAG=value, got {cell:?}")))?;
            let tag: EntityTag = name.parse().map_err(|e| err(format!("{e}")))?;
            if fields.iter().any(|(t, _)| *t == tag) {
                return Err(err(format!("{tag} appears twice")));
            }
            fields.push((tag, value.to_string()));
        }
        current
            .transcript
            .records
            .push(PersonRecord::from_fields(fields));
    }
    // a trailing page after `---` counts even when it has no content
    if touched || !pages.is_empty() {
        pages.push(current);
    }
    Ok(pages)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PageFixture {
        PageFixture {
            class: Some(PageClass::List),
            transcript: PageTranscript::new(
                "p1",
                2,
                vec![
                    PersonRecord::from_fields([
                        (EntityTag::SurnameHead, "Gendre"),
                        (EntityTag::Age, "75"),
                    ]),
                    PersonRecord::from_fields([
                        (EntityTag::Surname, "Paraud"),
                        (EntityTag::Firstname, "Marie Louise"),
                    ]),
                ],
            ),
        }
    }

    #[test]
    fn writes_tab_separated_records() {
        let text = write_fixture(&sample());
        assert!(text.contains("SURNAME_HEAD=Gendre\tAGE=75\n"));
        assert!(text.contains("SURNAME=Paraud\tFIRSTNAME=Marie Louise\n"));
        assert_eq!(parse_fixture(&text).unwrap(), sample());
    }

    #[test]
    fn multi_page_round_trip() {
        let mut second = sample();
        second.transcript.page_id = "p2".into();
        second.class = None;
        let pages = vec![sample(), second];
        let text = write_pages(&pages);
        assert_eq!(text.matches("\n---\n").count(), 1);
        assert_eq!(parse_pages(&text).unwrap(), pages);
    }

    #[test]
    fn reports_bad_lines() {
        let e = parse_pages("SURNAME=A\nAGE 5\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_pages("NOPE=1").is_err());
        assert!(parse_pages("AGE=1\tAGE=2").is_err());
        assert!(parse_pages("").unwrap().is_empty());
    }
}
