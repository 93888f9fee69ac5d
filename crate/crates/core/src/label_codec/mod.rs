//! Single-string page labels: every value is preceded by its tag token,
//! fields of a record follow a fixed order and records are joined by newlines.
//!
//! ```text
//! <s-h>Gendre <f>Pierre <o>cultivateur <l>chef <e>patron <a>75 <n>française
//! <s>Paraud <f>Marie <o>néant <l>épouse <e>néant <a>66 <n>idem
//! ```
//!
//! Decoding opens a new record at each newline and at each surname token. The
//! lenient decoder additionally splits on a repeated tag and never fails.

mod lexer;
mod synthetic;

pub use synthetic::{
    generate_synthetic_page, generate_synthetic_register, SyntheticProfile, SyntheticRegister,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    is_forbidden_value_char, validate_record, EntityTag, PageTranscript, PersonRecord, TagAlphabet,
    Violation,
};
use lexer::{lex, Item};

/// Maximum number of tokens the recognizer emits for one page.
pub const DEFAULT_TOKEN_BUDGET: usize = 2800;

/// A full-page label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelString {
    pub text: String,
    pub token_budget: usize,
}

impl LabelString {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl AsRef<str> for LabelString {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("label needs {needed} tokens but the budget is {budget}")]
    TokenBudgetExceeded { needed: usize, budget: usize },
    #[error("record {row} is invalid: {violations:?}")]
    InvalidRecord {
        row: usize,
        violations: Vec<Violation>,
    },
    #[error("malformed label at character {position}: {reason}")]
    MalformedLabel { position: usize, reason: String },
    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WarningKind {
    UnknownToken,
    EmptyField,
    RecordWithoutSurname,
    DuplicateFieldInRecord,
    /// Text outside any field, or stray angle brackets inside a value.
    StrayText,
}

impl WarningKind {
    /// Whether the decoder had to change or drop input to produce the
    /// transcript. A record without a surname is valid, only unusual.
    pub fn is_repair(self) -> bool {
        !matches!(self, WarningKind::RecordWithoutSurname)
    }
}

/// Positions are 1-based character offsets into the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeWarning {
    pub position: usize,
    pub kind: WarningKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeReport {
    pub transcript: PageTranscript,
    pub warnings: Vec<DecodeWarning>,
}

impl DecodeReport {
    pub fn repairs(&self) -> impl Iterator<Item = &DecodeWarning> {
        self.warnings.iter().filter(|w| w.kind.is_repair())
    }
}

/// Encoder/decoder pair over a token alphabet and budget.
#[derive(Debug, Clone, Default)]
pub struct LabelCodec {
    pub alphabet: TagAlphabet,
    pub token_budget: Option<usize>,
}

impl LabelCodec {
    pub fn new(alphabet: TagAlphabet, token_budget: usize) -> Self {
        Self {
            alphabet,
            token_budget: Some(token_budget),
        }
    }

    fn budget(&self) -> usize {
        self.token_budget.unwrap_or(DEFAULT_TOKEN_BUDGET)
    }

    /// Tokens needed for `page`: one per tag and one per other character.
    pub fn token_count(&self, page: &PageTranscript) -> usize {
        let mut count = 0;
        for (i, record) in page.records.iter().enumerate() {
            if i > 0 {
                count += 1;
            }
            for (j, value) in record.fields.values().enumerate() {
                if j > 0 {
                    count += 1;
                }
                count += 1 + value.chars().count();
            }
        }
        count
    }

    pub fn encode(&self, page: &PageTranscript) -> Result<LabelString, CodecError> {
        for (row, record) in page.records.iter().enumerate() {
            let violations = validate_record(record);
            if !violations.is_empty() {
                return Err(CodecError::InvalidRecord { row, violations });
            }
        }
        let needed = self.token_count(page);
        let budget = self.budget();
        if needed > budget {
            return Err(CodecError::TokenBudgetExceeded { needed, budget });
        }

        let lines: Vec<String> = page
            .records
            .iter()
            .map(|r| {
                r.fields
                    .iter()
                    .map(|(&tag, value)| format!("{}{}", self.alphabet.surface(tag), value))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        Ok(LabelString {
            text: lines.join("\n"),
            token_budget: budget,
        })
    }

    /// Exact inverse of [`encode`](Self::encode).
    pub fn decode_strict(&self, label: &str) -> Result<PageTranscript, CodecError> {
        let mut records = Vec::new();
        let mut current: BTreeMap<EntityTag, String> = BTreeMap::new();
        let mut pending: Option<(EntityTag, usize, String)> = None;

        fn malformed(position: usize, reason: impl Into<String>) -> CodecError {
            CodecError::MalformedLabel {
                position,
                reason: reason.into(),
            }
        }

        fn flush(
            pending: &mut Option<(EntityTag, usize, String)>,
            current: &mut BTreeMap<EntityTag, String>,
        ) -> Result<(), CodecError> {
            if let Some((tag, pos, text)) = pending.take() {
                let value = text.trim();
                if value.is_empty() {
                    return Err(malformed(pos, format!("empty {tag} field")));
                }
                current.insert(tag, value.to_string());
            }
            Ok(())
        }

        fn close(current: &mut BTreeMap<EntityTag, String>, records: &mut Vec<PersonRecord>) {
            if !current.is_empty() {
                records.push(PersonRecord::from_fields(std::mem::take(current)));
            }
        }

        for item in lex(label, &self.alphabet) {
            match item {
                Item::Newline { .. } => {
                    flush(&mut pending, &mut current)?;
                    close(&mut current, &mut records);
                }
                Item::Tag { tag, pos } => {
                    flush(&mut pending, &mut current)?;
                    if tag.is_surname() {
                        close(&mut current, &mut records);
                    } else if current.contains_key(&tag) {
                        return Err(malformed(pos, format!("duplicate {tag} in record")));
                    }
                    pending = Some((tag, pos, String::new()));
                }
                Item::Unknown { token, pos } => {
                    return Err(malformed(pos, format!("unknown token {token}")));
                }
                Item::Text { text, pos } => {
                    if let Some(offset) = text.chars().position(is_forbidden_value_char) {
                        return Err(malformed(pos + offset, "invalid character in value"));
                    }
                    match pending.as_mut() {
                        Some((_, _, buf)) => buf.push_str(text),
                        None if text.trim().is_empty() => {}
                        None => return Err(malformed(pos, "text before the first tag")),
                    }
                }
            }
        }
        flush(&mut pending, &mut current)?;
        close(&mut current, &mut records);
        Ok(PageTranscript {
            records,
            ..PageTranscript::default()
        })
    }

    /// Best-effort decode of noisy recognizer output. Total over all inputs.
    pub fn decode_lenient(&self, label: &str) -> DecodeReport {
        Lenient::new().run(label, &self.alphabet)
    }
}

struct Lenient {
    records: Vec<PersonRecord>,
    warnings: Vec<DecodeWarning>,
    current: BTreeMap<EntityTag, String>,
    record_start: usize,
    pending: Option<(EntityTag, usize, String, usize)>,
    dropping: bool,
}

impl Lenient {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            warnings: Vec::new(),
            current: BTreeMap::new(),
            record_start: 0,
            pending: None,
            dropping: false,
        }
    }

    fn warn(&mut self, position: usize, kind: WarningKind) {
        self.warnings.push(DecodeWarning { position, kind });
    }

    fn flush(&mut self) {
        let Some((tag, pos, text, text_pos)) = self.pending.take() else {
            return;
        };
        let mut cleaned = String::with_capacity(text.len());
        let mut stray = false;
        for c in text.chars() {
            match c {
                '<' | '>' => stray = true,
                c if c.is_control() => cleaned.push(' '),
                c => cleaned.push(c),
            }
        }
        if stray {
            self.warn(text_pos, WarningKind::StrayText);
        }
        let value = cleaned.trim();
        if value.is_empty() {
            self.warn(pos, WarningKind::EmptyField);
        } else {
            if self.current.is_empty() {
                self.record_start = pos;
            }
            self.current.insert(tag, value.to_string());
        }
    }

    fn close(&mut self) {
        if self.current.is_empty() {
            return;
        }
        let record = PersonRecord::from_fields(std::mem::take(&mut self.current));
        if record.surname().is_none() {
            self.warn(self.record_start, WarningKind::RecordWithoutSurname);
        }
        self.records.push(record);
    }

    fn run(mut self, label: &str, alphabet: &TagAlphabet) -> DecodeReport {
        for item in lex(label, alphabet) {
            match item {
                Item::Newline { .. } => {
                    self.flush();
                    self.close();
                    self.dropping = false;
                }
                Item::Tag { tag, pos } => {
                    self.flush();
                    self.dropping = false;
                    if tag.is_surname() {
                        self.close();
                    } else if self.current.contains_key(&tag) {
                        self.warn(pos, WarningKind::DuplicateFieldInRecord);
                        self.close();
                    }
                    self.pending = Some((tag, pos, String::new(), pos));
                }
                Item::Unknown { pos, .. } => {
                    self.flush();
                    self.warn(pos, WarningKind::UnknownToken);
                    self.dropping = true;
                }
                Item::Text { text, pos } => {
                    if self.dropping {
                        continue;
                    }
                    match self.pending.as_mut() {
                        Some((_, _, buf, text_pos)) => {
                            if buf.is_empty() {
                                *text_pos = pos;
                            }
                            buf.push_str(text);
                        }
                        None if text.trim().is_empty() => {}
                        None => self.warn(pos, WarningKind::StrayText),
                    }
                }
            }
        }
        self.flush();
        self.close();
        self.warnings.sort_by_key(|w| w.position);
        DecodeReport {
            transcript: PageTranscript {
                records: self.records,
                ..PageTranscript::default()
            },
            warnings: self.warnings,
        }
    }
}

pub fn encode(page: &PageTranscript) -> Result<LabelString, CodecError> {
    LabelCodec::default().encode(page)
}

pub fn decode_strict(label: &str) -> Result<PageTranscript, CodecError> {
    LabelCodec::default().decode_strict(label)
}

pub fn decode_lenient(label: &str) -> DecodeReport {
    LabelCodec::default().decode_lenient(label)
}

/// Lenient decode of raw bytes; invalid UTF-8 is replaced before decoding.
pub fn decode_lenient_bytes(label: &[u8]) -> DecodeReport {
    decode_lenient(&String::from_utf8_lossy(label))
}
