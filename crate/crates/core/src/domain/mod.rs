//! Shared vocabulary: entity tags, page classes and the person / household /
//! page / register structures every other module works on.

mod fixture;

pub use fixture::{
    parse_fixture, parse_pages, write_fixture, write_pages, FixtureError, PageFixture,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Soft upper bound on rows per list page. Lists usually hold about thirty
/// lines; anything past this is reported but still accepted.
pub const SOFT_MAX_RECORDS: usize = 40;

/// Column category attached to every transcribed value.
///
/// Variant order is the canonical field order used when a record is
/// serialized, so iterating a `BTreeMap<EntityTag, _>` yields fields in label
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityTag {
    SurnameHead,
    Surname,
    Firstname,
    Occupation,
    Link,
    Employer,
    Age,
    Nationality,
    BirthDate,
    CivilStatus,
    /// Place of birth.
    Lob,
    Observation,
}

impl EntityTag {
    pub const ALL: [EntityTag; 12] = [
        EntityTag::SurnameHead,
        EntityTag::Surname,
        EntityTag::Firstname,
        EntityTag::Occupation,
        EntityTag::Link,
        EntityTag::Employer,
        EntityTag::Age,
        EntityTag::Nationality,
        EntityTag::BirthDate,
        EntityTag::CivilStatus,
        EntityTag::Lob,
        EntityTag::Observation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityTag::SurnameHead => "SURNAME_HEAD",
            EntityTag::Surname => "SURNAME",
            EntityTag::Firstname => "FIRSTNAME",
            EntityTag::Occupation => "OCCUPATION",
            EntityTag::Link => "LINK",
            EntityTag::Employer => "EMPLOYER",
            EntityTag::Age => "AGE",
            EntityTag::Nationality => "NATIONALITY",
            EntityTag::BirthDate => "BIRTH_DATE",
            EntityTag::CivilStatus => "CIVIL_STATUS",
            EntityTag::Lob => "LOB",
            EntityTag::Observation => "OBSERVATION",
        }
    }

    /// Surface form in the default token alphabet.
    pub fn surface(self) -> &'static str {
        DEFAULT_SURFACES[self.index()]
    }

    pub fn is_surname(self) -> bool {
        matches!(self, EntityTag::SurnameHead | EntityTag::Surname)
    }
}

impl fmt::Display for EntityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityTag {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityTag::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownTagName(s.to_string()))
    }
}

const DEFAULT_SURFACES: [&str; 12] = [
    "<s-h>", "<s>", "<f>", "<o>", "<l>", "<e>", "<a>", "<n>", "<b>", "<c>", "<p>", "<x>",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("unknown tag name {0:?}")]
    UnknownTagName(String),
    #[error("unknown page class {0:?}")]
    UnknownPageClass(String),
    #[error("invalid token alphabet: {0}")]
    InvalidAlphabet(String),
}

/// Looks up a tag by its surface form in the default alphabet.
pub fn tag_from_token(token: &str) -> Result<EntityTag, DomainError> {
    TagAlphabet::default().tag_from_token(token)
}

/// Bijection between entity tags and their single-token surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagAlphabet {
    surfaces: [String; 12],
}

impl Default for TagAlphabet {
    fn default() -> Self {
        Self {
            surfaces: DEFAULT_SURFACES.map(String::from),
        }
    }
}

impl TagAlphabet {
    pub fn new(surfaces: [String; 12]) -> Result<Self, DomainError> {
        for (i, s) in surfaces.iter().enumerate() {
            let inner = s
                .strip_prefix('<')
                .and_then(|r| r.strip_suffix('>'))
                .ok_or_else(|| {
                    DomainError::InvalidAlphabet(format!("{s:?} is not of the form <...>"))
                })?;
            if inner.is_empty()
                || inner
                    .chars()
                    .any(|c| c.is_whitespace() || c == '<' || c == '>')
            {
                return Err(DomainError::InvalidAlphabet(format!(
                    "{s:?} has an invalid body"
                )));
            }
            if surfaces[..i].contains(s) {
                return Err(DomainError::InvalidAlphabet(format!("{s:?} is used twice")));
            }
        }
        Ok(Self { surfaces })
    }

    /// Parses `TAG_NAME=<tok>` lines; tags not mentioned keep their default form.
    pub fn parse(text: &str) -> Result<Self, DomainError> {
        let mut surfaces = DEFAULT_SURFACES.map(String::from);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, token) = line.split_once('=').ok_or_else(|| {
                DomainError::InvalidAlphabet(format!("expected TAG=<token>, got {line:?}"))
            })?;
            let tag: EntityTag = name.parse()?;
            surfaces[tag.index()] = token.trim().to_string();
        }
        Self::new(surfaces)
    }

    pub fn surface(&self, tag: EntityTag) -> &str {
        &self.surfaces[tag.index()]
    }

    pub fn tag_from_token(&self, token: &str) -> Result<EntityTag, DomainError> {
        self.surfaces
            .iter()
            .position(|s| s == token)
            .map(|i| EntityTag::ALL[i])
            .ok_or_else(|| DomainError::UnknownToken(token.to_string()))
    }

    /// Longest surface form, in characters.
    pub fn max_token_len(&self) -> usize {
        self.surfaces
            .iter()
            .map(|s| s.chars().count())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PageClass {
    Front,
    List,
    Recap,
    Totals,
    Other,
}

impl PageClass {
    pub const ALL: [PageClass; 5] = [
        PageClass::Front,
        PageClass::List,
        PageClass::Recap,
        PageClass::Totals,
        PageClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PageClass::Front => "FRONT",
            PageClass::List => "LIST",
            PageClass::Recap => "RECAP",
            PageClass::Totals => "TOTALS",
            PageClass::Other => "OTHER",
        }
    }
}

impl fmt::Display for PageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PageClass {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PageClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownPageClass(s.to_string()))
    }
}

/// One table row. Absent tags are empty cells.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PersonRecord {
    pub fields: BTreeMap<EntityTag, String>,
    pub is_head: bool,
}

impl PersonRecord {
    /// Builds a record from `(tag, value)` pairs; the head flag follows the
    /// presence of a `SURNAME_HEAD` value.
    pub fn from_fields<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = (EntityTag, S)>,
        S: Into<String>,
    {
        let fields: BTreeMap<_, _> = fields.into_iter().map(|(t, v)| (t, v.into())).collect();
        let is_head = fields.contains_key(&EntityTag::SurnameHead);
        Self { fields, is_head }
    }

    pub fn get(&self, tag: EntityTag) -> Option<&str> {
        self.fields.get(&tag).map(String::as_str)
    }

    /// Surname regardless of whether it is tagged as the head's.
    pub fn surname(&self) -> Option<&str> {
        self.get(EntityTag::SurnameHead)
            .or_else(|| self.get(EntityTag::Surname))
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// A broken [`PersonRecord`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Violation {
    DualSurname,
    HeadFlagMismatch,
    EmptyRecord,
    EmptyValue(EntityTag),
    UntrimmedValue(EntityTag),
    /// Control characters or `<`/`>` in a value; neither survives the label format.
    InvalidCharacter(EntityTag),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DualSurname => f.write_str("DualSurname"),
            Violation::HeadFlagMismatch => f.write_str("HeadFlagMismatch"),
            Violation::EmptyRecord => f.write_str("EmptyRecord"),
            Violation::EmptyValue(t) => write!(f, "EmptyValue({t})"),
            Violation::UntrimmedValue(t) => write!(f, "UntrimmedValue({t})"),
            Violation::InvalidCharacter(t) => write!(f, "InvalidCharacter({t})"),
        }
    }
}

pub(crate) fn is_forbidden_value_char(c: char) -> bool {
    c.is_control() || c == '<' || c == '>'
}

pub fn validate_record(r: &PersonRecord) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.fields.is_empty() {
        out.push(Violation::EmptyRecord);
    }
    let has_head = r.fields.contains_key(&EntityTag::SurnameHead);
    if has_head && r.fields.contains_key(&EntityTag::Surname) {
        out.push(Violation::DualSurname);
    }
    if has_head != r.is_head {
        out.push(Violation::HeadFlagMismatch);
    }
    for (&tag, value) in &r.fields {
        if value.is_empty() {
            out.push(Violation::EmptyValue(tag));
            continue;
        }
        if value.trim() != value {
            out.push(Violation::UntrimmedValue(tag));
        }
        if value.chars().any(is_forbidden_value_char) {
            out.push(Violation::InvalidCharacter(tag));
        }
    }
    out
}

/// A run of consecutive people headed by a household head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Household {
    pub members: Vec<PersonRecord>,
    /// Where each member sits in its register, parallel to `members`.
    pub positions: Vec<RecordPos>,
    /// False while the household may still continue on an adjacent page.
    pub complete: bool,
}

impl Household {
    pub fn head(&self) -> Option<&PersonRecord> {
        self.members.first().filter(|m| m.is_head)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Non-empty, at most one head, and the head (if any) comes first.
    pub fn is_well_formed(&self) -> bool {
        !self.members.is_empty()
            && self.members.len() == self.positions.len()
            && self.members.iter().skip(1).all(|m| !m.is_head)
    }
}

/// Row `row` of the page at `page` (the page's index in its register).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordPos {
    pub page: usize,
    pub row: usize,
}

/// Ordered person records for one list page.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageTranscript {
    pub page_id: String,
    pub page_index: usize,
    pub records: Vec<PersonRecord>,
}

impl PageTranscript {
    pub fn new(page_id: impl Into<String>, page_index: usize, records: Vec<PersonRecord>) -> Self {
        Self {
            page_id: page_id.into(),
            page_index,
            records,
        }
    }

    /// `(row, violation)` for every broken record invariant on the page.
    pub fn violations(&self) -> Vec<(usize, Violation)> {
        self.records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| validate_record(r).into_iter().map(move |v| (i, v)))
            .collect()
    }

    pub fn exceeds_soft_bound(&self) -> bool {
        self.records.len() > SOFT_MAX_RECORDS
    }

    /// Records with the same content, ignoring page identity.
    pub fn same_records(&self, other: &PageTranscript) -> bool {
        self.records == other.records
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterPage {
    pub page_id: String,
    pub class: PageClass,
    pub transcript: Option<PageTranscript>,
}

/// Pages of one register, in reading order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDocument {
    pub register_id: String,
    pub pages: Vec<RegisterPage>,
}

impl RegisterDocument {
    /// Every page whose transcript is present belongs to the LIST class.
    pub fn transcripts_on_list_pages_only(&self) -> bool {
        self.pages
            .iter()
            .all(|p| p.transcript.is_none() || p.class == PageClass::List)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_map_to_tags() {
        assert_eq!(tag_from_token("<s-h>").unwrap(), EntityTag::SurnameHead);
        assert_eq!(tag_from_token("<n>").unwrap(), EntityTag::Nationality);
        assert_eq!(
            tag_from_token("<z>"),
            Err(DomainError::UnknownToken("<z>".into()))
        );
    }

    #[test]
    fn default_alphabet_is_a_bijection() {
        let alphabet = TagAlphabet::default();
        for tag in EntityTag::ALL {
            let s = alphabet.surface(tag);
            assert!(s.starts_with('<') && s.ends_with('>'));
            assert_eq!(alphabet.tag_from_token(s).unwrap(), tag);
        }
        assert!(TagAlphabet::new(DEFAULT_SURFACES.map(String::from)).is_ok());
    }

    #[test]
    fn alphabet_rejects_duplicates_and_bad_forms() {
        assert!(TagAlphabet::parse("OBSERVATION=<a>").is_err());
        assert!(TagAlphabet::parse("OBSERVATION=obs").is_err());
        assert!(TagAlphabet::parse("OBSERVATION=<o b>").is_err());
        let alt = TagAlphabet::parse("# custom\nOBSERVATION=<obs>\n").unwrap();
        assert_eq!(alt.tag_from_token("<obs>").unwrap(), EntityTag::Observation);
        assert!(alt.tag_from_token("<x>").is_err());
    }

    #[test]
    fn valid_head_record() {
        let r = PersonRecord::from_fields([(EntityTag::SurnameHead, "Gendre")]);
        assert!(r.is_head);
        assert!(validate_record(&r).is_empty());
    }

    #[test]
    fn dual_surname_is_reported() {
        let r = PersonRecord::from_fields([
            (EntityTag::SurnameHead, "Gendre"),
            (EntityTag::Surname, "Paraud"),
        ]);
        assert_eq!(validate_record(&r), vec![Violation::DualSurname]);
    }

    #[test]
    fn empty_value_is_reported() {
        let r = PersonRecord::from_fields([(EntityTag::Surname, "Paraud"), (EntityTag::Age, "")]);
        assert_eq!(
            validate_record(&r),
            vec![Violation::EmptyValue(EntityTag::Age)]
        );
    }

    #[test]
    fn head_flag_must_follow_surname_head() {
        let mut r = PersonRecord::from_fields([(EntityTag::Surname, "Paraud")]);
        r.is_head = true;
        assert_eq!(validate_record(&r), vec![Violation::HeadFlagMismatch]);
        assert_eq!(
            validate_record(&PersonRecord::default()),
            vec![Violation::EmptyRecord]
        );
    }

    #[test]
    fn values_must_survive_the_label_format() {
        let r = PersonRecord::from_fields([(EntityTag::Surname, " a"), (EntityTag::Age, "7<a>")]);
        assert_eq!(
            validate_record(&r),
            vec![
                Violation::UntrimmedValue(EntityTag::Surname),
                Violation::InvalidCharacter(EntityTag::Age)
            ]
        );
    }

    #[test]
    fn names_parse_back() {
        for t in EntityTag::ALL {
            assert_eq!(t.name().parse::<EntityTag>().unwrap(), t);
        }
        for c in PageClass::ALL {
            assert_eq!(c.name().parse::<PageClass>().unwrap(), c);
        }
        assert!("LISTE".parse::<PageClass>().is_err());
    }
}
