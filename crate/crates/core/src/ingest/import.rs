use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ColumnRole {
    Year,
    Commune,
    ArchivalId,
    ImagePath,
    Ignore,
}

impl FromStr for ColumnRole {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "YEAR" => Ok(ColumnRole::Year),
            "COMMUNE" => Ok(ColumnRole::Commune),
            "ARCHIVAL_ID" => Ok(ColumnRole::ArchivalId),
            "IMAGE_PATH" => Ok(ColumnRole::ImagePath),
            "IGNORE" => Ok(ColumnRole::Ignore),
            other => Err(IngestError::InvalidMapping(format!(
                "unknown role {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnRole::Year => "YEAR",
            ColumnRole::Commune => "COMMUNE",
            ColumnRole::ArchivalId => "ARCHIVAL_ID",
            ColumnRole::ImagePath => "IMAGE_PATH",
            ColumnRole::Ignore => "IGNORE",
        })
    }
}

/// Which CSV column plays which role. Exactly one YEAR, COMMUNE and
/// IMAGE_PATH column, at most one ARCHIVAL_ID.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ColumnMapping {
    roles: BTreeMap<String, ColumnRole>,
}

impl ColumnMapping {
    pub fn new<I, S>(roles: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (S, ColumnRole)>,
        S: Into<String>,
    {
        let roles: BTreeMap<String, ColumnRole> =
            roles.into_iter().map(|(c, r)| (c.into(), r)).collect();
        let count = |role| roles.values().filter(|r| **r == role).count();
        for role in [ColumnRole::Year, ColumnRole::Commune, ColumnRole::ImagePath] {
            match count(role) {
                1 => {}
                0 => return Err(IngestError::MissingColumn(format!("<{role}>"))),
                n => {
                    return Err(IngestError::InvalidMapping(format!(
                        "{n} columns mapped to {role}"
                    )))
                }
            }
        }
        if count(ColumnRole::ArchivalId) > 1 {
            return Err(IngestError::InvalidMapping(
                "several ARCHIVAL_ID columns".into(),
            ));
        }
        Ok(Self { roles })
    }

    /// Parses `column=ROLE` lines. `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut roles = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (column, role) = line.rsplit_once('=').ok_or_else(|| {
                IngestError::InvalidMapping(format!("expected column=ROLE, got {line:?}"))
            })?;
            roles.push((column.trim().to_string(), role.parse()?));
        }
        Self::new(roles)
    }

    pub fn column_for(&self, role: ColumnRole) -> Option<&str> {
        self.roles
            .iter()
            .find(|(_, r)| **r == role)
            .map(|(c, _)| c.as_str())
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, ColumnRole)> {
        self.roles.iter().map(|(c, r)| (c.as_str(), *r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowFlag {
    UnparseableYear,
    EmptyCommune,
    EmptyImagePath,
}

/// One CSV data row projected onto the mapped roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub year_text: String,
    pub year: Option<i32>,
    pub commune: String,
    pub archival_id: String,
    pub image_path: String,
    pub flags: Vec<RowFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImportResult {
    pub rows: Vec<RawRow>,
    /// Non-fatal observations about the file.
    pub diagnostics: Vec<String>,
}

fn sniff_delimiter(header: &str) -> u8 {
    b";\t,"
        .iter()
        .copied()
        .max_by_key(|d| header.bytes().filter(|b| b == d).count())
        .filter(|d| header.as_bytes().contains(d))
        .unwrap_or(b',')
}

pub fn import_csv<R: Read>(
    mut reader: R,
    mapping: &ColumnMapping,
) -> Result<ImportResult, IngestError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let first_line = text.lines().next().unwrap_or("");
    if first_line.trim().is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(first_line))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let index_of = |role: ColumnRole| -> Result<Option<usize>, IngestError> {
        match mapping.column_for(role) {
            None => Ok(None),
            Some(col) => headers
                .iter()
                .position(|h| h == col)
                .map(Some)
                .ok_or_else(|| IngestError::MissingColumn(col.to_string())),
        }
    };
    let year_col = index_of(ColumnRole::Year)?;
    let commune_col = index_of(ColumnRole::Commune)?;
    let archival_col = index_of(ColumnRole::ArchivalId)?;
    let path_col = index_of(ColumnRole::ImagePath)?;
    for (col, _) in mapping.columns() {
        if !headers.iter().any(|h| h == col) {
            return Err(IngestError::MissingColumn(col.to_string()));
        }
    }

    let mut result = ImportResult::default();
    for h in &headers {
        if !mapping.columns().any(|(c, _)| c == h) {
            result
                .diagnostics
                .push(format!("column {h:?} is not mapped; ignored"));
        }
    }
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |col: Option<usize>| {
            col.and_then(|c| record.get(c))
                .unwrap_or("")
                .trim()
                .to_string()
        };
        let year_text = cell(year_col);
        let year = year_text.parse::<i32>().ok();
        let mut row = RawRow {
            row: i + 1,
            year,
            year_text,
            commune: cell(commune_col),
            archival_id: cell(archival_col),
            image_path: cell(path_col),
            flags: Vec::new(),
        };
        if row.year.is_none() {
            row.flags.push(RowFlag::UnparseableYear);
        }
        if row.commune.is_empty() {
            row.flags.push(RowFlag::EmptyCommune);
        }
        if row.image_path.is_empty() {
            row.flags.push(RowFlag::EmptyImagePath);
        }
        result.rows.push(row);
    }
    if result.rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(result)
}
