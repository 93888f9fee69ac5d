use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::gazetteer::{match_commune, Gazetteer, GazetteerEntry, MatchConfig, MatchStatus};
use super::import::{RawRow, RowFlag};
use super::normalize::normalize_name;
use super::IngestError;

/// Years in which a nominative census was taken: every five years from 1836,
/// with 1871 held in 1872 and 1916 cancelled.
pub fn is_census_year(year: i32) -> bool {
    match year {
        1872 => true,
        1836..=1866 | 1876..=1911 | 1921..=1936 => (year - 1836) % 5 == 0,
        _ => false,
    }
}

/// Numeric-aware string ordering: digit runs compare by value.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut prev: Option<bool> = None;
        for (i, c) in s.char_indices() {
            let digit = c.is_ascii_digit();
            if prev.is_some_and(|p| p != digit) {
                out.push((prev.unwrap(), &s[start..i]));
                start = i;
            }
            prev = Some(digit);
        }
        if let Some(p) = prev {
            out.push((p, &s[start..]));
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, x), (true, y)) => {
                let (xt, yt) = (x.trim_start_matches('0'), y.trim_start_matches('0'));
                xt.len().cmp(&yt.len()).then_with(|| xt.cmp(yt))
            }
            ((_, x), (_, y)) => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

/// Filesystem-safe register identifier.
pub fn register_id(year: i32, commune_code: &str, archival_id: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    if archival_id.is_empty() {
        format!("{year}-{}", clean(commune_code))
    } else {
        format!("{year}-{}-{}", clean(commune_code), clean(archival_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterMetadata {
    pub register_id: String,
    pub census_year: i32,
    pub commune: GazetteerEntry,
    pub archival_id: String,
    /// CSV rows that contributed images.
    pub source_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub register_id: String,
    pub iiif_identifier: String,
    pub image_path: String,
    pub sequence_index: usize,
    pub verified: bool,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub source_row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Register {
    pub metadata: RegisterMetadata,
    pub images: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Registry {
    pub registers: Vec<Register>,
}

impl Registry {
    pub fn images(&self) -> impl Iterator<Item = (&RegisterMetadata, &ImageRef)> {
        self.registers
            .iter()
            .flat_map(|r| r.images.iter().map(move |i| (&r.metadata, i)))
    }

    pub fn image_count(&self) -> usize {
        self.registers.iter().map(|r| r.images.len()).sum()
    }

    pub fn register(&self, id: &str) -> Option<&Register> {
        self.registers.iter().find(|r| r.metadata.register_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExceptionKind {
    UnparseableYear,
    InvalidCensusYear,
    UnmatchedCommune,
    AmbiguousCommune,
    MissingImagePath,
    /// Same image path and the same metadata as an earlier row.
    DuplicateRow,
    /// Same image path with different metadata; every such row is held back.
    ConflictingDuplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionRecord {
    pub row: usize,
    pub kind: ExceptionKind,
    pub detail: String,
    pub year: String,
    pub commune: String,
    pub archival_id: String,
    pub image_path: String,
}

/// A row whose commune needs a human decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorklistEntry {
    pub row: usize,
    pub name: String,
    pub department_hint: String,
    /// `code:score` pairs, best first.
    pub candidates: Vec<(String, f64)>,
}

/// Manual commune decisions keyed by normalized name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resolutions {
    by_name: BTreeMap<String, String>,
}

impl Resolutions {
    pub fn insert(&mut self, name: &str, code: &str) {
        self.by_name
            .insert(normalize_name(name), code.trim().to_string());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.by_name.get(&normalize_name(name)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// Reads a resolution CSV: a `name` column and a `code` or
/// `resolution_code` column. A filled-in worklist qualifies.
pub fn read_resolutions<R: Read>(reader: R) -> Result<Resolutions, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let name_col = col("name").ok_or_else(|| IngestError::MissingColumn("name".into()))?;
    let code_col = col("resolution_code")
        .or_else(|| col("code"))
        .ok_or_else(|| IngestError::MissingColumn("resolution_code".into()))?;
    let mut out = Resolutions::default();
    for record in rdr.records() {
        let record = record?;
        let (name, code) = (
            record.get(name_col).unwrap_or(""),
            record.get(code_col).unwrap_or(""),
        );
        if !name.is_empty() && !code.is_empty() {
            out.insert(name, code);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOptions {
    pub department_hint: Option<String>,
    pub matching: MatchConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOutput {
    pub registry: Registry,
    pub exceptions: Vec<ExceptionRecord>,
    pub worklist: Vec<WorklistEntry>,
}

/// Groups rows into registers by (year, commune, archival id) and orders
/// each register's images by natural path order. Every input row ends up in
/// exactly one of the registry or the exceptions.
pub fn build_registry(
    rows: &[RawRow],
    gazetteer: &Gazetteer,
    resolutions: &Resolutions,
    options: &BuildOptions,
) -> Result<BuildOutput, IngestError> {
    if gazetteer.is_empty() {
        return Err(IngestError::EmptyGazetteer);
    }
    let mut out = BuildOutput::default();
    let exception = |row: &RawRow, kind, detail: String| ExceptionRecord {
        row: row.row,
        kind,
        detail,
        year: row.year_text.clone(),
        commune: row.commune.clone(),
        archival_id: row.archival_id.clone(),
        image_path: row.image_path.clone(),
    };

    let mut cache: HashMap<String, super::gazetteer::MatchOutcome> = HashMap::new();
    let mut accepted: Vec<(&RawRow, i32, &GazetteerEntry)> = Vec::new();
    for row in rows {
        let year = match row.year {
            None => {
                out.exceptions.push(exception(
                    row,
                    ExceptionKind::UnparseableYear,
                    format!("{:?}", row.year_text),
                ));
                continue;
            }
            Some(y) if !is_census_year(y) => {
                out.exceptions.push(exception(
                    row,
                    ExceptionKind::InvalidCensusYear,
                    y.to_string(),
                ));
                continue;
            }
            Some(y) => y,
        };
        if row.flags.contains(&RowFlag::EmptyImagePath) {
            out.exceptions.push(exception(
                row,
                ExceptionKind::MissingImagePath,
                String::new(),
            ));
            continue;
        }
        if let Some(code) = resolutions.get(&row.commune) {
            match gazetteer.by_code(code) {
                Some(entry) => accepted.push((row, year, entry)),
                None => out.exceptions.push(exception(
                    row,
                    ExceptionKind::UnmatchedCommune,
                    format!("resolution code {code} not in gazetteer"),
                )),
            }
            continue;
        }
        let key = normalize_name(&row.commune);
        if !cache.contains_key(&key) {
            let m = match_commune(
                &row.commune,
                gazetteer,
                options.department_hint.as_deref(),
                &options.matching,
            )?;
            cache.insert(key.clone(), m);
        }
        let outcome = &cache[&key];
        match &outcome.status {
            MatchStatus::Accepted(code) => accepted.push((
                row,
                year,
                gazetteer.by_code(code).expect("candidate from gazetteer"),
            )),
            MatchStatus::Ambiguous => {
                out.exceptions.push(exception(
                    row,
                    ExceptionKind::AmbiguousCommune,
                    format!("{} candidates", outcome.candidates.len()),
                ));
                out.worklist.push(WorklistEntry {
                    row: row.row,
                    name: row.commune.clone(),
                    department_hint: options.department_hint.clone().unwrap_or_default(),
                    candidates: outcome
                        .candidates
                        .iter()
                        .map(|c| (c.code.clone(), c.score))
                        .collect(),
                });
            }
            MatchStatus::Unmatched => out.exceptions.push(exception(
                row,
                ExceptionKind::UnmatchedCommune,
                String::new(),
            )),
        }
    }

    // one image path, one identity
    let mut by_path: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (row, _, _)) in accepted.iter().enumerate() {
        by_path.entry(row.image_path.as_str()).or_default().push(i);
    }
    let mut keep = vec![true; accepted.len()];
    for idxs in by_path.values().filter(|v| v.len() > 1) {
        let identity = |i: usize| {
            (
                accepted[i].1,
                &accepted[i].2.code,
                &accepted[i].0.archival_id,
            )
        };
        let consistent = idxs.iter().all(|&i| identity(i) == identity(idxs[0]));
        for (k, &i) in idxs.iter().enumerate() {
            if consistent && k == 0 {
                continue;
            }
            keep[i] = false;
            let (kind, detail) = if consistent {
                (
                    ExceptionKind::DuplicateRow,
                    format!("same as row {}", accepted[idxs[0]].0.row),
                )
            } else {
                (
                    ExceptionKind::ConflictingDuplicate,
                    format!("{} rows share this path", idxs.len()),
                )
            };
            out.exceptions.push(exception(accepted[i].0, kind, detail));
        }
    }
    out.exceptions.sort_by_key(|e| e.row);

    let mut groups: BTreeMap<(i32, String, String), (GazetteerEntry, Vec<&RawRow>)> =
        BTreeMap::new();
    for ((row, year, entry), _) in accepted.iter().zip(&keep).filter(|(_, k)| **k) {
        groups
            .entry((*year, entry.code.clone(), row.archival_id.clone()))
            .or_insert_with(|| ((*entry).clone(), Vec::new()))
            .1
            .push(row);
    }
    for ((year, code, archival_id), (commune, mut members)) in groups {
        members.sort_by(|a, b| natural_cmp(&a.image_path, &b.image_path).then(a.row.cmp(&b.row)));
        let id = register_id(year, &code, &archival_id);
        let mut source_rows: Vec<usize> = members.iter().map(|r| r.row).collect();
        source_rows.sort_unstable();
        let images = members
            .iter()
            .enumerate()
            .map(|(seq, r)| ImageRef {
                register_id: id.clone(),
                iiif_identifier: r.image_path.clone(),
                image_path: r.image_path.clone(),
                sequence_index: seq,
                verified: false,
                width: None,
                height: None,
                source_row: r.row,
            })
            .collect();
        out.registry.registers.push(Register {
            metadata: RegisterMetadata {
                register_id: id,
                census_year: year,
                commune,
                archival_id,
                source_rows,
            },
            images,
        });
    }
    Ok(out)
}

/// One registry line: an image with its register's metadata inlined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RegistryLine {
    register_id: String,
    census_year: i32,
    commune_code: String,
    commune_name: String,
    department: String,
    #[serde(default)]
    commune_variants: Vec<String>,
    archival_id: String,
    sequence_index: usize,
    iiif_identifier: String,
    image_path: String,
    verified: bool,
    width: Option<u32>,
    height: Option<u32>,
    source_row: usize,
}

pub fn write_registry<W: Write>(registry: &Registry, mut out: W) -> Result<(), IngestError> {
    for register in &registry.registers {
        let m = &register.metadata;
        for image in &register.images {
            let line = RegistryLine {
                register_id: m.register_id.clone(),
                census_year: m.census_year,
                commune_code: m.commune.code.clone(),
                commune_name: m.commune.canonical_name.clone(),
                department: m.commune.department.clone(),
                commune_variants: m.commune.valid_names.clone(),
                archival_id: m.archival_id.clone(),
                sequence_index: image.sequence_index,
                iiif_identifier: image.iiif_identifier.clone(),
                image_path: image.image_path.clone(),
                verified: image.verified,
                width: image.width,
                height: image.height,
                source_row: image.source_row,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_registry<R: BufRead>(reader: R) -> Result<Registry, IngestError> {
    let mut registry = Registry::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: RegistryLine = serde_json::from_str(&line)
            .map_err(|e| IngestError::InvalidRegistry(format!("line {}: {e}", n + 1)))?;
        let slot = *index.entry(l.register_id.clone()).or_insert_with(|| {
            registry.registers.push(Register {
                metadata: RegisterMetadata {
                    register_id: l.register_id.clone(),
                    census_year: l.census_year,
                    commune: GazetteerEntry {
                        code: l.commune_code.clone(),
                        canonical_name: l.commune_name.clone(),
                        department: l.department.clone(),
                        valid_names: l.commune_variants.clone(),
                    },
                    archival_id: l.archival_id.clone(),
                    source_rows: Vec::new(),
                },
                images: Vec::new(),
            });
            registry.registers.len() - 1
        });
        let register = &mut registry.registers[slot];
        if register
            .images
            .iter()
            .any(|i| i.sequence_index == l.sequence_index)
        {
            return Err(IngestError::InvalidRegistry(format!(
                "duplicate sequence index {} in {}",
                l.sequence_index, l.register_id
            )));
        }
        register.metadata.source_rows.push(l.source_row);
        register.images.push(ImageRef {
            register_id: l.register_id,
            iiif_identifier: l.iiif_identifier,
            image_path: l.image_path,
            sequence_index: l.sequence_index,
            verified: l.verified,
            width: l.width,
            height: l.height,
            source_row: l.source_row,
        });
    }
    for r in &mut registry.registers {
        r.images.sort_by_key(|i| i.sequence_index);
        r.metadata.source_rows.sort_unstable();
    }
    Ok(registry)
}

pub fn write_exceptions<W: Write>(
    exceptions: &[ExceptionRecord],
    out: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "row",
        "kind",
        "detail",
        "year",
        "commune",
        "archival_id",
        "image_path",
    ])?;
    for e in exceptions {
        w.write_record([
            e.row.to_string(),
            format!("{:?}", e.kind),
            e.detail.clone(),
            e.year.clone(),
            e.commune.clone(),
            e.archival_id.clone(),
            e.image_path.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the manual-resolution worklist, with an empty `resolution_code`
/// column to be filled in and fed back through [`read_resolutions`].
pub fn write_worklist<W: Write>(worklist: &[WorklistEntry], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "row",
        "name",
        "department_hint",
        "candidates",
        "resolution_code",
    ])?;
    for e in worklist {
        let candidates: Vec<String> = e
            .candidates
            .iter()
            .map(|(c, s)| format!("{c}:{s:.4}"))
            .collect();
        w.write_record([
            e.row.to_string(),
            e.name.clone(),
            e.department_hint.clone(),
            candidates.join("|"),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaz() -> Gazetteer {
        Gazetteer::from_csv(
            "code,canonical_name,department,variants\n03190,Moulins,03,\n03310,Vichy,03,\n"
                .as_bytes(),
        )
        .unwrap()
    }

    fn row(n: usize, year: i32, commune: &str, id: &str, path: &str) -> RawRow {
        RawRow {
            row: n,
            year_text: year.to_string(),
            year: Some(year),
            commune: commune.into(),
            archival_id: id.into(),
            image_path: path.into(),
            flags: vec![],
        }
    }

    fn build(rows: &[RawRow]) -> BuildOutput {
        build_registry(
            rows,
            &gaz(),
            &Resolutions::default(),
            &BuildOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn census_years() {
        let valid: Vec<i32> = (1830..1945).filter(|y| is_census_year(*y)).collect();
        assert_eq!(
            valid,
            vec![
                1836, 1841, 1846, 1851, 1856, 1861, 1866, 1872, 1876, 1881, 1886, 1891, 1896, 1901,
                1906, 1911, 1921, 1926, 1931, 1936
            ]
        );
    }

    #[test]
    fn natural_ordering() {
        assert_eq!(natural_cmp("img_2.jpg", "img_10.jpg"), Ordering::Less);
        assert_eq!(natural_cmp("img_010.jpg", "img_9.jpg"), Ordering::Greater);
        assert_eq!(natural_cmp("a", "a1"), Ordering::Less);
        assert_eq!(natural_cmp("img_02", "img_2"), Ordering::Less);
        assert_eq!(natural_cmp("b", "a10"), Ordering::Greater);
    }

    #[test]
    fn images_are_sequenced_numerically() {
        let out = build(&[
            row(1, 1901, "Moulins", "6M1", "img_10.jpg"),
            row(2, 1901, "Moulins", "6M1", "img_2.jpg"),
        ]);
        assert_eq!(out.registry.registers.len(), 1);
        let imgs = &out.registry.registers[0].images;
        assert_eq!(
            (imgs[0].sequence_index, imgs[0].image_path.as_str()),
            (0, "img_2.jpg")
        );
        assert_eq!(
            (imgs[1].sequence_index, imgs[1].image_path.as_str()),
            (1, "img_10.jpg")
        );
        assert_eq!(
            out.registry.registers[0].metadata.register_id,
            "1901-03190-6M1"
        );
    }

    #[test]
    fn cancelled_census_goes_to_exceptions() {
        let out = build(&[row(1, 1916, "Moulins", "", "a.jpg")]);
        assert!(out.registry.registers.is_empty());
        assert_eq!(out.exceptions[0].kind, ExceptionKind::InvalidCensusYear);
    }

    #[test]
    fn duplicates_are_held_back() {
        let out = build(&[
            row(1, 1901, "Moulins", "", "a.jpg"),
            row(2, 1901, "Moulins", "", "a.jpg"),
            row(3, 1901, "Moulins", "", "b.jpg"),
            row(4, 1906, "Moulins", "", "b.jpg"),
        ]);
        let kinds: Vec<_> = out.exceptions.iter().map(|e| (e.row, e.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (2, ExceptionKind::DuplicateRow),
                (3, ExceptionKind::ConflictingDuplicate),
                (4, ExceptionKind::ConflictingDuplicate)
            ]
        );
        assert_eq!(out.registry.image_count(), 1);
    }

    #[test]
    fn ambiguous_rows_join_the_worklist_and_can_be_resolved() {
        let rows = [
            row(1, 1901, "Moulin", "", "a.jpg"),
            row(2, 1901, "Paris", "", "b.jpg"),
        ];
        let out = build(&rows);
        assert_eq!(out.worklist.len(), 1);
        assert_eq!(out.exceptions.len(), 2);
        assert_eq!(out.exceptions[1].kind, ExceptionKind::UnmatchedCommune);

        let mut buf = Vec::new();
        write_worklist(&out.worklist, &mut buf).unwrap();
        let filled = String::from_utf8(buf)
            .unwrap()
            .replace("03190:0.8571,", "03190:0.8571,03190");
        let res = read_resolutions(filled.as_bytes()).unwrap();
        assert_eq!(res.get("moulin"), Some("03190"));
        let out = build_registry(&rows, &gaz(), &res, &BuildOptions::default()).unwrap();
        assert_eq!(out.registry.image_count(), 1);
        assert_eq!(out.exceptions.len(), 1);
    }

    #[test]
    fn registry_round_trips_through_ndjson() {
        let out = build(&[
            row(1, 1901, "Moulins", "6M 1/2", "p1.jpg"),
            row(2, 1906, "Vichy", "", "p2.jpg"),
        ]);
        let mut buf = Vec::new();
        write_registry(&out.registry, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 2);
        let back = read_registry(buf.as_slice()).unwrap();
        assert_eq!(back, out.registry);
        assert_eq!(back.registers[0].metadata.register_id, "1901-03190-6M_1_2");
    }
}
