//! Synthetic archive: metadata CSV, gazetteer, registry, a file-backed IIIF
//! tree of mock page images and the ground truth behind them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{task_id_for, write_atomic};
use super::workers::mock_image_bytes;
use super::PipelineError;
use crate::domain::{
    write_fixture, PageClass, PageFixture, PageTranscript, RegisterDocument, RegisterPage,
};
use crate::household::{export_csv, merge_register, HouseholdSet};
use crate::iiif::{ApiVersion, FileTransport, IiifEndpoint};
use crate::ingest::{
    build_registry, import_csv, register_id, write_registry, BuildOptions, ColumnMapping,
    Gazetteer, Registry, Resolutions,
};
use crate::label_codec::{generate_synthetic_register, SyntheticProfile};

const COMMUNES: &[(&str, &str)] = &[
    ("03190", "Moulins"),
    ("03195", "Neuilly-le-Réal"),
    ("03310", "Vichy"),
    ("03185", "Montluçon"),
    ("03118", "Gannat"),
    ("03275", "Souvigny"),
    ("03138", "Lapalisse"),
    ("03082", "Cusset"),
    ("03321", "Yzeure"),
    ("03036", "Bourbon-l'Archambault"),
];

const YEARS: &[i32] = &[1906, 1911, 1921, 1926, 1931, 1936];

pub const MAPPING: &str = "annee=YEAR\ncommune=COMMUNE\ncote=ARCHIVAL_ID\nfichier=IMAGE_PATH\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub registers: usize,
    pub list_pages: usize,
    /// Open each register with a FRONT page.
    pub front_page: bool,
    /// Close each register with a RECAP page.
    pub recap_page: bool,
    pub profile: SyntheticProfile,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            registers: 10,
            list_pages: 18,
            front_page: true,
            recap_page: true,
            profile: SyntheticProfile::default(),
        }
    }
}

impl CorpusSpec {
    pub fn images(&self) -> usize {
        self.registers
            * (self.list_pages + usize::from(self.front_page) + usize::from(self.recap_page))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub root: PathBuf,
    pub registry: Registry,
    /// Ground truth, one document per register in registry order.
    pub documents: Vec<RegisterDocument>,
    /// Household sizes drawn by the generator, per register.
    pub household_sizes: Vec<Vec<usize>>,
    pub truth_households: Vec<HouseholdSet>,
    /// IIIF v2 endpoint serving the corpus from disk.
    pub endpoint: IiifEndpoint,
}

impl SyntheticCorpus {
    pub fn metadata_path(root: &Path) -> PathBuf {
        root.join("metadata.csv")
    }
}

/// Writes a synthetic corpus under `dir`:
///
/// * `metadata.csv`, `mapping.txt`, `gazetteer.csv`: archive inputs
/// * `registry.ndjson`: the registry built from them
/// * `iiif/`: info.json and full images, served by a `file://` endpoint
/// * `truth/{task_id}.txt`: fixtures of the LIST pages
/// * `truth_households.csv`: households of the ground truth
///
/// The registry is produced by the regular ingest path, so its register
/// and task ids are those a real run would see.
pub fn build_synthetic_corpus(
    dir: &Path,
    spec: &CorpusSpec,
) -> Result<SyntheticCorpus, PipelineError> {
    let corpus_err = |m: String| PipelineError::Corpus(m);
    if spec.registers == 0 || spec.list_pages == 0 {
        return Err(corpus_err(
            "corpus needs at least one register and one list page".into(),
        ));
    }
    if spec.registers > COMMUNES.len() * YEARS.len() {
        return Err(corpus_err(format!(
            "at most {} registers",
            COMMUNES.len() * YEARS.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let root = dir.canonicalize()?;

    let mut gaz_csv = String::from("code,canonical_name,department,variants\n");
    for (code, name) in COMMUNES {
        let _ = writeln!(gaz_csv, "{code},\"{name}\",03,");
    }
    let gazetteer = Gazetteer::from_csv(gaz_csv.as_bytes())?;

    struct Planned {
        id: String,
        pages: Vec<(PageClass, PageTranscript)>,
        sizes: Vec<usize>,
    }
    let mut metadata = String::from("annee;commune;cote;fichier\n");
    let mut planned = Vec::new();
    for r in 0..spec.registers {
        let (code, name) = COMMUNES[r % COMMUNES.len()];
        let year = YEARS[r / COMMUNES.len()];
        let archival = format!("6M{}", r + 1);
        let id = register_id(year, code, &archival);
        let synth = generate_synthetic_register(
            spec.seed.wrapping_add(r as u64),
            &spec.profile,
            spec.list_pages,
        )?;

        let mut pages = Vec::new();
        if spec.front_page {
            pages.push((PageClass::Front, PageTranscript::default()));
        }
        pages.extend(synth.pages.into_iter().map(|p| (PageClass::List, p)));
        if spec.recap_page {
            pages.push((PageClass::Recap, PageTranscript::default()));
        }
        for (seq, (_, page)) in pages.iter_mut().enumerate() {
            page.page_id = task_id_for(&id, seq);
            page.page_index = seq;
            let slug: String = name.chars().filter(char::is_ascii_alphanumeric).collect();
            let _ = writeln!(
                metadata,
                "{year};{name};{archival};AD03/{archival}/{slug}/vue{}.jpg",
                seq + 1
            );
        }
        planned.push(Planned {
            id,
            pages,
            sizes: synth.household_sizes,
        });
    }

    let mapping = ColumnMapping::parse(MAPPING)?;
    let imported = import_csv(metadata.as_bytes(), &mapping)?;
    let built = build_registry(
        &imported.rows,
        &gazetteer,
        &Resolutions::default(),
        &BuildOptions::default(),
    )?;
    if !built.exceptions.is_empty() {
        return Err(corpus_err(format!(
            "corpus rows rejected by ingest: {:?}",
            built.exceptions
        )));
    }
    let registry = built.registry;

    let endpoint = IiifEndpoint::new(
        &format!("file://{}", root.join("iiif").display()),
        ApiVersion::V2,
    )?;
    let position: BTreeMap<&str, usize> = registry
        .registers
        .iter()
        .enumerate()
        .map(|(i, r)| (r.metadata.register_id.as_str(), i))
        .collect();
    planned.sort_by_key(|p| position.get(p.id.as_str()).copied());
    let mut documents = Vec::new();
    let mut household_sizes = Vec::new();
    let mut truth_households = Vec::new();
    for p in planned {
        let register = registry
            .register(&p.id)
            .ok_or_else(|| corpus_err(format!("register {} missing after ingest", p.id)))?;
        let mut doc = RegisterDocument {
            register_id: p.id.clone(),
            pages: Vec::new(),
        };
        for (image, (class, page)) in register.images.iter().zip(&p.pages) {
            let info = FileTransport::path_for(&endpoint.info_url(&image.iiif_identifier)?)
                .expect("file url");
            let full = FileTransport::path_for(&endpoint.full_image_url(&image.iiif_identifier)?)
                .expect("file url");
            write_atomic(&info, br#"{"width":2480,"height":3508}"#)?;
            write_atomic(&full, &mock_image_bytes(*class, page))?;
            if *class == PageClass::List {
                let fixture = write_fixture(&PageFixture {
                    class: Some(*class),
                    transcript: page.clone(),
                });
                write_atomic(
                    &root.join("truth").join(format!("{}.txt", page.page_id)),
                    fixture.as_bytes(),
                )?;
            }
            doc.pages.push(RegisterPage {
                page_id: page.page_id.clone(),
                class: *class,
                transcript: (*class == PageClass::List).then(|| page.clone()),
            });
        }
        truth_households.push(merge_register(&doc).map_err(|e| corpus_err(e.to_string()))?);
        documents.push(doc);
        household_sizes.push(p.sizes);
    }

    let mut households_csv = Vec::new();
    export_csv(&truth_households, &mut households_csv).map_err(|e| corpus_err(e.to_string()))?;
    write_atomic(&root.join("truth_households.csv"), &households_csv)?;
    write_atomic(&root.join("gazetteer.csv"), gaz_csv.as_bytes())?;
    write_atomic(&root.join("mapping.txt"), MAPPING.as_bytes())?;
    write_atomic(&SyntheticCorpus::metadata_path(&root), metadata.as_bytes())?;
    let mut reg_bytes = Vec::new();
    write_registry(&registry, &mut reg_bytes)?;
    write_atomic(&root.join("registry.ndjson"), &reg_bytes)?;

    Ok(SyntheticCorpus {
        root,
        registry,
        documents,
        household_sizes,
        truth_households,
        endpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iiif::{check_integrity, FileTransport, IntegrityStatus};
    use crate::ingest::read_registry;

    #[test]
    fn corpus_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            registers: 3,
            list_pages: 4,
            ..Default::default()
        };
        let c = build_synthetic_corpus(dir.path(), &spec).unwrap();
        assert_eq!(c.registry.image_count(), spec.images());
        assert_eq!(c.documents.len(), 3);
        for (doc, sizes) in c.documents.iter().zip(&c.household_sizes) {
            assert_eq!(doc.pages.len(), 6);
            assert_eq!(doc.pages[0].class, PageClass::Front);
            let merged = merge_register(doc).unwrap();
            let got: Vec<usize> = merged.households.iter().map(|h| h.len()).collect();
            assert_eq!(&got, sizes);
        }
        let reread = read_registry(std::io::BufReader::new(
            fs::File::open(c.root.join("registry.ndjson")).unwrap(),
        ))
        .unwrap();
        assert_eq!(reread, c.registry);
        let (_, img) = c.registry.images().nth(1).unwrap();
        let r = check_integrity(&c.endpoint, img, &FileTransport);
        assert_eq!(r.status, IntegrityStatus::Ok);
        assert_eq!(fs::read_dir(c.root.join("truth")).unwrap().count(), 12);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            registers: 2,
            list_pages: 3,
            seed: 9,
            ..Default::default()
        };
        build_synthetic_corpus(a.path(), &spec).unwrap();
        build_synthetic_corpus(b.path(), &spec).unwrap();
        for f in ["metadata.csv", "registry.ndjson", "truth_households.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn truth_follows_registry_order() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CorpusSpec {
            registers: 12,
            list_pages: 1,
            ..Default::default()
        };
        let c = build_synthetic_corpus(dir.path(), &spec).unwrap();
        let registry: Vec<&str> = c
            .registry
            .registers
            .iter()
            .map(|r| r.metadata.register_id.as_str())
            .collect();
        let docs: Vec<&str> = c.documents.iter().map(|d| d.register_id.as_str()).collect();
        let truth: Vec<&str> = c
            .truth_households
            .iter()
            .map(|h| h.register_id.as_str())
            .collect();
        assert_eq!(docs, registry);
        assert_eq!(truth, registry);
    }
}
