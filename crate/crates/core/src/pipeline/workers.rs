//! Page classifier and recognizer interfaces, fixture-backed mocks and an
//! adapter for external model processes.

use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    parse_fixture, write_fixture, EntityTag, PageClass, PageFixture, PageTranscript,
};
use crate::iiif::{Transport, TransportError};
use crate::label_codec::{LabelCodec, LabelString};

/// Leading bytes of a mock page image; the rest is a text fixture.
pub const MOCK_IMAGE_MAGIC: &[u8] = b"CENSUSFLOW-MOCK-IMAGE 1\n";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkerError {
    #[error("worker failed: {0}")]
    Failed(String),
    #[error("not a mock page image: {0}")]
    BadImage(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// What a worker may reach while it runs on a compute node.
pub struct WorkerContext<'a> {
    /// The node's network access. On isolated nodes every call fails.
    pub transport: &'a dyn Transport,
    /// Staged copy of the image on shared storage.
    pub input_path: &'a Path,
    pub attempt: u32,
}

pub trait Classifier: Send + Sync {
    fn classify(&self, image: &[u8], ctx: &WorkerContext<'_>) -> Result<PageClass, WorkerError>;
    fn version(&self) -> String;
}

pub trait Recognizer: Send + Sync {
    fn recognize(&self, image: &[u8], ctx: &WorkerContext<'_>) -> Result<LabelString, WorkerError>;
    fn version(&self) -> String;
}

pub struct WorkerSet {
    pub classifier: Box<dyn Classifier>,
    pub recognizer: Box<dyn Recognizer>,
}

impl WorkerSet {
    pub fn mock(seed: u64, noise: NoiseConfig) -> Self {
        Self {
            classifier: Box::new(MockClassifier),
            recognizer: Box::new(MockRecognizer { seed, noise }),
        }
    }
}

pub fn mock_image_bytes(class: PageClass, transcript: &PageTranscript) -> Vec<u8> {
    let mut out = MOCK_IMAGE_MAGIC.to_vec();
    out.extend(
        write_fixture(&PageFixture {
            class: Some(class),
            transcript: transcript.clone(),
        })
        .into_bytes(),
    );
    out
}

pub fn parse_mock_image(bytes: &[u8]) -> Result<(PageClass, PageTranscript), WorkerError> {
    let body = bytes
        .strip_prefix(MOCK_IMAGE_MAGIC)
        .ok_or_else(|| WorkerError::BadImage("missing header".into()))?;
    let text = std::str::from_utf8(body).map_err(|e| WorkerError::BadImage(e.to_string()))?;
    let fixture = parse_fixture(text).map_err(|e| WorkerError::BadImage(e.to_string()))?;
    let class = fixture
        .class
        .ok_or_else(|| WorkerError::BadImage("no page class".into()))?;
    Ok((class, fixture.transcript))
}

/// Reads the page class recorded in a mock image.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClassifier;

impl Classifier for MockClassifier {
    fn classify(&self, image: &[u8], _ctx: &WorkerContext<'_>) -> Result<PageClass, WorkerError> {
        Ok(parse_mock_image(image)?.0)
    }

    fn version(&self) -> String {
        "mock-classifier/1".into()
    }
}

/// Per-record and per-character corruption applied by the mock recognizer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Probability that a value character is replaced by another letter.
    pub char_substitution: f64,
    /// Probability that a field other than the head surname is dropped.
    pub entity_drop: f64,
    /// Probability that a record's head status is inverted.
    pub head_flip: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("char_substitution", self.char_substitution),
            ("entity_drop", self.entity_drop),
            ("head_flip", self.head_flip),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

/// Corrupts a transcript in place. Records never lose their last field, and
/// the result stays encodable.
pub fn apply_noise<R: Rng + ?Sized>(page: &mut PageTranscript, noise: &NoiseConfig, rng: &mut R) {
    for record in &mut page.records {
        if noise.head_flip > 0.0 && rng.random_bool(noise.head_flip) {
            let (from, to) = if record.is_head {
                (EntityTag::SurnameHead, EntityTag::Surname)
            } else {
                (EntityTag::Surname, EntityTag::SurnameHead)
            };
            if let Some(v) = record.fields.remove(&from) {
                record.fields.insert(to, v);
            }
        }
        if noise.entity_drop > 0.0 {
            let tags: Vec<EntityTag> = record
                .fields
                .keys()
                .copied()
                .filter(|t| *t != EntityTag::SurnameHead)
                .collect();
            for tag in tags {
                if record.fields.len() > 1 && rng.random_bool(noise.entity_drop) {
                    record.fields.remove(&tag);
                }
            }
        }
        if noise.char_substitution > 0.0 {
            for value in record.fields.values_mut() {
                *value = value
                    .chars()
                    .map(|c| {
                        if !rng.random_bool(noise.char_substitution) {
                            return c;
                        }
                        loop {
                            let r = LETTERS[rng.random_range(0..LETTERS.len())] as char;
                            if r != c {
                                return r;
                            }
                        }
                    })
                    .collect();
            }
        }
        record.is_head = record.fields.contains_key(&EntityTag::SurnameHead);
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Re-encodes the ground truth stored in a mock image, with seeded noise.
/// The output depends only on the image and the seed.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRecognizer {
    pub seed: u64,
    pub noise: NoiseConfig,
}

impl Recognizer for MockRecognizer {
    fn recognize(
        &self,
        image: &[u8],
        _ctx: &WorkerContext<'_>,
    ) -> Result<LabelString, WorkerError> {
        let (_, mut page) = parse_mock_image(image)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(&page.page_id));
        apply_noise(&mut page, &self.noise, &mut rng);
        LabelCodec::default()
            .encode(&page)
            .map_err(|e| WorkerError::Failed(e.to_string()))
    }

    fn version(&self) -> String {
        let n = &self.noise;
        format!(
            "mock-recognizer/1 seed={} sub={} drop={} flip={}",
            self.seed, n.char_substitution, n.entity_drop, n.head_flip
        )
    }
}

/// Runs an external program per page. Arguments equal to `{input}` are
/// replaced by the staged image path (appended when absent); stdout is the
/// answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalCommand {
    pub fn new(program: impl Into<String>, args: &[&str]) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn run(&self, input: &Path) -> Result<String, WorkerError> {
        let input = input.to_string_lossy();
        let mut args: Vec<String> = self
            .args
            .iter()
            .map(|a| a.replace("{input}", &input))
            .collect();
        if !self.args.iter().any(|a| a.contains("{input}")) {
            args.push(input.into_owned());
        }
        let out = Command::new(&self.program)
            .args(&args)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| WorkerError::Failed(format!("{}: {e}", self.program)))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(WorkerError::Failed(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                stderr.trim()
            )));
        }
        String::from_utf8(out.stdout).map_err(|e| WorkerError::Failed(e.to_string()))
    }
}

impl Classifier for ExternalCommand {
    fn classify(&self, _image: &[u8], ctx: &WorkerContext<'_>) -> Result<PageClass, WorkerError> {
        let out = self.run(ctx.input_path)?;
        out.trim()
            .parse()
            .map_err(|e: crate::domain::DomainError| WorkerError::Failed(e.to_string()))
    }

    fn version(&self) -> String {
        format!("external:{}", self.program)
    }
}

impl Recognizer for ExternalCommand {
    fn recognize(
        &self,
        _image: &[u8],
        ctx: &WorkerContext<'_>,
    ) -> Result<LabelString, WorkerError> {
        let out = self.run(ctx.input_path)?;
        Ok(LabelString::new(out.trim_end_matches(['\n', '\r'])))
    }

    fn version(&self) -> String {
        format!("external:{}", self.program)
    }
}

/// Worker selection, as written on the command line:
/// `mock:seed=7,noise=0.1,drop=0.02,flip=0.01` or
/// `external:classify=PROG,recognize=PROG`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WorkerChoice {
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise: NoiseConfig,
    },
    External {
        classify: ExternalCommand,
        recognize: ExternalCommand,
    },
}

impl Default for WorkerChoice {
    fn default() -> Self {
        WorkerChoice::Mock {
            seed: 0,
            noise: NoiseConfig::default(),
        }
    }
}

impl WorkerChoice {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            WorkerChoice::Mock { noise, .. } => noise.validate(),
            WorkerChoice::External {
                classify,
                recognize,
            } => {
                if classify.program.is_empty() || recognize.program.is_empty() {
                    Err("external worker needs both programs".into())
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn build(&self) -> WorkerSet {
        match self {
            WorkerChoice::Mock { seed, noise } => WorkerSet::mock(*seed, *noise),
            WorkerChoice::External {
                classify,
                recognize,
            } => WorkerSet {
                classifier: Box::new(classify.clone()),
                recognizer: Box::new(recognize.clone()),
            },
        }
    }
}

pub(crate) fn parse_params(spec: &str) -> Result<Vec<(&str, &str)>, String> {
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .ok_or_else(|| format!("expected key=value, got {p:?}"))
        })
        .collect()
}

impl FromStr for WorkerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let params = parse_params(params)?;
        let num = |k: &str, v: &str| {
            v.parse::<f64>()
                .map_err(|_| format!("{k}: not a number: {v:?}"))
        };
        let choice = match kind {
            "mock" => {
                let (mut seed, mut noise) = (0, NoiseConfig::default());
                for (k, v) in params {
                    match k {
                        "seed" => {
                            seed = v
                                .parse()
                                .map_err(|_| format!("seed: not an integer: {v:?}"))?
                        }
                        "noise" | "sub" => noise.char_substitution = num(k, v)?,
                        "drop" => noise.entity_drop = num(k, v)?,
                        "flip" => noise.head_flip = num(k, v)?,
                        _ => return Err(format!("unknown mock parameter {k:?}")),
                    }
                }
                WorkerChoice::Mock { seed, noise }
            }
            "external" => {
                let (mut classify, mut recognize) = (None, None);
                for (k, v) in params {
                    match k {
                        "classify" => classify = Some(ExternalCommand::new(v, &[])),
                        "recognize" => recognize = Some(ExternalCommand::new(v, &[])),
                        _ => return Err(format!("unknown external parameter {k:?}")),
                    }
                }
                WorkerChoice::External {
                    classify: classify.ok_or("external worker needs classify=PROG")?,
                    recognize: recognize.ok_or("external worker needs recognize=PROG")?,
                }
            }
            other => return Err(format!("unknown worker kind {other:?}")),
        };
        choice.validate()?;
        Ok(choice)
    }
}
