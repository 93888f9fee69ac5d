//! TOML configuration file. Every key is optional; command-line flags win.
//!
//! ```toml
//! workspace = "work"          # default "censusflow-work"
//! seed = 7                    # default 0
//! jobs = 8                    # default: no cap
//! verbosity = "info"          # error | warn | info | debug | trace
//!
//! [ingest]
//! threshold = 0.85            # candidate similarity floor
//! auto_threshold = 0.95       # automatic acceptance
//! department_hint = "03"
//!
//! [iiif]
//! endpoint = "https://iiif.example/iiif"
//! api_version = 2
//! timeout_ms = 30000
//! max_attempts = 3
//! base_backoff_ms = 500
//! concurrency = 8
//!
//! [pipeline]                  # any PipelineConfig field
//! window = 32
//! scheduler = { kind = "local", n = 4 }
//! workers = { kind = "mock", seed = 7, noise = { char_substitution = 0.1 } }
//!
//! [simulate]
//! mode = "pipelined"
//! cap = 4096
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use censusflow::iiif::{ApiVersion, IiifEndpoint, RetryPolicy};
use censusflow::ingest::MatchConfig;
use censusflow::pipeline::PipelineConfig;
use censusflow::simulate::Mode;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub workspace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub verbosity: Option<String>,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub iiif: IiifSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub threshold: f64,
    pub auto_threshold: f64,
    pub department_hint: Option<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        let m = MatchConfig::default();
        Self {
            threshold: m.threshold,
            auto_threshold: m.auto_threshold,
            department_hint: None,
        }
    }
}

impl IngestSection {
    pub fn matching(&self) -> Result<MatchConfig> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.threshold) || !ok(self.auto_threshold) || self.threshold > self.auto_threshold {
            bail!("ingest thresholds must satisfy 0 <= threshold <= auto_threshold <= 1");
        }
        Ok(MatchConfig {
            threshold: self.threshold,
            auto_threshold: self.auto_threshold,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IiifSection {
    pub endpoint: Option<String>,
    pub api_version: u8,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub concurrency: usize,
}

impl Default for IiifSection {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_version: 2,
            timeout_ms: 30_000,
            max_attempts: 3,
            base_backoff_ms: 500,
            concurrency: 8,
        }
    }
}

impl IiifSection {
    /// Endpoint from `flag`, falling back to the configured one.
    pub fn endpoint(&self, flag: Option<&str>, api: Option<u8>) -> Result<IiifEndpoint> {
        let base = flag
            .map(str::to_string)
            .or_else(|| self.endpoint.clone())
            .context("no IIIF endpoint: pass --endpoint or set [iiif] endpoint")?;
        let version = match api.unwrap_or(self.api_version) {
            2 => ApiVersion::V2,
            3 => ApiVersion::V3,
            v => bail!("unsupported IIIF API version {v}"),
        };
        if self.max_attempts == 0 {
            bail!("[iiif] max_attempts must be at least 1");
        }
        let mut endpoint = IiifEndpoint::new(&base, version)?.with_retry(RetryPolicy {
            max_attempts: self.max_attempts,
            base_backoff: Duration::from_millis(self.base_backoff_ms),
        })?;
        endpoint.timeout = Duration::from_millis(self.timeout_ms);
        Ok(endpoint)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub mode: Option<Mode>,
    pub cap: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            mode: None,
            cap: 4096,
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<GlobalConfig> {
    let Some(path) = path else {
        return Ok(GlobalConfig::default());
    };
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: GlobalConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.pipeline.validate()?;
    config.ingest.matching()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_example_parses() {
        let text = r#"
workspace = "w"
seed = 7
[ingest]
auto_threshold = 0.9
[iiif]
endpoint = "https://a.example/iiif/"
api_version = 3
[pipeline]
window = 8
scheduler = { kind = "simulated", nodes = 2 }
workers = { kind = "mock", seed = 3, noise = { char_substitution = 0.1 } }
[simulate]
mode = "sequential"
"#;
        let c: GlobalConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.pipeline.window, 8);
        let e = c.iiif.endpoint(None, None).unwrap();
        assert_eq!(e.base_url(), "https://a.example/iiif");
        assert_eq!(e.api_version, ApiVersion::V3);
        assert_eq!(c.simulate.mode, Some(Mode::Sequential));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<GlobalConfig>("sead = 1").is_err());
        assert!(toml::from_str::<GlobalConfig>("[iiif]\nendpont = \"x\"").is_err());
        assert!(toml::from_str::<GlobalConfig>("[pipeline]\nwindw = 3").is_err());
    }

    #[test]
    fn thresholds_are_checked() {
        let s = IngestSection {
            threshold: 0.99,
            ..Default::default()
        };
        assert!(s.matching().is_err());
    }
}
