use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{read_backend_specs, spec_from_value, BackendKind, BackendSpec, BACKEND_CONF_ENV};
use crate::did::{NbConfig, DEFAULT_MIN_SPEAKER_SECONDS};
use crate::error::{Error, Result};
use crate::ingest::{sha256_file, DEFAULT_PARALLEL_DOWNLOADS};
use crate::model::Millis;
use crate::segment::SegmentRules;

pub const WORKSPACE_ENV: &str = "DIALEKTPIPE_WORKSPACE";
pub const DEFAULT_CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "ingest")]
    Ingest,
    #[serde(rename = "diarize")]
    Diarize,
    #[serde(rename = "segment")]
    Segment,
    #[serde(rename = "transcribe")]
    Transcribe,
    #[serde(rename = "dialect-id")]
    DialectId,
    #[serde(rename = "stats")]
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Diarize,
        Stage::Segment,
        Stage::Transcribe,
        Stage::DialectId,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Diarize => "diarize",
            Stage::Segment => "segment",
            Stage::Transcribe => "transcribe",
            Stage::DialectId => "dialect-id",
            Stage::Stats => "stats",
        }
    }

    pub fn previous(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("known stage");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

fn default_created_at() -> String {
    DEFAULT_CREATED_AT.to_string()
}

fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

fn default_parallel() -> usize {
    DEFAULT_PARALLEL_DOWNLOADS
}

fn default_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    /// Directory holding `catalog.json` and the media it references.
    pub local: Option<PathBuf>,
    pub endpoint: Option<String>,
    /// Environment variable holding the catalog bearer token.
    pub auth_env: Option<String>,
    pub overrides: Option<PathBuf>,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default = "default_attempts")]
    pub retry_attempts: u32,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            local: None,
            endpoint: None,
            auth_env: None,
            overrides: None,
            parallel: default_parallel(),
            retry_attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiarizeSection {
    pub min_speakers: u32,
    pub max_speakers: u32,
}

impl Default for DiarizeSection {
    fn default() -> Self {
        DiarizeSection {
            min_speakers: 1,
            max_speakers: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    pub min_s: f64,
    pub max_s: f64,
    pub min_tail_s: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        let r = SegmentRules::default();
        SegmentSection {
            min_s: r.min.as_secs_f64(),
            max_s: r.max.as_secs_f64(),
            min_tail_s: r.min_tail.as_secs_f64(),
        }
    }
}

impl SegmentSection {
    pub fn rules(&self) -> SegmentRules {
        SegmentRules {
            min: Millis::from_secs_f64(self.min_s),
            max: Millis::from_secs_f64(self.max_s),
            min_tail: Millis::from_secs_f64(self.min_tail_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidSection {
    /// A trained model file.
    pub model: Option<PathBuf>,
    /// Or a labeled phoneme corpus to train one from.
    pub train_corpus: Option<PathBuf>,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_min_speaker_s")]
    pub min_speaker_s: f64,
}

fn default_orders() -> Vec<usize> {
    NbConfig::default().orders
}

fn default_alpha() -> f64 {
    NbConfig::default().alpha
}

fn default_min_speaker_s() -> f64 {
    DEFAULT_MIN_SPEAKER_SECONDS
}

impl Default for DidSection {
    fn default() -> Self {
        DidSection {
            model: None,
            train_corpus: None,
            orders: default_orders(),
            alpha: default_alpha(),
            min_speaker_s: default_min_speaker_s(),
        }
    }
}

impl DidSection {
    pub fn nb_config(&self) -> NbConfig {
        NbConfig {
            orders: self.orders.clone(),
            alpha: self.alpha,
        }
    }
}

/// On-disk form of the pipeline configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    workspace: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_created_at")]
    created_at: String,
    #[serde(default = "default_stages")]
    stages: Vec<Stage>,
    #[serde(default)]
    ingest: IngestSection,
    #[serde(default)]
    diarize: DiarizeSection,
    #[serde(default)]
    segment: SegmentSection,
    #[serde(default)]
    did: DidSection,
    #[serde(default)]
    backends: BTreeMap<String, toml::Value>,
}

/// Validated pipeline configuration with paths made absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub seed: u64,
    /// Manifest creation timestamp; fixed so that reruns are byte-identical.
    pub created_at: String,
    pub stages: Vec<Stage>,
    pub ingest: IngestSection,
    pub diarize: DiarizeSection,
    pub segment: SegmentSection,
    pub did: DidSection,
    pub backends: BTreeMap<BackendKind, BackendSpec>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn backend_needed(stage: Stage) -> Option<BackendKind> {
    match stage {
        Stage::Diarize => Some(BackendKind::Diarizer),
        Stage::Transcribe => Some(BackendKind::Asr),
        Stage::DialectId => Some(BackendKind::Phonemizer),
        _ => None,
    }
}

impl PipelineConfig {
    /// Reads and validates a TOML config file. Relative paths resolve
    /// against the file's directory. The workspace comes from
    /// `DIALEKTPIPE_WORKSPACE` when set, else from the file. Backends not
    /// configured in the file are taken from `DIALEKTPIPE_BACKEND_CONF`.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let workspace_env = std::env::var_os(WORKSPACE_ENV).map(PathBuf::from);
        let backend_env = std::env::var_os(BACKEND_CONF_ENV).map(PathBuf::from);
        Self::parse(&text, &base, workspace_env, backend_env.as_deref())
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })
    }

    pub fn parse(
        text: &str,
        base: &Path,
        workspace_override: Option<PathBuf>,
        backend_conf: Option<&Path>,
    ) -> Result<PipelineConfig> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut workspace = workspace_override
            .or(raw.workspace)
            .ok_or_else(|| Error::Config(format!("no workspace: set `workspace` or {WORKSPACE_ENV}")))?;
        if workspace.is_relative() {
            workspace = base.join(workspace);
        }
        let mut ingest = raw.ingest;
        resolve(base, &mut ingest.local);
        resolve(base, &mut ingest.overrides);
        let mut did = raw.did;
        resolve(base, &mut did.model);
        resolve(base, &mut did.train_corpus);

        let mut backends = BTreeMap::new();
        for (key, value) in raw.backends {
            let kind: BackendKind = key.parse()?;
            backends.insert(kind, spec_from_value(kind, value)?);
        }
        if let Some(conf) = backend_conf {
            for (kind, spec) in read_backend_specs(conf)? {
                backends.entry(kind).or_insert(spec);
            }
        }

        let cfg = PipelineConfig {
            workspace,
            seed: raw.seed,
            created_at: raw.created_at,
            stages: raw.stages,
            ingest,
            diarize: raw.diarize,
            segment: raw.segment,
            did,
            backends,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("stage list is empty".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "stages must be distinct and in pipeline order ({})",
                Stage::ALL.map(Stage::as_str).join(", ")
            )));
        }
        if self.created_at.trim().is_empty() {
            return Err(Error::Config("created_at is empty".into()));
        }
        for stage in &self.stages {
            if let Some(kind) = backend_needed(*stage) {
                if !self.backends.contains_key(&kind) {
                    return Err(Error::Config(format!(
                        "stage {stage} needs a {kind} backend: add [backends.{kind}] or set {BACKEND_CONF_ENV}"
                    )));
                }
            }
        }
        if self.stages.contains(&Stage::Ingest) {
            let ing = &self.ingest;
            match (&ing.local, &ing.endpoint) {
                (Some(dir), None) => {
                    if !dir.join("catalog.json").is_file() {
                        return Err(Error::Config(format!("{} has no catalog.json", dir.display())));
                    }
                }
                (None, Some(url)) => {
                    if !(url.starts_with("http://") || url.starts_with("https://")) {
                        return Err(Error::Config(format!("ingest endpoint {url:?} is not an http(s) URL")));
                    }
                    if let Some(var) = &ing.auth_env {
                        if std::env::var_os(var).is_none() {
                            return Err(Error::Config(format!("auth variable {var} is not set")));
                        }
                    }
                }
                _ => return Err(Error::Config("ingest needs exactly one of `local` or `endpoint`".into())),
            }
            match &ing.overrides {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::Config(format!("overrides file {} not found", p.display()))),
                None => return Err(Error::Config("ingest needs an `overrides` file".into())),
            }
            if ing.parallel == 0 || ing.retry_attempts == 0 {
                return Err(Error::Config("ingest parallel and retry_attempts must be >= 1".into()));
            }
        }
        if self.stages.contains(&Stage::Diarize) {
            let d = self.diarize;
            if d.min_speakers < 1 || d.min_speakers > d.max_speakers {
                return Err(Error::Config(format!(
                    "diarize speaker range {}..{} is invalid",
                    d.min_speakers, d.max_speakers
                )));
            }
        }
        if !(self.segment.min_s.is_finite() && self.segment.max_s.is_finite() && self.segment.min_tail_s.is_finite()) {
            return Err(Error::Config("segment bounds must be finite".into()));
        }
        self.segment.rules().validate()?;
        if self.stages.contains(&Stage::DialectId) {
            self.did.nb_config().validate()?;
            if !(self.did.min_speaker_s >= 0.0) {
                return Err(Error::Config("did min_speaker_s must be >= 0".into()));
            }
            let source = match (&self.did.model, &self.did.train_corpus) {
                (Some(p), None) | (None, Some(p)) => p,
                _ => return Err(Error::Config("did needs exactly one of `model` or `train_corpus`".into())),
            };
            if !source.is_file() {
                return Err(Error::Config(format!("did source {} not found", source.display())));
            }
        }
        Ok(())
    }

    /// Hash of everything that determines pipeline output. File locations
    /// are left out; the content of referenced files is included.
    pub fn hash(&self) -> Result<String> {
        let file_hash = |p: &Option<PathBuf>| -> Result<Option<String>> {
            p.as_ref().filter(|p| p.is_file()).map(|p| sha256_file(p)).transpose()
        };
        let did_source = file_hash(&self.did.model)?.or(file_hash(&self.did.train_corpus)?);
        let doc = serde_json::json!({
            "seed": self.seed,
            "created_at": self.created_at,
            "stages": self.stages,
            "ingest": {
                "endpoint": self.ingest.endpoint,
                "overrides": file_hash(&self.ingest.overrides)?,
            },
            "diarize": self.diarize,
            "segment": self.segment,
            "did": {
                "source": did_source,
                "trained": self.did.train_corpus.is_some(),
                "orders": self.did.orders,
                "alpha": self.did.alpha,
                "min_speaker_s": self.did.min_speaker_s,
            },
            "backends": self.backends.values().collect::<Vec<_>>(),
        });
        let d = Sha256::digest(doc.to_string().as_bytes());
        Ok(d[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("catalog.json"), "[]").unwrap();
        std::fs::write(dir.path().join("overrides.tsv"), "").unwrap();
        std::fs::write(dir.path().join("corpus.tsv"), "Bern\ta b\n").unwrap();
        dir
    }

    const BASE: &str = r#"
workspace = "ws"
[ingest]
local = "."
overrides = "overrides.tsv"
[did]
train_corpus = "corpus.tsv"
[backends.asr]
transport = "stub"
[backends.diarizer]
transport = "stub"
[backends.phonemizer]
transport = "stub"
"#;

    #[test]
    fn minimal_config_resolves_paths() {
        let dir = setup();
        let cfg = PipelineConfig::parse(BASE, dir.path(), None, None).unwrap();
        assert_eq!(cfg.workspace, dir.path().join("ws"));
        assert_eq!(cfg.stages, Stage::ALL.to_vec());
        assert_eq!(cfg.created_at, DEFAULT_CREATED_AT);
        assert_eq!(cfg.segment.rules(), SegmentRules::default());
        let env = PipelineConfig::parse(BASE, dir.path(), Some("/elsewhere".into()), None).unwrap();
        assert_eq!(env.workspace, PathBuf::from("/elsewhere"));
        assert_eq!(cfg.hash().unwrap(), env.hash().unwrap());
    }

    #[test]
    fn config_errors_are_reported() {
        let dir = setup();
        let bad = |text: &str| PipelineConfig::parse(text, dir.path(), None, None).unwrap_err();
        assert!(matches!(bad(&BASE.replace("[backends.asr]\ntransport = \"stub\"\n", "")), Error::Config(m) if m.contains("asr")));
        assert!(matches!(bad(&format!("stages = [\"segment\", \"diarize\"]\n{BASE}")), Error::Config(_)));
        assert!(matches!(bad(&BASE.replace("corpus.tsv", "missing.tsv")), Error::Config(_)));
        assert!(matches!(bad(&format!("bogus = 1\n{BASE}")), Error::Config(_)));
        assert!(matches!(bad(&BASE.replace("workspace = \"ws\"", "")), Error::Config(m) if m.contains(WORKSPACE_ENV)));
        assert!(matches!(bad(&format!("{BASE}[segment]\nmin_s = 20.0\n")), Error::Config(_)));
    }

    #[test]
    fn backends_fall_back_to_the_backend_file() {
        let dir = setup();
        let conf = dir.path().join("backends.toml");
        std::fs::write(&conf, "[asr]\ntransport = \"stub\"\nmax_parallel = 7\n").unwrap();
        let text = BASE.replace("[backends.asr]\ntransport = \"stub\"\n", "");
        let cfg = PipelineConfig::parse(&text, dir.path(), None, Some(&conf)).unwrap();
        assert_eq!(cfg.backends[&BackendKind::Asr].max_parallel, 7);
        let hashed = PipelineConfig::parse(BASE, dir.path(), None, Some(&conf)).unwrap();
        assert_eq!(hashed.backends[&BackendKind::Asr].max_parallel, 1);
        assert_ne!(cfg.hash().unwrap(), hashed.hash().unwrap());
    }
}
