//! Adapter contract for the external neural models.
//!
//! Every backend speaks one protocol: a request `{id, kind, payload}` is
//! answered by exactly one response `{id, ok, result}` or
//! `{id, ok: false, error}`. Per-item failures are returned as data; only
//! transport and protocol violations are hard errors.

mod batch;
mod http;
mod ops;
pub mod stub;
mod subprocess;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, IoContext, Result};

pub use batch::{load_completion_log, run_batch, BatchOptions};
pub use http::HttpBackend;
pub use ops::{
    diarize, embed, phonemize, synthesize, transcribe, DiarizeResult, EmbedResult, PhonemeResult,
    SynthJob, SynthResult, TranscriptResult,
};
pub use stub::{StubBackend, StubOptions};
pub use subprocess::SubprocessBackend;

pub const BACKEND_CONF_ENV: &str = "DIALEKTPIPE_BACKEND_CONF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Asr,
    Diarizer,
    Phonemizer,
    Tts,
    Embedder,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Asr,
        BackendKind::Diarizer,
        BackendKind::Phonemizer,
        BackendKind::Tts,
        BackendKind::Embedder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Asr => "asr",
            BackendKind::Diarizer => "diarizer",
            BackendKind::Phonemizer => "phonemizer",
            BackendKind::Tts => "tts",
            BackendKind::Embedder => "embedder",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown backend kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Subprocess,
    Http,
    /// In-process deterministic stub.
    Stub,
}

fn default_timeout() -> f64 {
    60.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub transport: Transport,
    /// URL for `http`, command line for `subprocess`.
    #[serde(default)]
    pub endpoint_or_cmd: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "one")]
    pub max_parallel: usize,
    #[serde(default)]
    pub stub: StubOptions,
}

impl BackendSpec {
    pub fn stub(kind: BackendKind) -> Self {
        BackendSpec {
            kind,
            transport: Transport::Stub,
            endpoint_or_cmd: String::new(),
            timeout_s: default_timeout(),
            max_parallel: 1,
            stub: StubOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) || !self.timeout_s.is_finite() {
            return Err(Error::Config(format!(
                "{} backend: timeout_s must be > 0, got {}",
                self.kind, self.timeout_s
            )));
        }
        if self.max_parallel < 1 {
            return Err(Error::Config(format!(
                "{} backend: max_parallel must be >= 1",
                self.kind
            )));
        }
        if matches!(self.transport, Transport::Http | Transport::Subprocess)
            && self.endpoint_or_cmd.trim().is_empty()
        {
            return Err(Error::Config(format!(
                "{} backend: endpoint_or_cmd is required for {:?} transport",
                self.kind, self.transport
            )));
        }
        Ok(())
    }
}

/// Reads a TOML file of backend tables keyed by kind, e.g. `[asr]`. The
/// `kind` field may be omitted and is then taken from the table name.
pub fn read_backend_specs(path: &Path) -> Result<BTreeMap<BackendKind, BackendSpec>> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_backend_specs(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_backend_specs(text: &str) -> Result<BTreeMap<BackendKind, BackendSpec>> {
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    let mut out = BTreeMap::new();
    for (key, value) in table {
        let kind: BackendKind = key.parse()?;
        out.insert(kind, spec_from_value(kind, value)?);
    }
    Ok(out)
}

pub(crate) fn spec_from_value(kind: BackendKind, value: toml::Value) -> Result<BackendSpec> {
    let toml::Value::Table(mut t) = value else {
        return Err(Error::Config(format!("backend {kind} must be a table")));
    };
    t.entry("kind")
        .or_insert_with(|| toml::Value::String(kind.as_str().into()));
    let spec: BackendSpec = toml::Value::Table(t)
        .try_into()
        .map_err(|e| Error::Config(format!("backend {kind}: {e}")))?;
    if spec.kind != kind {
        return Err(Error::Config(format!(
            "backend table {kind} declares kind {}",
            spec.kind
        )));
    }
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub kind: BackendKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of one request: the result payload or the backend's error text.
pub type ItemResult = std::result::Result<Value, String>;

impl Response {
    pub fn from_item(id: impl Into<String>, item: ItemResult) -> Response {
        match item {
            Ok(v) => Response {
                id: id.into(),
                ok: true,
                result: Some(v),
                error: None,
            },
            Err(e) => Response {
                id: id.into(),
                ok: false,
                result: None,
                error: Some(e),
            },
        }
    }

    /// Checks the id and shape against `request_id`.
    pub fn into_item(self, request_id: &str) -> Result<ItemResult> {
        if self.id != request_id {
            return Err(Error::Backend(format!(
                "response id {:?} does not match request id {request_id:?}",
                self.id
            )));
        }
        match (self.ok, self.result, self.error) {
            (true, Some(v), _) => Ok(Ok(v)),
            (false, _, Some(e)) => Ok(Err(e)),
            (true, None, _) => Err(Error::Backend(format!("{request_id}: ok response without result"))),
            (false, _, None) => Err(Error::Backend(format!("{request_id}: error response without error"))),
        }
    }
}

pub trait Backend: Send + Sync {
    fn spec(&self) -> &BackendSpec;

    /// Sends one request. `Ok(Err(_))` is a per-item failure.
    fn call(&self, request: &Request) -> Result<ItemResult>;

    fn kind(&self) -> BackendKind {
        self.spec().kind
    }
}

pub fn open_backend(spec: &BackendSpec) -> Result<Box<dyn Backend>> {
    spec.validate()?;
    Ok(match spec.transport {
        Transport::Stub => Box::new(StubBackend::new(spec.clone())),
        Transport::Subprocess => Box::new(SubprocessBackend::new(spec.clone())?),
        Transport::Http => Box::new(HttpBackend::new(spec.clone())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_file_fills_kind_from_table() {
        let specs = parse_backend_specs(
            "[asr]\ntransport = \"stub\"\n[tts]\ntransport = \"http\"\nendpoint_or_cmd = \"http://x\"\nmax_parallel = 3\n",
        )
        .unwrap();
        assert_eq!(specs[&BackendKind::Asr].transport, Transport::Stub);
        assert_eq!(specs[&BackendKind::Tts].max_parallel, 3);
        assert_eq!(specs[&BackendKind::Tts].timeout_s, 60.0);
    }

    #[test]
    fn spec_validation() {
        assert!(parse_backend_specs("[asr]\ntransport = \"stub\"\ntimeout_s = 0\n").is_err());
        assert!(parse_backend_specs("[asr]\ntransport = \"stub\"\nmax_parallel = 0\n").is_err());
        assert!(parse_backend_specs("[asr]\ntransport = \"http\"\n").is_err());
        assert!(parse_backend_specs("[asr]\nkind = \"tts\"\ntransport = \"stub\"\n").is_err());
        assert!(parse_backend_specs("[vocoder]\ntransport = \"stub\"\n").is_err());
    }

    #[test]
    fn wire_field_names() {
        let req = Request {
            id: "s1".into(),
            kind: BackendKind::Asr,
            payload: serde_json::json!({"audio_path": "a.wav"}),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":"s1","kind":"asr","payload":{"audio_path":"a.wav"}}"#
        );
        let ok = Response::from_item("s1", Ok(serde_json::json!({"text": "hallo"})));
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"id":"s1","ok":true,"result":{"text":"hallo"}}"#);
        let err = Response::from_item("s1", Err("boom".into()));
        assert_eq!(serde_json::to_string(&err).unwrap(), r#"{"id":"s1","ok":false,"error":"boom"}"#);
    }

    #[test]
    fn response_shape_is_checked() {
        let r = Response { id: "a".into(), ok: true, result: None, error: None };
        assert!(r.into_item("a").is_err());
        let r = Response::from_item("b", Ok(Value::Null));
        assert!(r.into_item("a").is_err());
        let r = Response::from_item("a", Err("x".into()));
        assert_eq!(r.into_item("a").unwrap(), Err("x".to_string()));
    }
}
