//! Deterministic stand-ins for the five neural backends.
//!
//! Stubs read an optional sidecar `<audio>.json` ([`Sidecar`]) carrying the
//! text, speaker and dialect of an audio file. Without one they derive
//! everything from the audio content: pitch buckets pick the dialect and
//! speaker, the content hash seeds any randomness.

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ops::{AudioPayload, DiarizePayload, TtsPayload};
use super::{Backend, BackendKind, BackendSpec, ItemResult, Request, Response};
use crate::audio::{self, energy_vad, estimate_pitch_hz, AudioBuffer, VadParams};
use crate::error::{Error, Result};
use crate::model::{Millis, SpeakerTurn};
use crate::segment::write_rttm;
use crate::synth::{self, DialectPhonemeSource, Sidecar};

pub const DEFAULT_EMBED_DIM: usize = 16;
/// Token substituted by the noisy ASR stub.
pub const NOISE_TOKEN: &str = "zzz";
const TTS_RATE_HZ: u32 = 8_000;
const TTS_SECONDS: f64 = 0.25;
const PHONEMES_PER_SECOND: f64 = 8.0;
const WORDS_PER_SECOND: f64 = 2.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubOptions {
    /// Request ids that always fail.
    pub fail_ids: Vec<String>,
    /// Fraction of request ids that fail, chosen by id hash.
    pub fail_rate: f64,
    /// ASR replaces each token with [`NOISE_TOKEN`] with probability 1/n,
    /// decided by a hash of the audio and token position; 0 disables.
    pub noise_every: usize,
    /// Embedding dimension; 0 means [`DEFAULT_EMBED_DIM`].
    pub embed_dim: usize,
    /// Artificial latency per request.
    pub delay_ms: u64,
}

pub struct StubBackend {
    spec: BackendSpec,
}

impl StubBackend {
    pub fn new(spec: BackendSpec) -> Self {
        StubBackend { spec }
    }
}

impl Backend for StubBackend {
    fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    fn call(&self, request: &Request) -> Result<ItemResult> {
        if request.kind != self.spec.kind {
            return Err(Error::Backend(format!(
                "{} stub received a {} request",
                self.spec.kind, request.kind
            )));
        }
        if self.spec.stub.delay_ms > 0 {
            let delay = Duration::from_millis(self.spec.stub.delay_ms);
            let limit = Duration::from_secs_f64(self.spec.timeout_s);
            if delay > limit {
                thread::sleep(limit);
                return Ok(Err(format!("timeout after {}s", self.spec.timeout_s)));
            }
            thread::sleep(delay);
        }
        Ok(handle(self.spec.kind, &self.spec.stub, request))
    }
}

/// Serves the protocol over line-delimited JSON until `input` closes.
pub fn serve<R: BufRead, W: Write>(
    kind: BackendKind,
    opts: &StubOptions,
    input: R,
    mut output: W,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                if opts.delay_ms > 0 {
                    thread::sleep(Duration::from_millis(opts.delay_ms));
                }
                Response::from_item(req.id.clone(), handle(kind, opts, &req))
            }
            Err(e) => Response::from_item("", Err(format!("malformed request: {e}"))),
        };
        let mut text = serde_json::to_string(&response).expect("response serializes");
        text.push('\n');
        output.write_all(text.as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

/// Answers one request.
pub fn handle(kind: BackendKind, opts: &StubOptions, req: &Request) -> ItemResult {
    if req.kind != kind {
        return Err(format!("this stub serves {kind}, got {}", req.kind));
    }
    if opts.fail_ids.iter().any(|id| *id == req.id) {
        return Err("injected failure".into());
    }
    if opts.fail_rate > 0.0 && unit_hash(req.id.as_bytes()) < opts.fail_rate {
        return Err("injected random failure".into());
    }
    match kind {
        BackendKind::Asr => asr(opts, parse(&req.payload)?),
        BackendKind::Phonemizer => phonemizer(parse(&req.payload)?),
        BackendKind::Embedder => embedder(opts, parse(&req.payload)?),
        BackendKind::Tts => tts(parse(&req.payload)?),
        BackendKind::Diarizer => diarizer(parse(&req.payload)?),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(payload: &Value) -> std::result::Result<T, String> {
    serde_json::from_value(payload.clone()).map_err(|e| format!("bad payload: {e}"))
}

fn digest(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Hash of `bytes` mapped to [0, 1).
fn unit_hash(bytes: &[u8]) -> f64 {
    (digest(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn content_seed(path: &Path) -> std::result::Result<u64, String> {
    std::fs::read(path)
        .map(|b| digest(&b))
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn load(path: &Path) -> std::result::Result<(AudioBuffer, Option<Sidecar>), String> {
    let buf = audio::decode_any(path).map_err(|e| e.to_string())?;
    let side = Sidecar::read(path).map_err(|e| e.to_string())?;
    Ok((buf, side))
}

fn asr(opts: &StubOptions, p: AudioPayload) -> ItemResult {
    let path = Path::new(&p.audio_path);
    let (buf, side) = load(path)?;
    let mut words: Vec<String> = match side.and_then(|s| s.text) {
        Some(t) => t.split_whitespace().map(str::to_string).collect(),
        None if buf.is_empty() => Vec::new(),
        None => {
            let n = ((buf.duration_s() * WORDS_PER_SECOND).round() as usize).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(content_seed(path)?);
            synth::pseudo_words(&mut rng, n)
                .into_iter()
                .map(str::to_string)
                .collect()
        }
    };
    if opts.noise_every > 0 {
        let seed = content_seed(path)?;
        let rate = 1.0 / opts.noise_every as f64;
        for (i, w) in words.iter_mut().enumerate() {
            if unit_hash(format!("{seed}:{i}").as_bytes()) < rate {
                *w = NOISE_TOKEN.to_string();
            }
        }
    }
    let text = words.join(" ");
    Ok(json!({ "text": if text.is_empty() { Value::Null } else { Value::String(text) } }))
}

fn phonemizer(p: AudioPayload) -> ItemResult {
    let path = Path::new(&p.audio_path);
    let (buf, side) = load(path)?;
    if buf.is_empty() {
        return Ok(json!({ "phonemes": "" }));
    }
    let side = side.unwrap_or_default();
    let dialect = side
        .dialect
        .unwrap_or_else(|| synth::dialect_for_pitch(estimate_pitch_hz(buf.samples(), buf.sample_rate_hz())));
    let n = match &side.text {
        Some(t) => t.chars().filter(|c| c.is_alphabetic()).count().max(1),
        None => ((buf.duration_s() * PHONEMES_PER_SECOND).round() as usize).max(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(content_seed(path)?);
    let tokens = DialectPhonemeSource::new(dialect).sample(&mut rng, n);
    Ok(json!({ "phonemes": tokens.join(" ") }))
}

/// Unit vector derived from `key`.
pub fn speaker_vector(key: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(digest(key.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn embedder(opts: &StubOptions, p: AudioPayload) -> ItemResult {
    let (buf, side) = load(Path::new(&p.audio_path))?;
    if buf.is_empty() {
        return Err("empty audio".into());
    }
    let key = side.and_then(|s| s.speaker).unwrap_or_else(|| {
        synth::speaker_tag_for_pitch(estimate_pitch_hz(buf.samples(), buf.sample_rate_hz()))
    });
    let dim = if opts.embed_dim == 0 { DEFAULT_EMBED_DIM } else { opts.embed_dim };
    Ok(json!({ "embedding": speaker_vector(&key, dim) }))
}

fn tts(p: TtsPayload) -> ItemResult {
    if p.reference_audio.is_empty() || p.reference_audio.len() > 5 {
        return Err(format!("expected 1 to 5 reference clips, got {}", p.reference_audio.len()));
    }
    for r in &p.reference_audio {
        if !Path::new(r).is_file() {
            return Err(format!("missing reference clip {r}"));
        }
    }
    let first = Path::new(&p.reference_audio[0]);
    let speaker = Sidecar::read(first)
        .map_err(|e| e.to_string())?
        .and_then(|s| s.speaker)
        .unwrap_or_else(|| first.file_stem().unwrap_or_default().to_string_lossy().into_owned());

    let key = format!("{}\0{}", p.text, p.dialect.as_str());
    let freq = 150.0 + (digest(key.as_bytes()) % 400) as f64;
    let out = Path::new(&p.out_path);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let buf = audio::tone(freq, TTS_SECONDS, TTS_RATE_HZ, 0.5);
    audio::write_wav(&buf, out).map_err(|e| e.to_string())?;
    Sidecar {
        text: Some(p.text),
        speaker: Some(speaker),
        dialect: Some(p.dialect),
    }
    .write(out)
    .map_err(|e| e.to_string())?;
    Ok(json!({ "audio_path": p.out_path }))
}

fn diarizer(p: DiarizePayload) -> ItemResult {
    let path = Path::new(&p.audio_path);
    let buf = audio::decode_any(path).map_err(|e| e.to_string())?;
    let file_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let mut turns = Vec::new();
    for (a, b) in energy_vad(&buf, &VadParams::default()) {
        let clip = audio::slice(&buf, a, b).map_err(|e| e.to_string())?;
        let pitch = estimate_pitch_hz(clip.samples(), clip.sample_rate_hz());
        turns.push(SpeakerTurn {
            speaker_tag: synth::speaker_tag_for_pitch(pitch),
            start: Millis::from_secs_f64(a),
            end: Millis::from_secs_f64(b),
        });
    }
    Ok(json!({ "rttm": write_rttm(&file_id, &turns) }))
}
