//! Typed requests for each backend kind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_batch, Backend, BackendKind, BatchOptions, ItemResult, Request};
use crate::error::{Error, Result};
use crate::model::{DialectRegion, SpeakerTurn};
use crate::segment::parse_rttm;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct AudioPayload {
    pub audio_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DiarizePayload {
    pub audio_path: String,
    pub min_speakers: u32,
    pub max_speakers: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TtsPayload {
    pub text: String,
    pub reference_audio: Vec<String>,
    pub dialect: DialectRegion,
    pub out_path: String,
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn expect_kind(backend: &dyn Backend, kind: BackendKind) -> Result<()> {
    if backend.kind() != kind {
        return Err(Error::Precondition(format!(
            "expected a {kind} backend, got {}",
            backend.kind()
        )));
    }
    Ok(())
}

fn audio_requests(kind: BackendKind, items: &[(String, PathBuf)]) -> Vec<Request> {
    items
        .iter()
        .map(|(id, path)| Request {
            id: id.clone(),
            kind,
            payload: serde_json::to_value(AudioPayload {
                audio_path: path_str(path),
            })
            .expect("payload serializes"),
        })
        .collect()
}

fn field<'a>(v: &'a Value, name: &str, id: &str, kind: BackendKind) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| Error::Backend(format!("{kind} result for {id} lacks field {name:?}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptResult {
    pub segment_id: String,
    pub text: Option<String>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Transcribes `(segment_id, audio path)` pairs. Missing or blank text is
/// a failed item.
pub fn transcribe(
    backend: &dyn Backend,
    items: &[(String, PathBuf)],
    opts: &BatchOptions,
) -> Result<Vec<TranscriptResult>> {
    expect_kind(backend, BackendKind::Asr)?;
    let out = run_batch(backend, &audio_requests(BackendKind::Asr, items), opts)?;
    items
        .iter()
        .zip(out)
        .map(|((id, _), item)| {
            Ok(match item {
                Ok(v) => {
                    let text = match field(&v, "text", id, BackendKind::Asr)? {
                        Value::Null => None,
                        Value::String(s) => Some(s.trim().to_string()).filter(|s| !s.is_empty()),
                        other => {
                            return Err(Error::Backend(format!("asr text for {id} is {other}")))
                        }
                    };
                    TranscriptResult {
                        segment_id: id.clone(),
                        failed: text.is_none(),
                        reason: text.is_none().then(|| "empty transcript".to_string()),
                        text,
                    }
                }
                Err(e) => TranscriptResult {
                    segment_id: id.clone(),
                    text: None,
                    failed: true,
                    reason: Some(e),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeResult {
    pub id: String,
    /// Tokens; `None` when the backend failed.
    pub phonemes: Option<Vec<String>>,
    /// Backend answered with no phonemes.
    pub empty: bool,
    pub error: Option<String>,
}

pub fn phonemize(
    backend: &dyn Backend,
    items: &[(String, PathBuf)],
    opts: &BatchOptions,
) -> Result<Vec<PhonemeResult>> {
    expect_kind(backend, BackendKind::Phonemizer)?;
    let out = run_batch(backend, &audio_requests(BackendKind::Phonemizer, items), opts)?;
    items
        .iter()
        .zip(out)
        .map(|((id, _), item)| {
            Ok(match item {
                Ok(v) => {
                    let s = field(&v, "phonemes", id, BackendKind::Phonemizer)?
                        .as_str()
                        .ok_or_else(|| Error::Backend(format!("phonemes for {id} are not a string")))?;
                    let tokens: Vec<String> = s.split_whitespace().map(str::to_string).collect();
                    PhonemeResult {
                        id: id.clone(),
                        empty: tokens.is_empty(),
                        phonemes: Some(tokens),
                        error: None,
                    }
                }
                Err(e) => PhonemeResult {
                    id: id.clone(),
                    phonemes: None,
                    empty: false,
                    error: Some(e),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResult {
    pub id: String,
    pub embedding: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Embeds each clip. All returned vectors must share one dimension.
pub fn embed(backend: &dyn Backend, items: &[(String, PathBuf)], opts: &BatchOptions) -> Result<Vec<EmbedResult>> {
    expect_kind(backend, BackendKind::Embedder)?;
    let out = run_batch(backend, &audio_requests(BackendKind::Embedder, items), opts)?;
    let mut dim: Option<usize> = None;
    items
        .iter()
        .zip(out)
        .map(|((id, _), item)| {
            Ok(match item {
                Ok(v) => {
                    let e: Vec<f64> = serde_json::from_value(field(&v, "embedding", id, BackendKind::Embedder)?.clone())
                        .map_err(|e| Error::Backend(format!("embedding for {id}: {e}")))?;
                    if e.is_empty() || e.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Backend(format!("embedding for {id} is empty or non-finite")));
                    }
                    match dim {
                        Some(d) if d != e.len() => {
                            return Err(Error::Backend(format!(
                                "embedding dimension {} for {id} differs from {d}",
                                e.len()
                            )))
                        }
                        _ => dim = Some(e.len()),
                    }
                    EmbedResult {
                        id: id.clone(),
                        embedding: Some(e),
                        error: None,
                    }
                }
                Err(e) => EmbedResult {
                    id: id.clone(),
                    embedding: None,
                    error: Some(e),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthJob {
    pub id: String,
    pub text: String,
    pub reference_audio: Vec<PathBuf>,
    pub dialect: DialectRegion,
    pub out_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthResult {
    pub id: String,
    pub audio_path: Option<PathBuf>,
    pub error: Option<String>,
}

/// Synthesizes every job. Each job needs 1 to 5 reference clips.
pub fn synthesize(backend: &dyn Backend, jobs: &[SynthJob], opts: &BatchOptions) -> Result<Vec<SynthResult>> {
    expect_kind(backend, BackendKind::Tts)?;
    let mut requests = Vec::with_capacity(jobs.len());
    for j in jobs {
        if j.reference_audio.is_empty() || j.reference_audio.len() > 5 {
            return Err(Error::Precondition(format!(
                "{}: expected 1 to 5 reference clips, got {}",
                j.id,
                j.reference_audio.len()
            )));
        }
        if let Some(missing) = j.reference_audio.iter().find(|p| !p.is_file()) {
            return Err(Error::Precondition(format!(
                "{}: reference clip {} does not exist",
                j.id,
                missing.display()
            )));
        }
        requests.push(Request {
            id: j.id.clone(),
            kind: BackendKind::Tts,
            payload: serde_json::to_value(TtsPayload {
                text: j.text.clone(),
                reference_audio: j.reference_audio.iter().map(|p| path_str(p)).collect(),
                dialect: j.dialect,
                out_path: path_str(&j.out_path),
            })
            .expect("payload serializes"),
        });
    }
    let out = run_batch(backend, &requests, opts)?;
    jobs.iter()
        .zip(out)
        .map(|(j, item)| {
            Ok(match item {
                Ok(v) => {
                    let p = field(&v, "audio_path", &j.id, BackendKind::Tts)?
                        .as_str()
                        .map(PathBuf::from)
                        .ok_or_else(|| Error::Backend(format!("tts audio_path for {} is not a string", j.id)))?;
                    if p.is_file() {
                        SynthResult {
                            id: j.id.clone(),
                            audio_path: Some(p),
                            error: None,
                        }
                    } else {
                        SynthResult {
                            id: j.id.clone(),
                            audio_path: None,
                            error: Some(format!("{} was not written", p.display())),
                        }
                    }
                }
                Err(e) => SynthResult {
                    id: j.id.clone(),
                    audio_path: None,
                    error: Some(e),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizeResult {
    pub id: String,
    pub turns: Option<Vec<SpeakerTurn>>,
    pub rttm: Option<String>,
    pub error: Option<String>,
}

pub fn diarize(
    backend: &dyn Backend,
    items: &[(String, PathBuf)],
    min_speakers: u32,
    max_speakers: u32,
    opts: &BatchOptions,
) -> Result<Vec<DiarizeResult>> {
    expect_kind(backend, BackendKind::Diarizer)?;
    if min_speakers < 1 || min_speakers > max_speakers {
        return Err(Error::Precondition(format!(
            "invalid speaker range {min_speakers}..{max_speakers}"
        )));
    }
    let requests: Vec<Request> = items
        .iter()
        .map(|(id, path)| Request {
            id: id.clone(),
            kind: BackendKind::Diarizer,
            payload: serde_json::to_value(DiarizePayload {
                audio_path: path_str(path),
                min_speakers,
                max_speakers,
            })
            .expect("payload serializes"),
        })
        .collect();
    let out: Vec<ItemResult> = run_batch(backend, &requests, opts)?;
    items
        .iter()
        .zip(out)
        .map(|((id, _), item)| {
            Ok(match item {
                Ok(v) => {
                    let rttm = field(&v, "rttm", id, BackendKind::Diarizer)?
                        .as_str()
                        .ok_or_else(|| Error::Backend(format!("rttm for {id} is not a string")))?
                        .to_string();
                    let turns = parse_rttm(&rttm).map_err(|e| Error::Backend(format!("rttm for {id}: {e}")))?;
                    DiarizeResult {
                        id: id.clone(),
                        turns: Some(turns),
                        rttm: Some(rttm),
                        error: None,
                    }
                }
                Err(e) => DiarizeResult {
                    id: id.clone(),
                    turns: None,
                    rttm: None,
                    error: Some(e),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{self, AudioBuffer};
    use crate::backend::{BackendSpec, StubBackend};
    use crate::model::Millis;
    use crate::synth::{self, Sidecar, ToneTurn};

    fn stub(kind: BackendKind) -> StubBackend {
        StubBackend::new(BackendSpec::stub(kind))
    }

    #[test]
    fn transcripts_flag_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = Vec::new();
        for (i, text) in ["eins zwei", "   ", "drei"].iter().enumerate() {
            let p = dir.path().join(format!("{i}.wav"));
            audio::write_wav(&audio::tone(200.0, 0.2, 8_000, 0.5), &p).unwrap();
            Sidecar { text: Some(text.to_string()), ..Default::default() }.write(&p).unwrap();
            items.push((format!("seg{i}"), p));
        }
        items.push(("x".into(), items[0].1.clone()));
        let mut spec = BackendSpec::stub(BackendKind::Asr);
        spec.stub.fail_ids = vec!["x".into()];
        let out = transcribe(&StubBackend::new(spec), &items, &BatchOptions::default()).unwrap();
        assert_eq!(out[0].text.as_deref(), Some("eins zwei"));
        assert!(!out[0].failed);
        assert!(out[1].failed && out[1].text.is_none());
        assert!(out[3].failed);
        assert!(transcribe(&stub(BackendKind::Tts), &items, &BatchOptions::default()).is_err());
    }

    #[test]
    fn phonemize_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = Vec::new();
        let mut expected = Vec::new();
        for (i, d) in crate::model::DialectRegion::ALL.iter().enumerate() {
            let p = dir.path().join(format!("{i}.wav"));
            audio::write_wav(&audio::tone(synth::pitch_for_dialect(*d), 1.0, 8_000, 0.5), &p).unwrap();
            items.push((format!("i{i}"), p));
            expected.push(*d);
        }
        let b = {
            let mut s = BackendSpec::stub(BackendKind::Phonemizer);
            s.max_parallel = 4;
            StubBackend::new(s)
        };
        let out = phonemize(&b, &items, &BatchOptions::default()).unwrap();
        assert_eq!(out.len(), items.len());
        for ((r, (id, _)), d) in out.iter().zip(&items).zip(expected) {
            assert_eq!(&r.id, id);
            let toks = r.phonemes.as_ref().unwrap();
            assert_eq!(toks.len(), 8);
            let sig: Vec<&str> = synth::PHONEMES[d.index() * 3..d.index() * 3 + 3].to_vec();
            assert!(toks.iter().any(|t| sig.contains(&t.as_str())), "{d}: {toks:?}");
        }
    }

    #[test]
    fn synthesize_requires_reference_clips() {
        let dir = tempfile::tempdir().unwrap();
        let job = SynthJob {
            id: "a".into(),
            text: "Hallo".into(),
            reference_audio: vec![],
            dialect: DialectRegion::Bern,
            out_path: dir.path().join("a.wav"),
        };
        assert!(matches!(
            synthesize(&stub(BackendKind::Tts), &[job.clone()], &BatchOptions::default()),
            Err(Error::Precondition(_))
        ));
        let r = dir.path().join("r.wav");
        audio::write_wav(&audio::tone(200.0, 0.2, 8_000, 0.5), &r).unwrap();
        let jobs: Vec<SynthJob> = (0..3)
            .map(|i| SynthJob { id: format!("j{i}"), reference_audio: vec![r.clone()], out_path: dir.path().join(format!("o{i}.wav")), ..job.clone() })
            .collect();
        let out = synthesize(&stub(BackendKind::Tts), &jobs, &BatchOptions::default()).unwrap();
        for o in out {
            let p = o.audio_path.unwrap();
            assert!(audio::read_wav(&p).unwrap().duration_s() > 0.0);
        }
    }

    #[test]
    fn embed_rejects_mixed_dimensions() {
        struct Mixed(BackendSpec);
        impl Backend for Mixed {
            fn spec(&self) -> &BackendSpec {
                &self.0
            }
            fn call(&self, r: &Request) -> Result<ItemResult> {
                let dim = if r.id == "a" { 2 } else { 3 };
                Ok(Ok(serde_json::json!({ "embedding": vec![1.0; dim] })))
            }
        }
        let b = Mixed(BackendSpec::stub(BackendKind::Embedder));
        let items = vec![("a".to_string(), PathBuf::from("a")), ("b".to_string(), PathBuf::from("b"))];
        assert!(embed(&b, &items, &BatchOptions::default()).is_err());
    }

    #[test]
    fn diarizer_stub_recovers_interleaved_speakers() {
        let dir = tempfile::tempdir().unwrap();
        let turns = vec![
            ToneTurn { dialect: DialectRegion::Bern, start: Millis(0), end: Millis(2_000) },
            ToneTurn { dialect: DialectRegion::Zurich, start: Millis(2_600), end: Millis(5_000) },
            ToneTurn { dialect: DialectRegion::Bern, start: Millis(5_600), end: Millis(7_000) },
        ];
        let p = dir.path().join("ep.wav");
        audio::write_wav(&synth::render_episode(&turns, Millis(8_000), 16_000), &p).unwrap();
        let e = dir.path().join("empty.wav");
        audio::write_wav(&AudioBuffer::silence(0, 16_000).unwrap(), &e).unwrap();
        let out = diarize(&stub(BackendKind::Diarizer), &[("ep".into(), p), ("empty".into(), e)], 2, 6, &BatchOptions::default()).unwrap();
        assert_eq!(out[0].turns.as_ref().unwrap(), &synth::reference_turns(&turns));
        assert_eq!(out[1].turns.as_ref().unwrap(), &Vec::<SpeakerTurn>::new());
        assert_eq!(out[1].rttm.as_deref(), Some(""));
    }
}
