//! Checkpointed corpus pipeline: ingest, diarize, segment, transcribe,
//! dialect-id, stats.
//!
//! Each completed stage leaves a marker in `.stages/` recording the config
//! hash, a hash of the previous stage's marker and hashes of its outputs.
//! A stage whose marker still matches is skipped.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio;
use crate::backend::{self, open_backend, BackendKind, BatchOptions, PhonemeResult, TranscriptResult};
use crate::did::{read_labeled_corpus, NbModel};
use crate::error::{Error, IoContext, Result};
use crate::ingest::{self, read_episodes, read_overrides, sha256_file, CatalogSource, IngestOptions, RetryPolicy};
use crate::manifest::{read_manifest, write_manifest, Manifest, ManifestHeader};
use crate::model::{Episode, Segment};
use crate::segment::{parse_rttm, segment_episode, write_rttm, DiarizationResult};
use crate::stats::{corpus_stats, CorpusStats};

pub use config::{
    DiarizeSection, DidSection, IngestSection, PipelineConfig, SegmentSection, Stage, DEFAULT_CREATED_AT,
    WORKSPACE_ENV,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Halt with [`Error::Halted`] once this stage is complete.
    pub stop_after: Option<Stage>,
    /// Halt backend stages after this many new requests.
    pub stop_after_requests: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub config_hash: String,
    pub stats: Option<CorpusStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Marker {
    stage: Stage,
    config_hash: String,
    input: String,
    outputs: BTreeMap<String, String>,
}

/// Removes the lock file when dropped.
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn pid_alive(pid: u32) -> bool {
    Path::new("/proc").join(pid.to_string()).exists()
}

fn acquire_lock(ws: &Path) -> Result<LockGuard> {
    let path = ws.join(".lock");
    for _ in 0..2 {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                write!(f, "{}", std::process::id()).at(&path)?;
                return Ok(LockGuard(path));
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                match holder.trim().parse::<u32>() {
                    Ok(pid) if pid != std::process::id() && !pid_alive(pid) => {
                        warn!("removing stale lock of dead process {pid}");
                        fs::remove_file(&path).at(&path)?;
                    }
                    _ => return Err(Error::Locked(path)),
                }
            }
            Err(e) => return Err(Error::io(&path, e)),
        }
    }
    Err(Error::Locked(path))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn marker_path(ws: &Path, stage: Stage) -> PathBuf {
    ws.join(".stages").join(format!("{stage}.json"))
}

fn read_marker(ws: &Path, stage: Stage) -> Option<(Marker, String)> {
    let bytes = fs::read(marker_path(ws, stage)).ok()?;
    let marker = serde_json::from_slice(&bytes).ok()?;
    Some((marker, hex(&Sha256::digest(&bytes))))
}

fn marker_current(ws: &Path, marker: &Marker, config_hash: &str, input: &str) -> bool {
    marker.config_hash == config_hash
        && marker.input == input
        && marker
            .outputs
            .iter()
            .all(|(rel, sha)| sha256_file(&ws.join(rel)).is_ok_and(|s| s == *sha))
}

fn write_marker(ws: &Path, marker: &Marker) -> Result<()> {
    let path = marker_path(ws, marker.stage);
    let dir = path.parent().expect("marker dir");
    fs::create_dir_all(dir).at(dir)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(marker).expect("marker serializes") + "\n").at(&tmp)?;
    fs::rename(&tmp, &path).at(&path)
}

fn relative(ws: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(ws).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

struct StageCtx<'a> {
    cfg: &'a PipelineConfig,
    ws: &'a Path,
    header: ManifestHeader,
    /// Distinguishes completion logs of different configs and inputs.
    log_key: String,
    stop_after_requests: Option<usize>,
}

impl StageCtx<'_> {
    fn batch(&self, stage: Stage) -> BatchOptions {
        BatchOptions {
            log: Some(self.ws.join(stage.as_str()).join(format!("log-{}.jsonl", self.log_key))),
            stop_after: self.stop_after_requests,
        }
    }

    fn backend(&self, kind: BackendKind) -> Result<Box<dyn backend::Backend>> {
        let spec = self
            .cfg
            .backends
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("no {kind} backend configured")))?;
        open_backend(spec)
    }

    fn episodes(&self) -> Result<Vec<Episode>> {
        read_episodes(&self.ws.join("ingest").join("episodes.jsonl"))
    }

    fn episode_audio(&self, ep: &Episode) -> PathBuf {
        self.ws.join("ingest").join(&ep.audio_path)
    }
}

/// Runs the configured stages in order, skipping stages whose checkpoint
/// is current. Holds `<workspace>/.lock` for the duration.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let config_hash = cfg.hash()?;
    let ws = cfg.workspace.as_path();
    fs::create_dir_all(ws).at(ws)?;
    let _lock = acquire_lock(ws)?;

    let mut outcome = PipelineOutcome {
        ran: Vec::new(),
        skipped: Vec::new(),
        config_hash: config_hash.clone(),
        stats: None,
    };
    for &stage in &cfg.stages {
        let input = match stage.previous() {
            None => String::new(),
            Some(prev) => match read_marker(ws, prev) {
                Some((_, sha)) => sha,
                None => {
                    return Err(Error::Precondition(format!(
                        "stage {stage} needs stage {prev} to have completed in {}",
                        ws.display()
                    )))
                }
            },
        };
        let current = read_marker(ws, stage).is_some_and(|(m, _)| marker_current(ws, &m, &config_hash, &input));
        if current {
            info!("{stage}: up to date");
            outcome.skipped.push(stage);
        } else {
            info!("{stage}: running");
            let ctx = StageCtx {
                cfg,
                ws,
                header: ManifestHeader::new(cfg.created_at.clone(), config_hash.clone()),
                log_key: hex(&Sha256::digest(format!("{config_hash}\0{input}").as_bytes()))[..16].to_string(),
                stop_after_requests: opts.stop_after_requests,
            };
            let outputs = match stage {
                Stage::Ingest => run_ingest(&ctx)?,
                Stage::Diarize => run_diarize(&ctx)?,
                Stage::Segment => run_segment(&ctx)?,
                Stage::Transcribe => run_transcribe(&ctx)?,
                Stage::DialectId => run_dialect_id(&ctx)?,
                Stage::Stats => run_stats(&ctx)?,
            };
            let mut hashed = BTreeMap::new();
            for rel in outputs {
                let sha = sha256_file(&ws.join(&rel))?;
                hashed.insert(rel.to_string_lossy().into_owned(), sha);
            }
            write_marker(
                ws,
                &Marker {
                    stage,
                    config_hash: config_hash.clone(),
                    input,
                    outputs: hashed,
                },
            )?;
            outcome.ran.push(stage);
        }
        if stage == Stage::Stats {
            outcome.stats = Some(corpus_stats(&read_manifest(&ws.join(MANIFEST_FILE))?)?);
        }
        if opts.stop_after == Some(stage) {
            return Err(Error::Halted(stage.to_string()));
        }
    }
    Ok(outcome)
}

fn run_ingest(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let ing = &ctx.cfg.ingest;
    let overrides = read_overrides(ing.overrides.as_ref().expect("validated"))?;
    let source = match (&ing.local, &ing.endpoint) {
        (Some(dir), _) => CatalogSource::Local(dir.clone()),
        (None, Some(endpoint)) => CatalogSource::Http {
            endpoint: endpoint.clone(),
            auth: ing
                .auth_env
                .as_ref()
                .and_then(|v| std::env::var(v).ok())
                .unwrap_or_default(),
        },
        (None, None) => return Err(Error::Config("ingest has no catalog source".into())),
    };
    let out = ingest::ingest(&IngestOptions {
        source,
        overrides,
        dest: ctx.ws.join("ingest"),
        parallel: ing.parallel,
        retry: RetryPolicy {
            attempts: ing.retry_attempts,
            ..RetryPolicy::default()
        },
    })?;
    info!("ingest: {} podcasts, {} episodes", out.podcasts.len(), out.episodes.len());
    Ok(vec!["ingest/podcasts.json".into(), "ingest/episodes.jsonl".into()])
}

fn run_diarize(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let episodes = ctx.episodes()?;
    let backend = ctx.backend(BackendKind::Diarizer)?;
    let items: Vec<(String, PathBuf)> = episodes
        .iter()
        .map(|e| (e.episode_id.clone(), ctx.episode_audio(e)))
        .collect();
    let d = ctx.cfg.diarize;
    let results = backend::diarize(backend.as_ref(), &items, d.min_speakers, d.max_speakers, &ctx.batch(Stage::Diarize))?;
    let dir = ctx.ws.join("diarize");
    let mut failures = String::from("episode_id\treason\n");
    let mut outputs = Vec::new();
    for r in results {
        let rel = PathBuf::from("diarize").join(format!("{}.rttm", r.id));
        match r.turns {
            Some(turns) => {
                write_file(&ctx.ws.join(&rel), &write_rttm(&r.id, &turns))?;
                outputs.push(rel);
            }
            None => {
                let reason = r.error.unwrap_or_default();
                warn!("diarize: {} failed: {reason}", r.id);
                let _ = writeln!(failures, "{}\t{}", r.id, reason.replace(['\t', '\n'], " "));
                let _ = fs::remove_file(ctx.ws.join(&rel));
            }
        }
    }
    write_file(&dir.join("failures.tsv"), &failures)?;
    outputs.push("diarize/failures.tsv".into());
    Ok(outputs)
}

fn run_segment(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let episodes = ctx.episodes()?;
    let out_dir = ctx.ws.join("segments");
    if out_dir.exists() {
        fs::remove_dir_all(&out_dir).at(&out_dir)?;
    }
    fs::create_dir_all(&out_dir).at(&out_dir)?;
    let rules = ctx.cfg.segment.rules();
    let mut all = Vec::new();
    for ep in &episodes {
        let rttm = ctx.ws.join("diarize").join(format!("{}.rttm", ep.episode_id));
        if !rttm.is_file() {
            warn!("segment: {} has no diarization, skipped", ep.episode_id);
            continue;
        }
        let turns = parse_rttm(&fs::read_to_string(&rttm).at(&rttm)?)
            .map_err(|e| Error::parse(rttm.display().to_string(), 0, e.to_string()))?;
        let audio = audio::decode_any(&ctx.episode_audio(ep))?;
        let dr = DiarizationResult::new(ep.episode_id.clone(), turns);
        for mut s in segment_episode(ep, &dr, &audio, &out_dir, &rules)? {
            s.audio_path = relative(ctx.ws, &s.audio_path);
            all.push(s);
        }
    }
    info!("segment: {} segments from {} episodes", all.len(), episodes.len());
    write_manifest(&Manifest::new(ctx.header.clone(), all)?, &out_dir.join(MANIFEST_FILE))?;
    Ok(vec![PathBuf::from("segments").join(MANIFEST_FILE)])
}

fn run_transcribe(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let segments = read_manifest(&ctx.ws.join("segments").join(MANIFEST_FILE))?.into_segments();
    let backend = ctx.backend(BackendKind::Asr)?;
    let items: Vec<(String, PathBuf)> = segments
        .iter()
        .map(|s| (s.segment_id.clone(), ctx.ws.join(&s.audio_path)))
        .collect();
    let results = backend::transcribe(backend.as_ref(), &items, &ctx.batch(Stage::Transcribe))?;
    let (kept, failures) = apply_transcripts(segments, results)?;
    let dir = ctx.ws.join("transcribe");
    write_file(&dir.join("failures.tsv"), &failures)?;
    write_manifest(&Manifest::new(ctx.header.clone(), kept)?, &dir.join(MANIFEST_FILE))?;
    Ok(vec![
        PathBuf::from("transcribe").join(MANIFEST_FILE),
        "transcribe/failures.tsv".into(),
    ])
}

/// Sets each segment's transcript from `results` (parallel to `segments`)
/// and drops segments whose transcription failed. Returns the kept
/// segments and a `segment_id, reason` failure table.
pub fn apply_transcripts(segments: Vec<Segment>, results: Vec<TranscriptResult>) -> Result<(Vec<Segment>, String)> {
    if results.len() != segments.len() {
        return Err(Error::Precondition(format!(
            "{} segments but {} transcription results",
            segments.len(),
            results.len()
        )));
    }
    let mut failures = String::from("segment_id\treason\n");
    let mut kept = Vec::with_capacity(segments.len());
    for (mut s, r) in segments.into_iter().zip(results) {
        match r.text {
            Some(text) => {
                s.transcript = Some(text);
                kept.push(s);
            }
            None => {
                let reason = r.reason.unwrap_or_default();
                let _ = writeln!(failures, "{}\t{}", s.segment_id, reason.replace(['\t', '\n'], " "));
            }
        }
    }
    let failed = failures.lines().count() - 1;
    if failed > 0 {
        warn!("transcribe: removed {failed} segments without a transcript");
    }
    Ok((kept, failures))
}

fn load_did_model(ctx: &StageCtx) -> Result<NbModel> {
    let did = &ctx.cfg.did;
    match (&did.model, &did.train_corpus) {
        (Some(path), _) => NbModel::load(path),
        (None, Some(corpus)) => {
            let model = NbModel::train(&read_labeled_corpus(corpus)?, None, &did.nb_config())?;
            model.save(&ctx.ws.join("did").join("model.json"))?;
            Ok(model)
        }
        (None, None) => Err(Error::Config("did has no model source".into())),
    }
}

fn run_dialect_id(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let segments = read_manifest(&ctx.ws.join("transcribe").join(MANIFEST_FILE))?.into_segments();
    let dir = ctx.ws.join("did");
    fs::create_dir_all(&dir).at(&dir)?;
    let model = load_did_model(ctx)?;
    let backend = ctx.backend(BackendKind::Phonemizer)?;
    let items: Vec<(String, PathBuf)> = segments
        .iter()
        .map(|s| (s.segment_id.clone(), ctx.ws.join(&s.audio_path)))
        .collect();
    let phonemes = backend::phonemize(backend.as_ref(), &items, &ctx.batch(Stage::DialectId))?;
    let labels = label_speakers(&model, segments, &phonemes, ctx.cfg.did.min_speaker_s)?;
    write_file(&dir.join("speakers.tsv"), &labels.speakers_tsv)?;
    write_file(&dir.join("failures.tsv"), &labels.failures_tsv)?;
    write_manifest(&Manifest::new(ctx.header.clone(), labels.segments)?, &ctx.ws.join(MANIFEST_FILE))?;
    Ok(vec![
        PathBuf::from(MANIFEST_FILE),
        "did/speakers.tsv".into(),
        "did/failures.tsv".into(),
    ])
}

/// Speaker-level dialect labels for a set of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLabels {
    /// Input segments with `dialect` set; segments of speakers that could
    /// not be classified are dropped.
    pub segments: Vec<Segment>,
    /// `episode_id, speaker_tag, dialect, segments, total_s, low_confidence, posterior`
    pub speakers_tsv: String,
    pub failures_tsv: String,
}

/// Classifies every (episode, speaker) from the concatenated phonemes of
/// their segments and labels all of that speaker's segments with the
/// result. `phonemes` is parallel to `segments`.
pub fn label_speakers(
    model: &NbModel,
    segments: Vec<Segment>,
    phonemes: &[PhonemeResult],
    min_speaker_s: f64,
) -> Result<SpeakerLabels> {
    if phonemes.len() != segments.len() {
        return Err(Error::Precondition(format!(
            "{} segments but {} phoneme results",
            segments.len(),
            phonemes.len()
        )));
    }
    // manifest order is (episode, start), so each speaker's segments stay in time order
    let mut speakers: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        speakers
            .entry((s.episode_id.clone(), s.speaker_tag.clone()))
            .or_default()
            .push(i);
    }
    let mut labels = vec![None; segments.len()];
    let mut table = String::from("episode_id\tspeaker_tag\tdialect\tsegments\ttotal_s\tlow_confidence\tposterior\n");
    let mut failures = String::from("episode_id\tspeaker_tag\treason\n");
    for ((ep, tag), idx) in &speakers {
        let usable: Vec<usize> = idx.iter().copied().filter(|i| phonemes[*i].phonemes.is_some()).collect();
        if usable.is_empty() {
            let _ = writeln!(failures, "{ep}\t{tag}\tno segment could be phonemized");
            continue;
        }
        let seqs: Vec<Vec<String>> = usable
            .iter()
            .map(|i| phonemes[*i].phonemes.clone().expect("filtered"))
            .collect();
        let durations: Vec<f64> = usable.iter().map(|i| segments[*i].duration().as_secs_f64()).collect();
        let sp = model.classify_speaker(&seqs, &durations, min_speaker_s)?;
        let class = sp.prediction.class;
        for i in idx {
            labels[*i] = Some(class);
        }
        let _ = writeln!(
            table,
            "{ep}\t{tag}\t{class}\t{}\t{:.3}\t{}\t{:.6}",
            idx.len(),
            sp.total_s,
            sp.low_confidence,
            sp.prediction.posterior(class).unwrap_or(0.0)
        );
    }
    let labeled: Vec<Segment> = segments
        .into_iter()
        .zip(labels)
        .filter_map(|(mut s, l)| {
            s.dialect = Some(l?);
            Some(s)
        })
        .collect();
    Ok(SpeakerLabels {
        segments: labeled,
        speakers_tsv: table,
        failures_tsv: failures,
    })
}

fn run_stats(ctx: &StageCtx) -> Result<Vec<PathBuf>> {
    let stats = corpus_stats(&read_manifest(&ctx.ws.join(MANIFEST_FILE))?)?;
    let dir = ctx.ws.join("stats");
    write_file(&dir.join("stats.txt"), &stats.render_text())?;
    write_file(&dir.join("stats.csv"), &stats.render_csv())?;
    Ok(vec!["stats/stats.txt".into(), "stats/stats.csv".into()])
}
