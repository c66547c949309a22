use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Subcommand};
use dialektpipe::audio;
use dialektpipe::backend::{self, open_backend, read_backend_specs, Backend, BackendKind, BatchOptions, BACKEND_CONF_ENV};
use dialektpipe::did::{self, read_labeled_corpus, NbConfig, NbModel};
use dialektpipe::ingest::{self, read_episodes, read_overrides, CatalogSource, IngestOptions, RetryPolicy};
use dialektpipe::manifest::{read_manifest, write_manifest, Manifest, ManifestHeader};
use dialektpipe::model::Millis;
use dialektpipe::pipeline::{apply_transcripts, label_speakers, DEFAULT_CREATED_AT, MANIFEST_FILE};
use dialektpipe::segment::{parse_rttm, segment_episode, write_rttm, DiarizationResult, SegmentRules};
use dialektpipe::stats::corpus_stats;
use dialektpipe::Error;

/// Backend selection shared by verbs that call models.
#[derive(Args, Clone)]
pub struct BackendArgs {
    /// TOML file with one table per backend kind, e.g. `[asr]`.
    #[arg(long = "backends", env = BACKEND_CONF_ENV)]
    pub conf: Option<PathBuf>,
}

impl BackendArgs {
    pub fn open(&self, kind: BackendKind) -> dialektpipe::Result<Box<dyn Backend>> {
        let path = self.conf.as_ref().ok_or_else(|| {
            Error::Config(format!("no {kind} backend: pass --backends or set {BACKEND_CONF_ENV}"))
        })?;
        let specs = read_backend_specs(path)?;
        let spec = specs
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("{}: no [{kind}] table", path.display())))?;
        open_backend(spec)
    }
}

fn write_text(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn parent_dir(file: &Path) -> PathBuf {
    file.parent().unwrap_or(Path::new("")).to_path_buf()
}

/// Re-expresses `path`, relative to `from`, relative to `to` when it lies
/// below `to`; absolute otherwise.
fn rebase(path: &Path, from: &Path, to: &Path) -> PathBuf {
    let abs = std::path::absolute(from.join(path)).unwrap_or_else(|_| from.join(path));
    let to = std::path::absolute(to).unwrap_or_else(|_| to.to_path_buf());
    abs.strip_prefix(&to).map(Path::to_path_buf).unwrap_or(abs)
}

fn read_manifest_resolved(path: &Path) -> anyhow::Result<(Manifest, PathBuf)> {
    Ok((read_manifest(path)?, parent_dir(path)))
}

#[derive(Args)]
pub struct IngestArgs {
    /// Catalog endpoint (HTTP GET returning the catalog JSON array).
    #[arg(long, conflicts_with = "local", required_unless_present = "local")]
    endpoint: Option<String>,
    /// Directory with `catalog.json` and the media files, instead of HTTP.
    #[arg(long)]
    local: Option<PathBuf>,
    /// `podcast_id<TAB>language_class` lines.
    #[arg(long)]
    overrides: PathBuf,
    #[arg(long)]
    dest: PathBuf,
    /// Environment variable holding the bearer token for the endpoint.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long, default_value_t = ingest::DEFAULT_PARALLEL_DOWNLOADS)]
    parallel: usize,
    #[arg(long, default_value_t = 3)]
    retry_attempts: u32,
}

pub fn ingest(a: IngestArgs) -> anyhow::Result<()> {
    let source = match (a.local, a.endpoint) {
        (Some(dir), _) => CatalogSource::Local(dir),
        (None, Some(endpoint)) => CatalogSource::Http {
            endpoint,
            auth: a.auth_env.and_then(|v| std::env::var(v).ok()).unwrap_or_default(),
        },
        (None, None) => unreachable!("clap requires one source"),
    };
    let out = ingest::ingest(&IngestOptions {
        source,
        overrides: read_overrides(&a.overrides)?,
        dest: a.dest,
        parallel: a.parallel,
        retry: RetryPolicy {
            attempts: a.retry_attempts,
            ..RetryPolicy::default()
        },
    })?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    for (class, n) in ingest::class_counts(&out.podcasts) {
        println!("{}\t{n}", class.as_str());
    }
    println!("episodes\t{}", out.episodes.len());
    Ok(())
}

#[derive(Args)]
pub struct DiarizeArgs {
    /// `episodes.jsonl` written by ingest.
    #[arg(long)]
    episodes: PathBuf,
    /// Directory episode audio paths are relative to; defaults to the
    /// directory of `--episodes`.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_speakers: u32,
    #[arg(long, default_value_t = 6)]
    max_speakers: u32,
    #[command(flatten)]
    backends: BackendArgs,
}

pub fn diarize(a: DiarizeArgs) -> anyhow::Result<()> {
    let episodes = read_episodes(&a.episodes)?;
    let audio_dir = a.audio_dir.unwrap_or_else(|| parent_dir(&a.episodes));
    let backend = a.backends.open(BackendKind::Diarizer)?;
    let items: Vec<(String, PathBuf)> = episodes
        .iter()
        .map(|e| (e.episode_id.clone(), audio_dir.join(&e.audio_path)))
        .collect();
    create_dir(&a.out)?;
    let results = backend::diarize(
        backend.as_ref(),
        &items,
        a.min_speakers,
        a.max_speakers,
        &BatchOptions::with_log(a.out.join("log.jsonl")),
    )?;
    let mut failures = String::from("episode_id\treason\n");
    let mut done = 0;
    for r in results {
        match r.turns {
            Some(turns) => {
                write_text(&a.out.join(format!("{}.rttm", r.id)), &write_rttm(&r.id, &turns))?;
                done += 1;
            }
            None => {
                let reason = r.error.unwrap_or_default().replace(['\t', '\n'], " ");
                let _ = writeln!(failures, "{}\t{reason}", r.id);
            }
        }
    }
    write_text(&a.out.join("failures.tsv"), &failures)?;
    println!("diarized {done} of {} episodes", episodes.len());
    Ok(())
}

#[derive(Args)]
pub struct SegmentArgs {
    /// `episodes.jsonl` written by ingest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    rttm_dir: PathBuf,
    /// Directory episode audio paths are relative to; defaults to the
    /// directory of `--manifest`.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    min_s: f64,
    #[arg(long, default_value_t = 15.0)]
    max_s: f64,
    #[arg(long, default_value_t = 2.0)]
    min_tail_s: f64,
    #[arg(long, default_value = DEFAULT_CREATED_AT)]
    created_at: String,
}

pub fn segment(a: SegmentArgs) -> anyhow::Result<()> {
    let rules = SegmentRules {
        min: Millis::from_secs_f64(a.min_s),
        max: Millis::from_secs_f64(a.max_s),
        min_tail: Millis::from_secs_f64(a.min_tail_s),
    };
    rules.validate()?;
    let episodes = read_episodes(&a.manifest)?;
    let audio_dir = a.audio_dir.unwrap_or_else(|| parent_dir(&a.manifest));
    create_dir(&a.out)?;
    let mut all = Vec::new();
    for ep in &episodes {
        let rttm = a.rttm_dir.join(format!("{}.rttm", ep.episode_id));
        if !rttm.is_file() {
            log::warn!("{}: no RTTM, skipped", ep.episode_id);
            continue;
        }
        let text = fs::read_to_string(&rttm).map_err(|e| Error::io(&rttm, e))?;
        let turns = parse_rttm(&text).with_context(|| rttm.display().to_string())?;
        let buffer = audio::decode_any(&audio_dir.join(&ep.audio_path))?;
        let dr = DiarizationResult::new(ep.episode_id.clone(), turns);
        for mut s in segment_episode(ep, &dr, &buffer, &a.out, &rules)? {
            s.audio_path = rebase(&s.audio_path, Path::new(""), &a.out);
            all.push(s);
        }
    }
    let hash = format!("segment:{}:{}:{}", rules.min, rules.max, rules.min_tail);
    let n = all.len();
    write_manifest(&Manifest::new(ManifestHeader::new(a.created_at, hash), all)?, &a.out.join(MANIFEST_FILE))?;
    println!("{n} segments from {} episodes", episodes.len());
    Ok(())
}

#[derive(Args)]
pub struct TranscribeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Writes `manifest.jsonl`, `failures.tsv` and the completion log here.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backends: BackendArgs,
}

pub fn transcribe(a: TranscribeArgs) -> anyhow::Result<()> {
    let (manifest, base) = read_manifest_resolved(&a.manifest)?;
    let header = manifest.header.clone();
    let mut segments = manifest.into_segments();
    let backend = a.backends.open(BackendKind::Asr)?;
    let items: Vec<(String, PathBuf)> = segments
        .iter()
        .map(|s| (s.segment_id.clone(), base.join(&s.audio_path)))
        .collect();
    create_dir(&a.out)?;
    let results = backend::transcribe(backend.as_ref(), &items, &BatchOptions::with_log(a.out.join("log.jsonl")))?;
    for s in &mut segments {
        s.audio_path = rebase(&s.audio_path, &base, &a.out);
    }
    let total = segments.len();
    let (kept, failures) = apply_transcripts(segments, results)?;
    let n = kept.len();
    write_text(&a.out.join("failures.tsv"), &failures)?;
    write_manifest(&Manifest::new(header, kept)?, &a.out.join(MANIFEST_FILE))?;
    println!("transcribed {n} of {total} segments");
    Ok(())
}

#[derive(Subcommand)]
pub enum DidCommand {
    /// Train on a `label<TAB>phoneme tokens` corpus.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Classify phoneme sequences, one per line, from a file or stdin.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Macro F1 and confusion matrix on a labeled corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Label every segment of a manifest with its speaker's dialect.
    Label {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Writes `manifest.jsonl`, `speakers.tsv`, `failures.tsv` and the
        /// completion log here.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = did::DEFAULT_MIN_SPEAKER_SECONDS)]
        min_speaker_s: f64,
        #[command(flatten)]
        backends: BackendArgs,
    },
}

pub fn did(cmd: DidCommand) -> anyhow::Result<()> {
    match cmd {
        DidCommand::Train {
            model,
            corpus,
            orders,
            alpha,
        } => {
            let data = read_labeled_corpus(&corpus)?;
            let m = NbModel::train(&data, None, &NbConfig { orders, alpha })?;
            m.save(&model)?;
            println!("{} classes, {} n-grams, {} examples", m.classes.len(), m.vocab.len(), data.len());
        }
        DidCommand::Predict { model, input } => {
            let m = NbModel::load(&model)?;
            let lines: Vec<String> = match &input {
                Some(p) => fs::read_to_string(p)
                    .map_err(|e| Error::io(p, e))?
                    .lines()
                    .map(str::to_string)
                    .collect(),
                None => io::stdin().lock().lines().collect::<io::Result<_>>()?,
            };
            for line in lines.iter().filter(|l| !l.trim().is_empty()) {
                let p = m.predict(&did::tokenize(line));
                println!("{}\t{:.6}", p.class, p.posterior(p.class).unwrap_or(0.0));
            }
        }
        DidCommand::Eval { model, corpus } => {
            let m = NbModel::load(&model)?;
            let ev = m.evaluate(&read_labeled_corpus(&corpus)?)?;
            println!("macro_f1\t{:.4}", ev.macro_f1);
            for (class, f1) in &ev.per_class_f1 {
                println!("f1\t{class}\t{f1:.4}");
            }
            print!("{}", ev.confusion.render());
        }
        DidCommand::Label {
            model,
            manifest,
            out,
            min_speaker_s,
            backends,
        } => {
            let m = NbModel::load(&model)?;
            let (manifest, base) = read_manifest_resolved(&manifest)?;
            let header = manifest.header.clone();
            let mut segments = manifest.into_segments();
            let backend = backends.open(BackendKind::Phonemizer)?;
            let items: Vec<(String, PathBuf)> = segments
                .iter()
                .map(|s| (s.segment_id.clone(), base.join(&s.audio_path)))
                .collect();
            create_dir(&out)?;
            let phonemes = backend::phonemize(backend.as_ref(), &items, &BatchOptions::with_log(out.join("log.jsonl")))?;
            for s in &mut segments {
                s.audio_path = rebase(&s.audio_path, &base, &out);
            }
            let labels = label_speakers(&m, segments, &phonemes, min_speaker_s)?;
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for s in &labels.segments {
                *counts.entry(s.dialect.expect("labeled").to_string()).or_default() += 1;
            }
            write_text(&out.join("speakers.tsv"), &labels.speakers_tsv)?;
            write_text(&out.join("failures.tsv"), &labels.failures_tsv)?;
            write_manifest(&Manifest::new(header, labels.segments)?, &out.join(MANIFEST_FILE))?;
            for (d, n) in counts {
                println!("{d}\t{n}");
            }
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let stats = corpus_stats(&read_manifest(&a.manifest)?)?;
    if let Some(p) = &a.csv {
        write_text(p, &stats.render_csv())?;
    }
    print!("{}", stats.render_text());
    Ok(())
}
