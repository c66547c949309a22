//! Podcast catalog access, manual language classification and resumable
//! episode download.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ureq::Agent;

use crate::audio;
use crate::error::{Error, IoContext, Result};
use crate::model::{Episode, LanguageClass};

pub const DEFAULT_PARALLEL_DOWNLOADS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRef {
    pub episode_id: String,
    pub media_url: String,
    /// Expected hex SHA-256 of the media bytes, when the catalog provides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodcastMeta {
    pub podcast_id: String,
    pub title: String,
    pub episode_count: u64,
    #[serde(default = "excluded")]
    pub language_class: LanguageClass,
    #[serde(default)]
    pub episodes: Vec<EpisodeRef>,
}

fn excluded() -> LanguageClass {
    LanguageClass::Excluded
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogEntry {
    podcast_id: String,
    title: String,
    episode_count: u64,
    #[serde(default)]
    episodes: Vec<EpisodeRef>,
}

/// Bounded retries with a fixed backoff schedule. After failed attempt `i`
/// the policy waits `backoff[min(i, len - 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: [1, 4, 16].into_iter().map(Duration::from_secs).collect(),
        }
    }
}

enum Attempt<T> {
    Done(T),
    Retry(Error),
    Fatal(Error),
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            backoff: vec![Duration::ZERO],
        }
    }

    fn run<T>(&self, what: &str, mut f: impl FnMut() -> Attempt<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        for i in 0..attempts {
            match f() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if i + 1 == attempts => {
                    return Err(Error::Http(format!("{what}: giving up after {attempts} attempts: {e}")))
                }
                Attempt::Retry(e) => {
                    log::warn!("{what}: attempt {} failed: {e}", i + 1);
                    if let Some(d) = self
                        .backoff
                        .get((i as usize).min(self.backoff.len().saturating_sub(1)))
                    {
                        thread::sleep(*d);
                    }
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

/// Parses a catalog document: a JSON array of podcasts with their episodes.
/// Entries are returned sorted by podcast_id, all classified as excluded.
pub fn parse_catalog(text: &str) -> Result<Vec<PodcastMeta>> {
    let entries: Vec<CatalogEntry> =
        serde_json::from_str(text).map_err(|e| Error::invalid("catalog", e.to_string()))?;
    let mut podcasts = HashSet::new();
    let mut episodes = HashSet::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if e.podcast_id.is_empty() {
            return Err(Error::invalid("catalog", "empty podcast_id"));
        }
        if !podcasts.insert(e.podcast_id.clone()) {
            return Err(Error::invalid(
                "catalog",
                format!("duplicate podcast_id {:?}", e.podcast_id),
            ));
        }
        for ep in &e.episodes {
            if !valid_id(&ep.episode_id) {
                return Err(Error::invalid(
                    "catalog",
                    format!("episode_id {:?} must be non-empty [A-Za-z0-9._-]", ep.episode_id),
                ));
            }
            if !episodes.insert(ep.episode_id.clone()) {
                return Err(Error::invalid(
                    "catalog",
                    format!("duplicate episode_id {:?}", ep.episode_id),
                ));
            }
        }
        out.push(PodcastMeta {
            podcast_id: e.podcast_id,
            title: e.title,
            episode_count: e.episode_count,
            language_class: LanguageClass::Excluded,
            episodes: e.episodes,
        });
    }
    out.sort_by(|a, b| a.podcast_id.cmp(&b.podcast_id));
    Ok(out)
}

fn agent() -> Agent {
    Agent::config_builder()
        .timeout_connect(Some(Duration::from_secs(30)))
        .timeout_recv_response(Some(Duration::from_secs(60)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn retryable(status: u16) -> bool {
    status == 429 || status >= 500
}

/// GETs the catalog with bearer authentication, retrying transient errors.
pub fn fetch_catalog(endpoint: &str, auth: &str, retry: &RetryPolicy) -> Result<Vec<PodcastMeta>> {
    let agent = agent();
    let body = retry.run(endpoint, || {
        let mut req = agent.get(endpoint);
        if !auth.is_empty() {
            req = req.header("Authorization", format!("Bearer {auth}"));
        }
        match req.call() {
            Err(e) => Attempt::Retry(Error::Http(e.to_string())),
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 200 {
                    match resp.body_mut().read_to_string() {
                        Ok(s) => Attempt::Done(s),
                        Err(e) => Attempt::Retry(Error::Http(e.to_string())),
                    }
                } else if retryable(status) {
                    Attempt::Retry(Error::Http(format!("status {status}")))
                } else {
                    Attempt::Fatal(Error::Http(format!("GET {endpoint}: status {status}")))
                }
            }
        }
    })?;
    parse_catalog(&body)
}

pub fn read_local_catalog(dir: &Path) -> Result<Vec<PodcastMeta>> {
    let p = dir.join("catalog.json");
    parse_catalog(&fs::read_to_string(&p).at(&p)?)
}

/// Reads `podcast_id<TAB>language_class` lines; `#` starts a comment.
pub fn read_overrides(path: &Path) -> Result<BTreeMap<String, LanguageClass>> {
    let file = File::open(path).at(path)?;
    let name = path.display().to_string();
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (id, class) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(&name, i + 1, "expected podcast_id<TAB>language_class"))?;
        let class: LanguageClass = class
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(&name, i + 1, e.to_string()))?;
        if out.insert(id.trim().to_string(), class).is_some() {
            log::warn!("{name}:{}: podcast {} classified twice, last entry wins", i + 1, id.trim());
        }
    }
    Ok(out)
}

/// Applies manual classifications. Unknown ids produce warnings, returned
/// and logged.
pub fn apply_overrides(
    catalog: &[PodcastMeta],
    overrides: &BTreeMap<String, LanguageClass>,
) -> (Vec<PodcastMeta>, Vec<String>) {
    let known: HashSet<&str> = catalog.iter().map(|p| p.podcast_id.as_str()).collect();
    let warnings: Vec<String> = overrides
        .keys()
        .filter(|k| !known.contains(k.as_str()))
        .map(|k| format!("override for unknown podcast {k:?} ignored"))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    let out = catalog
        .iter()
        .map(|p| PodcastMeta {
            language_class: overrides.get(&p.podcast_id).copied().unwrap_or(LanguageClass::Excluded),
            ..p.clone()
        })
        .collect();
    (out, warnings)
}

pub fn class_counts(catalog: &[PodcastMeta]) -> BTreeMap<LanguageClass, usize> {
    let mut out = BTreeMap::new();
    for p in catalog {
        *out.entry(p.language_class).or_insert(0) += 1;
    }
    out
}

/// Where episode media comes from.
#[derive(Debug, Clone)]
pub enum MediaSource {
    Http { auth: String },
    /// Relative media URLs resolve against this directory.
    Local { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DownloadState {
    media_url: String,
    bytes: u64,
    sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).at(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub struct Downloader {
    source: MediaSource,
    retry: RetryPolicy,
    agent: Agent,
}

impl Downloader {
    pub fn new(source: MediaSource, retry: RetryPolicy) -> Self {
        Downloader {
            source,
            retry,
            agent: agent(),
        }
    }

    /// Fetches `url` into `part`, resuming from its current length.
    fn fetch(&self, url: &str, part: &Path) -> Result<()> {
        match &self.source {
            MediaSource::Local { dir } => {
                let src = dir.join(url.strip_prefix("file://").unwrap_or(url));
                fs::copy(&src, part).at(&src)?;
                Ok(())
            }
            MediaSource::Http { auth } => self.retry.run(url, || {
                let offset = fs::metadata(part).map(|m| m.len()).unwrap_or(0);
                let mut req = self.agent.get(url);
                if !auth.is_empty() {
                    req = req.header("Authorization", format!("Bearer {auth}"));
                }
                if offset > 0 {
                    req = req.header("Range", format!("bytes={offset}-"));
                }
                let mut resp = match req.call() {
                    Ok(r) => r,
                    Err(e) => return Attempt::Retry(Error::Http(e.to_string())),
                };
                let status = resp.status().as_u16();
                let append = match status {
                    206 => true,
                    200 => false,
                    416 if offset > 0 => return Attempt::Done(()),
                    s if retryable(s) => return Attempt::Retry(Error::Http(format!("status {s}"))),
                    s => return Attempt::Fatal(Error::Http(format!("GET {url}: status {s}"))),
                };
                let file = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(part);
                let mut file = match file {
                    Ok(f) => f,
                    Err(e) => return Attempt::Fatal(Error::io(part, e)),
                };
                let copied = io::copy(&mut resp.body_mut().as_reader(), &mut file).and_then(|_| file.flush());
                match copied {
                    Ok(()) => Attempt::Done(()),
                    Err(e) => Attempt::Retry(Error::Http(format!("transfer interrupted: {e}"))),
                }
            }),
        }
    }

    /// Downloads one episode into `dest/raw`, normalizes it to a mono
    /// 16-bit WAV under `dest/audio`, and returns the episode with
    /// `audio_path` relative to `dest`. A completed download whose checksum
    /// still matches is not fetched again.
    pub fn download_episode(&self, podcast: &PodcastMeta, ep: &EpisodeRef, dest: &Path) -> Result<Episode> {
        if !valid_id(&ep.episode_id) {
            return Err(Error::invalid("episode", format!("bad episode_id {:?}", ep.episode_id)));
        }
        let raw_dir = dest.join("raw");
        let audio_dir = dest.join("audio");
        fs::create_dir_all(&raw_dir).at(&raw_dir)?;
        fs::create_dir_all(&audio_dir).at(&audio_dir)?;
        let raw = raw_dir.join(format!("{}.src", ep.episode_id));
        let part = raw_dir.join(format!("{}.part", ep.episode_id));
        let state_path = raw_dir.join(format!("{}.state.json", ep.episode_id));
        let rel_wav = PathBuf::from("audio").join(format!("{}.wav", ep.episode_id));
        let wav = dest.join(&rel_wav);

        let state: Option<DownloadState> = fs::read_to_string(&state_path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        if let Some(st) = &state {
            let expected_ok = ep.sha256.as_ref().is_none_or(|x| x.eq_ignore_ascii_case(&st.sha256));
            if st.media_url == ep.media_url && expected_ok && raw.is_file() && wav.is_file() && sha256_file(&raw)? == st.sha256 {
                let buf = audio::read_wav(&wav)?;
                return self.episode(podcast, ep, rel_wav, &buf, st.sha256.clone());
            }
        }

        let mut sha = String::new();
        for round in 0..2 {
            if round > 0 {
                log::warn!("{}: checksum mismatch, downloading again", ep.episode_id);
                let _ = fs::remove_file(&part);
            }
            self.fetch(&ep.media_url, &part)?;
            sha = sha256_file(&part)?;
            if ep.sha256.as_ref().is_none_or(|x| x.eq_ignore_ascii_case(&sha)) {
                break;
            }
            if round == 1 {
                let _ = fs::remove_file(&part);
                return Err(Error::invalid(
                    "checksum",
                    format!(
                        "{}: expected sha256 {}, got {sha}",
                        ep.episode_id,
                        ep.sha256.as_deref().unwrap_or_default()
                    ),
                ));
            }
        }
        fs::rename(&part, &raw).at(&raw)?;

        let buf = audio::decode_any(&raw)?;
        let tmp = crate::manifest::tmp_sibling(&wav);
        audio::write_wav(&buf, &tmp)?;
        fs::rename(&tmp, &wav).at(&wav)?;
        let bytes = fs::metadata(&raw).at(&raw)?.len();
        let st = DownloadState {
            media_url: ep.media_url.clone(),
            bytes,
            sha256: sha.clone(),
        };
        fs::write(&state_path, serde_json::to_string(&st).expect("state serializes")).at(&state_path)?;
        let buf = audio::read_wav(&wav)?;
        self.episode(podcast, ep, rel_wav, &buf, sha)
    }

    fn episode(
        &self,
        podcast: &PodcastMeta,
        ep: &EpisodeRef,
        audio_path: PathBuf,
        buf: &audio::AudioBuffer,
        sha: String,
    ) -> Result<Episode> {
        let e = Episode {
            episode_id: ep.episode_id.clone(),
            podcast_id: podcast.podcast_id.clone(),
            audio_path,
            duration_s: buf.duration_s(),
            sample_rate_hz: buf.sample_rate_hz(),
            language_class: podcast.language_class,
            checksum: Some(sha),
        };
        e.validate()?;
        Ok(e)
    }

    /// Downloads every episode of every classified podcast with at most
    /// `parallel` transfers in flight. Output is sorted by
    /// (podcast_id, episode_id).
    pub fn download_all(&self, catalog: &[PodcastMeta], dest: &Path, parallel: usize) -> Result<Vec<Episode>> {
        let jobs: Vec<(&PodcastMeta, &EpisodeRef)> = catalog
            .iter()
            .filter(|p| p.language_class != LanguageClass::Excluded)
            .flat_map(|p| p.episodes.iter().map(move |e| (p, e)))
            .collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Episode>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        thread::scope(|s| {
            for _ in 0..parallel.max(1).min(jobs.len()) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some((p, e)) = jobs.get(k) else { break };
                    let r = self.download_episode(p, e, dest);
                    results.lock().expect("results lock")[k] = Some(r);
                });
            }
        });
        let mut episodes = Vec::with_capacity(jobs.len());
        for r in results.into_inner().expect("results lock") {
            episodes.push(r.expect("every job ran")?);
        }
        episodes.sort_by(|a, b| (&a.podcast_id, &a.episode_id).cmp(&(&b.podcast_id, &b.episode_id)));
        Ok(episodes)
    }
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut s = String::new();
    for e in episodes {
        s += &serde_json::to_string(e).expect("episode serializes");
        s.push('\n');
    }
    let tmp = crate::manifest::tmp_sibling(path);
    fs::write(&tmp, s).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let file = File::open(path).at(path)?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Episode = serde_json::from_str(&line).map_err(|err| Error::parse(&name, i + 1, err.to_string()))?;
        e.validate().map_err(|err| Error::parse(&name, i + 1, err.to_string()))?;
        if !ids.insert(e.episode_id.clone()) {
            return Err(Error::parse(&name, i + 1, format!("duplicate episode_id {}", e.episode_id)));
        }
        out.push(e);
    }
    Ok(out)
}

/// Catalog location for [`ingest`].
#[derive(Debug, Clone)]
pub enum CatalogSource {
    Http { endpoint: String, auth: String },
    Local(PathBuf),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub source: CatalogSource,
    pub overrides: BTreeMap<String, LanguageClass>,
    pub dest: PathBuf,
    pub parallel: usize,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub podcasts: Vec<PodcastMeta>,
    pub episodes: Vec<Episode>,
    pub warnings: Vec<String>,
}

/// Fetches and classifies the catalog, downloads classified episodes, and
/// writes `podcasts.json` and `episodes.jsonl` under `dest`.
pub fn ingest(opts: &IngestOptions) -> Result<IngestOutcome> {
    let (catalog, media) = match &opts.source {
        CatalogSource::Http { endpoint, auth } => (
            fetch_catalog(endpoint, auth, &opts.retry)?,
            MediaSource::Http { auth: auth.clone() },
        ),
        CatalogSource::Local(dir) => (read_local_catalog(dir)?, MediaSource::Local { dir: dir.clone() }),
    };
    let (podcasts, warnings) = apply_overrides(&catalog, &opts.overrides);
    fs::create_dir_all(&opts.dest).at(&opts.dest)?;
    let episodes = Downloader::new(media, opts.retry.clone()).download_all(&podcasts, &opts.dest, opts.parallel)?;
    let p = opts.dest.join("podcasts.json");
    fs::write(&p, serde_json::to_string_pretty(&podcasts).expect("catalog serializes") + "\n").at(&p)?;
    write_episodes(&opts.dest.join("episodes.jsonl"), &episodes)?;
    Ok(IngestOutcome {
        podcasts,
        episodes,
        warnings,
    })
}
