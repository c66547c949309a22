//! Line-delimited JSON corpus manifest.
//!
//! The first line is a header object carrying `schema_version`, followed by
//! one segment record per line. Records are kept sorted by
//! `(episode_id, start_s)` so that writing an unmodified manifest reproduces
//! the same bytes.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::{DialectRegion, LanguageClass, Millis, Segment};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub created_at: String,
    pub config_hash: String,
}

impl ManifestHeader {
    pub fn new(created_at: impl Into<String>, config_hash: impl Into<String>) -> Self {
        ManifestHeader {
            schema_version: SCHEMA_VERSION,
            created_at: created_at.into(),
            config_hash: config_hash.into(),
        }
    }
}

/// Wire form of one manifest line. Field order is the on-disk order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    segment_id: String,
    episode_id: String,
    podcast_id: String,
    speaker_tag: String,
    start_s: Millis,
    end_s: Millis,
    duration_s: Millis,
    audio_path: PathBuf,
    transcript: Option<String>,
    dialect: Option<DialectRegion>,
    language_class: LanguageClass,
}

impl From<&Segment> for Record {
    fn from(s: &Segment) -> Self {
        Record {
            segment_id: s.segment_id.clone(),
            episode_id: s.episode_id.clone(),
            podcast_id: s.podcast_id.clone(),
            speaker_tag: s.speaker_tag.clone(),
            start_s: s.start,
            end_s: s.end,
            duration_s: s.duration(),
            audio_path: s.audio_path.clone(),
            transcript: s.transcript.clone(),
            dialect: s.dialect,
            language_class: s.language_class,
        }
    }
}

impl Record {
    fn into_segment(self) -> Result<Segment> {
        if self.end_s - self.start_s != self.duration_s {
            return Err(Error::invalid(
                "segment",
                format!(
                    "{}: duration_s {} does not equal end_s - start_s",
                    self.segment_id, self.duration_s
                ),
            ));
        }
        let seg = Segment {
            segment_id: self.segment_id,
            episode_id: self.episode_id,
            podcast_id: self.podcast_id,
            speaker_tag: self.speaker_tag,
            start: self.start_s,
            end: self.end_s,
            audio_path: self.audio_path,
            transcript: self.transcript,
            dialect: self.dialect,
            language_class: self.language_class,
        };
        seg.validate()?;
        Ok(seg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    segments: Vec<Segment>,
}

impl Manifest {
    /// Validates every record, checks id uniqueness and sorts.
    pub fn new(header: ManifestHeader, mut segments: Vec<Segment>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(segments.len());
        for s in &segments {
            s.validate()?;
            if seen.insert(s.segment_id.as_str(), ()).is_some() {
                return Err(Error::invalid(
                    "manifest",
                    format!("duplicate segment_id {}", s.segment_id),
                ));
            }
        }
        drop(seen);
        sort_segments(&mut segments);
        Ok(Manifest { header, segments })
    }

    pub fn empty(header: ManifestHeader) -> Self {
        Manifest {
            header,
            segments: Vec::new(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<Segment> {
        self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Concatenates per-episode manifests under a new header.
    pub fn concat(header: ManifestHeader, parts: impl IntoIterator<Item = Manifest>) -> Result<Self> {
        let segments = parts.into_iter().flat_map(|m| m.segments).collect();
        Manifest::new(header, segments)
    }
}

pub(crate) fn sort_segments(segments: &mut [Segment]) {
    segments.sort_by(|a, b| {
        (a.episode_id.as_str(), a.start, a.segment_id.as_str()).cmp(&(
            b.episode_id.as_str(),
            b.start,
            b.segment_id.as_str(),
        ))
    });
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = File::open(path).at(path)?;
    read_manifest_from(BufReader::new(file), &path.display().to_string())
}

/// Parses a manifest stream; `name` is used in error messages.
pub fn read_manifest_from<R: BufRead>(reader: R, name: &str) -> Result<Manifest> {
    let mut header: Option<ManifestHeader> = None;
    let mut segments = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: ManifestHeader = serde_json::from_str(&line)
                .map_err(|e| Error::parse(name, lineno, format!("bad header: {e}")))?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(Error::parse(
                    name,
                    lineno,
                    format!("unsupported schema_version {}", h.schema_version),
                ));
            }
            header = Some(h);
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::parse(name, lineno, e.to_string()))?;
        if let Some(prev) = first_line.insert(rec.segment_id.clone(), lineno) {
            return Err(Error::parse(
                name,
                lineno,
                format!("duplicate segment_id {} (first seen on line {prev})", rec.segment_id),
            ));
        }
        let seg = rec
            .into_segment()
            .map_err(|e| Error::parse(name, lineno, e.to_string()))?;
        segments.push(seg);
    }

    let header = header.ok_or_else(|| Error::parse(name, 1, "missing manifest header"))?;
    sort_segments(&mut segments);
    Ok(Manifest { header, segments })
}

pub fn write_manifest_to<W: Write>(manifest: &Manifest, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &manifest.header)?;
    w.write_all(b"\n")?;
    for seg in &manifest.segments {
        serde_json::to_writer(&mut w, &Record::from(seg))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes atomically via a sibling temp file.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let tmp = tmp_sibling(path);
    {
        let file = File::create(&tmp).at(&tmp)?;
        write_manifest_to(manifest, BufWriter::new(file)).at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

pub(crate) fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LanguageClass;

    fn seg(id: &str, ep: &str, start: i64, end: i64) -> Segment {
        Segment {
            segment_id: id.into(),
            episode_id: ep.into(),
            podcast_id: "pod".into(),
            speaker_tag: "spk".into(),
            start: Millis(start),
            end: Millis(end),
            audio_path: format!("seg/{id}.wav").into(),
            transcript: Some("hallo welt".into()),
            dialect: Some(DialectRegion::Bern),
            language_class: LanguageClass::Swiss,
        }
    }

    fn header() -> ManifestHeader {
        ManifestHeader::new("2024-01-01T00:00:00Z", "abc")
    }

    fn to_bytes(m: &Manifest) -> Vec<u8> {
        let mut out = Vec::new();
        write_manifest_to(m, &mut out).unwrap();
        out
    }

    #[test]
    fn header_only_file_reads_as_empty() {
        let text = r#"{"schema_version":1,"created_at":"x","config_hash":"y"}"#;
        let m = read_manifest_from(text.as_bytes(), "mem").unwrap();
        assert!(m.is_empty());
        assert_eq!(to_bytes(&m), format!("{text}\n").into_bytes());
    }

    #[test]
    fn fixture_is_sorted_on_read() {
        let m = Manifest::new(
            header(),
            vec![seg("c", "ep2", 0, 3000), seg("b", "ep1", 5000, 9000), seg("a", "ep1", 0, 2000)],
        )
        .unwrap();
        let bytes = to_bytes(&m);
        let back = read_manifest_from(bytes.as_slice(), "mem").unwrap();
        let ids: Vec<_> = back.segments().iter().map(|s| s.segment_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(back, m);
    }

    #[test]
    fn short_record_rejected_with_line_number() {
        let m = Manifest::new(header(), vec![seg("a", "ep1", 0, 2000)]).unwrap();
        let text = String::from_utf8(to_bytes(&m)).unwrap();
        let bad = text.replace("\"end_s\":2.0,\"duration_s\":2.0", "\"end_s\":1.5,\"duration_s\":1.5");
        assert_ne!(bad, text);
        let err = read_manifest_from(bad.as_bytes(), "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("mem:2:"), "{msg}");
        assert!(msg.contains("duration"), "{msg}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = seg("a", "ep1", 0, 2000);
        let b = seg("a", "ep2", 0, 2000);
        assert!(Manifest::new(header(), vec![a.clone(), b.clone()]).is_err());
        let m1 = Manifest::new(header(), vec![a]).unwrap();
        let m2 = Manifest::new(header(), vec![b]).unwrap();
        let mut text = to_bytes(&m1);
        let second = to_bytes(&m2);
        let second_body = second.splitn(2, |c| *c == b'\n').nth(1).unwrap();
        text.extend_from_slice(second_body);
        let err = read_manifest_from(text.as_slice(), "mem").unwrap_err();
        assert!(err.to_string().contains("duplicate segment_id a"));
        assert!(Manifest::concat(header(), [m1, m2]).is_err());
    }

    #[test]
    fn malformed_field_names_the_field() {
        let text = "{\"schema_version\":1,\"created_at\":\"x\",\"config_hash\":\"y\"}\n{\"segment_id\":\"a\"}\n";
        let err = read_manifest_from(text.as_bytes(), "mem").unwrap_err().to_string();
        assert!(err.starts_with("mem:2:"), "{err}");
        assert!(err.contains("missing field"), "{err}");
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(read_manifest_from("".as_bytes(), "mem").is_err());
    }

    #[test]
    fn boundaries_are_inclusive() {
        assert!(Manifest::new(header(), vec![seg("a", "e", 0, 2000), seg("b", "e", 2000, 17000)]).is_ok());
        assert!(Manifest::new(header(), vec![seg("a", "e", 0, 15001)]).is_err());
        assert!(Manifest::new(header(), vec![seg("a", "e", 0, 1999)]).is_err());
    }
}
