//! Shared domain types: dialect labels, timing, episodes, turns and segments.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Shortest segment kept in a corpus manifest, inclusive.
pub const MIN_SEGMENT: Millis = Millis(2_000);
/// Longest segment kept in a corpus manifest, inclusive.
pub const MAX_SEGMENT: Millis = Millis(15_000);

/// The seven Swiss German dialect regions plus Standard German.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DialectRegion {
    Basel,
    Bern,
    German,
    Grisons,
    CentralCH,
    EasternCH,
    Valais,
    Zurich,
}

impl DialectRegion {
    pub const ALL: [DialectRegion; 8] = [
        DialectRegion::Basel,
        DialectRegion::Bern,
        DialectRegion::German,
        DialectRegion::Grisons,
        DialectRegion::CentralCH,
        DialectRegion::EasternCH,
        DialectRegion::Valais,
        DialectRegion::Zurich,
    ];

    /// The seven regions excluding Standard German.
    pub const SWISS: [DialectRegion; 7] = [
        DialectRegion::Basel,
        DialectRegion::Bern,
        DialectRegion::Grisons,
        DialectRegion::CentralCH,
        DialectRegion::EasternCH,
        DialectRegion::Valais,
        DialectRegion::Zurich,
    ];

    /// Row order of evaluation reports: dialects alphabetically by display
    /// name, then Standard German.
    pub const REPORT_ORDER: [DialectRegion; 8] = [
        DialectRegion::Basel,
        DialectRegion::Bern,
        DialectRegion::CentralCH,
        DialectRegion::EasternCH,
        DialectRegion::Grisons,
        DialectRegion::Valais,
        DialectRegion::Zurich,
        DialectRegion::German,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DialectRegion::Basel => "Basel",
            DialectRegion::Bern => "Bern",
            DialectRegion::German => "German",
            DialectRegion::Grisons => "Grisons",
            DialectRegion::CentralCH => "CentralCH",
            DialectRegion::EasternCH => "EasternCH",
            DialectRegion::Valais => "Valais",
            DialectRegion::Zurich => "Zurich",
        }
    }

    /// Human-readable name used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DialectRegion::CentralCH => "Central CH",
            DialectRegion::EasternCH => "Eastern CH",
            other => other.as_str(),
        }
    }

    pub fn index(self) -> usize {
        DialectRegion::ALL.iter().position(|d| *d == self).unwrap()
    }

    pub fn is_swiss(self) -> bool {
        self != DialectRegion::German
    }
}

impl fmt::Display for DialectRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DialectRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DialectRegion::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid("dialect", format!("unknown dialect label {s:?}")))
    }
}

/// Manual podcast language classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageClass {
    Standard,
    Swiss,
    Mixed,
    Excluded,
}

impl LanguageClass {
    pub fn as_str(self) -> &'static str {
        match self {
            LanguageClass::Standard => "standard",
            LanguageClass::Swiss => "swiss",
            LanguageClass::Mixed => "mixed",
            LanguageClass::Excluded => "excluded",
        }
    }
}

impl fmt::Display for LanguageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LanguageClass::Standard),
            "swiss" => Ok(LanguageClass::Swiss),
            "mixed" => Ok(LanguageClass::Mixed),
            "excluded" => Ok(LanguageClass::Excluded),
            other => Err(Error::invalid(
                "language class",
                format!("unknown language class {other:?}"),
            )),
        }
    }
}

/// A point in time (or a duration) with millisecond resolution.
///
/// All corpus timings are held as integer milliseconds so that comparisons
/// and arithmetic are exact and manifests round-trip byte-for-byte. On the
/// wire they are decimal seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Millis(pub i64);

impl Millis {
    pub const ZERO: Millis = Millis(0);

    /// Rounds to the nearest millisecond.
    pub fn from_secs_f64(s: f64) -> Millis {
        Millis((s * 1000.0).round() as i64)
    }

    pub fn from_secs(s: i64) -> Millis {
        Millis(s * 1000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl std::ops::Add for Millis {
    type Output = Millis;
    fn add(self, rhs: Millis) -> Millis {
        Millis(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Millis {
    type Output = Millis;
    fn sub(self, rhs: Millis) -> Millis {
        Millis(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Millis {
    fn sum<I: Iterator<Item = Millis>>(iter: I) -> Millis {
        Millis(iter.map(|m| m.0).sum())
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", abs / 1000, abs % 1000)
    }
}

impl Serialize for Millis {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_secs_f64())
    }
}

impl<'de> Deserialize<'de> for Millis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let secs = f64::deserialize(d)?;
        if !secs.is_finite() {
            return Err(serde::de::Error::custom("non-finite time value"));
        }
        Ok(Millis::from_secs_f64(secs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub podcast_id: String,
    pub audio_path: PathBuf,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub language_class: LanguageClass,
    /// Hex SHA-256 of the downloaded source bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        if self.episode_id.is_empty() {
            return Err(Error::invalid("episode", "empty episode_id"));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::invalid(
                "episode",
                format!("{}: duration_s must be > 0", self.episode_id),
            ));
        }
        if !(8_000..=192_000).contains(&self.sample_rate_hz) {
            return Err(Error::invalid(
                "episode",
                format!(
                    "{}: sample_rate_hz {} outside 8000..192000",
                    self.episode_id, self.sample_rate_hz
                ),
            ));
        }
        if self.language_class == LanguageClass::Excluded {
            return Err(Error::invalid(
                "episode",
                format!("{}: podcast is excluded", self.episode_id),
            ));
        }
        Ok(())
    }
}

/// One diarizer turn: a speaker active over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub speaker_tag: String,
    pub start: Millis,
    pub end: Millis,
}

impl SpeakerTurn {
    pub fn new(speaker_tag: impl Into<String>, start: Millis, end: Millis) -> Result<Self> {
        let turn = SpeakerTurn {
            speaker_tag: speaker_tag.into(),
            start,
            end,
        };
        turn.validate()?;
        Ok(turn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start < Millis::ZERO || self.start >= self.end {
            return Err(Error::invalid(
                "speaker turn",
                format!(
                    "{}: need 0 <= start < end, got [{}, {}]",
                    self.speaker_tag, self.start, self.end
                ),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> Millis {
        self.end - self.start
    }
}

/// One single-speaker span of an episode: the atomic corpus unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub segment_id: String,
    pub episode_id: String,
    pub podcast_id: String,
    pub speaker_tag: String,
    pub start: Millis,
    pub end: Millis,
    pub audio_path: PathBuf,
    pub transcript: Option<String>,
    pub dialect: Option<DialectRegion>,
    pub language_class: LanguageClass,
}

impl Segment {
    pub fn duration(&self) -> Millis {
        self.end - self.start
    }

    /// Checks the manifest-level invariants of a single record.
    pub fn validate(&self) -> Result<()> {
        if self.segment_id.is_empty() {
            return Err(Error::invalid("segment", "empty segment_id"));
        }
        if self.start < Millis::ZERO || self.start >= self.end {
            return Err(Error::invalid(
                "segment",
                format!("{}: start must be < end", self.segment_id),
            ));
        }
        let d = self.duration();
        if d < MIN_SEGMENT || d > MAX_SEGMENT {
            return Err(Error::invalid(
                "segment",
                format!(
                    "{}: duration {}s outside [{}, {}]",
                    self.segment_id, d, MIN_SEGMENT, MAX_SEGMENT
                ),
            ));
        }
        if let Some(t) = &self.transcript {
            if t.trim().is_empty() {
                return Err(Error::invalid(
                    "segment",
                    format!("{}: transcript present but empty", self.segment_id),
                ));
            }
        }
        Ok(())
    }
}
