//! Turns diarizer output into corpus segments.
//!
//! Rules, applied per turn after cross-talk removal:
//! turns shorter than `min` are dropped; turns longer than `max` are cut
//! into consecutive windows of exactly `max`, and the final remainder is
//! kept only if it is at least `min_tail` long. Boundary values are kept.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{self, AudioBuffer};
use crate::error::{Error, IoContext, Result};
use crate::model::{Episode, Millis, Segment, SpeakerTurn, MAX_SEGMENT, MIN_SEGMENT};

/// Tolerated disagreement between episode metadata, audio and turns.
const DURATION_SLACK: Millis = Millis(500);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRules {
    pub min: Millis,
    pub max: Millis,
    pub min_tail: Millis,
}

impl Default for SegmentRules {
    fn default() -> Self {
        SegmentRules {
            min: MIN_SEGMENT,
            max: MAX_SEGMENT,
            min_tail: MIN_SEGMENT,
        }
    }
}

impl SegmentRules {
    pub fn validate(&self) -> Result<()> {
        if self.min <= Millis::ZERO || self.max < self.min || self.min_tail <= Millis::ZERO {
            return Err(Error::Config(format!(
                "segment rules need 0 < min <= max and min_tail > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationResult {
    pub episode_id: String,
    pub turns: Vec<SpeakerTurn>,
    pub min_speakers: u32,
    pub max_speakers: u32,
}

impl DiarizationResult {
    pub fn new(episode_id: impl Into<String>, mut turns: Vec<SpeakerTurn>) -> Self {
        turns.sort_by(|a, b| (a.start, a.end, &a.speaker_tag).cmp(&(b.start, b.end, &b.speaker_tag)));
        DiarizationResult {
            episode_id: episode_id.into(),
            turns,
            min_speakers: 2,
            max_speakers: 6,
        }
    }
}

/// Parses `SPEAKER` lines of an RTTM document. Blank lines and lines
/// starting with `;` or `#` are ignored; zero-length turns are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<SpeakerTurn>> {
    let mut turns = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                "rttm",
                lineno,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        if fields[0] != "SPEAKER" {
            return Err(Error::parse(
                "rttm",
                lineno,
                format!("unsupported record type {:?}", fields[0]),
            ));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse("rttm", lineno, format!("bad {name} {:?}", fields[i])))
        };
        let onset = num(3, "onset")?;
        let duration = num(4, "duration")?;
        if onset < 0.0 {
            return Err(Error::parse("rttm", lineno, format!("negative onset {onset}")));
        }
        if duration < 0.0 {
            return Err(Error::parse("rttm", lineno, format!("negative duration {duration}")));
        }
        let start = Millis::from_secs_f64(onset);
        let end = Millis::from_secs_f64(onset + duration);
        if end > start {
            turns.push(SpeakerTurn {
                speaker_tag: fields[7].to_string(),
                start,
                end,
            });
        }
    }
    Ok(turns)
}

pub fn write_rttm(file_id: &str, turns: &[SpeakerTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        let _ = writeln!(
            out,
            "SPEAKER {file_id} 1 {} {} <NA> <NA> {} <NA> <NA>",
            t.start,
            t.duration(),
            t.speaker_tag
        );
    }
    out
}

/// Keeps turns lasting at least `min`, in order.
pub fn filter_min_duration(turns: &[SpeakerTurn], min: Millis) -> Vec<SpeakerTurn> {
    turns.iter().filter(|t| t.duration() >= min).cloned().collect()
}

/// Cuts a turn into consecutive `max`-long windows from its start. The
/// remainder is kept iff it is at least `min_tail` long.
pub fn split_long(turn: &SpeakerTurn, max: Millis, min_tail: Millis) -> Vec<SpeakerTurn> {
    let mut out = Vec::with_capacity((turn.duration().0 / max.0.max(1)) as usize + 1);
    let mut start = turn.start;
    while turn.end - start > max {
        out.push(SpeakerTurn {
            speaker_tag: turn.speaker_tag.clone(),
            start,
            end: start + max,
        });
        start = start + max;
    }
    if turn.end - start >= min_tail {
        out.push(SpeakerTurn {
            speaker_tag: turn.speaker_tag.clone(),
            start,
            end: turn.end,
        });
    }
    out
}

/// Time accounting for one segmentation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationStats {
    pub input: Millis,
    pub overlap_dropped: Millis,
    pub short_dropped: Millis,
    pub tail_dropped: Millis,
    pub kept: Millis,
}

/// Removes cross-talk: same-speaker turns that overlap are merged, and any
/// turn overlapping a different speaker is dropped entirely.
///
/// Returns the surviving turns sorted by start, plus the dropped duration.
pub fn resolve_overlaps(turns: &[SpeakerTurn]) -> (Vec<SpeakerTurn>, Millis) {
    let mut sorted: Vec<SpeakerTurn> = turns.to_vec();
    sorted.sort_by(|a, b| (&a.speaker_tag, a.start, a.end).cmp(&(&b.speaker_tag, b.start, b.end)));

    let mut merged: Vec<SpeakerTurn> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match merged.last_mut() {
            Some(last) if last.speaker_tag == t.speaker_tag && t.start < last.end => {
                last.end = last.end.max(t.end);
            }
            _ => merged.push(t),
        }
    }
    merged.sort_by(|a, b| (a.start, a.end, &a.speaker_tag).cmp(&(b.start, b.end, &b.speaker_tag)));

    let mut overlapped = vec![false; merged.len()];
    let mut active: Vec<usize> = Vec::new();
    for i in 0..merged.len() {
        let start = merged[i].start;
        active.retain(|&j| merged[j].end > start);
        for &j in &active {
            // same-speaker overlaps were merged above
            overlapped[i] = true;
            overlapped[j] = true;
        }
        active.push(i);
    }

    let mut dropped = Millis::ZERO;
    let kept = merged
        .into_iter()
        .zip(overlapped)
        .filter_map(|(t, o)| {
            if o {
                dropped = dropped + t.duration();
                None
            } else {
                Some(t)
            }
        })
        .collect();
    (kept, dropped)
}

/// Applies cross-talk removal, the minimum-duration filter and splitting.
pub fn segment_turns(turns: &[SpeakerTurn], rules: &SegmentRules) -> (Vec<SpeakerTurn>, SegmentationStats) {
    let mut stats = SegmentationStats {
        input: turns.iter().map(SpeakerTurn::duration).sum(),
        ..Default::default()
    };
    let (clean, overlap) = resolve_overlaps(turns);
    stats.overlap_dropped = overlap;

    let long_enough = filter_min_duration(&clean, rules.min);
    stats.short_dropped = clean.iter().map(SpeakerTurn::duration).sum::<Millis>()
        - long_enough.iter().map(SpeakerTurn::duration).sum();

    let mut out = Vec::new();
    for t in &long_enough {
        let pieces = split_long(t, rules.max, rules.min_tail);
        let covered: Millis = pieces.iter().map(SpeakerTurn::duration).sum();
        stats.tail_dropped = stats.tail_dropped + (t.duration() - covered);
        out.extend(pieces);
    }
    stats.kept = out.iter().map(SpeakerTurn::duration).sum();
    (out, stats)
}

/// Content-derived segment id: stable across re-runs.
pub fn segment_id(episode_id: &str, speaker_tag: &str, start: Millis) -> String {
    let mut h = Sha256::new();
    h.update(episode_id.as_bytes());
    h.update([0]);
    h.update(speaker_tag.as_bytes());
    h.update([0]);
    h.update(start.0.to_le_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Segments one episode and writes each segment's audio under
/// `out_dir/<episode_id>/<segment_id>.wav`.
pub fn segment_episode(
    episode: &Episode,
    diarization: &DiarizationResult,
    audio: &AudioBuffer,
    out_dir: &Path,
    rules: &SegmentRules,
) -> Result<Vec<Segment>> {
    if diarization.episode_id != episode.episode_id {
        return Err(Error::Precondition(format!(
            "diarization for {} given with episode {}",
            diarization.episode_id, episode.episode_id
        )));
    }
    let audio_len = Millis::from_secs_f64(audio.duration_s());
    let meta_len = Millis::from_secs_f64(episode.duration_s);
    if (audio_len - meta_len).0.abs() > DURATION_SLACK.0 {
        return Err(Error::Precondition(format!(
            "{}: audio lasts {}s but episode metadata says {}s",
            episode.episode_id, audio_len, meta_len
        )));
    }
    let mut turns = Vec::with_capacity(diarization.turns.len());
    for t in &diarization.turns {
        t.validate()?;
        if t.end > audio_len + DURATION_SLACK {
            return Err(Error::Precondition(format!(
                "{}: turn {} ends at {}s beyond audio end {}s",
                episode.episode_id, t.speaker_tag, t.end, audio_len
            )));
        }
        let end = t.end.min(audio_len);
        if end > t.start {
            turns.push(SpeakerTurn {
                end,
                ..t.clone()
            });
        }
    }

    let (pieces, _) = segment_turns(&turns, rules);
    if pieces.is_empty() {
        return Ok(Vec::new());
    }
    let ep_dir = out_dir.join(&episode.episode_id);
    fs::create_dir_all(&ep_dir).at(&ep_dir)?;

    let mut segments = Vec::with_capacity(pieces.len());
    for t in pieces {
        let id = segment_id(&episode.episode_id, &t.speaker_tag, t.start);
        let clip = audio::slice(audio, t.start.as_secs_f64(), t.end.as_secs_f64())?;
        let path = ep_dir.join(format!("{id}.wav"));
        audio::write_wav(&clip, &path)?;
        segments.push(Segment {
            segment_id: id,
            episode_id: episode.episode_id.clone(),
            podcast_id: episode.podcast_id.clone(),
            speaker_tag: t.speaker_tag,
            start: t.start,
            end: t.end,
            audio_path: path,
            transcript: None,
            dialect: None,
            language_class: episode.language_class,
        });
    }
    crate::manifest::sort_segments(&mut segments);
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LanguageClass;

    fn turn(spk: &str, a: f64, b: f64) -> SpeakerTurn {
        SpeakerTurn::new(spk, Millis::from_secs_f64(a), Millis::from_secs_f64(b)).unwrap()
    }

    fn spans(ts: &[SpeakerTurn]) -> Vec<(f64, f64)> {
        ts.iter().map(|t| (t.start.as_secs_f64(), t.end.as_secs_f64())).collect()
    }

    #[test]
    fn rttm_line_arithmetic() {
        let t = parse_rttm("SPEAKER ep1 1 0.50 2.00 <NA> <NA> spkA <NA> <NA>\n").unwrap();
        assert_eq!(t, vec![turn("spkA", 0.5, 2.5)]);
        assert!(parse_rttm("").unwrap().is_empty());
        assert!(parse_rttm(";; comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn rttm_errors_carry_line_numbers() {
        let e = parse_rttm("SPEAKER ep1 1 0.50 2.00 <NA> <NA> a <NA> <NA>\nSPEAKER ep1 1 1.0 -1.0 <NA> <NA> a <NA> <NA>")
            .unwrap_err()
            .to_string();
        assert!(e.contains(":2:") && e.contains("negative duration"), "{e}");
        let e = parse_rttm("SPEAKER ep1 1 0.5").unwrap_err().to_string();
        assert!(e.contains(":1:") && e.contains("10 fields"), "{e}");
        assert!(parse_rttm("SPEAKER ep1 1 x 1.0 <NA> <NA> a <NA> <NA>").is_err());
    }

    #[test]
    fn rttm_round_trip() {
        let turns = vec![turn("a", 0.0, 2.345), turn("b", 3.0, 10.5)];
        assert_eq!(parse_rttm(&write_rttm("ep", &turns)).unwrap(), turns);
    }

    #[test]
    fn min_duration_filter() {
        let ts = vec![turn("a", 0.0, 1.9), turn("a", 2.0, 4.0), turn("b", 5.0, 9.0)];
        assert_eq!(spans(&filter_min_duration(&ts, MIN_SEGMENT)), vec![(2.0, 4.0), (5.0, 9.0)]);
        assert!(filter_min_duration(&[], MIN_SEGMENT).is_empty());
    }

    #[test]
    fn split_examples() {
        let r = SegmentRules::default();
        assert_eq!(
            spans(&split_long(&turn("a", 0.0, 37.0), r.max, r.min_tail)),
            vec![(0.0, 15.0), (15.0, 30.0), (30.0, 37.0)]
        );
        assert_eq!(spans(&split_long(&turn("a", 0.0, 15.0), r.max, r.min_tail)), vec![(0.0, 15.0)]);
        assert_eq!(
            spans(&split_long(&turn("a", 0.0, 31.5), r.max, r.min_tail)),
            vec![(0.0, 15.0), (15.0, 30.0)]
        );
        assert_eq!(
            spans(&split_long(&turn("a", 0.0, 32.0), r.max, r.min_tail)),
            vec![(0.0, 15.0), (15.0, 30.0), (30.0, 32.0)]
        );
    }

    #[test]
    fn composition_example() {
        let ts = vec![turn("a", 0.0, 1.5), turn("a", 2.0, 20.0), turn("b", 25.0, 28.0)];
        let (out, stats) = segment_turns(&ts, &SegmentRules::default());
        assert_eq!(spans(&out), vec![(2.0, 17.0), (17.0, 20.0), (25.0, 28.0)]);
        assert_eq!(stats.short_dropped, Millis(1_500));
        assert_eq!(stats.kept, Millis(21_000));
    }

    #[test]
    fn cross_talk_dropped_and_self_overlap_merged() {
        let ts = vec![
            turn("a", 0.0, 5.0),
            turn("b", 4.0, 9.0),
            turn("c", 10.0, 14.0),
            turn("c", 13.0, 16.0),
            turn("a", 20.0, 25.0),
        ];
        let (kept, dropped) = resolve_overlaps(&ts);
        assert_eq!(spans(&kept), vec![(10.0, 16.0), (20.0, 25.0)]);
        assert_eq!(dropped, Millis(10_000));
    }

    #[test]
    fn segment_episode_writes_clips() {
        let dir = tempfile::tempdir().unwrap();
        let audio = AudioBuffer::silence(30 * 8_000, 8_000).unwrap();
        let ep = Episode {
            episode_id: "ep1".into(),
            podcast_id: "p".into(),
            audio_path: "ep1.wav".into(),
            duration_s: 30.0,
            sample_rate_hz: 8_000,
            language_class: LanguageClass::Swiss,
            checksum: None,
        };
        let d = DiarizationResult::new(
            "ep1",
            vec![turn("a", 0.0, 1.5), turn("a", 2.0, 20.0), turn("b", 25.0, 28.0)],
        );
        let segs = segment_episode(&ep, &d, &audio, dir.path(), &SegmentRules::default()).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].duration(), Millis(15_000));
        let clip = audio::read_wav(&segs[1].audio_path).unwrap();
        assert_eq!(clip.len(), 3 * 8_000);
        assert_eq!(segs[0].segment_id, segment_id("ep1", "a", Millis(2_000)));

        let empty = DiarizationResult::new("ep1", vec![]);
        assert!(segment_episode(&ep, &empty, &audio, dir.path(), &SegmentRules::default())
            .unwrap()
            .is_empty());

        let wrong = DiarizationResult::new("ep2", vec![]);
        assert!(segment_episode(&ep, &wrong, &audio, dir.path(), &SegmentRules::default()).is_err());
        let short_audio = AudioBuffer::silence(20 * 8_000, 8_000).unwrap();
        assert!(segment_episode(&ep, &d, &short_audio, dir.path(), &SegmentRules::default()).is_err());
    }
}
