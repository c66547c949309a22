//! Synthetic fixtures: per-dialect phoneme distributions and tonal
//! multi-speaker episodes that the stub backends can interpret.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioBuffer};
use crate::error::{IoContext, Result};
use crate::model::{DialectRegion, Millis, SpeakerTurn};

/// 24 phoneme symbols; dialect `d` favours symbols `3d..3d+3`.
pub const PHONEMES: [&str; 24] = [
    "a", "e", "i", "o", "u", "y", "@", "E", "O", "9", "2", "{", "p", "b", "t", "d", "k", "g", "f",
    "v", "s", "z", "x", "R",
];
const SIGNATURE_WEIGHT: f64 = 10.0;

/// Categorical unigram phoneme source for one dialect.
#[derive(Debug, Clone)]
pub struct DialectPhonemeSource {
    pub dialect: DialectRegion,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl DialectPhonemeSource {
    pub fn new(dialect: DialectRegion) -> Self {
        let d = dialect.index();
        let weights: Vec<f64> = (0..PHONEMES.len())
            .map(|i| if i / 3 == d { SIGNATURE_WEIGHT } else { 1.0 })
            .collect();
        let dist = WeightedIndex::new(&weights).expect("positive weights");
        DialectPhonemeSource {
            dialect,
            weights,
            dist,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// KL(self || other) in nats.
    pub fn kl_divergence(&self, other: &DialectPhonemeSource) -> f64 {
        self.probabilities()
            .iter()
            .zip(other.probabilities())
            .map(|(p, q)| p * (p / q).ln())
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<String> {
        (0..len)
            .map(|_| PHONEMES[self.dist.sample(rng)].to_string())
            .collect()
    }
}

/// Labeled phoneme corpus with `per_class` sequences of `len` tokens for
/// each dialect in `dialects`.
pub fn dialect_corpus(
    dialects: &[DialectRegion],
    per_class: usize,
    len: usize,
    seed: u64,
) -> Vec<(Vec<String>, DialectRegion)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dialects.len() * per_class);
    for d in dialects {
        let src = DialectPhonemeSource::new(*d);
        for _ in 0..per_class {
            out.push((src.sample(&mut rng, len), *d));
        }
    }
    out
}

/// Tone frequency whose pitch bucket maps to `dialect`; see
/// [`dialect_for_pitch`].
pub fn pitch_for_dialect(dialect: DialectRegion) -> f64 {
    let idx = dialect.index() as f64;
    // buckets 2..=9 cover all eight indices modulo 8
    let bucket = if idx < 2.0 { idx + 8.0 } else { idx };
    bucket * 50.0
}

/// Maps a pitch estimate to a dialect via 50 Hz buckets.
pub fn dialect_for_pitch(pitch_hz: f64) -> DialectRegion {
    let bucket = (pitch_hz / 50.0).round() as i64;
    DialectRegion::ALL[bucket.rem_euclid(8) as usize]
}

/// Opaque speaker tag for a pitch estimate, matching the 50 Hz buckets.
pub fn speaker_tag_for_pitch(pitch_hz: f64) -> String {
    format!("spk{}", (pitch_hz / 50.0).round() as i64)
}

/// Sidecar metadata stored next to an audio file as `<file>.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<DialectRegion>,
}

pub fn sidecar_path(audio: &Path) -> PathBuf {
    let mut s = audio.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Sidecar {
    pub fn read(audio: &Path) -> Result<Option<Sidecar>> {
        let p = sidecar_path(audio);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).at(&p)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| crate::Error::invalid("sidecar", format!("{}: {e}", p.display())))
    }

    pub fn write(&self, audio: &Path) -> Result<()> {
        let p = sidecar_path(audio);
        fs::write(&p, serde_json::to_string(self).expect("sidecar serializes")).at(&p)
    }
}

/// One speaker turn of a synthetic episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneTurn {
    pub dialect: DialectRegion,
    pub start: Millis,
    pub end: Millis,
}

/// Renders turns as tones at each dialect's pitch over silence.
pub fn render_episode(turns: &[ToneTurn], total: Millis, sample_rate_hz: u32) -> AudioBuffer {
    let rate = sample_rate_hz as i64;
    let n = (total.0 * rate / 1000) as usize;
    let mut samples = vec![0.0f32; n];
    for t in turns {
        let a = (t.start.0 * rate / 1000) as usize;
        let b = ((t.end.0 * rate / 1000) as usize).min(n);
        let tone = audio::tone(
            pitch_for_dialect(t.dialect),
            (b - a) as f64 / sample_rate_hz as f64,
            sample_rate_hz,
            0.5,
        );
        samples[a..a + tone.len()].copy_from_slice(tone.samples());
    }
    AudioBuffer::new(samples, sample_rate_hz).expect("finite tone samples")
}

/// Reference turns as diarizer speaker tags would name them.
pub fn reference_turns(turns: &[ToneTurn]) -> Vec<SpeakerTurn> {
    turns
        .iter()
        .map(|t| SpeakerTurn {
            speaker_tag: speaker_tag_for_pitch(pitch_for_dialect(t.dialect)),
            start: t.start,
            end: t.end,
        })
        .collect()
}

/// Random episode layout: alternating speakers from `dialects`, turns on a
/// 20 ms grid between 1 and 24 seconds, separated by 0.6 to 2 s of silence.
pub fn random_episode(dialects: &[DialectRegion], total: Millis, seed: u64) -> Vec<ToneTurn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = |ms: i64| ms / 20 * 20;
    let mut turns = Vec::new();
    let mut t = grid(rng.gen_range(200..1000));
    let mut who = 0;
    loop {
        let len = grid(rng.gen_range(1_000..24_000));
        if t + len > total.0 {
            break;
        }
        turns.push(ToneTurn {
            dialect: dialects[who % dialects.len()],
            start: Millis(t),
            end: Millis(t + len),
        });
        who += rng.gen_range(1..=dialects.len().max(1));
        t += len + grid(rng.gen_range(600..2_000));
    }
    turns
}

/// A speaker table row as consumed by the evaluation harness.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpeaker {
    pub dialect: DialectRegion,
    pub speaker_id: String,
    pub clips: Vec<PathBuf>,
}

/// Writes `clips_per_speaker` short reference clips with sidecars for
/// `speakers_per_dialect` speakers of each dialect.
pub fn write_reference_speakers(
    dir: &Path,
    dialects: &[DialectRegion],
    speakers_per_dialect: usize,
    clips_per_speaker: usize,
) -> Result<Vec<SyntheticSpeaker>> {
    fs::create_dir_all(dir).at(dir)?;
    let mut out = Vec::new();
    for d in dialects {
        for s in 0..speakers_per_dialect {
            let speaker_id = format!("{}-s{s}", d.as_str());
            let mut clips = Vec::new();
            for c in 0..clips_per_speaker {
                let path = dir.join(format!("{speaker_id}-c{c}.wav"));
                let buf = audio::tone(pitch_for_dialect(*d) + s as f64, 0.2, 8_000, 0.5);
                audio::write_wav(&buf, &path)?;
                Sidecar {
                    text: None,
                    speaker: Some(speaker_id.clone()),
                    dialect: Some(*d),
                }
                .write(&path)?;
                clips.push(path);
            }
            out.push(SyntheticSpeaker {
                dialect: *d,
                speaker_id,
                clips,
            });
        }
    }
    Ok(out)
}

const WORDS: [&str; 48] = [
    "der", "die", "das", "und", "ist", "nicht", "ein", "eine", "zu", "mit", "auf", "für", "heute",
    "morgen", "wir", "sie", "haben", "werden", "können", "Stadt", "Zürich", "Bern", "Wetter",
    "Regen", "Sonne", "Zug", "Bahnhof", "Schule", "Kinder", "Arbeit", "Zeit", "Jahr", "Woche",
    "gross", "klein", "neu", "alt", "schnell", "langsam", "gut", "spät", "früh", "Berg", "See",
    "Brot", "Käse", "Markt", "Haus",
];

/// Deterministic pseudo-German sentences of 6 to 14 words.
pub fn sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(6..=14);
            let mut words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            let mut s = words.remove(0).to_string();
            for w in words {
                s.push(' ');
                s += w;
            }
            s.push('.');
            s
        })
        .collect()
}

/// Pseudo-words for a transcript, seeded by `seed`.
pub fn pseudo_words<R: Rng>(rng: &mut R, n: usize) -> Vec<&'static str> {
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect()
}

/// One episode of a synthetic local catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEpisode {
    pub podcast_id: String,
    pub episode_id: String,
    pub turns: Vec<ToneTurn>,
    pub total: Millis,
}

/// Writes `catalog.json`, one WAV per episode and `overrides.tsv` (every
/// podcast classified swiss) under `dir`.
pub fn write_local_catalog(dir: &Path, episodes: &[SyntheticEpisode], sample_rate_hz: u32) -> Result<PathBuf> {
    fs::create_dir_all(dir).at(dir)?;
    let mut podcasts: Vec<&str> = episodes.iter().map(|e| e.podcast_id.as_str()).collect();
    podcasts.sort();
    podcasts.dedup();
    let catalog: Vec<serde_json::Value> = podcasts
        .iter()
        .map(|p| {
            let eps: Vec<serde_json::Value> = episodes
                .iter()
                .filter(|e| e.podcast_id == *p)
                .map(|e| serde_json::json!({ "episode_id": e.episode_id, "media_url": format!("{}.wav", e.episode_id) }))
                .collect();
            serde_json::json!({ "podcast_id": p, "title": format!("Podcast {p}"), "episode_count": eps.len(), "episodes": eps })
        })
        .collect();
    for e in episodes {
        let path = dir.join(format!("{}.wav", e.episode_id));
        audio::write_wav(&render_episode(&e.turns, e.total, sample_rate_hz), &path)?;
    }
    let cat = dir.join("catalog.json");
    fs::write(&cat, serde_json::to_string_pretty(&catalog).expect("catalog serializes") + "\n").at(&cat)?;
    let overrides = dir.join("overrides.tsv");
    let body: String = podcasts.iter().map(|p| format!("{p}\tswiss\n")).collect();
    fs::write(&overrides, body).at(&overrides)?;
    Ok(overrides)
}

/// `n` random episodes of `total` length spread over two podcasts, each
/// with two or three speakers of distinct dialects.
pub fn random_corpus(n: usize, total: Millis, seed: u64) -> Vec<SyntheticEpisode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut dialects = DialectRegion::ALL.to_vec();
            dialects.shuffle(&mut rng);
            dialects.truncate(rng.gen_range(2..=3));
            SyntheticEpisode {
                podcast_id: format!("pod{}", i % 2),
                episode_id: format!("ep{i:02}"),
                turns: random_episode(&dialects, total, rng.gen()),
                total,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{energy_vad, estimate_pitch_hz, VadParams};

    #[test]
    fn dialect_sources_are_well_separated() {
        for a in DialectRegion::ALL {
            for b in DialectRegion::ALL {
                if a != b {
                    let kl = DialectPhonemeSource::new(a).kl_divergence(&DialectPhonemeSource::new(b));
                    assert!(kl >= 1.0, "{a} vs {b}: {kl}");
                }
            }
        }
    }

    #[test]
    fn pitch_buckets_round_trip() {
        for d in DialectRegion::ALL {
            assert_eq!(dialect_for_pitch(pitch_for_dialect(d)), d);
            assert_eq!(dialect_for_pitch(pitch_for_dialect(d) + 3.0), d);
        }
    }

    #[test]
    fn rendered_turns_are_recovered_by_vad() {
        let turns = vec![
            ToneTurn { dialect: DialectRegion::Bern, start: Millis(500), end: Millis(3_000) },
            ToneTurn { dialect: DialectRegion::Zurich, start: Millis(4_000), end: Millis(6_500) },
        ];
        let buf = render_episode(&turns, Millis(8_000), 16_000);
        let iv = energy_vad(&buf, &VadParams::default());
        assert_eq!(iv, vec![(0.5, 3.0), (4.0, 6.5)]);
        let clip = audio::slice(&buf, 4.0, 6.5).unwrap();
        let f = estimate_pitch_hz(clip.samples(), 16_000);
        assert_eq!(dialect_for_pitch(f), DialectRegion::Zurich);
    }

    #[test]
    fn random_layout_is_on_grid_and_disjoint() {
        let t = random_episode(&[DialectRegion::Basel, DialectRegion::Valais], Millis(60_000), 3);
        assert!(!t.is_empty());
        for w in t.windows(2) {
            assert!(w[0].end.0 + 600 <= w[1].start.0);
        }
        assert!(t.iter().all(|x| x.start.0 % 20 == 0 && x.end.0 % 20 == 0));
    }

    #[test]
    fn sentences_are_deterministic() {
        assert_eq!(sentences(5, 1), sentences(5, 1));
        assert_ne!(sentences(5, 1), sentences(5, 2));
    }
}
