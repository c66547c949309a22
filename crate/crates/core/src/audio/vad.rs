use serde::{Deserialize, Serialize};

use super::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadParams {
    pub frame_ms: f64,
    /// Frames whose mean power exceeds this level (dB re full scale) are speech.
    pub energy_threshold_db: f64,
    pub min_speech_ms: f64,
    pub min_gap_ms: f64,
}

impl Default for VadParams {
    fn default() -> Self {
        VadParams {
            frame_ms: 20.0,
            energy_threshold_db: -40.0,
            min_speech_ms: 200.0,
            min_gap_ms: 300.0,
        }
    }
}

pub fn frame_energy_db(frame: &[f32]) -> f64 {
    if frame.is_empty() {
        return f64::NEG_INFINITY;
    }
    let power = frame.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / frame.len() as f64;
    10.0 * power.log10()
}

/// Returns sorted, disjoint `(start_s, end_s)` speech intervals.
///
/// Active frames are grouped into runs; runs separated by less than
/// `min_gap_ms` are merged, then intervals shorter than `min_speech_ms`
/// are dropped.
pub fn energy_vad(buffer: &AudioBuffer, params: &VadParams) -> Vec<(f64, f64)> {
    let rate = buffer.sample_rate_hz() as f64;
    let frame_len = ((params.frame_ms * rate / 1000.0).round() as usize).max(1);
    let n = buffer.len();
    let to_s = |sample: usize| sample.min(n) as f64 / rate;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, frame) in buffer.samples().chunks(frame_len).enumerate() {
        if frame_energy_db(frame) <= params.energy_threshold_db {
            continue;
        }
        let (a, b) = (i * frame_len, (i * frame_len + frame.len()).min(n));
        match runs.last_mut() {
            Some(last) if last.1 == a => last.1 = b,
            _ => runs.push((a, b)),
        }
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if (to_s(run.0) - to_s(last.1)) * 1000.0 < params.min_gap_ms => {
                last.1 = run.1
            }
            _ => merged.push(run),
        }
    }

    merged
        .into_iter()
        .map(|(a, b)| (to_s(a), to_s(b)))
        .filter(|(a, b)| (b - a) * 1000.0 >= params.min_speech_ms)
        .collect()
}

/// Rough fundamental frequency from the rate of upward zero crossings.
/// Only meaningful for tonal fixtures.
pub fn estimate_pitch_hz(samples: &[f32], sample_rate_hz: u32) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let crossings = samples
        .windows(2)
        .filter(|w| w[0] < 0.0 && w[1] >= 0.0)
        .count();
    crossings as f64 * sample_rate_hz as f64 / samples.len() as f64
}
