//! Signal utilities: WAV I/O, slicing, concatenation, resampling and an
//! energy-based voice activity detector.

mod resample;
mod vad;
mod wav;

pub use resample::{resample, Resampler, CUTOFF_FACTOR, KAISER_BETA, TAPS_PER_SIDE};
pub use vad::{energy_vad, estimate_pitch_hz, frame_energy_db, VadParams};
pub use wav::{decode_any, read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono PCM audio held as floating-point samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::invalid("audio buffer", "sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(
                "audio buffer",
                format!("non-finite sample at index {i}"),
            ));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Result<Self> {
        AudioBuffer::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    fn index_of(&self, t_s: f64) -> usize {
        (t_s * self.sample_rate_hz as f64).round() as usize
    }
}

/// Copies the samples in `[start_s, end_s)`.
///
/// Bounds are mapped to sample indices by rounding each endpoint, so slicing
/// a buffer along a partition of its timeline and concatenating the pieces
/// reproduces the original exactly.
pub fn slice(buffer: &AudioBuffer, start_s: f64, end_s: f64) -> Result<AudioBuffer> {
    let duration = buffer.duration_s();
    let half_sample = 0.5 / buffer.sample_rate_hz as f64;
    if !(start_s >= 0.0) || !(start_s < end_s) || end_s > duration + half_sample {
        return Err(Error::invalid(
            "slice bounds",
            format!("need 0 <= start < end <= {duration:.6}, got [{start_s}, {end_s}]"),
        ));
    }
    let a = buffer.index_of(start_s);
    let b = buffer.index_of(end_s).min(buffer.len());
    Ok(AudioBuffer {
        samples: buffer.samples[a..b].to_vec(),
        sample_rate_hz: buffer.sample_rate_hz,
    })
}

pub fn concat(buffers: &[AudioBuffer]) -> Result<AudioBuffer> {
    let first = buffers
        .first()
        .ok_or_else(|| Error::invalid("concat", "no buffers given; sample rate unknown"))?;
    let rate = first.sample_rate_hz;
    if let Some(b) = buffers.iter().find(|b| b.sample_rate_hz != rate) {
        return Err(Error::invalid(
            "concat",
            format!("mixed sample rates {} and {}", rate, b.sample_rate_hz),
        ));
    }
    let total = buffers.iter().map(AudioBuffer::len).sum();
    let mut samples = Vec::with_capacity(total);
    for b in buffers {
        samples.extend_from_slice(&b.samples);
    }
    Ok(AudioBuffer {
        samples,
        sample_rate_hz: rate,
    })
}

/// A sine tone, used by fixtures and the stub backends.
pub fn tone(freq_hz: f64, duration_s: f64, sample_rate_hz: u32, amplitude: f32) -> AudioBuffer {
    let n = (duration_s * sample_rate_hz as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz as f64;
    let samples = (0..n)
        .map(|i| amplitude * (w * i as f64).sin() as f32)
        .collect();
    AudioBuffer {
        samples,
        sample_rate_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize, rate: u32) -> AudioBuffer {
        AudioBuffer::new((0..n).map(|i| (i % 100) as f32 / 100.0).collect(), rate).unwrap()
    }

    #[test]
    fn slice_whole_range_is_identity() {
        let b = ramp(1234, 16_000);
        let s = slice(&b, 0.0, b.duration_s()).unwrap();
        assert_eq!(s, b);
    }

    #[test]
    fn slice_first_fifteen_seconds_of_37() {
        let b = AudioBuffer::silence(37 * 16_000, 16_000).unwrap();
        assert_eq!(slice(&b, 0.0, 15.0).unwrap().len(), 240_000);
    }

    #[test]
    fn slice_rejects_bad_bounds() {
        let b = ramp(16_000, 16_000);
        assert!(slice(&b, 0.5, 0.5).is_err());
        assert!(slice(&b, -0.1, 0.5).is_err());
        assert!(slice(&b, 0.5, 1.1).is_err());
    }

    #[test]
    fn concat_lengths_and_errors() {
        let ten = AudioBuffer::silence(10 * 8_000, 8_000).unwrap();
        let joined = concat(&[ten.clone(), ten.clone(), ten.clone()]).unwrap();
        assert_eq!(joined.duration_s(), 30.0);
        assert_eq!(concat(std::slice::from_ref(&ten)).unwrap(), ten);
        assert!(concat(&[]).is_err());
        let other = AudioBuffer::silence(10, 16_000).unwrap();
        assert!(concat(&[ten, other]).is_err());
    }

    #[test]
    fn non_finite_samples_rejected() {
        assert!(AudioBuffer::new(vec![0.0, f32::NAN], 8_000).is_err());
        assert!(AudioBuffer::new(vec![], 0).is_err());
    }

    proptest! {
        #[test]
        fn slice_partition_concat_reconstructs(
            len_ms in 10u32..3000,
            mut cuts in proptest::collection::vec(1u32..3000, 0..6),
            rate in prop_oneof![Just(8_000u32), Just(16_000), Just(22_050), Just(44_100)],
        ) {
            let n = (len_ms as f64 / 1000.0 * rate as f64).round() as usize;
            let b = ramp(n, rate);
            cuts.retain(|c| *c < len_ms);
            cuts.push(0);
            cuts.push(len_ms);
            cuts.sort_unstable();
            cuts.dedup();
            let pieces: Vec<_> = cuts
                .windows(2)
                .map(|w| slice(&b, w[0] as f64 / 1000.0, w[1] as f64 / 1000.0).unwrap())
                .collect();
            prop_assert_eq!(concat(&pieces).unwrap(), b);
        }
    }
}
