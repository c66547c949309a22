//! Band-limited sample-rate conversion with a Kaiser-windowed sinc kernel.

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Kernel half-width, in samples of the lower of the two rates.
pub const TAPS_PER_SIDE: usize = 64;
/// Cutoff as a fraction of the lower Nyquist frequency.
pub const CUTOFF_FACTOR: f64 = 0.945;
pub const KAISER_BETA: f64 = 8.6;

/// Largest number of distinct kernel phases that is tabulated up front.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// A converter between two fixed rates. Construct once and reuse across
/// buffers; kernel phases are tabulated when the rate ratio allows.
#[derive(Debug, Clone)]
pub struct Resampler {
    source_hz: u64,
    target_hz: u64,
    /// Kernel half-width in input samples.
    half_width: f64,
    /// Cutoff in cycles per input sample.
    cutoff: f64,
    taps: usize,
    i0_beta: f64,
    /// Reduced ratio `source/target = step_num/step_den`.
    step_num: u64,
    step_den: u64,
    table: Option<Vec<f64>>,
}

impl Resampler {
    pub fn new(source_hz: u32, target_hz: u32) -> Result<Self> {
        if source_hz == 0 || target_hz == 0 {
            return Err(Error::invalid(
                "resample",
                format!("rates must be positive, got {source_hz} -> {target_hz}"),
            ));
        }
        let (s, t) = (source_hz as u64, target_hz as u64);
        let g = gcd(s, t);
        let lower = s.min(t) as f64;
        let half_width = TAPS_PER_SIDE as f64 * (s as f64 / t as f64).max(1.0);
        let mut r = Resampler {
            source_hz: s,
            target_hz: t,
            half_width,
            cutoff: lower / 2.0 * CUTOFF_FACTOR / s as f64,
            taps: 2 * half_width.ceil() as usize,
            i0_beta: bessel_i0(KAISER_BETA),
            step_num: s / g,
            step_den: t / g,
            table: None,
        };
        if r.step_den <= MAX_TABLE_PHASES && s != t {
            let mut table = Vec::with_capacity(r.step_den as usize * r.taps);
            for phase in 0..r.step_den {
                let frac = phase as f64 / r.step_den as f64;
                table.extend(r.weights(frac));
            }
            r.table = Some(table);
        }
        Ok(r)
    }

    fn kernel(&self, d: f64) -> f64 {
        let t = d / self.half_width;
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - t * t).sqrt()) / self.i0_beta;
        let x = 2.0 * self.cutoff * d;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        2.0 * self.cutoff * sinc * window
    }

    /// Normalized weights for input taps `base - taps/2 + 1 ..= base + taps/2`
    /// around a fractional position `base + frac`.
    fn weights(&self, frac: f64) -> Vec<f64> {
        let half = (self.taps / 2) as i64;
        let mut w: Vec<f64> = (-half + 1..=half)
            .map(|k| self.kernel(frac - k as f64))
            .collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        w
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        let n = input_len as u128;
        ((2 * n * self.target_hz as u128 + self.source_hz as u128) / (2 * self.source_hz as u128))
            as usize
    }

    pub fn process(&self, input: &AudioBuffer) -> Result<AudioBuffer> {
        if input.sample_rate_hz() as u64 != self.source_hz {
            return Err(Error::invalid(
                "resample",
                format!(
                    "buffer rate {} does not match resampler source rate {}",
                    input.sample_rate_hz(),
                    self.source_hz
                ),
            ));
        }
        if self.source_hz == self.target_hz {
            return Ok(input.clone());
        }
        let x = input.samples();
        let n_out = self.output_len(x.len());
        if x.is_empty() {
            return AudioBuffer::new(Vec::new(), self.target_hz as u32);
        }
        let last = x.len() as i64 - 1;
        let half = (self.taps / 2) as i64;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for i in 0..n_out as u64 {
            // input position i * num / den, split into integer and phase
            let pos = i * self.step_num;
            let base = (pos / self.step_den) as i64;
            let phase = pos % self.step_den;
            let w: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * self.taps..(phase as usize + 1) * self.taps],
                None => {
                    scratch = self.weights(phase as f64 / self.step_den as f64);
                    &scratch
                }
            };
            let first = base - half + 1;
            let acc: f64 = if first >= 0 && first + self.taps as i64 - 1 <= last {
                let start = first as usize;
                x[start..start + self.taps]
                    .iter()
                    .zip(w)
                    .map(|(s, w)| *s as f64 * w)
                    .sum()
            } else {
                w.iter()
                    .enumerate()
                    .map(|(j, w)| x[(first + j as i64).clamp(0, last) as usize] as f64 * w)
                    .sum()
            };
            out.push(acc as f32);
        }
        AudioBuffer::new(out, self.target_hz as u32)
    }
}

/// Converts `buffer` to `target_rate_hz`. Edges are extended by repeating
/// the first and last samples.
pub fn resample(buffer: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    Resampler::new(buffer.sample_rate_hz(), target_rate_hz)?.process(buffer)
}
