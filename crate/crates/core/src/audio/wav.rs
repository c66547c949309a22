use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioBuffer;
use crate::error::{Error, IoContext, Result};

const I16_SCALE: f32 = 32_768.0;

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => {
            Error::UnsupportedFormat(format!("{}: malformed WAV: {msg}", path.display()))
        }
        hound::Error::Unsupported => {
            Error::UnsupportedFormat(format!("{}: unsupported WAV encoding", path.display()))
        }
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    }
}

/// Reads a canonical 16-bit PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}: audio_format is IEEE float, expected PCM",
            path.display()
        )));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: bits_per_sample = {}, expected 16",
            path.display(),
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: num_channels = {}, expected 1",
            path.display(),
            spec.channels
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / I16_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| hound_err(path, e))?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Samples outside [-1, 1] are clipped.
pub fn write_wav(buffer: &AudioBuffer, path: &Path) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    {
        let mut w16 = w.get_i16_writer(buffer.len() as u32);
        for &s in buffer.samples() {
            let q = (s * I16_SCALE).round().clamp(-32_768.0, 32_767.0) as i16;
            w16.write_sample(q);
        }
        w16.flush().map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

/// Names the container of a non-WAV file from its magic bytes.
fn sniff_codec(head: &[u8]) -> &'static str {
    match head {
        [b'I', b'D', b'3', ..] => "mp3",
        [0xFF, b, ..] if b & 0xE0 == 0xE0 => "mp3",
        [b'O', b'g', b'g', b'S', ..] => "ogg",
        [b'f', b'L', b'a', b'C', ..] => "flac",
        [_, _, _, _, b'f', b't', b'y', b'p', ..] => "mp4/aac",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'A', b'V', b'E', ..] => "wav",
        _ => "unknown",
    }
}

/// Decodes any PCM/float WAV and down-mixes to mono by averaging channels.
///
/// Used at ingest, where source files may be stereo or use other sample
/// widths; everything downstream reads the canonical form via [`read_wav`].
pub fn decode_any(path: &Path) -> Result<AudioBuffer> {
    let mut head = [0u8; 12];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .at(path)?;
    let codec = sniff_codec(&head[..n]);
    if codec != "wav" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: codec {codec} is not supported (expected RIFF/WAVE)",
            path.display()
        )));
    }

    let reader = WavReader::new(BufReader::new(File::open(path).at(path)?))
        .map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| hound_err(path, e))?,
        SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| hound_err(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_second_of_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_wav(&AudioBuffer::silence(16_000, 16_000).unwrap(), &p).unwrap();
        let b = read_wav(&p).unwrap();
        assert_eq!(b.len(), 16_000);
        assert!(b.samples().iter().all(|s| *s == 0.0));
        assert_eq!(b.sample_rate_hz(), 16_000);
    }

    #[test]
    fn noise_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<f32> = (0..8000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let b = AudioBuffer::new(samples, 8_000).unwrap();
        write_wav(&b, &p).unwrap();
        let back = read_wav(&p).unwrap();
        let max_err = b
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 2f32.powi(-15), "{max_err}");
    }

    fn write_raw(path: &Path, spec: WavSpec, frames: usize) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for i in 0..frames * spec.channels as usize {
            match spec.sample_format {
                SampleFormat::Int => w.write_sample((i as i32 % 7) * 100).unwrap(),
                SampleFormat::Float => w.write_sample(0.25f32).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn rejects_24_bit_float_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let base = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        write_raw(&p, base, 10);
        let e = read_wav(&p).unwrap_err().to_string();
        assert!(e.contains("bits_per_sample = 24"), "{e}");

        write_raw(&p, WavSpec { channels: 2, bits_per_sample: 16, ..base }, 10);
        let e = read_wav(&p).unwrap_err().to_string();
        assert!(e.contains("num_channels = 2"), "{e}");

        write_raw(
            &p,
            WavSpec { bits_per_sample: 32, sample_format: SampleFormat::Float, ..base },
            10,
        );
        let e = read_wav(&p).unwrap_err().to_string();
        assert!(e.contains("audio_format"), "{e}");
    }

    #[test]
    fn decode_any_downmixes_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(16_384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let b = decode_any(&p).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.samples().iter().all(|s| (*s - 0.25).abs() < 1e-6));
    }

    #[test]
    fn decode_any_names_foreign_codec() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mp3");
        std::fs::write(&p, b"ID3\x04\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let e = decode_any(&p).unwrap_err().to_string();
        assert!(e.contains("codec mp3"), "{e}");
    }
}
