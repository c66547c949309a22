use std::path::PathBuf;

use clap::Subcommand;
use dialektpipe::audio::{self, decode_any, energy_vad, write_wav, VadParams};

#[derive(Subcommand)]
pub enum AudioCommand {
    /// Convert to another sample rate.
    Resample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rate: u32,
    },
    /// Cut `[start, end)` seconds.
    Slice {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        start: f64,
        #[arg(long)]
        end: f64,
    },
    /// Join files of equal sample rate.
    Concat {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print speech intervals as `start<TAB>end` seconds.
    Vad {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = VadParams::default().frame_ms)]
        frame_ms: f64,
        #[arg(long, default_value_t = VadParams::default().energy_threshold_db, allow_negative_numbers = true)]
        threshold_db: f64,
        #[arg(long, default_value_t = VadParams::default().min_speech_ms)]
        min_speech_ms: f64,
        #[arg(long, default_value_t = VadParams::default().min_gap_ms)]
        min_gap_ms: f64,
    },
}

pub fn run(cmd: AudioCommand) -> anyhow::Result<()> {
    match cmd {
        AudioCommand::Resample { input, out, rate } => {
            write_wav(&audio::resample(&decode_any(&input)?, rate)?, &out)?;
        }
        AudioCommand::Slice { input, out, start, end } => {
            write_wav(&audio::slice(&decode_any(&input)?, start, end)?, &out)?;
        }
        AudioCommand::Concat { out, inputs } => {
            let buffers = inputs.iter().map(|p| decode_any(p)).collect::<Result<Vec<_>, _>>()?;
            write_wav(&audio::concat(&buffers)?, &out)?;
        }
        AudioCommand::Vad {
            input,
            frame_ms,
            threshold_db,
            min_speech_ms,
            min_gap_ms,
        } => {
            let params = VadParams {
                frame_ms,
                energy_threshold_db: threshold_db,
                min_speech_ms,
                min_gap_ms,
            };
            for (s, e) in energy_vad(&decode_any(&input)?, &params) {
                println!("{s:.3}\t{e:.3}");
            }
        }
    }
    Ok(())
}
