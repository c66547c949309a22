#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dialektpipe::did::write_labeled_corpus;
use dialektpipe::model::{DialectRegion, Millis};
use dialektpipe::pipeline::PipelineConfig;
use dialektpipe::synth;

/// Inputs for a pipeline run: a local catalog of synthetic tone episodes,
/// a labeled phoneme corpus and a config using stub backends.
pub struct Corpus {
    pub root: PathBuf,
    pub episodes: Vec<synth::SyntheticEpisode>,
}

pub const EPISODE_SECONDS: i64 = 75;

pub fn corpus(root: &Path, seed: u64) -> Corpus {
    let episodes = synth::random_corpus(3, Millis::from_secs(EPISODE_SECONDS), seed);
    synth::write_local_catalog(&root.join("catalog"), &episodes, 16_000).unwrap();
    write_labeled_corpus(
        &root.join("did.tsv"),
        &synth::dialect_corpus(&DialectRegion::ALL, 60, 60, seed),
    )
    .unwrap();
    Corpus {
        root: root.to_path_buf(),
        episodes,
    }
}

pub fn config_text(extra: &str) -> String {
    format!(
        r#"
created_at = "2024-01-01T00:00:00Z"
seed = 7

[ingest]
local = "catalog"
overrides = "catalog/overrides.tsv"

[did]
train_corpus = "did.tsv"
min_speaker_s = 10.0

[backends.diarizer]
transport = "stub"
max_parallel = 2

[backends.asr]
transport = "stub"
max_parallel = 3

[backends.phonemizer]
transport = "stub"
max_parallel = 2
{extra}"#
    )
}

pub fn config(c: &Corpus, workspace: &Path, extra: &str) -> PipelineConfig {
    PipelineConfig::parse(&config_text(extra), &c.root, Some(workspace.to_path_buf()), None).unwrap()
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
