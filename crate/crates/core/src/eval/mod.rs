//! Evaluation of voice-adaptation systems: evaluation-set construction,
//! automated back-translation / similarity / dialect scoring, and human
//! rating sheets.

mod auto;
mod human;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::DialectRegion;

pub use auto::{run_auto_eval, AutoEvalConfig, MetricReport, MetricRow, ModelUnderTest};
pub use human::{
    aggregate_human, prepare_human_sheets, read_sheet, HumanAssignment, MosCell, MosReport, MosRow, RatingSlot,
    SHEET_HEADER,
};

pub const TEXTS_PER_SCENARIO: usize = 50;
pub const SPEAKERS_PER_DIALECT: usize = 4;
pub const CLIPS_PER_SPEAKER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Short,
    Long,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Short => "short",
            ScenarioName::Long => "long",
        }
    }

    /// Expected utterance duration range in seconds.
    pub fn expected_duration_range_s(self) -> (f64, f64) {
        match self {
            ScenarioName::Short => (5.0, 7.0),
            ScenarioName::Long => (10.0, 15.0),
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short" => Ok(ScenarioName::Short),
            "long" => Ok(ScenarioName::Long),
            other => Err(Error::invalid("scenario", format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalScenario {
    pub name: ScenarioName,
    pub texts: Vec<String>,
    pub expected_duration_range_s: (f64, f64),
}

impl EvalScenario {
    pub fn new(name: ScenarioName, texts: Vec<String>) -> Self {
        EvalScenario {
            name,
            texts,
            expected_duration_range_s: name.expected_duration_range_s(),
        }
    }

    /// One text per non-blank line.
    pub fn from_file(name: ScenarioName, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let texts = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Ok(EvalScenario::new(name, texts))
    }
}

/// One speaker available for voice adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEntry {
    pub dialect: DialectRegion,
    pub speaker_id: String,
    pub clips: Vec<PathBuf>,
}

/// Reads `dialect<TAB>speaker_id<TAB>clip_path` lines, one clip per line.
/// Relative clip paths resolve against the table's directory.
pub fn read_speaker_table(path: &Path) -> Result<Vec<SpeakerEntry>> {
    let text = fs::read_to_string(path).at(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let name = path.display().to_string();
    let mut map: BTreeMap<(DialectRegion, String), Vec<PathBuf>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(&name, i + 1, "expected dialect<TAB>speaker_id<TAB>clip_path"));
        }
        let dialect: DialectRegion = cols[0]
            .trim()
            .parse()
            .map_err(|e: Error| Error::parse(&name, i + 1, e.to_string()))?;
        map.entry((dialect, cols[1].trim().to_string()))
            .or_default()
            .push(base.join(cols[2].trim()));
    }
    Ok(map
        .into_iter()
        .map(|((dialect, speaker_id), clips)| SpeakerEntry {
            dialect,
            speaker_id,
            clips,
        })
        .collect())
}

pub fn write_speaker_table(path: &Path, speakers: &[SpeakerEntry]) -> Result<()> {
    let mut s = String::new();
    for sp in speakers {
        for c in &sp.clips {
            s += &format!("{}\t{}\t{}\n", sp.dialect, sp.speaker_id, c.display());
        }
    }
    fs::write(path, s).at(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub scenario: ScenarioName,
    /// Empty until the item is run against a model.
    pub model_tag: String,
    pub dialect: DialectRegion,
    pub speaker_id: String,
    pub text_index: usize,
    pub text: String,
    pub reference_clips: Vec<PathBuf>,
    pub generated_audio: Option<PathBuf>,
    pub back_translation: Option<String>,
}

impl EvalItem {
    /// `scenario:model:dialect:speaker:tNNN`, the id used on rating sheets.
    pub fn sheet_id(&self) -> String {
        format!(
            "{}:{}:{}:{}:t{:03}",
            self.scenario, self.model_tag, self.dialect, self.speaker_id, self.text_index
        )
    }
}

/// Writes one JSON item per line.
pub fn write_items(path: &Path, items: &[EvalItem]) -> Result<()> {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("item serializes"));
        s.push('\n');
    }
    fs::write(path, s).at(path)
}

pub fn read_items(path: &Path) -> Result<Vec<EvalItem>> {
    let text = fs::read_to_string(path).at(path)?;
    let name = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(&name, i + 1, e.to_string())))
        .collect()
}

/// Builds the evaluation set: the same 50 sampled texts for 4 sampled
/// speakers of every dialect in the table, each speaker with 5 sampled
/// reference clips. All seven Swiss regions are required; Standard German
/// is included when the table lists it.
pub fn build_eval_set(scenario: &EvalScenario, speakers: &[SpeakerEntry], seed: u64) -> Result<Vec<EvalItem>> {
    if scenario.texts.len() < TEXTS_PER_SCENARIO {
        return Err(Error::Precondition(format!(
            "{} scenario has {} texts, need {TEXTS_PER_SCENARIO}",
            scenario.name,
            scenario.texts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text_idx: Vec<usize> = (0..scenario.texts.len()).collect::<Vec<_>>();
    text_idx.shuffle(&mut rng);
    text_idx.truncate(TEXTS_PER_SCENARIO);

    let mut dialects: Vec<DialectRegion> = DialectRegion::SWISS.to_vec();
    if speakers.iter().any(|s| s.dialect == DialectRegion::German) {
        dialects.push(DialectRegion::German);
    }
    dialects.sort();

    let mut items = Vec::new();
    for d in dialects {
        let mut eligible: Vec<&SpeakerEntry> = speakers
            .iter()
            .filter(|s| s.dialect == d && s.clips.len() >= CLIPS_PER_SPEAKER)
            .collect();
        if eligible.len() < SPEAKERS_PER_DIALECT {
            return Err(Error::Precondition(format!(
                "dialect {d}: {} speakers with at least {CLIPS_PER_SPEAKER} clips, need {SPEAKERS_PER_DIALECT}",
                eligible.len()
            )));
        }
        eligible.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
        let mut chosen: Vec<&SpeakerEntry> = eligible
            .choose_multiple(&mut rng, SPEAKERS_PER_DIALECT)
            .copied()
            .collect();
        chosen.sort_by(|a, b| a.speaker_id.cmp(&b.speaker_id));
        for sp in chosen {
            let clips: Vec<PathBuf> = sp
                .clips
                .choose_multiple(&mut rng, CLIPS_PER_SPEAKER)
                .cloned()
                .collect();
            for (k, &t) in text_idx.iter().enumerate() {
                items.push(EvalItem {
                    item_id: format!("{}:{}:{}:t{k:03}", scenario.name, d, sp.speaker_id),
                    scenario: scenario.name,
                    model_tag: String::new(),
                    dialect: d,
                    speaker_id: sp.speaker_id.clone(),
                    text_index: k,
                    text: scenario.texts[t].clone(),
                    reference_clips: clips.clone(),
                    generated_audio: None,
                    back_translation: None,
                });
            }
        }
    }
    Ok(items)
}

/// File-name-safe form of a model tag.
pub(crate) fn safe_name(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(per_dialect: usize, clips: usize, dialects: &[DialectRegion]) -> Vec<SpeakerEntry> {
        dialects
            .iter()
            .flat_map(|d| {
                (0..per_dialect).map(move |s| SpeakerEntry {
                    dialect: *d,
                    speaker_id: format!("{d}-{s}"),
                    clips: (0..clips).map(|c| PathBuf::from(format!("{d}-{s}-{c}.wav"))).collect(),
                })
            })
            .collect()
    }

    fn scenario() -> EvalScenario {
        EvalScenario::new(ScenarioName::Short, (0..60).map(|i| format!("Satz {i}.")).collect())
    }

    #[test]
    fn full_inputs_give_1400_items() {
        let items = build_eval_set(&scenario(), &table(6, 8, &DialectRegion::SWISS), 7).unwrap();
        assert_eq!(items.len(), 1400);
        for d in DialectRegion::SWISS {
            assert_eq!(items.iter().filter(|i| i.dialect == d).count(), 200);
        }
        assert!(items.iter().all(|i| i.reference_clips.len() == CLIPS_PER_SPEAKER));
        assert_eq!(items, build_eval_set(&scenario(), &table(6, 8, &DialectRegion::SWISS), 7).unwrap());
        assert_ne!(items, build_eval_set(&scenario(), &table(6, 8, &DialectRegion::SWISS), 8).unwrap());
    }

    #[test]
    fn german_is_included_when_listed() {
        let items = build_eval_set(&scenario(), &table(4, 5, &DialectRegion::ALL), 1).unwrap();
        assert_eq!(items.len(), 1600);
    }

    #[test]
    fn three_speakers_is_an_error_naming_the_dialect() {
        let mut t = table(4, 5, &DialectRegion::SWISS);
        t.retain(|s| s.speaker_id != "Valais-2");
        let e = build_eval_set(&scenario(), &t, 1).unwrap_err().to_string();
        assert!(e.contains("Valais"), "{e}");
        let mut t = table(4, 5, &DialectRegion::SWISS);
        t[0].clips.pop();
        assert!(build_eval_set(&scenario(), &t, 1).unwrap_err().to_string().contains("Basel"));
        let few = EvalScenario::new(ScenarioName::Long, vec!["a".into(); 49]);
        assert!(build_eval_set(&few, &table(4, 5, &DialectRegion::SWISS), 1).is_err());
    }

    #[test]
    fn speaker_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("speakers.tsv");
        let mut t = table(2, 3, &[DialectRegion::Bern]);
        for s in &mut t {
            for c in &mut s.clips {
                *c = dir.path().join(&*c);
            }
        }
        write_speaker_table(&p, &t).unwrap();
        assert_eq!(read_speaker_table(&p).unwrap(), t);
    }
}
