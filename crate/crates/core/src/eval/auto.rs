use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use super::{safe_name, EvalItem};
use crate::backend::{embed, phonemize, synthesize, transcribe, Backend, BatchOptions, SynthJob};
use crate::did::NbModel;
use crate::error::{Error, IoContext, Result};
use crate::metrics::{cosine_sim, edit_counts, normalize_text, BleuStats, EditCounts, TextNormConfig};
use crate::model::DialectRegion;

/// A TTS system under evaluation.
pub struct ModelUnderTest<'a> {
    pub tag: String,
    pub tts: &'a dyn Backend,
}

#[derive(Debug, Clone)]
pub struct AutoEvalConfig {
    /// Generated audio and per-stage completion logs live here.
    pub work_dir: PathBuf,
    pub norm: TextNormConfig,
}

impl AutoEvalConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        AutoEvalConfig {
            work_dir: work_dir.into(),
            norm: TextNormConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub model_tag: String,
    /// `None` for the Total row.
    pub dialect: Option<DialectRegion>,
    pub wer: Option<f64>,
    pub bleu: Option<f64>,
    pub sim: Option<f64>,
    pub did: Option<f64>,
    pub items_total: usize,
    pub items_scored: usize,
    pub items_failed: usize,
}

impl MetricRow {
    pub fn label(&self) -> &'static str {
        self.dialect.map_or("Total", DialectRegion::display_name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl MetricReport {
    pub fn row(&self, model_tag: &str, dialect: Option<DialectRegion>) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.model_tag == model_tag && r.dialect == dialect)
    }

    pub fn render_text(&self) -> String {
        let header = ["Model", "Dialect", "WER", "BLEU", "SIM", "DID", "Items", "Failed"];
        let body: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model_tag.clone(),
                    r.label().to_string(),
                    cell(r.wer),
                    cell(r.bleu),
                    cell(r.sim),
                    cell(r.did),
                    r.items_total.to_string(),
                    r.items_failed.to_string(),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cols: Vec<&str>| {
            let parts: Vec<String> = cols
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i < 2 {
                        format!("{c:<w$}", w = width[i])
                    } else {
                        format!("{c:>w$}", w = width[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec());
        for row in &body {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("model,dialect,wer,bleu,sim,did,items_total,items_scored,items_failed\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.model_tag,
                r.label(),
                cell(r.wer),
                cell(r.bleu),
                cell(r.sim),
                cell(r.did),
                r.items_total,
                r.items_scored,
                r.items_failed
            );
        }
        out
    }
}

/// What one scored item contributes to its cell.
struct Scored {
    dialect: DialectRegion,
    speaker_id: String,
    edits: EditCounts,
    reference: Vec<String>,
    hypothesis: Vec<String>,
    sim: f64,
    phonemes: Vec<String>,
}

#[derive(Default)]
struct Cell {
    total: usize,
    failed: usize,
    edits: EditCounts,
    bleu: BleuStats,
    sim_sum: f64,
    scored: usize,
    /// Speaker id to concatenated phonemes, in item order.
    speakers: BTreeMap<String, Vec<String>>,
    dialect_of: BTreeMap<String, DialectRegion>,
}

impl Cell {
    fn add(&mut self, s: &Scored) {
        self.edits.add(&s.edits);
        self.bleu.accumulate(&s.reference, &s.hypothesis);
        self.sim_sum += s.sim;
        self.scored += 1;
        let key = format!("{}\t{}", s.dialect, s.speaker_id);
        self.speakers.entry(key.clone()).or_default().extend(s.phonemes.iter().cloned());
        self.dialect_of.insert(key, s.dialect);
    }

    fn row(&self, model_tag: &str, dialect: Option<DialectRegion>, did: &NbModel) -> MetricRow {
        let scored = self.scored > 0;
        let did_acc = (!self.speakers.is_empty()).then(|| {
            let correct = self
                .speakers
                .iter()
                .filter(|(k, ph)| did.predict(ph).class == self.dialect_of[*k])
                .count();
            correct as f64 / self.speakers.len() as f64
        });
        MetricRow {
            model_tag: model_tag.to_string(),
            dialect,
            wer: (scored && self.edits.reference_len > 0)
                .then(|| self.edits.errors() as f64 / self.edits.reference_len as f64),
            bleu: scored.then(|| self.bleu.score()),
            sim: scored.then(|| self.sim_sum / self.scored as f64),
            did: did_acc,
            items_total: self.total,
            items_scored: self.scored,
            items_failed: self.failed,
        }
    }
}

fn generated_path(work_dir: &Path, tag: &str, item_id: &str) -> PathBuf {
    work_dir.join(safe_name(tag)).join(format!("{}.wav", safe_name(item_id)))
}

/// Runs every item through every model's TTS, then back-translates,
/// embeds and phonemizes the generated audio. An item is scored only when
/// every backend call for it succeeded; failures are counted per cell.
///
/// Returns the report and the items annotated with model tag, generated
/// audio and back-translation.
pub fn run_auto_eval(
    items: &[EvalItem],
    models: &[ModelUnderTest<'_>],
    asr: &dyn Backend,
    embedder: &dyn Backend,
    phonemizer: &dyn Backend,
    did_model: &NbModel,
    cfg: &AutoEvalConfig,
) -> Result<(MetricReport, Vec<EvalItem>)> {
    if models.is_empty() {
        return Err(Error::Precondition("no models to evaluate".into()));
    }
    for m in models {
        if m.tag.is_empty() || m.tag.contains(':') {
            return Err(Error::Precondition(format!("model tag {:?} must be non-empty without ':'", m.tag)));
        }
    }
    std::fs::create_dir_all(&cfg.work_dir).at(&cfg.work_dir)?;

    let mut ref_clips: Vec<PathBuf> = items.iter().flat_map(|i| i.reference_clips.iter().cloned()).collect();
    ref_clips.sort();
    ref_clips.dedup();
    info!("embedding {} reference clips", ref_clips.len());
    let ref_req: Vec<(String, PathBuf)> = ref_clips
        .iter()
        .map(|p| (p.to_string_lossy().into_owned(), p.clone()))
        .collect();
    let ref_emb: HashMap<PathBuf, Option<Vec<f64>>> = ref_clips
        .iter()
        .cloned()
        .zip(
            embed(embedder, &ref_req, &BatchOptions::with_log(cfg.work_dir.join("refs.embed.jsonl")))?
                .into_iter()
                .map(|r| r.embedding),
        )
        .collect();

    let mut report = MetricReport::default();
    let mut annotated = Vec::with_capacity(items.len() * models.len());
    for m in models {
        let dir = cfg.work_dir.join(safe_name(&m.tag));
        std::fs::create_dir_all(&dir).at(&dir)?;
        let log = |stage: &str| BatchOptions::with_log(dir.join(format!("{stage}.jsonl")));

        info!("{}: synthesizing {} items", m.tag, items.len());
        let jobs: Vec<SynthJob> = items
            .iter()
            .map(|i| SynthJob {
                id: i.item_id.clone(),
                text: i.text.clone(),
                reference_audio: i.reference_clips.clone(),
                dialect: i.dialect,
                out_path: generated_path(&cfg.work_dir, &m.tag, &i.item_id),
            })
            .collect();
        let synth = synthesize(m.tts, &jobs, &log("tts"))?;
        let generated: Vec<(String, PathBuf)> = synth
            .iter()
            .filter_map(|s| s.audio_path.clone().map(|p| (s.id.clone(), p)))
            .collect();

        info!("{}: back-translating, embedding and phonemizing {} clips", m.tag, generated.len());
        let asr_out: HashMap<String, Option<String>> = transcribe(asr, &generated, &log("asr"))?
            .into_iter()
            .map(|t| (t.segment_id, t.text))
            .collect();
        let emb_out: HashMap<String, Option<Vec<f64>>> = embed(embedder, &generated, &log("embed"))?
            .into_iter()
            .map(|e| (e.id, e.embedding))
            .collect();
        let ph_out: HashMap<String, Option<Vec<String>>> = phonemize(phonemizer, &generated, &log("phonemes"))?
            .into_iter()
            .map(|p| (p.id, p.phonemes))
            .collect();

        let mut cells: BTreeMap<DialectRegion, Cell> = BTreeMap::new();
        let mut total = Cell::default();
        for (item, s) in items.iter().zip(&synth) {
            let cell = cells.entry(item.dialect).or_default();
            cell.total += 1;
            if item.dialect.is_swiss() {
                total.total += 1;
            }
            let hyp = asr_out.get(&item.item_id).cloned().flatten();
            let scored = score_item(item, s.audio_path.is_some(), &hyp, &emb_out, &ph_out, &ref_emb, &cfg.norm)?;
            annotated.push(EvalItem {
                model_tag: m.tag.clone(),
                generated_audio: s.audio_path.clone(),
                back_translation: hyp,
                ..item.clone()
            });
            match scored {
                Some(sc) => {
                    cell.add(&sc);
                    if item.dialect.is_swiss() {
                        total.add(&sc);
                    }
                }
                None => {
                    cell.failed += 1;
                    if item.dialect.is_swiss() {
                        total.failed += 1;
                    }
                }
            }
        }
        let empty = Cell::default();
        for d in DialectRegion::REPORT_ORDER {
            report
                .rows
                .push(cells.get(&d).unwrap_or(&empty).row(&m.tag, Some(d), did_model));
        }
        report.rows.push(total.row(&m.tag, None, did_model));
    }
    Ok((report, annotated))
}

fn score_item(
    item: &EvalItem,
    synthesized: bool,
    hyp: &Option<String>,
    emb_out: &HashMap<String, Option<Vec<f64>>>,
    ph_out: &HashMap<String, Option<Vec<String>>>,
    ref_emb: &HashMap<PathBuf, Option<Vec<f64>>>,
    norm: &TextNormConfig,
) -> Result<Option<Scored>> {
    if !synthesized {
        return Ok(None);
    }
    let (Some(hyp), Some(Some(gen)), Some(Some(phonemes))) =
        (hyp, emb_out.get(&item.item_id), ph_out.get(&item.item_id))
    else {
        return Ok(None);
    };
    let mut sims = Vec::with_capacity(item.reference_clips.len());
    for clip in &item.reference_clips {
        match ref_emb.get(clip) {
            Some(Some(r)) => sims.push(cosine_sim(gen, r)?),
            _ => return Ok(None),
        }
    }
    let reference = normalize_text(&item.text, norm);
    let hypothesis = normalize_text(hyp, norm);
    Ok(Some(Scored {
        dialect: item.dialect,
        speaker_id: item.speaker_id.clone(),
        edits: edit_counts(&reference, &hypothesis),
        sim: sims.iter().sum::<f64>() / sims.len() as f64,
        reference,
        hypothesis,
        phonemes: phonemes.clone(),
    }))
}
