use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use dialektpipe::backend::{open_backend, read_backend_specs, Backend, BackendKind};
use dialektpipe::did::NbModel;
use dialektpipe::eval::{
    aggregate_human, build_eval_set, prepare_human_sheets, read_items, read_speaker_table, run_auto_eval, write_items,
    AutoEvalConfig, EvalScenario, ModelUnderTest, ScenarioName,
};
use dialektpipe::Error;

use crate::corpus::BackendArgs;

#[derive(Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    scenario: ScenarioName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Build the evaluation set, synthesize it with every model and score
    /// WER, BLEU, SIM and DID per dialect.
    Auto {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Input texts, one per line.
        #[arg(long)]
        texts: PathBuf,
        /// `dialect<TAB>speaker_id<TAB>clip_path` lines.
        #[arg(long)]
        speakers: PathBuf,
        /// Dialect classifier trained with `did train`.
        #[arg(long)]
        did_model: PathBuf,
        /// `TAG` uses the `[tts]` backend of `--backends`; `TAG=FILE` reads
        /// the `[tts]` table of FILE. Repeat per model.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        /// Writes `report.txt`, `report.csv`, `items.jsonl` and generated
        /// audio here.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backends: BackendArgs,
    },
    /// Sample items for human rating and write one CSV sheet per rater.
    HumanPrepare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `items.jsonl` written by `eval auto`.
        #[arg(long)]
        items: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        raters: Vec<String>,
        #[arg(long, default_value_t = 6)]
        per_dialect: usize,
        #[arg(long, default_value_t = 2)]
        raters_per_sample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate completed sheets into mean±std with significance flags.
    HumanAggregate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory searched recursively for `.csv` sheets.
        #[arg(long)]
        sheets: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn tts_for(spec: &str, shared: &BackendArgs) -> anyhow::Result<(String, Box<dyn Backend>)> {
    match spec.split_once('=') {
        Some((tag, file)) => {
            let specs = read_backend_specs(Path::new(file))?;
            let s = specs
                .get(&BackendKind::Tts)
                .ok_or_else(|| Error::Config(format!("{file}: no [tts] table")))?;
            Ok((tag.to_string(), open_backend(s)?))
        }
        None => Ok((spec.to_string(), shared.open(BackendKind::Tts)?)),
    }
}

fn sheets_under(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            sheets_under(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    Ok(())
}

pub fn run(cmd: EvalCommand) -> anyhow::Result<()> {
    match cmd {
        EvalCommand::Auto {
            scenario,
            texts,
            speakers,
            did_model,
            models,
            out,
            backends,
        } => {
            let sc = EvalScenario::from_file(scenario.scenario, &texts)?;
            let items = build_eval_set(&sc, &read_speaker_table(&speakers)?, scenario.seed)?;
            let tts: Vec<(String, Box<dyn Backend>)> =
                models.iter().map(|m| tts_for(m, &backends)).collect::<anyhow::Result<_>>()?;
            let under_test: Vec<ModelUnderTest> = tts
                .iter()
                .map(|(tag, b)| ModelUnderTest {
                    tag: tag.clone(),
                    tts: b.as_ref(),
                })
                .collect();
            let asr = backends.open(BackendKind::Asr)?;
            let embedder = backends.open(BackendKind::Embedder)?;
            let phonemizer = backends.open(BackendKind::Phonemizer)?;
            let model = NbModel::load(&did_model)?;
            let cfg = AutoEvalConfig::new(out.join("work"));
            let (report, evaluated) = run_auto_eval(
                &items,
                &under_test,
                asr.as_ref(),
                embedder.as_ref(),
                phonemizer.as_ref(),
                &model,
                &cfg,
            )?;
            let text = report.render_text();
            fs::write(out.join("report.txt"), &text).map_err(|e| Error::io(out.join("report.txt"), e))?;
            fs::write(out.join("report.csv"), report.render_csv()).map_err(|e| Error::io(out.join("report.csv"), e))?;
            write_items(&out.join("items.jsonl"), &evaluated)?;
            print!("{text}");
        }
        EvalCommand::HumanPrepare {
            scenario,
            items,
            raters,
            per_dialect,
            raters_per_sample,
            out,
        } => {
            let items: Vec<_> = read_items(&items)?
                .into_iter()
                .filter(|i| i.scenario == scenario.scenario)
                .collect();
            let a = prepare_human_sheets(&items, &raters, per_dialect, raters_per_sample, scenario.seed, &out)?;
            let groups: BTreeSet<(ScenarioName, String)> =
                a.slots.iter().map(|s| (s.scenario, s.model_tag.clone())).collect();
            for (sc, tag) in groups {
                let load = a.load(sc, &tag);
                let slots: usize = load.values().sum();
                let (lo, hi) = (load.values().min().unwrap_or(&0), load.values().max().unwrap_or(&0));
                println!("{sc}\t{tag}\t{slots} slots\t{lo}-{hi} per rater");
            }
        }
        EvalCommand::HumanAggregate {
            scenario,
            sheets,
            baseline,
            alpha,
            csv,
        } => {
            let dir = sheets.join(scenario.scenario.as_str());
            let dir = if dir.is_dir() { dir } else { sheets };
            let mut files = Vec::new();
            sheets_under(&dir, &mut files)?;
            let mut report = aggregate_human(&files, &baseline, alpha)?;
            report.rows.retain(|r| r.scenario == scenario.scenario);
            if let Some(p) = &csv {
                fs::write(p, report.render_csv()).map_err(|e| Error::io(p, e))?;
            }
            print!("{}", report.render_text());
        }
    }
    Ok(())
}
