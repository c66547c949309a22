use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{safe_name, EvalItem, ScenarioName};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{aggregate_mos, parse_rating_cell, significance, MosField, MosSample, MosStats};
use crate::model::DialectRegion;

pub const SHEET_HEADER: [&str; 7] = [
    "item_id",
    "audio_path",
    "reference_audio_path",
    "text",
    "smos",
    "cmos",
    "intelligibility",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingSlot {
    pub scenario: ScenarioName,
    pub model_tag: String,
    pub dialect: DialectRegion,
    /// Sheet item id, `scenario:model:dialect:speaker:tNNN`.
    pub item_id: String,
    pub rater_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanAssignment {
    pub slots: Vec<RatingSlot>,
    pub sheets: Vec<PathBuf>,
}

impl HumanAssignment {
    /// Slots per rater for one scenario and model.
    pub fn load(&self, scenario: ScenarioName, model_tag: &str) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for s in self
            .slots
            .iter()
            .filter(|s| s.scenario == scenario && s.model_tag == model_tag)
        {
            *out.entry(s.rater_id.clone()).or_insert(0) += 1;
        }
        out
    }
}

fn group_seed(seed: u64, scenario: ScenarioName, model: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}\0{scenario}\0{model}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Samples `per_dialect` generated items of every Swiss dialect for each
/// scenario and model, assigns each to `raters_per_sample` distinct raters
/// round-robin over a seeded rater order, and writes one sheet per rater
/// to `out_dir/<scenario>/<model>/<rater>.csv`.
pub fn prepare_human_sheets(
    items: &[EvalItem],
    raters: &[String],
    per_dialect: usize,
    raters_per_sample: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<HumanAssignment> {
    if raters.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 raters, got {}", raters.len())));
    }
    if raters_per_sample == 0 || raters_per_sample > raters.len() {
        return Err(Error::Precondition(format!(
            "cannot give each item {raters_per_sample} distinct raters out of {}",
            raters.len()
        )));
    }
    let unique: BTreeSet<&String> = raters.iter().collect();
    if unique.len() != raters.len() {
        return Err(Error::Precondition("duplicate rater id".into()));
    }
    if let Some(bad) = raters.iter().find(|r| r.is_empty() || safe_name(r) != **r) {
        return Err(Error::Precondition(format!(
            "rater id {bad:?} may only use letters, digits, '-', '_' and '.'"
        )));
    }

    let mut groups: BTreeMap<(ScenarioName, String), Vec<&EvalItem>> = BTreeMap::new();
    for it in items {
        if it.model_tag.is_empty() || it.model_tag.contains(':') {
            return Err(Error::Precondition(format!(
                "{}: model tag {:?} must be non-empty without ':'",
                it.item_id, it.model_tag
            )));
        }
        groups
            .entry((it.scenario, it.model_tag.clone()))
            .or_default()
            .push(it);
    }
    if groups.is_empty() {
        return Err(Error::Precondition("no evaluated items".into()));
    }

    let mut assignment = HumanAssignment {
        slots: Vec::new(),
        sheets: Vec::new(),
    };
    for ((scenario, model), group) in groups {
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(seed, scenario, &model));
        let mut chosen: Vec<&EvalItem> = Vec::new();
        for d in DialectRegion::SWISS {
            let pool: Vec<&EvalItem> = group
                .iter()
                .copied()
                .filter(|i| i.dialect == d && i.generated_audio.is_some())
                .collect();
            if pool.len() < per_dialect {
                return Err(Error::Precondition(format!(
                    "{scenario}/{model}: dialect {d} has {} generated items, need {per_dialect}",
                    pool.len()
                )));
            }
            chosen.extend(pool.choose_multiple(&mut rng, per_dialect).copied());
        }
        chosen.shuffle(&mut rng);
        let mut order: Vec<&String> = raters.iter().collect();
        order.shuffle(&mut rng);

        let mut sheets: BTreeMap<&String, String> = order
            .iter()
            .map(|r| (*r, SHEET_HEADER.join(",") + "\n"))
            .collect();
        for (i, it) in chosen.iter().enumerate() {
            for j in 0..raters_per_sample {
                let rater = order[(i * raters_per_sample + j) % order.len()];
                let id = it.sheet_id();
                let sheet = sheets.get_mut(rater).expect("rater sheet");
                let _ = writeln!(
                    sheet,
                    "{},{},{},{},,,",
                    csv_field(&id),
                    csv_field(&it.generated_audio.as_ref().expect("generated").to_string_lossy()),
                    csv_field(&it.reference_clips.first().map(|p| p.to_string_lossy()).unwrap_or_default()),
                    csv_field(&it.text)
                );
                assignment.slots.push(RatingSlot {
                    scenario,
                    model_tag: model.clone(),
                    dialect: it.dialect,
                    item_id: id,
                    rater_id: rater.clone(),
                });
            }
        }
        let dir = out_dir.join(scenario.as_str()).join(safe_name(&model));
        fs::create_dir_all(&dir).at(&dir)?;
        for (rater, body) in sheets {
            let path = dir.join(format!("{rater}.csv"));
            fs::write(&path, body).at(&path)?;
            assignment.sheets.push(path);
        }
    }
    Ok(assignment)
}

#[derive(Debug, Deserialize)]
struct SheetRow {
    item_id: String,
    smos: String,
    cmos: String,
    intelligibility: String,
}

/// One completed sheet row.
#[derive(Debug, Clone, PartialEq)]
pub struct SheetRating {
    pub scenario: ScenarioName,
    pub model_tag: String,
    pub sample: MosSample,
}

fn parse_sheet_cell(cell: &str, field: MosField, source: &str, row: usize) -> Result<Option<i8>> {
    match cell.trim() {
        "" => Err(Error::parse(
            source,
            row,
            format!("{} is unfilled; write NA for a missing rating", field.name()),
        )),
        "NA" | "na" | "-" => Ok(None),
        other => parse_rating_cell(other, field, source, row),
    }
}

/// Reads a completed rating sheet. The rater id is the file stem. Every
/// rating cell must hold a value or `NA`.
pub fn read_sheet(path: &Path) -> Result<Vec<SheetRating>> {
    let source = path.display().to_string();
    let rater = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Precondition(format!("{source}: no file name")))?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(&source, 1, e.to_string()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SheetRow>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| Error::parse(&source, row, e.to_string()))?;
        let parts: Vec<&str> = r.item_id.split(':').collect();
        if parts.len() != 5 {
            return Err(Error::parse(
                &source,
                row,
                format!("item_id {:?} is not scenario:model:dialect:speaker:tNNN", r.item_id),
            ));
        }
        let scenario: ScenarioName = parts[0]
            .parse()
            .map_err(|e: Error| Error::parse(&source, row, e.to_string()))?;
        out.push(SheetRating {
            scenario,
            model_tag: parts[1].to_string(),
            sample: MosSample {
                smos: parse_sheet_cell(&r.smos, MosField::Smos, &source, row)?,
                cmos: parse_sheet_cell(&r.cmos, MosField::Cmos, &source, row)?,
                intelligibility: parse_sheet_cell(&r.intelligibility, MosField::Intelligibility, &source, row)?,
                item_id: r.item_id,
                rater_id: rater.clone(),
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosCell {
    /// `None` when no rating was given for this field.
    pub stats: Option<MosStats>,
    /// Differs significantly from the baseline model.
    pub vs_baseline: bool,
    /// Differs significantly from some other non-baseline model.
    pub vs_other: bool,
}

impl MosCell {
    /// `mean±std` followed by `*` and/or `†` flags.
    pub fn render(&self) -> String {
        match &self.stats {
            None => "-".to_string(),
            Some(s) => format!(
                "{s}{}{}",
                if self.vs_baseline { "*" } else { "" },
                if self.vs_other { "†" } else { "" }
            ),
        }
    }

    pub fn n(&self) -> usize {
        self.stats.map_or(0, |s| s.n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosRow {
    pub model_tag: String,
    pub scenario: ScenarioName,
    /// SMOS, CMOS, Intelligibility.
    pub cells: [MosCell; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosReport {
    pub baseline: String,
    pub alpha: f64,
    pub rows: Vec<MosRow>,
}

impl MosReport {
    pub fn row(&self, model_tag: &str, scenario: ScenarioName) -> Option<&MosRow> {
        self.rows
            .iter()
            .find(|r| r.model_tag == model_tag && r.scenario == scenario)
    }

    pub fn render_text(&self) -> String {
        let header = ["Model", "Scenario", "SMOS", "n", "CMOS", "n", "Intelligibility", "n"];
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v = vec![r.model_tag.clone(), r.scenario.to_string()];
                for c in &r.cells {
                    v.push(c.render());
                    v.push(c.n().to_string());
                }
                v
            })
            .collect();
        let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let pad = |c: &str, w: usize| format!("{c}{}", " ".repeat(w - c.chars().count()));
        let mut out = String::new();
        let rows = std::iter::once(header.iter().map(|s| s.to_string()).collect::<Vec<_>>()).chain(body);
        for row in rows {
            let parts: Vec<String> = row.iter().zip(&width).map(|(c, w)| pad(c, *w)).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("model,scenario,smos,smos_n,cmos,cmos_n,intelligibility,intelligibility_n\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.model_tag, r.scenario);
            for c in &r.cells {
                let _ = write!(out, ",{},{}", c.render(), c.n());
            }
            out.push('\n');
        }
        out
    }
}

fn values(samples: &[MosSample], field: MosField) -> Vec<f64> {
    samples.iter().filter_map(|s| field.get(s)).map(f64::from).collect()
}

fn differs(a: &[MosSample], b: &[MosSample], field: MosField, alpha: f64) -> bool {
    // groups too small for the test are never flagged
    significance(&values(a, field), &values(b, field), alpha).is_ok_and(|s| s.significant)
}

/// Aggregates completed sheets into mean±std per model and scenario.
/// `*` marks a significant difference from `baseline`; `†` marks one from
/// another non-baseline model. Both use the Mann–Whitney U test at `alpha`.
pub fn aggregate_human(sheets: &[PathBuf], baseline: &str, alpha: f64) -> Result<MosReport> {
    let mut groups: BTreeMap<(ScenarioName, String), Vec<MosSample>> = BTreeMap::new();
    for path in sheets {
        for r in read_sheet(path)? {
            groups.entry((r.scenario, r.model_tag)).or_default().push(r.sample);
        }
    }
    let scenarios: BTreeSet<ScenarioName> = groups.keys().map(|(s, _)| *s).collect();
    let mut rows = Vec::new();
    for scenario in scenarios {
        let mut models: Vec<&String> = groups
            .keys()
            .filter(|(s, _)| *s == scenario)
            .map(|(_, m)| m)
            .collect();
        models.sort_by_key(|m| (m.as_str() != baseline, m.as_str()));
        let base = groups.get(&(scenario, baseline.to_string()));
        for m in &models {
            let samples = &groups[&(scenario, (*m).clone())];
            let cells = MosField::ALL.map(|field| {
                let stats = aggregate_mos(samples, field).ok();
                let is_base = m.as_str() == baseline;
                let vs_baseline = !is_base && base.is_some_and(|b| differs(samples, b, field, alpha));
                let vs_other = !is_base
                    && models
                        .iter()
                        .filter(|o| o.as_str() != baseline && *o != m)
                        .any(|o| differs(samples, &groups[&(scenario, (*o).clone())], field, alpha));
                MosCell { stats, vs_baseline, vs_other }
            });
            rows.push(MosRow {
                model_tag: (*m).clone(),
                scenario,
                cells,
            });
        }
    }
    Ok(MosReport {
        baseline: baseline.to_string(),
        alpha,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(models: &[&str], per_dialect: usize) -> Vec<EvalItem> {
        let mut out = Vec::new();
        for m in models {
            for d in DialectRegion::ALL {
                for k in 0..per_dialect {
                    out.push(EvalItem {
                        item_id: format!("short:{d}:sp:t{k:03}"),
                        scenario: ScenarioName::Short,
                        model_tag: m.to_string(),
                        dialect: d,
                        speaker_id: "sp".into(),
                        text_index: k,
                        text: format!("Text, \"{k}\""),
                        reference_clips: vec![PathBuf::from("ref.wav")],
                        generated_audio: Some(PathBuf::from(format!("{m}-{d}-{k}.wav"))),
                        back_translation: None,
                    });
                }
            }
        }
        out
    }

    fn raters(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn six_raters_share_84_slots_evenly() {
        let dir = tempfile::tempdir().unwrap();
        let a = prepare_human_sheets(&items(&["base", "srg"], 10), &raters(6), 6, 2, 9, dir.path()).unwrap();
        for m in ["base", "srg"] {
            let load = a.load(ScenarioName::Short, m);
            assert_eq!(load.values().sum::<usize>(), 84);
            assert!(load.values().all(|n| (13..=15).contains(n)), "{load:?}");
        }
        assert_eq!(a.sheets.len(), 12);
        let mut pairs = BTreeSet::new();
        for s in &a.slots {
            assert!(pairs.insert((s.item_id.clone(), s.rater_id.clone())), "rater twice on {}", s.item_id);
        }
        let b = prepare_human_sheets(&items(&["base", "srg"], 10), &raters(6), 6, 2, 9, dir.path()).unwrap();
        assert_eq!(a, b);
        let rows = read_sheet(&a.sheets[0]).unwrap_err().to_string();
        assert!(rows.contains("unfilled"), "{rows}");
    }

    #[test]
    fn infeasible_assignments_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(prepare_human_sheets(&items(&["m"], 10), &raters(1), 6, 2, 0, dir.path()).is_err());
        assert!(prepare_human_sheets(&items(&["m"], 10), &raters(2), 6, 3, 0, dir.path()).is_err());
        assert!(prepare_human_sheets(&items(&["m"], 5), &raters(4), 6, 2, 0, dir.path()).is_err());
    }

    fn write_sheet(dir: &Path, rater: &str, rows: &[(&str, &str, &str, &str)]) -> PathBuf {
        let mut s = SHEET_HEADER.join(",") + "\n";
        for (id, a, b, c) in rows {
            s += &format!("{id},g.wav,r.wav,text,{a},{b},{c}\n");
        }
        let p = dir.join(format!("{rater}.csv"));
        fs::write(&p, s).unwrap();
        p
    }

    #[test]
    fn identical_ratings_are_not_significant() {
        let dir = tempfile::tempdir().unwrap();
        let rows = |m: &str| -> Vec<(String, &str, &str, &str)> {
            (0..10).map(|k| (format!("short:{m}:Bern:sp:t{k:03}"), "4", "0", "NA")).collect()
        };
        let mut all = rows("base");
        all.extend(rows("srg"));
        let refs: Vec<(&str, &str, &str, &str)> = all.iter().map(|(a, b, c, d)| (a.as_str(), *b, *c, *d)).collect();
        let p = write_sheet(dir.path(), "r1", &refs);
        let rep = aggregate_human(&[p], "base", 0.05).unwrap();
        assert_eq!(rep.rows[0].model_tag, "base");
        let srg = rep.row("srg", ScenarioName::Short).unwrap();
        assert_eq!(srg.cells[0].render(), "4.00±0.00");
        assert!(!srg.cells[0].vs_baseline);
        assert_eq!(srg.cells[2].stats, None);
        assert_eq!(srg.cells[2].render(), "-");
        assert!(rep.render_text().contains("4.00±0.00  10"));
    }

    #[test]
    fn shifted_ratings_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for k in 0..84 {
            let low = ["1", "2", "3"][k % 3];
            let high = ["3", "4", "5"][k % 3];
            rows.push((format!("long:base:Basel:s:t{k:03}"), low));
            rows.push((format!("long:a:Basel:s:t{k:03}"), high));
            rows.push((format!("long:b:Basel:s:t{k:03}"), high));
            rows.push((format!("long:c:Basel:s:t{k:03}"), low));
        }
        let refs: Vec<(&str, &str, &str, &str)> = rows.iter().map(|(id, v)| (id.as_str(), *v, "0", *v)).collect();
        let p = write_sheet(dir.path(), "r", &refs);
        let rep = aggregate_human(&[p], "base", 0.05).unwrap();
        let a = &rep.row("a", ScenarioName::Long).unwrap().cells[0];
        assert!(a.vs_baseline && a.vs_other);
        assert!(a.render().ends_with("*†"));
        let c = &rep.row("c", ScenarioName::Long).unwrap().cells[0];
        assert!(!c.vs_baseline && c.vs_other);
        let cmos = &rep.row("a", ScenarioName::Long).unwrap().cells[1];
        assert!(!cmos.vs_baseline);
    }

    #[test]
    fn out_of_scale_rating_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_sheet(
            dir.path(),
            "r",
            &[("short:m:Bern:s:t000", "4", "0", "5"), ("short:m:Bern:s:t001", "6", "0", "5")],
        );
        let e = aggregate_human(&[p], "m", 0.05).unwrap_err().to_string();
        assert!(e.contains(":3:") && e.contains("smos"), "{e}");
    }
}
