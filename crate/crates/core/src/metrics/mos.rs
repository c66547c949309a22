use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One rater's judgement of one item. Blank cells are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosSample {
    pub item_id: String,
    pub rater_id: String,
    pub smos: Option<i8>,
    pub cmos: Option<i8>,
    pub intelligibility: Option<i8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosField {
    Smos,
    Cmos,
    Intelligibility,
}

impl MosField {
    pub const ALL: [MosField; 3] = [MosField::Smos, MosField::Cmos, MosField::Intelligibility];

    pub fn range(self) -> (i8, i8) {
        match self {
            MosField::Smos | MosField::Intelligibility => (1, 5),
            MosField::Cmos => (-3, 3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MosField::Smos => "smos",
            MosField::Cmos => "cmos",
            MosField::Intelligibility => "intelligibility",
        }
    }

    pub fn get(self, s: &MosSample) -> Option<i8> {
        match self {
            MosField::Smos => s.smos,
            MosField::Cmos => s.cmos,
            MosField::Intelligibility => s.intelligibility,
        }
    }
}

impl MosSample {
    pub fn validate(&self) -> Result<()> {
        for f in MosField::ALL {
            if let Some(v) = f.get(self) {
                let (lo, hi) = f.range();
                if v < lo || v > hi {
                    return Err(Error::invalid(
                        "rating",
                        format!("{} = {v} outside {lo}..{hi}", f.name()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); `None` when n < 2.
    pub std: Option<f64>,
    pub n: usize,
}

impl fmt::Display for MosStats {
    /// `mean±std` with two decimals, e.g. `3.81±0.86`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.2}±{:.2}", self.mean, s),
            None => write!(f, "{:.2}±n/a", self.mean),
        }
    }
}

/// Mean and sample standard deviation of one rating field, skipping
/// samples where that field is blank.
pub fn aggregate_mos(samples: &[MosSample], field: MosField) -> Result<MosStats> {
    let values: Vec<f64> = samples
        .iter()
        .filter_map(|s| field.get(s))
        .map(f64::from)
        .collect();
    if values.is_empty() {
        return Err(Error::invalid(
            "mos",
            format!("no {} ratings to aggregate", field.name()),
        ));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(MosStats { mean, std, n })
}

/// Parses one rating cell; blank is `None`. Errors cite `source:row`.
pub fn parse_rating_cell(cell: &str, field: MosField, source: &str, row: usize) -> Result<Option<i8>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: i8 = cell.parse().map_err(|_| {
        Error::parse(source, row, format!("{} value {cell:?} is not an integer", field.name()))
    })?;
    let (lo, hi) = field.range();
    if v < lo || v > hi {
        return Err(Error::parse(
            source,
            row,
            format!("{} = {v} outside {lo}..{hi}", field.name()),
        ));
    }
    Ok(Some(v))
}

#[derive(Debug, Deserialize)]
struct RatingRow {
    item_id: String,
    rater_id: String,
    smos: String,
    cmos: String,
    intelligibility: String,
}

/// Reads a ratings CSV with header `item_id,rater_id,smos,cmos,intelligibility`.
/// Row numbers in errors count the header as row 1.
pub fn read_ratings_csv<R: Read>(reader: R) -> Result<Vec<MosSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<RatingRow>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| Error::parse("ratings", row, e.to_string()))?;
        out.push(MosSample {
            smos: parse_rating_cell(&r.smos, MosField::Smos, "ratings", row)?,
            cmos: parse_rating_cell(&r.cmos, MosField::Cmos, "ratings", row)?,
            intelligibility: parse_rating_cell(&r.intelligibility, MosField::Intelligibility, "ratings", row)?,
            item_id: r.item_id,
            rater_id: r.rater_id,
        });
    }
    Ok(out)
}
