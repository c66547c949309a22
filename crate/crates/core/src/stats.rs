//! Per-dialect corpus statistics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::model::{DialectRegion, Millis, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    /// `None` for the Total row.
    pub dialect: Option<DialectRegion>,
    pub samples: u64,
    pub duration: Millis,
    /// Whitespace tokens of transcripts.
    pub tokens: u64,
    /// Share of total duration in percent; 0 when the corpus is empty.
    pub pct: f64,
}

impl StatsRow {
    pub fn label(&self) -> &'static str {
        self.dialect.map_or("Total", DialectRegion::as_str)
    }

    pub fn length_h(&self) -> f64 {
        self.duration.0 as f64 / 3_600_000.0
    }

    pub fn tokens_m(&self) -> f64 {
        self.tokens as f64 / 1e6
    }

    fn cells(&self) -> [String; 5] {
        [
            self.label().to_string(),
            self.samples.to_string(),
            format!("{:.2}", self.length_h()),
            format!("{:.2}%", self.pct),
            format!("{:.2}", self.tokens_m()),
        ]
    }

    /// Unaligned row, e.g. `Zurich  440  1178.58  23.67%  14.13`.
    pub fn render(&self) -> String {
        self.cells().join("  ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    /// One row per dialect in [`DialectRegion::ALL`] order.
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

/// Tallies samples, duration and tokens per dialect. Every segment must
/// carry a dialect label.
pub fn corpus_stats(manifest: &Manifest) -> Result<CorpusStats> {
    segment_stats(manifest.segments())
}

pub fn segment_stats(segments: &[Segment]) -> Result<CorpusStats> {
    let unlabeled: Vec<&str> = segments
        .iter()
        .filter(|s| s.dialect.is_none())
        .map(|s| s.segment_id.as_str())
        .collect();
    if !unlabeled.is_empty() {
        return Err(Error::invalid(
            "corpus stats",
            format!("segments without dialect: {}", unlabeled.join(", ")),
        ));
    }
    let mut rows: Vec<StatsRow> = DialectRegion::ALL
        .iter()
        .map(|d| StatsRow {
            dialect: Some(*d),
            samples: 0,
            duration: Millis::ZERO,
            tokens: 0,
            pct: 0.0,
        })
        .collect();
    for s in segments {
        let row = &mut rows[s.dialect.expect("checked above").index()];
        row.samples += 1;
        row.duration = row.duration + s.duration();
        row.tokens += s.transcript.as_deref().map_or(0, |t| t.split_whitespace().count()) as u64;
    }
    let mut total = StatsRow {
        dialect: None,
        samples: rows.iter().map(|r| r.samples).sum(),
        duration: rows.iter().map(|r| r.duration).sum(),
        tokens: rows.iter().map(|r| r.tokens).sum(),
        pct: 0.0,
    };
    if total.duration > Millis::ZERO {
        for r in &mut rows {
            r.pct = 100.0 * r.duration.0 as f64 / total.duration.0 as f64;
        }
        total.pct = 100.0;
    }
    Ok(CorpusStats { rows, total })
}

impl CorpusStats {
    pub fn row(&self, dialect: DialectRegion) -> &StatsRow {
        &self.rows[dialect.index()]
    }

    /// Aligned table: label left, numbers right.
    pub fn render_text(&self) -> String {
        let header = ["Dialect", "Samples", "Length (h)", "%", "Tokens (M)"].map(str::to_string);
        let body: Vec<[String; 5]> = self.rows.iter().chain([&self.total]).map(StatsRow::cells).collect();
        let mut width = header.clone().map(|h| h.len());
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&header).chain(&body) {
            let parts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = width[i])
                    } else {
                        format!("{c:>w$}", w = width[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  "));
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("dialect,samples,duration_s,length_h,pct,tokens,tokens_m\n");
        for r in self.rows.iter().chain([&self.total]) {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.4},{},{:.6}",
                r.label(),
                r.samples,
                r.duration,
                r.length_h(),
                r.pct,
                r.tokens,
                r.tokens_m()
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ManifestHeader;
    use crate::model::LanguageClass;
    use proptest::prelude::*;

    fn seg(id: &str, dialect: Option<DialectRegion>, secs: i64, text: &str) -> Segment {
        Segment {
            segment_id: id.into(),
            episode_id: id.into(),
            podcast_id: "p".into(),
            speaker_tag: "s".into(),
            start: Millis::ZERO,
            end: Millis::from_secs(secs),
            audio_path: format!("{id}.wav").into(),
            transcript: (!text.trim().is_empty()).then(|| text.into()),
            dialect,
            language_class: LanguageClass::Swiss,
        }
    }

    fn manifest(segs: Vec<Segment>) -> Manifest {
        Manifest::new(ManifestHeader::new("t", "h"), segs).unwrap()
    }

    #[test]
    fn hand_fixture() {
        let segs = [
            seg("a", Some(DialectRegion::Zurich), 10, "a b"),
            seg("b", Some(DialectRegion::Zurich), 20, "c"),
            seg("c", Some(DialectRegion::Bern), 30, "d d"),
        ];
        let stats = segment_stats(&segs).unwrap();
        let z = stats.row(DialectRegion::Zurich);
        assert_eq!((z.samples, z.duration, z.tokens, z.pct), (2, Millis::from_secs(30), 3, 50.0));
        let b = stats.row(DialectRegion::Bern);
        assert_eq!((b.samples, b.duration, b.tokens, b.pct), (1, Millis::from_secs(30), 2, 50.0));
        assert_eq!((stats.total.samples, stats.total.tokens, stats.total.pct), (3, 5, 100.0));
    }

    #[test]
    fn empty_manifest_is_all_zeros() {
        let s = corpus_stats(&Manifest::empty(ManifestHeader::new("t", "h"))).unwrap();
        assert!(s.rows.iter().chain([&s.total]).all(|r| r.samples == 0 && r.pct == 0.0 && r.tokens == 0));
        assert_eq!(
            s.render_text().lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>(),
            ["Basel", "0", "0.00", "0.00%", "0.00"]
        );
    }

    #[test]
    fn missing_dialect_lists_ids() {
        let m = manifest(vec![seg("x1", None, 5, "a"), seg("x2", Some(DialectRegion::Bern), 5, "a"), seg("x3", None, 5, "")]);
        let e = corpus_stats(&m).unwrap_err().to_string();
        assert!(e.contains("x1") && e.contains("x3") && !e.contains("x2"), "{e}");
    }

    #[test]
    fn row_format() {
        let r = StatsRow {
            dialect: Some(DialectRegion::Zurich),
            samples: 440,
            duration: Millis(4_242_888_000),
            tokens: 14_130_000,
            pct: 23.67,
        };
        assert_eq!(r.render(), "Zurich  440  1178.58  23.67%  14.13");
    }

    proptest! {
        #[test]
        fn totals_are_column_sums(spec in prop::collection::vec((0usize..8, 2i64..16, 0usize..5), 0..40)) {
            let segs: Vec<Segment> = spec
                .iter()
                .enumerate()
                .map(|(i, (d, secs, words))| seg(&format!("s{i}"), Some(DialectRegion::ALL[*d]), *secs, &"w ".repeat(*words)))
                .collect();
            let s = corpus_stats(&manifest(segs)).unwrap();
            prop_assert_eq!(s.total.samples, s.rows.iter().map(|r| r.samples).sum::<u64>());
            prop_assert_eq!(s.total.tokens, s.rows.iter().map(|r| r.tokens).sum::<u64>());
            prop_assert_eq!(s.total.duration, s.rows.iter().map(|r| r.duration).sum::<Millis>());
            if !spec.is_empty() {
                let pct: f64 = s.rows.iter().map(|r| r.pct).sum();
                prop_assert!((pct - 100.0).abs() <= 0.01);
            }
        }
    }
}
