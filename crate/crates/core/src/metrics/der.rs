use std::collections::{BTreeMap, BTreeSet};

use super::assignment::max_weight_assignment;
use crate::error::{Error, Result};
use crate::model::{Millis, SpeakerTurn};

/// Time components of a diarization error, all in milliseconds of scored time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerBreakdown {
    pub missed: Millis,
    pub false_alarm: Millis,
    pub confusion: Millis,
    pub reference_speech: Millis,
    /// Reference speaker tag to the hypothesis tag it was mapped to.
    pub mapping: BTreeMap<String, String>,
}

impl DerBreakdown {
    pub fn rate(&self) -> f64 {
        (self.missed.0 + self.false_alarm.0 + self.confusion.0) as f64 / self.reference_speech.0 as f64
    }
}

/// Merges possibly overlapping intervals into a sorted disjoint list.
fn union(mut spans: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    spans.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(spans.len());
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Scores `hypothesis` against `reference`.
///
/// Time within `collar` of any reference turn boundary is not scored.
/// Speakers are matched one-to-one so as to maximise the jointly active
/// time; overlapping speech counts each active reference speaker.
pub fn der_breakdown(reference: &[SpeakerTurn], hypothesis: &[SpeakerTurn], collar: Millis) -> Result<DerBreakdown> {
    let no_score = union(
        reference
            .iter()
            .flat_map(|t| [t.start, t.end])
            .filter(|_| collar > Millis::ZERO)
            .map(|b| (b.0 - collar.0, b.0 + collar.0))
            .collect(),
    );

    let ref_tags: Vec<&str> = reference
        .iter()
        .map(|t| t.speaker_tag.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hyp_tags: Vec<&str> = hypothesis
        .iter()
        .map(|t| t.speaker_tag.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut cuts: Vec<i64> = reference
        .iter()
        .chain(hypothesis)
        .flat_map(|t| [t.start.0, t.end.0])
        .chain(no_score.iter().flat_map(|(a, b)| [*a, *b]))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let active = |turns: &[SpeakerTurn], tags: &[&str], a: i64, b: i64| -> Vec<usize> {
        let mut idx: Vec<usize> = turns
            .iter()
            .filter(|t| t.start.0 <= a && t.end.0 >= b)
            .map(|t| tags.binary_search(&t.speaker_tag.as_str()).unwrap())
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    };

    let mut overlap = vec![vec![0i64; hyp_tags.len()]; ref_tags.len()];
    let (mut total, mut missed, mut fa, mut paired) = (0i64, 0i64, 0i64, 0i64);
    let mut skip = no_score.iter().peekable();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while skip.peek().is_some_and(|z| z.1 <= a) {
            skip.next();
        }
        if skip.peek().is_some_and(|z| z.0 <= a && z.1 >= b) {
            continue;
        }
        let dur = b - a;
        let r = active(reference, &ref_tags, a, b);
        let h = active(hypothesis, &hyp_tags, a, b);
        total += r.len() as i64 * dur;
        missed += r.len().saturating_sub(h.len()) as i64 * dur;
        fa += h.len().saturating_sub(r.len()) as i64 * dur;
        paired += r.len().min(h.len()) as i64 * dur;
        for &i in &r {
            for &j in &h {
                overlap[i][j] += dur;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("der", "reference contains no scored speech"));
    }

    let assignment = max_weight_assignment(&overlap);
    let mut matched = 0;
    let mut mapping = BTreeMap::new();
    for (i, j) in assignment.iter().enumerate() {
        if let Some(j) = *j {
            matched += overlap[i][j];
            mapping.insert(ref_tags[i].to_string(), hyp_tags[j].to_string());
        }
    }
    Ok(DerBreakdown {
        missed: Millis(missed),
        false_alarm: Millis(fa),
        confusion: Millis(paired - matched),
        reference_speech: Millis(total),
        mapping,
    })
}

pub fn der(reference: &[SpeakerTurn], hypothesis: &[SpeakerTurn], collar: Millis) -> Result<f64> {
    Ok(der_breakdown(reference, hypothesis, collar)?.rate())
}
