use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_len += other.reference_len;
    }
}

/// Minimum-cost alignment with unit costs. Among optimal alignments the
/// backtrace prefers matches/substitutions, then deletions.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut counts = EditCounts {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if here == d[(i - 1) * w + j - 1] + diff {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Word error rate `(S + D + I) / |reference|`.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("wer", "reference is empty"));
    }
    let c = edit_counts(reference, hypothesis);
    Ok(c.errors() as f64 / reference.len() as f64)
}

/// Corpus WER: total errors over total reference tokens.
pub fn corpus_wer<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    let mut total = EditCounts::default();
    for (r, h) in pairs {
        total.add(&edit_counts(r, h));
    }
    if total.reference_len == 0 {
        return Err(Error::invalid("wer", "corpus has no reference tokens"));
    }
    Ok(total.errors() as f64 / total.reference_len as f64)
}
