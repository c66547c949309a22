use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn accumulate<T: Eq + Hash>(&mut self, reference: &[T], hypothesis: &[T]) {
        self.hyp_len += hypothesis.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let hyp = ngram_counts(hypothesis, n);
            let refs = ngram_counts(reference, n);
            self.totals[n - 1] += hypothesis.len().saturating_sub(n - 1);
            self.matches[n - 1] += hyp
                .iter()
                .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    /// Brevity penalty times the geometric mean of modified precisions.
    /// Orders 2..4 get one added to both matches and totals.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let (m, t) = if n == 0 {
                (self.matches[0] as f64, self.totals[0] as f64)
            } else {
                (self.matches[n] as f64 + 1.0, self.totals[n] as f64 + 1.0)
            };
            log_sum += (m / t).ln();
        }
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// Corpus-level BLEU in [0, 1] over aligned reference/hypothesis pairs.
pub fn bleu<T: Eq + Hash>(references: &[Vec<T>], hypotheses: &[Vec<T>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::invalid(
            "bleu",
            format!(
                "{} references but {} hypotheses",
                references.len(),
                hypotheses.len()
            ),
        ));
    }
    if references.is_empty() {
        return Err(Error::invalid("bleu", "empty corpus"));
    }
    let mut stats = BleuStats::default();
    for (r, h) in references.iter().zip(hypotheses) {
        stats.accumulate(r, h);
    }
    Ok(stats.score())
}
