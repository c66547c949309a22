//! Evaluation measures: WER, BLEU, DER, speaker similarity, MOS aggregation
//! and the rank test used to flag significant MOS differences.

mod assignment;
mod bleu;
mod der;
mod mos;
mod mwu;
mod text;
mod wer;

pub use assignment::max_weight_assignment;
pub use bleu::{bleu, BleuStats};
pub use der::{der, der_breakdown, DerBreakdown};
pub use mos::{aggregate_mos, parse_rating_cell, read_ratings_csv, MosField, MosSample, MosStats};
pub use mwu::{significance, Significance, TestMethod, EXACT_MAX_GROUP};
pub use text::{normalize_text, TextNormConfig};
pub use wer::{corpus_wer, edit_counts, wer, EditCounts};

use crate::error::{Error, Result};

/// Cosine of the angle between two embeddings, clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "embedding",
            format!("dimension mismatch {} vs {}", a.len(), b.len()),
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::invalid("embedding", "zero vector has no direction"));
    }
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): identical inputs give exactly 1
    Ok((dot / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}
