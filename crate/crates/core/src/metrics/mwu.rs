//! Two-sided Mann–Whitney U test.
//!
//! When the smaller group has at most [`EXACT_MAX_GROUP`] members the null
//! distribution of the rank sum is enumerated exactly (ties use mid-ranks);
//! otherwise a normal approximation with tie and continuity correction is
//! used.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const EXACT_MAX_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Significance {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub significant: bool,
    pub method: TestMethod,
}

/// Mid-ranks of the pooled sample, doubled so that they are integers.
fn doubled_ranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean; doubled: (i+1) + (j+1)
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Number of size-`k` subsets of `ranks` with each possible sum.
fn subset_sum_counts(ranks: &[u64], k: usize) -> Vec<u128> {
    let max_sum: u64 = {
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.iter().take(k).sum()
    };
    let width = max_sum as usize + 1;
    let mut counts = vec![vec![0u128; width]; k + 1];
    counts[0][0] = 1;
    for (seen, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=k.min(seen + 1)).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let (src, dst) = (&lower[j - 1], &mut upper[0]);
            for s in (r..width).rev() {
                if src[s - r] != 0 {
                    dst[s] += src[s - r];
                }
            }
        }
    }
    counts.swap_remove(k)
}

pub fn significance(a: &[f64], b: &[f64], alpha: f64) -> Result<Significance> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::invalid(
            "significance",
            format!("need at least 3 ratings per group, got {} and {}", a.len(), b.len()),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("significance", "non-finite rating"));
    }
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_ranks(&pooled);
    let rank_sum_a2: u64 = ranks[..n].iter().sum();
    let u = rank_sum_a2 as f64 / 2.0 - (n * (n + 1)) as f64 / 2.0;
    let big_n = n + m;

    let (p_value, method) = if n.min(m) <= EXACT_MAX_GROUP {
        // enumerate the smaller group's doubled rank sum
        let (k, observed) = if n <= m {
            (n, rank_sum_a2)
        } else {
            (m, ranks[n..].iter().sum())
        };
        let expected = (k * (big_n + 1)) as i128;
        let obs_dev = (observed as i128 - expected).abs();
        let counts = subset_sum_counts(&ranks, k);
        let total: u128 = counts.iter().sum();
        let extreme: u128 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as i128 - expected).abs() >= obs_dev)
            .map(|(_, c)| *c)
            .sum();
        ((extreme as f64 / total as f64).min(1.0), TestMethod::Exact)
    } else {
        let (nf, mf, nn) = (n as f64, m as f64, big_n as f64);
        let mut tie_term = 0.0;
        let mut sorted = pooled.clone();
        sorted.sort_by(f64::total_cmp);
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let var = nf * mf / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let dev = ((u - nf * mf / 2.0).abs() - 0.5).max(0.0);
            let z = dev / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        (p, TestMethod::Normal)
    };

    Ok(Significance {
        u,
        p_value,
        significant: p_value < alpha,
        method,
    })
}
