//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped and tied magnitudes share their average rank.
//! Up to [`EXACT_MAX_N`] non-zero differences the two-sided p-value is exact,
//! counting sign assignments with a dynamic program over doubled ranks. Beyond
//! that a normal approximation with tie and continuity corrections is used,
//! plus an Edgeworth term for the kurtosis of the rank-sum distribution.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

/// Largest sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum WilcoxonError {
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("every paired difference is zero")]
    AllZeroDifferences,
    #[error("samples must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    /// Two-sided.
    pub p: f64,
    pub method: PValueMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, WilcoxonError> {
    wilcoxon_with(x, y, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing the p-value method.
pub fn wilcoxon_with(
    x: &[f64],
    y: &[f64],
    method: Option<PValueMethod>,
) -> Result<WilcoxonResult, WilcoxonError> {
    if x.len() != y.len() {
        return Err(WilcoxonError::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(WilcoxonError::NonFinite);
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&d| d != 0.0).collect();
    if d.is_empty() {
        return Err(WilcoxonError::AllZeroDifferences);
    }
    let magnitudes: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w_minus = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w = w_plus.min(w_minus);
    let n = d.len();
    let method = method.unwrap_or(if n <= EXACT_MAX_N {
        PValueMethod::Exact
    } else {
        PValueMethod::Normal
    });
    let p = match method {
        PValueMethod::Exact => exact_p(&ranks, w),
        PValueMethod::Normal => normal_p(&ranks, w),
    };
    Ok(WilcoxonResult {
        w,
        w_plus,
        w_minus,
        n,
        p,
        method,
    })
}

/// Fraction of the `2^n` sign assignments whose smaller rank sum is at most `w`.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    // Average ranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| s.min(total - s) <= limit)
        .map(|(_, &c)| c)
        .sum();
    (extreme as f64 / 2f64.powi(ranks.len() as i32)).min(1.0)
}

fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    if var <= 0.0 {
        return 1.0;
    }
    let kappa4 = -ranks.iter().map(|r| r.powi(4)).sum::<f64>() / 8.0;
    let excess = kappa4 / (var * var);
    let z = ((w - mean + 0.5) / var.sqrt()).min(0.0);
    let std = Normal::standard();
    // Edgeworth term applied multiplicatively so the far tail stays positive.
    let phi = std.cdf(z);
    let delta = std.pdf(z) * excess / 24.0 * (z.powi(3) - 3.0 * z) / phi;
    let lower = phi * (-delta).exp();
    (2.0 * lower).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_and_mismatch() {
        assert_eq!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(WilcoxonError::AllZeroDifferences)
        );
        assert_eq!(
            wilcoxon_signed_rank(&[1.0], &[]),
            Err(WilcoxonError::LengthMismatch(1, 0))
        );
    }

    #[test]
    fn single_difference() {
        let r = wilcoxon_signed_rank(&[5.0], &[0.0]).unwrap();
        assert_eq!((r.w, r.p, r.n), (0.0, 1.0, 1));
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn method_selection() {
        let x: Vec<f64> = (0..26).map(|i| i as f64 + 1.0).collect();
        let y = vec![0.0; 26];
        assert_eq!(wilcoxon_signed_rank(&x, &y).unwrap().method, PValueMethod::Normal);
        assert_eq!(wilcoxon_signed_rank(&x[..25], &y[..25]).unwrap().method, PValueMethod::Exact);
    }
}
