use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest number of non-zero differences for which the exact null
/// distribution is enumerated.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs with a non-zero difference.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks of `values` (1-based), ties averaged.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are discarded. With at most [`EXACT_MAX_N`] remaining
/// pairs the p-value comes from the exact permutation distribution of the
/// (doubled, hence integral) midrank sums; above that a tie-corrected normal
/// approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 5 {
        return Err(Error::Parameter(format!("need at least 5 pairs, got {}", a.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::UndefinedTest("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_value, exact) = if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max + 1];
        counts[0] = 1.0;
        let mut reach = 0;
        for &r in &doubled {
            for s in (0..=reach).rev() {
                if counts[s] > 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let observed = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=observed].iter().sum::<f64>() / all;
        let upper: f64 = counts[observed..].iter().sum::<f64>() / all;
        ((2.0 * lower.min(upper)).min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let dev = w_plus - mean;
        let z = (dev.abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * (1.0 - normal.cdf(z))).min(1.0), false)
    };
    Ok(WilcoxonResult { n, w_plus, w_minus, p_value, exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_nine() {
        let b: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + 0.01 * (i + 1) as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.w_plus, 45.0);
        assert!(r.exact);
        assert!((r.p_value - 2.0 / 512.0).abs() < 1e-12);
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn zero_differences_undefined() {
        let a = [0.5; 6];
        assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::UndefinedTest(_))));
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]), Err(Error::Parameter(_))));
    }
}
