use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::eval::rank::midranks;

/// Largest number of non-zero differences for which the exact null
/// distribution is used; above it the normal approximation applies.
pub const EXACT_MAX_N: usize = 25;

const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilcoxon {
    /// Rank sum of positive differences `a - b`.
    pub w_plus: f64,
    /// Rank sum of negative differences.
    pub w_minus: f64,
    /// Pairs left after discarding zero differences.
    pub n_used: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

impl Wilcoxon {
    /// The classic statistic `min(W+, W-)`.
    pub fn statistic(&self) -> f64 {
        self.w_plus.min(self.w_minus)
    }

    /// `W+ - W-`; positive when `a` tends to exceed `b`.
    pub fn signed_statistic(&self) -> f64 {
        self.w_plus - self.w_minus
    }
}

/// Paired two-sided Wilcoxon signed-rank test of `a` against `b`.
///
/// Zero differences are discarded and tied magnitudes get midranks. With at
/// most [`EXACT_MAX_N`] remaining pairs the p-value comes from the exact
/// permutation distribution of the (tied) ranks; otherwise from the normal
/// approximation with tie-corrected variance and continuity correction.
/// When every difference is zero the result is `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::TooFewPairs { required: MIN_PAIRS, got: a.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite paired difference".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(Wilcoxon { w_plus: 0.0, w_minus: 0.0, n_used: 0, p_value: 1.0, exact: true });
    }
    let magnitudes: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = midranks(&magnitudes);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_value, exact) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus.min(w_minus)), true)
    } else {
        (normal_p(&ranks, w_plus), false)
    };
    Ok(Wilcoxon { w_plus, w_minus, n_used: n, p_value, exact })
}

/// Midranks are multiples of 1/2, so doubled ranks are integers and the
/// null distribution of the doubled positive rank sum is a subset-sum count.
fn exact_p(ranks: &[f64], w_low: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0_f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w_low).round() as usize;
    let tail: f64 = counts[..=limit].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * tail / total).min(1.0)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_have_no_effect() {
        let a = [0.1, 0.2, 0.3, 0.4, 0.5];
        let w = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(w.p_value, 1.0);
        assert_eq!(w.n_used, 0);
    }

    #[test]
    fn constant_shift_of_ten() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.statistic(), 0.0);
        assert!((w.p_value - 2.0 / 1024.0).abs() < 1e-15, "{}", w.p_value);
    }

    #[test]
    fn swapping_negates_signed_statistic() {
        let a = [1.0, 2.5, 0.3, 4.0, 2.2, 0.9, 1.1];
        let b = [0.5, 2.0, 0.9, 1.0, 2.2, 1.9, 0.2];
        let x = wilcoxon_signed_rank(&a, &b).unwrap();
        let y = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(x.signed_statistic(), -y.signed_statistic());
        assert_eq!(x.p_value, y.p_value);
    }

    #[test]
    fn too_few_pairs() {
        let e = wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).unwrap_err();
        assert_eq!(e, Error::TooFewPairs { required: 5, got: 4 });
        assert!(wilcoxon_signed_rank(&[1.0; 5], &[0.0; 6]).is_err());
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() + if i % 3 == 0 { 0.2 } else { -0.1 }).collect();
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!w.exact);
        assert!(w.p_value > 0.0 && w.p_value <= 1.0);
    }
}
