use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{at_least, check_finite, for_each_combination, PValueMethod, EXACT_CUTOFF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// U for the suspicious sample; ties count one half.
    pub u_statistic: f64,
    pub p_value: f64,
    /// Whether the normal approximation's variance was corrected for ties.
    pub tie_corrected: bool,
    pub mode: PValueMethod,
}

/// Midranks (1-based) of `values`, in input order, plus Σ(t³ − t) over tie groups.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// Two-sided Mann–Whitney U test. Exact permutation distribution when
/// `n + m ≤ 16`, otherwise the tie-corrected normal approximation with
/// continuity correction.
pub fn mwu_two_sample(suspicious: &[f64], validation: &[f64]) -> Result<MwuResult> {
    if suspicious.is_empty() || validation.is_empty() {
        return Err(Error::EmptySample);
    }
    check_finite(suspicious)?;
    check_finite(validation)?;
    let m = suspicious.len();
    let n = validation.len();
    let total = m + n;
    let pooled = [suspicious, validation].concat();
    let (ranks, tie_term) = midranks(&pooled);
    let offset = (m * (m + 1)) as f64 / 2.0;
    let u = ranks[..m].iter().sum::<f64>() - offset;
    let center = (m * n) as f64 / 2.0;
    let observed = (u - center).abs();

    if total <= EXACT_CUTOFF {
        let mut hits = 0u64;
        let mut count = 0u64;
        for_each_combination(total, m, |chosen| {
            let u_perm = chosen.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            if at_least((u_perm - center).abs(), observed) {
                hits += 1;
            }
            count += 1;
        });
        return Ok(MwuResult {
            u_statistic: u,
            p_value: hits as f64 / count as f64,
            tie_corrected: false,
            mode: PValueMethod::Exact,
        });
    }

    let (mf, nf, tf) = (m as f64, n as f64, total as f64);
    let variance = mf * nf / 12.0 * ((tf + 1.0) - tie_term / (tf * (tf - 1.0)));
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    Ok(MwuResult {
        u_statistic: u,
        p_value,
        tie_corrected: tie_term > 0.0,
        mode: PValueMethod::Asymptotic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_samples_have_high_p() {
        let a = [0.1, 0.5, 0.7, 0.9, 0.3];
        assert!(mwu_two_sample(&a, &a).unwrap().p_value > 0.9);
        let big: Vec<f64> = (0..30).map(|i| f64::from(i) / 30.0).collect();
        assert!(mwu_two_sample(&big, &big).unwrap().p_value > 0.9);
    }

    #[test]
    fn fully_separated_extremes() {
        let low: Vec<f64> = (0..8).map(f64::from).collect();
        let high: Vec<f64> = (10..18).map(f64::from).collect();
        let r = mwu_two_sample(&low, &high).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_relative_eq!(r.p_value, 2.0 / 12870.0);
        assert_eq!(mwu_two_sample(&high, &low).unwrap().u_statistic, 64.0);
    }

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[2.0, 1.0, 2.0, 3.0]);
        assert_eq!(r, vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn normal_approximation_matches_known_value() {
        // 10 vs 10, fully separated: U = 0, σ² = 175, z = (50 − 0.5)/√175.
        let low: Vec<f64> = (0..10).map(f64::from).collect();
        let high: Vec<f64> = (20..30).map(f64::from).collect();
        let r = mwu_two_sample(&low, &high).unwrap();
        assert_eq!(r.mode, PValueMethod::Asymptotic);
        let z: f64 = 49.5 / 175f64.sqrt();
        assert_relative_eq!(
            r.p_value,
            erfc(z / std::f64::consts::SQRT_2),
            epsilon = 1e-15
        );
        assert!(r.p_value < 2e-4);
        assert!(!r.tie_corrected);
    }

    #[test]
    fn constant_pool_gives_p_one() {
        let r = mwu_two_sample(&[1.0; 12], &[1.0; 12]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(r.tie_corrected);
    }
}
