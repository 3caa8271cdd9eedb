use serde::{Deserialize, Serialize};

use super::{at_least, binomial, check_finite, for_each_combination, PValueMethod};
use super::{EXACT_CUTOFF, MAX_EXACT_RELABELINGS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMode {
    #[default]
    Auto,
    Exact,
    Asymptotic,
}

/// Which departure from the null the statistic measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// sup |F_s − F_v|
    #[default]
    TwoSided,
    /// sup (F_s − F_v): suspicious scores stochastically smaller.
    SuspiciousLower,
    /// sup (F_v − F_s): suspicious scores stochastically larger.
    SuspiciousHigher,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    /// Validation sample size.
    pub n: usize,
    /// Suspicious sample size.
    pub m: usize,
    pub mode: PValueMethod,
    #[serde(default)]
    pub tail: Tail,
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The KS statistic between `suspicious` and `validation`, evaluated at the
/// union of sample points with right-continuous ECDFs.
pub fn ks_statistic(suspicious: &[f64], validation: &[f64], tail: Tail) -> f64 {
    let s = sorted(suspicious);
    let v = sorted(validation);
    let (ms, nv) = (s.len() as f64, v.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < s.len() || j < v.len() {
        let x = match (s.get(i), v.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < s.len() && s[i] <= x {
            i += 1;
        }
        while j < v.len() && v[j] <= x {
            j += 1;
        }
        let diff = i as f64 / ms - j as f64 / nv;
        let stat = match tail {
            Tail::TwoSided => diff.abs(),
            Tail::SuspiciousLower => diff,
            Tail::SuspiciousHigher => -diff,
        };
        best = best.max(stat);
    }
    best
}

/// Kolmogorov survival function Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²),
/// truncated once a term drops below 1e-12.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    // Q(0.2) differs from 1 by less than 1e-12.
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1.. {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn asymptotic_p(d: f64, m: usize, n: usize, tail: Tail) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let (mf, nf) = (m as f64, n as f64);
    let lambda = (mf * nf / (mf + nf)).sqrt() * d;
    match tail {
        Tail::TwoSided => kolmogorov_q(lambda),
        _ => (-2.0 * lambda * lambda).exp().min(1.0),
    }
}

/// Permutation p-value: the share of all C(n+m, m) relabelings of the pooled
/// sample whose statistic is at least the observed one.
fn exact_p(suspicious: &[f64], validation: &[f64], observed: f64, tail: Tail) -> Result<f64> {
    let m = suspicious.len();
    let total = m + validation.len();
    let count = binomial(total, m);
    if count > MAX_EXACT_RELABELINGS {
        return Err(Error::InvalidArgument(format!(
            "exact KS needs {count} relabelings (limit {MAX_EXACT_RELABELINGS})"
        )));
    }
    let pooled = sorted(&[suspicious, validation].concat());
    // group_end[i]: pooled[i] is the last element of its tie group
    let group_end: Vec<bool> = (0..total)
        .map(|i| i + 1 == total || pooled[i + 1] != pooled[i])
        .collect();
    let (mf, nf) = (m as f64, validation.len() as f64);
    let mut in_s = vec![false; total];
    let mut hits = 0u64;
    for_each_combination(total, m, |chosen| {
        in_s.iter_mut().for_each(|b| *b = false);
        for &c in chosen {
            in_s[c] = true;
        }
        let (mut cs, mut cv) = (0usize, 0usize);
        let mut best: f64 = 0.0;
        for i in 0..total {
            if in_s[i] {
                cs += 1;
            } else {
                cv += 1;
            }
            if group_end[i] {
                let diff = cs as f64 / mf - cv as f64 / nf;
                let stat = match tail {
                    Tail::TwoSided => diff.abs(),
                    Tail::SuspiciousLower => diff,
                    Tail::SuspiciousHigher => -diff,
                };
                best = best.max(stat);
            }
        }
        if at_least(best, observed) {
            hits += 1;
        }
    });
    Ok(hits as f64 / count as f64)
}

/// Two-sided two-sample KS test of suspicious scores against validation scores.
pub fn ks_two_sample(suspicious: &[f64], validation: &[f64], mode: KsMode) -> Result<KsResult> {
    ks_two_sample_with(suspicious, validation, mode, Tail::TwoSided)
}

pub fn ks_two_sample_with(
    suspicious: &[f64],
    validation: &[f64],
    mode: KsMode,
    tail: Tail,
) -> Result<KsResult> {
    if suspicious.is_empty() || validation.is_empty() {
        return Err(Error::EmptySample);
    }
    check_finite(suspicious)?;
    check_finite(validation)?;
    let m = suspicious.len();
    let n = validation.len();
    let d = ks_statistic(suspicious, validation, tail);
    let method = match mode {
        KsMode::Exact => PValueMethod::Exact,
        KsMode::Asymptotic => PValueMethod::Asymptotic,
        KsMode::Auto if m + n <= EXACT_CUTOFF => PValueMethod::Exact,
        KsMode::Auto => PValueMethod::Asymptotic,
    };
    let p_value = if d <= 0.0 {
        1.0
    } else {
        match method {
            PValueMethod::Exact => exact_p(suspicious, validation, d, tail)?,
            PValueMethod::Asymptotic => asymptotic_p(d, m, n, tail),
        }
    };
    Ok(KsResult {
        d_statistic: d,
        p_value: p_value.clamp(0.0, 1.0),
        n,
        m,
        mode: method,
        tail,
    })
}
