//! Two-sample tests over score sets.

mod ks;
mod mwu;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ks::{
    kolmogorov_q, ks_statistic, ks_two_sample, ks_two_sample_with, KsMode, KsResult, Tail,
};
pub(crate) use mwu::midranks;
pub use mwu::{mwu_two_sample, MwuResult};

/// Exact enumeration is used automatically when `n + m` is at most this.
pub const EXACT_CUTOFF: usize = 16;

/// Forced exact mode refuses enumerations larger than this many relabelings.
pub const MAX_EXACT_RELABELINGS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Asymptotic,
}

/// Right-continuous empirical CDF as `(x, F(x))` at each distinct sample value.
pub fn ecdf(sample: &[f64]) -> Result<Vec<(f64, f64)>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    check_finite(sample)?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut steps: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match steps.last_mut() {
            Some(last) if last.0 == x => last.1 = f,
            _ => steps.push((x, f)),
        }
    }
    Ok(steps)
}

pub(crate) fn check_finite(sample: &[f64]) -> Result<()> {
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    Ok(())
}

pub(crate) fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Calls `f` with every k-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // rightmost slot that can still advance
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Relative slack used when comparing a permuted statistic to the observed one.
pub(crate) fn at_least(candidate: f64, observed: f64) -> bool {
    candidate >= observed - 1e-12 * observed.abs().max(1.0)
}
