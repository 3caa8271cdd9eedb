//! Output-shift similarity metrics.
//!
//! Lexical metrics work on whitespace tokens and are pure. The embedding
//! metric delegates to a remote scorer speaking `POST /v1/similarity`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CompletionRecord;
use crate::text::tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    Exact,
    NgramF1 { n: usize },
    LcsRatio,
    Embedding,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::NgramF1 { n: 2 }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Exact => f.write_str("exact"),
            Metric::NgramF1 { n } => write!(f, "ngram_f1:{n}"),
            Metric::LcsRatio => f.write_str("lcs_ratio"),
            Metric::Embedding => f.write_str("embedding"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// Accepts `exact`, `ngram_f1` (n = 2), `ngram_f1:<n>`, `lcs_ratio`, `embedding`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown metric `{s}`"));
        match s {
            "exact" => Ok(Metric::Exact),
            "ngram_f1" => Ok(Metric::NgramF1 { n: 2 }),
            "lcs_ratio" => Ok(Metric::LcsRatio),
            "embedding" => Ok(Metric::Embedding),
            _ => {
                let n = s
                    .strip_prefix("ngram_f1:")
                    .ok_or_else(bad)?
                    .parse::<usize>()
                    .map_err(|_| bad())?;
                if n == 0 {
                    return Err(Error::InvalidArgument("ngram order must be ≥ 1".into()));
                }
                Ok(Metric::NgramF1 { n })
            }
        }
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<PrecisionRecall>,
    /// Set when a remote score fell outside [0, 1] and was clamped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

impl SimilarityScore {
    fn plain(value: f64, metric: Metric) -> Self {
        Self {
            value,
            metric,
            detail: None,
            clamped: false,
        }
    }

    fn from_pr(precision: f64, recall: f64, metric: Metric) -> Self {
        Self {
            value: f1(precision, recall),
            metric,
            detail: Some(PrecisionRecall { precision, recall }),
            clamped: false,
        }
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// 1 when the whitespace-normalized strings match, else 0.
pub fn sim_exact(a: &str, b: &str) -> SimilarityScore {
    let same = tokens(a) == tokens(b);
    SimilarityScore::plain(if same { 1.0 } else { 0.0 }, Metric::Exact)
}

/// Empty-input convention shared by the token metrics: both empty → 1,
/// exactly one empty → 0.
fn empty_convention(a: &[&str], b: &[&str]) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(1.0),
        (true, false) | (false, true) => Some(0.0),
        _ => None,
    }
}

fn ngram_counts<'t, 'a>(toks: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    for w in toks.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// F1 over clipped n-gram multisets. Falls back to the shorter length when a
/// string has fewer than `n` tokens.
pub fn sim_ngram_f1(a: &str, b: &str, n: usize) -> SimilarityScore {
    let metric = Metric::NgramF1 { n };
    let ta = tokens(a);
    let tb = tokens(b);
    if let Some(v) = empty_convention(&ta, &tb) {
        return SimilarityScore::plain(v, metric);
    }
    let order = n.max(1).min(ta.len()).min(tb.len());
    let ca = ngram_counts(&ta, order);
    let cb = ngram_counts(&tb, order);
    let overlap: usize = ca
        .iter()
        .map(|(g, &c)| c.min(cb.get(g).copied().unwrap_or(0)))
        .sum();
    let total_a = ta.len() + 1 - order;
    let total_b = tb.len() + 1 - order;
    SimilarityScore::from_pr(
        overlap as f64 / total_a as f64,
        overlap as f64 / total_b as f64,
        metric,
    )
}

pub(crate) fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// F1 of LCS-based precision (LCS/|a|) and recall (LCS/|b|).
pub fn sim_lcs_ratio(a: &str, b: &str) -> SimilarityScore {
    let ta = tokens(a);
    let tb = tokens(b);
    if let Some(v) = empty_convention(&ta, &tb) {
        return SimilarityScore::plain(v, Metric::LcsRatio);
    }
    let l = lcs_len(&ta, &tb) as f64;
    SimilarityScore::from_pr(l / ta.len() as f64, l / tb.len() as f64, Metric::LcsRatio)
}

#[derive(Serialize)]
struct SimilarityRequest<'a> {
    a: &'a str,
    b: &'a str,
}

#[derive(Deserialize)]
struct SimilarityResponse {
    score: f64,
}

/// Client for a remote semantic scorer.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    base_url: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            http,
        })
    }

    pub fn score(&self, a: &str, b: &str) -> Result<SimilarityScore> {
        let mut req = self
            .http
            .post(format!("{}/v1/similarity", self.base_url))
            .json(&SimilarityRequest { a, b });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Endpoint {
                status: status.as_u16(),
                message: resp.text().unwrap_or_default(),
            });
        }
        let body: SimilarityResponse = resp
            .json()
            .map_err(|e| Error::ProtocolViolation(format!("similarity response: {e}")))?;
        if !body.score.is_finite() {
            return Err(Error::ProtocolViolation(
                "non-finite similarity score".into(),
            ));
        }
        let value = body.score.clamp(0.0, 1.0);
        Ok(SimilarityScore {
            value,
            metric: Metric::Embedding,
            detail: None,
            clamped: value != body.score,
        })
    }
}

/// A configured similarity function: a lexical metric, or the remote scorer.
#[derive(Debug, Clone)]
pub struct Scorer {
    metric: Metric,
    remote: Option<RemoteScorer>,
}

impl Scorer {
    pub fn lexical(metric: Metric) -> Result<Self> {
        if metric == Metric::Embedding {
            return Err(Error::InvalidArgument(
                "the embedding metric needs a remote scorer endpoint".into(),
            ));
        }
        Ok(Self {
            metric,
            remote: None,
        })
    }

    pub fn embedding(remote: RemoteScorer) -> Self {
        Self {
            metric: Metric::Embedding,
            remote: Some(remote),
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn score(&self, a: &str, b: &str) -> Result<SimilarityScore> {
        Ok(match self.metric {
            Metric::Exact => sim_exact(a, b),
            Metric::NgramF1 { n } => sim_ngram_f1(a, b, n),
            Metric::LcsRatio => sim_lcs_ratio(a, b),
            Metric::Embedding => self
                .remote
                .as_ref()
                .expect("embedding scorer built with a remote")
                .score(a, b)?,
        })
    }
}

/// s_i = Sim(pre, post) for one completion record.
pub fn score_shift(rec: &CompletionRecord, scorer: &Scorer) -> Result<SimilarityScore> {
    scorer.score(&rec.pre, &rec.post)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Suspicious,
    Validation,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::Suspicious => "suspicious",
            DatasetTag::Validation => "validation",
        })
    }
}

/// Per-pair scores for one dataset, in pair order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub dataset_tag: DatasetTag,
    pub metric: Metric,
    pub pair_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(dataset_tag: DatasetTag, metric: Metric) -> Self {
        Self {
            dataset_tag,
            metric,
            pair_ids: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn push(&mut self, pair_id: impl Into<String>, score: f64) {
        self.pair_ids.push(pair_id.into());
        self.scores.push(score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return f64::NAN;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn median(&self) -> f64 {
        median(&self.scores)
    }

    /// `pair_id,score` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,score\n");
        for (id, s) in self.pair_ids.iter().zip(&self.scores) {
            out.push_str(&csv_field(id));
            out.push(',');
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}
