//! Scoring audits across many labeled datasets: each audit's p-value is a
//! non-membership score, summarized by ROC-AUC and F1 at a threshold.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{AuditReport, MembershipLabel};
use crate::similarity::{csv_field, median};
use crate::stats::midranks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledOutcome {
    pub dataset_id: String,
    pub true_label: MembershipLabel,
    pub p_value: f64,
}

impl LabeledOutcome {
    pub fn new(
        dataset_id: impl Into<String>,
        true_label: MembershipLabel,
        p_value: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_value) {
            return Err(Error::InvalidArgument(format!(
                "p-value {p_value} outside [0, 1]"
            )));
        }
        Ok(Self {
            dataset_id: dataset_id.into(),
            true_label,
            p_value,
        })
    }

    /// Numeric label: member = 0, non-member = 1.
    pub fn label_code(&self) -> u8 {
        match self.true_label {
            MembershipLabel::Member => 0,
            MembershipLabel::NonMember => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// F1 of the member class; 0 when there are no true positives.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub auc: f64,
    pub f1: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub n_member: usize,
    pub n_non_member: usize,
}

fn count_labels(outcomes: &[LabeledOutcome]) -> (usize, usize) {
    let members = outcomes
        .iter()
        .filter(|o| o.true_label == MembershipLabel::Member)
        .count();
    (members, outcomes.len() - members)
}

/// P(non-member p > member p) with ties counting one half.
pub fn auc(outcomes: &[LabeledOutcome]) -> Result<f64> {
    let (n0, n1) = count_labels(outcomes);
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let ps: Vec<f64> = outcomes.iter().map(|o| o.p_value).collect();
    let (ranks, _) = midranks(&ps);
    let rank_sum: f64 = outcomes
        .iter()
        .zip(&ranks)
        .filter(|(o, _)| o.true_label == MembershipLabel::NonMember)
        .map(|(_, r)| r)
        .sum();
    let (n0, n1) = (n0 as f64, n1 as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n0 * n1))
}

/// Predicted member iff `p_value < threshold`.
pub fn f1_at(outcomes: &[LabeledOutcome], threshold: f64) -> F1Result {
    let mut c = Confusion::default();
    for o in outcomes {
        match (o.true_label, o.p_value < threshold) {
            (MembershipLabel::Member, true) => c.tp += 1,
            (MembershipLabel::Member, false) => c.fn_ += 1,
            (MembershipLabel::NonMember, true) => c.fp += 1,
            (MembershipLabel::NonMember, false) => c.tn += 1,
        }
    }
    F1Result {
        f1: c.f1(),
        threshold,
        confusion: c,
    }
}

pub fn summarize(outcomes: &[LabeledOutcome], threshold: f64) -> Result<MetricsSummary> {
    let auc = auc(outcomes)?;
    let f = f1_at(outcomes, threshold);
    let (n_member, n_non_member) = count_labels(outcomes);
    Ok(MetricsSummary {
        auc,
        f1: f.f1,
        threshold,
        confusion: f.confusion,
        n_member,
        n_non_member,
    })
}

/// Collapses repeated audits of one dataset to their median p-value.
/// Output is sorted by dataset id.
pub fn aggregate_repeats(outcomes: &[LabeledOutcome]) -> Result<Vec<LabeledOutcome>> {
    let mut groups: BTreeMap<&str, (MembershipLabel, Vec<f64>)> = BTreeMap::new();
    for o in outcomes {
        let entry = groups
            .entry(o.dataset_id.as_str())
            .or_insert((o.true_label, Vec::new()));
        if entry.0 != o.true_label {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` carries conflicting labels",
                o.dataset_id
            )));
        }
        entry.1.push(o.p_value);
    }
    Ok(groups
        .into_iter()
        .map(|(id, (label, ps))| LabeledOutcome {
            dataset_id: id.to_string(),
            true_label: label,
            p_value: median(&ps),
        })
        .collect())
}

/// Outcome for one report, taking the label from `labels` first and the
/// report's metadata second.
pub fn outcome_from_report(
    report: &AuditReport,
    labels: &BTreeMap<String, MembershipLabel>,
) -> Result<LabeledOutcome> {
    let id = &report.run_metadata.dataset_id;
    let label = labels
        .get(id)
        .copied()
        .or(report.run_metadata.label)
        .ok_or_else(|| Error::InvalidArgument(format!("no label for dataset `{id}`")))?;
    LabeledOutcome::new(id.clone(), label, report.p_value)
}

fn collect_report_paths(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_report_paths(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "report.json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Every `report.json` under `dir`, in path order.
pub fn load_reports(dir: &Path) -> Result<Vec<(PathBuf, AuditReport)>> {
    let mut paths = Vec::new();
    collect_report_paths(dir, &mut paths)?;
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let report = AuditReport::from_json(&text).map_err(|e| Error::MalformedLine {
                path: p.clone(),
                line: 1,
                message: e.to_string(),
            })?;
            Ok((p, report))
        })
        .collect()
}

/// Parses a `dataset_id,label` CSV (header optional).
pub fn parse_labels_csv(text: &str) -> Result<BTreeMap<String, MembershipLabel>> {
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("dataset_id")) {
            continue;
        }
        let (id, label) = line.rsplit_once(',').ok_or_else(|| {
            Error::InvalidArgument(format!("labels line {}: expected `id,label`", i + 1))
        })?;
        labels.insert(id.trim().trim_matches('"').to_string(), label.parse()?);
    }
    Ok(labels)
}

/// `dataset_id,label,p_value,prediction` table.
pub fn outcomes_csv(outcomes: &[LabeledOutcome], threshold: f64) -> String {
    let name = |l: MembershipLabel| match l {
        MembershipLabel::Member => "member",
        MembershipLabel::NonMember => "non_member",
    };
    let mut out = String::from("dataset_id,label,p_value,prediction\n");
    for o in outcomes {
        let predicted = if o.p_value < threshold {
            MembershipLabel::Member
        } else {
            MembershipLabel::NonMember
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&o.dataset_id),
            name(o.true_label),
            o.p_value,
            name(predicted)
        ));
    }
    out
}
