//! Synthetic experiments against the simulator: labeled member and
//! non-member subsets over a grid of recovery and novelty gains, and null
//! trials that audit two halves of one unseen corpus.

use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_pairs, split_halves, PairOptions, PairRecord, TextRecord};
use crate::error::{Error, Result};
use crate::inference::{AuditConfig, AuditInput, AuditReport, Auditor, MembershipLabel};
use crate::model::{
    ClientOptions, Hyperparams, ModelClient, RetryPolicy, SimBackend, SimModelState,
};
use crate::text::stable_hash;

const SYLLABLES: [&str; 16] = [
    "ka", "zu", "vo", "xi", "qe", "ju", "fy", "ko", "zi", "va", "xu", "jo", "ki", "zo", "vu", "fa",
];

/// A pseudo-word of two or three syllables; never collides with decode noise.
fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// `n` documents of `tokens` pseudo-words, with ids `{prefix}-{i}`.
pub fn synthetic_documents(n: usize, tokens: usize, seed: u64, prefix: &str) -> Vec<TextRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| TextRecord {
            id: format!("{prefix}-{i}"),
            text: (0..tokens)
                .map(|_| pseudo_word(&mut rng))
                .collect::<Vec<_>>()
                .join(" "),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub gain_recover: Vec<f64>,
    pub gain_new: Vec<f64>,
    /// Pre-seeded memory strength of member subsets.
    pub member_strength: Vec<f64>,
    /// Member subsets and non-member subsets generated per grid cell.
    pub subsets_per_label: usize,
    pub doc_tokens: usize,
    pub recall_threshold: f64,
    pub drift: f64,
    /// Unrelated memorized documents present in every base model.
    pub background_docs: usize,
    pub seed: u64,
    pub audit: AuditConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            gain_recover: vec![0.3, 0.5, 0.7, 0.9],
            gain_new: vec![0.05, 0.1, 0.2, 0.25],
            member_strength: vec![0.3],
            subsets_per_label: 20,
            doc_tokens: 16,
            recall_threshold: 0.5,
            drift: 0.1,
            background_docs: 40,
            seed: 0,
            audit: AuditConfig {
                n_finetune: 60,
                n_test: 100,
                max_new_tokens: 16,
                ..AuditConfig::default()
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.audit.validate()?;
        let unit = |v: &[f64]| !v.is_empty() && v.iter().all(|x| (0.0..=1.0).contains(x));
        if !unit(&self.gain_recover) || !unit(&self.gain_new) || !unit(&self.member_strength) {
            return Err(Error::InvalidArgument(
                "gain_recover, gain_new and member_strength need values in [0, 1]".into(),
            ));
        }
        if self.subsets_per_label == 0 || self.doc_tokens < 2 {
            return Err(Error::InvalidArgument(
                "subsets_per_label must be ≥ 1 and doc_tokens ≥ 2".into(),
            ));
        }
        Ok(())
    }

    /// Grid cells with `gain_recover > gain_new`; other combinations are skipped.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut cells = Vec::new();
        for &gain_recover in &self.gain_recover {
            for &gain_new in &self.gain_new {
                for &member_strength in &self.member_strength {
                    if gain_recover > gain_new {
                        cells.push(GridCell {
                            gain_recover,
                            gain_new,
                            member_strength,
                        });
                    }
                }
            }
        }
        cells
    }

    fn docs_per_dataset(&self) -> usize {
        self.audit.n_finetune + self.audit.n_test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub gain_recover: f64,
    pub gain_new: f64,
    pub member_strength: f64,
}

impl GridCell {
    pub fn id(&self) -> String {
        format!(
            "gr{}_gn{}_ms{}",
            self.gain_recover, self.gain_new, self.member_strength
        )
    }
}

/// One audit to run: a labeled suspicious subset within a grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub dataset_id: String,
    pub label: MembershipLabel,
    pub cell: GridCell,
    pub seed: u64,
}

fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let b = base.to_le_bytes();
    let mut fields: Vec<&[u8]> = vec![&b];
    fields.extend(parts.iter().map(|p| p.as_bytes()));
    stable_hash(&fields)
}

/// Every subset the scenario audits, in a fixed order.
pub fn plan(config: &ScenarioConfig) -> Vec<SubsetSpec> {
    let mut out = Vec::new();
    for cell in config.cells() {
        for (label, tag) in [
            (MembershipLabel::Member, "member"),
            (MembershipLabel::NonMember, "non_member"),
        ] {
            for k in 0..config.subsets_per_label {
                let dataset_id = format!("{}/{tag}-{k:02}", cell.id());
                out.push(SubsetSpec {
                    seed: derive_seed(config.seed, &[&dataset_id]),
                    dataset_id,
                    label,
                    cell,
                });
            }
        }
    }
    out
}

fn pairs_of(docs: &[TextRecord]) -> Result<Vec<PairRecord>> {
    Ok(make_pairs(docs, &PairOptions::default())?.pairs)
}

fn sim_client(state: SimModelState) -> ModelClient {
    let opts = ClientOptions {
        retry: RetryPolicy {
            attempts: 1,
            base_delay: Duration::ZERO,
        },
        parallelism: 1,
        poll_interval: Duration::ZERO,
        ..ClientOptions::default()
    };
    ModelClient::with_backend(
        "sim:scenario",
        Arc::new(SimBackend::new("base", state)),
        opts,
    )
}

fn base_state(config: &ScenarioConfig, cell: &GridCell, seed: u64) -> Result<SimModelState> {
    let mut state = SimModelState::new(cell.gain_recover, cell.gain_new, seed);
    state.recall_threshold = config.recall_threshold;
    state.drift = config.drift;
    let background = synthetic_documents(
        config.background_docs,
        config.doc_tokens,
        seed ^ 0xb6,
        "background",
    );
    if !background.is_empty() {
        state.seed_pairs(
            &pairs_of(&background)?,
            cell.member_strength,
            Some("background"),
        );
    }
    Ok(state)
}

fn audit_config(config: &ScenarioConfig, seed: u64) -> AuditConfig {
    AuditConfig {
        seed,
        ..config.audit.clone()
    }
}

/// Audits one subset through the dual test.
pub fn run_subset(config: &ScenarioConfig, spec: &SubsetSpec) -> Result<AuditReport> {
    let n = config.docs_per_dataset();
    let suspicious_docs = synthetic_documents(n, config.doc_tokens, spec.seed, "suspicious");
    let validation_docs =
        synthetic_documents(n, config.doc_tokens, spec.seed ^ 0x5a5a, "validation");
    let suspicious = pairs_of(&suspicious_docs)?;
    let mut state = base_state(config, &spec.cell, spec.seed)?;
    if spec.label == MembershipLabel::Member {
        state.seed_pairs(
            &suspicious,
            spec.cell.member_strength,
            Some(&spec.dataset_id),
        );
    }
    let client = sim_client(state);
    let cfg = audit_config(config, spec.seed);
    let bundle = cfg.bundle(
        suspicious,
        pairs_of(&validation_docs)?,
        "synthetic, never seeded into the simulator",
    )?;
    let auditor = Auditor::lexical(&client, client.model("base"), cfg)?;
    auditor.dual_test(&AuditInput {
        dataset_id: spec.dataset_id.clone(),
        label: Some(spec.label),
        bundle,
    })
}

/// Runs every planned subset with `parallelism` workers; results follow [`plan`] order.
pub fn run_scenario(config: &ScenarioConfig, parallelism: usize) -> Result<Vec<AuditReport>> {
    config.validate()?;
    let specs = plan(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| specs.par_iter().map(|s| run_subset(config, s)).collect())
}

/// Audits two disjoint halves of one never-seen corpus against each other.
pub fn null_trial(config: &ScenarioConfig, cell: &GridCell, trial: u64) -> Result<AuditReport> {
    let seed = derive_seed(config.seed, &["null", &cell.id(), &trial.to_string()]);
    let docs = synthetic_documents(
        2 * config.docs_per_dataset(),
        config.doc_tokens,
        seed,
        "unseen",
    );
    let (a, b) = split_halves(&pairs_of(&docs)?, seed);
    let client = sim_client(base_state(config, cell, seed)?);
    let cfg = audit_config(config, seed);
    let bundle = cfg.bundle(a, b, "second half of the same unseen corpus")?;
    let auditor = Auditor::lexical(&client, client.model("base"), cfg)?;
    auditor.dual_test(&AuditInput {
        dataset_id: format!("null/{}/{trial:03}", cell.id()),
        label: Some(MembershipLabel::NonMember),
        bundle,
    })
}

/// Smaller scenario used for smoke runs and examples.
pub fn small_config() -> ScenarioConfig {
    ScenarioConfig {
        gain_recover: vec![0.6],
        gain_new: vec![0.1],
        subsets_per_label: 3,
        background_docs: 10,
        audit: AuditConfig {
            n_finetune: 20,
            n_test: 30,
            max_new_tokens: 16,
            hyperparams: Hyperparams::default(),
            ..AuditConfig::default()
        },
        ..ScenarioConfig::default()
    }
}
