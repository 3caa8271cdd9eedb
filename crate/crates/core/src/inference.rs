//! The audit pipeline: ground-truth baseline, fine-tune shift scoring, the
//! two-sample test and the dual-test decision rule.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusBundle, PairRecord, SplitPlan};
use crate::error::{Error, Result};
use crate::model::{
    select_checkpoint, BatchOutcome, CheckpointChoice, CompletionRecord, FineTuneJob, FineTuneSpec,
    Hyperparams, ModelClient, ModelRef,
};
use crate::similarity::{median, score_shift, DatasetTag, Metric, ScoreSet, Scorer};
use crate::stats::{ks_two_sample, ks_two_sample_with, KsMode, KsResult, Tail};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// How the validation set's post-fine-tune completions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// A second, independent fine-tune of the base model on the validation
    /// fine-tune split.
    #[default]
    PairedFinetune,
    /// Validation prompts are completed by the model fine-tuned on the
    /// suspicious split.
    SharedFinetune,
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired_finetune" | "paired" => Ok(FinetuneMode::PairedFinetune),
            "shared_finetune" | "shared" => Ok(FinetuneMode::SharedFinetune),
            other => Err(Error::InvalidArgument(format!(
                "unknown fine-tune mode `{other}` (expected paired_finetune or shared_finetune)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Member,
    NonMember,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    BaselineShortcut,
    Catshift,
    /// Baseline-only audit, decided at `alpha`.
    Baseline,
}

/// Ground truth for a dataset, when known (synthetic runs, benchmarks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipLabel {
    Member,
    NonMember,
}

impl std::str::FromStr for MembershipLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "member" | "0" => Ok(MembershipLabel::Member),
            "non_member" | "nonmember" | "1" => Ok(MembershipLabel::NonMember),
            other => Err(Error::InvalidArgument(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub alpha: f64,
    pub baseline_threshold: f64,
    pub metric: Metric,
    pub mode: FinetuneMode,
    pub n_finetune: usize,
    pub n_test: usize,
    pub seed: u64,
    pub max_new_tokens: usize,
    pub tail: Tail,
    pub ks_mode: KsMode,
    pub hyperparams: Hyperparams,
    /// Largest tolerated share of test pairs lost to completion failures.
    pub max_drop_fraction: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            baseline_threshold: 1e-3,
            metric: Metric::default(),
            mode: FinetuneMode::default(),
            n_finetune: 600,
            n_test: 1000,
            seed: 0,
            max_new_tokens: 32,
            tail: Tail::TwoSided,
            ks_mode: KsMode::Auto,
            hyperparams: Hyperparams::default(),
            max_drop_fraction: 0.1,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.baseline_threshold
            && self.baseline_threshold < self.alpha
            && self.alpha < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "need 0 < baseline_threshold ({}) < alpha ({}) < 1",
                self.baseline_threshold, self.alpha
            )));
        }
        if self.n_finetune == 0 || self.n_test == 0 || self.max_new_tokens == 0 {
            return Err(Error::InvalidArgument(
                "n_finetune, n_test and max_new_tokens must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.max_drop_fraction) {
            return Err(Error::InvalidArgument(
                "max_drop_fraction must lie in [0, 1)".into(),
            ));
        }
        self.hyperparams.validate()
    }

    /// Fine-tune split size for the validation corpus under this mode.
    pub fn validation_finetune_size(&self) -> usize {
        match self.mode {
            FinetuneMode::PairedFinetune => self.n_finetune,
            FinetuneMode::SharedFinetune => 0,
        }
    }

    /// Splits both corpora as this config prescribes.
    pub fn bundle(
        &self,
        suspicious: Vec<PairRecord>,
        validation: Vec<PairRecord>,
        validation_provenance: impl Into<String>,
    ) -> Result<CorpusBundle> {
        CorpusBundle::build(
            suspicious,
            validation,
            self.n_finetune,
            self.validation_finetune_size(),
            self.n_test,
            self.seed,
            validation_provenance,
        )
    }
}

/// Member iff `p_value < alpha`; equality fails to reject.
pub fn decide(p_value: f64, alpha: f64) -> Decision {
    if p_value < alpha {
        Decision::Member
    } else {
        Decision::NonMember
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    /// s̄_b on the suspicious test prompts.
    pub mean_score: f64,
    /// Sim(ŷ, y) per suspicious test pair.
    pub per_sample: ScoreSet,
    pub validation_mean_score: f64,
    pub validation_per_sample: ScoreSet,
    pub ks: KsResult,
    pub p_value: f64,
    /// The suspicious set is reproduced better than the validation set.
    pub direction_member: bool,
}

/// Builds the baseline judgment from ground-truth similarity sets.
pub fn baseline_from_scores(
    suspicious: ScoreSet,
    validation: ScoreSet,
    ks_mode: KsMode,
) -> Result<BaselineResult> {
    let ks = ks_two_sample(&suspicious.scores, &validation.scores, ks_mode)?;
    Ok(BaselineResult {
        mean_score: suspicious.mean(),
        validation_mean_score: validation.mean(),
        direction_member: suspicious.median() > validation.median(),
        p_value: ks.p_value,
        ks,
        per_sample: suspicious,
        validation_per_sample: validation,
    })
}

/// One fine-tune run and the model chosen from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    /// Which dataset's fine-tune split was trained on.
    pub dataset: DatasetTag,
    pub job: FineTuneJob,
    pub selected: CheckpointChoice,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCompletion {
    pub pair_id: String,
    pub pre: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCompletions {
    pub suspicious: Vec<ReportCompletion>,
    pub validation: Vec<ReportCompletion>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedPairs {
    pub suspicious: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset_id: String,
    #[serde(default)]
    pub label: Option<MembershipLabel>,
    pub endpoint: String,
    pub base_model_id: String,
    pub config: AuditConfig,
    pub suspicious_split: SplitPlan,
    pub validation_split: SplitPlan,
    pub validation_provenance: String,
    pub finetune_job_ids: Vec<String>,
    pub dropped: DroppedPairs,
    pub warnings: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub format_version: u32,
    pub decision: Decision,
    pub decided_by: DecidedBy,
    /// The p-value the decision rests on; used as the non-membership score
    /// in evaluation.
    pub p_value: f64,
    /// Shift-score test; absent when the baseline decided alone.
    pub ks: Option<KsResult>,
    pub baseline: Option<BaselineResult>,
    pub suspicious_scores: Option<ScoreSet>,
    pub validation_scores: Option<ScoreSet>,
    /// median(S_v) − median(S_s); positive when the suspicious set shifted more.
    pub median_shift_direction: Option<f64>,
    pub completions: ReportCompletions,
    pub finetunes: Vec<FinetuneRecord>,
    pub run_metadata: RunMetadata,
}

impl AuditReport {
    /// Checks that the decision is backed by the evidence the report carries.
    pub fn check_invariants(&self) -> Result<()> {
        let cfg = &self.run_metadata.config;
        let bad = |m: &str| {
            Err(Error::InvalidArgument(format!(
                "report invariant violated: {m}"
            )))
        };
        match self.decided_by {
            DecidedBy::BaselineShortcut => {
                let Some(b) = &self.baseline else {
                    return bad("shortcut without baseline");
                };
                if self.decision != Decision::Member
                    || !(b.p_value < cfg.baseline_threshold && b.direction_member)
                    || !self.finetunes.is_empty()
                {
                    return bad("shortcut not justified by baseline");
                }
            }
            DecidedBy::Catshift => {
                let Some(ks) = &self.ks else {
                    return bad("catshift decision without KS result");
                };
                if self.decision != decide(ks.p_value, cfg.alpha) || ks.p_value != self.p_value {
                    return bad("catshift decision disagrees with KS p-value");
                }
            }
            DecidedBy::Baseline => {
                let Some(b) = &self.baseline else {
                    return bad("baseline decision without baseline");
                };
                let member = b.p_value < cfg.alpha && b.direction_member;
                if (self.decision == Decision::Member) != member {
                    return bad("baseline decision disagrees with baseline result");
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with wall-clock fields blanked, for reproducibility comparisons.
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.run_metadata.started_at.clear();
        copy.run_metadata.finished_at.clear();
        copy.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `(file name, contents)` for the report and its per-dataset score CSVs.
    pub fn artifacts(&self) -> Result<Vec<(String, String)>> {
        let mut out = vec![("report.json".to_string(), self.to_json()?)];
        for set in [&self.suspicious_scores, &self.validation_scores]
            .into_iter()
            .flatten()
        {
            out.push((format!("scores_{}.csv", set.dataset_tag), set.to_csv()));
        }
        if let Some(b) = &self.baseline {
            for set in [&b.per_sample, &b.validation_per_sample] {
                out.push((format!("baseline_{}.csv", set.dataset_tag), set.to_csv()));
            }
        }
        Ok(out)
    }

    /// Writes [`Self::artifacts`] into `dir` and returns the paths written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.artifacts()?
            .into_iter()
            .map(|(name, body)| {
                let path = dir.join(name);
                fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect()
    }
}

/// What an audit is run on.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditInput {
    pub dataset_id: String,
    pub label: Option<MembershipLabel>,
    pub bundle: CorpusBundle,
}

/// Hex SHA-256 of everything that determines an audit's outcome.
pub fn audit_fingerprint(
    base: &ModelRef,
    config: &AuditConfig,
    bundle: &CorpusBundle,
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(base)?);
    h.update(serde_json::to_vec(config)?);
    h.update(serde_json::to_vec(bundle)?);
    Ok(hex::encode(h.finalize()))
}

const FINGERPRINT_FILE: &str = "fingerprint";

/// Directory of completed pipeline stages, so an interrupted audit can resume.
#[derive(Debug, Clone)]
pub struct StageStore {
    dir: PathBuf,
}

impl StageStore {
    /// Opens (or creates) `dir` for the audit identified by `fingerprint`.
    /// A directory holding another audit's stages is refused.
    pub fn open(dir: &Path, fingerprint: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fp_path = dir.join(FINGERPRINT_FILE);
        match fs::read_to_string(&fp_path) {
            Ok(existing) if existing.trim() != fingerprint => {
                return Err(Error::InvalidArgument(format!(
                    "{} holds stages of a different audit",
                    dir.display()
                )))
            }
            Ok(_) => {}
            Err(_) => fs::write(&fp_path, fingerprint).map_err(|e| Error::io(&fp_path, e))?,
        }
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.json"))
    }

    pub fn load<T: DeserializeOwned>(&self, stage: &str) -> Result<Option<T>> {
        let path = self.path(stage);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn save<T: Serialize>(&self, stage: &str, value: &T) -> Result<()> {
        let path = self.path(stage);
        let tmp = self.dir.join(format!(".{stage}.json.tmp"));
        fs::write(&tmp, serde_json::to_vec(value)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn has(&self, stage: &str) -> bool {
        self.path(stage).exists()
    }
}

/// Completions for both test sets from one model pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageCompletions {
    suspicious: BatchOutcome,
    validation: BatchOutcome,
}

const STAGE_PRE: &str = "pre";
const STAGE_POST: &str = "post";

fn finetune_stage(tag: DatasetTag) -> String {
    format!("finetune_{tag}")
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Runs audits of one base model through a [`ModelClient`].
pub struct Auditor<'c> {
    client: &'c ModelClient,
    base: ModelRef,
    config: AuditConfig,
    scorer: Scorer,
    store: Option<StageStore>,
}

impl<'c> Auditor<'c> {
    pub fn new(
        client: &'c ModelClient,
        base: ModelRef,
        config: AuditConfig,
        scorer: Scorer,
    ) -> Result<Self> {
        config.validate()?;
        if scorer.metric() != config.metric {
            return Err(Error::InvalidArgument(format!(
                "scorer metric {} differs from configured metric {}",
                scorer.metric(),
                config.metric
            )));
        }
        Ok(Self {
            client,
            base,
            config,
            scorer,
            store: None,
        })
    }

    /// Auditor with the lexical scorer for `config.metric`.
    pub fn lexical(client: &'c ModelClient, base: ModelRef, config: AuditConfig) -> Result<Self> {
        let scorer = Scorer::lexical(config.metric)?;
        Self::new(client, base, config, scorer)
    }

    pub fn with_store(mut self, store: StageStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    fn load_stage<T: DeserializeOwned>(&self, stage: &str) -> Result<Option<T>> {
        match &self.store {
            Some(s) => {
                let v = s.load(stage)?;
                if v.is_some() {
                    log::info!("resuming from stored stage `{stage}`");
                }
                Ok(v)
            }
            None => Ok(None),
        }
    }

    fn save_stage<T: Serialize>(&self, stage: &str, value: &T) -> Result<()> {
        match &self.store {
            Some(s) => s.save(stage, value),
            None => Ok(()),
        }
    }

    fn check_bundle(&self, bundle: &CorpusBundle) -> Result<()> {
        if self.config.mode == FinetuneMode::PairedFinetune
            && bundle.validation_split.finetune_ids.is_empty()
        {
            return Err(Error::InvalidArgument(
                "paired fine-tuning needs a validation fine-tune split".into(),
            ));
        }
        if bundle.suspicious_split.finetune_ids.is_empty() {
            return Err(Error::InvalidArgument(
                "suspicious fine-tune split is empty".into(),
            ));
        }
        Ok(())
    }

    fn collect(&self, model: &ModelRef, pairs: &[PairRecord]) -> BatchOutcome {
        let items: Vec<(String, String)> = pairs
            .iter()
            .map(|p| (p.id.clone(), p.prompt.clone()))
            .collect();
        self.client
            .complete_batch(model, &items, self.config.max_new_tokens)
    }

    fn pre_completions(&self, bundle: &CorpusBundle) -> Result<StageCompletions> {
        if let Some(stage) = self.load_stage(STAGE_PRE)? {
            return Ok(stage);
        }
        let stage = StageCompletions {
            suspicious: self.collect(&self.base, &bundle.suspicious_test()),
            validation: self.collect(&self.base, &bundle.validation_test()),
        };
        self.save_stage(STAGE_PRE, &stage)?;
        Ok(stage)
    }

    fn check_drops(&self, tag: DatasetTag, dropped: &BTreeSet<String>, total: usize) -> Result<()> {
        let max = self.config.max_drop_fraction;
        if dropped.len() as f64 > max * total as f64 || dropped.len() == total {
            return Err(Error::TooManyDrops {
                dataset: tag.to_string(),
                dropped: dropped.len(),
                total,
                max_fraction: max,
            });
        }
        Ok(())
    }

    /// Ground-truth similarity of the base model's completions on both test sets.
    pub fn run_baseline(&self, input: &AuditInput) -> Result<AuditReport> {
        let started_at = now();
        let pre = self.pre_completions(&input.bundle)?;
        let (baseline, dropped) = self.baseline(&input.bundle, &pre)?;
        let p_value = baseline.p_value;
        let decision = if baseline.direction_member {
            decide(p_value, self.config.alpha)
        } else {
            Decision::NonMember
        };
        Ok(self.report(
            input,
            started_at,
            Outcome {
                decision,
                decided_by: DecidedBy::Baseline,
                p_value,
                baseline: Some(baseline),
                shift: None,
                pre,
                post: None,
                finetunes: Vec::new(),
                dropped,
            },
        ))
    }

    fn baseline(
        &self,
        bundle: &CorpusBundle,
        pre: &StageCompletions,
    ) -> Result<(BaselineResult, DroppedPairs)> {
        let mut dropped = DroppedPairs::default();
        let mut sets = Vec::new();
        for (tag, pairs, outcome, sink) in [
            (
                DatasetTag::Suspicious,
                bundle.suspicious_test(),
                &pre.suspicious,
                &mut dropped.suspicious,
            ),
            (
                DatasetTag::Validation,
                bundle.validation_test(),
                &pre.validation,
                &mut dropped.validation,
            ),
        ] {
            let mut set = ScoreSet::new(tag, self.config.metric);
            let mut lost = BTreeSet::new();
            for p in &pairs {
                match outcome.completions.get(&p.id) {
                    Some(y_hat) => set.push(&p.id, self.scorer.score(y_hat, &p.completion)?.value),
                    None => {
                        lost.insert(p.id.clone());
                    }
                }
            }
            self.check_drops(tag, &lost, pairs.len())?;
            sink.extend(lost);
            sets.push(set);
        }
        let validation = sets.pop().expect("two sets");
        let suspicious = sets.pop().expect("two sets");
        Ok((
            baseline_from_scores(suspicious, validation, self.config.ks_mode)?,
            dropped,
        ))
    }

    fn finetune(&self, tag: DatasetTag, pairs: Vec<PairRecord>) -> Result<FinetuneRecord> {
        let stage = finetune_stage(tag);
        if let Some(rec) = self.load_stage::<FinetuneRecord>(&stage)? {
            if self.client.knows_model(&rec.selected.model) {
                return Ok(rec);
            }
            log::warn!("stored {stage} model is no longer served; fine-tuning again");
        }
        let n_pairs = pairs.len();
        let spec = FineTuneSpec {
            pairs,
            hyperparams: self.config.hyperparams.clone(),
        };
        let job = self.client.start_finetune(&self.base, &spec)?;
        log::info!(
            "started fine-tune job {} on {n_pairs} {tag} pairs",
            job.job_id
        );
        let job = self.client.wait_finetune(job)?;
        let losses: Vec<(u64, f64)> = job.checkpoints.iter().map(|c| (c.step, c.loss)).collect();
        let selected = select_checkpoint(&job, &losses)?;
        let rec = FinetuneRecord {
            dataset: tag,
            job,
            selected,
            n_pairs,
        };
        self.save_stage(&stage, &rec)?;
        Ok(rec)
    }

    /// The CatShift path alone: fine-tune, complete again, test the shifts.
    pub fn run_catshift(&self, input: &AuditInput) -> Result<AuditReport> {
        let started_at = now();
        self.check_bundle(&input.bundle)?;
        let pre = self.pre_completions(&input.bundle)?;
        let (baseline, _) = self.baseline(&input.bundle, &pre)?;
        self.catshift(input, started_at, pre, Some(baseline))
    }

    fn catshift(
        &self,
        input: &AuditInput,
        started_at: String,
        pre: StageCompletions,
        baseline: Option<BaselineResult>,
    ) -> Result<AuditReport> {
        let bundle = &input.bundle;
        let mut finetunes =
            vec![self.finetune(DatasetTag::Suspicious, bundle.suspicious_finetune())?];
        if self.config.mode == FinetuneMode::PairedFinetune {
            finetunes.push(self.finetune(DatasetTag::Validation, bundle.validation_finetune())?);
        }
        let suspicious_model = finetunes[0].selected.model.clone();
        let validation_model = finetunes
            .last()
            .expect("at least one fine-tune")
            .selected
            .model
            .clone();

        let post = match self.load_stage::<StageCompletions>(STAGE_POST)? {
            Some(p) => p,
            None => {
                let p = StageCompletions {
                    suspicious: self.collect(&suspicious_model, &bundle.suspicious_test()),
                    validation: self.collect(&validation_model, &bundle.validation_test()),
                };
                self.save_stage(STAGE_POST, &p)?;
                p
            }
        };

        let mut dropped = DroppedPairs::default();
        let mut sets = Vec::new();
        for (tag, pairs, pre_out, post_out, sink) in [
            (
                DatasetTag::Suspicious,
                bundle.suspicious_test(),
                &pre.suspicious,
                &post.suspicious,
                &mut dropped.suspicious,
            ),
            (
                DatasetTag::Validation,
                bundle.validation_test(),
                &pre.validation,
                &post.validation,
                &mut dropped.validation,
            ),
        ] {
            let mut set = ScoreSet::new(tag, self.config.metric);
            let mut lost = BTreeSet::new();
            for p in &pairs {
                match (
                    pre_out.completions.get(&p.id),
                    post_out.completions.get(&p.id),
                ) {
                    (Some(a), Some(b)) => {
                        let rec = CompletionRecord {
                            pair_id: p.id.clone(),
                            pre: a.clone(),
                            post: b.clone(),
                        };
                        set.push(&p.id, score_shift(&rec, &self.scorer)?.value);
                    }
                    _ => {
                        lost.insert(p.id.clone());
                    }
                }
            }
            self.check_drops(tag, &lost, pairs.len())?;
            sink.extend(lost);
            sets.push(set);
        }
        let validation_scores = sets.pop().expect("two sets");
        let suspicious_scores = sets.pop().expect("two sets");
        let ks = ks_two_sample_with(
            &suspicious_scores.scores,
            &validation_scores.scores,
            self.config.ks_mode,
            self.config.tail,
        )?;
        let direction = median(&validation_scores.scores) - median(&suspicious_scores.scores);
        Ok(self.report(
            input,
            started_at,
            Outcome {
                decision: decide(ks.p_value, self.config.alpha),
                decided_by: DecidedBy::Catshift,
                p_value: ks.p_value,
                baseline,
                shift: Some((ks, suspicious_scores, validation_scores, direction)),
                pre,
                post: Some(post),
                finetunes,
                dropped,
            },
        ))
    }

    /// Baseline first; a confident member judgment ends the audit without
    /// fine-tuning. Otherwise the CatShift verdict alone decides.
    pub fn dual_test(&self, input: &AuditInput) -> Result<AuditReport> {
        let started_at = now();
        self.check_bundle(&input.bundle)?;
        let pre = self.pre_completions(&input.bundle)?;
        let (baseline, dropped) = self.baseline(&input.bundle, &pre)?;
        if baseline.p_value < self.config.baseline_threshold && baseline.direction_member {
            let p_value = baseline.p_value;
            return Ok(self.report(
                input,
                started_at,
                Outcome {
                    decision: Decision::Member,
                    decided_by: DecidedBy::BaselineShortcut,
                    p_value,
                    baseline: Some(baseline),
                    shift: None,
                    pre,
                    post: None,
                    finetunes: Vec::new(),
                    dropped,
                },
            ));
        }
        self.catshift(input, started_at, pre, Some(baseline))
    }

    fn report(&self, input: &AuditInput, started_at: String, o: Outcome) -> AuditReport {
        let bundle = &input.bundle;
        let merge = |pairs: Vec<PairRecord>, pre: &BatchOutcome, post: Option<&BatchOutcome>| {
            pairs
                .iter()
                .filter_map(|p| {
                    pre.completions.get(&p.id).map(|text| ReportCompletion {
                        pair_id: p.id.clone(),
                        pre: text.clone(),
                        post: post.and_then(|b| b.completions.get(&p.id).cloned()),
                    })
                })
                .collect()
        };
        let completions = ReportCompletions {
            suspicious: merge(
                bundle.suspicious_test(),
                &o.pre.suspicious,
                o.post.as_ref().map(|p| &p.suspicious),
            ),
            validation: merge(
                bundle.validation_test(),
                &o.pre.validation,
                o.post.as_ref().map(|p| &p.validation),
            ),
        };
        let (ks, suspicious_scores, validation_scores, median_shift_direction) = match o.shift {
            Some((ks, s, v, d)) => (Some(ks), Some(s), Some(v), Some(d)),
            None => (None, None, None, None),
        };
        AuditReport {
            format_version: REPORT_FORMAT_VERSION,
            decision: o.decision,
            decided_by: o.decided_by,
            p_value: o.p_value,
            ks,
            baseline: o.baseline,
            suspicious_scores,
            validation_scores,
            median_shift_direction,
            completions,
            run_metadata: RunMetadata {
                dataset_id: input.dataset_id.clone(),
                label: input.label,
                endpoint: self.client.endpoint().to_string(),
                base_model_id: self.base.model_id.clone(),
                config: self.config.clone(),
                suspicious_split: bundle.suspicious_split.clone(),
                validation_split: bundle.validation_split.clone(),
                validation_provenance: bundle.validation_provenance.clone(),
                finetune_job_ids: o.finetunes.iter().map(|f| f.job.job_id.clone()).collect(),
                dropped: o.dropped,
                warnings: self.client.warnings(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_at,
                finished_at: now(),
            },
            finetunes: o.finetunes,
        }
    }
}

struct Outcome {
    decision: Decision,
    decided_by: DecidedBy,
    p_value: f64,
    baseline: Option<BaselineResult>,
    shift: Option<(KsResult, ScoreSet, ScoreSet, f64)>,
    pre: StageCompletions,
    post: Option<StageCompletions>,
    finetunes: Vec<FinetuneRecord>,
    dropped: DroppedPairs,
}

/// Ids every report queried, for checking against the fine-tune splits.
pub fn queried_ids(report: &AuditReport) -> BTreeMap<DatasetTag, BTreeSet<String>> {
    let ids = |v: &[ReportCompletion]| v.iter().map(|c| c.pair_id.clone()).collect();
    BTreeMap::from([
        (DatasetTag::Suspicious, ids(&report.completions.suspicious)),
        (DatasetTag::Validation, ids(&report.completions.validation)),
    ])
}
