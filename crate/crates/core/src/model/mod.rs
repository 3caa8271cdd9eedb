//! Target-model access: label-only completion and fine-tuning.
//!
//! A [`ModelClient`] wraps one [`ModelBackend`] (the in-process simulator or
//! an HTTP endpoint speaking the v1 adapter protocol) and adds retries,
//! majority voting for non-deterministic endpoints, bounded fan-out and job
//! bookkeeping.

pub mod http;
pub mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::PairRecord;
use crate::error::{Error, Result};

pub use http::HttpBackend;
pub use sim::{MemoryEntry, SimBackend, SimModelState, SimSpec};

/// Endpoint scheme that selects the in-process simulator.
pub const SIM_SCHEME: &str = "sim:";

/// Opaque handle to one model version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelRef {
    pub endpoint: String,
    pub model_id: String,
}

impl ModelRef {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
        }
    }

    pub fn is_sim(&self) -> bool {
        self.endpoint.starts_with(SIM_SCHEME)
    }
}

/// Fine-tuning hyperparameters. Pass-through metadata: the endpoint owns the
/// optimizer and may or may not honor them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lora_rank: u32,
    pub lora_alpha: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub checkpoint_every: u32,
    pub epochs: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lora_rank: 8,
            lora_alpha: 32.0,
            dropout: 0.1,
            learning_rate: 8e-5,
            batch_size: 8,
            checkpoint_every: 10,
            epochs: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r <= 1.0;
        if !rate_ok(self.dropout) || !rate_ok(self.learning_rate) {
            return Err(Error::InvalidArgument(
                "dropout and learning_rate must lie in (0, 1]".into(),
            ));
        }
        if !(self.lora_alpha > 0.0 && self.lora_alpha.is_finite()) {
            return Err(Error::InvalidArgument("lora_alpha must be positive".into()));
        }
        if [
            self.lora_rank,
            self.batch_size,
            self.checkpoint_every,
            self.epochs,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidArgument(
                "lora_rank, batch_size, checkpoint_every and epochs must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSpec {
    pub pairs: Vec<PairRecord>,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }

    fn rank(self) -> u8 {
        match self {
            JobStatus::Pending => 0,
            JobStatus::Running => 1,
            JobStatus::Succeeded | JobStatus::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub loss: f64,
    /// Model id of the checkpoint, when the endpoint exposes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

/// Job state as reported by a backend, before it is bound to an endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub status: JobStatus,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
    #[serde(default)]
    pub result_model_id: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub job_id: String,
    pub base: ModelRef,
    pub status: JobStatus,
    pub checkpoints: Vec<Checkpoint>,
    pub result_model: Option<ModelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FineTuneJob {
    fn check_invariants(&self) -> Result<()> {
        let regress = |message: String| Error::JobRegression {
            job_id: self.job_id.clone(),
            message,
        };
        if self.checkpoints.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(regress("checkpoint steps not strictly increasing".into()));
        }
        if (self.status == JobStatus::Succeeded) != self.result_model.is_some() {
            return Err(regress(format!(
                "status {:?} inconsistent with result model presence",
                self.status
            )));
        }
        Ok(())
    }
}

/// Pre- and post-fine-tune completions for one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub pair_id: String,
    pub pre: String,
    pub post: String,
}

/// A completion plus any response fields the client ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionReply {
    pub text: String,
    pub ignored_fields: Vec<String>,
}

impl From<String> for CompletionReply {
    fn from(text: String) -> Self {
        Self {
            text,
            ignored_fields: Vec::new(),
        }
    }
}

/// One transport to a family of model versions.
pub trait ModelBackend: Send + Sync {
    fn complete(
        &self,
        model_id: &str,
        prompt: &str,
        max_new_tokens: usize,
    ) -> Result<CompletionReply>;

    /// Submits a fine-tune job and returns its id.
    fn start_finetune(&self, base_model_id: &str, spec: &FineTuneSpec) -> Result<String>;

    fn fetch_job(&self, job_id: &str) -> Result<JobSnapshot>;

    /// Whether `model_id` can still be queried (used when resuming audits).
    fn knows_model(&self, _model_id: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempts run out. Delays double after each failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts.max(1) => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    pub retry: RetryPolicy,
    /// Completions in flight at once.
    pub parallelism: usize,
    /// Repeats per prompt for majority voting; 1 trusts deterministic decoding.
    pub votes: usize,
    pub poll_interval: Duration,
    /// Give up waiting on a fine-tune job after this long.
    pub job_timeout: Duration,
    /// Per-request timeout for HTTP endpoints.
    pub request_timeout: Duration,
    pub token: Option<String>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            parallelism: 8,
            votes: 1,
            poll_interval: Duration::from_secs(10),
            job_timeout: Duration::from_secs(48 * 3600),
            request_timeout: Duration::from_secs(120),
            token: None,
        }
    }
}

/// Completions for a batch, keyed by pair id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub completions: BTreeMap<String, String>,
    /// Pair ids whose completion failed after retries, with the error text.
    pub failures: BTreeMap<String, String>,
}

pub struct ModelClient {
    endpoint: String,
    backend: Arc<dyn ModelBackend>,
    opts: ClientOptions,
    jobs_started: AtomicUsize,
    warnings: Mutex<BTreeSet<String>>,
}

impl std::fmt::Debug for ModelClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelClient")
            .field("endpoint", &self.endpoint)
            .field("opts", &self.opts)
            .finish_non_exhaustive()
    }
}

impl ModelClient {
    /// Resolves `sim:<spec.json>` to the simulator and `http(s)://…` to the
    /// HTTP adapter.
    pub fn connect(endpoint: &str, opts: ClientOptions) -> Result<Self> {
        let backend: Arc<dyn ModelBackend> = if let Some(path) = endpoint.strip_prefix(SIM_SCHEME) {
            let spec = SimSpec::load(std::path::Path::new(path))?;
            Arc::new(SimBackend::from_spec(&spec)?)
        } else if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
            Arc::new(HttpBackend::with_timeout(
                endpoint,
                opts.token.clone(),
                opts.request_timeout,
            )?)
        } else {
            return Err(Error::InvalidArgument(format!(
                "unsupported endpoint `{endpoint}` (expected sim:<path> or http(s)://)"
            )));
        };
        Ok(Self::with_backend(endpoint, backend, opts))
    }

    pub fn with_backend(
        endpoint: impl Into<String>,
        backend: Arc<dyn ModelBackend>,
        opts: ClientOptions,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            backend,
            opts,
            jobs_started: AtomicUsize::new(0),
            warnings: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn options(&self) -> &ClientOptions {
        &self.opts
    }

    pub fn model(&self, model_id: impl Into<String>) -> ModelRef {
        ModelRef::new(self.endpoint.clone(), model_id)
    }

    /// Number of fine-tune jobs this client has submitted.
    pub fn finetune_jobs_started(&self) -> usize {
        self.jobs_started.load(Ordering::SeqCst)
    }

    /// Sorted, de-duplicated warnings raised so far.
    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().unwrap().iter().cloned().collect()
    }

    fn warn(&self, msg: String) {
        self.warnings.lock().unwrap().insert(msg);
    }

    pub fn knows_model(&self, model: &ModelRef) -> bool {
        model.endpoint == self.endpoint && self.backend.knows_model(&model.model_id)
    }

    fn check_endpoint(&self, model: &ModelRef) -> Result<()> {
        if model.endpoint != self.endpoint {
            return Err(Error::InvalidArgument(format!(
                "model {} belongs to endpoint {}, client is bound to {}",
                model.model_id, model.endpoint, self.endpoint
            )));
        }
        Ok(())
    }

    fn complete_once(
        &self,
        model: &ModelRef,
        prompt: &str,
        max_new_tokens: usize,
    ) -> Result<String> {
        let reply = self.opts.retry.run(|| {
            self.backend
                .complete(&model.model_id, prompt, max_new_tokens)
        })?;
        for field in reply.ignored_fields {
            self.warn(format!("ignored extra completion response field `{field}`"));
        }
        Ok(reply.text)
    }

    /// Top-1 continuation of `prompt`. With `votes > 1`, the most frequent
    /// answer wins and ties go to the earliest.
    pub fn complete(
        &self,
        model: &ModelRef,
        prompt: &str,
        max_new_tokens: usize,
    ) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::EmptyPrompt);
        }
        self.check_endpoint(model)?;
        let votes = self.opts.votes.max(1);
        if votes == 1 {
            return self.complete_once(model, prompt, max_new_tokens);
        }
        let mut tally: Vec<(String, usize)> = Vec::new();
        for _ in 0..votes {
            let text = self.complete_once(model, prompt, max_new_tokens)?;
            match tally.iter_mut().find(|(t, _)| *t == text) {
                Some((_, c)) => *c += 1,
                None => tally.push((text, 1)),
            }
        }
        if tally.len() > 1 {
            self.warn(format!(
                "endpoint returned divergent completions under {votes}-way voting"
            ));
        }
        let best = tally.iter().map(|(_, c)| *c).max().unwrap_or(0);
        Ok(tally.into_iter().find(|(_, c)| *c == best).unwrap().0)
    }

    /// Completes `(pair_id, prompt)` items with at most `parallelism` calls in
    /// flight. Failures are collected rather than aborting the batch.
    pub fn complete_batch(
        &self,
        model: &ModelRef,
        items: &[(String, String)],
        max_new_tokens: usize,
    ) -> BatchOutcome {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<String>)>> =
            Mutex::new(Vec::with_capacity(items.len()));
        let workers = self.opts.parallelism.max(1).min(items.len().max(1));
        let work = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= items.len() {
                break;
            }
            let r = self.complete(model, &items[i].1, max_new_tokens);
            results.lock().unwrap().push((i, r));
        };
        if workers == 1 {
            work();
        } else {
            thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        let mut out = BatchOutcome::default();
        for (i, r) in results.into_inner().unwrap() {
            let id = items[i].0.clone();
            match r {
                Ok(text) => {
                    out.completions.insert(id, text);
                }
                Err(e) => {
                    out.failures.insert(id, e.to_string());
                }
            }
        }
        out
    }

    /// Submits a fine-tune job; the base model is never modified.
    pub fn start_finetune(&self, base: &ModelRef, spec: &FineTuneSpec) -> Result<FineTuneJob> {
        self.check_endpoint(base)?;
        if spec.pairs.is_empty() {
            return Err(Error::InvalidArgument("fine-tune spec has no pairs".into()));
        }
        spec.hyperparams.validate()?;
        let job_id = self
            .opts
            .retry
            .run(|| self.backend.start_finetune(&base.model_id, spec))?;
        self.jobs_started.fetch_add(1, Ordering::SeqCst);
        Ok(FineTuneJob {
            job_id,
            base: base.clone(),
            status: JobStatus::Pending,
            checkpoints: Vec::new(),
            result_model: None,
            error: None,
        })
    }

    /// Refreshes `job`, rejecting status regressions and shrinking checkpoint lists.
    pub fn poll_finetune(&self, job: &FineTuneJob) -> Result<FineTuneJob> {
        let snap = self
            .opts
            .retry
            .run(|| self.backend.fetch_job(&job.job_id))?;
        let regress = |message: String| Error::JobRegression {
            job_id: job.job_id.clone(),
            message,
        };
        if snap.status.rank() < job.status.rank()
            || (job.status.is_terminal() && snap.status != job.status)
        {
            return Err(regress(format!("{:?} -> {:?}", job.status, snap.status)));
        }
        if snap.checkpoints.len() < job.checkpoints.len()
            || snap.checkpoints[..job.checkpoints.len()] != job.checkpoints[..]
        {
            return Err(regress("checkpoint list shrank or changed".into()));
        }
        let next = FineTuneJob {
            job_id: job.job_id.clone(),
            base: job.base.clone(),
            status: snap.status,
            checkpoints: snap.checkpoints,
            result_model: snap
                .result_model_id
                .filter(|_| snap.status == JobStatus::Succeeded)
                .map(|id| self.model(id)),
            error: snap.error,
        };
        if next.status == JobStatus::Succeeded && next.result_model.is_none() {
            return Err(Error::ProtocolViolation(format!(
                "job {} succeeded without a result_model_id",
                job.job_id
            )));
        }
        next.check_invariants()?;
        Ok(next)
    }

    /// Polls until the job reaches a terminal state. A failed job becomes
    /// [`Error::FineTuneFailed`].
    pub fn wait_finetune(&self, job: FineTuneJob) -> Result<FineTuneJob> {
        let start = std::time::Instant::now();
        let mut job = job;
        loop {
            job = self.poll_finetune(&job)?;
            match job.status {
                JobStatus::Succeeded => return Ok(job),
                JobStatus::Failed => {
                    return Err(Error::FineTuneFailed {
                        job_id: job.job_id.clone(),
                        diagnostics: job
                            .error
                            .clone()
                            .unwrap_or_else(|| "no diagnostics returned".into()),
                    })
                }
                _ if start.elapsed() > self.opts.job_timeout => {
                    return Err(Error::FineTuneFailed {
                        job_id: job.job_id.clone(),
                        diagnostics: format!("timed out after {:?}", self.opts.job_timeout),
                    })
                }
                _ => thread::sleep(self.opts.poll_interval),
            }
        }
    }
}

/// Which model a finished job hands to the post-fine-tune phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointChoice {
    pub model: ModelRef,
    pub step: Option<u64>,
    /// True when no usable checkpoint existed and the job's final model was
    /// used instead.
    pub fallback: bool,
}

/// Index of the minimum after min–max normalization; ties go to the
/// smaller step.
pub fn argmin_normalized_loss(losses: &[(u64, f64)]) -> Option<usize> {
    let finite: Vec<(usize, u64, f64)> = losses
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| l.is_finite())
        .map(|(i, &(s, l))| (i, s, l))
        .collect();
    let lo = finite.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let norm = |l: f64| if span > 0.0 { (l - lo) / span } else { 0.0 };
    finite
        .into_iter()
        .min_by(|a, b| norm(a.2).total_cmp(&norm(b.2)).then(a.1.cmp(&b.1)))
        .map(|x| x.0)
}

/// Picks the checkpoint with the lowest normalized fine-tuning loss.
pub fn select_checkpoint(
    job: &FineTuneJob,
    finetune_losses: &[(u64, f64)],
) -> Result<CheckpointChoice> {
    if job.status != JobStatus::Succeeded {
        return Err(Error::InvalidArgument(format!(
            "job {} has not succeeded ({:?})",
            job.job_id, job.status
        )));
    }
    let fallback = || {
        job.result_model
            .clone()
            .map(|model| CheckpointChoice {
                model,
                step: None,
                fallback: true,
            })
            .ok_or_else(|| {
                Error::ProtocolViolation(format!("job {} has no result model", job.job_id))
            })
    };
    let Some(i) = argmin_normalized_loss(finetune_losses) else {
        return fallback();
    };
    let step = finetune_losses[i].0;
    let model_id = job
        .checkpoints
        .iter()
        .find(|c| c.step == step)
        .and_then(|c| c.model_id.clone());
    match model_id {
        Some(id) => Ok(CheckpointChoice {
            model: ModelRef::new(job.base.endpoint.clone(), id),
            step: Some(step),
            fallback: false,
        }),
        None => fallback(),
    }
}
