//! Deterministic simulated target model.
//!
//! Memory entries map a normalized prompt to a stored completion and a
//! recall strength. Fine-tuning on a pair already in memory revives it by
//! `gain_recover`, and the revival spreads to every entry sharing its source
//! tag (the rest of the dataset it was trained with). Novel pairs enter at
//! `gain_new`. Decoding reproduces a `strength` fraction of stored tokens once
//! strength reaches `recall_threshold` and emits hashed noise elsewhere.
//! Each fine-tune also re-rolls about half the noise tokens of a `drift`
//! fraction of prompts: the background change any weight update causes on
//! inputs it was not trained on.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Checkpoint, CompletionReply, FineTuneSpec, JobSnapshot, JobStatus, ModelBackend};
use crate::corpus::{
    load_corpus, make_pairs, Corpus, CorpusFormat, PairMode, PairOptions, PairRecord,
};
use crate::error::{Error, Result};
use crate::text::{normalize, stable_hash, tokens, unit_interval};

/// Filler vocabulary for decode noise.
pub const NOISE_VOCAB: [&str; 64] = [
    "the", "of", "and", "to", "in", "is", "that", "for", "it", "as", "was", "with", "be", "by",
    "on", "not", "he", "this", "are", "or", "his", "from", "at", "which", "but", "have", "an",
    "had", "they", "you", "were", "their", "one", "all", "we", "can", "her", "has", "there",
    "been", "if", "more", "when", "will", "would", "who", "so", "no", "she", "other", "its", "may",
    "these", "about", "than", "some", "what", "them", "into", "only", "then", "also", "any", "new",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub completion: String,
    pub strength: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn default_threshold() -> f64 {
    0.5
}

fn default_drift() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModelState {
    /// Keyed by normalized prompt.
    pub memory: BTreeMap<String, MemoryEntry>,
    pub gain_recover: f64,
    pub gain_new: f64,
    pub noise_seed: u64,
    #[serde(default = "default_threshold")]
    pub recall_threshold: f64,
    #[serde(default = "default_drift")]
    pub drift: f64,
    /// Fine-tune rounds applied since the base model.
    #[serde(default)]
    pub generation: u32,
}

impl SimModelState {
    pub fn new(gain_recover: f64, gain_new: f64, noise_seed: u64) -> Self {
        Self {
            memory: BTreeMap::new(),
            gain_recover,
            gain_new,
            noise_seed,
            recall_threshold: default_threshold(),
            drift: default_drift(),
            generation: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gain_recover)
            || !unit(self.gain_new)
            || !unit(self.recall_threshold)
            || !unit(self.drift)
        {
            return Err(Error::InvalidArgument(
                "simulator gains, recall_threshold and drift must lie in [0, 1]".into(),
            ));
        }
        if self.memory.values().any(|e| !unit(e.strength)) {
            return Err(Error::InvalidArgument(
                "memory strengths must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Stores a memory entry for `prompt`, replacing any previous one.
    pub fn remember(
        &mut self,
        prompt: &str,
        completion: &str,
        strength: f64,
        source: Option<&str>,
    ) {
        self.memory.insert(
            normalize(prompt),
            MemoryEntry {
                completion: normalize(completion),
                strength: strength.clamp(0.0, 1.0),
                source: source.map(str::to_string),
            },
        );
    }

    pub fn seed_pairs(&mut self, pairs: &[PairRecord], strength: f64, source: Option<&str>) {
        for p in pairs {
            self.remember(&p.prompt, &p.completion, strength, source);
        }
    }

    /// Best memory match: the exact prompt, else the longest token suffix of
    /// the prompt that is a key (so instruction-wrapped prompts still match).
    fn lookup(&self, key: &str) -> Option<(&String, &MemoryEntry)> {
        if let Some(hit) = self.memory.get_key_value(key) {
            return Some(hit);
        }
        let toks = tokens(key);
        (1..toks.len()).find_map(|i| self.memory.get_key_value(&toks[i..].join(" ")))
    }

    pub fn recall_strength(&self, prompt: &str) -> Option<f64> {
        self.lookup(&normalize(prompt)).map(|(_, e)| e.strength)
    }

    /// Returns the state after one fine-tune round on `pairs`; `self` is untouched.
    pub fn sim_finetune(&self, pairs: &[PairRecord]) -> SimModelState {
        let mut next = self.clone();
        next.generation += 1;
        let mut revived: BTreeSet<String> = BTreeSet::new();
        let mut sources: BTreeSet<String> = BTreeSet::new();
        let mut novel: Vec<(String, String)> = Vec::new();
        for p in pairs {
            let key = normalize(&p.prompt);
            match self.lookup(&key) {
                Some((k, e)) => {
                    revived.insert(k.clone());
                    if let Some(s) = &e.source {
                        sources.insert(s.clone());
                    }
                }
                None => novel.push((key, normalize(&p.completion))),
            }
        }
        for (k, e) in next.memory.iter_mut() {
            let hit = revived.contains(k) || e.source.as_ref().is_some_and(|s| sources.contains(s));
            if hit {
                e.strength = (e.strength + self.gain_recover).min(1.0);
            }
        }
        for (key, completion) in novel {
            next.memory.entry(key).or_insert(MemoryEntry {
                completion,
                strength: self.gain_new.clamp(0.0, 1.0),
                source: None,
            });
        }
        next
    }

    fn noise_token(&self, key: &str, position: usize) -> &'static str {
        let seed = self.noise_seed.to_le_bytes();
        let pos = (position as u64).to_le_bytes();
        let mut epoch = 0u32;
        for g in 1..=self.generation {
            let gb = g.to_le_bytes();
            let drifted =
                unit_interval(stable_hash(&[&seed, key.as_bytes(), b"drift", &gb])) < self.drift;
            if drifted
                && unit_interval(stable_hash(&[&seed, key.as_bytes(), &pos, b"reroll", &gb])) < 0.5
            {
                epoch = g;
            }
        }
        let h = stable_hash(&[&seed, key.as_bytes(), &pos, b"noise", &epoch.to_le_bytes()]);
        NOISE_VOCAB[(h % NOISE_VOCAB.len() as u64) as usize]
    }

    /// Top-1 continuation; a pure function of the state and the prompt.
    pub fn sim_complete(&self, prompt: &str, max_new_tokens: usize) -> Result<String> {
        let key = normalize(prompt);
        if key.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let recalled = self
            .lookup(&key)
            .filter(|(_, e)| e.strength >= self.recall_threshold)
            .map(|(_, e)| (tokens(&e.completion), e.strength));
        let len = recalled
            .as_ref()
            .map_or(max_new_tokens, |(t, _)| t.len())
            .min(max_new_tokens);
        let seed = self.noise_seed.to_le_bytes();
        let out: Vec<&str> = (0..len)
            .map(|t| match &recalled {
                Some((stored, strength)) => {
                    let pos = (t as u64).to_le_bytes();
                    let keep = unit_interval(stable_hash(&[&seed, key.as_bytes(), &pos, b"keep"]));
                    if keep < *strength {
                        stored[t]
                    } else {
                        self.noise_token(&key, t)
                    }
                }
                None => self.noise_token(&key, t),
            })
            .collect();
        Ok(out.join(" "))
    }
}

/// A memory entry given inline in a simulator spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMemory {
    pub prompt: String,
    pub completion: String,
    pub strength: f64,
    #[serde(default)]
    pub source: Option<String>,
}

/// A corpus whose documents are planted in memory at `strength`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCorpus {
    /// Relative paths resolve against the spec file's directory.
    pub path: PathBuf,
    pub format: CorpusFormat,
    pub strength: f64,
    #[serde(default)]
    pub source: Option<String>,
    /// Must match the audit's split ratio so prompts line up. The mode is
    /// always treated as prefix; instruction prompts match by suffix.
    #[serde(default)]
    pub pairing: PairOptions,
}

fn default_model_id() -> String {
    "base".into()
}

/// On-disk description of a simulated endpoint (`sim:<path>`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default = "default_model_id")]
    pub model_id: String,
    pub gain_recover: f64,
    pub gain_new: f64,
    pub noise_seed: u64,
    #[serde(default = "default_threshold")]
    pub recall_threshold: f64,
    #[serde(default = "default_drift")]
    pub drift: f64,
    #[serde(default)]
    pub memory: Vec<SeedMemory>,
    #[serde(default)]
    pub seed_corpora: Vec<SeedCorpus>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SimSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: SimSpec = serde_json::from_str(&text)?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn build_state(&self) -> Result<SimModelState> {
        let mut state = SimModelState::new(self.gain_recover, self.gain_new, self.noise_seed);
        state.recall_threshold = self.recall_threshold;
        state.drift = self.drift;
        for m in &self.memory {
            state.remember(&m.prompt, &m.completion, m.strength, m.source.as_deref());
        }
        for c in &self.seed_corpora {
            let path = if c.path.is_absolute() {
                c.path.clone()
            } else {
                self.base_dir.join(&c.path)
            };
            let pairs = match load_corpus(&path, c.format)? {
                Corpus::Pairs(p) => p,
                Corpus::Texts(t) => {
                    let opts = PairOptions {
                        mode: PairMode::Prefix,
                        ..c.pairing.clone()
                    };
                    make_pairs(&t, &opts)?.pairs
                }
            };
            state.seed_pairs(&pairs, c.strength, c.source.as_deref());
        }
        state.validate()?;
        Ok(state)
    }
}

struct SimJob {
    checkpoints: Vec<Checkpoint>,
    result_model_id: String,
    polls: u32,
}

#[derive(Default)]
struct SimInner {
    models: BTreeMap<String, Arc<SimModelState>>,
    jobs: BTreeMap<String, SimJob>,
    next_job: u64,
}

/// In-process backend serving simulated model versions.
///
/// Fine-tune jobs report `running` with half their checkpoints on the first
/// poll and `succeeded` on the second. Checkpoint `k` is the base state
/// fine-tuned on the pairs seen in the first `k` steps; its loss is the mean
/// of `1 − strength` over the job's pairs.
pub struct SimBackend {
    inner: Mutex<SimInner>,
}

impl SimBackend {
    pub fn new(base_model_id: impl Into<String>, state: SimModelState) -> Self {
        let mut inner = SimInner::default();
        inner.models.insert(base_model_id.into(), Arc::new(state));
        Self {
            inner: Mutex::new(inner),
        }
    }

    pub fn from_spec(spec: &SimSpec) -> Result<Self> {
        Ok(Self::new(spec.model_id.clone(), spec.build_state()?))
    }

    pub fn state(&self, model_id: &str) -> Option<Arc<SimModelState>> {
        self.inner.lock().unwrap().models.get(model_id).cloned()
    }

    fn loss(state: &SimModelState, pairs: &[PairRecord]) -> f64 {
        let total: f64 = pairs
            .iter()
            .map(|p| 1.0 - state.recall_strength(&p.prompt).unwrap_or(0.0))
            .sum();
        total / pairs.len().max(1) as f64
    }
}

impl ModelBackend for SimBackend {
    fn complete(
        &self,
        model_id: &str,
        prompt: &str,
        max_new_tokens: usize,
    ) -> Result<CompletionReply> {
        let state = self
            .state(model_id)
            .ok_or_else(|| Error::UnknownModel(model_id.into()))?;
        Ok(state.sim_complete(prompt, max_new_tokens)?.into())
    }

    fn start_finetune(&self, base_model_id: &str, spec: &FineTuneSpec) -> Result<String> {
        let base = self
            .state(base_model_id)
            .ok_or_else(|| Error::UnknownModel(base_model_id.into()))?;
        if spec.pairs.is_empty() {
            return Err(Error::Endpoint {
                status: 400,
                message: "training set is empty".into(),
            });
        }
        let hp = &spec.hyperparams;
        let batch = hp.batch_size.max(1) as usize;
        let every = u64::from(hp.checkpoint_every.max(1));
        let steps_per_epoch = spec.pairs.len().div_ceil(batch) as u64;
        let total_steps = steps_per_epoch * u64::from(hp.epochs.max(1));
        let mut steps: Vec<u64> = (1..=total_steps).filter(|s| s % every == 0).collect();
        if steps.last() != Some(&total_steps) {
            steps.push(total_steps);
        }

        let mut inner = self.inner.lock().unwrap();
        inner.next_job += 1;
        let n = inner.next_job;
        let job_id = format!("sim-ft-{n}");
        let result_model_id = format!("{base_model_id}+ft{n}");
        let mut checkpoints = Vec::with_capacity(steps.len());
        for &step in &steps {
            let seen_in_epoch = ((step - 1) % steps_per_epoch + 1) as usize * batch;
            let seen = if step >= steps_per_epoch {
                &spec.pairs[..]
            } else {
                &spec.pairs[..seen_in_epoch.min(spec.pairs.len())]
            };
            let state = base.sim_finetune(seen);
            let model_id = format!("{result_model_id}@{step}");
            checkpoints.push(Checkpoint {
                step,
                loss: Self::loss(&state, &spec.pairs),
                model_id: Some(model_id.clone()),
            });
            if step == total_steps {
                inner
                    .models
                    .insert(result_model_id.clone(), Arc::new(state.clone()));
            }
            inner.models.insert(model_id, Arc::new(state));
        }
        inner.jobs.insert(
            job_id.clone(),
            SimJob {
                checkpoints,
                result_model_id,
                polls: 0,
            },
        );
        Ok(job_id)
    }

    fn fetch_job(&self, job_id: &str) -> Result<JobSnapshot> {
        let mut inner = self.inner.lock().unwrap();
        let job = inner
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| Error::UnknownJob(job_id.into()))?;
        job.polls += 1;
        Ok(if job.polls == 1 {
            JobSnapshot {
                status: JobStatus::Running,
                checkpoints: job.checkpoints[..job.checkpoints.len() / 2].to_vec(),
                result_model_id: None,
                error: None,
            }
        } else {
            JobSnapshot {
                status: JobStatus::Succeeded,
                checkpoints: job.checkpoints.clone(),
                result_model_id: Some(job.result_model_id.clone()),
                error: None,
            }
        })
    }

    fn knows_model(&self, model_id: &str) -> bool {
        self.inner.lock().unwrap().models.contains_key(model_id)
    }
}
