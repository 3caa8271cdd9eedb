//! Corpus ingestion, prompt/completion pairing and fine-tune/test splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{splitmix64, tokens};

/// Default instruction wrapper for instruction-tuned targets.
pub const DEFAULT_INSTRUCTION_TEMPLATE: &str = "Complete the following text: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// One document per line.
    TextLines,
    /// JSON lines with a `text` field and optional `id`.
    JsonlText,
    /// JSON lines with `prompt` / `completion` fields and optional `id`.
    JsonlPairs,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-lines" => Ok(Self::TextLines),
            "jsonl-text" => Ok(Self::JsonlText),
            "jsonl-pairs" => Ok(Self::JsonlPairs),
            other => Err(Error::InvalidArgument(format!(
                "unknown corpus format `{other}` (expected text-lines, jsonl-text or jsonl-pairs)"
            ))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TextLines => "text-lines",
            Self::JsonlText => "jsonl-text",
            Self::JsonlPairs => "jsonl-pairs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// The prompt segment is wrapped in an instruction template.
    Instruction,
    /// The bare prefix is the prompt.
    #[default]
    Prefix,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instruction" => Ok(Self::Instruction),
            "prefix" => Ok(Self::Prefix),
            other => Err(Error::InvalidArgument(format!(
                "unknown pair mode `{other}` (expected instruction or prefix)"
            ))),
        }
    }
}

/// One prompt/completion sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub prompt: String,
    pub completion: String,
    #[serde(default)]
    pub mode: PairMode,
}

/// Output of [`load_corpus`]: raw documents or ready-made pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Corpus {
    Texts(Vec<TextRecord>),
    Pairs(Vec<PairRecord>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Texts(t) => t.len(),
            Corpus::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Deserialize)]
struct JsonText {
    id: Option<String>,
    text: String,
}

#[derive(Deserialize)]
struct JsonPair {
    id: Option<String>,
    prompt: String,
    completion: String,
    #[serde(default)]
    mode: Option<PairMode>,
}

/// Reads a corpus file. Records keep input order; ids default to
/// `<filename>#<line>` using 1-based physical line numbers. Blank lines are
/// skipped but still counted.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let malformed = |line: usize, message: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut texts = Vec::new();
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let default_id = || format!("{stem}#{lineno}");
        let id = match format {
            CorpusFormat::TextLines => {
                let id = default_id();
                texts.push(TextRecord {
                    id: id.clone(),
                    text: line,
                });
                id
            }
            CorpusFormat::JsonlText => {
                let rec: JsonText =
                    serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
                if rec.text.trim().is_empty() {
                    return Err(malformed(lineno, "empty `text` field".into()));
                }
                let id = rec.id.unwrap_or_else(default_id);
                texts.push(TextRecord {
                    id: id.clone(),
                    text: rec.text,
                });
                id
            }
            CorpusFormat::JsonlPairs => {
                let rec: JsonPair =
                    serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
                if rec.prompt.trim().is_empty() || rec.completion.trim().is_empty() {
                    return Err(malformed(
                        lineno,
                        "prompt and completion must be non-empty".into(),
                    ));
                }
                let id = rec.id.unwrap_or_else(default_id);
                pairs.push(PairRecord {
                    id: id.clone(),
                    prompt: rec.prompt,
                    completion: rec.completion,
                    mode: rec.mode.unwrap_or_default(),
                });
                id
            }
        };
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
    }

    let corpus = match format {
        CorpusFormat::JsonlPairs => Corpus::Pairs(pairs),
        _ => Corpus::Texts(texts),
    };
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    Ok(corpus)
}

/// Knobs for turning raw documents into prompt/completion pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairOptions {
    /// Fraction of tokens that go to the prompt, in (0, 1).
    pub split_ratio: f64,
    pub min_prompt_tokens: usize,
    pub min_completion_tokens: usize,
    pub mode: PairMode,
    pub instruction_template: String,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            split_ratio: 0.5,
            min_prompt_tokens: 1,
            min_completion_tokens: 1,
            mode: PairMode::Prefix,
            instruction_template: DEFAULT_INSTRUCTION_TEMPLATE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub pairs: Vec<PairRecord>,
    /// Records dropped for failing a length minimum.
    pub dropped: usize,
}

/// Number of prompt tokens for a document of `n` tokens. The completion
/// receives `⌊(1 − ratio)·n⌋` tokens, so odd leftovers go to the prompt.
pub fn prompt_token_count(n: usize, ratio: f64) -> usize {
    let completion = ((1.0 - ratio) * n as f64).floor() as usize;
    n - completion.min(n)
}

/// Cuts each document at the token split point and builds pairs.
pub fn make_pairs(records: &[TextRecord], opts: &PairOptions) -> Result<Pairing> {
    if !(opts.split_ratio > 0.0 && opts.split_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split_ratio must lie in (0,1), got {}",
            opts.split_ratio
        )));
    }
    let min_prompt = opts.min_prompt_tokens.max(1);
    let min_completion = opts.min_completion_tokens.max(1);

    let mut pairs = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for rec in records {
        let toks = tokens(&rec.text);
        let cut = prompt_token_count(toks.len(), opts.split_ratio);
        if cut < min_prompt || toks.len() - cut < min_completion {
            dropped += 1;
            continue;
        }
        let segment = toks[..cut].join(" ");
        let prompt = match opts.mode {
            PairMode::Prefix => segment,
            PairMode::Instruction => format!("{}{}", opts.instruction_template, segment),
        };
        pairs.push(PairRecord {
            id: rec.id.clone(),
            prompt,
            completion: toks[cut..].join(" "),
            mode: opts.mode,
        });
    }
    if pairs.is_empty() {
        return Err(Error::CorpusTooShort { dropped });
    }
    Ok(Pairing { pairs, dropped })
}

/// Disjoint fine-tune and test id lists drawn under a seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub finetune_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub n_finetune: usize,
    pub n_test: usize,
}

impl SplitPlan {
    pub fn finetune_set(&self) -> BTreeSet<&str> {
        self.finetune_ids.iter().map(String::as_str).collect()
    }

    pub fn test_set(&self) -> BTreeSet<&str> {
        self.test_ids.iter().map(String::as_str).collect()
    }
}

/// Uniformly random disjoint subsets; a pure function of pair order and seed.
pub fn split_dataset(
    pairs: &[PairRecord],
    n_finetune: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitPlan> {
    let required = n_finetune + n_test;
    if required > pairs.len() {
        return Err(Error::InsufficientPairs {
            required,
            available: pairs.len(),
        });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let ids = |range: &[usize]| range.iter().map(|&i| pairs[i].id.clone()).collect();
    Ok(SplitPlan {
        finetune_ids: ids(&order[..n_finetune]),
        test_ids: ids(&order[n_finetune..required]),
        seed,
        n_finetune,
        n_test,
    })
}

/// Two disjoint halves of `pairs` under a seeded shuffle; an odd leftover
/// goes to the first half. Used to audit a corpus against itself.
pub fn split_halves(pairs: &[PairRecord], seed: u64) -> (Vec<PairRecord>, Vec<PairRecord>) {
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let second = shuffled.split_off(shuffled.len().div_ceil(2));
    (shuffled, second)
}

/// Picks the records named by `ids`, in `ids` order.
pub fn select_pairs(pairs: &[PairRecord], ids: &[String]) -> Result<Vec<PairRecord>> {
    let by_id: HashMap<&str, &PairRecord> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    ids.iter()
        .map(|id| {
            by_id.get(id.as_str()).map(|p| (*p).clone()).ok_or_else(|| {
                Error::InvalidArgument(format!("split references unknown id `{id}`"))
            })
        })
        .collect()
}

/// Suspicious and validation pairs with their splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub suspicious: Vec<PairRecord>,
    pub validation: Vec<PairRecord>,
    pub suspicious_split: SplitPlan,
    pub validation_split: SplitPlan,
    /// The owner's assertion that the validation data was never trained on.
    /// Recorded, not verified.
    pub validation_provenance: String,
}

/// Seed for the validation split, derived so that the two splits differ
/// even when both corpora share ids.
pub fn validation_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x5641_4c49_4441_5445)
}

impl CorpusBundle {
    /// Splits both datasets. The validation split mirrors the suspicious
    /// sizes; pass `validation_finetune = 0` when the validation set is never
    /// fine-tuned on.
    pub fn build(
        suspicious: Vec<PairRecord>,
        validation: Vec<PairRecord>,
        n_finetune: usize,
        validation_finetune: usize,
        n_test: usize,
        seed: u64,
        validation_provenance: impl Into<String>,
    ) -> Result<Self> {
        let suspicious_split = split_dataset(&suspicious, n_finetune, n_test, seed)?;
        let validation_split = split_dataset(
            &validation,
            validation_finetune,
            n_test,
            validation_seed(seed),
        )?;
        Self::from_parts(
            suspicious,
            validation,
            suspicious_split,
            validation_split,
            validation_provenance,
        )
    }

    pub fn from_parts(
        suspicious: Vec<PairRecord>,
        validation: Vec<PairRecord>,
        suspicious_split: SplitPlan,
        validation_split: SplitPlan,
        validation_provenance: impl Into<String>,
    ) -> Result<Self> {
        let validation_provenance = validation_provenance.into();
        if validation_provenance.trim().is_empty() {
            return Err(Error::InvalidArgument(
                "validation provenance note is required".into(),
            ));
        }
        for (name, pairs, split) in [
            ("suspicious", &suspicious, &suspicious_split),
            ("validation", &validation, &validation_split),
        ] {
            let ids: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
            if ids.len() != pairs.len() {
                return Err(Error::InvalidArgument(format!(
                    "{name} pairs carry duplicate ids"
                )));
            }
            let ft = split.finetune_set();
            let test = split.test_set();
            if ft.len() != split.finetune_ids.len() || test.len() != split.test_ids.len() {
                return Err(Error::InvalidArgument(format!(
                    "{name} split repeats an id"
                )));
            }
            if !ft.is_disjoint(&test) {
                return Err(Error::InvalidArgument(format!(
                    "{name} split: fine-tune and test ids overlap"
                )));
            }
            if let Some(bad) = ft.iter().chain(test.iter()).find(|id| !ids.contains(*id)) {
                return Err(Error::InvalidArgument(format!(
                    "{name} split references unknown id `{bad}`"
                )));
            }
        }
        Ok(Self {
            suspicious,
            validation,
            suspicious_split,
            validation_split,
            validation_provenance,
        })
    }

    pub fn suspicious_finetune(&self) -> Vec<PairRecord> {
        select_pairs(&self.suspicious, &self.suspicious_split.finetune_ids)
            .expect("split validated at construction")
    }

    pub fn suspicious_test(&self) -> Vec<PairRecord> {
        select_pairs(&self.suspicious, &self.suspicious_split.test_ids)
            .expect("split validated at construction")
    }

    pub fn validation_finetune(&self) -> Vec<PairRecord> {
        select_pairs(&self.validation, &self.validation_split.finetune_ids)
            .expect("split validated at construction")
    }

    pub fn validation_test(&self) -> Vec<PairRecord> {
        select_pairs(&self.validation, &self.validation_split.test_ids)
            .expect("split validated at construction")
    }
}

pub const SPLIT_SIDECAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SidecarLine {
    Header {
        version: u32,
        dataset: String,
        seed: u64,
        n_finetune: usize,
        n_test: usize,
    },
    Member {
        dataset: String,
        id: String,
        role: SplitRole,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SplitRole {
    Finetune,
    Test,
}

/// Writes split plans as versioned JSON lines: one header line per dataset
/// followed by one line per id.
pub fn write_split_sidecar<W: Write>(mut out: W, plans: &[(&str, &SplitPlan)]) -> Result<()> {
    let io = |e| Error::io("split sidecar", e);
    for (dataset, plan) in plans {
        let header = SidecarLine::Header {
            version: SPLIT_SIDECAR_VERSION,
            dataset: dataset.to_string(),
            seed: plan.seed,
            n_finetune: plan.n_finetune,
            n_test: plan.n_test,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?).map_err(io)?;
        let roles = plan
            .finetune_ids
            .iter()
            .map(|id| (id, SplitRole::Finetune))
            .chain(plan.test_ids.iter().map(|id| (id, SplitRole::Test)));
        for (id, role) in roles {
            let line = SidecarLine::Member {
                dataset: dataset.to_string(),
                id: id.clone(),
                role,
            };
            writeln!(out, "{}", serde_json::to_string(&line)?).map_err(io)?;
        }
    }
    Ok(())
}

/// Reads a sidecar written by [`write_split_sidecar`], keyed by dataset name.
pub fn read_split_sidecar(text: &str) -> Result<Vec<(String, SplitPlan)>> {
    let mut plans: Vec<(String, SplitPlan)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SidecarLine = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            path: "split sidecar".into(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        match parsed {
            SidecarLine::Header {
                version,
                dataset,
                seed,
                n_finetune,
                n_test,
            } => {
                if version != SPLIT_SIDECAR_VERSION {
                    return Err(Error::InvalidArgument(format!(
                        "unsupported split sidecar version {version}"
                    )));
                }
                plans.push((
                    dataset,
                    SplitPlan {
                        finetune_ids: Vec::new(),
                        test_ids: Vec::new(),
                        seed,
                        n_finetune,
                        n_test,
                    },
                ));
            }
            SidecarLine::Member { dataset, id, role } => {
                let plan = plans
                    .iter_mut()
                    .rev()
                    .find(|(d, _)| *d == dataset)
                    .map(|(_, p)| p)
                    .ok_or_else(|| Error::MalformedLine {
                        path: "split sidecar".into(),
                        line: idx + 1,
                        message: format!("id line before header for `{dataset}`"),
                    })?;
                match role {
                    SplitRole::Finetune => plan.finetune_ids.push(id),
                    SplitRole::Test => plan.test_ids.push(id),
                }
            }
        }
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(id: &str, t: &str) -> TextRecord {
        TextRecord {
            id: id.into(),
            text: t.into(),
        }
    }

    fn write_tmp(name: &str, body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn text_lines_get_positional_ids() {
        let (_d, path) = write_tmp("f", "one two\nthree four\nfive six\n");
        let Corpus::Texts(recs) = load_corpus(&path, CorpusFormat::TextLines).unwrap() else {
            panic!("expected texts");
        };
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["f#1", "f#2", "f#3"]);
        assert_eq!(recs[1].text, "three four");
    }

    #[test]
    fn jsonl_pairs_map_fields() {
        let (_d, path) = write_tmp("p.jsonl", "{\"prompt\":\"a\",\"completion\":\"b\"}\n");
        let Corpus::Pairs(pairs) = load_corpus(&path, CorpusFormat::JsonlPairs).unwrap() else {
            panic!("expected pairs");
        };
        assert_eq!(pairs[0].prompt, "a");
        assert_eq!(pairs[0].completion, "b");
        assert_eq!(pairs[0].id, "p.jsonl#1");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (_d, path) = write_tmp("x.jsonl", "{\"text\":\"ok\"}\n{not json\n");
        match load_corpus(&path, CorpusFormat::JsonlText) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let (_d, path) = write_tmp("e.txt", "\n  \n");
        assert!(matches!(
            load_corpus(&path, CorpusFormat::TextLines),
            Err(Error::EmptyCorpus(_))
        ));
    }

    #[test]
    fn duplicate_explicit_ids_rejected() {
        let (_d, path) = write_tmp(
            "d.jsonl",
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n",
        );
        assert!(matches!(
            load_corpus(&path, CorpusFormat::JsonlText),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn midpoint_prefix_split() {
        let out = make_pairs(&[text("t", "a b c d")], &PairOptions::default()).unwrap();
        assert_eq!(out.pairs[0].prompt, "a b");
        assert_eq!(out.pairs[0].completion, "c d");
    }

    #[test]
    fn three_tokens_leave_a_one_token_completion() {
        // ⌊0.5·3⌋ = 1 completion token, below a minimum of 2.
        let opts = PairOptions {
            min_completion_tokens: 2,
            ..PairOptions::default()
        };
        let err = make_pairs(&[text("t", "a b c")], &opts).unwrap_err();
        assert!(matches!(err, Error::CorpusTooShort { dropped: 1 }));

        let out = make_pairs(&[text("t", "a b c"), text("u", "a b c d")], &opts).unwrap();
        assert_eq!(out.dropped, 1);
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].id, "u");
    }

    #[test]
    fn instruction_mode_prepends_template() {
        let opts = PairOptions {
            mode: PairMode::Instruction,
            ..PairOptions::default()
        };
        let out = make_pairs(&[text("t", "alpha beta gamma delta")], &opts).unwrap();
        assert!(out.pairs[0]
            .prompt
            .starts_with("Complete the following text: "));
        assert_eq!(
            out.pairs[0].prompt,
            "Complete the following text: alpha beta"
        );
    }

    #[test]
    fn bad_ratio_rejected() {
        let opts = PairOptions {
            split_ratio: 1.0,
            ..PairOptions::default()
        };
        assert!(make_pairs(&[text("t", "a b")], &opts).is_err());
    }

    fn pairs(n: usize) -> Vec<PairRecord> {
        (0..n)
            .map(|i| PairRecord {
                id: format!("p{i}"),
                prompt: format!("prompt {i}"),
                completion: format!("completion {i}"),
                mode: PairMode::Prefix,
            })
            .collect()
    }

    #[test]
    fn full_scale_split_is_disjoint() {
        let ps = pairs(1600);
        let plan = split_dataset(&ps, 600, 1000, 42).unwrap();
        assert_eq!(plan.finetune_set().len(), 600);
        assert_eq!(plan.test_set().len(), 1000);
        assert!(plan.finetune_set().is_disjoint(&plan.test_set()));
        assert_eq!(plan, split_dataset(&ps, 600, 1000, 42).unwrap());
    }

    #[test]
    fn small_splits_are_exhaustive_for_many_seeds() {
        let ps = pairs(10);
        let all: BTreeSet<&str> = ps.iter().map(|p| p.id.as_str()).collect();
        for seed in 1..=100 {
            let plan = split_dataset(&ps, 6, 4, seed).unwrap();
            let ft = plan.finetune_set();
            let test = plan.test_set();
            assert!(ft.is_disjoint(&test));
            let union: BTreeSet<&str> = ft.union(&test).copied().collect();
            assert_eq!(union, all);
        }
    }

    #[test]
    fn insufficient_pairs_reports_counts() {
        match split_dataset(&pairs(5), 4, 4, 0) {
            Err(Error::InsufficientPairs {
                required,
                available,
            }) => {
                assert_eq!((required, available), (8, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bundle_requires_provenance() {
        let err = CorpusBundle::build(pairs(4), pairs(4), 1, 1, 2, 0, "  ").unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn sidecar_round_trip() {
        let ps = pairs(20);
        let a = split_dataset(&ps, 5, 10, 3).unwrap();
        let b = split_dataset(&ps, 0, 10, 4).unwrap();
        let mut buf = Vec::new();
        write_split_sidecar(&mut buf, &[("suspicious", &a), ("validation", &b)]).unwrap();
        let back = read_split_sidecar(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(
            back,
            vec![("suspicious".into(), a), ("validation".into(), b)]
        );
    }
}
