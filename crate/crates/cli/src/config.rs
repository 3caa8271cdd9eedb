//! TOML configuration with `--set key=value` overrides.
//!
//! ```toml
//! endpoint = "sim:model.json"       # or http(s)://host:port
//! model_id = "base"
//! suspicious = "suspicious.txt"     # paths resolve against this file's directory
//! validation = "validation.txt"
//! format = "text-lines"             # text-lines | jsonl-text | jsonl-pairs
//! validation_provenance = "collected after the model's cutoff"
//! parallelism = 8
//! scorer_endpoint = "http://localhost:9000"   # only for metric = "embedding"
//!
//! [pairing]                         # split_ratio, min_prompt_tokens, mode, ...
//! [audit]                           # alpha, baseline_threshold, metric, mode, n_finetune, n_test, seed, ...
//! [audit.hyperparams]               # lora_rank, learning_rate, batch_size, checkpoint_every, ...
//! [scenario]                        # simulate only: gain_recover, gain_new, member_strength, ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use shiftaudit_core::model::SIM_SCHEME;
use shiftaudit_core::scenario::ScenarioConfig;
use shiftaudit_core::{AuditConfig, CorpusFormat, MembershipLabel, PairOptions};
use toml::{Table, Value};

fn default_format() -> CorpusFormat {
    CorpusFormat::TextLines
}

fn default_model_id() -> String {
    "base".into()
}

fn default_parallelism() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub endpoint: Option<String>,
    /// `POST /v1/similarity` service, required for the `embedding` metric.
    pub scorer_endpoint: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    pub suspicious: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default)]
    pub validation_provenance: String,
    pub dataset_id: Option<String>,
    pub label: Option<MembershipLabel>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub pairing: PairOptions,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config deserializes")
    }
}

/// Parses the right-hand side of `--set`: a TOML literal, or a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got `{assignment}`"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed --set key `{key}`");
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set {key}: `{part}` is not a table"))?;
    }
    cursor.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// `sim:` paths are file paths and resolve like any other; URLs pass through.
pub fn resolve_endpoint(base: &Path, endpoint: &str) -> String {
    match endpoint.strip_prefix(SIM_SCHEME) {
        Some(path) => format!("{SIM_SCHEME}{}", resolve(base, Path::new(path)).display()),
        None => endpoint.to_string(),
    }
}

/// Reads `path` (if any), applies overrides, and resolves relative paths
/// against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<FileConfig> {
    let (mut table, base) = match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table: Table =
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: FileConfig = Value::Table(table)
        .try_into()
        .map_err(|e| anyhow!("invalid configuration: {e}"))?;
    cfg.endpoint = cfg.endpoint.map(|e| resolve_endpoint(&base, &e));
    cfg.suspicious = cfg.suspicious.map(|p| resolve(&base, &p));
    cfg.validation = cfg.validation.map(|p| resolve(&base, &p));
    Ok(cfg)
}
