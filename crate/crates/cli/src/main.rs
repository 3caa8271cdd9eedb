//! `shiftaudit`: run label-only dataset-inference audits from the command line.
//!
//! Exit codes: 0 non-member, 2 member, 1 error.

mod config;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use shiftaudit_core::corpus::{load_corpus, make_pairs, split_halves, Corpus};
use shiftaudit_core::evaluation::{
    aggregate_repeats, load_reports, outcome_from_report, outcomes_csv, parse_labels_csv, summarize,
};
use shiftaudit_core::inference::{audit_fingerprint, StageStore};
use shiftaudit_core::scenario::run_scenario;
use shiftaudit_core::similarity::RemoteScorer;
use shiftaudit_core::{
    AuditInput, AuditReport, Auditor, ClientOptions, CorpusFormat, Decision, FinetuneMode, Metric,
    ModelClient, PairMode, PairRecord, Scorer,
};

use config::FileConfig;
use manifest::ManifestBuilder;

pub const TOKEN_ENV: &str = "SHIFTAUDIT_API_TOKEN";

#[derive(Parser, Debug)]
#[command(
    name = "shiftaudit",
    version,
    about = "Label-only dataset-inference audits"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set audit.n_test=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `sim:<spec.json>` or `http(s)://host:port`.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    metric: Option<Metric>,
    /// paired_finetune or shared_finetune.
    #[arg(long, global = true)]
    mode: Option<FinetuneMode>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    baseline_threshold: Option<f64>,
    #[arg(long, global = true)]
    n_finetune: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    #[arg(long, global = true)]
    max_new_tokens: Option<usize>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a corpus into prompt/completion pairs.
    Pairs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<CorpusFormat>,
        #[arg(long = "pair-mode")]
        pair_mode: Option<PairMode>,
        /// Share of tokens that go to the prompt.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Dual test: baseline shortcut, otherwise the fine-tune output-shift test.
    Audit(AuditArgs),
    /// Ground-truth similarity baseline only; no fine-tuning.
    Baseline(AuditArgs),
    /// Sweep the simulator over the `[scenario]` grid.
    Simulate,
    /// AUC and F1 over a directory of reports.
    Evaluate {
        #[arg(long)]
        reports: PathBuf,
        /// `dataset_id,label` CSV; falls back to labels stored in the reports.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Member iff p < threshold; defaults to the configured alpha.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Args, Debug, Clone)]
struct AuditArgs {
    #[arg(long)]
    suspicious: Option<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    /// Audit one half of the validation corpus against the other (a null self-check).
    #[arg(long)]
    halves: bool,
    #[arg(long)]
    dataset_id: Option<String>,
    /// Keep completed stages under `<out>/stages` and reuse them on rerun.
    #[arg(long)]
    resume: bool,
}

impl Global {
    fn load(&self) -> Result<FileConfig> {
        let mut cfg = config::load(self.config.as_deref(), &self.set)?;
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        for audit in [&mut cfg.audit, &mut cfg.scenario.audit] {
            macro_rules! set {
                ($($field:ident),*) => {$( if let Some(v) = self.$field { audit.$field = v; } )*};
            }
            set!(
                seed,
                metric,
                mode,
                alpha,
                baseline_threshold,
                n_finetune,
                n_test,
                max_new_tokens
            );
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self
            .out
            .clone()
            .ok_or_else(|| anyhow!("--out is required"))?;
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }
}

fn api_token() -> Option<String> {
    std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

fn client(cfg: &FileConfig) -> Result<ModelClient> {
    let endpoint = cfg
        .endpoint
        .as_deref()
        .ok_or_else(|| anyhow!("no endpoint: pass --endpoint or set `endpoint` in the config"))?;
    let opts = ClientOptions {
        parallelism: cfg.parallelism.max(1),
        token: api_token(),
        poll_interval: if endpoint.starts_with("sim:") {
            Duration::ZERO
        } else {
            ClientOptions::default().poll_interval
        },
        ..ClientOptions::default()
    };
    Ok(ModelClient::connect(endpoint, opts)?)
}

fn read_pairs(
    path: &Path,
    format: CorpusFormat,
    cfg: &FileConfig,
    manifest: &mut ManifestBuilder,
) -> Result<Vec<PairRecord>> {
    manifest.input(path)?;
    Ok(match load_corpus(path, format)? {
        Corpus::Pairs(p) => p,
        Corpus::Texts(t) => make_pairs(&t, &cfg.pairing)?.pairs,
    })
}

fn snapshot(cfg: &FileConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn cmd_pairs(
    global: &Global,
    input: &Path,
    format: Option<CorpusFormat>,
    mode: Option<PairMode>,
    ratio: Option<f64>,
) -> Result<ExitCode> {
    let mut cfg = global.load()?;
    if let Some(m) = mode {
        cfg.pairing.mode = m;
    }
    if let Some(r) = ratio {
        cfg.pairing.split_ratio = r;
    }
    let format = format.unwrap_or(cfg.format);
    let out = global.out_dir()?;
    let mut manifest = ManifestBuilder::new("pairs", snapshot(&cfg)?);
    manifest.input(input)?;
    let (pairs, dropped) = match load_corpus(input, format)? {
        Corpus::Pairs(p) => (p, 0),
        Corpus::Texts(t) => {
            let pairing = make_pairs(&t, &cfg.pairing)?;
            (pairing.pairs, pairing.dropped)
        }
    };
    let path = out.join("pairs.jsonl");
    let mut body = Vec::new();
    for p in &pairs {
        serde_json::to_writer(&mut body, p)?;
        body.push(b'\n');
    }
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    manifest.output(path);
    manifest.finish(&out)?;
    println!("{} pairs written, {dropped} records dropped", pairs.len());
    Ok(ExitCode::SUCCESS)
}

fn exit_for(decision: Decision) -> ExitCode {
    match decision {
        Decision::Member => ExitCode::from(2),
        Decision::NonMember => ExitCode::SUCCESS,
    }
}

fn cmd_audit(global: &Global, args: &AuditArgs, baseline_only: bool) -> Result<ExitCode> {
    let mut cfg = global.load()?;
    if let Some(f) = args.format {
        cfg.format = f;
    }
    let out = global.out_dir()?;
    let mut manifest = ManifestBuilder::new(
        if baseline_only { "baseline" } else { "audit" },
        snapshot(&cfg)?,
    );
    let validation_path = args
        .validation
        .clone()
        .or_else(|| cfg.validation.clone())
        .ok_or_else(|| anyhow!("no validation corpus: pass --validation or set `validation`"))?;
    let validation = read_pairs(&validation_path, cfg.format, &cfg, &mut manifest)?;
    let (suspicious, validation, provenance) = if args.halves {
        let (a, b) = split_halves(&validation, cfg.audit.seed);
        (a, b, format!("other half of {}", validation_path.display()))
    } else {
        let path = args
            .suspicious
            .clone()
            .or_else(|| cfg.suspicious.clone())
            .ok_or_else(|| {
                anyhow!("no suspicious corpus: pass --suspicious or set `suspicious`")
            })?;
        (
            read_pairs(&path, cfg.format, &cfg, &mut manifest)?,
            validation,
            cfg.validation_provenance.clone(),
        )
    };
    let client = client(&cfg)?;
    let base = client.model(cfg.model_id.clone());
    let bundle = cfg.audit.bundle(suspicious, validation, provenance)?;
    let input = AuditInput {
        dataset_id: args
            .dataset_id
            .clone()
            .or_else(|| cfg.dataset_id.clone())
            .unwrap_or_else(|| {
                if args.halves {
                    "halves".into()
                } else {
                    "suspicious".into()
                }
            }),
        label: cfg.label,
        bundle,
    };
    let scorer = match (cfg.audit.metric, &cfg.scorer_endpoint) {
        (Metric::Embedding, Some(url)) => {
            Scorer::embedding(RemoteScorer::new(url.clone(), api_token())?)
        }
        (Metric::Embedding, None) => {
            bail!("the embedding metric needs `scorer_endpoint` in the config")
        }
        (metric, _) => Scorer::lexical(metric)?,
    };
    let mut auditor = Auditor::new(&client, base.clone(), cfg.audit.clone(), scorer)?;
    if args.resume {
        let fingerprint = audit_fingerprint(&base, &cfg.audit, &input.bundle)?;
        auditor = auditor.with_store(StageStore::open(&out.join("stages"), &fingerprint)?);
    }
    let report = if baseline_only {
        auditor.run_baseline(&input)?
    } else {
        auditor.dual_test(&input)?
    };
    for w in &report.run_metadata.warnings {
        log::warn!("{w}");
    }
    manifest.outputs(report.write_artifacts(&out)?);
    if args.resume {
        for entry in fs::read_dir(out.join("stages"))? {
            manifest.output(entry?.path());
        }
    }
    manifest.finish(&out)?;
    print_verdict(&report);
    Ok(exit_for(report.decision))
}

fn print_verdict(report: &AuditReport) {
    let verdict = match report.decision {
        Decision::Member => "member",
        Decision::NonMember => "non-member",
    };
    println!(
        "{}: {verdict} (p = {:.3e}, decided by {:?})",
        report.run_metadata.dataset_id, report.p_value, report.decided_by
    );
}

fn cmd_simulate(global: &Global) -> Result<ExitCode> {
    let cfg = global.load()?;
    let out = global.out_dir()?;
    let mut manifest = ManifestBuilder::new("simulate", snapshot(&cfg)?);
    let reports = run_scenario(&cfg.scenario, cfg.parallelism)?;
    let mut labels = String::from("dataset_id,label\n");
    for r in &reports {
        let id = &r.run_metadata.dataset_id;
        manifest.outputs(r.write_artifacts(&out.join(id))?);
        let label = match r.run_metadata.label {
            Some(shiftaudit_core::MembershipLabel::Member) => "member",
            _ => "non_member",
        };
        labels.push_str(&format!("{id},{label}\n"));
    }
    let labels_path = out.join("labels.csv");
    fs::write(&labels_path, labels)?;
    manifest.output(labels_path);
    manifest.finish(&out)?;
    let flagged = reports
        .iter()
        .filter(|r| r.decision == Decision::Member)
        .count();
    println!(
        "{} subsets audited, {flagged} flagged member",
        reports.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(
    global: &Global,
    reports_dir: &Path,
    labels: Option<&Path>,
    threshold: Option<f64>,
) -> Result<ExitCode> {
    let cfg = global.load()?;
    let threshold = threshold.unwrap_or(cfg.audit.alpha);
    let out = global.out_dir()?;
    let mut manifest = ManifestBuilder::new("evaluate", snapshot(&cfg)?);
    let label_map = match labels {
        Some(p) => {
            manifest.input(p)?;
            parse_labels_csv(
                &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            )?
        }
        None => Default::default(),
    };
    let reports = load_reports(reports_dir)?;
    if reports.is_empty() {
        bail!("no report.json found under {}", reports_dir.display());
    }
    let mut outcomes = Vec::new();
    for (path, report) in &reports {
        manifest.input(path)?;
        outcomes.push(outcome_from_report(report, &label_map)?);
    }
    let outcomes = aggregate_repeats(&outcomes)?;
    let summary = summarize(&outcomes, threshold)?;
    let summary_path = out.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    let csv_path = out.join("outcomes.csv");
    fs::write(&csv_path, outcomes_csv(&outcomes, threshold))?;
    manifest.outputs([summary_path, csv_path]);
    manifest.finish(&out)?;
    println!(
        "AUC {:.4}, F1 {:.4} at threshold {threshold} over {} datasets",
        summary.auc,
        summary.f1,
        outcomes.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Pairs {
            input,
            format,
            pair_mode,
            ratio,
        } => cmd_pairs(g, input, *format, *pair_mode, *ratio),
        Command::Audit(args) => cmd_audit(g, args, false),
        Command::Baseline(args) => cmd_audit(g, args, true),
        Command::Simulate => cmd_simulate(g),
        Command::Evaluate {
            reports,
            labels,
            threshold,
        } => cmd_evaluate(g, reports, labels.as_deref(), *threshold),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap would exit 2, which here means "member"
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
