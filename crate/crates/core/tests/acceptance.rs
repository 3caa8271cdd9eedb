//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Every oracle here is written from scratch and shares no code with the
//! library beyond the public API under test.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use shiftaudit_core::corpus::{load_corpus, make_pairs, split_halves, Corpus};
use shiftaudit_core::evaluation::{auc, f1_at, LabeledOutcome};
use shiftaudit_core::inference::{decide, queried_ids};
use shiftaudit_core::model::RetryPolicy;
use shiftaudit_core::scenario::{null_trial, run_scenario, ScenarioConfig};
use shiftaudit_core::similarity::{sim_exact, sim_lcs_ratio, sim_ngram_f1};
use shiftaudit_core::stats::{ecdf, ks_two_sample, mwu_two_sample};
use shiftaudit_core::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// statistical oracles

/// KS statistic scaled by m·n, computed by evaluating both ECDFs at every pooled point.
fn ks_scaled(s: &[f64], v: &[f64]) -> i64 {
    let (m, n) = (s.len() as i64, v.len() as i64);
    s.iter()
        .chain(v)
        .map(|&x| {
            let fs = s.iter().filter(|&&y| y <= x).count() as i64;
            let fv = v.iter().filter(|&&y| y <= x).count() as i64;
            (fs * n - fv * m).abs()
        })
        .max()
        .unwrap()
}

/// 2·U − m·n, from pairwise comparisons; ties count one half.
fn mwu_doubled_centered(s: &[f64], v: &[f64]) -> i64 {
    let mut twice_u = 0i64;
    for a in s {
        for b in v {
            twice_u += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    (twice_u - (s.len() * v.len()) as i64).abs()
}

/// Permutation p-values for (KS, MWU) over every labeling encoded as a bitmask.
fn brute_force(s: &[f64], v: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = s.iter().chain(v).copied().collect();
    let total = pooled.len();
    let (d_obs, u_obs) = (ks_scaled(s, v), mwu_doubled_centered(s, v));
    let (mut ks_hits, mut mwu_hits, mut labelings) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != s.len() {
            continue;
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, &x) in pooled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                a.push(x)
            } else {
                b.push(x)
            }
        }
        labelings += 1;
        ks_hits += (ks_scaled(&a, &b) >= d_obs) as u64;
        mwu_hits += (mwu_doubled_centered(&a, &b) >= u_obs) as u64;
    }
    (
        ks_hits as f64 / labelings as f64,
        mwu_hits as f64 / labelings as f64,
    )
}

fn sample(rng: &mut ChaCha8Rng, len: usize, tied: bool) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if tied {
                rng.gen_range(0..4) as f64 / 4.0
            } else {
                rng.gen::<f64>()
            }
        })
        .collect()
}

fn statistical_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0;
    let mut worst: f64 = 0.0;
    for total in 2..=12 {
        for m in 1..total {
            for tied in [false, true] {
                let s = sample(&mut rng, m, tied);
                let v = sample(&mut rng, total - m, tied);
                let (ks_p, mwu_p) = brute_force(&s, &v);
                let ks = ks_two_sample(&s, &v, KsMode::Exact).map_err(|e| e.to_string())?;
                let mwu = mwu_two_sample(&s, &v).map_err(|e| e.to_string())?;
                let err = (ks.p_value - ks_p).abs().max((mwu.p_value - mwu_p).abs());
                worst = worst.max(err);
                ensure(err <= 1e-9, || {
                    format!(
                        "m={m} n={} tied={tied}: ks {} vs {ks_p}, mwu {} vs {mwu_p}",
                        total - m,
                        ks.p_value,
                        mwu.p_value
                    )
                })?;
                compared += 1;
            }
        }
    }

    // asymptotic KS at n = m = 50 against 10^4 seeded permutations
    let mut mc_worst: f64 = 0.0;
    for (k, shift) in [0.0, 0.1, 0.15, 0.2, 0.3].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + k as u64);
        let s: Vec<f64> = (0..50).map(|_| rng.gen::<f64>() + shift).collect();
        let v: Vec<f64> = (0..50).map(|_| rng.gen::<f64>()).collect();
        let observed = ks_scaled(&s, &v);
        let mut pooled: Vec<f64> = s.iter().chain(&v).copied().collect();
        let hits = (0..10_000)
            .filter(|_| {
                pooled.shuffle(&mut rng);
                ks_scaled(&pooled[..50], &pooled[50..]) >= observed
            })
            .count();
        let mc = hits as f64 / 10_000.0;
        let asym = ks_two_sample(&s, &v, KsMode::Asymptotic)
            .map_err(|e| e.to_string())?
            .p_value;
        mc_worst = mc_worst.max((asym - mc).abs());
        ensure((asym - mc).abs() <= 0.05, || {
            format!("shift {shift}: asymptotic {asym:.4} vs Monte-Carlo {mc:.4}")
        })?;
    }

    // exact p-values are super-uniform under the null
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let trials = 2000;
    let rejections = (0..trials)
        .filter(|_| {
            let s = sample(&mut rng, 8, false);
            let v = sample(&mut rng, 8, false);
            ks_two_sample(&s, &v, KsMode::Auto).unwrap().p_value < 0.1
        })
        .count();
    let rate = rejections as f64 / trials as f64;
    ensure(rate <= 0.12, || {
        format!("null rejection rate {rate} at n = m = 8")
    })?;

    Ok(format!(
        "{compared} exact cases, max error {worst:.1e}; asymptotic vs Monte-Carlo max gap {mc_worst:.4}; null rate {rate:.3}"
    ))
}

// ---------------------------------------------------------------------------
// simulator-level criteria

fn null_calibration() -> Check {
    let config = ScenarioConfig::default();
    let cells = config.cells();
    let trials: Vec<u64> = (0..200).collect();
    let reports = trials
        .par_iter()
        .map(|&t| null_trial(&config, &cells[t as usize % cells.len()], t))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let members = reports
        .iter()
        .filter(|r| r.decision == Decision::Member)
        .count();
    let rate = members as f64 / reports.len() as f64;
    let min_p = reports.iter().map(|r| r.p_value).fold(1.0, f64::min);
    ensure(rate <= 0.12, || {
        format!("{members}/200 null trials flagged member")
    })?;
    Ok(format!(
        "{members}/200 flagged member, smallest p = {min_p:.4}"
    ))
}

fn simulated_separation() -> Check {
    let config = ScenarioConfig::default();
    ensure(config.cells().len() == 16, || "grid is not 4×4".into())?;
    let parallelism = std::thread::available_parallelism().map_or(1, |n| n.get());
    let first = run_scenario(&config, parallelism).map_err(|e| e.to_string())?;
    let outcomes: Vec<LabeledOutcome> = first
        .iter()
        .map(|r| {
            LabeledOutcome::new(
                &r.run_metadata.dataset_id,
                r.run_metadata.label.unwrap(),
                r.p_value,
            )
        })
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let area = auc(&outcomes).map_err(|e| e.to_string())?;
    let f1 = f1_at(&outcomes, config.audit.alpha);
    ensure(area >= 0.95, || format!("AUC {area:.4}"))?;
    ensure(f1.confusion.fp == 0, || {
        format!("{} false positives", f1.confusion.fp)
    })?;

    let second = run_scenario(&config, parallelism.max(2)).map_err(|e| e.to_string())?;
    for (a, b) in first.iter().zip(&second) {
        ensure(
            a.to_canonical_json().unwrap() == b.to_canonical_json().unwrap(),
            || format!("{} differs between runs", a.run_metadata.dataset_id),
        )?;
    }
    Ok(format!(
        "{} subsets, AUC {area:.4}, F1 {:.4}, fp {}, fn {}, reruns identical",
        first.len(),
        f1.f1,
        f1.confusion.fp,
        f1.confusion.fn_
    ))
}

// ---------------------------------------------------------------------------
// fixture-level criteria

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn fixture_pairs(name: &str) -> Vec<PairRecord> {
    let Corpus::Texts(texts) = load_corpus(&fixture(name), CorpusFormat::TextLines).unwrap() else {
        panic!("text fixture expected")
    };
    make_pairs(&texts, &PairOptions::default()).unwrap().pairs
}

fn fixture_config(mode: FinetuneMode) -> AuditConfig {
    AuditConfig {
        n_finetune: 15,
        n_test: 20,
        seed: 7,
        max_new_tokens: 16,
        mode,
        hyperparams: Hyperparams {
            batch_size: 4,
            checkpoint_every: 2,
            ..Hyperparams::default()
        },
        ..AuditConfig::default()
    }
}

fn fixture_client(spec: &str) -> ModelClient {
    let opts = ClientOptions {
        poll_interval: Duration::ZERO,
        retry: RetryPolicy {
            attempts: 1,
            base_delay: Duration::ZERO,
        },
        ..ClientOptions::default()
    };
    ModelClient::connect(&format!("sim:{}", fixture(spec).display()), opts).unwrap()
}

struct Case {
    spec: &'static str,
    halves: bool,
    mode: FinetuneMode,
}

impl Case {
    fn input(&self) -> AuditInput {
        let cfg = fixture_config(self.mode);
        let (suspicious, validation) = if self.halves {
            split_halves(&fixture_pairs("validation.txt"), 3)
        } else {
            (
                fixture_pairs("members.txt"),
                fixture_pairs("validation.txt"),
            )
        };
        AuditInput {
            dataset_id: format!("{}{}", self.spec, if self.halves { "/halves" } else { "" }),
            label: None,
            bundle: cfg.bundle(suspicious, validation, "fixture").unwrap(),
        }
    }

    fn dual(&self) -> Result<AuditReport> {
        let client = fixture_client(self.spec);
        Auditor::lexical(&client, client.model("base"), fixture_config(self.mode))?
            .dual_test(&self.input())
    }

    fn catshift(&self) -> Result<AuditReport> {
        let client = fixture_client(self.spec);
        Auditor::lexical(&client, client.model("base"), fixture_config(self.mode))?
            .run_catshift(&self.input())
    }
}

fn case(spec: &'static str) -> Case {
    Case {
        spec,
        halves: false,
        mode: FinetuneMode::PairedFinetune,
    }
}

fn dual_test_contract() -> Check {
    let err = |e: Error| e.to_string();
    let echo = case("sim_echo.json").dual().map_err(err)?;
    let b = echo
        .baseline
        .as_ref()
        .ok_or("echo report lacks a baseline")?;
    ensure(
        echo.decided_by == DecidedBy::BaselineShortcut
            && echo.decision == Decision::Member
            && b.p_value < 1e-3
            && b.direction_member
            && echo.finetunes.is_empty()
            && echo.run_metadata.finetune_job_ids.is_empty()
            && echo.ks.is_none(),
        || {
            format!(
                "echo fixture: {:?} by {:?}, jobs {:?}",
                echo.decision, echo.decided_by, echo.run_metadata.finetune_job_ids
            )
        },
    )?;

    let mut lines = vec![format!(
        "shortcut at baseline p = {:.2e} with 0 jobs",
        b.p_value
    )];
    for spec in ["sim_inverted.json", "sim_member.json", "sim_unseen.json"] {
        let dual = case(spec).dual().map_err(err)?;
        let alone = case(spec).catshift().map_err(err)?;
        let ks = dual
            .ks
            .as_ref()
            .ok_or_else(|| format!("{spec}: no KS result"))?;
        let base = dual
            .baseline
            .as_ref()
            .ok_or_else(|| format!("{spec}: no baseline"))?;
        ensure(!(base.p_value < 1e-3 && base.direction_member), || {
            format!("{spec}: shortcut conditions unexpectedly hold")
        })?;
        ensure(
            dual.decided_by == DecidedBy::Catshift
                && dual.decision == decide(ks.p_value, 0.1)
                && dual.decision == alone.decision
                && dual.p_value == alone.p_value,
            || {
                format!(
                    "{spec}: dual {:?} p={} vs catshift {:?} p={}",
                    dual.decision, dual.p_value, alone.decision, alone.p_value
                )
            },
        )?;
        lines.push(format!(
            "{spec} → {:?} (baseline p {:.1e})",
            dual.decision, base.p_value
        ));
    }
    let inverted = case("sim_inverted.json").dual().map_err(err)?;
    ensure(inverted.baseline.as_ref().unwrap().p_value < 1e-3, || {
        "inverted fixture should have a significant non-member-direction baseline".into()
    })?;
    ensure(inverted.decision == Decision::NonMember, || {
        "inverted fixture flagged member".into()
    })?;
    ensure(
        case("sim_member.json").dual().map_err(err)?.decision == Decision::Member,
        || "member fixture not flagged".into(),
    )?;
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// property suites

fn words(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| ["a", "b", "c", "d", "e"][rng.gen_range(0..5)])
        .collect::<Vec<_>>()
        .join(" ")
}

fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn property_suites() -> Check {
    ensure(
        sim_ngram_f1("the cat sat", "the cat ran", 1).value == 2.0 / 3.0,
        || "2/3 hand case".into(),
    )?;
    ensure(sim_ngram_f1("a b", "c d", 1).value == 0.0, || {
        "disjoint unigrams".into()
    })?;
    ensure(
        sim_exact("a  b", "a b").value == 1.0 && sim_exact("abc", "abd").value == 0.0,
        || "exact match cases".into(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let (la, lb) = (rng.gen_range(0..10), rng.gen_range(0..10));
        let (a, b) = (words(&mut rng, la), words(&mut rng, lb));
        let n = rng.gen_range(1..4);
        for (name, ab, ba, aa) in [
            (
                "ngram",
                sim_ngram_f1(&a, &b, n).value,
                sim_ngram_f1(&b, &a, n).value,
                sim_ngram_f1(&a, &a, n).value,
            ),
            (
                "lcs",
                sim_lcs_ratio(&a, &b).value,
                sim_lcs_ratio(&b, &a).value,
                sim_lcs_ratio(&a, &a).value,
            ),
            (
                "exact",
                sim_exact(&a, &b).value,
                sim_exact(&b, &a).value,
                sim_exact(&a, &a).value,
            ),
        ] {
            ensure(ab == ba && aa == 1.0 && (0.0..=1.0).contains(&ab), || {
                format!("{name} on {a:?} / {b:?}: {ab} {ba} {aa}")
            })?;
        }
        let (ta, tb): (Vec<&str>, Vec<&str>) = (
            a.split_whitespace().collect(),
            b.split_whitespace().collect(),
        );
        if !ta.is_empty() && !tb.is_empty() {
            let l = lcs_oracle(&ta, &tb) as f64;
            let (p, r) = (l / ta.len() as f64, l / tb.len() as f64);
            let expected = if l == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let got = sim_lcs_ratio(&a, &b).value;
            ensure((got - expected).abs() < 1e-12, || {
                format!("lcs {a:?} / {b:?}: {got} vs {expected}")
            })?;
        }
    }

    for _ in 0..100 {
        let len = rng.gen_range(1..30);
        let xs = sample(&mut rng, len, true);
        let steps = ecdf(&xs).map_err(|e| e.to_string())?;
        for &(x, f) in &steps {
            let expected = xs.iter().filter(|&&y| y <= x).count() as f64 / xs.len() as f64;
            ensure(f == expected, || format!("ecdf at {x}: {f} vs {expected}"))?;
        }
        ensure(steps.last().unwrap().1 == 1.0, || {
            "ecdf does not end at 1".into()
        })?;
    }

    for _ in 0..1000 {
        let len = rng.gen_range(2..25);
        let mut outcomes: Vec<LabeledOutcome> = (0..len)
            .map(|i| {
                let label = if rng.gen_bool(0.5) {
                    MembershipLabel::Member
                } else {
                    MembershipLabel::NonMember
                };
                LabeledOutcome::new(format!("d{i}"), label, rng.gen_range(0..6) as f64 / 5.0)
                    .unwrap()
            })
            .collect();
        outcomes[0].true_label = MembershipLabel::Member;
        outcomes[1].true_label = MembershipLabel::NonMember;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for m in outcomes
            .iter()
            .filter(|o| o.true_label == MembershipLabel::Member)
        {
            for nm in outcomes
                .iter()
                .filter(|o| o.true_label == MembershipLabel::NonMember)
            {
                pairs += 1.0;
                wins += if nm.p_value > m.p_value {
                    1.0
                } else if nm.p_value == m.p_value {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let got = auc(&outcomes).map_err(|e| e.to_string())?;
        ensure((got - wins / pairs).abs() < 1e-12, || {
            format!("auc {got} vs pair oracle {}", wins / pairs)
        })?;
    }

    let hand: Vec<LabeledOutcome> = [(0.05, true), (0.2, true), (0.5, false), (0.9, false)]
        .into_iter()
        .enumerate()
        .map(|(i, (p, member))| {
            let label = if member {
                MembershipLabel::Member
            } else {
                MembershipLabel::NonMember
            };
            LabeledOutcome::new(format!("h{i}"), label, p).unwrap()
        })
        .collect();
    let f1 = f1_at(&hand, 0.1);
    let c = f1.confusion;
    ensure(
        (c.tp, c.fn_, c.fp, c.tn) == (1, 1, 0, 2) && (f1.f1 - 2.0 / 3.0).abs() < 1e-15,
        || format!("hand F1 case: {c:?} F1 {}", f1.f1),
    )?;
    Ok("similarity 10³ random pairs, ECDF 100 samples, AUC 10³ instances, hand cases".into())
}

fn pipeline_hygiene() -> Check {
    let cases = [
        case("sim_member.json"),
        case("sim_unseen.json"),
        case("sim_echo.json"),
        case("sim_inverted.json"),
        Case {
            halves: true,
            ..case("sim_unseen.json")
        },
        Case {
            mode: FinetuneMode::SharedFinetune,
            ..case("sim_member.json")
        },
    ];
    for c in &cases {
        let label = format!(
            "{} {:?}{}",
            c.spec,
            c.mode,
            if c.halves { " halves" } else { "" }
        );
        let a = c.dual().map_err(|e| format!("{label}: {e}"))?;
        let b = c.dual().map_err(|e| format!("{label}: {e}"))?;
        a.check_invariants().map_err(|e| format!("{label}: {e}"))?;
        ensure(
            a.to_canonical_json().unwrap() == b.to_canonical_json().unwrap(),
            || format!("{label}: reruns differ"),
        )?;
        let meta = &a.run_metadata;
        let queried = queried_ids(&a);
        for (tag, split) in [
            (DatasetTag::Suspicious, &meta.suspicious_split),
            (DatasetTag::Validation, &meta.validation_split),
        ] {
            let tuned: BTreeSet<&String> = split.finetune_ids.iter().collect();
            ensure(split.test_ids.iter().all(|id| !tuned.contains(id)), || {
                format!("{label}: {tag:?} fine-tune and test splits overlap")
            })?;
            ensure(
                queried[&tag]
                    .iter()
                    .all(|id| !tuned.contains(id) && split.test_ids.contains(id)),
                || format!("{label}: {tag:?} queried a pair outside its test split"),
            )?;
        }
        if c.halves {
            let s: BTreeSet<&String> = meta
                .suspicious_split
                .test_ids
                .iter()
                .chain(&meta.suspicious_split.finetune_ids)
                .collect();
            ensure(
                meta.validation_split
                    .test_ids
                    .iter()
                    .chain(&meta.validation_split.finetune_ids)
                    .all(|id| !s.contains(id)),
                || format!("{label}: halves share pairs"),
            )?;
        }
    }
    Ok(format!(
        "{} fixture audits disjoint, invariant-consistent and byte-identical on rerun",
        cases.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("statistical oracle equivalence", statistical_oracles),
        ("null calibration", null_calibration),
        ("simulated separation", simulated_separation),
        ("dual-test contract", dual_test_contract),
        ("similarity/ECDF/AUC properties", property_suites),
        ("pipeline hygiene", pipeline_hygiene),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
