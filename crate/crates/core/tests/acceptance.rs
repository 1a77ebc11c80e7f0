//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use codeplay_core::advantage::{compute_trr, EPSILON};
use codeplay_core::harness::{string_list_literal, string_literal, DriverTemplate, Harness};
use codeplay_core::metrics::{ast_edit_distance, ProgramProfile, DEFAULT_NODE_BUDGET};
use codeplay_core::orchestrator::{self, RunConfig};
use codeplay_core::rewards::{RewardBreakdown, SolveRateEstimate};
use codeplay_core::sandbox::ValidationFailure;
use codeplay_core::solver::{verify_abduction, verify_deduction, verify_induction, Verification};
use codeplay_core::types::{ParseStatus, Role, RolloutRecord, TaskRecord, TaskType};
use codeplay_core::{BufferSet, Sandbox};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(), String>;

fn main() {
    let criteria: [(&str, &str, Duration, Check); 8] = [
        ("PRIMARY", "reward exactness", Duration::from_secs(1), reward_exactness),
        ("PRIMARY", "advantage oracle equivalence", Duration::from_secs(5), advantage_oracle),
        ("PRIMARY", "validation pipeline corpus", Duration::from_secs(60), validation_corpus),
        ("PRIMARY", "verification semantics", Duration::from_secs(120), verification_semantics),
        ("PRIMARY", "end-to-end determinism", Duration::from_secs(120), end_to_end_determinism),
        ("PRIMARY", "seeding contract", Duration::from_secs(120), seeding_contract),
        ("PRIMARY", "metrics invariance", Duration::from_secs(600), metrics_invariance),
        ("SECONDARY", "harness templates", Duration::from_secs(30), harness_templates),
    ];
    let mut failed = 0;
    for (tier, name, limit, check) in criteria {
        let started = Instant::now();
        let result = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = started.elapsed();
        let result = result.and_then(|()| {
            if elapsed <= limit {
                Ok(())
            } else {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match result {
            Ok(()) => println!("PASS [{tier}] {name} ({elapsed:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{tier}] {name} ({elapsed:.2?}): {why}");
            }
        }
        std::io::stdout().flush().ok();
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sandbox() -> Sandbox {
    Sandbox::with_defaults().expect("sandbox")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn reward_exactness() -> Result<(), String> {
    let statuses = [ParseStatus::WellFormatted, ParseStatus::FormatError];
    let mut cases = 0;
    for k in 0..=8 {
        let rate = k as f64 / 8.0;
        let expected_learnability = if k == 0 || k == 8 { 0.0 } else { (8 - k) as f64 / 8.0 };
        for t in TaskType::ALL {
            for status in statuses {
                for passed in [true, false] {
                    let est = SolveRateEstimate {
                        rate,
                        successes: k,
                        rollouts: 8,
                        transport_failures: 0,
                    };
                    let b = RewardBreakdown::proposer(t, status, passed, Some(&est)).map_err(|e| e.to_string())?;
                    let expected = match (status, passed) {
                        (ParseStatus::FormatError, _) | (_, false) => -1.0,
                        _ => expected_learnability,
                    };
                    ensure((b.raw_role - expected_learnability).abs() <= 1e-12, || format!("r_propose({rate}) = {}", b.raw_role))?;
                    ensure((b.composite - expected).abs() <= 1e-12, || format!("proposer {t} {status:?} passed={passed} rate={rate}: {}", b.composite))?;
                    cases += 1;
                }
            }
        }
    }
    for t in TaskType::ALL {
        for status in statuses {
            for correct in [true, false] {
                let b = RewardBreakdown::solver(t, status, correct);
                let expected = match (status, correct) {
                    (ParseStatus::FormatError, _) => -1.0,
                    (_, true) => 1.0,
                    (_, false) => -0.5,
                };
                ensure((b.composite - expected).abs() <= 1e-12, || format!("solver {t} {status:?} correct={correct}: {}", b.composite))?;
                cases += 1;
            }
        }
        let unverified = RewardBreakdown::proposer(t, ParseStatus::WellFormatted, true, None).map_err(|e| e.to_string())?;
        ensure(unverified.composite == -1.0, || "proposal without estimate must be penalized".into())?;
    }
    ensure(cases == 9 * 3 * 4 + 12, || format!("{cases} cases"))
}

/// Two-pass mean and population deviation, recomputed per record by scanning
/// the whole batch.
fn brute_force(records: &[RolloutRecord]) -> Vec<f64> {
    records
        .iter()
        .map(|r| {
            let same: Vec<f64> = records.iter().filter(|o| o.task_type == r.task_type && o.role == r.role).map(|o| o.reward).collect();
            let n = same.len() as f64;
            let mu = same.iter().sum::<f64>() / n;
            let var = same.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let sigma = var.sqrt();
            if sigma > 1e-8 {
                (r.reward - mu) / sigma
            } else {
                0.0
            }
        })
        .collect()
}

fn advantage_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let all_groups: Vec<(TaskType, Role)> = TaskType::ALL.iter().flat_map(|&t| Role::ALL.map(|r| (t, r))).collect();
    for batch in 0..200 {
        let size = rng.random_range(1..=256);
        let n_groups = rng.random_range(1..=6);
        let mut groups = all_groups.clone();
        for i in 0..groups.len() {
            let j = rng.random_range(i..groups.len());
            groups.swap(i, j);
        }
        groups.truncate(n_groups);
        let mut records: Vec<RolloutRecord> = (0..size)
            .map(|_| {
                let (t, role) = groups[rng.random_range(0..n_groups)];
                let reward = match rng.random_range(0..3) {
                    0 => [-1.0, -0.5, 0.0, 1.0][rng.random_range(0..4)],
                    1 => rng.random_range(0..=8) as f64 / 8.0,
                    _ => rng.random_range(-1.0..1.0),
                };
                RolloutRecord {
                    iteration: batch,
                    role,
                    task_type: t,
                    prompt: String::new(),
                    response: String::new(),
                    parse_status: ParseStatus::WellFormatted,
                    reward,
                    advantage: f64::NAN,
                }
            })
            .collect();
        let expected = brute_force(&records);
        compute_trr(&mut records);
        for (r, e) in records.iter().zip(&expected) {
            ensure((r.advantage - e).abs() <= 1e-9, || format!("batch {batch}: {} vs oracle {e}", r.advantage))?;
        }
        for &(t, role) in &groups {
            let adv: Vec<f64> = records.iter().filter(|r| r.task_type == t && r.role == role).map(|r| r.advantage).collect();
            if adv.is_empty() {
                continue;
            }
            let rewards: Vec<f64> = records.iter().filter(|r| r.task_type == t && r.role == role).map(|r| r.reward).collect();
            let n = adv.len() as f64;
            let mu = adv.iter().sum::<f64>() / n;
            let sd = (adv.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / n).sqrt();
            let rmu = rewards.iter().sum::<f64>() / n;
            let rsd = (rewards.iter().map(|a| (a - rmu).powi(2)).sum::<f64>() / n).sqrt();
            ensure(mu.abs() < 1e-9, || format!("batch {batch} {t}/{role}: mean {mu}"))?;
            if rsd > EPSILON {
                ensure((sd - 1.0).abs() < 1e-6, || format!("batch {batch} {t}/{role}: std {sd}"))?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Clean,
    Forbidden,
    Nondeterministic,
    Raises,
}

fn validation_corpus() -> Result<(), String> {
    let clean = [
        ("def f(x):\n    return x", "\"Hello World\""),
        ("def f(a, b):\n    return a * b + 1", "3, 4"),
        ("def f(xs):\n    return sorted(xs, reverse=True)", "[3, 1, 2]"),
        ("def f(s):\n    return {c: s.count(c) for c in sorted(set(s))}", "'banana'"),
        ("from fractions import Fraction\n\ndef f(n):\n    return sum(Fraction(1, k) for k in range(1, n + 1))", "4"),
        ("def g(n):\n    return n if n < 2 else g(n - 1) + g(n - 2)\n\ndef f(n):\n    return [g(i) for i in range(n)]", "10"),
        ("import math\n\ndef f(x):\n    return math.gcd(x, 84)", "120"),
        ("class Box:\n    def __init__(self, v):\n        self.v = v\n\ndef f(v):\n    return Box(v).v * 2", "21"),
        ("import collections\n\ndef f(words):\n    return collections.Counter(words).most_common(1)", "['a', 'b', 'a']"),
        ("def f(m):\n    return [list(r) for r in zip(*m)]", "[[1, 2], [3, 4]]"),
    ];
    let forbidden = [
        ("import random\n\ndef f(x):\n    return random.randint(0, x)", "random"),
        ("import subprocess\n\ndef f(x):\n    return x", "subprocess"),
        ("import os.path\n\ndef f(x):\n    return os.path.join('a', x)", "os.path"),
        ("import os\n\ndef f(x):\n    return os.environ.get('HOME', x)", "os.environ"),
        ("import sys\n\ndef f(x):\n    if x < 0:\n        sys.exit(1)\n    return x", "sys.exit"),
        ("from datetime import date\n\ndef f(x):\n    return date(2020, 1, x).isoformat()", "datetime"),
        ("import time\n\ndef f(x):\n    return x + int(time.time() * 0)", "time"),
        ("import hashlib\n\ndef f(s):\n    return hashlib.md5(s.encode()).hexdigest()", "hashlib"),
        ("import threading\n\ndef f(x):\n    return threading.active_count() * 0 + x", "threading"),
        ("import logging\n\ndef f(x):\n    logging.info('x')\n    return x", "logging"),
    ];
    let nondeterministic = [
        "_calls = [0]\n\ndef f(x):\n    _calls[0] += 1\n    return x + _calls[0]",
        "def f(x, seen=[]):\n    seen.append(x)\n    return len(seen)",
        "import uuid\n\ndef f(x):\n    return str(uuid.uuid4())[:x]",
        "import os\n\ndef f(n):\n    return os.urandom(n)",
        "_state = {'n': 7}\n\ndef f(x):\n    _state['n'] = (_state['n'] * 31 + x) % 1000\n    return _state['n']",
    ];
    let raising = [
        ("def f(x):\n    return 1 / x", "0"),
        ("def f(d):\n    return d['missing']", "{'a': 1}"),
        ("def f(xs):\n    return xs[10]", "[1, 2]"),
        ("def f(x):\n    return x + 'a'", "1"),
        ("def f(x):\n    raise ValueError('no')", "1"),
    ];

    let mut corpus: Vec<(String, String, Class, Option<&str>)> = Vec::new();
    corpus.extend(clean.iter().map(|(p, i)| (p.to_string(), i.to_string(), Class::Clean, None)));
    corpus.extend(forbidden.iter().map(|(p, m)| (p.to_string(), "1".to_string(), Class::Forbidden, Some(*m))));
    for (p, i) in forbidden.iter().map(|(p, _)| p).zip(["5", "1", "'b'", "'v'", "2", "3", "4", "'abc'", "6", "7"]) {
        corpus.iter_mut().find(|c| &c.0 == p).unwrap().1 = i.to_string();
    }
    corpus.extend(nondeterministic.iter().map(|p| (p.to_string(), "4".to_string(), Class::Nondeterministic, None)));
    corpus.extend(raising.iter().map(|(p, i)| (p.to_string(), i.to_string(), Class::Raises, None)));
    ensure(corpus.len() == 30, || format!("{} programs", corpus.len()))?;

    let sb = sandbox();
    ensure(sb.config().determinism_runs == 2, || "determinism runs must default to 2".into())?;
    let mut errors = Vec::new();
    use rayon::prelude::*;
    let verdicts: Vec<_> = corpus.par_iter().map(|(p, i, _, _)| sb.validate_and_construct(p, i)).collect();
    for ((program, _, want, module), v) in corpus.iter().zip(verdicts) {
        let v = v.map_err(|e| e.to_string())?;
        let got = match &v.failure {
            None => Class::Clean,
            Some(ValidationFailure::Unsafe { .. }) => Class::Forbidden,
            Some(ValidationFailure::Nondeterministic { .. }) => Class::Nondeterministic,
            Some(ValidationFailure::Raised { .. }) => Class::Raises,
            Some(other) => {
                errors.push(format!("{program:?}: unexpected {other:?}"));
                continue;
            }
        };
        if got != *want {
            errors.push(format!("{program:?}: expected {want:?}, got {got:?} ({:?})", v.failure));
        }
        if got == Class::Clean && v.output.is_none() {
            errors.push(format!("{program:?}: clean but no output"));
        }
        if let Some(m) = module {
            if !v.offending.iter().any(|o| o == m) {
                errors.push(format!("{program:?}: offending {:?} lacks {m}", v.offending));
            }
        }
    }
    ensure(errors.is_empty(), || format!("{} misclassified: {}", errors.len(), errors.join("; ")))
}

fn verification_semantics() -> Result<(), String> {
    let sb = sandbox();
    let run = |program: &str, input: &str| -> Result<String, String> {
        let v = sb.validate_and_construct(program, input).map_err(|e| e.to_string())?;
        v.output.ok_or_else(|| format!("{program:?} on {input} did not validate: {:?}", v.failure))
    };
    let mut errors = Vec::new();

    let fraction = "from fractions import Fraction\n\ndef f(n):\n    return Fraction(1, n)";
    let set_prog = "def f(xs):\n    return set(xs)";
    let dict_prog = "def f(k):\n    return {k: 1, 'z': [1, 2]}";
    let deduction: [(&str, &str, &str, bool); 20] = [
        (set_prog, "[3, 1, 2]", "{3, 2, 1}", true),
        (set_prog, "[3, 1, 2]", "{2, 1, 3}", true),
        (set_prog, "['b', 'a']", "{'a', 'b'}", true),
        (fraction, "2", "0.5", true),
        (fraction, "2", "Fraction(2, 4)", true),
        (fraction, "4", "1/4", true),
        (dict_prog, "'a'", "{'z': [1, 2], 'a': 1}", true),
        ("def f(x):\n    return x / 2", "2", "1", true),
        ("def f(s):\n    return s.upper()", "'ab'", "\"AB\"", true),
        ("def f(x):\n    return (x,)", "5", "( 5, )", true),
        (set_prog, "[3, 1, 2]", "{1, 2}", false),
        (set_prog, "[3, 1, 2]", "[1, 2, 3]", false),
        (fraction, "2", "0.3", false),
        (fraction, "3", "0.33", false),
        ("def f(xs):\n    return xs[::-1]", "[1, 2]", "[1, 2]", false),
        ("def f(x):\n    return str(x)", "1", "1", false),
        ("def f(x):\n    return (x, x)", "1", "[1, 1]", false),
        (dict_prog, "'a'", "{'a': 1, 'z': [2, 1]}", false),
        ("def f(x):\n    return x * 2", "4", "[8", false),
        ("def f(x):\n    return None if x else 0", "0", "None", false),
    ];
    for (program, input, answer, accept) in deduction {
        let gold = run(program, input)?;
        let v = verify_deduction(&sb, program, &gold, answer).map_err(|e| e.to_string())?;
        if (v == Verification::Correct) != accept {
            errors.push(format!("deduction {program:?}({input}) gold {gold} answer {answer}: {v:?}"));
        }
    }

    let constant = "def f(x):\n    return 7";
    let gold = run(constant, "0")?;
    for input in ["0", "'anything'", "[1, 2, 3]", "None", "{'k': 'v'}"] {
        let v = verify_abduction(&sb, constant, &gold, input).map_err(|e| e.to_string())?;
        if v != Verification::Correct {
            errors.push(format!("abduction constant with {input}: {v:?}"));
        }
    }
    let square = "def f(x):\n    return x * x";
    let gold = run(square, "3")?;
    for (input, accept) in [("-3", true), ("3", true), ("2", false), ("'3'", false)] {
        let v = verify_abduction(&sb, square, &gold, input).map_err(|e| e.to_string())?;
        if (v == Verification::Correct) != accept {
            errors.push(format!("abduction square with {input}: {v:?}"));
        }
    }

    let golds = [
        "def f(x):\n    return x * 3 + 1",
        "def f(x):\n    return x % 4",
        "def f(x):\n    return [i for i in range(x) if i % 2]",
        "def f(x):\n    return bin(x)[2:]",
        "def f(x):\n    return sum(range(x))",
    ];
    let inputs: Vec<String> = (1..=6).map(|i| (i * 3).to_string()).collect();
    let mut induction_cases = 0;
    for gold in golds {
        let pairs: Vec<(String, String)> = inputs.iter().map(|i| Ok((i.clone(), run(gold, i)?))).collect::<Result<_, String>>()?;
        let visible = &pairs[..pairs.len() / 2];
        let mut hardcoded = String::from("def f(x):\n");
        for (i, o) in visible {
            hardcoded.push_str(&format!("    if x == {i}:\n        return {o}\n"));
        }
        hardcoded.push_str("    return 0\n");
        for (agent, accept) in [(gold.to_string(), true), (hardcoded, false)] {
            let v = verify_induction(&sb, &agent, &pairs).map_err(|e| e.to_string())?;
            let visible_only = verify_induction(&sb, &agent, visible).map_err(|e| e.to_string())?;
            if visible_only != Verification::Correct {
                errors.push(format!("induction {agent:?} fails even the visible pairs"));
            }
            if (v == Verification::Correct) != accept {
                errors.push(format!("induction {agent:?}: {v:?}"));
            }
            induction_cases += 1;
        }
    }
    ensure(induction_cases == 10, || format!("{induction_cases} induction cases"))?;
    ensure(errors.is_empty(), || format!("{} errors: {}", errors.len(), errors.join("; ")))
}

fn smoke(out: &Path, iterations: u64) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture("smoke.toml")).expect("smoke config");
    cfg.paths.output = out.to_path_buf();
    cfg.iterations = iterations;
    cfg
}

fn run(cfg: &RunConfig) -> Result<orchestrator::RunReport, String> {
    let policy = orchestrator::build_policy(cfg).map_err(|e| e.to_string())?;
    orchestrator::run_self_play(cfg, policy.as_ref()).map_err(|e| e.to_string())
}

const RUN_FILES: [&str; 4] = ["experience.jsonl", "buffers/abduction.jsonl", "buffers/deduction.jsonl", "buffers/induction.jsonl"];

fn same_files(a: &Path, b: &Path) -> Result<(), String> {
    for f in RUN_FILES {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, || format!("{f} differs"))?;
    }
    Ok(())
}

fn end_to_end_determinism() -> Result<(), String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_a = smoke(a.path(), 2);
    ensure(cfg_a.loop_settings.batch_size == 2, || "smoke config must use B=2".into())?;
    run(&cfg_a)?;
    run(&smoke(b.path(), 2))?;
    same_files(a.path(), b.path())?;
    let records = orchestrator::read_experience(&a.path().join("experience.jsonl")).map_err(|e| e.to_string())?;
    for it in 0..2 {
        let n = records.iter().filter(|r| r.iteration == it).count();
        ensure(n == 2 * 6, || format!("iteration {it}: {n} records"))?;
    }
    ensure(records.len() == 24, || format!("{} records", records.len()))
}

fn comment_tokens(program: &str) -> Result<usize, String> {
    let mut child = Command::new("python3")
        .args(["-c", "import io, sys, tokenize\nprint(sum(t.type == tokenize.COMMENT for t in tokenize.generate_tokens(io.StringIO(sys.stdin.read()).readline)))"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child.stdin.take().unwrap().write_all(program.as_bytes()).map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    String::from_utf8_lossy(&out.stdout).trim().parse().map_err(|e| format!("tokenize: {e}"))
}

fn seeding_contract() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = smoke(dir.path(), 0);
    cfg.loop_settings.batch_size = 4;
    cfg.loop_settings.seed_factor = 4;
    let report = run(&cfg)?;
    ensure(report.buffer_sizes == [16; 3], || format!("buffer sizes {:?}", report.buffer_sizes))?;
    let buffers = BufferSet::load_dir(&dir.path().join("buffers"), cfg.buffer_capacity).map_err(|e| e.to_string())?;
    ensure(buffers.lens() == [16; 3], || format!("on-disk sizes {:?}", buffers.lens()))?;

    let sb = sandbox();
    let mut had_comment_source = false;
    for t in TaskType::ALL {
        for task in buffer_items(&buffers, t) {
            let pairs: Vec<(String, String)> = match &task {
                TaskRecord::Triplet(tr) => vec![(tr.input.clone(), tr.output.clone())],
                TaskRecord::Induction(ind) => ind.pairs.clone(),
            };
            for (i, o) in pairs {
                let got = sb.execute(task.program(), &i, sb.timeout());
                ensure(got.value() == Some(o.as_str()), || format!("{t}: p({i}) = {:?}, stored {o}", got.outcome))?;
            }
            let n = comment_tokens(task.program())?;
            ensure(n == 0, || format!("{t}: seed program keeps {n} comments: {:?}", task.program()))?;
            had_comment_source |= task.program().contains("return x + 1");
        }
    }
    ensure(had_comment_source, || "the mock's commented program should have been seeded (stripped)".into())
}

fn buffer_items(buffers: &BufferSet, t: TaskType) -> Vec<TaskRecord> {
    buffers.get(t).items().to_vec()
}

fn metrics_invariance() -> Result<(), String> {
    let on = tempfile::tempdir().map_err(|e| e.to_string())?;
    let off = tempfile::tempdir().map_err(|e| e.to_string())?;
    run(&smoke(on.path(), 2))?;
    let mut cfg = smoke(off.path(), 2);
    cfg.metrics = false;
    run(&cfg)?;
    same_files(on.path(), off.path())?;
    ensure(on.path().join("metrics.jsonl").exists() && !off.path().join("metrics.jsonl").exists(), || "metrics sidecar presence".into())?;

    let sb = sandbox();
    let buffers = BufferSet::load_dir(&on.path().join("buffers"), cfg.buffer_capacity).map_err(|e| e.to_string())?;
    let mut programs: Vec<String> = TaskType::ALL.iter().flat_map(|&t| buffer_items(&buffers, t)).map(|t| t.program().to_string()).collect();
    programs.sort();
    programs.dedup();
    for p in &programs {
        let profile = ProgramProfile::fetch(&sb, p).map_err(|e| e.to_string())?;
        let d = ast_edit_distance(&profile, &profile, DEFAULT_NODE_BUDGET).ok_or_else(|| format!("no distance for {p:?}"))?;
        ensure(d.value == 0.0 && !d.token_fallback, || format!("self-distance {} for {p:?}", d.value))?;
    }
    ensure(!programs.is_empty(), || "no buffered programs".into())
}

fn harness_templates() -> Result<(), String> {
    let harness = Harness::embedded();
    let zero = codeplay_core::Triplet::zero();
    let mut b: BTreeMap<&str, String> = BTreeMap::new();
    b.insert("code", zero.program.clone());
    b.insert("inputs", zero.input.clone());
    b.insert("runs", "2".into());
    b.insert("gold_output", string_literal(&zero.output));
    b.insert("agent_input", zero.input.clone());
    b.insert("agent_output", string_literal(&zero.output));
    b.insert("gold_inputs", string_list_literal([zero.input.as_str()]));
    b.insert("gold_outputs", string_list_literal([zero.output.as_str()]));
    let expected = [
        (DriverTemplate::Validate, "OK 'Hello World'"),
        (DriverTemplate::Determinism, "OK 'Hello World'"),
        (DriverTemplate::AbductionEval, "OK True"),
        (DriverTemplate::DeductionEval, "OK True"),
        (DriverTemplate::InductionEval, "OK True"),
    ];
    let runner = harness.runner().to_string();
    let mut rendered = Vec::new();
    for (t, want) in expected {
        let driver = harness.render(t, &b).map_err(|e| e.to_string())?;
        let stdout = python(&["-c", &runner], &driver)?;
        let lines: Vec<&str> = stdout.lines().collect();
        ensure(lines == [want], || format!("{t}: stdout {stdout:?}"))?;
        rendered.push((t.to_string(), driver));
    }
    rendered.push(("runner.py".into(), runner));
    for (name, src) in rendered {
        let out = python(&["-c", "import sys\ncompile(sys.stdin.read(), 'fixture', 'exec')\nprint('compiled')"], &src)?;
        ensure(out.trim() == "compiled", || format!("{name} failed to compile: {out}"))?;
    }
    Ok(())
}

fn python(args: &[&str], stdin: &str) -> Result<String, String> {
    let mut child = Command::new("python3")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr))
}
