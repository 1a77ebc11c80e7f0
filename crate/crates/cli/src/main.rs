//! `codeplay`: command-line driver for seeding, self-play runs and one-shot
//! sandbox checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use codeplay_core::advantage::AdvantageMode;
use codeplay_core::buffer::TaskBuffer;
use codeplay_core::harness::Harness;
use codeplay_core::metrics::MetricsCollector;
use codeplay_core::orchestrator::{self, answer_key, build_policy, read_experience, RunConfig};
use codeplay_core::sandbox::{Sandbox, SandboxConfig};
use codeplay_core::solver::{self, Verification};
use codeplay_core::types::TaskType;

const EXIT_USAGE: u8 = 1;
const EXIT_REJECTED: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "codeplay", version, about = "Self-play engine for code-reasoning tasks")]
struct Cli {
    /// Log filter, e.g. `info` or `codeplay_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed_factor: Option<usize>,
    /// Append every policy call to this transcript.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct SandboxArgs {
    /// Take sandbox and harness settings from this run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    interpreter: Option<PathBuf>,
    /// Harness directory (the built-in harness when unset).
    #[arg(long)]
    harness: Option<PathBuf>,
    /// Per-execution timeout in seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize the task buffers only.
    Seed {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Seed if needed, then run (or resume) the self-play loop.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        advantage_mode: Option<AdvantageMode>,
        #[arg(long)]
        no_metrics: bool,
    },
    /// Run the validation pipeline on one program and input.
    Validate {
        program_file: PathBuf,
        /// Input as a Python expression.
        #[arg(allow_hyphen_values = true)]
        input: String,
        /// Print the full verdict as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        sandbox: SandboxArgs,
    },
    /// Check one answer against a task.
    Verify {
        task_type: TaskType,
        /// Task program (abduction, deduction).
        #[arg(long)]
        program: Option<PathBuf>,
        /// Gold output (abduction, deduction).
        #[arg(long, allow_hyphen_values = true)]
        output: Option<String>,
        /// JSON file of `[input, output]` pairs (induction).
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// The answer: an input, an output, or a program file path for
        /// induction.
        #[arg(long, allow_hyphen_values = true)]
        answer: String,
        #[command(flatten)]
        sandbox: SandboxArgs,
    },
    /// Recompute task metrics over a buffer file.
    Metrics {
        buffer: PathBuf,
        /// Task type of the buffer; inferred from the file name otherwise.
        #[arg(long)]
        task_type: Option<TaskType>,
        /// Earlier buffer programs each task is compared against.
        #[arg(long, default_value_t = 6)]
        references: usize,
        #[command(flatten)]
        sandbox: SandboxArgs,
    },
    /// Recompute advantages over an experience file.
    Replay {
        experience: PathBuf,
        #[arg(long, default_value = "trr")]
        advantage_mode: AdvantageMode,
        /// Write the re-annotated records here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Rejected(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::error::Error) -> Self {
        let mut msg = e.to_string();
        let mut src = e.source();
        while let Some(s) = src {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(&format!(": {text}"));
            }
            src = s.source();
        }
        Failure::Runtime(msg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Rejected(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_REJECTED)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Seed { overrides } => {
            let cfg = load_config(&overrides)?;
            execute_run(&cfg, true)
        }
        Command::Run {
            overrides,
            iterations,
            advantage_mode,
            no_metrics,
        } => {
            let mut cfg = load_config(&overrides)?;
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            if let Some(m) = advantage_mode {
                cfg.advantage_mode = m;
            }
            if no_metrics {
                cfg.metrics = false;
            }
            execute_run(&cfg, false)
        }
        Command::Validate {
            program_file,
            input,
            json,
            sandbox,
        } => validate(&program_file, &input, json, &sandbox),
        Command::Verify {
            task_type,
            program,
            output,
            pairs,
            answer,
            sandbox,
        } => verify(task_type, program.as_deref(), output.as_deref(), pairs.as_deref(), &answer, &sandbox),
        Command::Metrics {
            buffer,
            task_type,
            references,
            sandbox,
        } => metrics(&buffer, task_type, references, &sandbox),
        Command::Replay {
            experience,
            advantage_mode,
            out,
        } => replay(&experience, advantage_mode, out.as_deref()),
    }
}

fn load_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&o.config).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(p) = &o.output {
        cfg.paths.output = p.clone();
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(b) = o.batch_size {
        cfg.loop_settings.batch_size = b;
    }
    if let Some(s) = o.seed_factor {
        cfg.loop_settings.seed_factor = s;
    }
    if let Some(r) = &o.record {
        cfg.paths.record = Some(r.clone());
    }
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn execute_run(cfg: &RunConfig, seed_only: bool) -> Result<(), Failure> {
    let policy = build_policy(cfg).map_err(Failure::runtime)?;
    let report = if seed_only {
        orchestrator::seed_run(cfg, policy.as_ref())
    } else {
        orchestrator::run_self_play(cfg, policy.as_ref())
    }
    .map_err(Failure::runtime)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn build_sandbox(args: &SandboxArgs) -> Result<Sandbox, Failure> {
    let (mut config, mut harness_dir) = match &args.config {
        Some(p) => {
            let cfg = RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?;
            (cfg.sandbox, cfg.paths.harness)
        }
        None => (SandboxConfig::default(), None),
    };
    if let Some(i) = &args.interpreter {
        config.interpreter = i.clone();
    }
    if let Some(h) = &args.harness {
        harness_dir = Some(h.clone());
    }
    if let Some(t) = args.timeout {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage("--timeout must be a positive number of seconds".into()));
        }
        config.timeout = Duration::from_secs_f64(t);
    }
    let harness = match harness_dir {
        Some(d) => Harness::from_dir(&d).map_err(Failure::runtime)?,
        None => Harness::embedded(),
    };
    Sandbox::new(config, harness).map_err(Failure::runtime)
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn validate(program_file: &Path, input: &str, json: bool, args: &SandboxArgs) -> Result<(), Failure> {
    let program = read_file(program_file)?;
    let sandbox = build_sandbox(args)?;
    let verdict = sandbox.validate_and_construct(&program, input).map_err(Failure::runtime)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&verdict).expect("verdict serializes"));
    }
    match (&verdict.output, &verdict.failure) {
        (Some(out), _) => {
            if !json {
                println!("{out}");
            }
            Ok(())
        }
        (None, failure) => {
            let mut msg = format!("rejected: {failure:?}");
            if !verdict.offending.is_empty() {
                msg = format!("rejected: forbidden modules: {}", verdict.offending.join(", "));
            }
            Err(Failure::Rejected(msg))
        }
    }
}

fn verify(task_type: TaskType, program: Option<&Path>, output: Option<&str>, pairs: Option<&Path>, answer: &str, args: &SandboxArgs) -> Result<(), Failure> {
    let sandbox = build_sandbox(args)?;
    let verdict = match task_type {
        TaskType::Abduction | TaskType::Deduction => {
            let (Some(program), Some(gold)) = (program, output) else {
                return Err(Failure::Usage(format!("{task_type} needs --program and --output")));
            };
            let program = read_file(program)?;
            if task_type == TaskType::Abduction {
                solver::verify_abduction(&sandbox, &program, gold, answer)
            } else {
                solver::verify_deduction(&sandbox, &program, gold, answer)
            }
        }
        TaskType::Induction => {
            let Some(pairs) = pairs else {
                return Err(Failure::Usage("induction needs --pairs".into()));
            };
            let pairs: Vec<(String, String)> = serde_json::from_str(&read_file(pairs)?).map_err(|e| Failure::Usage(format!("pairs: {e}")))?;
            let agent = read_file(Path::new(answer))?;
            solver::verify_induction(&sandbox, &agent, &pairs)
        }
    }
    .map_err(Failure::runtime)?;
    match verdict {
        Verification::Correct => {
            println!("correct");
            Ok(())
        }
        other => Err(Failure::Rejected(format!("{other:?}").to_lowercase())),
    }
}

fn metrics(path: &Path, task_type: Option<TaskType>, references: usize, args: &SandboxArgs) -> Result<(), Failure> {
    let task_type = match task_type {
        Some(t) => t,
        None => path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Failure::Usage("cannot infer the task type from the file name; pass --task-type".into()))?,
    };
    let sandbox = build_sandbox(args)?;
    let buffer = TaskBuffer::load_jsonl(path, task_type, usize::MAX).map_err(Failure::runtime)?;
    let mut collector = MetricsCollector::default();
    let mut rows = Vec::new();
    for (i, task) in buffer.items().iter().enumerate() {
        let refs: Vec<String> = buffer.items()[i.saturating_sub(references)..i].iter().map(|t| t.program().to_string()).collect();
        let m = collector
            .task_metrics(&sandbox, task_type, task.program(), &answer_key(task, task_type), &refs)
            .map_err(Failure::runtime)?;
        println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        rows.push(m);
    }
    let summary = codeplay_core::metrics::IterationMetrics::summarize(0, &rows, &[]);
    eprintln!("{}", serde_json::to_string(&summary.tasks[&task_type]).expect("summary serializes"));
    Ok(())
}

fn replay(path: &Path, mode: AdvantageMode, out: Option<&Path>) -> Result<(), Failure> {
    let mut records = read_experience(path).map_err(Failure::runtime)?;
    orchestrator::reannotate(&mut records, mode);
    match out {
        Some(p) => {
            if p.exists() {
                std::fs::remove_file(p).map_err(Failure::runtime)?;
            }
            orchestrator::append_jsonl(p, &records).map_err(Failure::runtime)?;
        }
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r).expect("record serializes"));
            }
        }
    }
    eprintln!("re-annotated {} records", records.len());
    Ok(())
}
