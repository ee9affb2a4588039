//! `nexus`: run an agent, evaluate journals, or replay a recorded run.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | solved / report written / replay matched |
//! | 1 | error (bad manifest, malformed journal, not replayable, ...) |
//! | 2 | `run` spent its episode budget without a proof |
//! | 3 | `replay` diverged from the recorded journal |

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nexus_core::agents::{run_basic, run_evolutionary, AgentKind, RunConfig, RunResult};
use nexus_core::backends::{Backends, ReplayScript};
use nexus_core::evalkit::{chunk_estimate, pareto_table, AttemptLog, ParetoPoint, PriceTable};
use nexus_core::journal::{first_divergence, read_journal, semantic_lines, JournalError, JournalRecord, RunJournal};
use nexus_core::population::PopulationStore;
use nexus_core::sketch::parse_sketch;
use nexus_core::ProofSketch;
use serde_json::{json, Value};

use manifest::{build_backends, is_replayable, LoadedManifest, RunManifest};

const EXIT_SOLVED: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_BUDGET: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "nexus", version, about = "Evolutionary proof-sketch search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the agent described by a manifest.
    Run(RunArgs),
    /// Chunked solve rate and cost over a set of run journals.
    Eval(EvalArgs),
    /// Re-execute a replayable run and compare its journal.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Run workers round-robin on one thread so the run can be replayed.
    #[arg(long)]
    deterministic_schedule: bool,
    /// Overrides `output_dir` from the manifest.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// One journal per attempt; repeat the flag for more.
    #[arg(long = "journal")]
    journals: Vec<PathBuf>,
    /// Attempts per chunk; repeat the flag for several operating points.
    #[arg(long = "chunk-size", required = true)]
    chunk_sizes: Vec<usize>,
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, default_value = "nexus-eval")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    journal: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_ERROR),
            };
        }
    };
    let res = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Replay(a) => cmd_replay(&a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn journal_error(path: &Path, e: JournalError) -> anyhow::Error {
    match e {
        JournalError::Malformed { line, message } => anyhow!("{}:{line}: {message}", path.display()),
        other => anyhow!("{}: {other}", path.display()),
    }
}

fn execute(
    kind: AgentKind,
    problem: &ProofSketch,
    cfg: &RunConfig,
    backends: &Backends,
    journal: &RunJournal,
    population: Option<&Path>,
) -> Result<RunResult> {
    if !kind.is_evolutionary() {
        return Ok(run_basic(problem, cfg, backends, journal)?);
    }
    let store = match population {
        Some(path) => {
            if path.exists() {
                fs::remove_file(path).with_context(|| format!("{}: cannot replace population", path.display()))?;
            }
            PopulationStore::open(path, cfg.gibbs)?
        }
        None => PopulationStore::new(cfg.gibbs),
    };
    Ok(run_evolutionary(problem, cfg, backends, &store, journal)?)
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let loaded = LoadedManifest::load(&args.manifest)?;
    let problem =
        parse_sketch(&loaded.problem_text).map_err(|e| anyhow!("{}: problem_file: {e}", args.manifest.display()))?;
    let out = match (&args.output_dir, &loaded.manifest.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => d.clone(),
        (None, None) => args.manifest.parent().unwrap_or_else(|| Path::new(".")).join("output"),
    };
    fs::create_dir_all(&out).with_context(|| format!("{}: cannot create output_dir", out.display()))?;

    let cfg = loaded.run_config(args.deterministic_schedule);
    let replayable = loaded.replayable(args.deterministic_schedule);
    let header = json!({
        "manifest": loaded.manifest,
        "config": cfg,
        "problem": loaded.problem_text,
        "script": loaded.script,
        "replayable": replayable,
        "deterministic": args.deterministic_schedule,
    });
    let journal_path = out.join("journal.jsonl");
    let journal = RunJournal::create(&journal_path, header).map_err(|e| journal_error(&journal_path, e))?;
    let backends = build_backends(&loaded.manifest, loaded.script.clone())?;
    let population = out.join("population.jsonl");
    let result = execute(
        loaded.agent_kind,
        &problem,
        &cfg,
        &backends,
        &journal,
        Some(&population),
    )?;
    if let Some(e) = journal.io_error() {
        bail!("{}: {e}", journal_path.display());
    }

    let mut summary = vec![
        format!("status={}", if result.solved { "solved" } else { "budget_exhausted" }),
        format!("agent_kind={}", loaded.agent_kind),
        format!("episodes={}", result.episodes),
        format!("matches={}", result.matches),
        format!("solver={}", result.solver.as_deref().unwrap_or("")),
        format!("replayable={replayable}"),
        format!("journal={}", journal_path.display()),
    ];
    if let Some(sketch) = &result.final_sketch {
        let path = out.join("solution.lean");
        fs::write(&path, sketch.render()).with_context(|| format!("{}: cannot write solution", path.display()))?;
        summary.push(format!("solution={}", path.display()));
    }
    let text = summary.join("\n") + "\n";
    fs::write(out.join("summary.txt"), &text).with_context(|| format!("{}: cannot write summary", out.display()))?;
    print!("{text}");
    Ok(if result.solved { EXIT_SOLVED } else { EXIT_BUDGET })
}

fn cmd_eval(args: &EvalArgs) -> Result<u8> {
    if args.journals.is_empty() {
        bail!("no journals given; pass --journal at least once");
    }
    let prices = PriceTable::load(&args.prices).map_err(|e| anyhow!("{}: {e}", args.prices.display()))?;
    let mut attempts = Vec::with_capacity(args.journals.len());
    for path in &args.journals {
        let (_, records) = read_journal(path).map_err(|e| journal_error(path, e))?;
        attempts.push(AttemptLog::from_records(path.display().to_string(), &records, None));
    }
    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("{}: cannot create output_dir", args.output_dir.display()))?;

    let mut points = Vec::new();
    for &k in &args.chunk_sizes {
        let est = chunk_estimate(&attempts, k, &prices)?;
        println!("chunk_size={k}");
        for line in est.summary_lines() {
            println!("{line}");
        }
        let path = args.output_dir.join(format!("chunks_k{k}.csv"));
        fs::write(&path, est.chunks_csv()?).with_context(|| format!("{}: cannot write", path.display()))?;
        points.push(ParetoPoint {
            label: format!("k={k}"),
            solve_rate: est.solve_rate,
            cost: est.mean_all_cost,
        });
    }
    let report = pareto_table(&points);
    print!("{}", report.to_text());
    fs::write(args.output_dir.join("pareto.csv"), report.to_csv()?)?;
    fs::write(args.output_dir.join("pareto.svg"), report.to_svg())?;
    Ok(EXIT_SOLVED)
}

fn field<T: serde::de::DeserializeOwned>(run: &Value, name: &str, path: &Path) -> Result<T> {
    let v = run
        .get(name)
        .cloned()
        .ok_or_else(|| anyhow!("{}: header lacks `{name}`", path.display()))?;
    serde_json::from_value(v).map_err(|e| anyhow!("{}: header `{name}`: {e}", path.display()))
}

fn cmd_replay(args: &ReplayArgs) -> Result<u8> {
    let path = &args.journal;
    let (run, recorded) = read_journal(path).map_err(|e| journal_error(path, e))?;
    let manifest: RunManifest = field(&run, "manifest", path)?;
    let deterministic: bool = field(&run, "deterministic", path)?;
    if !is_replayable(&manifest, deterministic) || run.get("replayable") != Some(&Value::Bool(true)) {
        bail!(
            "{}: NotReplayable: replay needs the replay LLM, the simulated prover and --deterministic-schedule",
            path.display()
        );
    }
    let cfg: RunConfig = field(&run, "config", path)?;
    let problem_text: String = field(&run, "problem", path)?;
    let script: ReplayScript = field(&run, "script", path)?;
    let problem = parse_sketch(&problem_text).map_err(|e| anyhow!("{}: header `problem`: {e}", path.display()))?;

    let backends = build_backends(&manifest, Some(script))?;
    let journal = RunJournal::in_memory(run.clone());
    execute(cfg.agent_kind, &problem, &cfg, &backends, &journal, None)?;

    let expected = semantic_lines(&recorded);
    let actual = semantic_lines(&journal.records());
    match first_divergence(&expected, &actual) {
        None => {
            println!("replay=match");
            println!("events={}", expected.len());
            Ok(EXIT_SOLVED)
        }
        Some(i) => {
            println!("replay=diverged");
            println!("index={i}");
            println!("recorded={}", show(&recorded, i));
            println!("replayed={}", show(&journal.records(), i));
            Ok(EXIT_DIVERGED)
        }
    }
}

fn show(records: &[JournalRecord], i: usize) -> String {
    records
        .get(i)
        .map_or_else(|| "<end of journal>".into(), JournalRecord::semantic)
}
