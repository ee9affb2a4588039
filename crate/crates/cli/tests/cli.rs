#[path = "../../core/tests/support/synthetic.rs"]
mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn nexus(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nexus"))
        .args(args)
        .output()
        .expect("nexus runs")
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn run_demo(manifest: &str, out: &Path, deterministic: bool) -> Output {
    let manifest = demo(manifest);
    let mut args = vec![
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ];
    if deterministic {
        args.push("--deterministic-schedule");
    }
    nexus(&args)
}

#[test]
fn demo_scripts_match_bundled_fixtures() {
    use nexus_core::agents::fixtures;
    use nexus_core::backends::ReplayScript;
    assert_eq!(
        ReplayScript::load(&demo("script_d.json")).unwrap(),
        fixtures::agent_d_script()
    );
    assert_eq!(
        ReplayScript::load(&demo("script_a.json")).unwrap(),
        fixtures::agent_a_script()
    );
    assert_eq!(
        ReplayScript::load(&demo("script_idle.json")).unwrap(),
        fixtures::idle_script("subagent-0")
    );
    assert_eq!(fs::read_to_string(demo("problem.lean")).unwrap(), fixtures::TOY_PROBLEM);
}

#[test]
fn run_agent_d_solves_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_demo("agent_d.toml", dir.path(), true);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = key_values(&fs::read_to_string(dir.path().join("summary.txt")).unwrap());
    assert_eq!(summary["status"], "solved");
    assert_eq!(summary["agent_kind"], "D");
    assert_eq!(summary["replayable"], "true");
    let solution = fs::read_to_string(dir.path().join("solution.lean")).unwrap();
    assert!(!solution.contains("sorry"));
    assert!(solution.contains("by_lemma product"));
    assert!(dir.path().join("journal.jsonl").exists());
    assert!(dir.path().join("population.jsonl").exists());
}

#[test]
fn run_agent_a_solves() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_demo("agent_a.toml", dir.path(), false);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(key_values(&stdout(&o))["solver"], "subagent-0");
    assert!(dir.path().join("solution.lean").exists());
}

#[test]
fn run_budget_exhaustion_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_demo("agent_a_idle.toml", dir.path(), true);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(key_values(&stdout(&o))["status"], "budget_exhausted");
    assert!(!dir.path().join("solution.lean").exists());
}

fn write_manifest(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("manifest.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_missing_problem_file_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let script = demo("script_a.json");
    let m = write_manifest(
        dir.path(),
        &format!(
            "problem_file = \"nope.lean\"\nagent_kind = \"A\"\n[llm]\nscript = {:?}\n",
            script.to_str().unwrap()
        ),
    );
    let o = nexus(&["run", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("manifest.toml") && err.contains("problem_file"), "{err}");
}

#[test]
fn run_rejects_bad_agent_kind_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let problem = demo("problem.lean");
    let script = demo("script_a.json");
    let base = format!("problem_file = {:?}\n", problem.to_str().unwrap());
    let tail = format!("[llm]\nscript = {:?}\n", script.to_str().unwrap());

    let m = write_manifest(dir.path(), &format!("{base}agent_kind = \"E\"\n{tail}"));
    let o = nexus(&["run", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("agent_kind"), "{}", stderr(&o));

    let m = write_manifest(dir.path(), &format!("{base}agent_kind = \"A\"\nbudgt = 2\n{tail}"));
    let o = nexus(&["run", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budgt"), "{}", stderr(&o));

    let m = write_manifest(
        dir.path(),
        &format!("{base}agent_kind = \"A\"\n[llm]\nbackend = \"replay\"\n"),
    );
    let o = nexus(&["run", "--manifest", m.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("llm.script"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(nexus(&["run"]).status.code(), Some(1));
    assert_eq!(nexus(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(nexus(&["--help"]).status.code(), Some(0));
}

#[test]
fn replay_of_deterministic_run_matches() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_demo("agent_d.toml", dir.path(), true).status.code(), Some(0));
    let journal = dir.path().join("journal.jsonl");
    let o = nexus(&["replay", "--journal", journal.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(key_values(&stdout(&o))["replay"], "match");
}

#[test]
fn replay_reports_first_tampered_event() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_demo("agent_d.toml", dir.path(), true).status.code(), Some(0));
    let journal = dir.path().join("journal.jsonl");
    let text = fs::read_to_string(&journal).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // line 0 is the header, so event k sits on line k + 1
    let target = lines
        .iter()
        .position(|l| l.contains("\"event\":\"tool_call\""))
        .expect("a tool call was journaled");
    let mut event: Value = serde_json::from_str(&lines[target]).unwrap();
    event["detail"] = json!("tampered");
    lines[target] = event.to_string();
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();

    let o = nexus(&["replay", "--journal", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let kv = key_values(&stdout(&o));
    assert_eq!(kv["replay"], "diverged");
    assert_eq!(kv["index"], (target - 1).to_string());
}

#[test]
fn replay_refuses_threaded_or_wire_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_demo("agent_a.toml", dir.path(), false).status.code(), Some(0));
    let journal = dir.path().join("journal.jsonl");
    let o = nexus(&["replay", "--journal", journal.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NotReplayable"), "{}", stderr(&o));

    // a journal whose header names the wire backend
    let text = fs::read_to_string(&journal).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut head: Value = serde_json::from_str(&lines[0]).unwrap();
    head["run"]["manifest"]["llm"]["backend"] = json!("wire");
    head["run"]["manifest"]["llm"]["url"] = json!("http://127.0.0.1:9");
    head["run"]["deterministic"] = json!(true);
    head["run"]["replayable"] = json!(true);
    lines[0] = head.to_string();
    let wire = dir.path().join("wire.jsonl");
    fs::write(&wire, lines.join("\n") + "\n").unwrap();
    let o = nexus(&["replay", "--journal", wire.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NotReplayable"), "{}", stderr(&o));
}

fn write_synthetic_journals(dir: &Path) -> Vec<PathBuf> {
    (0..synthetic::SYNTHETIC_ATTEMPTS)
        .map(|i| {
            let (events, success) = synthetic::synthetic_attempt(i);
            let mut lines = vec![json!({"schema": "nexus-journal", "version": 1, "run": {"attempt": i}}).to_string()];
            let mut seq = 0;
            for (t, input, cache, output, comp) in events {
                lines.push(
                    json!({
                        "seq": seq, "t_ms": t, "worker": "subagent-0", "event": "turn", "turn": seq + 1,
                        "component": comp,
                        "usage": {"input_tokens": input, "cache_read_tokens": cache, "output_tokens": output},
                        "text": "", "tool_calls": 0
                    })
                    .to_string(),
                );
                seq += 1;
            }
            if let Some(t) = success {
                lines.push(json!({"seq": seq, "t_ms": t, "worker": "subagent-0", "event": "solve"}).to_string());
            }
            let path = dir.join(format!("attempt-{i:03}.jsonl"));
            fs::write(&path, lines.join("\n") + "\n").unwrap();
            path
        })
        .collect()
}

fn eval_args<'a>(journals: &'a [PathBuf], prices: &'a Path, out: &'a Path, chunk: &'a str) -> Vec<&'a str> {
    let mut args = vec![
        "eval",
        "--prices",
        prices.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
        "--chunk-size",
        chunk,
    ];
    for j in journals {
        args.push("--journal");
        args.push(j.to_str().unwrap());
    }
    args
}

#[test]
fn eval_reproduces_golden_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let journals = write_synthetic_journals(dir.path());
    let prices = dir.path().join("prices.toml");
    fs::write(&prices, synthetic::SYNTHETIC_PRICES).unwrap();
    let out = dir.path().join("report");
    let o = nexus(&eval_args(&journals, &prices, &out, "10"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let kv = key_values(&stdout(&o));
    assert_eq!(kv["chunks"], "10");
    assert_eq!(kv["solve_rate"], "0.700000");
    assert_eq!(
        fs::read_to_string(out.join("chunks_k10.csv")).unwrap(),
        synthetic::GOLDEN_CHUNKS_K10
    );
    assert!(fs::read_to_string(out.join("pareto.csv")).unwrap().contains("k=10"));
    assert!(fs::read_to_string(out.join("pareto.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn eval_errors() {
    let dir = tempfile::tempdir().unwrap();
    let journals = write_synthetic_journals(dir.path());
    let prices = dir.path().join("prices.toml");
    fs::write(&prices, synthetic::SYNTHETIC_PRICES).unwrap();
    let out = dir.path().join("report");

    let o = nexus(&eval_args(&journals, &prices, &out, "7"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("indivisible chunking"), "{}", stderr(&o));

    let o = nexus(&eval_args(&[], &prices, &out, "10"));
    assert_eq!(o.status.code(), Some(1));

    let bad = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(&journals[0]).unwrap();
    text.push_str("{not json\n");
    fs::write(&bad, &text).unwrap();
    let lines = text.lines().count();
    let o = nexus(&eval_args(std::slice::from_ref(&bad), &prices, &out, "1"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&format!("bad.jsonl:{lines}:")), "{}", stderr(&o));
}
