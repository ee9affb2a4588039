//! Agents A and B: independent subagents, each chaining episodes on its own
//! sketch and carrying lesson comments forward.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::backends::Backends;
use crate::evalkit::AttemptLog;
use crate::journal::{Event, RunJournal};
use crate::selection::{PromptTemplate, BASIC_TEMPLATE, PROVER_VARIABLES};
use crate::sketch::ProofSketch;
use crate::validate::sandbox_check;

use super::episode::{run_episode, EpisodeContext, EpisodeHeader};
use super::schedule::{run_workers, StepResult, Worker};
use super::{mix, AgentError, EpisodeBudget, RunConfig, RunResult, StopSignal};

struct Shared<'a> {
    problem: &'a ProofSketch,
    cfg: &'a RunConfig,
    backends: &'a Backends,
    journal: &'a RunJournal,
    stop: StopSignal,
    budget: EpisodeBudget,
    template: PromptTemplate,
    solution: Mutex<Option<ProofSketch>>,
}

struct Subagent<'a> {
    shared: &'a Shared<'a>,
    label: String,
    current: ProofSketch,
    seed: u64,
    episodes: u64,
}

impl Subagent<'_> {
    fn prompt(&self) -> Result<String, AgentError> {
        let mut values = BTreeMap::new();
        values.insert("code", self.current.render());
        values.insert("context", self.shared.cfg.context.clone());
        for name in PROVER_VARIABLES {
            values.entry(name).or_insert_with(String::new);
        }
        Ok(self.shared.template.render(&values)?)
    }
}

impl Worker for Subagent<'_> {
    fn label(&self) -> &str {
        &self.label
    }

    fn step(&mut self) -> Result<StepResult, AgentError> {
        let sh = self.shared;
        if sh.stop.is_set() {
            return Ok(StepResult::Done);
        }
        let Some(episode) = sh.budget.claim() else {
            return Ok(StepResult::Done);
        };
        let ctx = EpisodeContext {
            backends: sh.backends,
            limits: sh.cfg.limits,
            prover_tool: sh.cfg.agent_kind.uses_prover_tool(),
            channel: &self.label,
            journal: Some(sh.journal),
            store: None,
            stop: Some(&sh.stop),
            validation: &sh.cfg.validation,
            prover_budget: sh.cfg.prover_budget,
            max_turn_tokens: sh.cfg.max_turn_tokens,
            seed: mix(self.seed, self.episodes),
        };
        self.episodes += 1;
        let prompt = self.prompt()?;
        let header = EpisodeHeader {
            episode,
            parent: None,
            directive: None,
        };
        let outcome = run_episode(&ctx, &self.current, &prompt, header)?;

        if outcome.solved {
            if sh.stop.trigger(&self.label) {
                sh.journal.log(&self.label, Event::Solve { id: None });
                sh.journal.log(
                    &self.label,
                    Event::Stop {
                        reason: "solved".into(),
                    },
                );
                *sh.solution.lock().expect("solution lock poisoned") = Some(outcome.final_sketch);
            }
            return Ok(StepResult::Done);
        }

        let verdict = sandbox_check(sh.problem, &outcome.final_sketch, sh.backends.checker.as_ref());
        if verdict.pass {
            self.current = outcome.final_sketch;
        } else {
            sh.journal.log(
                &self.label,
                Event::Rejected {
                    reasons: verdict.reasons.iter().map(ToString::to_string).collect(),
                },
            );
            if let Some(lesson) = &outcome.lesson_comment {
                if let Some(next) = self.current.prepend_to_first_block(&format!("{lesson}\n")) {
                    self.current = next;
                }
            }
        }
        Ok(StepResult::Progress)
    }
}

/// Runs agent A or B on `problem` until a subagent finds a verified proof or
/// the episode budget is spent.
pub fn run_basic(
    problem: &ProofSketch,
    cfg: &RunConfig,
    backends: &Backends,
    journal: &RunJournal,
) -> Result<RunResult, AgentError> {
    if cfg.agent_kind.is_evolutionary() {
        return Err(AgentError::WrongAgentKind {
            expected: "A or B",
            got: cfg.agent_kind,
        });
    }
    cfg.validate()?;
    let shared = Shared {
        problem,
        cfg,
        backends,
        journal,
        stop: StopSignal::new(),
        budget: EpisodeBudget::new(cfg.episode_budget),
        template: PromptTemplate::parse(BASIC_TEMPLATE, PROVER_VARIABLES, &["code"])?,
        solution: Mutex::new(None),
    };
    journal.log(
        "controller",
        Event::RunStart {
            agent_kind: cfg.agent_kind.to_string(),
            n_subagents: cfg.n_subagents,
            n_raters: 0,
            budget: cfg.episode_budget,
        },
    );
    let labels: Vec<String> = (0..cfg.n_subagents).map(|i| format!("subagent-{i}")).collect();
    let workers: Vec<Box<dyn Worker + '_>> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            Box::new(Subagent {
                shared: &shared,
                label: label.clone(),
                current: problem.clone(),
                seed: cfg.prover_seed(i),
                episodes: 0,
            }) as Box<dyn Worker + '_>
        })
        .collect();
    run_workers(workers, cfg.deterministic, &shared.stop)?;

    let solution = shared.solution.lock().expect("solution lock poisoned").take();
    if solution.is_none() {
        journal.log(
            "controller",
            Event::Stop {
                reason: "budget exhausted".into(),
            },
        );
    }
    let records = journal.records();
    Ok(RunResult {
        solved: solution.is_some(),
        final_sketch: solution,
        solver: shared.stop.winner(),
        episodes: journal.count(|e| matches!(e, Event::EpisodeStart { .. })) as u64,
        matches: 0,
        attempt_logs: labels
            .iter()
            .map(|l| AttemptLog::from_records(l.clone(), &records, Some(l)))
            .collect(),
    })
}
