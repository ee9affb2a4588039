//! Agents C and D: prover workers grow a shared population while rater
//! workers rank its members.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::backends::{BackendError, Backends, GenerationRequest, Message, ProverOutcome, Role};
use crate::digest::Digest;
use crate::evalkit::AttemptLog;
use crate::journal::{Component, Event, RunJournal};
use crate::population::{GoalFeedback, MatchResult, PopulationStore, SketchId, SketchRecord};
use crate::rating::{break_ties, thompson_select};
use crate::selection::{
    assemble_prompt, parse_ranking, pick_inspirations, render_rater_prompt, select_parent, SelectionError,
    PROVER_TEMPLATE, RATER_TEMPLATE,
};
use crate::sketch::ProofSketch;
use crate::validate::{final_verify, incorporate_goals, sandbox_check};

use super::episode::{prove_cached, run_episode, EpisodeContext, EpisodeHeader, Recorder};
use super::schedule::{run_workers, StepResult, Worker};
use super::{mix, AgentError, EpisodeBudget, RunConfig, RunResult, StopSignal};

pub const RATER_SYSTEM: &str = "You compare proof sketches and answer with a RANKING line.";

struct Shared<'a> {
    problem: &'a ProofSketch,
    cfg: &'a RunConfig,
    backends: &'a Backends,
    store: &'a PopulationStore,
    journal: &'a RunJournal,
    stop: StopSignal,
    budget: EpisodeBudget,
    seed_id: SketchId,
    active_provers: AtomicUsize,
    matches_claimed: AtomicUsize,
    /// Raters keep going without provers.
    rater_only: bool,
    solution: Mutex<Option<ProofSketch>>,
}

impl Shared<'_> {
    fn backend_failure(&self, worker: &str, source: BackendError) -> AgentError {
        AgentError::Backend {
            worker: worker.to_string(),
            source,
            transcript: Vec::new(),
        }
    }
}

struct ProverWorker<'a> {
    shared: &'a Shared<'a>,
    label: String,
    seed: u64,
    steps: u64,
    finished: bool,
}

impl ProverWorker<'_> {
    fn finish(&mut self) -> StepResult {
        if !self.finished {
            self.finished = true;
            self.shared.active_provers.fetch_sub(1, Ordering::SeqCst);
        }
        StepResult::Done
    }

    /// Splices cached proofs, dispatches the remaining goals to the focused
    /// prover and splices those results too.
    fn resolve_goals(&self, sketch: ProofSketch, seed: u64) -> Result<(ProofSketch, Vec<GoalFeedback>), AgentError> {
        let sh = self.shared;
        let checker = sh.backends.checker.as_ref();
        let diags = checker
            .check(&sketch.render())
            .map_err(|e| sh.backend_failure(&self.label, e))?;
        let mut rec = Recorder::new(Some(sh.journal), &self.label);

        let mut lookup_error = None;
        let first = incorporate_goals(&sketch, &diags, &sh.cfg.validation, |key| {
            let entry = sh.store.goal_peek(key).filter(|e| e.outcome.is_verdict())?;
            match sh.store.goal_lookup(key) {
                Ok(_) => {
                    rec.emit(Event::GoalHit {
                        goal_key: *key,
                        verdict: entry.outcome.verdict,
                    });
                    Some(entry.outcome)
                }
                Err(e) => {
                    lookup_error.get_or_insert(e);
                    None
                }
            }
        });
        if let Some(e) = lookup_error {
            return Err(e.into());
        }

        let mut feedback = first.feedback.clone();
        let mut fresh: HashMap<Digest, ProverOutcome> = HashMap::new();
        for (k, goal) in first.unresolved.iter().enumerate() {
            if fresh.contains_key(&goal.key) {
                continue;
            }
            let outcome = prove_cached(
                sh.backends,
                Some(sh.store),
                &sh.cfg.prover_budget,
                mix(seed, k as u64),
                &goal.goal,
                &mut rec,
            )?
            .map_err(|e| sh.backend_failure(&self.label, e))?;
            feedback.push(GoalFeedback {
                goal_key: goal.key,
                goal: goal.goal.clone(),
                outcome: outcome.clone(),
            });
            fresh.insert(goal.key, outcome);
        }
        if fresh.is_empty() {
            return Ok((first.sketch, feedback));
        }

        let diags = checker
            .check(&first.sketch.render())
            .map_err(|e| sh.backend_failure(&self.label, e))?;
        let second = incorporate_goals(&first.sketch, &diags, &sh.cfg.validation, |key| fresh.get(key).cloned());
        Ok((second.sketch, feedback))
    }
}

impl Worker for ProverWorker<'_> {
    fn label(&self) -> &str {
        &self.label
    }

    fn step(&mut self) -> Result<StepResult, AgentError> {
        let sh = self.shared;
        if sh.stop.is_set() {
            return Ok(self.finish());
        }
        let Some(episode) = sh.budget.claim() else {
            return Ok(self.finish());
        };
        let seed = mix(self.seed, self.steps);
        self.steps += 1;

        let (parent, fallback) = match select_parent(sh.store, &sh.cfg.pucb) {
            Ok(id) => (id, false),
            Err(SelectionError::NoRatedSketch) => {
                sh.store.increment_visits(sh.seed_id)?;
                (sh.seed_id, true)
            }
            Err(e) => return Err(e.into()),
        };
        sh.journal.log(&self.label, Event::Select { parent, fallback });
        let root = sh.store.get(parent).expect("selected sketch exists");
        let inspirations = pick_inspirations(sh.store, parent, &sh.cfg.pucb);
        let bundle = assemble_prompt(
            &root,
            &inspirations,
            PROVER_TEMPLATE,
            &sh.cfg.pucb,
            &sh.cfg.context,
            seed,
        )?;

        let ctx = EpisodeContext {
            backends: sh.backends,
            limits: sh.cfg.limits,
            prover_tool: sh.cfg.agent_kind.uses_prover_tool(),
            channel: &self.label,
            journal: Some(sh.journal),
            store: Some(sh.store),
            stop: Some(&sh.stop),
            validation: &sh.cfg.validation,
            prover_budget: sh.cfg.prover_budget,
            max_turn_tokens: sh.cfg.max_turn_tokens,
            seed,
        };
        let header = EpisodeHeader {
            episode,
            parent: Some(parent),
            directive: Some(bundle.directive.clone()),
        };
        let outcome = run_episode(&ctx, &root.sketch, &bundle.rendered_prompt, header)?;

        let mut candidate = outcome.final_sketch;
        let mut feedback = Vec::new();
        let mut solved = outcome.solved;
        if !solved {
            let verdict = sandbox_check(sh.problem, &candidate, sh.backends.checker.as_ref());
            if !verdict.pass {
                sh.journal.log(
                    &self.label,
                    Event::Rejected {
                        reasons: verdict.reasons.iter().map(ToString::to_string).collect(),
                    },
                );
                return Ok(StepResult::Progress);
            }
            if sh.cfg.agent_kind.uses_prover_tool() {
                let (resolved, fb) = self.resolve_goals(candidate, mix(seed, 0x474F_414C))?;
                candidate = resolved;
                feedback = fb;
                solved = final_verify(&candidate, sh.backends.checker.as_ref(), &sh.cfg.validation).pass;
            }
        }

        let open_goals = sh
            .backends
            .checker
            .check(&candidate.render())
            .map(|d| d.open_goals.len())
            .map_err(|e| sh.backend_failure(&self.label, e))?;
        let mut record = SketchRecord::new(sh.store.allocate_id(), candidate.clone(), Some(parent));
        record.plan_summary = outcome.summary.unwrap_or_default();
        record.goal_feedback = feedback;
        let id = sh.store.insert_sketch(record)?;
        sh.journal.log(
            &self.label,
            Event::Insert {
                id,
                parent: Some(parent),
                open_goals,
            },
        );

        if solved {
            if sh.stop.trigger(&self.label) {
                sh.journal.log(&self.label, Event::Solve { id: Some(id) });
                sh.journal.log(
                    &self.label,
                    Event::Stop {
                        reason: "solved".into(),
                    },
                );
                *sh.solution.lock().expect("solution lock poisoned") = Some(candidate);
            }
            return Ok(self.finish());
        }
        Ok(StepResult::Progress)
    }
}

struct RaterWorker<'a> {
    shared: &'a Shared<'a>,
    label: String,
    seed: u64,
    steps: u64,
}

impl Worker for RaterWorker<'_> {
    fn label(&self) -> &str {
        &self.label
    }

    fn step(&mut self) -> Result<StepResult, AgentError> {
        let sh = self.shared;
        if sh.stop.is_set() {
            return Ok(StepResult::Done);
        }
        if !sh.rater_only && sh.active_provers.load(Ordering::SeqCst) == 0 {
            return Ok(StepResult::Done);
        }
        let views = sh.store.rating_views();
        if views.len() < 2 {
            return Ok(StepResult::Idle);
        }
        if let Some(max) = sh.cfg.max_matches {
            let claimed = sh
                .matches_claimed
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| (c < max).then_some(c + 1));
            if claimed.is_err() {
                return Ok(StepResult::Done);
            }
        }
        let seed = mix(self.seed, self.steps);
        self.steps += 1;

        let players = thompson_select(&views, sh.cfg.players_per_match, &sh.cfg.gibbs, seed)?;
        let records: Vec<SketchRecord> = players
            .iter()
            .map(|id| sh.store.get(*id).expect("selected sketch exists"))
            .collect();
        let prompt = render_rater_prompt(RATER_TEMPLATE, &records)?;
        let request = GenerationRequest {
            channel: self.label.clone(),
            messages: vec![
                Message::new(Role::System, RATER_SYSTEM),
                Message::new(Role::User, prompt),
            ],
            max_turn_tokens: sh.cfg.max_turn_tokens,
        };
        let response = sh
            .backends
            .llm
            .generate(&request)
            .map_err(|e| sh.backend_failure(&self.label, e))?;
        sh.journal.log(
            &self.label,
            Event::Turn {
                turn: 1,
                component: Component::Rater,
                usage: response.usage,
                text: response.text.clone(),
                tool_calls: response.tool_calls.len(),
            },
        );

        let groups: Vec<Vec<SketchId>> = parse_ranking(&response.text, players.len())
            .into_iter()
            .map(|g| g.into_iter().map(|k| players[k]).collect())
            .collect();
        let means = sh.store.strength_means();
        let strict = break_ties(&groups, |id| means.get(&id).copied().unwrap_or(1.0), mix(seed, 1));
        sh.store.record_match(MatchResult {
            players: strict.clone(),
            raw_ranking: groups,
            rater_id: self.label.clone(),
        })?;
        sh.journal.log(&self.label, Event::Match { players: strict });
        Ok(StepResult::Progress)
    }
}

fn seed_store(problem: &ProofSketch, store: &PopulationStore, journal: &RunJournal) -> Result<SketchId, AgentError> {
    if let Some(first) = store.ids().first() {
        return Ok(*first);
    }
    let mut record = SketchRecord::new(store.allocate_id(), problem.clone(), None);
    record.plan_summary = "initial sketch".into();
    let id = store.insert_sketch(record)?;
    journal.log(
        "controller",
        Event::Insert {
            id,
            parent: None,
            open_goals: problem.find_sorries().len(),
        },
    );
    Ok(id)
}

fn shared<'a>(
    problem: &'a ProofSketch,
    cfg: &'a RunConfig,
    backends: &'a Backends,
    store: &'a PopulationStore,
    journal: &'a RunJournal,
    seed_id: SketchId,
    rater_only: bool,
) -> Shared<'a> {
    let provers = if rater_only { 0 } else { cfg.n_subagents };
    Shared {
        problem,
        cfg,
        backends,
        store,
        journal,
        stop: StopSignal::new(),
        budget: EpisodeBudget::new(cfg.episode_budget),
        seed_id,
        active_provers: AtomicUsize::new(provers),
        matches_claimed: AtomicUsize::new(0),
        rater_only,
        solution: Mutex::new(None),
    }
}

fn raters<'a>(sh: &'a Shared<'a>) -> Vec<Box<dyn Worker + 'a>> {
    (0..sh.cfg.n_raters)
        .map(|i| {
            Box::new(RaterWorker {
                shared: sh,
                label: format!("rater-{i}"),
                seed: sh.cfg.rater_seed(i),
                steps: 0,
            }) as Box<dyn Worker + 'a>
        })
        .collect()
}

/// Runs agent C or D until a verified proof is found or the episode budget
/// is spent. An empty store is seeded with `problem`.
pub fn run_evolutionary(
    problem: &ProofSketch,
    cfg: &RunConfig,
    backends: &Backends,
    store: &PopulationStore,
    journal: &RunJournal,
) -> Result<RunResult, AgentError> {
    if !cfg.agent_kind.is_evolutionary() {
        return Err(AgentError::WrongAgentKind {
            expected: "C or D",
            got: cfg.agent_kind,
        });
    }
    cfg.validate()?;
    journal.log(
        "controller",
        Event::RunStart {
            agent_kind: cfg.agent_kind.to_string(),
            n_subagents: cfg.n_subagents,
            n_raters: cfg.n_raters,
            budget: cfg.episode_budget,
        },
    );
    let seed_id = seed_store(problem, store, journal)?;
    let sh = shared(problem, cfg, backends, store, journal, seed_id, false);

    let mut workers: Vec<Box<dyn Worker + '_>> = (0..cfg.n_subagents)
        .map(|i| {
            Box::new(ProverWorker {
                shared: &sh,
                label: format!("prover-{i}"),
                seed: cfg.prover_seed(i),
                steps: 0,
                finished: false,
            }) as Box<dyn Worker + '_>
        })
        .collect();
    workers.extend(raters(&sh));
    run_workers(workers, cfg.deterministic, &sh.stop)?;

    let solution = sh.solution.lock().expect("solution lock poisoned").take();
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
        solver: sh.stop.winner(),
        episodes: journal.count(|e| matches!(e, Event::EpisodeStart { .. })) as u64,
        matches: journal.count(|e| matches!(e, Event::Match { .. })),
        attempt_logs: vec![AttemptLog::from_records("run", &records, None)],
    })
}

/// Runs only the rater workers over an existing population until
/// `cfg.max_matches` matches are recorded. Returns the number of matches.
pub fn run_raters(
    cfg: &RunConfig,
    backends: &Backends,
    store: &PopulationStore,
    journal: &RunJournal,
) -> Result<usize, AgentError> {
    if cfg.max_matches.is_none() {
        return Err(AgentError::InvalidConfig("a rater-only run needs max_matches".into()));
    }
    if cfg.n_raters == 0 {
        return Err(AgentError::InvalidConfig(
            "a rater-only run needs at least one rater".into(),
        ));
    }
    cfg.gibbs.validate()?;
    let seed_id = store.ids().first().copied().unwrap_or(SketchId(0));
    let problem = store
        .get(seed_id)
        .map(|r| r.sketch)
        .ok_or_else(|| AgentError::InvalidConfig("population is empty".into()))?;
    let sh = shared(&problem, cfg, backends, store, journal, seed_id, true);
    run_workers(raters(&sh), cfg.deterministic, &sh.stop)?;
    Ok(journal.count(|e| matches!(e, Event::Match { .. })))
}
