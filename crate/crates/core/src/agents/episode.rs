//! One episode: a multi-turn tool-calling conversation that edits a sketch.

use crate::backends::{
    BackendError, Backends, Diagnostics, GenerationRequest, Message, ProverBudget, ProverOutcome, Role, TokenUsage,
    ToolCall,
};
use crate::journal::{Component, Event, RunJournal};
use crate::population::{goal_key, PopulationStore, SketchId};
use crate::sketch::{ProofSketch, SearchReplaceEdit};
use crate::validate::{final_verify_with_diagnostics, ValidationConfig};

use super::{mix, AgentError, EpisodeLimits, StopSignal};

pub const PROVER_SYSTEM: &str =
    "You edit proof sketches with tool calls: search_replace, focused_prove and end_episode.";

/// Everything an episode needs from its surroundings.
#[derive(Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub backends: &'a Backends,
    pub limits: EpisodeLimits,
    /// Whether `focused_prove` is available.
    pub prover_tool: bool,
    /// Language-model channel, also the journal worker label.
    pub channel: &'a str,
    pub journal: Option<&'a RunJournal>,
    /// Goal cache consulted before the prover.
    pub store: Option<&'a PopulationStore>,
    pub stop: Option<&'a StopSignal>,
    pub validation: &'a ValidationConfig,
    pub prover_budget: ProverBudget,
    pub max_turn_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeHeader {
    pub episode: u64,
    pub parent: Option<SketchId>,
    pub directive: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    EndEpisode,
    NoToolCalls,
    Solved,
    EditLimit,
    TurnLimit,
    Stopped,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::EndEpisode => "end_episode",
            EndReason::NoToolCalls => "no_tool_calls",
            EndReason::Solved => "solved",
            EndReason::EditLimit => "edit_limit",
            EndReason::TurnLimit => "turn_limit",
            EndReason::Stopped => "stopped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub final_sketch: ProofSketch,
    pub solved: bool,
    pub lesson_comment: Option<String>,
    pub transcript: Vec<Event>,
    pub usage_total: TokenUsage,
    pub edits: u32,
    pub prover_calls: u32,
    pub turns: u32,
    pub end_reason: EndReason,
    /// Text passed to `end_episode`, if any.
    pub summary: Option<String>,
}

/// Records events both in a transcript and, when present, in the journal.
pub(crate) struct Recorder<'a> {
    journal: Option<&'a RunJournal>,
    worker: &'a str,
    pub(crate) events: Vec<Event>,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(journal: Option<&'a RunJournal>, worker: &'a str) -> Self {
        Recorder {
            journal,
            worker,
            events: Vec::new(),
        }
    }

    pub(crate) fn emit(&mut self, event: Event) {
        if let Some(j) = self.journal {
            j.log(self.worker, event.clone());
        }
        self.events.push(event);
    }
}

/// Proves `goal`, answering from the cache when it already holds a verdict.
/// Fresh results are written back to the cache.
pub(crate) fn prove_cached(
    backends: &Backends,
    store: Option<&PopulationStore>,
    budget: &ProverBudget,
    seed: u64,
    goal: &str,
    rec: &mut Recorder<'_>,
) -> Result<Result<ProverOutcome, BackendError>, AgentError> {
    let key = goal_key(goal);
    if let Some(store) = store {
        if store.goal_peek(&key).is_some_and(|e| e.outcome.is_verdict()) {
            if let Some(entry) = store.goal_lookup(&key)? {
                rec.emit(Event::GoalHit {
                    goal_key: key,
                    verdict: entry.outcome.verdict,
                });
                return Ok(Ok(entry.outcome));
            }
        }
    }
    let outcome = match backends.prover.prove(goal, budget, seed) {
        Ok(o) => o,
        Err(e) => return Ok(Err(e)),
    };
    rec.emit(Event::ProverDispatch {
        goal_key: key,
        goal: goal.to_string(),
        verdict: outcome.verdict,
    });
    if let Some(store) = store {
        store.goal_store(key, outcome.clone())?;
    }
    Ok(Ok(outcome))
}

fn lesson_line(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("-- LESSON: {}\n", flat.replace("EVOLVE", "evolve"))
}

fn solved(sketch: &ProofSketch, diags: &Diagnostics, cfg: &ValidationConfig) -> bool {
    diags.compiles && diags.open_goals.is_empty() && final_verify_with_diagnostics(sketch, diags, cfg).pass
}

/// Runs one episode starting from `start` with the rendered `prompt`.
pub fn run_episode(
    ctx: &EpisodeContext<'_>,
    start: &ProofSketch,
    prompt: &str,
    header: EpisodeHeader,
) -> Result<EpisodeOutcome, AgentError> {
    let mut rec = Recorder::new(ctx.journal, ctx.channel);
    rec.emit(Event::EpisodeStart {
        episode: header.episode,
        parent: header.parent,
        directive: header.directive.clone(),
    });

    let backend_failure = |source: BackendError, rec: Recorder<'_>| AgentError::Backend {
        worker: ctx.channel.to_string(),
        source,
        transcript: rec.events,
    };

    let mut messages = vec![
        Message::new(Role::System, PROVER_SYSTEM),
        Message::new(Role::User, prompt),
    ];
    let mut current = start.clone();
    let mut usage_total = TokenUsage::default();
    let (mut edits, mut prover_calls, mut turns) = (0u32, 0u32, 0u32);
    let mut summary = None;
    let mut is_solved = false;

    let end_reason = 'turns: loop {
        if turns >= ctx.limits.max_turns {
            rec.emit(Event::Limit {
                limit: "max_turns".into(),
                value: ctx.limits.max_turns,
            });
            break EndReason::TurnLimit;
        }
        if ctx.stop.is_some_and(StopSignal::is_set) {
            break EndReason::Stopped;
        }
        turns += 1;
        let request = GenerationRequest {
            channel: ctx.channel.to_string(),
            messages: messages.clone(),
            max_turn_tokens: ctx.max_turn_tokens,
        };
        let response = match ctx.backends.llm.generate(&request) {
            Ok(r) => r,
            Err(e) => return Err(backend_failure(e, rec)),
        };
        usage_total += response.usage;
        rec.emit(Event::Turn {
            turn: turns,
            component: Component::Prover,
            usage: response.usage,
            text: response.text.clone(),
            tool_calls: response.tool_calls.len(),
        });
        let calls_json = serde_json::to_string(&response.tool_calls).expect("tool calls serialize");
        messages.push(Message::new(
            Role::Assistant,
            format!("{}\n{calls_json}", response.text),
        ));
        if response.tool_calls.is_empty() {
            break EndReason::NoToolCalls;
        }

        let mut feedback = Vec::new();
        for call in &response.tool_calls {
            match call {
                ToolCall::SearchReplace { search, replace } => {
                    if edits >= ctx.limits.max_edits {
                        rec.emit(Event::Limit {
                            limit: "max_edits".into(),
                            value: ctx.limits.max_edits,
                        });
                        break 'turns EndReason::EditLimit;
                    }
                    edits += 1;
                    let applied = SearchReplaceEdit::new(search.as_str(), replace.as_str())
                        .and_then(|edit| current.apply_edit(&edit));
                    match applied {
                        Ok(next) => {
                            let diags = match ctx.backends.checker.check(&next.render()) {
                                Ok(d) => d,
                                Err(e) => return Err(backend_failure(e, rec)),
                            };
                            rec.emit(Event::ToolCall {
                                tool: call.name().into(),
                                ok: true,
                                detail: "applied".into(),
                            });
                            rec.emit(Event::Diagnostics {
                                compiles: diags.compiles,
                                errors: diags.errors.len(),
                                open_goals: diags.open_goals.len(),
                            });
                            feedback.push(format!("edit applied; {}", diags.summary()));
                            current = next;
                            if solved(&current, &diags, ctx.validation) {
                                is_solved = true;
                                break 'turns EndReason::Solved;
                            }
                        }
                        Err(e) => {
                            rec.emit(Event::ToolCall {
                                tool: call.name().into(),
                                ok: false,
                                detail: e.to_string(),
                            });
                            feedback.push(format!("edit rejected: {e}"));
                        }
                    }
                }
                ToolCall::FocusedProve { goal } => {
                    if !ctx.prover_tool {
                        rec.emit(Event::ToolCall {
                            tool: call.name().into(),
                            ok: false,
                            detail: "tool not available".into(),
                        });
                        feedback.push("focused_prove is not available".into());
                        continue;
                    }
                    if prover_calls >= ctx.limits.max_prover_queries {
                        rec.emit(Event::Limit {
                            limit: "max_prover_queries".into(),
                            value: ctx.limits.max_prover_queries,
                        });
                        feedback.push("prover query limit reached".into());
                        continue;
                    }
                    prover_calls += 1;
                    let seed = mix(ctx.seed, u64::from(prover_calls));
                    let outcome = match prove_cached(ctx.backends, ctx.store, &ctx.prover_budget, seed, goal, &mut rec)?
                    {
                        Ok(o) => o,
                        Err(BackendError::InvalidRequest(m)) => {
                            rec.emit(Event::ToolCall {
                                tool: call.name().into(),
                                ok: false,
                                detail: m.clone(),
                            });
                            feedback.push(format!("focused_prove rejected: {m}"));
                            continue;
                        }
                        Err(e) => return Err(backend_failure(e, rec)),
                    };
                    rec.emit(Event::ToolCall {
                        tool: call.name().into(),
                        ok: true,
                        detail: outcome.describe(),
                    });
                    feedback.push(format!("focused_prove `{goal}`: {}", outcome.describe()));
                }
                ToolCall::EndEpisode { summary: s } => {
                    rec.emit(Event::ToolCall {
                        tool: call.name().into(),
                        ok: true,
                        detail: s.clone().unwrap_or_default(),
                    });
                    summary = s.clone();
                    break 'turns EndReason::EndEpisode;
                }
            }
        }
        messages.push(Message::new(Role::User, feedback.join("\n")));
    };

    let mut lesson_comment = None;
    if !is_solved {
        let text = summary.clone().unwrap_or_else(|| {
            format!(
                "episode {} ended ({}) after {edits} edits and {prover_calls} prover queries",
                header.episode,
                end_reason.as_str()
            )
        });
        let line = lesson_line(&text);
        if let Some(next) = current.prepend_to_first_block(&line) {
            current = next;
            lesson_comment = Some(line.trim_end().to_string());
        }
    }

    rec.emit(Event::EpisodeEnd {
        episode: header.episode,
        solved: is_solved,
        edits,
        prover_calls,
        reason: end_reason.as_str().into(),
    });

    Ok(EpisodeOutcome {
        final_sketch: current,
        solved: is_solved,
        lesson_comment,
        transcript: rec.events,
        usage_total,
        edits,
        prover_calls,
        turns,
        end_reason,
        summary,
    })
}
