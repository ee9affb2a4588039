//! Bundled toy problems and scripted conversations that exercise each agent.

use crate::backends::ReplayScript;
use crate::backends::{GenerationResponse, TokenUsage, ToolCall};

/// A target equality whose proof can be split into three helper lemmas.
pub const TOY_PROBLEM: &str = "\
-- Toy target: a product of two sums.
-- EVOLVE-BLOCK-START
-- helper lemmas
-- EVOLVE-BLOCK-END
lemma target : (2 + 3) * (4 + 5) = 45 := /- EVOLVE-VALUE -/ sorry /- END-EVOLVE-VALUE -/
";

/// Problem for the goal-cache fixture: both workers need `2 + 2 = 4`.
pub const SHARED_GOAL_PROBLEM: &str = "\
-- EVOLVE-BLOCK-START
-- helpers
-- EVOLVE-BLOCK-END
lemma target : 2 + 2 = 4 := /- EVOLVE-VALUE -/ sorry /- END-EVOLVE-VALUE -/
";

pub const SHARED_GOAL: &str = "⊢ 2 + 2 = 4";

pub fn usage(input: u64, cache: u64, output: u64) -> TokenUsage {
    TokenUsage {
        input_tokens: input,
        cache_read_tokens: cache,
        output_tokens: output,
    }
}

pub fn respond(text: &str, tool_calls: Vec<ToolCall>, usage: TokenUsage) -> GenerationResponse {
    GenerationResponse {
        text: text.to_string(),
        tool_calls,
        usage,
    }
}

pub fn edit(search: &str, replace: &str) -> ToolCall {
    ToolCall::SearchReplace {
        search: search.to_string(),
        replace: replace.to_string(),
    }
}

pub fn prove(goal: &str) -> ToolCall {
    ToolCall::FocusedProve { goal: goal.to_string() }
}

pub fn end(summary: &str) -> ToolCall {
    ToolCall::EndEpisode {
        summary: Some(summary.to_string()),
    }
}

/// Agent D on [`TOY_PROBLEM`]: one episode reduces the target to three
/// `sorry` helpers, which the validator then proves and splices.
pub fn agent_d_script() -> ReplayScript {
    let turn = respond(
        "Reduce the target to a helper with the same statement and two sums.",
        vec![
            edit("sorry", "by_lemma product"),
            edit(
                "-- helper lemmas",
                "lemma sum_left : 2 + 3 = 5 := sorry\nlemma sum_right : 4 + 5 = 9 := sorry\nlemma product : (2 + 3) * (4 + 5) = 45 := sorry",
            ),
            end("target reduced to three helper lemmas"),
        ],
        usage(1200, 300, 180),
    );
    ReplayScript::new()
        .with_channel("prover-0", vec![turn])
        .with_cycling_channel("rater-0", vec![respond("RANKING: 1 > 2", vec![], usage(900, 0, 20))])
}

/// Agent A on [`TOY_PROBLEM`]: closes the target by evaluation in one edit.
pub fn agent_a_script() -> ReplayScript {
    let turn = respond(
        "Both sides are closed numerals; evaluate.",
        vec![edit("sorry", "eval")],
        usage(800, 0, 40),
    );
    ReplayScript::new().with_channel("subagent-0", vec![turn])
}

/// Two D provers on [`SHARED_GOAL_PROBLEM`]. `prover-0` asks the focused
/// prover about [`SHARED_GOAL`] and then breaks its sketch, so nothing of it
/// is kept except the cache entry. `prover-1` reduces the target to the same
/// goal and is solved from the cache.
pub fn shared_goal_script() -> ReplayScript {
    let first = respond(
        "Try a helper and check it with the prover.",
        vec![
            edit(
                "-- helpers",
                "lemma g : 2 + 2 = 4 := sorry\nlemma broken : 1 + = 2 := eval",
            ),
            prove(SHARED_GOAL),
            end("g holds; the second helper does not parse"),
        ],
        usage(1000, 0, 100),
    );
    let second = respond(
        "Use a helper lemma for the target.",
        vec![
            edit("sorry", "by_lemma g"),
            edit("-- helpers", "lemma g : 2 + 2 = 4 := sorry"),
            end("target reduced to g"),
        ],
        usage(1000, 0, 100),
    );
    ReplayScript::new()
        .with_channel("prover-0", vec![first])
        .with_channel("prover-1", vec![second])
}

/// One turn with `n` edits that each leave the sketch unchanged.
pub fn many_edits_script(channel: &str, n: usize) -> ReplayScript {
    let calls = (0..n).map(|_| edit("-- helper lemmas", "-- helper lemmas")).collect();
    ReplayScript::new().with_channel(channel, vec![respond("edit storm", calls, usage(10, 0, 10))])
}

/// One turn with `n` focused-prover calls followed by `end_episode`.
pub fn many_proves_script(channel: &str, n: usize) -> ReplayScript {
    let mut calls: Vec<ToolCall> = (0..n).map(|k| prove(&format!("⊢ {k} + 1 = {}", k + 1))).collect();
    calls.push(end("asked the prover repeatedly"));
    ReplayScript::new().with_channel(channel, vec![respond("prover storm", calls, usage(10, 0, 10))])
}

/// A subagent that never edits and ends every episode.
pub fn idle_script(channel: &str) -> ReplayScript {
    ReplayScript::new().with_cycling_channel(
        channel,
        vec![respond("nothing to try", vec![end("no progress")], usage(50, 0, 5))],
    )
}
