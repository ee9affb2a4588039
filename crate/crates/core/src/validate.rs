//! Sandbox checks, goal incorporation and final verification.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{Checker, Diagnostics, ProverOutcome, ProverVerdict};
use crate::digest::Digest;
use crate::lexical;
use crate::population::{goal_key, GoalFeedback, PopulationStore, StoreError};
use crate::sketch::{ProofSketch, SorrySite, DEFAULT_PLACEHOLDER};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    StatementAltered,
    CompileError { summary: String },
    CheckerUnavailable { message: String },
    SorryRemains { count: usize },
    OpenGoals { count: usize },
    DisallowedToken { token: String, line: usize, col: usize },
    GoalSiteMismatch { goals: usize, sites: usize },
    SpliceOutsideEditable { goal: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StatementAltered => write!(f, "frozen text was altered"),
            Violation::CompileError { summary } => write!(f, "does not compile: {summary}"),
            Violation::CheckerUnavailable { message } => write!(f, "checker unavailable: {message}"),
            Violation::SorryRemains { count } => write!(f, "{count} placeholder(s) remain"),
            Violation::OpenGoals { count } => write!(f, "{count} open goal(s) remain"),
            Violation::DisallowedToken { token, line, col } => {
                write!(f, "disallowed token `{token}` at {line}:{col}")
            }
            Violation::GoalSiteMismatch { goals, sites } => {
                write!(f, "{goals} open goal(s) but {sites} placeholder site(s)")
            }
            Violation::SpliceOutsideEditable { goal, reason } => {
                write!(f, "cannot splice proof of `{goal}`: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub reasons: Vec<Violation>,
}

impl Verdict {
    pub fn from_reasons(reasons: Vec<Violation>) -> Self {
        Verdict {
            pass: reasons.is_empty(),
            reasons,
        }
    }

    pub fn has(&self, pred: impl Fn(&Violation) -> bool) -> bool {
        self.reasons.iter().any(pred)
    }

    pub fn summary(&self) -> String {
        if self.pass {
            return "pass".into();
        }
        self.reasons
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub placeholder: String,
    pub disallowed_tokens: Vec<String>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            placeholder: DEFAULT_PLACEHOLDER.into(),
            disallowed_tokens: vec!["sorryAx".into()],
        }
    }
}

/// Accepts a candidate whose frozen bytes match `original` and which compiles.
/// Placeholders are allowed.
pub fn sandbox_check(original: &ProofSketch, candidate: &ProofSketch, checker: &dyn Checker) -> Verdict {
    if original.protected_digest() != candidate.protected_digest() {
        return Verdict::from_reasons(vec![Violation::StatementAltered]);
    }
    match checker.check(&candidate.render()) {
        Ok(diags) => sandbox_check_with_diagnostics(original, candidate, &diags),
        Err(e) => Verdict::from_reasons(vec![Violation::CheckerUnavailable { message: e.to_string() }]),
    }
}

pub fn sandbox_check_with_diagnostics(original: &ProofSketch, candidate: &ProofSketch, diags: &Diagnostics) -> Verdict {
    let mut reasons = Vec::new();
    if original.protected_digest() != candidate.protected_digest() {
        reasons.push(Violation::StatementAltered);
    }
    if !diags.compiles {
        reasons.push(Violation::CompileError {
            summary: diags.summary(),
        });
    }
    Verdict::from_reasons(reasons)
}

/// Accepts only a complete proof: compiles, no open goals, no placeholders
/// and no disallowed tokens in code.
pub fn final_verify(sketch: &ProofSketch, checker: &dyn Checker, cfg: &ValidationConfig) -> Verdict {
    match checker.check(&sketch.render()) {
        Ok(diags) => final_verify_with_diagnostics(sketch, &diags, cfg),
        Err(e) => Verdict::from_reasons(vec![Violation::CheckerUnavailable { message: e.to_string() }]),
    }
}

pub fn final_verify_with_diagnostics(sketch: &ProofSketch, diags: &Diagnostics, cfg: &ValidationConfig) -> Verdict {
    let mut reasons = Vec::new();
    if !diags.compiles {
        reasons.push(Violation::CompileError {
            summary: diags.summary(),
        });
    }
    if !diags.open_goals.is_empty() {
        reasons.push(Violation::OpenGoals {
            count: diags.open_goals.len(),
        });
    }
    let sorries = sketch.find_placeholders(&cfg.placeholder);
    if !sorries.is_empty() {
        reasons.push(Violation::SorryRemains { count: sorries.len() });
    }
    let rendered = sketch.render();
    for token in &cfg.disallowed_tokens {
        for at in lexical::find_code_tokens(&rendered, token) {
            let (line, col) = lexical::line_col(&rendered, at);
            reasons.push(Violation::DisallowedToken {
                token: token.clone(),
                line,
                col,
            });
        }
    }
    Verdict::from_reasons(reasons)
}

/// An open goal still waiting for a prover result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenGoal {
    pub key: Digest,
    pub goal: String,
    /// Placeholder the goal belongs to; `None` when goals and sites could not
    /// be paired.
    pub site: Option<SorrySite>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incorporation {
    pub sketch: ProofSketch,
    /// Goals without a usable result, in document order.
    pub unresolved: Vec<OpenGoal>,
    /// Keys whose proofs were spliced in.
    pub spliced: Vec<Digest>,
    /// Every result that was found, including disproofs.
    pub feedback: Vec<GoalFeedback>,
    pub issues: Vec<Violation>,
}

/// Pairs open goals with placeholder sites in document order and splices in
/// proofs supplied by `resolve`. Disproofs are reported but never spliced;
/// failures leave the goal unresolved.
pub fn incorporate_goals<F>(
    sketch: &ProofSketch,
    diags: &Diagnostics,
    cfg: &ValidationConfig,
    mut resolve: F,
) -> Incorporation
where
    F: FnMut(&Digest) -> Option<ProverOutcome>,
{
    let sites = sketch.find_placeholders(&cfg.placeholder);
    let mut out = Incorporation {
        sketch: sketch.clone(),
        unresolved: Vec::new(),
        spliced: Vec::new(),
        feedback: Vec::new(),
        issues: Vec::new(),
    };
    if diags.open_goals.is_empty() {
        return out;
    }
    let paired = sites.len() == diags.open_goals.len();
    if !paired {
        out.issues.push(Violation::GoalSiteMismatch {
            goals: diags.open_goals.len(),
            sites: sites.len(),
        });
    }

    let mut splices: Vec<(SorrySite, String, OpenGoal)> = Vec::new();
    for (i, goal) in diags.open_goals.iter().enumerate() {
        let open = OpenGoal {
            key: goal_key(goal),
            goal: goal.clone(),
            site: if paired { Some(sites[i]) } else { None },
        };
        match resolve(&open.key) {
            Some(outcome) if outcome.is_verdict() => {
                out.feedback.push(GoalFeedback {
                    goal_key: open.key,
                    goal: open.goal.clone(),
                    outcome: outcome.clone(),
                });
                if outcome.verdict == ProverVerdict::Proved {
                    match (open.site, outcome.script) {
                        (Some(site), Some(script)) => splices.push((site, script, open)),
                        _ => out.unresolved.push(open),
                    }
                }
            }
            _ => out.unresolved.push(open),
        }
    }

    // Later sites first so earlier offsets stay valid.
    splices.sort_by_key(|(site, _, _)| std::cmp::Reverse(site.global_offset));
    let placeholder_len = cfg.placeholder.len();
    let mut rejected = Vec::new();
    for (site, script, open) in splices {
        let range = site.offset..site.offset + placeholder_len;
        match out.sketch.replace_span(site.region_index, range, &script) {
            Ok(next) => {
                out.sketch = next;
                out.spliced.push(open.key);
            }
            Err(e) => {
                out.issues.push(Violation::SpliceOutsideEditable {
                    goal: open.goal.clone(),
                    reason: e.to_string(),
                });
                rejected.push(open);
            }
        }
    }
    out.spliced.reverse();
    out.unresolved.extend(rejected);
    out.unresolved
        .sort_by_key(|g| g.site.map_or(usize::MAX, |s| s.global_offset));
    out
}

/// [`incorporate_goals`] against the store's goal cache. Each lookup that
/// finds an entry counts as a cache hit.
pub fn incorporate_cached_goals(
    sketch: &ProofSketch,
    diags: &Diagnostics,
    store: &PopulationStore,
    cfg: &ValidationConfig,
) -> Result<Incorporation, StoreError> {
    let mut failure = None;
    let inc = incorporate_goals(sketch, diags, cfg, |key| match store.goal_lookup(key) {
        Ok(entry) => entry.map(|e| e.outcome),
        Err(e) => {
            failure.get_or_insert(e);
            None
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(inc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::{toy_check, ToyChecker};
    use crate::rating::GibbsConfig;
    use crate::sketch::{parse_sketch, SearchReplaceEdit};

    const BASE: &str = "\
lemma fixed : 2 = 2 := eval
-- EVOLVE-BLOCK-START
lemma a : 1 + 1 = 2 := sorry
lemma b : 2 * 3 = 7 := sorry
-- EVOLVE-BLOCK-END
lemma target : 3 = 3 := /- EVOLVE-VALUE -/ eval /- END-EVOLVE-VALUE -/
";

    fn base() -> ProofSketch {
        parse_sketch(BASE).unwrap()
    }

    fn edit(s: &ProofSketch, a: &str, b: &str) -> ProofSketch {
        s.apply_edit(&SearchReplaceEdit::new(a, b).unwrap()).unwrap()
    }

    #[test]
    fn sandbox_accepts_editable_changes() {
        let cand = edit(&base(), "lemma a : 1 + 1 = 2 := sorry", "lemma a : 1 + 1 = 2 := eval");
        assert!(sandbox_check(&base(), &cand, &ToyChecker).pass);
    }

    #[test]
    fn sandbox_rejects_frozen_change() {
        let cand = parse_sketch(&BASE.replace("fixed : 2 = 2", "fixed : 2 = 3")).unwrap();
        let v = sandbox_check(&base(), &cand, &ToyChecker);
        assert!(!v.pass);
        assert_eq!(v.reasons, vec![Violation::StatementAltered]);
    }

    #[test]
    fn sandbox_rejects_broken_code() {
        let cand = edit(&base(), "lemma a : 1 + 1", "lemma a : 1 + + 1");
        let v = sandbox_check(&base(), &cand, &ToyChecker);
        assert!(v.has(|r| matches!(r, Violation::CompileError { .. })));
    }

    #[test]
    fn final_verify_cases() {
        let cfg = ValidationConfig::default();
        let v = final_verify(&base(), &ToyChecker, &cfg);
        assert!(v.has(|r| matches!(r, Violation::SorryRemains { count: 2 })));
        let done = edit(
            &edit(&base(), "2 := sorry", "2 := eval"),
            "lemma b : 2 * 3 = 7 := sorry",
            "",
        );
        assert!(
            final_verify(&done, &ToyChecker, &cfg).pass,
            "{:?}",
            final_verify(&done, &ToyChecker, &cfg)
        );

        let smuggled = edit(
            &done,
            "lemma a : 1 + 1 = 2 := eval",
            "lemma a : 1 + 1 = 2 := eval\nsorryAx",
        );
        let v = final_verify(&smuggled, &ToyChecker, &cfg);
        assert!(
            v.has(|r| matches!(r, Violation::DisallowedToken { line: 4, col: 1, .. })),
            "{v:?}"
        );

        let commented = edit(
            &done,
            "lemma a : 1 + 1 = 2 := eval",
            "lemma a : 1 + 1 = 2 := eval -- sorryAx sorry",
        );
        assert!(final_verify(&commented, &ToyChecker, &cfg).pass);
    }

    #[test]
    fn incorporate_nothing_open() {
        let done = edit(&edit(&base(), "2 := sorry", "2 := eval"), "7 := sorry", "7 := eval");
        let d = toy_check(&done.render());
        let inc = incorporate_goals(&done, &d, &ValidationConfig::default(), |_| unreachable!());
        assert_eq!(inc.sketch, done);
        assert!(inc.unresolved.is_empty());
    }

    #[test]
    fn incorporate_one_of_two() {
        let s = base();
        let d = toy_check(&s.render());
        assert_eq!(d.open_goals.len(), 2);
        let store = PopulationStore::new(GibbsConfig::default());
        store
            .goal_store(goal_key(&d.open_goals[0]), ProverOutcome::proved("eval"))
            .unwrap();
        let inc = incorporate_cached_goals(&s, &d, &store, &ValidationConfig::default()).unwrap();
        assert_eq!(inc.spliced, vec![goal_key(&d.open_goals[0])]);
        assert_eq!(inc.unresolved.len(), 1);
        assert_eq!(inc.unresolved[0].goal, d.open_goals[1]);
        assert_eq!(inc.sketch.render(), BASE.replace("2 := sorry", "2 := eval"));
        assert_eq!(store.goal_peek(&goal_key(&d.open_goals[0])).unwrap().hits, 1);
    }

    #[test]
    fn disproof_is_never_spliced() {
        let s = base();
        let d = toy_check(&s.render());
        let bad = goal_key(&d.open_goals[1]);
        let inc = incorporate_goals(&s, &d, &ValidationConfig::default(), |k| {
            (*k == bad).then(|| ProverOutcome::disproved("eval: 6 ≠ 7"))
        });
        assert_eq!(inc.sketch, s);
        assert!(inc.spliced.is_empty());
        assert_eq!(inc.feedback.len(), 1);
        assert_eq!(inc.feedback[0].outcome.verdict, ProverVerdict::Disproved);
        assert_eq!(inc.unresolved.len(), 1);
    }

    #[test]
    fn frozen_sorry_is_not_spliced() {
        let text = "lemma f : 1 = 1 := sorry\n-- EVOLVE-BLOCK-START\n-- EVOLVE-BLOCK-END\n";
        let s = parse_sketch(text).unwrap();
        let d = toy_check(text);
        let inc = incorporate_goals(&s, &d, &ValidationConfig::default(), |_| {
            Some(ProverOutcome::proved("eval"))
        });
        assert_eq!(inc.sketch, s);
        assert!(inc
            .issues
            .iter()
            .any(|v| matches!(v, Violation::SpliceOutsideEditable { .. })));
        assert_eq!(inc.unresolved.len(), 1);
    }

    #[test]
    fn mismatch_is_reported() {
        let s = base();
        let mut d = toy_check(&s.render());
        d.open_goals.pop();
        let inc = incorporate_goals(&s, &d, &ValidationConfig::default(), |_| {
            Some(ProverOutcome::proved("eval"))
        });
        assert_eq!(inc.sketch, s);
        assert!(inc.issues.contains(&Violation::GoalSiteMismatch { goals: 1, sites: 2 }));
    }
}
