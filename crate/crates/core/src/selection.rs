//! Parent selection with P-UCB and prompt assembly.
//!
//! P-UCB scores each elite sketch as `q + c * sqrt(total_visits) / (v + 1)`,
//! where `q` is the sketch's Elo min-max normalised within the elite.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ProverVerdict;
use crate::population::{EliteCandidate, GoalFeedback, PopulationStore, SketchId, SketchRecord, StoreError};

pub const PROVER_TEMPLATE: &str = include_str!("../assets/prover_prompt.txt");
pub const BASIC_TEMPLATE: &str = include_str!("../assets/basic_prompt.txt");
pub const RATER_TEMPLATE: &str = include_str!("../assets/rater_prompt.txt");

pub const NO_DIRECTIVE: &str = "no directive";

/// Variables a prover template may use.
pub const PROVER_VARIABLES: &[&str] = &["code", "plan", "feedback", "inspirations", "directive", "context"];
/// Variables a rater template may use.
pub const RATER_VARIABLES: &[&str] = &["n_players", "player_blocks"];

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("template is missing required variable {{{0}}}")]
    MissingTemplateVariable(String),
    #[error("template uses unknown variable {{{0}}}")]
    UnknownTemplateVariable(String),
    #[error("unbalanced brace at byte {0} of template")]
    UnbalancedBrace(usize),
    #[error("no rated sketch to select from")]
    NoRatedSketch,
    #[error("{given} inspirations given, at most {max} allowed")]
    TooManyInspirations { given: usize, max: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PUCBConfig {
    pub exploration_c: f64,
    pub elite_size: usize,
    pub n_inspirations: usize,
    /// Directive text and its sampling probability.
    pub directive_weights: Vec<(String, f64)>,
}

impl Default for PUCBConfig {
    fn default() -> Self {
        let directives = [
            "decompose unsolved goals",
            "combine ideas from prior attempts",
            "try a completely new approach",
            NO_DIRECTIVE,
        ];
        PUCBConfig {
            exploration_c: 0.2,
            elite_size: 64,
            n_inspirations: 2,
            directive_weights: directives.iter().map(|d| (d.to_string(), 0.25)).collect(),
        }
    }
}

impl PUCBConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let bad = |m: &str| Err(SelectionError::InvalidConfig(m.into()));
        if !(self.exploration_c.is_finite() && self.exploration_c >= 0.0) {
            return bad("exploration_c must be finite and non-negative");
        }
        if self.elite_size == 0 {
            return bad("elite_size must be at least 1");
        }
        if self.directive_weights.is_empty() {
            return bad("directive_weights is empty");
        }
        if self
            .directive_weights
            .iter()
            .any(|(_, w)| !(w.is_finite() && *w >= 0.0))
        {
            return bad("directive weights must be finite and non-negative");
        }
        let total: f64 = self.directive_weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("directive weights must sum to 1");
        }
        Ok(())
    }

    /// Puts all probability on one directive.
    pub fn with_only_directive(mut self, directive: &str) -> Self {
        self.directive_weights = vec![(directive.to_string(), 1.0)];
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub root_id: SketchId,
    pub inspiration_ids: Vec<SketchId>,
    pub rendered_prompt: String,
    pub directive: String,
}

/// P-UCB scores for `(elo, visits)` candidates.
///
/// Panics if `candidates` is empty.
pub fn pucb_scores(candidates: &[(f64, u64)], total_visits: u64, c: f64) -> Vec<f64> {
    assert!(!candidates.is_empty(), "pucb_scores needs at least one candidate");
    let lo = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let bonus = c * (total_visits as f64).sqrt();
    candidates
        .iter()
        .map(|&(elo, visits)| {
            let q = if hi > lo { (elo - lo) / (hi - lo) } else { 1.0 };
            q + bonus / (visits as f64 + 1.0)
        })
        .collect()
}

/// Index of the best P-UCB score among `elite`; ties go to the lowest id.
pub fn pucb_argmax(elite: &[EliteCandidate], c: f64) -> usize {
    let pairs: Vec<(f64, u64)> = elite.iter().map(|e| (e.elo, e.visits)).collect();
    let total: u64 = pairs.iter().map(|p| p.1).sum();
    let scores = pucb_scores(&pairs, total, c);
    let mut best = 0;
    for i in 1..elite.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && elite[i].id < elite[best].id);
        if better {
            best = i;
        }
    }
    best
}

/// Picks a parent from the elite and records the visit, atomically.
pub fn select_parent(store: &PopulationStore, cfg: &PUCBConfig) -> Result<SketchId, SelectionError> {
    cfg.validate()?;
    store
        .select_and_visit(cfg.elite_size, |elite| pucb_argmax(elite, cfg.exploration_c))?
        .ok_or(SelectionError::NoRatedSketch)
}

/// Up to `cfg.n_inspirations` records with the highest Elo, excluding `root`.
pub fn pick_inspirations(store: &PopulationStore, root: SketchId, cfg: &PUCBConfig) -> Vec<SketchRecord> {
    store
        .top_by_elo(cfg.n_inspirations + 1)
        .into_iter()
        .filter(|id| *id != root)
        .take(cfg.n_inspirations)
        .filter_map(|id| store.get(id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

/// A parsed `{name}` template. `{{` and `}}` stand for literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pieces: Vec<Piece>,
}

impl PromptTemplate {
    pub fn parse(text: &str, allowed: &[&str], required: &[&str]) -> Result<Self, SelectionError> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    literal.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    literal.push('}');
                    i += 2;
                }
                b'{' => {
                    let close = text[i + 1..].find('}').ok_or(SelectionError::UnbalancedBrace(i))?;
                    let name = &text[i + 1..i + 1 + close];
                    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                        return Err(SelectionError::UnbalancedBrace(i));
                    }
                    if !allowed.contains(&name) {
                        return Err(SelectionError::UnknownTemplateVariable(name.to_string()));
                    }
                    if !literal.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut literal)));
                    }
                    pieces.push(Piece::Var(name.to_string()));
                    i += close + 2;
                }
                b'}' => return Err(SelectionError::UnbalancedBrace(i)),
                _ => {
                    let ch = text[i..].chars().next().expect("in bounds");
                    literal.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        let template = PromptTemplate { pieces };
        for name in required {
            if !template.variables().any(|v| v == *name) {
                return Err(SelectionError::MissingTemplateVariable(name.to_string()));
            }
        }
        Ok(template)
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Var(v) => Some(v.as_str()),
            Piece::Text(_) => None,
        })
    }

    /// Single-pass substitution; values are inserted verbatim.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, SelectionError> {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => out.push_str(
                    values
                        .get(v.as_str())
                        .ok_or_else(|| SelectionError::MissingTemplateVariable(v.clone()))?,
                ),
            }
        }
        Ok(out)
    }
}

pub fn render_feedback(feedback: &[GoalFeedback]) -> String {
    let mut out = String::new();
    for fb in feedback {
        let label = match fb.outcome.verdict {
            ProverVerdict::Proved => "proof found",
            ProverVerdict::Disproved => "disproof found",
            ProverVerdict::Failed => "no result",
        };
        out.push_str(&format!("- goal `{}`: {label}; {}\n", fb.goal, fb.outcome.describe()));
    }
    out
}

fn render_inspiration(record: &SketchRecord, position: usize) -> String {
    let mut out = format!(
        "### Inspiration {position} (sketch {}, Elo {:.1})\n{}\n",
        record.id,
        record.rating.elo,
        record.sketch.render()
    );
    if !record.plan_summary.is_empty() {
        out.push_str(&format!("Plan: {}\n", record.plan_summary));
    }
    if !record.goal_feedback.is_empty() {
        out.push_str("Prover feedback:\n");
        out.push_str(&render_feedback(&record.goal_feedback));
    }
    out
}

fn sample_directive(cfg: &PUCBConfig, seed: u64) -> Result<String, SelectionError> {
    let weights: Vec<f64> = cfg.directive_weights.iter().map(|(_, w)| *w).collect();
    let dist =
        WeightedIndex::new(&weights).map_err(|e| SelectionError::InvalidConfig(format!("directive weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cfg.directive_weights[dist.sample(&mut rng)].0.clone())
}

/// Builds the prover prompt for `root` with its inspirations and one sampled
/// directive. Deterministic given `seed`.
pub fn assemble_prompt(
    root: &SketchRecord,
    inspirations: &[SketchRecord],
    template: &str,
    cfg: &PUCBConfig,
    context: &str,
    seed: u64,
) -> Result<PromptBundle, SelectionError> {
    cfg.validate()?;
    if inspirations.len() > cfg.n_inspirations {
        return Err(SelectionError::TooManyInspirations {
            given: inspirations.len(),
            max: cfg.n_inspirations,
        });
    }
    let template = PromptTemplate::parse(template, PROVER_VARIABLES, &["code"])?;
    let directive = sample_directive(cfg, seed)?;
    let inspirations: Vec<&SketchRecord> = inspirations.iter().filter(|r| r.id != root.id).collect();

    let mut values = BTreeMap::new();
    values.insert("code", root.sketch.render());
    values.insert(
        "plan",
        if root.plan_summary.is_empty() {
            String::new()
        } else {
            format!("Plan of the current sketch:\n{}", root.plan_summary)
        },
    );
    values.insert(
        "feedback",
        if root.goal_feedback.is_empty() {
            String::new()
        } else {
            format!(
                "Prover feedback on its open goals:\n{}",
                render_feedback(&root.goal_feedback)
            )
        },
    );
    values.insert(
        "inspirations",
        if inspirations.is_empty() {
            String::new()
        } else {
            let mut s = String::from("Strong sketches from other workers:\n\n");
            for (k, r) in inspirations.iter().enumerate() {
                s.push_str(&render_inspiration(r, k + 1));
                s.push('\n');
            }
            s
        },
    );
    values.insert("directive", directive.clone());
    values.insert("context", context.to_string());

    Ok(PromptBundle {
        root_id: root.id,
        inspiration_ids: inspirations.iter().map(|r| r.id).collect(),
        rendered_prompt: template.render(&values)?,
        directive,
    })
}

/// Rater prompt listing the players as `Sketch 1`, `Sketch 2`, ...
pub fn render_rater_prompt(template: &str, players: &[SketchRecord]) -> Result<String, SelectionError> {
    let template = PromptTemplate::parse(template, RATER_VARIABLES, &["player_blocks"])?;
    let mut blocks = String::new();
    for (k, r) in players.iter().enumerate() {
        blocks.push_str(&format!("## Sketch {}\n{}\n", k + 1, r.sketch.render()));
        if !r.goal_feedback.is_empty() {
            blocks.push_str("Prover feedback:\n");
            blocks.push_str(&render_feedback(&r.goal_feedback));
        }
        blocks.push('\n');
    }
    let mut values = BTreeMap::new();
    values.insert("n_players", players.len().to_string());
    values.insert("player_blocks", blocks);
    template.render(&values)
}

/// Parses the last `RANKING:` line of a rater reply into tie groups of
/// 0-based player positions. Out-of-range or repeated labels are skipped,
/// unmentioned players form a final tie group, and a reply without a
/// ranking line ties everybody.
pub fn parse_ranking(reply: &str, n_players: usize) -> Vec<Vec<usize>> {
    let line = reply
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("RANKING:"))
        .unwrap_or("");
    let mut seen = vec![false; n_players];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for group in line.split('>') {
        let mut members = Vec::new();
        for label in group.split('=') {
            let Ok(k) = label.trim().parse::<usize>() else {
                continue;
            };
            if k == 0 || k > n_players || seen[k - 1] {
                continue;
            }
            seen[k - 1] = true;
            members.push(k - 1);
        }
        if !members.is_empty() {
            groups.push(members);
        }
    }
    let rest: Vec<usize> = (0..n_players).filter(|&k| !seen[k]).collect();
    if !rest.is_empty() {
        groups.push(rest);
    }
    groups
}
