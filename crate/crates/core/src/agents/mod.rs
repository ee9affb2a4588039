//! Episodes and the four agent configurations.
//!
//! | kind | focused prover | evolution |
//! |------|----------------|-----------|
//! | A    | no             | no        |
//! | B    | yes            | no        |
//! | C    | no             | yes       |
//! | D    | yes            | yes       |
//!
//! A and B chain episodes per subagent ([`basic`]); C and D share a
//! population between prover and rater workers ([`evolve`]).

pub mod basic;
pub mod episode;
pub mod evolve;
pub mod fixtures;
pub mod schedule;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ProverBudget};
use crate::evalkit::AttemptLog;
use crate::journal::Event;
use crate::population::StoreError;
use crate::rating::{GibbsConfig, RatingError};
use crate::selection::{PUCBConfig, SelectionError};
use crate::sketch::ProofSketch;
use crate::validate::ValidationConfig;

pub use basic::run_basic;
pub use episode::{run_episode, EndReason, EpisodeContext, EpisodeHeader, EpisodeOutcome};
pub use evolve::{run_evolutionary, run_raters};
pub use schedule::{run_workers, StepResult, Worker};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{worker}: backend failure: {source}")]
    Backend {
        worker: String,
        source: BackendError,
        /// Events of the interrupted episode up to the failure.
        transcript: Vec<Event>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Rating(#[from] RatingError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("agent {got} cannot run here; expected one of {expected}")]
    WrongAgentKind { expected: &'static str, got: AgentKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    A,
    B,
    C,
    D,
}

impl AgentKind {
    pub fn uses_prover_tool(self) -> bool {
        matches!(self, AgentKind::B | AgentKind::D)
    }

    pub fn is_evolutionary(self) -> bool {
        matches!(self, AgentKind::C | AgentKind::D)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AgentKind::A => "A",
            AgentKind::B => "B",
            AgentKind::C => "C",
            AgentKind::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(AgentKind::A),
            "B" => Ok(AgentKind::B),
            "C" => Ok(AgentKind::C),
            "D" => Ok(AgentKind::D),
            other => Err(format!("unknown agent kind `{other}`; expected A, B, C or D")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLimits {
    pub max_prover_queries: u32,
    pub max_edits: u32,
    pub max_turns: u32,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            max_prover_queries: 5,
            max_edits: 90,
            max_turns: 100,
        }
    }
}

impl EpisodeLimits {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_prover_queries == 0 || self.max_edits == 0 || self.max_turns == 0 {
            return Err(AgentError::InvalidConfig(
                "episode limits must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub agent_kind: AgentKind,
    pub n_subagents: usize,
    pub n_raters: usize,
    pub episode_budget: u64,
    pub limits: EpisodeLimits,
    pub seed: u64,
    /// Per-subagent seeds; missing entries are derived from `seed`.
    pub seeds: Vec<u64>,
    /// Stop raters after this many matches.
    pub max_matches: Option<usize>,
    pub players_per_match: usize,
    pub gibbs: GibbsConfig,
    pub pucb: PUCBConfig,
    pub prover_budget: ProverBudget,
    pub validation: ValidationConfig,
    pub max_turn_tokens: u32,
    /// Round-robin on one thread instead of one thread per worker.
    pub deterministic: bool,
    /// Extra problem context shown in every prompt.
    pub context: String,
}

impl RunConfig {
    pub fn new(agent_kind: AgentKind) -> Self {
        RunConfig {
            agent_kind,
            n_subagents: 10,
            n_raters: if agent_kind.is_evolutionary() { 2 } else { 0 },
            episode_budget: 3000,
            limits: EpisodeLimits::default(),
            seed: 0,
            seeds: Vec::new(),
            max_matches: None,
            players_per_match: 7,
            gibbs: GibbsConfig::default(),
            pucb: PUCBConfig::default(),
            prover_budget: ProverBudget::default(),
            validation: ValidationConfig::default(),
            max_turn_tokens: 8192,
            deterministic: false,
            context: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.n_subagents == 0 {
            return Err(AgentError::InvalidConfig("n_subagents must be at least 1".into()));
        }
        if self.episode_budget == 0 {
            return Err(AgentError::InvalidConfig("episode_budget must be at least 1".into()));
        }
        if self.players_per_match < 2 {
            return Err(AgentError::InvalidConfig("players_per_match must be at least 2".into()));
        }
        self.limits.validate()?;
        self.gibbs.validate()?;
        self.pucb.validate()?;
        Ok(())
    }

    pub fn prover_seed(&self, index: usize) -> u64 {
        self.seeds
            .get(index)
            .copied()
            .unwrap_or_else(|| mix(self.seed, index as u64))
    }

    pub fn rater_seed(&self, index: usize) -> u64 {
        mix(mix(self.seed, 0x5241_5445), index as u64)
    }
}

/// SplitMix64 finaliser over `a` and `b`.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cooperative stop flag with the name of whoever set it first.
#[derive(Debug, Default)]
pub struct StopSignal {
    flag: AtomicBool,
    winner: Mutex<Option<String>>,
}

impl StopSignal {
    pub fn new() -> Self {
        StopSignal::default()
    }

    /// Sets the flag. Returns `true` for the first caller only.
    pub fn trigger(&self, who: &str) -> bool {
        let mut winner = self.winner.lock().expect("stop lock poisoned");
        if winner.is_some() {
            return false;
        }
        *winner = Some(who.to_string());
        self.flag.store(true, Ordering::SeqCst);
        true
    }

    pub fn is_set(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    pub fn winner(&self) -> Option<String> {
        self.winner.lock().expect("stop lock poisoned").clone()
    }
}

/// Shared episode budget; every claim is one episode.
#[derive(Debug)]
pub struct EpisodeBudget {
    total: u64,
    claimed: AtomicU64,
}

impl EpisodeBudget {
    pub fn new(total: u64) -> Self {
        EpisodeBudget {
            total,
            claimed: AtomicU64::new(0),
        }
    }

    /// Next episode index, or `None` when the budget is spent.
    pub fn claim(&self) -> Option<u64> {
        self.claimed
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| {
                (c < self.total).then_some(c + 1)
            })
            .ok()
    }

    pub fn claimed(&self) -> u64 {
        self.claimed.load(Ordering::SeqCst).min(self.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub solved: bool,
    /// The verified proof when solved.
    pub final_sketch: Option<ProofSketch>,
    pub solver: Option<String>,
    pub episodes: u64,
    pub matches: usize,
    pub attempt_logs: Vec<AttemptLog>,
}
