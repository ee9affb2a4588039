//! Contracts for the three external capabilities (language model, checker,
//! focused prover) and their reference implementations.

mod command;
mod replay;
mod sim;
pub mod toy;
mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use command::CommandChecker;
pub use replay::{ChannelScript, ReplayLlm, ReplayScript};
pub use sim::SimulatedProver;
pub use toy::ToyChecker;
pub use wire::{WireLlm, WireProver, TOKEN_ENV};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("replay script exhausted on channel `{channel}` at position {position}")]
    ScriptExhausted { channel: String, position: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("checker unavailable: {0}")]
    CheckerUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Conversation stream, e.g. `prover-0` or `rater-1`. Replay backends key
    /// their scripts on it.
    pub channel: String,
    pub messages: Vec<Message>,
    pub max_turn_tokens: u32,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            None => Err(BackendError::InvalidRequest("messages must not be empty".into())),
            Some(m) if m.role == Role::Assistant => Err(BackendError::InvalidRequest(
                "first message must come from the system or the user".into(),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    #[serde(default)]
    pub input_tokens: u64,
    #[serde(default)]
    pub cache_read_tokens: u64,
    #[serde(default)]
    pub output_tokens: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.cache_read_tokens += rhs.cache_read_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case")]
pub enum ToolCall {
    SearchReplace {
        search: String,
        replace: String,
    },
    FocusedProve {
        goal: String,
    },
    EndEpisode {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summary: Option<String>,
    },
}

impl ToolCall {
    pub fn name(&self) -> &'static str {
        match self {
            ToolCall::SearchReplace { .. } => "search_replace",
            ToolCall::FocusedProve { .. } => "focused_prove",
            ToolCall::EndEpisode { .. } => "end_episode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub compiles: bool,
    pub errors: Vec<DiagnosticError>,
    /// Self-contained goal texts, in declaration order.
    pub open_goals: Vec<String>,
}

impl Diagnostics {
    /// Plain-text rendering fed back to the model.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        if self.compiles {
            out.push_str("compiles: yes\n");
        } else {
            out.push_str("compiles: no\n");
        }
        for e in &self.errors {
            out.push_str(&format!("error {}:{} {}\n", e.line, e.col, e.message));
        }
        for g in &self.open_goals {
            out.push_str(&format!("open goal: {g}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProverVerdict {
    Proved,
    Disproved,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProverOutcome {
    pub verdict: ProverVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

impl ProverOutcome {
    pub fn proved(script: impl Into<String>) -> Self {
        ProverOutcome {
            verdict: ProverVerdict::Proved,
            script: Some(script.into()),
            feedback: None,
        }
    }

    pub fn disproved(script: impl Into<String>) -> Self {
        ProverOutcome {
            verdict: ProverVerdict::Disproved,
            script: Some(script.into()),
            feedback: None,
        }
    }

    pub fn failed(feedback: impl Into<String>) -> Self {
        ProverOutcome {
            verdict: ProverVerdict::Failed,
            script: None,
            feedback: Some(feedback.into()),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self.verdict {
            ProverVerdict::Proved | ProverVerdict::Disproved => self.script.is_some(),
            ProverVerdict::Failed => self.feedback.is_some(),
        }
    }

    pub fn is_verdict(&self) -> bool {
        self.verdict != ProverVerdict::Failed
    }

    /// One-line rendering for prompts and tool results.
    pub fn describe(&self) -> String {
        match self.verdict {
            ProverVerdict::Proved => {
                format!("proved (script: {})", self.script.as_deref().unwrap_or(""))
            }
            ProverVerdict::Disproved => {
                format!("disproved (script: {})", self.script.as_deref().unwrap_or(""))
            }
            ProverVerdict::Failed => {
                format!("failed: {}", self.feedback.as_deref().unwrap_or(""))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProverBudget {
    pub simulations: u32,
    pub timeout_ms: u64,
}

impl Default for ProverBudget {
    fn default() -> Self {
        ProverBudget {
            simulations: 400,
            timeout_ms: 60_000,
        }
    }
}

/// What a backend promises about itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Safe to call from several workers at once.
    pub concurrent: bool,
    /// Same inputs always give the same outputs.
    pub replayable: bool,
}

pub trait LanguageModel: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    fn capabilities(&self) -> Capabilities;
}

pub trait Checker: Send + Sync {
    fn check(&self, sketch_text: &str) -> Result<Diagnostics, BackendError>;
}

pub trait FocusedProver: Send + Sync {
    fn prove(&self, goal_text: &str, budget: &ProverBudget, seed: u64) -> Result<ProverOutcome, BackendError>;
}

/// The backend set an agent run is wired to.
#[derive(Clone)]
pub struct Backends {
    pub llm: Arc<dyn LanguageModel>,
    pub checker: Arc<dyn Checker>,
    pub prover: Arc<dyn FocusedProver>,
}

impl Backends {
    /// Replay language model, toy checker and simulated prover.
    pub fn deterministic(script: ReplayScript) -> Self {
        Backends {
            llm: Arc::new(ReplayLlm::new(script)),
            checker: Arc::new(ToyChecker),
            prover: Arc::new(SimulatedProver),
        }
    }
}
