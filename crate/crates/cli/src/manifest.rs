//! Run manifest: a TOML file naming the problem, the agent and its backends.
//!
//! ```toml
//! problem_file = "problem.lean"
//! agent_kind = "D"
//! budget = 4
//! subagents = 1
//! raters = 1
//! seed = 7
//!
//! [llm]
//! backend = "replay"        # or "wire" (token from NEXUS_LLM_TOKEN)
//! script = "script.json"
//!
//! [checker]
//! backend = "toy"           # or "command" with command = "lake env lean {file}"
//!
//! [prover]
//! backend = "sim"           # or "wire" with url = "..."
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nexus_core::agents::{AgentKind, EpisodeLimits, RunConfig};
use nexus_core::backends::{
    Backends, Checker, CommandChecker, FocusedProver, LanguageModel, ProverBudget, ReplayLlm, ReplayScript,
    SimulatedProver, ToyChecker, WireLlm, WireProver,
};
use nexus_core::rating::GibbsConfig;
use nexus_core::selection::PUCBConfig;
use nexus_core::validate::ValidationConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackend {
    #[default]
    Replay,
    Wire,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckerBackend {
    #[default]
    Toy,
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProverBackend {
    #[default]
    Sim,
    Wire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default)]
    pub backend: LlmBackend,
    pub script: Option<PathBuf>,
    pub url: Option<String>,
    #[serde(default = "default_llm_timeout")]
    pub timeout_secs: u64,
}

fn default_llm_timeout() -> u64 {
    300
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            backend: LlmBackend::Replay,
            script: None,
            url: None,
            timeout_secs: default_llm_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerSection {
    #[serde(default)]
    pub backend: CheckerBackend,
    /// Command template; `{file}` is replaced by the sketch path.
    pub command: Option<String>,
    /// File suffix for the temporary sketch, e.g. `.lean`.
    pub suffix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProverSection {
    #[serde(default)]
    pub backend: ProverBackend,
    pub url: Option<String>,
    #[serde(default = "default_simulations")]
    pub simulations: u32,
    #[serde(default = "default_prover_timeout")]
    pub timeout_ms: u64,
}

fn default_simulations() -> u32 {
    ProverBudget::default().simulations
}

fn default_prover_timeout() -> u64 {
    ProverBudget::default().timeout_ms
}

impl Default for ProverSection {
    fn default() -> Self {
        ProverSection {
            backend: ProverBackend::Sim,
            url: None,
            simulations: default_simulations(),
            timeout_ms: default_prover_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub problem_file: PathBuf,
    pub agent_kind: String,
    pub output_dir: Option<PathBuf>,
    pub budget: Option<u64>,
    pub subagents: Option<usize>,
    pub raters: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub max_matches: Option<usize>,
    pub players_per_match: Option<usize>,
    pub max_turn_tokens: Option<u32>,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub limits: EpisodeLimits,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub checker: CheckerSection,
    #[serde(default)]
    pub prover: ProverSection,
    #[serde(default)]
    pub selection: PUCBConfig,
    #[serde(default)]
    pub rating: GibbsConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

/// A manifest with its files read and its paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub agent_kind: AgentKind,
    pub problem_text: String,
    pub script: Option<ReplayScript>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("{}: cannot read manifest", path.display()))?;
        let manifest = RunManifest::parse(&text)
            .map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.to_string().trim_end()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let field = |name: &str, msg: String| anyhow::anyhow!("{}: {name}: {msg}", path.display());

        let agent_kind: AgentKind = manifest.agent_kind.parse().map_err(|e| field("agent_kind", e))?;
        let problem_path = resolve(base, &manifest.problem_file);
        let problem_text = std::fs::read_to_string(&problem_path)
            .map_err(|e| field("problem_file", format!("{}: {e}", problem_path.display())))?;

        let script = match manifest.llm.backend {
            LlmBackend::Replay => {
                let Some(s) = &manifest.llm.script else {
                    return Err(field("llm.script", "required when llm.backend = \"replay\"".into()));
                };
                Some(ReplayScript::load(&resolve(base, s)).map_err(|e| field("llm.script", e))?)
            }
            LlmBackend::Wire => {
                if manifest.llm.url.is_none() {
                    return Err(field("llm.url", "required when llm.backend = \"wire\"".into()));
                }
                None
            }
        };
        if manifest.checker.backend == CheckerBackend::Command && manifest.checker.command.is_none() {
            return Err(field(
                "checker.command",
                "required when checker.backend = \"command\"".into(),
            ));
        }
        if manifest.prover.backend == ProverBackend::Wire && manifest.prover.url.is_none() {
            return Err(field("prover.url", "required when prover.backend = \"wire\"".into()));
        }

        let mut manifest = manifest;
        manifest.output_dir = manifest.output_dir.map(|d| resolve(base, &d));
        let loaded = LoadedManifest {
            manifest,
            agent_kind,
            problem_text,
            script,
        };
        loaded
            .run_config(false)
            .validate()
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(loaded)
    }

    pub fn run_config(&self, deterministic: bool) -> RunConfig {
        run_config(&self.manifest, self.agent_kind, deterministic)
    }

    /// Replay LLM, simulated prover and a recorded interleaving.
    pub fn replayable(&self, deterministic: bool) -> bool {
        is_replayable(&self.manifest, deterministic)
    }
}

pub fn is_replayable(m: &RunManifest, deterministic: bool) -> bool {
    m.llm.backend == LlmBackend::Replay && m.prover.backend == ProverBackend::Sim && deterministic
}

pub fn run_config(m: &RunManifest, kind: AgentKind, deterministic: bool) -> RunConfig {
    let mut cfg = RunConfig::new(kind);
    if let Some(b) = m.budget {
        cfg.episode_budget = b;
    }
    if let Some(n) = m.subagents {
        cfg.n_subagents = n;
    }
    if let Some(n) = m.raters {
        cfg.n_raters = n;
    }
    if let Some(n) = m.players_per_match {
        cfg.players_per_match = n;
    }
    if let Some(n) = m.max_turn_tokens {
        cfg.max_turn_tokens = n;
    }
    cfg.seed = m.seed;
    cfg.seeds = m.seeds.clone();
    cfg.max_matches = m.max_matches;
    cfg.context = m.context.clone();
    cfg.limits = m.limits;
    cfg.pucb = m.selection.clone();
    cfg.gibbs = m.rating;
    cfg.validation = m.validation.clone();
    cfg.prover_budget = ProverBudget {
        simulations: m.prover.simulations,
        timeout_ms: m.prover.timeout_ms,
    };
    cfg.deterministic = deterministic;
    cfg
}

pub fn build_backends(m: &RunManifest, script: Option<ReplayScript>) -> Result<Backends> {
    let llm: Arc<dyn LanguageModel> = match m.llm.backend {
        LlmBackend::Replay => match script {
            Some(s) => Arc::new(ReplayLlm::new(s)),
            None => bail!("llm.script: no replay script loaded"),
        },
        LlmBackend::Wire => {
            let url = m.llm.url.clone().context("llm.url: missing")?;
            Arc::new(WireLlm::from_env(url, Duration::from_secs(m.llm.timeout_secs)))
        }
    };
    let checker: Arc<dyn Checker> = match m.checker.backend {
        CheckerBackend::Toy => Arc::new(ToyChecker),
        CheckerBackend::Command => {
            let template = m.checker.command.as_deref().context("checker.command: missing")?;
            let mut c = CommandChecker::new(template).map_err(|e| anyhow::anyhow!("checker.command: {e}"))?;
            if let Some(s) = &m.checker.suffix {
                c = c.with_suffix(s.clone());
            }
            Arc::new(c)
        }
    };
    let prover: Arc<dyn FocusedProver> = match m.prover.backend {
        ProverBackend::Sim => Arc::new(SimulatedProver),
        ProverBackend::Wire => Arc::new(WireProver::from_env(
            m.prover.url.clone().context("prover.url: missing")?,
        )),
    };
    Ok(Backends { llm, checker, prover })
}
