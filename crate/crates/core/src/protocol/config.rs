//! Run configuration, read from a TOML document.
//!
//! ```toml
//! rounds = 2
//! threshold = 0.5
//! max_reparse = 2
//! workers = 4
//! aspect_mode = "per_agent"      # or "vanilla" / "combined"
//! # cache_dir = "cache"          # defaults to <out>/transcripts
//! # templates_dir = "templates"  # defaults to the bundled templates
//! # definitions = "templates/definitions.json"
//!
//! [[agents]]
//! id = "A1"
//! aspect = "depression"
//! backend = "scripted"
//! fixtures = "fixtures.jsonl"
//!
//! [[agents]]
//! id = "gpt"
//! aspect = "emotional"
//! backend = "remote"
//! base_url = "https://api.example.com/v1"
//! model = "some-model"
//! api_key_env = "EXAMPLE_API_KEY"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::consensus::Threshold;
use crate::domain::{AgentSpec, Aspect, BackendSpec};
use crate::prompts::{Definitions, PromptError, PromptSet, PromptTemplates};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("at least 2 agents are required, found {0}")]
    TooFewAgents(usize),
    #[error("agent id `{0}` is used more than once")]
    DuplicateAgent(String),
    #[error("with three agents in per-agent mode, the aspects must be depression, emotional and cultural once each; found {0}")]
    AspectAssignment(String),
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Prompts(#[from] PromptError),
}

/// How system prompts are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AspectMode {
    /// Each agent uses its configured aspect.
    #[default]
    PerAgent,
    /// Every agent gets the vanilla prompt (ablation without aspect knowledge).
    Vanilla,
    /// Every agent gets the combined depression + cultural + emotional prompt.
    Combined,
}

fn default_rounds() -> u32 {
    2
}

fn default_max_reparse() -> u32 {
    2
}

fn default_workers() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub agents: Vec<AgentSpec>,
    /// Discussion rounds after independent ideation.
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default = "default_max_reparse")]
    pub max_reparse: u32,
    /// Samples processed concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Invoke the agents of one round concurrently.
    #[serde(default = "default_true")]
    pub parallel_agents: bool,
    #[serde(default)]
    pub aspect_mode: AspectMode,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ProtocolConfig {
    pub fn new(agents: Vec<AgentSpec>) -> Self {
        Self {
            agents,
            rounds: default_rounds(),
            threshold: Threshold::default(),
            max_reparse: default_max_reparse(),
            workers: default_workers(),
            parallel_agents: true,
            aspect_mode: AspectMode::default(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.agents.len() < 2 {
            return Err(ConfigError::TooFewAgents(self.agents.len()));
        }
        let mut ids = BTreeSet::new();
        for agent in &self.agents {
            if !ids.insert(&agent.id) {
                return Err(ConfigError::DuplicateAgent(agent.id.to_string()));
            }
        }
        if self.workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if self.aspect_mode == AspectMode::PerAgent && self.agents.len() == 3 {
            let aspects: Vec<Aspect> = self.agents.iter().map(|a| a.aspect).collect();
            let set: BTreeSet<Aspect> = aspects.iter().copied().collect();
            if set != BTreeSet::from([Aspect::Depression, Aspect::Emotional, Aspect::Cultural]) {
                let found = aspects.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ");
                return Err(ConfigError::AspectAssignment(found));
            }
        }
        Ok(())
    }

    /// The aspect whose system prompt `agent` receives under the aspect mode.
    pub fn effective_aspect(&self, agent: &AgentSpec) -> Aspect {
        match self.aspect_mode {
            AspectMode::PerAgent => agent.aspect,
            AspectMode::Vanilla => Aspect::Vanilla,
            AspectMode::Combined => Aspect::Combined,
        }
    }

    pub fn has_remote_agents(&self) -> bool {
        self.agents
            .iter()
            .any(|a| matches!(a.backend, BackendSpec::Remote(_)))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    agents: Vec<AgentSpec>,
    #[serde(default = "default_rounds")]
    rounds: u32,
    #[serde(default)]
    threshold: Threshold,
    #[serde(default = "default_max_reparse")]
    max_reparse: u32,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default = "default_true")]
    parallel_agents: bool,
    #[serde(default)]
    aspect_mode: AspectMode,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    templates_dir: Option<PathBuf>,
    #[serde(default)]
    definitions: Option<PathBuf>,
}

/// A parsed config file: protocol settings, prompts, and the directory
/// relative paths were resolved against.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub protocol: ProtocolConfig,
    pub prompts: PromptSet,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base_dir).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        let protocol = ProtocolConfig {
            agents: file.agents,
            rounds: file.rounds,
            threshold: file.threshold,
            max_reparse: file.max_reparse,
            workers: file.workers,
            parallel_agents: file.parallel_agents,
            aspect_mode: file.aspect_mode,
            cache_dir: file.cache_dir.map(|d| base_dir.join(d)),
        };
        protocol.validate()?;

        let templates = match &file.templates_dir {
            Some(dir) => PromptTemplates::load_dir(&base_dir.join(dir))?,
            None => PromptTemplates::builtin(),
        };
        let mut prompts = PromptSet::builtin();
        prompts.templates = templates;
        if let Some(defs) = &file.definitions {
            prompts.definitions = Definitions::load(&base_dir.join(defs))?;
        } else if let Some(dir) = &file.templates_dir {
            let candidate = base_dir.join(dir).join("definitions.json");
            if candidate.exists() {
                prompts.definitions = Definitions::load(&candidate)?;
            }
        }
        Ok(Self {
            protocol,
            prompts,
            base_dir: base_dir.to_path_buf(),
        })
    }
}
