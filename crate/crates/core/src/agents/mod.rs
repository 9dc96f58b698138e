//! Uniform agent abstraction over scripted fixtures and remote chat services.
//!
//! Backends implement [`ChatAgent::invoke`], which sends a conversation and
//! returns the raw reply text. [`invoke_and_parse`] layers reply parsing
//! and format re-prompting on top and never surfaces an error: a reply
//! that cannot be used becomes an [`AgentFailure`] value.

mod parse;
mod remote;
mod scripted;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgentId, AgentResponse, AgentSpec, BackendSpec};

pub use parse::{parse_reply, ParseError, ParsedReply};
pub use remote::{chat_request_body, extract_reply_text, RemoteAgent};
pub use scripted::{FixtureRecord, Fixtures, ScriptedAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

/// One message in an agent's conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
    /// Image path relative to [`CallContext::image_root`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
            image: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
            image: None,
        }
    }

    pub fn user_with_image(content: impl Into<String>, image: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
            image: Some(image.into()),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
            image: None,
        }
    }
}

/// Checks that a system turn, if any, is the single first turn.
pub fn check_history(history: &[ChatTurn], new_turn: &ChatTurn) -> Result<(), AgentError> {
    let misplaced = history
        .iter()
        .chain(std::iter::once(new_turn))
        .enumerate()
        .any(|(i, t)| t.role == ChatRole::System && i > 0);
    if misplaced {
        return Err(AgentError::History(
            "a system turn may only appear first".to_string(),
        ));
    }
    Ok(())
}

/// Verbatim reply from a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub agent_id: AgentId,
    pub text: String,
    pub latency: Duration,
    /// Transport attempts spent on this reply (at least 1).
    pub attempts: u32,
}

/// Identifies the call being made; scripted backends key their fixtures on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub sample_id: String,
    pub round: u32,
    /// 0 for the first request of a round, then 1, 2, ... for each format re-prompt.
    pub reparse: u32,
    /// Directory that image paths in turns are relative to.
    pub image_root: PathBuf,
}

impl CallContext {
    pub fn new(sample_id: impl Into<String>, round: u32) -> Self {
        Self {
            sample_id: sample_id.into(),
            round,
            reparse: 0,
            image_root: PathBuf::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no fixture for sample `{sample_id}`, agent `{agent_id}`, round {round}")]
    MissingFixture {
        sample_id: String,
        agent_id: AgentId,
        round: u32,
    },
    #[error("fixture file {path}: {message}")]
    Fixtures { path: PathBuf, message: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service returned HTTP {status} after {attempts} attempt(s): {body}")]
    Service {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("unreadable service response: {0}")]
    MalformedResponse(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingCredential(String),
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed history: {0}")]
    History(String),
}

/// A backend that can answer a conversation.
///
/// Implementations must be callable from several threads at once and must
/// not retain state between calls beyond read-only configuration.
pub trait ChatAgent: Send + Sync {
    fn id(&self) -> &AgentId;

    /// Stable description of everything that determines this backend's
    /// replies; used to key cached transcripts.
    fn fingerprint(&self) -> String;

    fn invoke(&self, ctx: &CallContext, history: &[ChatTurn], new_turn: &ChatTurn) -> Result<RawReply, AgentError>;
}

/// Builds the backend described by `spec`. Relative fixture paths are
/// resolved against `base_dir`.
pub fn build_agent(spec: &AgentSpec, base_dir: &Path) -> Result<Arc<dyn ChatAgent>, AgentError> {
    Ok(match &spec.backend {
        BackendSpec::Scripted { fixtures } => {
            let path = base_dir.join(fixtures);
            Arc::new(ScriptedAgent::new(spec.id.clone(), Fixtures::load(&path)?))
        }
        BackendSpec::Remote(settings) => Arc::new(RemoteAgent::new(spec.id.clone(), settings.clone())?),
    })
}

/// An agent that produced nothing usable for a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub reason: String,
}

/// Everything that happened while obtaining one round's response from one agent.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub outcome: Result<AgentResponse, AgentFailure>,
    /// Turns to append to the agent's history, starting with the new turn.
    pub turns: Vec<ChatTurn>,
    pub warnings: Vec<String>,
    /// Backend calls made.
    pub invocations: u32,
    /// Format-reminder turns sent.
    pub reminders: u32,
}

/// Invokes `agent` and parses its reply, re-prompting with `reminder` up to
/// `max_reparse` times when the reply has no readable structured block.
pub fn invoke_and_parse(
    agent: &dyn ChatAgent,
    ctx: &CallContext,
    history: &[ChatTurn],
    new_turn: ChatTurn,
    max_reparse: u32,
    reminder: &str,
) -> Exchange {
    let mut exchange = Exchange {
        outcome: Err(AgentFailure {
            reason: String::new(),
        }),
        turns: Vec::new(),
        warnings: Vec::new(),
        invocations: 0,
        reminders: 0,
    };
    if let Err(e) = check_history(history, &new_turn) {
        exchange.outcome = Err(AgentFailure { reason: e.to_string() });
        return exchange;
    }

    let mut context: Vec<ChatTurn> = history.to_vec();
    let mut turn = new_turn;
    let mut ctx = ctx.clone();
    for attempt in 0..=max_reparse {
        ctx.reparse = attempt;
        exchange.invocations += 1;
        let reply = agent.invoke(&ctx, &context, &turn);
        exchange.turns.push(turn.clone());
        let reply = match reply {
            Ok(reply) => reply,
            Err(e) => {
                tracing::warn!(agent = %agent.id(), sample = %ctx.sample_id, round = ctx.round, "agent call failed: {e}");
                exchange.outcome = Err(AgentFailure { reason: e.to_string() });
                return exchange;
            }
        };
        let assistant = ChatTurn::assistant(reply.text.clone());
        exchange.turns.push(assistant.clone());
        match parse_reply(&reply, ctx.round) {
            Ok(parsed) => {
                exchange.warnings.extend(parsed.warnings);
                exchange.outcome = Ok(parsed.response);
                return exchange;
            }
            Err(e) => {
                exchange.warnings.push(format!("attempt {}: {e}", attempt + 1));
                context.push(turn);
                context.push(assistant);
                turn = ChatTurn::user(reminder);
                if attempt < max_reparse {
                    exchange.reminders += 1;
                }
            }
        }
    }
    exchange.outcome = Err(AgentFailure {
        reason: format!("no parseable reply after {} attempt(s)", max_reparse + 1),
    });
    exchange
}
