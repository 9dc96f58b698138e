//! Fixture-backed agents for deterministic runs and tests.
//!
//! A fixture file holds JSON lines `{sample_id, agent_id, round, reply_text}`.
//! Several records with the same key form a sequence: the first request of
//! a round gets the first record, each format re-prompt the next one, and
//! the last record repeats once the sequence runs out.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_history, AgentError, CallContext, ChatAgent, ChatTurn, RawReply};
use crate::domain::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub sample_id: String,
    pub agent_id: AgentId,
    pub round: u32,
    pub reply_text: String,
}

type FixtureKey = (String, AgentId, u32);

#[derive(Debug, Clone, Default)]
pub struct Fixtures {
    replies: HashMap<FixtureKey, Vec<String>>,
    digest: String,
}

impl Fixtures {
    pub fn from_records(records: impl IntoIterator<Item = FixtureRecord>) -> Self {
        let mut hasher = Sha256::new();
        let mut replies: HashMap<FixtureKey, Vec<String>> = HashMap::new();
        for r in records {
            hasher.update(serde_json::to_vec(&r).expect("record serializes"));
            replies
                .entry((r.sample_id, r.agent_id, r.round))
                .or_default()
                .push(r.reply_text);
        }
        Self {
            replies,
            digest: hex::encode(hasher.finalize()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let fail = |message: String| AgentError::Fixtures {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str::<FixtureRecord>(l).map_err(|e| fail(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_records(records))
    }

    pub fn get(&self, sample_id: &str, agent_id: &AgentId, round: u32) -> Option<&[String]> {
        self.replies
            .get(&(sample_id.to_string(), agent_id.clone(), round))
            .map(Vec::as_slice)
    }

    /// Content hash over all records, in file order.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

pub struct ScriptedAgent {
    id: AgentId,
    fixtures: Fixtures,
}

impl ScriptedAgent {
    pub fn new(id: AgentId, fixtures: Fixtures) -> Self {
        Self { id, fixtures }
    }
}

impl ChatAgent for ScriptedAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn fingerprint(&self) -> String {
        format!("scripted:{}:{}", self.id, self.fixtures.digest())
    }

    fn invoke(&self, ctx: &CallContext, history: &[ChatTurn], new_turn: &ChatTurn) -> Result<RawReply, AgentError> {
        check_history(history, new_turn)?;
        let started = Instant::now();
        let replies = self
            .fixtures
            .get(&ctx.sample_id, &self.id, ctx.round)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| AgentError::MissingFixture {
                sample_id: ctx.sample_id.clone(),
                agent_id: self.id.clone(),
                round: ctx.round,
            })?;
        let index = (ctx.reparse as usize).min(replies.len() - 1);
        Ok(RawReply {
            agent_id: self.id.clone(),
            text: replies[index].clone(),
            latency: started.elapsed(),
            attempts: 1,
        })
    }
}
