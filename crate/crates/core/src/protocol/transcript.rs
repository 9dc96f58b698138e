//! Persisted per-sample debate records and the predictions export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::consensus::{resolve_consensus, ConsensusError, ConsensusResult, Threshold};
use crate::agents::ChatTurn;
use crate::domain::{AgentId, AgentResponse, Aspect, SymptomLabel};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("transcript for `{sample_id}` has {found} response slots, expected {expected}")]
    Incomplete {
        sample_id: String,
        found: usize,
        expected: usize,
    },
    #[error("stored final labels {stored:?} do not match recomputed consensus {recomputed:?} for `{sample_id}`")]
    Inconsistent {
        sample_id: String,
        stored: Vec<SymptomLabel>,
        recomputed: Vec<SymptomLabel>,
    },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// What happened for one agent in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgentOutcome {
    Ok { response: AgentResponse },
    Failed { reason: String },
}

impl AgentOutcome {
    pub fn response(&self) -> Option<&AgentResponse> {
        match self {
            Self::Ok { response } => Some(response),
            Self::Failed { .. } => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Self::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub outcome: AgentOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub invocations: u32,
    #[serde(default)]
    pub reminders: u32,
}

/// One agent's whole conversation and its per-round outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: AgentId,
    pub aspect: Aspect,
    pub turns: Vec<ChatTurn>,
    pub rounds: Vec<RoundRecord>,
}

impl AgentTrack {
    pub fn outcome(&self, round: u32) -> Option<&AgentOutcome> {
        self.rounds.iter().find(|r| r.round == round).map(|r| &r.outcome)
    }
}

/// Cache keys: `responses` covers everything that shapes agent replies,
/// `consensus` additionally covers the threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub responses: String,
    pub consensus: String,
}

impl Fingerprint {
    pub fn new(responses: String, threshold: Threshold) -> Self {
        let consensus = hex::encode(Sha256::digest(format!("{responses}:{}", threshold.micros())));
        Self { responses, consensus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Number of agents, failed ones included.
    pub agents: usize,
    /// Discussion rounds; rounds `0..=rounds` are recorded.
    pub rounds: u32,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTranscript {
    pub sample_id: String,
    pub fingerprint: Fingerprint,
    pub params: ProtocolParams,
    /// Ordered by agent id.
    pub agents: Vec<AgentTrack>,
    pub consensus: ConsensusResult,
}

impl DebateTranscript {
    pub fn final_round(&self) -> u32 {
        self.params.rounds
    }

    /// All recorded response slots, failures included.
    pub fn slot_count(&self) -> usize {
        self.agents.iter().map(|a| a.rounds.len()).sum()
    }

    pub fn responses(&self) -> impl Iterator<Item = &AgentResponse> {
        self.agents
            .iter()
            .flat_map(|a| a.rounds.iter().filter_map(|r| r.outcome.response()))
    }

    pub fn failure_count(&self) -> usize {
        self.agents
            .iter()
            .flat_map(|a| &a.rounds)
            .filter(|r| r.outcome.is_failure())
            .count()
    }

    pub fn recompute_consensus(&self, threshold: Threshold) -> Result<ConsensusResult, TranscriptError> {
        let round = self.final_round();
        let votes = self
            .agents
            .iter()
            .map(|a| a.outcome(round).and_then(AgentOutcome::response));
        Ok(resolve_consensus(votes, threshold)?)
    }

    /// Checks that every agent has exactly one slot per round `0..=R`.
    pub fn verify_slots(&self) -> Result<(), TranscriptError> {
        let expected = self.params.agents * (self.params.rounds as usize + 1);
        let complete = self.agents.len() == self.params.agents
            && self.agents.iter().all(|a| {
                a.rounds.len() == self.params.rounds as usize + 1
                    && a.rounds.iter().enumerate().all(|(i, r)| r.round as usize == i)
            });
        if !complete {
            return Err(TranscriptError::Incomplete {
                sample_id: self.sample_id.clone(),
                found: self.slot_count(),
                expected,
            });
        }
        Ok(())
    }

    /// Checks slot completeness and that the stored consensus follows from
    /// the stored final-round responses.
    pub fn verify(&self) -> Result<(), TranscriptError> {
        self.verify_slots()?;
        let recomputed = self.recompute_consensus(self.params.threshold)?;
        if recomputed.final_labels != self.consensus.final_labels || recomputed.scores != self.consensus.scores {
            return Err(TranscriptError::Inconsistent {
                sample_id: self.sample_id.clone(),
                stored: self.consensus.final_labels.iter().copied().collect(),
                recomputed: recomputed.final_labels.into_iter().collect(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("transcript serializes");
        text.push('\n');
        text
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let read_err = |message: String| TranscriptError::Read {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))
    }

    pub fn prediction(&self) -> PredictionRecord {
        PredictionRecord {
            sample_id: self.sample_id.clone(),
            labels: self.consensus.final_labels.clone(),
            scores: self.consensus.scores.clone(),
        }
    }
}

/// One line of the predictions export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub labels: BTreeSet<SymptomLabel>,
    #[serde(default)]
    pub scores: BTreeMap<SymptomLabel, f64>,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), TranscriptError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| TranscriptError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a predictions export; a repeated sample id is an error.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, TranscriptError> {
    let read_err = |message: String| TranscriptError::Read {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(line).map_err(|e| read_err(format!("line {}: {e}", i + 1)))?;
        if !seen.insert(record.sample_id.clone()) {
            return Err(read_err(format!("line {}: duplicate sample id `{}`", i + 1, record.sample_id)));
        }
        out.push(record);
    }
    Ok(out)
}

/// Directory of transcripts, one file per sample, plus an append-only run index.
#[derive(Debug)]
pub struct TranscriptStore {
    dir: PathBuf,
    index: Mutex<()>,
}

impl TranscriptStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            index: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// File name for a sample id. Ids that are not filename-safe are
    /// sanitized and suffixed with a short hash so distinct ids never collide.
    pub fn path_for(&self, sample_id: &str) -> PathBuf {
        let safe: String = sample_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect();
        let name = if safe == sample_id && !safe.starts_with('.') {
            safe
        } else {
            let digest = hex::encode(Sha256::digest(sample_id.as_bytes()));
            format!("{}-{}", safe.trim_start_matches('.'), &digest[..12])
        };
        self.dir.join(format!("{name}.json"))
    }

    /// Returns the stored transcript, or `None` if absent or unreadable.
    pub fn load(&self, sample_id: &str) -> Option<DebateTranscript> {
        let path = self.path_for(sample_id);
        if !path.exists() {
            return None;
        }
        match DebateTranscript::load(&path) {
            Ok(t) if t.sample_id == sample_id => Some(t),
            Ok(_) => None,
            Err(e) => {
                tracing::warn!("ignoring cached transcript: {e}");
                None
            }
        }
    }

    /// Writes via a temporary file and rename so readers never see partial files.
    pub fn save(&self, transcript: &DebateTranscript) -> Result<PathBuf, TranscriptError> {
        let path = self.path_for(&transcript.sample_id);
        let write_err = |source| TranscriptError::Write {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.dir).map_err(write_err)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, transcript.to_json()).map_err(write_err)?;
        fs::rename(&tmp, &path).map_err(write_err)?;
        Ok(path)
    }

    /// Appends one JSON line to `index.jsonl`; calls are serialized.
    pub fn append_index(&self, entry: &serde_json::Value) -> Result<(), TranscriptError> {
        let _guard = self.index.lock().expect("index lock poisoned");
        let path = self.dir.join("index.jsonl");
        let write_err = |source| TranscriptError::Write {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.dir).map_err(write_err)?;
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(write_err)?;
        writeln!(file, "{entry}").map_err(write_err)
    }
}
