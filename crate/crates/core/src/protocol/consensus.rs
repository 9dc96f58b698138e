//! Confidence-weighted consensus over the agents' final-round responses.
//!
//! For every label `j`, the score is the mean over all `n` agents of the
//! agent's confidence in `j` if it predicted `j`, else 0. Agents that failed
//! contribute 0 everywhere but still count in `n`. A label is emitted when
//! its score is strictly greater than the threshold.
//!
//! Confidences are integers in millionths, so the per-label sum and the
//! comparison `sum > threshold * n` are exact and independent of agent order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{AgentResponse, SymptomLabel, CONFIDENCE_SCALE};

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("consensus needs at least one agent")]
    NoAgents,
    #[error("final-round responses span rounds {0} and {1}")]
    MixedRounds(u32, u32),
    #[error("threshold {0} is outside [0, 1)")]
    ThresholdOutOfRange(f64),
}

/// Decision threshold in `[0, 1)`, held in millionths like confidences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Threshold(u32);

impl Threshold {
    pub fn new(value: f64) -> Result<Self, ConsensusError> {
        let micros = (value * CONFIDENCE_SCALE as f64).round();
        if !(0.0..1.0).contains(&value) || micros >= CONFIDENCE_SCALE as f64 {
            return Err(ConsensusError::ThresholdOutOfRange(value));
        }
        Ok(Self(micros as u32))
    }

    pub fn from_micros(micros: u32) -> Option<Self> {
        (micros < CONFIDENCE_SCALE).then_some(Self(micros))
    }

    pub fn micros(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / CONFIDENCE_SCALE as f64
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(CONFIDENCE_SCALE / 2)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Threshold::new(f64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    /// Mean confidence per label, for all seven labels.
    pub scores: BTreeMap<SymptomLabel, f64>,
    pub final_labels: BTreeSet<SymptomLabel>,
}

impl ConsensusResult {
    pub fn score(&self, label: SymptomLabel) -> f64 {
        self.scores.get(&label).copied().unwrap_or(0.0)
    }
}

/// Resolves consensus over one entry per agent: `Some(response)` for an
/// agent that answered, `None` for one that failed. `n` is the number of
/// entries.
pub fn resolve_consensus<'a, I>(final_votes: I, threshold: Threshold) -> Result<ConsensusResult, ConsensusError>
where
    I: IntoIterator<Item = Option<&'a AgentResponse>>,
{
    let mut sums = [0u64; 7];
    let mut n: u64 = 0;
    let mut round: Option<u32> = None;
    for vote in final_votes {
        n += 1;
        let Some(response) = vote else { continue };
        match round {
            Some(r) if r != response.round => return Err(ConsensusError::MixedRounds(r, response.round)),
            _ => round = Some(response.round),
        }
        for (label, confidence) in &response.predictions {
            sums[label.index()] += u64::from(confidence.micros());
        }
    }
    if n == 0 {
        return Err(ConsensusError::NoAgents);
    }
    let bar = u64::from(threshold.micros()) * n;
    let denominator = n as f64 * CONFIDENCE_SCALE as f64;
    let scores = SymptomLabel::ALL
        .into_iter()
        .map(|l| (l, sums[l.index()] as f64 / denominator))
        .collect();
    let final_labels = SymptomLabel::ALL
        .into_iter()
        .filter(|l| sums[l.index()] > bar)
        .collect();
    Ok(ConsensusResult { scores, final_labels })
}
