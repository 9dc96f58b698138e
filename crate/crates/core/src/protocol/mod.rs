//! The debate protocol: configuration, round execution, consensus and
//! transcript persistence.

pub mod config;
pub mod consensus;
pub mod engine;
pub mod transcript;

pub use config::{AspectMode, ConfigError, ProtocolConfig, RunConfig};
pub use consensus::{resolve_consensus, ConsensusError, ConsensusResult, Threshold};
pub use engine::{DebateState, Engine, ProtocolError, RunReport, RunSummary, SampleOutcome, TranscriptSource};
pub use transcript::{
    read_predictions, write_predictions, AgentOutcome, AgentTrack, DebateTranscript, Fingerprint, PredictionRecord,
    ProtocolParams, RoundRecord, TranscriptError, TranscriptStore,
};
