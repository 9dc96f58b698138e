//! Multi-agent, multi-aspect debate engine for multi-label depressive
//! symptom classification of memes, with evaluation and agreement tooling.

pub mod agents;
pub mod agreement;
pub mod corpus;
pub mod domain;
pub mod metrics;
pub mod prompts;
pub mod protocol;
