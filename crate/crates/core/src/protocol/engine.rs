use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{ConfigError, ProtocolConfig, RunConfig};
use super::consensus::{resolve_consensus, ConsensusError, Threshold};
use super::transcript::{
    AgentOutcome, AgentTrack, DebateTranscript, Fingerprint, ProtocolParams, RoundRecord, TranscriptError,
    TranscriptStore,
};
use crate::agents::{build_agent, invoke_and_parse, AgentError, CallContext, ChatAgent, ChatTurn, Exchange};
use crate::corpus::Manifest;
use crate::domain::{AgentId, AgentResponse, AgentSpec, Aspect, MemeSample};
use crate::prompts::{PromptError, PromptSet};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("agent `{agent}`: {source}")]
    Agent { agent: AgentId, source: AgentError },
    #[error("no backend supplied for agent `{0}`")]
    MissingBackend(AgentId),
    #[error("agent `{agent}` has no outcome for round {round}")]
    MissingRound { agent: AgentId, round: u32 },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

struct EngineAgent {
    spec: AgentSpec,
    aspect: Aspect,
    system_prompt: String,
    backend: Arc<dyn ChatAgent>,
}

/// Per-sample debate state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DebateState {
    pub sample_id: String,
    /// One track per agent, ordered by agent id.
    pub tracks: Vec<AgentTrack>,
}

impl DebateState {
    /// Every agent's outcome for `round`, in agent order.
    pub fn outcomes(&self, round: u32) -> Result<Vec<(&AgentId, &AgentOutcome)>, ProtocolError> {
        self.tracks
            .iter()
            .map(|t| {
                t.outcome(round)
                    .map(|o| (&t.agent_id, o))
                    .ok_or_else(|| ProtocolError::MissingRound {
                        agent: t.agent_id.clone(),
                        round,
                    })
            })
            .collect()
    }
}

/// Where a finished transcript came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    Fresh,
    Cached,
    /// Responses reused from cache, consensus recomputed for a new threshold.
    ConsensusRecomputed,
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub result: Result<(DebateTranscript, TranscriptSource), String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub agent_invocations: u64,
    /// Samples served from cache, including those whose consensus was recomputed.
    pub cache_hits: usize,
    pub consensus_recomputed: usize,
    /// Agent-round slots recorded as failures across successful samples.
    pub agent_failures: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// In manifest order.
    pub outcomes: Vec<SampleOutcome>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn transcripts(&self) -> impl Iterator<Item = &DebateTranscript> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|(t, _)| t))
    }
}

/// Runs independent ideation, discussion rounds and consensus resolution.
pub struct Engine {
    config: ProtocolConfig,
    prompts: PromptSet,
    agents: Vec<EngineAgent>,
    invocations: AtomicU64,
}

impl Engine {
    /// `backends` must contain exactly one backend per configured agent.
    pub fn new(config: ProtocolConfig, prompts: PromptSet, backends: Vec<Arc<dyn ChatAgent>>) -> Result<Self, ProtocolError> {
        config.validate()?;
        let mut agents = Vec::with_capacity(config.agents.len());
        for spec in &config.agents {
            let backend = backends
                .iter()
                .find(|b| b.id() == &spec.id)
                .cloned()
                .ok_or_else(|| ProtocolError::MissingBackend(spec.id.clone()))?;
            let aspect = config.effective_aspect(spec);
            let system_prompt = prompts.render_aspect_prompt(aspect)?.text;
            agents.push(EngineAgent {
                spec: spec.clone(),
                aspect,
                system_prompt,
                backend,
            });
        }
        agents.sort_by(|a, b| a.spec.id.cmp(&b.spec.id));
        Ok(Self {
            config,
            prompts,
            agents,
            invocations: AtomicU64::new(0),
        })
    }

    /// Builds every backend named in the config.
    pub fn from_run_config(run: &RunConfig) -> Result<Self, ProtocolError> {
        let backends = run
            .protocol
            .agents
            .iter()
            .map(|spec| {
                build_agent(spec, &run.base_dir).map_err(|source| ProtocolError::Agent {
                    agent: spec.id.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(run.protocol.clone(), run.prompts.clone(), backends)
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.spec.id.clone()).collect()
    }

    /// Backend calls made by this engine so far.
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    /// The system prompt each agent receives, in agent order.
    pub fn system_prompts(&self) -> Vec<(&AgentId, &str)> {
        self.agents
            .iter()
            .map(|a| (&a.spec.id, a.system_prompt.as_str()))
            .collect()
    }

    pub fn fingerprint(&self, sample: &MemeSample) -> Fingerprint {
        let digest = |s: &str| hex::encode(Sha256::digest(s.as_bytes()));
        let t = &self.prompts.templates;
        let payload = json!({
            "format": 1,
            "sample": sample,
            "rounds": self.config.rounds,
            "max_reparse": self.config.max_reparse,
            "agents": self.agents.iter().map(|a| json!({
                "id": a.spec.id,
                "aspect": a.aspect,
                "system_prompt": digest(&a.system_prompt),
                "backend": a.backend.fingerprint(),
            })).collect::<Vec<_>>(),
            "prompts": digest(&[&t.user, &t.format_contract, &t.discussion, &t.reminder].map(String::as_str).join("\0")),
        });
        Fingerprint::new(digest(&payload.to_string()), self.config.threshold)
    }

    fn exchange_all<F>(&self, f: F) -> Vec<Exchange>
    where
        F: Fn(usize, &EngineAgent) -> Exchange + Sync,
    {
        let exchanges: Vec<Exchange> = if self.config.parallel_agents {
            thread::scope(|s| {
                let handles: Vec<_> = self
                    .agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let f = &f;
                        s.spawn(move || f(i, a))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("agent thread panicked"))
                    .collect()
            })
        } else {
            self.agents.iter().enumerate().map(|(i, a)| f(i, a)).collect()
        };
        let calls: u64 = exchanges.iter().map(|e| u64::from(e.invocations)).sum();
        self.invocations.fetch_add(calls, Ordering::SeqCst);
        exchanges
    }

    fn context(&self, sample: &MemeSample, round: u32, image_root: &Path) -> CallContext {
        CallContext {
            image_root: image_root.to_path_buf(),
            ..CallContext::new(sample.id.clone(), round)
        }
    }

    fn record(track: &mut AgentTrack, round: u32, exchange: Exchange) {
        track.turns.extend(exchange.turns);
        let outcome = match exchange.outcome {
            Ok(response) => AgentOutcome::Ok { response },
            Err(failure) => AgentOutcome::Failed { reason: failure.reason },
        };
        track.rounds.push(RoundRecord {
            round,
            outcome,
            warnings: exchange.warnings,
            invocations: exchange.invocations,
            reminders: exchange.reminders,
        });
    }

    /// Round 0: every agent sees its aspect system prompt, the image and the
    /// user prompt, and nothing from its peers.
    pub fn run_independent_ideation(&self, sample: &MemeSample, image_root: &Path) -> DebateState {
        let user_prompt = self.prompts.render_user_prompt(sample, true);
        let reminder = self.prompts.render_reminder();
        let ctx = self.context(sample, 0, image_root);
        let exchanges = self.exchange_all(|_, agent| {
            let history = [ChatTurn::system(agent.system_prompt.clone())];
            let turn = ChatTurn::user_with_image(user_prompt.clone(), sample.image.clone());
            invoke_and_parse(
                agent.backend.as_ref(),
                &ctx,
                &history,
                turn,
                self.config.max_reparse,
                &reminder,
            )
        });
        let tracks = self
            .agents
            .iter()
            .zip(exchanges)
            .map(|(agent, exchange)| {
                let mut track = AgentTrack {
                    agent_id: agent.spec.id.clone(),
                    aspect: agent.aspect,
                    turns: vec![ChatTurn::system(agent.system_prompt.clone())],
                    rounds: Vec::new(),
                };
                Self::record(&mut track, 0, exchange);
                track
            })
            .collect();
        DebateState {
            sample_id: sample.id.clone(),
            tracks,
        }
    }

    /// Discussion round `round` (at least 1): each agent receives its peers'
    /// round `round - 1` responses on top of its own conversation so far.
    /// Failed peers appear as blocks with no predictions.
    pub fn run_discussion_round(
        &self,
        sample: &MemeSample,
        round: u32,
        state: &mut DebateState,
        image_root: &Path,
    ) -> Result<(), ProtocolError> {
        let prior: Vec<AgentResponse> = state
            .outcomes(round.saturating_sub(1))?
            .into_iter()
            .map(|(id, outcome)| {
                outcome
                    .response()
                    .cloned()
                    .unwrap_or_else(|| AgentResponse::empty(id.clone(), round - 1))
            })
            .collect();
        let prompts = self
            .agents
            .iter()
            .map(|agent| {
                let peers: Vec<&AgentResponse> = prior.iter().filter(|r| r.agent_id != agent.spec.id).collect();
                self.prompts.render_discussion_prompt(&agent.spec.id, round, &peers)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let reminder = self.prompts.render_reminder();
        let ctx = self.context(sample, round, image_root);
        let histories: Vec<&[ChatTurn]> = state.tracks.iter().map(|t| t.turns.as_slice()).collect();
        let exchanges = self.exchange_all(|i, agent| {
            invoke_and_parse(
                agent.backend.as_ref(),
                &ctx,
                histories[i],
                ChatTurn::user(prompts[i].text.clone()),
                self.config.max_reparse,
                &reminder,
            )
        });
        for (track, exchange) in state.tracks.iter_mut().zip(exchanges) {
            Self::record(track, round, exchange);
        }
        Ok(())
    }

    /// Runs all `R + 1` rounds for one sample and resolves consensus over
    /// the final round. The transcript is returned, not persisted.
    pub fn run_sample(&self, sample: &MemeSample, image_root: &Path) -> Result<DebateTranscript, ProtocolError> {
        let mut state = self.run_independent_ideation(sample, image_root);
        for round in 1..=self.config.rounds {
            self.run_discussion_round(sample, round, &mut state, image_root)?;
        }
        let final_round = self.config.rounds;
        let votes = state
            .outcomes(final_round)?
            .into_iter()
            .map(|(_, o)| o.response())
            .collect::<Vec<_>>();
        let consensus = resolve_consensus(votes, self.config.threshold)?;
        Ok(DebateTranscript {
            sample_id: sample.id.clone(),
            fingerprint: self.fingerprint(sample),
            params: ProtocolParams {
                agents: self.agents.len(),
                rounds: self.config.rounds,
                threshold: self.config.threshold,
            },
            agents: state.tracks,
            consensus,
        })
    }

    fn cached_transcript(&self, sample: &MemeSample, store: &TranscriptStore) -> Option<(DebateTranscript, TranscriptSource)> {
        let fingerprint = self.fingerprint(sample);
        let mut cached = store.load(&sample.id)?;
        if cached.fingerprint.responses != fingerprint.responses || cached.verify_slots().is_err() {
            return None;
        }
        if cached.fingerprint.consensus == fingerprint.consensus && cached.verify().is_ok() {
            return Some((cached, TranscriptSource::Cached));
        }
        cached.consensus = cached.recompute_consensus(self.config.threshold).ok()?;
        cached.params.threshold = self.config.threshold;
        cached.fingerprint = fingerprint;
        Some((cached, TranscriptSource::ConsensusRecomputed))
    }

    fn process_sample(&self, sample: &MemeSample, image_root: &Path, store: &TranscriptStore, resume: bool) -> SampleOutcome {
        let run = || -> Result<(DebateTranscript, TranscriptSource), ProtocolError> {
            let cached = if resume { self.cached_transcript(sample, store) } else { None };
            let (transcript, source) = match cached {
                Some((t, TranscriptSource::Cached)) => return Ok((t, TranscriptSource::Cached)),
                Some(hit) => hit,
                None => (self.run_sample(sample, image_root)?, TranscriptSource::Fresh),
            };
            store.save(&transcript)?;
            Ok((transcript, source))
        };
        let result = run().map_err(|e| e.to_string());
        let entry = match &result {
            Ok((t, source)) => json!({
                "sample_id": sample.id,
                "status": "ok",
                "source": source,
                "final_labels": t.consensus.final_labels,
                "agent_failures": t.failure_count(),
            }),
            Err(message) => json!({"sample_id": sample.id, "status": "error", "error": message}),
        };
        if let Err(e) = store.append_index(&entry) {
            tracing::warn!("cannot append to run index: {e}");
        }
        if let Err(message) = &result {
            tracing::error!(sample = %sample.id, "sample failed: {message}");
        }
        SampleOutcome {
            sample_id: sample.id.clone(),
            result,
        }
    }

    /// Runs every sample of `manifest`, persisting transcripts in `store`.
    ///
    /// With `resume`, a stored transcript whose response fingerprint matches
    /// is reused without calling any agent; if only the threshold changed,
    /// its consensus is recomputed from the stored responses.
    pub fn run_manifest(&self, manifest: &Manifest, store: &TranscriptStore, resume: bool) -> RunReport {
        let started = Instant::now();
        let before = self.invocations();
        let image_root = manifest.base_dir();
        let process = |s: &MemeSample| self.process_sample(s, &image_root, store, resume);
        let outcomes: Vec<SampleOutcome> = match rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
        {
            Ok(pool) => pool.install(|| manifest.samples.par_iter().map(process).collect()),
            Err(e) => {
                tracing::warn!("falling back to sequential run: {e}");
                manifest.samples.iter().map(process).collect()
            }
        };

        let mut summary = RunSummary {
            attempted: outcomes.len(),
            agent_invocations: self.invocations() - before,
            ..RunSummary::default()
        };
        for outcome in &outcomes {
            match &outcome.result {
                Ok((transcript, source)) => {
                    summary.succeeded += 1;
                    summary.agent_failures += transcript.failure_count();
                    match source {
                        TranscriptSource::Fresh => {}
                        TranscriptSource::Cached => summary.cache_hits += 1,
                        TranscriptSource::ConsensusRecomputed => {
                            summary.cache_hits += 1;
                            summary.consensus_recomputed += 1;
                        }
                    }
                }
                Err(_) => summary.failed += 1,
            }
        }
        summary.wall_time_secs = started.elapsed().as_secs_f64();
        RunReport { outcomes, summary }
    }

    pub fn threshold(&self) -> Threshold {
        self.config.threshold
    }
}
