//! Prompt assembly.
//!
//! Template texts live in plain files (see `templates/` in this crate) with
//! `{{name}}` placeholders; this module fixes only the structure around
//! them. All rendering is pure: identical inputs give byte-identical text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgentId, AgentResponse, Aspect, MemeSample, SymptomLabel};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no definition for symptom {} ({})", .0.code(), .0.name())]
    MissingDefinition(SymptomLabel),
    #[error("definitions file {path}: {message}")]
    Definitions { path: PathBuf, message: String },
    #[error("cannot read template {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("template `{template}` must contain the placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("discussion prompt for {agent} includes that agent's own response")]
    SelfInPeers { agent: AgentId },
    #[error("peer {peer} appears more than once in the discussion prompt for {agent}")]
    DuplicatePeer { agent: AgentId, peer: AgentId },
    #[error("peer {peer} response is from round {found}, expected round {expected}")]
    WrongRound { peer: AgentId, found: u32, expected: u32 },
    #[error("discussion rounds start at 1")]
    RoundZero,
}

/// Symptom definitions keyed by label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Definitions(pub BTreeMap<SymptomLabel, String>);

impl Definitions {
    /// Parses a JSON object mapping label codes to definition strings.
    pub fn from_json(text: &str, path: &Path) -> Result<Self, PromptError> {
        serde_json::from_str(text).map_err(|e| PromptError::Definitions {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|source| PromptError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn get(&self, label: SymptomLabel) -> Option<&str> {
        self.0.get(&label).map(String::as_str)
    }
}

/// A rendered system prompt for one aspect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectPrompt {
    pub aspect: Aspect,
    pub text: String,
}

/// A rendered discussion-round prompt for one agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscussionPrompt {
    pub for_agent: AgentId,
    pub round: u32,
    /// Peers in the order their blocks appear.
    pub peers: Vec<AgentId>,
    pub text: String,
}

/// Separator placed between the three aspect texts of the combined prompt.
pub const ASPECT_SEPARATOR: &str = "\n\n";

/// Heading that opens every peer block.
pub const PEER_BLOCK_HEADER: &str = "### Response from agent ";

/// Rendered in place of an empty prediction set.
pub const NO_PREDICTIONS: &str = "no symptoms predicted";

/// The set of template texts a run uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub depression: String,
    pub emotional: String,
    pub cultural: String,
    pub vanilla: String,
    pub user: String,
    pub format_contract: String,
    pub discussion: String,
    pub reminder: String,
}

const TEMPLATE_FILES: [&str; 8] = [
    "depression.txt",
    "emotional.txt",
    "cultural.txt",
    "vanilla.txt",
    "user.txt",
    "format_contract.txt",
    "discussion.txt",
    "reminder.txt",
];

impl PromptTemplates {
    /// Templates shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            depression: include_str!("../templates/depression.txt").to_string(),
            emotional: include_str!("../templates/emotional.txt").to_string(),
            cultural: include_str!("../templates/cultural.txt").to_string(),
            vanilla: include_str!("../templates/vanilla.txt").to_string(),
            user: include_str!("../templates/user.txt").to_string(),
            format_contract: include_str!("../templates/format_contract.txt").to_string(),
            discussion: include_str!("../templates/discussion.txt").to_string(),
            reminder: include_str!("../templates/reminder.txt").to_string(),
        }
    }

    /// Loads all eight template files from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut texts = TEMPLATE_FILES.iter().map(|name| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| PromptError::Read { path, source })
        });
        let mut next = || texts.next().expect("eight templates");
        let templates = Self {
            depression: next()?,
            emotional: next()?,
            cultural: next()?,
            vanilla: next()?,
            user: next()?,
            format_contract: next()?,
            discussion: next()?,
            reminder: next()?,
        };
        templates.check()?;
        Ok(templates)
    }

    /// Verifies that every template carries the placeholders its rendering relies on.
    pub fn check(&self) -> Result<(), PromptError> {
        let required: [(&'static str, &str, &'static str); 5] = [
            ("depression", &self.depression, "definitions"),
            ("user", &self.user, "ocr"),
            ("user", &self.user, "format_contract"),
            ("discussion", &self.discussion, "peer_blocks"),
            ("reminder", &self.reminder, "format_contract"),
        ];
        for (template, text, placeholder) in required {
            if !text.contains(&format!("{{{{{placeholder}}}}}")) {
                return Err(PromptError::MissingPlaceholder { template, placeholder });
            }
        }
        Ok(())
    }
}

/// Replaces each `{{name}}` with its value. Unknown placeholders are left as-is.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    values.iter().fold(template.to_string(), |text, (name, value)| {
        text.replace(&format!("{{{{{name}}}}}"), value)
    })
}

/// Templates plus definitions: everything needed to render a run's prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub templates: PromptTemplates,
    pub definitions: Definitions,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let definitions = Definitions::from_json(
            include_str!("../templates/definitions.json"),
            Path::new("templates/definitions.json"),
        )
        .expect("bundled definitions parse");
        Self {
            templates: PromptTemplates::builtin(),
            definitions,
        }
    }

    pub fn render_aspect_prompt(&self, aspect: Aspect) -> Result<AspectPrompt, PromptError> {
        render_aspect_prompt(&self.templates, aspect, &self.definitions)
    }

    pub fn render_user_prompt(&self, sample: &MemeSample, want_structured: bool) -> String {
        render_user_prompt(&self.templates, sample, want_structured)
    }

    pub fn render_discussion_prompt(
        &self,
        for_agent: &AgentId,
        round: u32,
        peers: &[&AgentResponse],
    ) -> Result<DiscussionPrompt, PromptError> {
        render_discussion_prompt(&self.templates, for_agent, round, peers)
    }

    pub fn render_reminder(&self) -> String {
        fill(
            &self.templates.reminder,
            &[("format_contract", self.templates.format_contract.trim_end())],
        )
    }
}

fn render_definitions(definitions: &Definitions) -> Result<String, PromptError> {
    let mut out = String::new();
    for label in SymptomLabel::ALL {
        let text = definitions
            .get(label)
            .ok_or(PromptError::MissingDefinition(label))?;
        let _ = writeln!(out, "- {} ({}): {}", label.name(), label.code(), text);
    }
    Ok(out.trim_end().to_string())
}

pub fn render_aspect_prompt(
    templates: &PromptTemplates,
    aspect: Aspect,
    definitions: &Definitions,
) -> Result<AspectPrompt, PromptError> {
    let text = match aspect {
        Aspect::Depression => fill(
            &templates.depression,
            &[("definitions", &render_definitions(definitions)?)],
        ),
        Aspect::Emotional => templates.emotional.clone(),
        Aspect::Cultural => templates.cultural.clone(),
        Aspect::Vanilla => templates.vanilla.clone(),
        Aspect::Combined => [Aspect::Depression, Aspect::Cultural, Aspect::Emotional]
            .into_iter()
            .map(|a| render_aspect_prompt(templates, a, definitions).map(|p| p.text))
            .collect::<Result<Vec<_>, _>>()?
            .join(ASPECT_SEPARATOR),
    };
    Ok(AspectPrompt { aspect, text })
}

fn label_vocabulary() -> String {
    SymptomLabel::ALL
        .iter()
        .map(|l| format!("- {}: {}", l.code(), l.name()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_user_prompt(templates: &PromptTemplates, sample: &MemeSample, want_structured: bool) -> String {
    let ocr = match sample.ocr.as_deref().map(str::trim) {
        Some(text) if !text.is_empty() => {
            format!("\nText extracted from the meme (OCR):\n\"\"\"\n{text}\n\"\"\"\n")
        }
        _ => String::new(),
    };
    let contract = if want_structured {
        templates.format_contract.trim_end()
    } else {
        ""
    };
    fill(
        &templates.user,
        &[
            ("ocr", &ocr),
            ("labels", &label_vocabulary()),
            ("format_contract", contract),
        ],
    )
}

fn render_peer_block(peer: &AgentResponse) -> String {
    let explanation = match peer.explanation.trim() {
        "" => "(none provided)",
        text => text,
    };
    let (labels, confidences) = if peer.predictions.is_empty() {
        (NO_PREDICTIONS.to_string(), "n/a".to_string())
    } else {
        let labels = peer
            .predictions
            .keys()
            .map(|l| format!("{} ({})", l.code(), l.name()))
            .collect::<Vec<_>>()
            .join(", ");
        let confidences = peer
            .predictions
            .iter()
            .map(|(l, c)| format!("{} {:.2}", l.code(), c.value()))
            .collect::<Vec<_>>()
            .join(", ");
        (labels, confidences)
    };
    format!(
        "{PEER_BLOCK_HEADER}{}\nExplanation: {explanation}\nPredicted symptoms: {labels}\nConfidence: {confidences}",
        peer.agent_id
    )
}

/// Builds agent `for_agent`'s prompt for discussion round `round` from its
/// peers' responses at `round - 1`. Peer blocks are ordered by agent id.
pub fn render_discussion_prompt(
    templates: &PromptTemplates,
    for_agent: &AgentId,
    round: u32,
    peers: &[&AgentResponse],
) -> Result<DiscussionPrompt, PromptError> {
    if round == 0 {
        return Err(PromptError::RoundZero);
    }
    let mut seen = BTreeSet::new();
    for peer in peers {
        if &peer.agent_id == for_agent {
            return Err(PromptError::SelfInPeers {
                agent: for_agent.clone(),
            });
        }
        if peer.round != round - 1 {
            return Err(PromptError::WrongRound {
                peer: peer.agent_id.clone(),
                found: peer.round,
                expected: round - 1,
            });
        }
        if !seen.insert(&peer.agent_id) {
            return Err(PromptError::DuplicatePeer {
                agent: for_agent.clone(),
                peer: peer.agent_id.clone(),
            });
        }
    }
    let mut ordered = peers.to_vec();
    ordered.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    let blocks = ordered
        .iter()
        .map(|p| render_peer_block(p))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(DiscussionPrompt {
        for_agent: for_agent.clone(),
        round,
        peers: ordered.iter().map(|p| p.agent_id.clone()).collect(),
        text: fill(&templates.discussion, &[("peer_blocks", &blocks)]),
    })
}
