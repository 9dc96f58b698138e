//! Canonical data types shared by every other module.
//!
//! Labels serialize as their short codes (`FD`, `LOI`, `ED`, `SD`, `CP`,
//! `LSE`, `SH`) in every on-disk format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Errors raised while constructing domain values.
#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("unknown symptom label `{0}`")]
    UnknownLabel(String),
    #[error("unknown split `{0}` (expected train, test or validation)")]
    UnknownSplit(String),
    #[error("unknown aspect `{0}`")]
    UnknownAspect(String),
}

/// The seven depressive-symptom categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SymptomLabel {
    #[serde(rename = "FD")]
    FeelingDown,
    #[serde(rename = "LOI")]
    LackOfInterest,
    #[serde(rename = "ED")]
    EatingDisorder,
    #[serde(rename = "SD")]
    SleepingDisorder,
    #[serde(rename = "CP")]
    ConcentrationProblem,
    #[serde(rename = "LSE")]
    LowSelfEsteem,
    #[serde(rename = "SH")]
    SelfHarm,
}

impl SymptomLabel {
    /// All labels in canonical order.
    pub const ALL: [SymptomLabel; 7] = [
        SymptomLabel::FeelingDown,
        SymptomLabel::LackOfInterest,
        SymptomLabel::EatingDisorder,
        SymptomLabel::SleepingDisorder,
        SymptomLabel::ConcentrationProblem,
        SymptomLabel::LowSelfEsteem,
        SymptomLabel::SelfHarm,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Self::FeelingDown => "FD",
            Self::LackOfInterest => "LOI",
            Self::EatingDisorder => "ED",
            Self::SleepingDisorder => "SD",
            Self::ConcentrationProblem => "CP",
            Self::LowSelfEsteem => "LSE",
            Self::SelfHarm => "SH",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FeelingDown => "Feeling Down",
            Self::LackOfInterest => "Lack of Interest",
            Self::EatingDisorder => "Eating Disorder",
            Self::SleepingDisorder => "Sleeping Disorder",
            Self::ConcentrationProblem => "Concentration Problem",
            Self::LowSelfEsteem => "Low Self-Esteem",
            Self::SelfHarm => "Self-Harm",
        }
    }

    /// Exact short-code lookup (case-sensitive).
    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.code() == code)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SymptomLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SymptomLabel {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonicalize_label(s).ok_or_else(|| DomainError::UnknownLabel(s.to_string()))
    }
}

/// Accepted textual variants, keyed by their normalized form (lowercase
/// ASCII alphanumerics only). Long names and short codes are matched
/// separately and need not appear here.
pub const LABEL_ALIASES: &[(&str, SymptomLabel)] = &[
    ("feelingdepressed", SymptomLabel::FeelingDown),
    ("depressedmood", SymptomLabel::FeelingDown),
    ("lowmood", SymptomLabel::FeelingDown),
    ("lossofinterest", SymptomLabel::LackOfInterest),
    ("anhedonia", SymptomLabel::LackOfInterest),
    ("eatingdisorders", SymptomLabel::EatingDisorder),
    ("eatingproblem", SymptomLabel::EatingDisorder),
    ("appetitechange", SymptomLabel::EatingDisorder),
    ("sleepdisorder", SymptomLabel::SleepingDisorder),
    ("sleepingproblem", SymptomLabel::SleepingDisorder),
    ("sleepproblem", SymptomLabel::SleepingDisorder),
    ("insomnia", SymptomLabel::SleepingDisorder),
    ("concentrationproblems", SymptomLabel::ConcentrationProblem),
    ("troubleconcentrating", SymptomLabel::ConcentrationProblem),
    ("concentrationdifficulty", SymptomLabel::ConcentrationProblem),
    ("lowselfworth", SymptomLabel::LowSelfEsteem),
    ("worthlessness", SymptomLabel::LowSelfEsteem),
    ("selfinjury", SymptomLabel::SelfHarm),
    ("suicidalideation", SymptomLabel::SelfHarm),
    ("suicidalthoughts", SymptomLabel::SelfHarm),
];

/// Names of the retired "Lack of Energy" category. These never map to a
/// label, so legacy files fail validation instead of being silently remapped.
pub const RETIRED_LABEL_ALIASES: &[&str] = &["loe", "lackofenergy", "lowenergy", "fatigue"];

fn normalize_label_text(text: &str) -> String {
    text.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Maps free text emitted by an agent or found in a file to a label.
///
/// Matching ignores case, whitespace and punctuation, so `"self harm"`,
/// `"Self-Harm"` and `"SH"` all resolve to [`SymptomLabel::SelfHarm`].
pub fn canonicalize_label(text: &str) -> Option<SymptomLabel> {
    let key = normalize_label_text(text);
    if key.is_empty() || RETIRED_LABEL_ALIASES.contains(&key.as_str()) {
        return None;
    }
    SymptomLabel::ALL
        .into_iter()
        .find(|l| normalize_label_text(l.code()) == key || normalize_label_text(l.name()) == key)
        .or_else(|| {
            LABEL_ALIASES
                .iter()
                .find(|(alias, _)| *alias == key)
                .map(|(_, l)| *l)
        })
}

/// True when `text` names the retired "Lack of Energy" category.
pub fn is_retired_label(text: &str) -> bool {
    RETIRED_LABEL_ALIASES.contains(&normalize_label_text(text).as_str())
}

/// Number of confidence units per 1.0.
pub const CONFIDENCE_SCALE: u32 = 1_000_000;

/// A confidence in `[0, 1]`, stored in millionths so that sums and
/// threshold comparisons are exact and order-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Confidence(u32);

impl Confidence {
    pub const ZERO: Confidence = Confidence(0);
    pub const ONE: Confidence = Confidence(CONFIDENCE_SCALE);

    /// Rejects NaN and anything outside `[0, 1]`.
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(DomainError::ConfidenceOutOfRange(value));
        }
        Ok(Self((value * CONFIDENCE_SCALE as f64).round() as u32))
    }

    /// Clamps into `[0, 1]`; the flag reports whether clamping happened.
    /// NaN is treated as 0.
    pub fn clamped(value: f64) -> (Self, bool) {
        if value.is_nan() {
            return (Self::ZERO, true);
        }
        let c = value.clamp(0.0, 1.0);
        (Self((c * CONFIDENCE_SCALE as f64).round() as u32), c != value)
    }

    pub fn from_micros(micros: u32) -> Option<Self> {
        (micros <= CONFIDENCE_SCALE).then_some(Self(micros))
    }

    pub fn micros(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / CONFIDENCE_SCALE as f64
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

impl Serialize for Confidence {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Confidence::new(v).map_err(serde::de::Error::custom)
    }
}

/// One predicted label together with the agent's confidence in it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrediction {
    pub label: SymptomLabel,
    pub confidence: Confidence,
}

impl LabelPrediction {
    pub fn new(label: SymptomLabel, confidence: f64) -> Result<Self, DomainError> {
        Ok(Self {
            label,
            confidence: Confidence::new(confidence)?,
        })
    }
}

/// Opaque agent identifier. Ordering is lexicographic and fixes the order
/// in which peers are presented to each other.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// One agent's parsed output for one round. Round 0 is independent
/// ideation; rounds `1..=R` are discussion rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent_id: AgentId,
    pub round: u32,
    pub predictions: BTreeMap<SymptomLabel, Confidence>,
    pub explanation: String,
}

impl AgentResponse {
    /// The response recorded for an agent that produced nothing usable.
    pub fn empty(agent_id: AgentId, round: u32) -> Self {
        Self {
            agent_id,
            round,
            predictions: BTreeMap::new(),
            explanation: String::new(),
        }
    }

    pub fn predicted_labels(&self) -> BTreeSet<SymptomLabel> {
        self.predictions.keys().copied().collect()
    }

    pub fn confidence_for(&self, label: SymptomLabel) -> Option<Confidence> {
        self.predictions.get(&label).copied()
    }

    pub fn label_predictions(&self) -> impl Iterator<Item = LabelPrediction> + '_ {
        self.predictions
            .iter()
            .map(|(&label, &confidence)| LabelPrediction { label, confidence })
    }
}

/// Knowledge aspect an agent's system prompt focuses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Depression,
    Emotional,
    Cultural,
    Vanilla,
    Combined,
}

impl Aspect {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Depression => "depression",
            Self::Emotional => "emotional",
            Self::Cultural => "cultural",
            Self::Vanilla => "vanilla",
            Self::Combined => "combined",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "depression" => Ok(Self::Depression),
            "emotional" => Ok(Self::Emotional),
            "cultural" => Ok(Self::Cultural),
            "vanilla" => Ok(Self::Vanilla),
            "combined" => Ok(Self::Combined),
            _ => Err(DomainError::UnknownAspect(s.to_string())),
        }
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_max_attempts() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_backoff_ms() -> u64 {
    500
}

/// Settings for an agent backed by a chat-completion service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Initial backoff; doubles after every failed attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted { fixtures: PathBuf },
    Remote(RemoteSettings),
}

/// Declarative description of one agent in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub aspect: Aspect,
    #[serde(flatten)]
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
            Self::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "validation" => Ok(Self::Validation),
            _ => Err(DomainError::UnknownSplit(s.to_string())),
        }
    }
}

/// One meme in a corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemeSample {
    pub id: String,
    /// Image path, relative to the manifest's directory.
    pub image: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeSet<SymptomLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_explanation: Option<String>,
    /// Fields we do not interpret, kept so that re-serialization is lossless.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl MemeSample {
    pub fn new(id: impl Into<String>, image: impl Into<String>, split: Split) -> Self {
        Self {
            id: id.into(),
            image: image.into(),
            split,
            ocr: None,
            labels: None,
            human_explanation: None,
            extra: serde_json::Map::new(),
        }
    }
}

/// Label sets assigned to one unit by several annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub unit_id: String,
    pub annotations: BTreeMap<String, BTreeSet<SymptomLabel>>,
}
