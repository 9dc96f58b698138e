//! Corpus manifests: loading, validation and label-distribution reports.
//!
//! A manifest is a JSON-lines file with one meme per line:
//!
//! ```text
//! {"id":"m001","image":"img/m001.jpg","split":"test","ocr":"time to sleep","labels":["SD"]}
//! ```
//!
//! `id`, `image` and `split` are required. `ocr`, `labels` and
//! `human_explanation` are optional; any other field is carried through
//! untouched when the manifest is written back out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::domain::{canonicalize_label, is_retired_label, MemeSample, Split, SymptomLabel};

/// A single validation problem, located by 1-based line number when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub line: Option<usize>,
    pub message: String,
}

impl Finding {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} failed validation:\n{}", render_findings(.findings))]
    Invalid { path: PathBuf, findings: Vec<Finding> },
}

fn render_findings(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| format!("  - {f}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Whether samples must carry gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Unlabeled samples are allowed (the engine classifies them).
    Inference,
    /// Every sample must have a non-empty gold label set.
    Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub samples: Vec<MemeSample>,
    pub source: PathBuf,
    pub split_filter: Option<Split>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MemeSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Directory that relative image paths are resolved against.
    pub fn base_dir(&self) -> PathBuf {
        self.source
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    pub fn resolve_image(&self, sample: &MemeSample) -> PathBuf {
        self.base_dir().join(&sample.image)
    }

    /// Serializes back to JSON lines in manifest order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for sample in &self.samples {
            // MemeSample contains only string keys and plain values.
            out.push_str(&serde_json::to_string(sample).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

const KNOWN_FIELDS: [&str; 6] = ["id", "image", "split", "ocr", "labels", "human_explanation"];

fn parse_record(line_no: usize, line: &str, mode: LoadMode, findings: &mut Vec<Finding>) -> Option<MemeSample> {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            findings.push(Finding::at(line_no, format!("malformed record: {e}")));
            return None;
        }
    };
    let Value::Object(mut obj) = value else {
        findings.push(Finding::at(line_no, "record is not an object"));
        return None;
    };
    let before = findings.len();

    let mut required = |key: &str| -> Option<String> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
            Some(Value::String(_)) => {
                findings.push(Finding::at(line_no, format!("field `{key}` is empty")));
                None
            }
            Some(_) => {
                findings.push(Finding::at(line_no, format!("field `{key}` must be a string")));
                None
            }
            None => {
                findings.push(Finding::at(line_no, format!("missing required field `{key}`")));
                None
            }
        }
    };
    let id = required("id");
    let image = required("image");
    let split = required("split").and_then(|s| match s.parse::<Split>() {
        Ok(split) => Some(split),
        Err(e) => {
            findings.push(Finding::at(line_no, e.to_string()));
            None
        }
    });

    let mut optional_text = |key: &str| -> Option<String> {
        match obj.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                findings.push(Finding::at(line_no, format!("field `{key}` must be a string")));
                None
            }
        }
    };
    let ocr = optional_text("ocr");
    let human_explanation = optional_text("human_explanation");

    let labels = match obj.get("labels") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut set = BTreeSet::new();
            for item in items {
                let Value::String(code) = item else {
                    findings.push(Finding::at(line_no, format!("label entry {item} is not a string")));
                    continue;
                };
                match canonicalize_label(code) {
                    Some(label) => {
                        set.insert(label);
                    }
                    None if is_retired_label(code) => findings.push(Finding::at(
                        line_no,
                        format!("unknown label code `{code}` (the \"Lack of Energy\" category is no longer part of the label set)"),
                    )),
                    None => findings.push(Finding::at(line_no, format!("unknown label code `{code}`"))),
                }
            }
            if items.is_empty() {
                findings.push(Finding::at(line_no, "gold label set is empty"));
            }
            Some(set)
        }
        Some(_) => {
            findings.push(Finding::at(line_no, "field `labels` must be an array of label codes"));
            None
        }
    };
    if mode == LoadMode::Evaluation && labels.is_none() {
        findings.push(Finding::at(line_no, "gold labels are required for evaluation"));
    }

    if findings.len() > before {
        return None;
    }
    for key in KNOWN_FIELDS {
        obj.remove(key);
    }
    Some(MemeSample {
        id: id?,
        image: image?,
        split: split?,
        ocr,
        labels,
        human_explanation,
        extra: obj,
    })
}

/// Parses manifest text, collecting every problem instead of stopping at the first.
pub fn parse_manifest(text: &str, mode: LoadMode) -> Result<Vec<MemeSample>, Vec<Finding>> {
    let mut findings = Vec::new();
    let mut samples = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        // Ids are tracked even for records with other problems, so that a
        // duplicate is reported whichever copy is broken.
        let raw_id = serde_json::from_str::<Value>(line)
            .ok()
            .and_then(|v| v.get("id")?.as_str().map(str::to_string));
        let duplicate = raw_id.as_ref().and_then(|id| match first_seen.get(id) {
            Some(first) => Some(*first),
            None => {
                first_seen.insert(id.clone(), line_no);
                None
            }
        });
        let sample = parse_record(line_no, line, mode, &mut findings);
        if let (Some(first), Some(id)) = (duplicate, &raw_id) {
            findings.push(Finding::at(
                line_no,
                format!("duplicate sample id `{id}` (first seen on line {first})"),
            ));
            continue;
        }
        samples.extend(sample);
    }

    if findings.is_empty() {
        Ok(samples)
    } else {
        Err(findings)
    }
}

/// Loads and validates a manifest, optionally keeping one split only.
///
/// Validation covers the whole file even when a split filter is given, so
/// duplicate ids across splits are still reported.
pub fn load_manifest(path: &Path, split_filter: Option<Split>, mode: LoadMode) -> Result<Manifest, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut samples = parse_manifest(&text, mode).map_err(|findings| CorpusError::Invalid {
        path: path.to_path_buf(),
        findings,
    })?;
    if let Some(split) = split_filter {
        samples.retain(|s| s.split == split);
    }
    Ok(Manifest {
        samples,
        source: path.to_path_buf(),
        split_filter,
    })
}

/// Reports samples whose image file does not exist. Images are never opened.
pub fn check_images(manifest: &Manifest) -> Vec<Finding> {
    manifest
        .samples
        .iter()
        .filter(|s| !manifest.resolve_image(s).is_file())
        .map(|s| Finding {
            line: None,
            message: format!("sample `{}`: image {} not found", s.id, manifest.resolve_image(s).display()),
        })
        .collect()
}

/// Per-split label counts plus the number of samples in the split.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize)]
pub struct SplitCounts {
    pub counts: BTreeMap<SymptomLabel, usize>,
    pub total: usize,
}

impl SplitCounts {
    fn zeroed() -> Self {
        Self {
            counts: SymptomLabel::ALL.into_iter().map(|l| (l, 0)).collect(),
            total: 0,
        }
    }

    pub fn count(&self, label: SymptomLabel) -> usize {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    /// Number of label instances; may exceed `total` since samples are multi-label.
    pub fn instances(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct LabelDistribution {
    pub splits: BTreeMap<Split, SplitCounts>,
}

/// Column order used by the distribution table.
pub const DISTRIBUTION_COLUMNS: [SymptomLabel; 7] = [
    SymptomLabel::LackOfInterest,
    SymptomLabel::FeelingDown,
    SymptomLabel::EatingDisorder,
    SymptomLabel::SleepingDisorder,
    SymptomLabel::LowSelfEsteem,
    SymptomLabel::ConcentrationProblem,
    SymptomLabel::SelfHarm,
];

impl LabelDistribution {
    pub fn split(&self, split: Split) -> &SplitCounts {
        &self.splits[&split]
    }

    /// Plain-text table: one row per split, label columns, then the sample total.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for label in DISTRIBUTION_COLUMNS {
            let _ = write!(out, "{:>7}", label.code());
        }
        let _ = writeln!(out, "{:>8}", "Total");
        for split in Split::ALL {
            let row = self.split(split);
            let name = match split {
                Split::Train => "Train",
                Split::Test => "Test",
                Split::Validation => "Validation",
            };
            let _ = write!(out, "{name:<12}");
            for label in DISTRIBUTION_COLUMNS {
                let _ = write!(out, "{:>7}", row.count(label));
            }
            let _ = writeln!(out, "{:>8}", row.total);
        }
        out
    }
}

/// Counts, for every split and label, the samples whose gold set contains the label.
pub fn label_distribution(manifest: &Manifest) -> LabelDistribution {
    let mut splits: BTreeMap<Split, SplitCounts> =
        Split::ALL.into_iter().map(|s| (s, SplitCounts::zeroed())).collect();
    for sample in &manifest.samples {
        let row = splits.get_mut(&sample.split).expect("all splits present");
        row.total += 1;
        for label in sample.labels.iter().flatten() {
            *row.counts.entry(*label).or_default() += 1;
        }
    }
    LabelDistribution { splits }
}
