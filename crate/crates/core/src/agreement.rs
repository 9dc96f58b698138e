//! Inter-annotator reliability for set-valued annotations.
//!
//! Alpha uses the pairwise estimator: observed disagreement is the mean
//! distance over all within-unit annotator pairs, expected disagreement the
//! mean over all pairs of the pooled annotation values. Distances enter
//! unsquared.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AnnotationRecord, SymptomLabel};

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("set distance is undefined for an empty label set")]
    EmptySet,
    #[error("need at least 2 units with 2 or more annotations, found {0}")]
    TooFewUnits(usize),
    #[error("alpha is undefined: every pooled annotation value is identical, so expected disagreement is 0")]
    NoExpectedDisagreement,
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

pub type LabelSet = BTreeSet<SymptomLabel>;

/// Each distance is one division of exact integers, so equal rationals give
/// bitwise-equal results.
pub fn masi_distance(a: &LabelSet, b: &LabelSet) -> Result<f64, AgreementError> {
    if a.is_empty() || b.is_empty() {
        return Err(AgreementError::EmptySet);
    }
    let inter = a.intersection(b).count() as u64;
    let union = a.union(b).count() as u64;
    // Monotonicity in thirds: 3 equal, 2 subset, 1 overlap, 0 disjoint.
    let m = if a == b {
        3
    } else if a.is_subset(b) || b.is_subset(a) {
        2
    } else if inter > 0 {
        1
    } else {
        0
    };
    Ok((3 * union - inter * m) as f64 / (3 * union) as f64)
}

pub fn jaccard_distance(a: &LabelSet, b: &LabelSet) -> Result<f64, AgreementError> {
    if a.is_empty() || b.is_empty() {
        return Err(AgreementError::EmptySet);
    }
    let inter = a.intersection(b).count() as u64;
    let union = a.union(b).count() as u64;
    Ok((union - inter) as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetDistance {
    Masi,
    Jaccard,
}

impl SetDistance {
    pub fn apply(self, a: &LabelSet, b: &LabelSet) -> Result<f64, AgreementError> {
        match self {
            Self::Masi => masi_distance(a, b),
            Self::Jaccard => jaccard_distance(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Masi => "masi",
            Self::Jaccard => "jaccard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub alpha: f64,
    pub observed_disagreement: f64,
    pub expected_disagreement: f64,
    pub usable_units: usize,
    /// Units with fewer than two annotations.
    pub excluded_units: usize,
    pub pairable_values: usize,
    pub distance: String,
    pub estimator: String,
}

pub const ESTIMATOR: &str = "pairwise";

fn mean_pair_distance<'a, I>(pairs: I, distance: SetDistance) -> Result<(f64, usize), AgreementError>
where
    I: IntoIterator<Item = (&'a LabelSet, &'a LabelSet)>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in pairs {
        sum += distance.apply(a, b)?;
        count += 1;
    }
    Ok((sum / count as f64, count))
}

fn pairs<T>(items: &[T]) -> impl Iterator<Item = (&T, &T)> {
    items
        .iter()
        .enumerate()
        .flat_map(move |(i, a)| items[i + 1..].iter().map(move |b| (a, b)))
}

pub fn krippendorff_alpha(records: &[AnnotationRecord], distance: SetDistance) -> Result<AgreementReport, AgreementError> {
    let (usable, excluded): (Vec<&AnnotationRecord>, Vec<&AnnotationRecord>) =
        records.iter().partition(|r| r.annotations.len() >= 2);
    if usable.len() < 2 {
        return Err(AgreementError::TooFewUnits(usable.len()));
    }
    let units: Vec<Vec<&LabelSet>> = usable
        .iter()
        .map(|r| r.annotations.values().collect())
        .collect();
    let (observed, _) = mean_pair_distance(units.iter().flat_map(|u| pairs(u).map(|(a, b)| (*a, *b))), distance)?;
    let pooled: Vec<&LabelSet> = units.iter().flatten().copied().collect();
    let (expected, _) = mean_pair_distance(pairs(&pooled).map(|(a, b)| (*a, *b)), distance)?;
    if expected == 0.0 {
        return Err(AgreementError::NoExpectedDisagreement);
    }
    let alpha = if observed == 0.0 { 1.0 } else { 1.0 - observed / expected };
    Ok(AgreementReport {
        alpha,
        observed_disagreement: observed,
        expected_disagreement: expected,
        usable_units: usable.len(),
        excluded_units: excluded.len(),
        pairable_values: pooled.len(),
        distance: distance.name().to_string(),
        estimator: ESTIMATOR.to_string(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    unit_id: String,
    annotator_id: String,
    labels: Vec<String>,
}

/// Parses line-delimited `{unit_id, annotator_id, labels}` records into
/// per-unit annotation maps, in order of first appearance.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Vec<AnnotationRecord>, AgreementError> {
    let mut order: Vec<String> = Vec::new();
    let mut units: BTreeMap<String, BTreeMap<String, LabelSet>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let err = |message: String| AgreementError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if raw.trim().is_empty() {
            continue;
        }
        let line: AnnotationLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let labels = line
            .labels
            .iter()
            .map(|c| SymptomLabel::from_code(c).ok_or_else(|| err(format!("unknown label code `{c}`"))))
            .collect::<Result<LabelSet, _>>()?;
        if labels.is_empty() {
            return Err(err("empty label list".into()));
        }
        let unit = units.entry(line.unit_id.clone()).or_insert_with(|| {
            order.push(line.unit_id.clone());
            BTreeMap::new()
        });
        if unit.insert(line.annotator_id.clone(), labels).is_some() {
            return Err(err(format!(
                "annotator `{}` annotated unit `{}` twice",
                line.annotator_id, line.unit_id
            )));
        }
    }
    Ok(order
        .into_iter()
        .map(|unit_id| {
            let annotations = units.remove(&unit_id).unwrap_or_default();
            AnnotationRecord { unit_id, annotations }
        })
        .collect())
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, AgreementError> {
    let text = fs::read_to_string(path).map_err(|e| AgreementError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_annotations(&text, path)
}
