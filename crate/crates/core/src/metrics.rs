//! Multi-label evaluation: per-label precision, recall and F1 plus macro,
//! micro and support-weighted aggregates over the fixed seven labels.
//!
//! A ratio whose denominator is zero is reported as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::domain::SymptomLabel;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("gold and predicted sample ids differ; missing predictions: [{}]; unknown predictions: [{}]", missing.join(", "), extra.join(", "))]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("weighted F1 is undefined: no label has gold support")]
    NoSupport,
}

pub type LabelSets = BTreeMap<String, BTreeSet<SymptomLabel>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl LabelCounts {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_label: BTreeMap<SymptomLabel, LabelCounts>,
    pub samples: usize,
}

impl ConfusionCounts {
    pub fn get(&self, label: SymptomLabel) -> LabelCounts {
        self.per_label.get(&label).copied().unwrap_or_default()
    }
}

/// Counts per-label outcomes. Both maps must cover the same sample ids.
pub fn confusion(gold: &LabelSets, pred: &LabelSets) -> Result<ConfusionCounts, MetricsError> {
    let missing: Vec<String> = gold.keys().filter(|k| !pred.contains_key(*k)).cloned().collect();
    let extra: Vec<String> = pred.keys().filter(|k| !gold.contains_key(*k)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MetricsError::IdMismatch { missing, extra });
    }
    let mut per_label: BTreeMap<SymptomLabel, LabelCounts> =
        SymptomLabel::ALL.into_iter().map(|l| (l, LabelCounts::default())).collect();
    for (id, g) in gold {
        let p = &pred[id];
        for label in SymptomLabel::ALL {
            let c = per_label.get_mut(&label).expect("all labels present");
            match (g.contains(&label), p.contains(&label)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(ConfusionCounts {
        per_label,
        samples: gold.len(),
    })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub per_label: BTreeMap<SymptomLabel, LabelScores>,
    #[serde(rename = "macro")]
    pub macro_avg: Aggregate,
    #[serde(rename = "micro")]
    pub micro_avg: Aggregate,
    #[serde(rename = "weighted")]
    pub weighted_avg: Aggregate,
    /// Labels with no gold instances; their F1 is 0 and still enters the macro mean.
    pub zero_support: Vec<SymptomLabel>,
}

/// Column order of the per-class report table.
pub const REPORT_COLUMNS: [SymptomLabel; 7] = [
    SymptomLabel::FeelingDown,
    SymptomLabel::LackOfInterest,
    SymptomLabel::SelfHarm,
    SymptomLabel::EatingDisorder,
    SymptomLabel::LowSelfEsteem,
    SymptomLabel::ConcentrationProblem,
    SymptomLabel::SleepingDisorder,
];

pub fn report(counts: &ConfusionCounts) -> Result<EvalReport, MetricsError> {
    let per_label: BTreeMap<SymptomLabel, LabelScores> = SymptomLabel::ALL
        .into_iter()
        .map(|label| {
            let c = counts.get(label);
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            let scores = LabelScores {
                precision,
                recall,
                f1: f1(precision, recall),
                support: c.support(),
            };
            (label, scores)
        })
        .collect();

    let total_support: u64 = per_label.values().map(|s| s.support).sum();
    if total_support == 0 {
        return Err(MetricsError::NoSupport);
    }
    let n = per_label.len() as f64;
    let macro_avg = Aggregate {
        precision: per_label.values().map(|s| s.precision).sum::<f64>() / n,
        recall: per_label.values().map(|s| s.recall).sum::<f64>() / n,
        f1: per_label.values().map(|s| s.f1).sum::<f64>() / n,
    };
    let weighted = |f: fn(&LabelScores) -> f64| {
        per_label.values().map(|s| s.support as f64 * f(s)).sum::<f64>() / total_support as f64
    };
    let weighted_avg = Aggregate {
        precision: weighted(|s| s.precision),
        recall: weighted(|s| s.recall),
        f1: weighted(|s| s.f1),
    };
    let (tp, fp, fn_) = counts
        .per_label
        .values()
        .fold((0, 0, 0), |(a, b, c), x| (a + x.tp, b + x.fp, c + x.fn_));
    let micro_p = ratio(tp, tp + fp);
    let micro_r = ratio(tp, tp + fn_);
    let micro_avg = Aggregate {
        precision: micro_p,
        recall: micro_r,
        f1: f1(micro_p, micro_r),
    };
    let zero_support = per_label
        .iter()
        .filter(|(_, s)| s.support == 0)
        .map(|(l, _)| *l)
        .collect();
    Ok(EvalReport {
        samples: counts.samples,
        per_label,
        macro_avg,
        micro_avg,
        weighted_avg,
        zero_support,
    })
}

pub fn evaluate(gold: &LabelSets, pred: &LabelSets) -> Result<EvalReport, MetricsError> {
    report(&confusion(gold, pred)?)
}

fn pct(x: f64) -> f64 {
    (x * 10000.0).round() / 100.0
}

impl EvalReport {
    pub fn f1(&self, label: SymptomLabel) -> f64 {
        self.per_label[&label].f1
    }

    /// Note shown whenever a label has no gold support.
    pub fn zero_support_note(&self) -> Option<String> {
        if self.zero_support.is_empty() {
            return None;
        }
        let codes: Vec<&str> = self.zero_support.iter().map(|l| l.code()).collect();
        Some(format!(
            "labels without gold support ({}) score F1 = 0 by convention and still count in the macro average",
            codes.join(", ")
        ))
    }

    /// Table-shaped export: per-class F1 and the three aggregate F1 scores,
    /// all ×100 rounded to 2 decimals, followed by the raw [0, 1] values.
    pub fn to_json(&self) -> Value {
        let row: serde_json::Map<String, Value> = REPORT_COLUMNS
            .iter()
            .map(|l| (l.code().to_string(), json!(pct(self.f1(*l)))))
            .chain([
                ("macro_f1".to_string(), json!(pct(self.macro_avg.f1))),
                ("micro_f1".to_string(), json!(pct(self.micro_avg.f1))),
                ("weighted_f1".to_string(), json!(pct(self.weighted_avg.f1))),
            ])
            .collect();
        json!({
            "columns": REPORT_COLUMNS.iter().map(|l| l.code()).chain(["macro_f1", "micro_f1", "weighted_f1"]).collect::<Vec<_>>(),
            "f1_x100": row,
            "note": self.zero_support_note(),
            "detail": self,
        })
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Samples: {}", self.samples);
        let mut header = String::new();
        let mut values = String::new();
        for l in REPORT_COLUMNS {
            let _ = write!(header, "{:>8}", l.code());
            let _ = write!(values, "{:>8.2}", self.f1(l) * 100.0);
        }
        for (name, v) in [
            ("Macro", self.macro_avg.f1),
            ("Micro", self.micro_avg.f1),
            ("Weighted", self.weighted_avg.f1),
        ] {
            let _ = write!(header, "{:>10}", name);
            let _ = write!(values, "{:>10.2}", v * 100.0);
        }
        let _ = writeln!(out, "F1 x100");
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{values}");
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<6}{:>10}{:>10}{:>10}{:>9}", "Label", "Precision", "Recall", "F1", "Support");
        for l in REPORT_COLUMNS {
            let s = self.per_label[&l];
            let _ = writeln!(
                out,
                "{:<6}{:>10.2}{:>10.2}{:>10.2}{:>9}",
                l.code(),
                s.precision * 100.0,
                s.recall * 100.0,
                s.f1 * 100.0,
                s.support
            );
        }
        if let Some(note) = self.zero_support_note() {
            let _ = writeln!(out, "\nNote: {note}");
        }
        out
    }
}
