use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

use super::RawReply;
use crate::domain::{canonicalize_label, AgentResponse, Confidence, SymptomLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply contains no structured block with a `predictions` array")]
    NoStructuredBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub response: AgentResponse,
    pub warnings: Vec<String>,
}

/// Finds the first JSON object in `text` that carries a `predictions` array.
///
/// Every `{` is tried as a start position, so objects inside fenced blocks
/// and bare objects are found alike, in order of appearance.
fn find_reply_object(text: &str) -> Option<Map<String, Value>> {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .find_map(|(start, _)| {
            let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(Value::Object(obj))) if matches!(obj.get("predictions"), Some(Value::Array(_))) => Some(obj),
                _ => None,
            }
        })
}

fn confidence_value(value: Option<&Value>) -> Option<f64> {
    match value? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('%').parse::<f64>().ok().map(|v| {
            if s.trim().ends_with('%') {
                v / 100.0
            } else {
                v
            }
        }),
        _ => None,
    }
}

/// Extracts predictions, confidences and explanation from a reply.
///
/// Unknown labels are dropped, out-of-range confidences clamped and repeated
/// labels merged (keeping the highest confidence); each such repair adds a
/// warning.
pub fn parse_reply(raw: &RawReply, round: u32) -> Result<ParsedReply, ParseError> {
    let obj = find_reply_object(&raw.text).ok_or(ParseError::NoStructuredBlock)?;
    let mut warnings = Vec::new();
    let mut predictions: BTreeMap<SymptomLabel, Confidence> = BTreeMap::new();

    let entries = obj["predictions"].as_array().expect("checked by find_reply_object");
    for entry in entries {
        let Value::Object(entry) = entry else {
            warnings.push(format!("ignored malformed prediction entry {entry}"));
            continue;
        };
        let Some(name) = entry
            .get("symptom")
            .or_else(|| entry.get("label"))
            .and_then(Value::as_str)
        else {
            warnings.push("ignored prediction entry without a symptom name".to_string());
            continue;
        };
        let Some(label) = canonicalize_label(name) else {
            warnings.push(format!("dropped unrecognised symptom `{name}`"));
            continue;
        };
        let Some(value) = confidence_value(entry.get("confidence")) else {
            warnings.push(format!("dropped {} without a numeric confidence", label.code()));
            continue;
        };
        let (confidence, clamped) = Confidence::clamped(value);
        if clamped {
            warnings.push(format!(
                "clamped {} confidence {value} to {}",
                label.code(),
                confidence.value()
            ));
        }
        if let Some(previous) = predictions.get(&label) {
            warnings.push(format!("merged repeated symptom {}", label.code()));
            if *previous >= confidence {
                continue;
            }
        }
        predictions.insert(label, confidence);
    }

    let explanation = match obj.get("explanation") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            warnings.push("explanation is not a string".to_string());
            other.to_string()
        }
        None => {
            warnings.push("reply has no explanation".to_string());
            String::new()
        }
    };

    Ok(ParsedReply {
        response: AgentResponse {
            agent_id: raw.agent_id.clone(),
            round,
            predictions,
            explanation,
        },
        warnings,
    })
}
