#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use memedebate_core::agents::FixtureRecord;
use memedebate_core::domain::{AgentId, MemeSample, Split, SymptomLabel};
use serde_json::{json, Value};

/// Reply text in the structured shape agents are asked for.
pub fn reply(preds: &[(&str, f64)], explanation: &str) -> String {
    let predictions: Vec<Value> = preds
        .iter()
        .map(|(code, c)| json!({"symptom": code, "confidence": c}))
        .collect();
    json!({"predictions": predictions, "explanation": explanation}).to_string()
}

pub fn sample(id: &str, labels: &[SymptomLabel]) -> MemeSample {
    let mut s = MemeSample::new(id, format!("img/{id}.png"), Split::Test);
    s.ocr = Some(format!("caption of {id}"));
    if !labels.is_empty() {
        s.labels = Some(labels.iter().copied().collect());
    }
    s
}

pub fn record(sample_id: &str, agent: &str, round: u32, text: String) -> FixtureRecord {
    FixtureRecord {
        sample_id: sample_id.into(),
        agent_id: AgentId::from(agent),
        round,
        reply_text: text,
    }
}

/// Explanation text that marks who wrote a reply and when.
pub fn sentinel(agent: &str, round: u32) -> String {
    format!("SENTINEL<{agent}@{round}>")
}

pub const AGENTS: [(&str, &str); 3] = [("A1", "depression"), ("A2", "emotional"), ("A3", "cultural")];

/// Fixtures for every (sample, agent, round), with sentinel explanations and
/// confidences that vary by agent and round.
pub fn sentinel_fixtures(sample_ids: &[&str], rounds: u32) -> Vec<FixtureRecord> {
    let mut out = Vec::new();
    for (s, id) in sample_ids.iter().enumerate() {
        for (a, (agent, _)) in AGENTS.iter().enumerate() {
            for r in 0..=rounds {
                let c = 0.4 + 0.1 * ((s + a + r as usize) % 6) as f64;
                let text = reply(&[("FD", c), ("SH", 1.0 - c / 2.0)], &sentinel(agent, r));
                out.push(record(id, agent, r, text));
            }
        }
    }
    out
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) {
    let text: String = items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

/// TOML config for three scripted agents sharing one fixture file.
pub fn scripted_config(fixtures: &str, rounds: u32, threshold: f64) -> String {
    let mut text = format!("rounds = {rounds}\nthreshold = {threshold}\nworkers = 2\n");
    for (id, aspect) in AGENTS {
        text.push_str(&format!(
            "\n[[agents]]\nid = \"{id}\"\naspect = \"{aspect}\"\nbackend = \"scripted\"\nfixtures = \"{fixtures}\"\n"
        ));
    }
    text
}

/// A scratch run directory with a manifest and fixtures for the given samples.
pub struct Scratch {
    pub dir: tempfile::TempDir,
}

impl Scratch {
    pub fn new(samples: &[MemeSample], fixtures: &[FixtureRecord]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_jsonl(&dir.path().join("manifest.jsonl"), samples);
        write_jsonl(&dir.path().join("fixtures.jsonl"), fixtures);
        Self { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }
}

/// Requests seen by the mock: authorization header and JSON body.
pub type RequestLog = Arc<Mutex<Vec<(Option<String>, Value)>>>;

pub type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering POSTs from a handler; one request per
/// connection.
pub struct MockServer {
    pub url: String,
    pub requests: RequestLog,
}

impl MockServer {
    pub fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests: RequestLog = Arc::default();
        let log = Arc::clone(&requests);
        let handler: Arc<Handler> = Arc::from(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut length = 0usize;
                    let mut auth = None;
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let trimmed = line.trim_end();
                        if trimmed.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = trimmed.split_once(':') {
                            match k.to_ascii_lowercase().as_str() {
                                "content-length" => length = v.trim().parse().unwrap_or(0),
                                "authorization" => auth = Some(v.trim().to_string()),
                                _ => {}
                            }
                        }
                    }
                    let mut body = vec![0u8; length];
                    reader.read_exact(&mut body).unwrap();
                    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                    let index = {
                        let mut log = log.lock().unwrap();
                        log.push((auth, body.clone()));
                        log.len() - 1
                    };
                    let (status, payload) = handler(index, &body);
                    let response = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(response.as_bytes());
                });
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

/// Chat-completions response body carrying `text` as the assistant message.
pub fn completion(text: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}
