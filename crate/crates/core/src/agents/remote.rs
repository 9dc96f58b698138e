//! Agents backed by an OpenAI-compatible chat-completions endpoint.

use std::fs;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use super::{check_history, AgentError, CallContext, ChatAgent, ChatTurn, RawReply};
use crate::domain::{AgentId, RemoteSettings};

/// Counting semaphore bounding in-flight requests per backend.
struct Gate {
    free: Mutex<usize>,
    available: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.available.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.available.notify_one();
    }
}

pub struct RemoteAgent {
    id: AgentId,
    settings: RemoteSettings,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteAgent {
    /// Resolves the credential from the environment; fails if the named
    /// variable is unset.
    pub fn new(id: AgentId, settings: RemoteSettings) -> Result<Self, AgentError> {
        let api_key = match &settings.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| AgentError::MissingCredential(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| AgentError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            id,
            gate: Gate::new(settings.max_in_flight),
            settings,
            api_key,
            http,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }
}

fn image_mime(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

fn message_json(turn: &ChatTurn, image_root: &Path) -> Result<Value, AgentError> {
    let Some(image) = &turn.image else {
        return Ok(json!({"role": turn.role.as_str(), "content": turn.content}));
    };
    let path = image_root.join(image);
    let bytes = fs::read(&path).map_err(|source| AgentError::Image {
        path: path.clone(),
        source,
    })?;
    let url = format!(
        "data:{};base64,{}",
        image_mime(&path),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    );
    Ok(json!({
        "role": turn.role.as_str(),
        "content": [
            {"type": "text", "text": turn.content},
            {"type": "image_url", "image_url": {"url": url}},
        ],
    }))
}

/// Request body in the generic chat-completions shape.
pub fn chat_request_body(
    settings: &RemoteSettings,
    history: &[ChatTurn],
    new_turn: &ChatTurn,
    image_root: &Path,
) -> Result<Value, AgentError> {
    let messages = history
        .iter()
        .chain(std::iter::once(new_turn))
        .map(|t| message_json(t, image_root))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "model": settings.model,
        "temperature": settings.temperature,
        "messages": messages,
    }))
}

/// Pulls the assistant text out of a chat-completions response body.
pub fn extract_reply_text(body: &Value) -> Result<String, AgentError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| AgentError::MalformedResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some providers return a list of content parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(AgentError::MalformedResponse(format!("unexpected content {other}"))),
    }
}

fn retryable(status: reqwest::StatusCode) -> bool {
    status == reqwest::StatusCode::TOO_MANY_REQUESTS
        || status == reqwest::StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
}

impl ChatAgent for RemoteAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn fingerprint(&self) -> String {
        format!(
            "remote:{}:{}:{}:{}",
            self.id,
            self.settings.base_url.trim_end_matches('/'),
            self.settings.model,
            self.settings.temperature
        )
    }

    fn invoke(&self, ctx: &CallContext, history: &[ChatTurn], new_turn: &ChatTurn) -> Result<RawReply, AgentError> {
        check_history(history, new_turn)?;
        let body = chat_request_body(&self.settings, history, new_turn, &ctx.image_root)?;
        let max_attempts = self.settings.max_attempts.max(1);
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let mut backoff = Duration::from_millis(self.settings.backoff_ms);

        for attempt in 1..=max_attempts {
            let mut request = self.http.post(self.endpoint()).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let last = attempt == max_attempts;
            match request.send() {
                Err(e) if last => {
                    return Err(AgentError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
                Err(e) => tracing::debug!(agent = %self.id, attempt, "transport error, retrying: {e}"),
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let json: Value = response
                            .json()
                            .map_err(|e| AgentError::MalformedResponse(e.to_string()))?;
                        return Ok(RawReply {
                            agent_id: self.id.clone(),
                            text: extract_reply_text(&json)?,
                            latency: started.elapsed(),
                            attempts: attempt,
                        });
                    }
                    if last || !retryable(status) {
                        return Err(AgentError::Service {
                            status: status.as_u16(),
                            attempts: attempt,
                            body: response.text().unwrap_or_default(),
                        });
                    }
                    tracing::debug!(agent = %self.id, attempt, %status, "retryable status");
                }
            }
            thread::sleep(backoff);
            backoff *= 2;
        }
        unreachable!("loop returns on the last attempt")
    }
}
