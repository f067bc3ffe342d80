//! Transport backends: a chat-completions HTTP client and a scripted mock.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CallContext, ChatRequest};

/// Raw HTTP reply: status plus body text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    /// Not worth retrying, e.g. an exhausted mock transcript.
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, ctx: &CallContext, req: &ChatRequest) -> Result<HttpReply, TransportError>;
}

/// Credential wrapper whose `Debug` output never shows the value.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

pub const ENV_API_KEY: &str = "PREFFORGE_API_KEY";
pub const ENV_API_BASE: &str = "PREFFORGE_API_BASE";

/// Chat-completions endpoint over HTTPS.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Secret,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Secret, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }

    /// Reads the endpoint and credential from `PREFFORGE_API_BASE` and
    /// `PREFFORGE_API_KEY`.
    pub fn from_env(timeout: Duration) -> Result<Self, TransportError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| TransportError::Fatal(format!("{ENV_API_BASE} is not set")))?;
        let key = std::env::var(ENV_API_KEY)
            .map_err(|_| TransportError::Fatal(format!("{ENV_API_KEY} is not set")))?;
        Self::new(&base, Secret::new(key), timeout)
    }
}

/// Wire body for a chat-completions request.
pub fn request_body(req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| json!({"role": m.role, "content": m.content}))
        .collect();
    json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

impl ChatBackend for HttpBackend {
    fn send(&self, _ctx: &CallContext, req: &ChatRequest) -> Result<HttpReply, TransportError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(self.api_key.expose())
            .header("content-type", "application/json")
            .body(request_body(req).to_string())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    // reqwest errors can carry the URL but never the headers
                    TransportError::Connect(e.without_url().to_string())
                }
            })?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// One scripted response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    /// Shorthand for a 200 reply whose first choice carries `content`.
    Content {
        content: String,
    },
    Raw {
        #[serde(default = "ok_status")]
        status: u16,
        body: Value,
    },
    Timeout {
        timeout: bool,
    },
}

fn ok_status() -> u16 {
    200
}

/// Wraps assistant text in a chat-completions response body.
pub fn completion_body(content: &str) -> String {
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

impl ScriptedReply {
    fn to_reply(&self) -> Result<HttpReply, TransportError> {
        match self {
            ScriptedReply::Content { content } => Ok(HttpReply {
                status: 200,
                body: completion_body(content),
            }),
            ScriptedReply::Raw { status, body } => Ok(HttpReply {
                status: *status,
                body: match body {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                },
            }),
            ScriptedReply::Timeout { .. } => Err(TransportError::Timeout),
        }
    }
}

/// Transcript file: either a bare list of replies (served in order to any
/// caller) or an object with per-task queues and a shared fallback queue.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub default: Vec<ScriptedReply>,
    #[serde(default)]
    pub tasks: BTreeMap<String, Vec<ScriptedReply>>,
}

impl Transcript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let value: Value = serde_json::from_str(text)?;
        if value.is_array() {
            Ok(Self {
                default: serde_json::from_value(value)?,
                tasks: BTreeMap::new(),
            })
        } else {
            serde_json::from_value(value)
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub ctx: CallContext,
    pub request: ChatRequest,
}

/// Serves scripted replies. Calls for a task with its own queue draw from
/// that queue only, which keeps results independent of worker scheduling.
#[derive(Debug, Default)]
pub struct MockBackend {
    state: Mutex<MockState>,
}

#[derive(Debug, Default)]
struct MockState {
    default: VecDeque<ScriptedReply>,
    tasks: BTreeMap<String, VecDeque<ScriptedReply>>,
    calls: Vec<RecordedCall>,
}

impl MockBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            state: Mutex::new(MockState {
                default: transcript.default.into(),
                tasks: transcript
                    .tasks
                    .into_iter()
                    .map(|(k, v)| (k, v.into()))
                    .collect(),
                calls: Vec::new(),
            }),
        }
    }

    pub fn from_replies(replies: Vec<ScriptedReply>) -> Self {
        Self::new(Transcript {
            default: replies,
            tasks: BTreeMap::new(),
        })
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.state.lock().expect("mock lock").calls.clone()
    }

    pub fn remaining(&self) -> usize {
        let s = self.state.lock().expect("mock lock");
        s.default.len() + s.tasks.values().map(VecDeque::len).sum::<usize>()
    }
}

impl ChatBackend for MockBackend {
    fn send(&self, ctx: &CallContext, req: &ChatRequest) -> Result<HttpReply, TransportError> {
        let mut s = self.state.lock().expect("mock lock");
        s.calls.push(RecordedCall {
            ctx: ctx.clone(),
            request: req.clone(),
        });
        let next = match s.tasks.get_mut(&ctx.task_id) {
            Some(queue) => queue.pop_front(),
            None => s.default.pop_front(),
        };
        match next {
            Some(r) => r.to_reply(),
            None => Err(TransportError::Fatal(format!(
                "mock transcript exhausted for task {:?}",
                ctx.task_id
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_forms() {
        let flat =
            Transcript::from_json(r#"[{"content": "hi"}, {"status": 429, "body": "slow down"}]"#)
                .unwrap();
        assert_eq!(flat.default.len(), 2);
        let keyed = Transcript::from_json(
            r#"{"tasks": {"t1": [{"content": "a"}]}, "default": [{"timeout": true}]}"#,
        )
        .unwrap();
        assert_eq!(keyed.tasks["t1"].len(), 1);
        assert_eq!(keyed.default[0], ScriptedReply::Timeout { timeout: true });
    }

    #[test]
    fn secret_debug_is_redacted() {
        let s = Secret::new("sk-very-secret");
        assert!(!format!("{s:?}").contains("very"));
    }
}
