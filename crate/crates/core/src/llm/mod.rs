//! Chat-completion client for the three prompt roles: task generation, code
//! refinement and pair judging.
//!
//! Every HTTP attempt, retried or not, is recorded in a [`CallLedger`] under
//! the task it was made for.

pub mod backend;
pub mod parse;
pub mod prompts;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{CodeVersion, PreferencePair, TaskSpec, TestSuite};
pub use backend::{ChatBackend, HttpBackend, MockBackend, Secret, Transcript};
pub use parse::JudgeVerdict;
use prompts::{render, PromptTemplates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallRole {
    Generate,
    Refine,
    Judge,
}

/// Which task and role a request is made for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub task_id: String,
    pub role: CallRole,
}

impl CallContext {
    pub fn new(task_id: impl Into<String>, role: CallRole) -> Self {
        Self {
            task_id: task_id.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub role: CallRole,
    /// HTTP status, absent when the transport failed before a reply.
    pub status: Option<u16>,
}

/// Count of HTTP attempts per role and per task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLedger {
    pub generate: u64,
    pub refine: u64,
    pub judge: u64,
    pub per_task: BTreeMap<String, Vec<LedgerEntry>>,
}

impl CallLedger {
    pub fn record(&mut self, task_id: &str, entry: LedgerEntry) {
        match entry.role {
            CallRole::Generate => self.generate += 1,
            CallRole::Refine => self.refine += 1,
            CallRole::Judge => self.judge += 1,
        }
        self.per_task
            .entry(task_id.to_owned())
            .or_default()
            .push(entry);
    }

    pub fn total(&self) -> u64 {
        self.generate + self.refine + self.judge
    }

    pub fn task_calls(&self, task_id: &str) -> u64 {
        self.per_task.get(task_id).map_or(0, |v| v.len() as u64)
    }

    /// Role counters agree with the per-task lists.
    pub fn is_consistent(&self) -> bool {
        let mut counts = [0u64; 3];
        for e in self.per_task.values().flatten() {
            counts[e.role as usize] += 1;
        }
        counts == [self.generate, self.refine, self.judge]
    }

    pub fn totals(&self) -> LedgerTotals {
        LedgerTotals {
            generate: self.generate,
            refine: self.refine,
            judge: self.judge,
            total: self.total(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub generate: u64,
    pub refine: u64,
    pub judge: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RoleSettings {
    fn with_temperature(temperature: f64) -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature,
            max_tokens: 4096,
        }
    }
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self::with_temperature(0.7)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts per call, first try included.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 16_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from the base.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(
            self.base_delay_ms
                .saturating_mul(factor)
                .min(self.max_delay_ms),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub generate: RoleSettings,
    pub refine: RoleSettings,
    pub judge: RoleSettings,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub request_timeout_ms: u64,
    pub templates: prompts::TemplatePaths,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            generate: RoleSettings::with_temperature(0.7),
            refine: RoleSettings::with_temperature(0.7),
            judge: RoleSettings::with_temperature(0.0),
            retry: RetryPolicy::default(),
            concurrency: 8,
            request_timeout_ms: 120_000,
            templates: prompts::TemplatePaths::default(),
        }
    }
}

impl LlmConfig {
    fn role(&self, role: CallRole) -> &RoleSettings {
        match role {
            CallRole::Generate => &self.generate,
            CallRole::Refine => &self.refine,
            CallRole::Judge => &self.judge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("endpoint rejected the credential (HTTP {status})")]
    Auth { status: u16 },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("endpoint returned HTTP {status}")]
    HttpStatus { status: u16 },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("could not parse {role:?} reply: {detail}")]
    Parse { role: CallRole, detail: String },
    #[error("no generation template named {0:?}")]
    UnknownTemplate(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter lock");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

fn first_choice_text(body: &str) -> Result<String, LlmError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| LlmError::MalformedResponse(format!("body is not JSON: {e}")))?;
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))
}

pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    cfg: LlmConfig,
    templates: PromptTemplates,
    ledger: Mutex<CallLedger>,
    limiter: Limiter,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, cfg: LlmConfig, templates: PromptTemplates) -> Self {
        let limiter = Limiter::new(cfg.concurrency);
        Self {
            backend,
            cfg,
            templates,
            ledger: Mutex::new(CallLedger::default()),
            limiter,
        }
    }

    pub fn ledger(&self) -> CallLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn task_calls(&self, task_id: &str) -> u64 {
        self.ledger.lock().expect("ledger lock").task_calls(task_id)
    }

    fn record(&self, ctx: &CallContext, status: Option<u16>) {
        self.ledger.lock().expect("ledger lock").record(
            &ctx.task_id,
            LedgerEntry {
                role: ctx.role,
                status,
            },
        );
    }

    /// Sends one request, retrying 429, 5xx and transport timeouts with
    /// exponential backoff. Returns the first choice's text.
    pub fn chat(&self, ctx: &CallContext, req: &ChatRequest) -> Result<String, LlmError> {
        req.validate()?;
        let policy = self.cfg.retry;
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(policy.delay(attempt - 1));
            }
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.send(ctx, req)
            };
            match result {
                Ok(reply) => {
                    self.record(ctx, Some(reply.status));
                    match reply.status {
                        200..=299 => return first_choice_text(&reply.body),
                        401 | 403 => {
                            return Err(LlmError::Auth {
                                status: reply.status,
                            })
                        }
                        429 | 500..=599 => last = format!("HTTP {}", reply.status),
                        status => return Err(LlmError::HttpStatus { status }),
                    }
                }
                Err(backend::TransportError::Fatal(msg)) => {
                    self.record(ctx, None);
                    return Err(LlmError::Transport(msg));
                }
                Err(e) => {
                    self.record(ctx, None);
                    last = e.to_string();
                }
            }
            log::debug!(
                "{:?} call for {} failed ({last}), attempt {attempt}/{attempts}",
                ctx.role,
                ctx.task_id
            );
        }
        Err(LlmError::ExhaustedRetries { attempts, last })
    }

    fn request(&self, role: CallRole, messages: Vec<Message>) -> ChatRequest {
        let s = self.cfg.role(role);
        ChatRequest {
            model: s.model.clone(),
            messages,
            temperature: s.temperature,
            max_tokens: s.max_tokens,
        }
    }

    /// Sends `prompt`, parses the reply, and on a parse failure asks once
    /// more with the failure explained.
    fn ask_parsed<T>(
        &self,
        ctx: &CallContext,
        prompt: String,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let mut messages = vec![
            Message::new(Role::System, self.templates.system.clone()),
            Message::new(Role::User, prompt),
        ];
        let reply = self.chat(ctx, &self.request(ctx.role, messages.clone()))?;
        let error = match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        log::debug!(
            "{:?} reply for {} unparsable ({error}), asking for repair",
            ctx.role,
            ctx.task_id
        );
        messages.push(Message::new(Role::Assistant, reply));
        messages.push(Message::new(
            Role::User,
            render(&self.templates.repair, &[("error", &error)]),
        ));
        let reply = self.chat(ctx, &self.request(ctx.role, messages))?;
        parse(&reply).map_err(|detail| LlmError::Parse {
            role: ctx.role,
            detail,
        })
    }

    /// Asks for a new task: instruction, initial code and test file.
    pub fn generate_task(
        &self,
        template_id: &str,
        task_id: &str,
    ) -> Result<(TaskSpec, CodeVersion, TestSuite), LlmError> {
        let template = self
            .templates
            .generate
            .get(template_id)
            .ok_or_else(|| LlmError::UnknownTemplate(template_id.to_owned()))?
            .clone();
        let ctx = CallContext::new(task_id, CallRole::Generate);
        let parsed = self.ask_parsed(&ctx, template, |text| {
            let g = parse::parse_generated_task(text)?;
            let task = TaskSpec::new(task_id, g.instruction).map_err(|e| e.to_string())?;
            let tests = TestSuite::new(g.tests).map_err(|e| e.to_string())?;
            Ok((task, CodeVersion::new(0, g.code), tests))
        })?;
        Ok(parsed)
    }

    /// Asks for a corrected version given the latest failure report.
    pub fn refine_code(
        &self,
        task: &TaskSpec,
        current: &CodeVersion,
        tests: &TestSuite,
        hint: &str,
    ) -> Result<CodeVersion, LlmError> {
        let prompt = render(
            &self.templates.refine,
            &[
                ("instruction", &task.instruction),
                ("code", current.source.trim_end()),
                ("tests", tests.source.trim_end()),
                ("hint", hint),
            ],
        );
        let ctx = CallContext::new(&task.id, CallRole::Refine);
        let source = self.ask_parsed(&ctx, prompt, parse::parse_single_code_block)?;
        Ok(CodeVersion::new(current.iteration + 1, source))
    }

    /// Asks whether the pair differs in logic rather than cosmetics.
    pub fn judge_pair(&self, pair: &PreferencePair) -> Result<JudgeVerdict, LlmError> {
        let diff_minus: Vec<&str> = pair
            .diff_minus
            .entries
            .iter()
            .map(|e| e.text.as_str())
            .collect();
        let diff_minus = diff_minus.join("\n");
        let prompt = render(
            &self.templates.judge,
            &[
                ("instruction", &pair.x.instruction),
                ("chosen", pair.chosen.source.trim_end()),
                ("rejected", pair.rejected.source.trim_end()),
                ("diff_minus", &diff_minus),
            ],
        );
        let ctx = CallContext::new(&pair.x.id, CallRole::Judge);
        self.ask_parsed(&ctx, prompt, parse::parse_judge_verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::backend::ScriptedReply;
    use super::*;

    fn content(s: &str) -> ScriptedReply {
        ScriptedReply::Content { content: s.into() }
    }

    fn status(code: u16) -> ScriptedReply {
        ScriptedReply::Raw {
            status: code,
            body: Value::String("error".into()),
        }
    }

    fn client(replies: Vec<ScriptedReply>) -> (LlmClient, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::from_replies(replies));
        let cfg = LlmConfig {
            retry: RetryPolicy {
                max_attempts: 4,
                base_delay_ms: 0,
                max_delay_ms: 0,
            },
            ..LlmConfig::default()
        };
        (
            LlmClient::new(mock.clone(), cfg, PromptTemplates::default()),
            mock,
        )
    }

    fn req() -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message::new(Role::User, "hi")],
            temperature: 0.0,
            max_tokens: 10,
        }
    }

    #[test]
    fn chat_pass_through() {
        let (c, _) = client(vec![content("ok")]);
        let ctx = CallContext::new("t", CallRole::Generate);
        assert_eq!(c.chat(&ctx, &req()).unwrap(), "ok");
        assert_eq!(c.ledger().total(), 1);
    }

    #[test]
    fn chat_retries_rate_limits() {
        let (c, _) = client(vec![status(429), status(429), content("fine")]);
        let ctx = CallContext::new("t", CallRole::Refine);
        assert_eq!(c.chat(&ctx, &req()).unwrap(), "fine");
        let l = c.ledger();
        assert_eq!(l.refine, 3);
        assert_eq!(l.per_task["t"].len(), 3);
        assert!(l.is_consistent());
    }

    #[test]
    fn chat_auth_error_is_not_retried() {
        let (c, mock) = client(vec![status(401), content("never")]);
        let ctx = CallContext::new("t", CallRole::Judge);
        assert_eq!(c.chat(&ctx, &req()), Err(LlmError::Auth { status: 401 }));
        assert_eq!(mock.remaining(), 1);
        assert_eq!(c.ledger().total(), 1);
    }

    #[test]
    fn chat_exhausts_retries() {
        let (c, _) = client(vec![status(503); 4]);
        let ctx = CallContext::new("t", CallRole::Judge);
        assert!(matches!(
            c.chat(&ctx, &req()),
            Err(LlmError::ExhaustedRetries { attempts: 4, .. })
        ));
    }

    #[test]
    fn chat_timeouts_are_retried_and_malformed_bodies_rejected() {
        let (c, _) = client(vec![
            ScriptedReply::Timeout { timeout: true },
            ScriptedReply::Raw {
                status: 200,
                body: serde_json::json!({"choices": []}),
            },
        ]);
        let ctx = CallContext::new("t", CallRole::Judge);
        assert!(matches!(
            c.chat(&ctx, &req()),
            Err(LlmError::MalformedResponse(_))
        ));
        assert_eq!(c.ledger().judge, 2);
    }

    #[test]
    fn chat_rejects_bad_temperature() {
        let (c, _) = client(vec![]);
        let mut r = req();
        r.temperature = 2.5;
        assert!(matches!(
            c.chat(&CallContext::new("t", CallRole::Judge), &r),
            Err(LlmError::InvalidRequest(_))
        ));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 300,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(300));
    }
}
