//! Client behavior against scripted transcripts and a local HTTP stub.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use prefforge::diff::extract_diff;
use prefforge::filters::{extend_with_judge, FilterVerdict, JUDGE_UNAVAILABLE};
use prefforge::llm::backend::ScriptedReply;
use prefforge::llm::prompts::PromptTemplates;
use prefforge::llm::{
    CallContext, CallRole, ChatRequest, HttpBackend, LlmClient, LlmConfig, LlmError, Message,
    MockBackend, Role, Secret, Transcript,
};
use prefforge::model::{CodeVersion, PreferencePair, Provenance, TaskSpec, TestSuite};

fn content(s: &str) -> ScriptedReply {
    ScriptedReply::Content { content: s.into() }
}

fn fast_config() -> LlmConfig {
    let mut cfg = LlmConfig::default();
    cfg.retry.base_delay_ms = 1;
    cfg.retry.max_delay_ms = 2;
    cfg
}

fn client(replies: Vec<ScriptedReply>) -> (LlmClient, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::from_replies(replies));
    (
        LlmClient::new(mock.clone(), fast_config(), PromptTemplates::default()),
        mock,
    )
}

fn pair() -> PreferencePair {
    let chosen = CodeVersion::new(1, "def f(x):\n    return x + 1\n");
    let rejected = CodeVersion::new(0, "def f(x):\n    return x\n");
    let (diff_plus, diff_minus) = extract_diff(&chosen, &rejected);
    PreferencePair {
        x: TaskSpec::new("p1", "Increment x.").unwrap(),
        chosen,
        rejected,
        diff_plus,
        diff_minus,
        provenance: Provenance {
            trace_id: "p1".into(),
            chosen_iteration: 1,
            rejected_iteration: 0,
            rng_seed: 0,
        },
    }
}

#[test]
fn generate_task_from_three_blocks() {
    let reply = "```instruction\nReverse a string.\n```\n```code\ndef rev(s):\n    return s[::-1]\n```\n```tests\nfrom solution import rev\nassert rev('ab') == 'ba'\n```\n";
    let (c, mock) = client(vec![content(reply)]);
    let (task, code, tests) = c.generate_task("default", "g1").unwrap();
    assert_eq!(task.id, "g1");
    assert_eq!(task.instruction, "Reverse a string.");
    assert_eq!(code.iteration, 0);
    assert!(code.source.contains("s[::-1]"));
    assert!(tests.source.contains("assert rev"));
    let calls = mock.calls();
    assert_eq!(calls[0].ctx, CallContext::new("g1", CallRole::Generate));
    assert_eq!(calls[0].request.temperature, 0.7);
}

#[test]
fn generate_missing_section_is_repaired_once() {
    let bad = "```code\nx = 1\n```";
    let (c, mock) = client(vec![content(bad), content(bad)]);
    let err = c.generate_task("default", "g1").unwrap_err();
    assert!(matches!(
        err,
        LlmError::Parse {
            role: CallRole::Generate,
            ..
        }
    ));
    assert_eq!(mock.calls().len(), 2);
    assert_eq!(c.ledger().generate, 2);
    assert!(matches!(
        c.generate_task("nope", "g2"),
        Err(LlmError::UnknownTemplate(_))
    ));
}

#[test]
fn refine_prompt_carries_latest_hint() {
    let (c, mock) = client(vec![content("```python\ndef f(x):\n    return x + 1\n```")]);
    let task = TaskSpec::new("t", "Increment x.").unwrap();
    let current = CodeVersion::new(2, "def f(x):\n    return x\n");
    let tests = TestSuite::new("from solution import f\nassert f(1) == 2\n").unwrap();
    let next = c
        .refine_code(
            &task,
            &current,
            &tests,
            "TEST FAILURE (AssertFail) exit code 1\nAssertionError",
        )
        .unwrap();
    assert_eq!(next.iteration, 3);
    assert_eq!(next.source, "def f(x):\n    return x + 1\n");
    let req = &mock.calls()[0].request;
    assert_eq!(req.messages[0].role, Role::System);
    let user = &req.messages[1].content;
    assert!(user.contains("Increment x."));
    assert!(user.contains("assert f(1) == 2"));
    assert!(user.contains("TEST FAILURE (AssertFail) exit code 1"));
}

#[test]
fn refine_with_two_code_blocks_is_ambiguous() {
    let two = "```python\na = 1\n```\n```python\nb = 2\n```";
    let (c, _) = client(vec![content(two), content("```python\nb = 2\n```")]);
    let task = TaskSpec::new("t", "x").unwrap();
    let tests = TestSuite::new("import solution\n").unwrap();
    let next = c
        .refine_code(&task, &CodeVersion::new(0, "a = 0\n"), &tests, "hint")
        .unwrap();
    assert_eq!(next.source, "b = 2\n");
    assert_eq!(c.ledger().refine, 2);
}

#[test]
fn judge_verdicts() {
    let (c, mock) = client(vec![
        content(r#"{"significant": true, "reason": "adds one"}"#),
        content("```json\n{\"significant\": false, \"reason\": \"whitespace only\"}\n```"),
    ]);
    let p = pair();
    assert!(c.judge_pair(&p).unwrap().significant);
    let v = c.judge_pair(&p).unwrap();
    assert!(!v.significant);
    assert_eq!(v.reason, "whitespace only");
    let req = &mock.calls()[0].request;
    assert_eq!(req.temperature, 0.0);
    assert!(req.messages[1].content.contains("    return x\n"));
}

#[test]
fn judge_unavailable_quarantines() {
    let (c, _) = client(vec![content("maybe"), content("still not sure")]);
    let mut verdict = FilterVerdict {
        accepted: true,
        quarantined: false,
        rule_results: vec![],
    };
    extend_with_judge(&mut verdict, &pair(), Some(&c));
    assert!(!verdict.accepted);
    assert!(verdict.quarantined);
    let last = verdict.rule_results.last().unwrap();
    assert!(last.detail.contains(JUDGE_UNAVAILABLE));
}

#[test]
fn retries_are_counted_in_the_ledger() {
    let (c, _) = client(vec![
        ScriptedReply::Raw {
            status: 503,
            body: serde_json::json!({}),
        },
        ScriptedReply::Timeout { timeout: true },
        ScriptedReply::Raw {
            status: 429,
            body: serde_json::json!({}),
        },
        content(r#"{"significant": true, "reason": "r"}"#),
    ]);
    assert!(c.judge_pair(&pair()).unwrap().significant);
    let l = c.ledger();
    assert_eq!(l.judge, 4);
    assert_eq!(l.task_calls("p1"), 4);
    assert!(l.is_consistent());
}

#[test]
fn retry_budget_is_bounded() {
    let replies = (0..10)
        .map(|_| ScriptedReply::Raw {
            status: 500,
            body: serde_json::json!({}),
        })
        .collect();
    let (c, mock) = client(replies);
    let err = c.judge_pair(&pair()).unwrap_err();
    assert!(matches!(
        err,
        LlmError::ExhaustedRetries { attempts: 5, .. }
    ));
    assert_eq!(mock.remaining(), 5);
}

#[test]
fn auth_failure_is_not_retried() {
    let (c, mock) = client(vec![
        ScriptedReply::Raw {
            status: 401,
            body: serde_json::json!({}),
        },
        content("unused"),
    ]);
    assert_eq!(
        c.judge_pair(&pair()).unwrap_err(),
        LlmError::Auth { status: 401 }
    );
    assert_eq!(mock.remaining(), 1);
    assert_eq!(c.ledger().total(), 1);
}

#[test]
fn per_task_queues_do_not_interfere() {
    let t = Transcript::from_json(
        r#"{"tasks": {"a": [{"content": "{\"significant\": true, \"reason\": \"a\"}"}],
                      "p1": [{"content": "{\"significant\": false, \"reason\": \"p1\"}"}]}}"#,
    )
    .unwrap();
    let c = LlmClient::new(
        Arc::new(MockBackend::new(t)),
        fast_config(),
        PromptTemplates::default(),
    );
    let v = c.judge_pair(&pair()).unwrap();
    assert_eq!(v.reason, "p1");
}

fn one_shot_server(
    status: u16,
    body: &'static str,
) -> (String, std::thread::JoinHandle<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            head.push_str(&line);
        }
        let mut req_body = vec![0u8; len];
        reader.read_exact(&mut req_body).unwrap();
        let resp = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(resp.as_bytes()).unwrap();
        (head, String::from_utf8(req_body).unwrap())
    });
    (format!("http://{addr}/v1"), handle)
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "m".into(),
        messages: vec![Message::new(Role::User, "hello")],
        temperature: 0.0,
        max_tokens: 16,
    }
}

#[test]
fn http_backend_round_trip() {
    let (base, server) = one_shot_server(
        200,
        r#"{"choices": [{"index": 0, "message": {"role": "assistant", "content": "hi there"}}]}"#,
    );
    let backend = HttpBackend::new(&base, Secret::new("sk-local"), Duration::from_secs(5)).unwrap();
    let c = LlmClient::new(Arc::new(backend), fast_config(), PromptTemplates::default());
    let text = c
        .chat(&CallContext::new("h", CallRole::Judge), &request())
        .unwrap();
    assert_eq!(text, "hi there");
    let (head, body) = server.join().unwrap();
    assert!(head.starts_with("POST /v1/chat/completions "));
    assert!(head
        .to_ascii_lowercase()
        .contains("authorization: bearer sk-local"));
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["model"], "m");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["max_tokens"], 16);
}

#[test]
fn http_auth_error_hides_the_key() {
    let (base, server) = one_shot_server(401, r#"{"error": {"message": "bad key"}}"#);
    let backend = HttpBackend::new(
        &base,
        Secret::new("sk-hidden-value"),
        Duration::from_secs(5),
    )
    .unwrap();
    let c = LlmClient::new(Arc::new(backend), fast_config(), PromptTemplates::default());
    let err = c
        .chat(&CallContext::new("h", CallRole::Judge), &request())
        .unwrap_err();
    assert_eq!(err, LlmError::Auth { status: 401 });
    assert!(!err.to_string().contains("sk-hidden-value"));
    assert!(!format!("{c:?}").contains("sk-hidden-value"));
    server.join().unwrap();
}

#[test]
fn http_connection_refused_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let backend = HttpBackend::new(
        &format!("http://{addr}"),
        Secret::new("k"),
        Duration::from_secs(2),
    )
    .unwrap();
    let mut cfg = fast_config();
    cfg.retry.max_attempts = 2;
    let c = LlmClient::new(Arc::new(backend), cfg, PromptTemplates::default());
    let err = c
        .chat(&CallContext::new("h", CallRole::Judge), &request())
        .unwrap_err();
    assert!(
        matches!(
            err,
            LlmError::ExhaustedRetries { attempts: 2, .. } | LlmError::Transport(_)
        ),
        "{err:?}"
    );
}
