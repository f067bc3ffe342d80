//! Runs a program against its test file in a child process.
//!
//! Each run gets a fresh temporary directory, a scrubbed environment and its
//! own process group. On timeout the whole group is killed, so helpers the
//! tests spawned do not outlive the run. Container or VM isolation is a
//! deployment concern and not attempted here.
//!
//! Network denial is limited to pointing the usual proxy variables at a dead
//! local port; code that opens raw sockets is not stopped.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{
    truncate_utf8, CodeVersion, ExecStatus, ExecutionOutcome, TestSuite,
    DEFAULT_STDERR_EXCERPT_BYTES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NetworkPolicy {
    #[default]
    Denied,
    Allowed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxLimits {
    pub wall_timeout_ms: u64,
    pub max_output_bytes: usize,
    pub stderr_excerpt_bytes: usize,
    pub network: NetworkPolicy,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            wall_timeout_ms: 10_000,
            max_output_bytes: 65_536,
            stderr_excerpt_bytes: DEFAULT_STDERR_EXCERPT_BYTES,
            network: NetworkPolicy::Denied,
        }
    }
}

/// How to lay out and launch one test run for a language.
///
/// `command` entries may use the placeholders `{test_file}` and
/// `{code_file}`, which expand to file names inside the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeSpec {
    pub name: String,
    pub command: Vec<String>,
    pub code_file: String,
    pub test_file: String,
    /// Regexes over stderr that identify a failed assertion.
    pub assertion_signatures: Vec<String>,
    /// Regex whose first capture group names the raised exception class.
    pub exception_pattern: String,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        Self::python()
    }
}

impl RuntimeSpec {
    pub fn python() -> Self {
        Self {
            name: "python".into(),
            command: vec!["python3".into(), "-B".into(), "{test_file}".into()],
            code_file: "solution.py".into(),
            test_file: "test_solution.py".into(),
            assertion_signatures: vec![
                r"(?m)^AssertionError\b".into(),
                r"(?m)^E\s+AssertionError\b".into(),
                r"(?m)^FAILED \(failures=\d+\)\s*$".into(),
            ],
            exception_pattern:
                r"(?m)^([A-Za-z_][A-Za-z0-9_.]*(?:Error|Exception|Exit|Interrupt|Iteration)):?"
                    .into(),
        }
    }
}

/// Maps `(exit code, stderr)` to a status. Compiled once per runtime.
#[derive(Debug, Clone)]
pub struct FailureClassifier {
    assertion: Vec<Regex>,
    exception: Regex,
}

impl FailureClassifier {
    pub fn new(runtime: &RuntimeSpec) -> Result<Self, SandboxError> {
        let compile =
            |p: &str| Regex::new(p).map_err(|e| SandboxError::BadSignature(format!("{p}: {e}")));
        Ok(Self {
            assertion: runtime
                .assertion_signatures
                .iter()
                .map(|s| compile(s))
                .collect::<Result<_, _>>()?,
            exception: compile(&runtime.exception_pattern)?,
        })
    }

    pub fn python() -> Self {
        Self::new(&RuntimeSpec::python()).expect("built-in signatures compile")
    }

    pub fn classify(&self, exit_code: Option<i32>, stderr: &str) -> ExecStatus {
        match exit_code {
            None => ExecStatus::Timeout,
            Some(0) => ExecStatus::Pass,
            Some(_) if self.assertion.iter().any(|r| r.is_match(stderr)) => ExecStatus::AssertFail,
            Some(_) => ExecStatus::RuntimeError,
        }
    }

    /// Last exception class named at the start of a stderr line.
    pub fn exception_class(&self, stderr: &str) -> Option<String> {
        self.exception
            .captures_iter(stderr)
            .last()
            .and_then(|c| c.get(1))
            .map(|m| {
                m.as_str()
                    .rsplit('.')
                    .next()
                    .unwrap_or(m.as_str())
                    .to_owned()
            })
    }
}

/// Python-runtime shorthand for [`FailureClassifier::classify`].
pub fn classify_failure(exit_code: Option<i32>, stderr: &str) -> ExecStatus {
    FailureClassifier::python().classify(exit_code, stderr)
}

#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("invalid failure signature {0}")]
    BadSignature(String),
    #[error("render_error_hint called on a passing outcome")]
    HintOnPass,
}

/// Executes test runs for one runtime under fixed limits.
#[derive(Debug, Clone)]
pub struct Sandbox {
    runtime: RuntimeSpec,
    limits: SandboxLimits,
    classifier: FailureClassifier,
}

static RUN_COUNTER: AtomicU64 = AtomicU64::new(0);

fn next_run_id() -> String {
    format!(
        "prefforge-run-{}-{}-",
        std::process::id(),
        RUN_COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

fn setup_error(detail: String, started: Instant) -> ExecutionOutcome {
    ExecutionOutcome {
        status: ExecStatus::SetupError,
        exit_code: None,
        stderr_excerpt: detail,
        duration_ms: started.elapsed().as_millis() as u64,
    }
}

/// Reads a pipe to the end, keeping at most `cap` bytes.
fn drain<R: Read + Send + 'static>(mut pipe: R, cap: usize) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn kill_group(child: &mut Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: the child was started as leader of its own process group.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
    let _ = child.kill();
}

fn exit_code_of(status: ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

impl Sandbox {
    pub fn new(runtime: RuntimeSpec, limits: SandboxLimits) -> Result<Self, SandboxError> {
        let classifier = FailureClassifier::new(&runtime)?;
        Ok(Self {
            runtime,
            limits,
            classifier,
        })
    }

    pub fn python(limits: SandboxLimits) -> Self {
        Self::new(RuntimeSpec::python(), limits).expect("built-in runtime is valid")
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.limits
    }

    pub fn classifier(&self) -> &FailureClassifier {
        &self.classifier
    }

    /// Checks that the runtime executable can be started at all.
    pub fn probe_runtime(&self) -> Result<(), String> {
        let program = self
            .runtime
            .command
            .first()
            .ok_or_else(|| "runtime command is empty".to_owned())?;
        Command::new(program)
            .arg("--version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|_| ())
            .map_err(|e| format!("cannot start runtime {program:?}: {e}"))
    }

    pub fn run_tests(&self, code: &CodeVersion, tests: &TestSuite) -> ExecutionOutcome {
        let started = Instant::now();
        let dir = match tempfile::Builder::new().prefix(&next_run_id()).tempdir() {
            Ok(d) => d,
            Err(e) => return setup_error(format!("cannot create run directory: {e}"), started),
        };
        let outcome = self.run_in(dir.path(), code, tests, started);
        if let Err(e) = dir.close() {
            log::warn!("failed to remove sandbox directory: {e}");
        }
        outcome
    }

    fn run_in(
        &self,
        dir: &Path,
        code: &CodeVersion,
        tests: &TestSuite,
        started: Instant,
    ) -> ExecutionOutcome {
        let rt = &self.runtime;
        for (name, body) in [
            (&rt.code_file, &code.source),
            (&rt.test_file, &tests.source),
        ] {
            if let Err(e) = std::fs::write(dir.join(name), body) {
                return setup_error(format!("cannot write {name}: {e}"), started);
            }
        }
        let argv: Vec<String> = rt
            .command
            .iter()
            .map(|a| {
                a.replace("{test_file}", &rt.test_file)
                    .replace("{code_file}", &rt.code_file)
            })
            .collect();
        let Some((program, args)) = argv.split_first() else {
            return setup_error("runtime command is empty".into(), started);
        };

        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(dir)
            .env_clear()
            .env(
                "PATH",
                std::env::var("PATH").unwrap_or_else(|_| "/usr/bin:/bin".into()),
            )
            .env("HOME", dir)
            .env("TMPDIR", dir)
            .env("LANG", "C.UTF-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        if self.limits.network == NetworkPolicy::Denied {
            for var in [
                "http_proxy",
                "https_proxy",
                "HTTP_PROXY",
                "HTTPS_PROXY",
                "ALL_PROXY",
            ] {
                cmd.env(var, "http://127.0.0.1:9");
            }
        }

        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                return setup_error(format!("cannot start runtime {program:?}: {e}"), started)
            }
        };
        let cap = self.limits.max_output_bytes;
        let stdout = drain(child.stdout.take().expect("piped"), cap);
        let stderr = drain(child.stderr.take().expect("piped"), cap);

        let timeout = Duration::from_millis(self.limits.wall_timeout_ms);
        let mut poll = Duration::from_millis(1);
        let exit = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if started.elapsed() >= timeout => break None,
                Ok(None) => {
                    thread::sleep(poll);
                    poll = (poll * 2).min(Duration::from_millis(20));
                }
                Err(e) => {
                    kill_group(&mut child);
                    let _ = child.wait();
                    return setup_error(format!("lost track of test process: {e}"), started);
                }
            }
        };
        // Reap stragglers in the group even on normal exit.
        kill_group(&mut child);
        let _ = child.wait();
        let elapsed_ms = started.elapsed().as_millis() as u64;
        let _ = stdout.join();
        let err_bytes = stderr.join().unwrap_or_default();
        let err_text = String::from_utf8_lossy(&err_bytes);
        let excerpt = truncate_utf8(&err_text, self.limits.stderr_excerpt_bytes).to_owned();

        match exit {
            None => ExecutionOutcome {
                status: ExecStatus::Timeout,
                exit_code: None,
                stderr_excerpt: excerpt,
                duration_ms: elapsed_ms.max(self.limits.wall_timeout_ms),
            },
            Some(status) => {
                let code = exit_code_of(status);
                ExecutionOutcome {
                    status: self.classifier.classify(Some(code), &err_text),
                    exit_code: Some(code),
                    stderr_excerpt: excerpt,
                    duration_ms: elapsed_ms.min(self.limits.wall_timeout_ms),
                }
            }
        }
    }
}

/// Header budget on top of the stderr excerpt in a rendered hint.
pub const HINT_HEADER_BYTES: usize = 128;

/// Plain-text failure report embedded in the refinement prompt.
pub fn render_error_hint(
    outcome: &ExecutionOutcome,
    max_output_bytes: usize,
) -> Result<String, SandboxError> {
    let header = match outcome.status {
        ExecStatus::Pass => return Err(SandboxError::HintOnPass),
        ExecStatus::Timeout => format!("TEST FAILURE (Timeout) after {} ms", outcome.duration_ms),
        status => match outcome.exit_code {
            Some(code) => format!("TEST FAILURE ({status}) exit code {code}"),
            None => format!("TEST FAILURE ({status})"),
        },
    };
    let body = truncate_utf8(&outcome.stderr_excerpt, max_output_bytes);
    let header = truncate_utf8(&header, HINT_HEADER_BYTES - 1);
    if body.is_empty() {
        Ok(header.to_owned())
    } else {
        Ok(format!("{header}\n{body}"))
    }
}
