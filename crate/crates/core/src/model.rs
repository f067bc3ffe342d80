//! Shared value types for the synthesis pipeline.
//!
//! Everything here is an immutable value once constructed. Source text is
//! normalized to LF line endings on the way in so that diffs and character
//! spans are identical across platforms.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Default bound on captured stderr kept in an [`ExecutionOutcome`].
pub const DEFAULT_STDERR_EXCERPT_BYTES: usize = 4096;

/// Default refinement budget after the initial attempt.
pub const DEFAULT_MAX_ITERATIONS: usize = 5;

/// Splits program text into lines on LF.
///
/// A trailing terminator does not produce an empty final line, so `"a\nb\n"`
/// and `"a\nb"` both give `["a", "b"]`.
pub fn split_lines(source: &str) -> Vec<&str> {
    source.split_terminator('\n').collect()
}

/// Converts CRLF (and lone CR) line endings to LF.
pub fn normalize_newlines(source: &str) -> String {
    if !source.contains('\r') {
        return source.to_owned();
    }
    source.replace("\r\n", "\n").replace('\r', "\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    #[serde(default)]
    pub env_notes: Vec<String>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>) -> Result<Self, ModelError> {
        let task = Self {
            id: id.into(),
            instruction: normalize_newlines(&instruction.into()),
            env_notes: Vec::new(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.trim().is_empty() {
            return Err(ModelError::Invalid("task id is empty".into()));
        }
        if self.instruction.trim().is_empty() {
            return Err(ModelError::Invalid(format!(
                "task {}: instruction is empty",
                self.id
            )));
        }
        Ok(())
    }
}

/// One version of a program in a refinement history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeVersion {
    pub iteration: usize,
    pub source: String,
    pub line_count: usize,
}

impl CodeVersion {
    pub fn new(iteration: usize, source: impl AsRef<str>) -> Self {
        let source = normalize_newlines(source.as_ref());
        let line_count = split_lines(&source).len();
        Self {
            iteration,
            source,
            line_count,
        }
    }

    pub fn lines(&self) -> Vec<&str> {
        split_lines(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub source: String,
}

impl TestSuite {
    pub fn new(source: impl AsRef<str>) -> Result<Self, ModelError> {
        let source = normalize_newlines(source.as_ref());
        if source.trim().is_empty() {
            return Err(ModelError::Invalid("test suite is empty".into()));
        }
        Ok(Self { source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecStatus {
    Pass,
    AssertFail,
    RuntimeError,
    Timeout,
    SetupError,
}

impl ExecStatus {
    pub fn name(self) -> &'static str {
        match self {
            ExecStatus::Pass => "Pass",
            ExecStatus::AssertFail => "AssertFail",
            ExecStatus::RuntimeError => "RuntimeError",
            ExecStatus::Timeout => "Timeout",
            ExecStatus::SetupError => "SetupError",
        }
    }

    pub fn is_pass(self) -> bool {
        self == ExecStatus::Pass
    }
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Classified result of running a program against its tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub exit_code: Option<i32>,
    pub stderr_excerpt: String,
    pub duration_ms: u64,
}

impl ExecutionOutcome {
    pub fn passed(&self) -> bool {
        self.status.is_pass()
    }
}

/// Truncates `text` to at most `max_bytes` bytes on a char boundary.
pub fn truncate_utf8(text: &str, max_bytes: usize) -> &str {
    if text.len() <= max_bytes {
        return text;
    }
    let mut end = max_bytes;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "iteration")]
pub enum Terminal {
    PassedAtZero,
    PassedAtT(usize),
    Exhausted,
}

impl Terminal {
    /// Iteration at which the trace first passed, if it ever did.
    pub fn pass_iteration(self) -> Option<usize> {
        match self {
            Terminal::PassedAtZero => Some(0),
            Terminal::PassedAtT(t) => Some(t),
            Terminal::Exhausted => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub code: CodeVersion,
    pub outcome: ExecutionOutcome,
}

/// Full debugging history of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub task: TaskSpec,
    pub tests: TestSuite,
    pub versions: Vec<TraceStep>,
    pub terminal: Terminal,
}

impl RefinementTrace {
    pub fn validate(&self, max_iterations: usize) -> Result<(), ModelError> {
        if self.versions.is_empty() {
            return Err(ModelError::Invalid("trace has no versions".into()));
        }
        if self.versions.len() > max_iterations + 1 {
            return Err(ModelError::Invalid(format!(
                "trace has {} versions, cap is {}",
                self.versions.len(),
                max_iterations + 1
            )));
        }
        for (i, step) in self.versions.iter().enumerate() {
            if step.code.iteration != i {
                return Err(ModelError::Invalid(format!(
                    "version {i} carries iteration {}",
                    step.code.iteration
                )));
            }
        }
        let first_pass = self.versions.iter().position(|s| s.outcome.passed());
        let expected = match first_pass {
            Some(0) => Terminal::PassedAtZero,
            Some(t) => Terminal::PassedAtT(t),
            None => Terminal::Exhausted,
        };
        if expected != self.terminal {
            return Err(ModelError::Invalid(format!(
                "terminal {:?} disagrees with outcomes ({expected:?})",
                self.terminal
            )));
        }
        if let Some(t) = first_pass {
            if t + 1 != self.versions.len() {
                return Err(ModelError::Invalid("versions recorded after a pass".into()));
            }
        }
        Ok(())
    }
}

/// One line of a program that is not part of the line alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, String)", into = "(usize, String)")]
pub struct DiffEntry {
    pub index: usize,
    pub text: String,
}

impl From<(usize, String)> for DiffEntry {
    fn from((index, text): (usize, String)) -> Self {
        Self { index, text }
    }
}

impl From<DiffEntry> for (usize, String) {
    fn from(e: DiffEntry) -> Self {
        (e.index, e.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiffLines {
    pub entries: Vec<DiffEntry>,
}

impl DiffLines {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.index)
    }

    /// Builds entries for `indices` by reading the text back from `source`.
    pub fn from_indices(source: &str, indices: impl IntoIterator<Item = usize>) -> Self {
        let lines = split_lines(source);
        let entries = indices
            .into_iter()
            .filter_map(|i| {
                lines.get(i).map(|t| DiffEntry {
                    index: i,
                    text: (*t).to_owned(),
                })
            })
            .collect();
        Self { entries }
    }

    /// Checks ordering and that each entry's text matches `lines`.
    pub fn check_against(&self, lines: &[&str]) -> Result<(), String> {
        let mut prev: Option<usize> = None;
        for e in &self.entries {
            if prev.is_some_and(|p| e.index <= p) {
                return Err(format!(
                    "diff indices not strictly increasing at {}",
                    e.index
                ));
            }
            prev = Some(e.index);
            match lines.get(e.index) {
                None => return Err(format!("diff index {} out of range", e.index)),
                Some(l) if *l != e.text => {
                    return Err(format!("diff text mismatch at line {}", e.index));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub trace_id: String,
    pub chosen_iteration: usize,
    pub rejected_iteration: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub x: TaskSpec,
    pub chosen: CodeVersion,
    pub rejected: CodeVersion,
    pub diff_plus: DiffLines,
    pub diff_minus: DiffLines,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairVerdict {
    Ok,
    Violation(String),
}

impl PairVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, PairVerdict::Ok)
    }
}

/// Checks every [`PreferencePair`] invariant and reports the first violation.
pub fn validate_pair(pair: &PreferencePair) -> PairVerdict {
    if let Err(e) = pair.x.validate() {
        return PairVerdict::Violation(e.to_string());
    }
    let p = &pair.provenance;
    if p.chosen_iteration <= p.rejected_iteration {
        return PairVerdict::Violation("chosen_iteration > rejected_iteration".into());
    }
    if pair.chosen.iteration != p.chosen_iteration
        || pair.rejected.iteration != p.rejected_iteration
    {
        return PairVerdict::Violation("provenance iterations disagree with code versions".into());
    }
    let plus_lines = pair.chosen.lines();
    let minus_lines = pair.rejected.lines();
    if pair.chosen.line_count != plus_lines.len() || pair.rejected.line_count != minus_lines.len() {
        return PairVerdict::Violation("line_count mismatch".into());
    }
    if let Err(e) = pair.diff_plus.check_against(&plus_lines) {
        return PairVerdict::Violation(format!("diff_plus: {e}"));
    }
    if let Err(e) = pair.diff_minus.check_against(&minus_lines) {
        return PairVerdict::Violation(format!("diff_minus: {e}"));
    }
    let keep = |lines: &[&str], diff: &DiffLines| -> Vec<String> {
        let mut drop = diff.indices().peekable();
        let mut out = Vec::with_capacity(lines.len());
        for (i, l) in lines.iter().enumerate() {
            if drop.peek() == Some(&i) {
                drop.next();
            } else {
                out.push((*l).to_owned());
            }
        }
        out
    };
    if keep(&plus_lines, &pair.diff_plus) != keep(&minus_lines, &pair.diff_minus) {
        return PairVerdict::Violation("LCS reconstruction mismatch".into());
    }
    PairVerdict::Ok
}

/// Boolean selection over the tokens of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMask {
    pub tokenizer_id: String,
    pub mask: Vec<bool>,
    pub token_spans: Vec<(usize, usize)>,
}

impl TokenMask {
    pub fn selected(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid value: {0}")]
    Invalid(String),
}
