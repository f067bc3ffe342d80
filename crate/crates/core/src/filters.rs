//! Rule-based and judge-based quality filters for candidate pairs.
//!
//! Rules run in a fixed order and stop at the first failure:
//! `comments_only`, `diff_too_long`, `too_many_tokens`, `ast_identical`,
//! then `judge`. Rules after a failure are recorded as skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{JudgeVerdict, LlmClient, LlmError};
use crate::mask::TokenizerBackend;
use crate::model::PreferencePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    CommentsOnly,
    DiffTooLong,
    TooManyTokens,
    AstIdentical,
    Judge,
}

impl RuleName {
    pub const RULES: [RuleName; 4] = [
        RuleName::CommentsOnly,
        RuleName::DiffTooLong,
        RuleName::TooManyTokens,
        RuleName::AstIdentical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::CommentsOnly => "comments_only",
            RuleName::DiffTooLong => "diff_too_long",
            RuleName::TooManyTokens => "too_many_tokens",
            RuleName::AstIdentical => "ast_identical",
            RuleName::Judge => "judge",
        }
    }
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: RuleName,
    pub pass: bool,
    pub detail: String,
}

pub const SKIPPED: &str = "skipped";
pub const JUDGE_UNAVAILABLE: &str = "judge_unavailable";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    /// Set when the judge could not deliver a verdict.
    pub quarantined: bool,
    pub rule_results: Vec<RuleResult>,
}

impl FilterVerdict {
    /// First rule that actually failed (not skipped).
    pub fn failing_rule(&self) -> Option<RuleName> {
        self.rule_results
            .iter()
            .find(|r| !r.pass && r.detail != SKIPPED)
            .map(|r| r.rule)
    }

    fn push(&mut self, result: RuleResult) {
        self.accepted &= result.pass;
        self.rule_results.push(result);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterLimits {
    pub max_diff_lines: usize,
    pub max_tokens: usize,
    /// Count instruction tokens together with each side's code.
    pub count_instruction_tokens: bool,
    /// Prefixes that start a line comment.
    pub comment_prefixes: Vec<String>,
    pub skip_judge: bool,
}

impl Default for FilterLimits {
    fn default() -> Self {
        Self {
            max_diff_lines: 20,
            max_tokens: 2048,
            count_instruction_tokens: false,
            comment_prefixes: vec!["#".into()],
            skip_judge: false,
        }
    }
}

impl FilterLimits {
    pub fn is_comment_or_blank(&self, line: &str) -> bool {
        let t = line.trim_start();
        t.is_empty()
            || self
                .comment_prefixes
                .iter()
                .any(|p| t.starts_with(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxError {
    #[error("syntax error: {0}")]
    Invalid(String),
    #[error("syntax backend unavailable: {0}")]
    Backend(String),
}

/// Parser producing a digest that ignores positions, comments and layout.
pub trait SyntaxBackend: Send + Sync {
    fn id(&self) -> &str;
    fn canonical_form(&self, source: &str) -> Result<String, SyntaxError>;
}

const AST_DUMP: &str = r#"
import ast, sys
src = sys.stdin.read()
try:
    tree = ast.parse(src)
except SyntaxError as e:
    sys.stdout.write("SYNTAX %s (line %s)" % (e.msg, e.lineno))
    sys.exit(3)
sys.stdout.write(ast.dump(tree, annotate_fields=True, include_attributes=False))
"#;

/// Digests the standard `ast` dump from a Python interpreter. Docstrings
/// remain part of the tree.
#[derive(Debug, Clone)]
pub struct PythonAstBackend {
    interpreter: String,
}

impl Default for PythonAstBackend {
    fn default() -> Self {
        Self {
            interpreter: "python3".into(),
        }
    }
}

impl PythonAstBackend {
    pub fn new(interpreter: impl Into<String>) -> Self {
        Self {
            interpreter: interpreter.into(),
        }
    }
}

impl SyntaxBackend for PythonAstBackend {
    fn id(&self) -> &str {
        "python-ast-v1"
    }

    fn canonical_form(&self, source: &str) -> Result<String, SyntaxError> {
        let mut child = Command::new(&self.interpreter)
            .args(["-I", "-c", AST_DUMP])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| SyntaxError::Backend(format!("{}: {e}", self.interpreter)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(source.as_bytes())
                .map_err(|e| SyntaxError::Backend(e.to_string()))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| SyntaxError::Backend(e.to_string()))?;
        let text = String::from_utf8_lossy(&out.stdout);
        match out.status.code() {
            Some(0) => Ok(hex::encode(Sha256::digest(text.as_bytes()))),
            Some(3) => Err(SyntaxError::Invalid(
                text.trim_start_matches("SYNTAX ").to_owned(),
            )),
            _ => Err(SyntaxError::Backend(format!(
                "interpreter failed: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("chosen sample of {task} does not parse ({source}); tests passed, so the syntax backend is suspect")]
    ChosenUnparsable { task: String, source: SyntaxError },
    #[error("syntax backend failure: {0}")]
    Backend(SyntaxError),
}

fn count_tokens(tokenizer: &dyn TokenizerBackend, code: &str, instruction: Option<&str>) -> usize {
    tokenizer.count_tokens(code) + instruction.map_or(0, |i| tokenizer.count_tokens(i))
}

/// Evaluates one rule on its own, without regard to the others.
pub fn evaluate_rule(
    rule: RuleName,
    pair: &PreferencePair,
    tokenizer: &dyn TokenizerBackend,
    syntax: &dyn SyntaxBackend,
    limits: &FilterLimits,
) -> Result<RuleResult, FilterError> {
    let (pass, detail) = match rule {
        RuleName::CommentsOnly => {
            let substantive = pair
                .diff_minus
                .entries
                .iter()
                .filter(|e| !limits.is_comment_or_blank(&e.text))
                .count();
            if pair.diff_minus.is_empty() {
                (false, "D- is empty".to_owned())
            } else if substantive == 0 {
                (
                    false,
                    format!(
                        "all {} D- lines are comments or blank",
                        pair.diff_minus.len()
                    ),
                )
            } else {
                (true, format!("{substantive} substantive D- lines"))
            }
        }
        RuleName::DiffTooLong => {
            let n = pair.diff_minus.len();
            (
                n <= limits.max_diff_lines,
                format!("D- has {n} lines (limit {})", limits.max_diff_lines),
            )
        }
        RuleName::TooManyTokens => {
            let instr = limits
                .count_instruction_tokens
                .then_some(pair.x.instruction.as_str());
            let chosen = count_tokens(tokenizer, &pair.chosen.source, instr);
            let rejected = count_tokens(tokenizer, &pair.rejected.source, instr);
            (
                chosen <= limits.max_tokens && rejected <= limits.max_tokens,
                format!(
                    "{} tokens: chosen {chosen}, rejected {rejected} (limit {})",
                    tokenizer.id(),
                    limits.max_tokens
                ),
            )
        }
        RuleName::AstIdentical => {
            let chosen = match syntax.canonical_form(&pair.chosen.source) {
                Ok(d) => d,
                Err(source @ SyntaxError::Invalid(_)) => {
                    return Err(FilterError::ChosenUnparsable {
                        task: pair.x.id.clone(),
                        source,
                    })
                }
                Err(e) => return Err(FilterError::Backend(e)),
            };
            match syntax.canonical_form(&pair.rejected.source) {
                Ok(rejected) if rejected == chosen => {
                    (false, format!("{} digests are identical", syntax.id()))
                }
                Ok(_) => (true, format!("{} digests differ", syntax.id())),
                Err(SyntaxError::Invalid(msg)) => {
                    (true, format!("rejected sample does not parse: {msg}"))
                }
                Err(e) => return Err(FilterError::Backend(e)),
            }
        }
        RuleName::Judge => unreachable!("the judge is applied by apply_judge_filter"),
    };
    Ok(RuleResult { rule, pass, detail })
}

/// Runs rules (i)-(iv) in order, stopping at the first failure.
pub fn apply_rule_filters(
    pair: &PreferencePair,
    tokenizer: &dyn TokenizerBackend,
    syntax: &dyn SyntaxBackend,
    limits: &FilterLimits,
) -> Result<FilterVerdict, FilterError> {
    let mut verdict = FilterVerdict {
        accepted: true,
        quarantined: false,
        rule_results: Vec::with_capacity(5),
    };
    for rule in RuleName::RULES {
        if verdict.accepted {
            verdict.push(evaluate_rule(rule, pair, tokenizer, syntax, limits)?);
        } else {
            verdict.push(RuleResult {
                rule,
                pass: false,
                detail: SKIPPED.into(),
            });
        }
    }
    Ok(verdict)
}

/// Anything that can rule on whether a pair differs in logic.
pub trait PairJudge: Sync {
    fn judge(&self, pair: &PreferencePair) -> Result<JudgeVerdict, LlmError>;
}

impl PairJudge for LlmClient {
    fn judge(&self, pair: &PreferencePair) -> Result<JudgeVerdict, LlmError> {
        self.judge_pair(pair)
    }
}

/// Judge rule result plus whether the pair has to be quarantined.
pub fn apply_judge_filter(pair: &PreferencePair, judge: &dyn PairJudge) -> (RuleResult, bool) {
    match judge.judge(pair) {
        Ok(v) => (
            RuleResult {
                rule: RuleName::Judge,
                pass: v.significant,
                detail: v.reason,
            },
            false,
        ),
        Err(e) => (
            RuleResult {
                rule: RuleName::Judge,
                pass: false,
                detail: format!("{JUDGE_UNAVAILABLE}: {e}"),
            },
            true,
        ),
    }
}

/// Runs the judge on a rule verdict, or marks it skipped after a rule failure.
pub fn extend_with_judge(
    verdict: &mut FilterVerdict,
    pair: &PreferencePair,
    judge: Option<&dyn PairJudge>,
) {
    let Some(judge) = judge else { return };
    if !verdict.accepted {
        verdict.push(RuleResult {
            rule: RuleName::Judge,
            pass: false,
            detail: SKIPPED.into(),
        });
        return;
    }
    let (result, quarantined) = apply_judge_filter(pair, judge);
    verdict.quarantined = quarantined;
    verdict.push(result);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelRow {
    pub stage: String,
    pub input: u64,
    pub output: u64,
    pub rejected_by_rule: BTreeMap<String, u64>,
}

impl FunnelRow {
    pub fn new(stage: &str, input: u64, output: u64) -> Self {
        Self {
            stage: stage.into(),
            input,
            output,
            rejected_by_rule: BTreeMap::new(),
        }
    }
}

/// Stage table for the rule and judge filters over a set of verdicts.
pub fn funnel_report(verdicts: &[FilterVerdict]) -> Vec<FunnelRow> {
    let mut rules = FunnelRow::new("rules", verdicts.len() as u64, 0);
    let mut judge = FunnelRow::new("judge", 0, 0);
    for v in verdicts {
        match v.failing_rule() {
            Some(RuleName::Judge) => {
                rules.output += 1;
                judge.input += 1;
                let key = if v.quarantined {
                    JUDGE_UNAVAILABLE
                } else {
                    RuleName::Judge.as_str()
                };
                *judge.rejected_by_rule.entry(key.into()).or_default() += 1;
            }
            Some(rule) => {
                *rules
                    .rejected_by_rule
                    .entry(rule.as_str().into())
                    .or_default() += 1;
            }
            None => {
                rules.output += 1;
                judge.input += 1;
                judge.output += 1;
            }
        }
    }
    vec![rules, judge]
}
