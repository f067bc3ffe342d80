//! The verify-and-refine loop, pair selection, and run statistics.
//!
//! Each task is verified, refined on failure up to `max_iterations` times,
//! and its history turned into at most one preference pair. Tasks run on a
//! bounded worker pool; a single writer emits records in input order so the
//! output does not depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DatasetError, DatasetRecord, JsonlWriter, RecordMetadata};
use crate::diff::extract_diff;
use crate::filters::{
    apply_rule_filters, extend_with_judge, funnel_report, FilterLimits, FilterVerdict, FunnelRow,
    PairJudge, SyntaxBackend,
};
use crate::llm::{CallLedger, LedgerTotals, LlmClient};
use crate::mask::{build_mask, TokenizerBackend};
use crate::model::{
    validate_pair, CodeVersion, ExecStatus, PairVerdict, PreferencePair, Provenance,
    RefinementTrace, TaskSpec, Terminal, TestSuite, TraceStep,
};
use crate::sandbox::{render_error_hint, FailureClassifier, Sandbox};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub worker_count: usize,
    pub template_id: String,
    pub filters: FilterLimits,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iterations: crate::model::DEFAULT_MAX_ITERATIONS,
            rng_seed: 0,
            worker_count: 1,
            template_id: "default".into(),
            filters: FilterLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    /// The sandbox itself failed; not a property of the code.
    #[error("sandbox setup failed: {0}")]
    Setup(String),
    /// The LLM could not continue the loop; the trace is left out of statistics.
    #[error("trace aborted: {0}")]
    Aborted(String),
}

/// Something that proposes the next version of failing code.
pub trait Refiner: Sync {
    fn refine(
        &self,
        task: &TaskSpec,
        current: &CodeVersion,
        tests: &TestSuite,
        hint: &str,
    ) -> Result<CodeVersion, String>;
}

impl Refiner for LlmClient {
    fn refine(
        &self,
        task: &TaskSpec,
        current: &CodeVersion,
        tests: &TestSuite,
        hint: &str,
    ) -> Result<CodeVersion, String> {
        self.refine_code(task, current, tests, hint)
            .map_err(|e| e.to_string())
    }
}

/// Verifies `code0` and refines it until it passes or the budget runs out.
/// Only the most recent failure report goes into each refinement prompt.
pub fn run_trace(
    task: &TaskSpec,
    code0: CodeVersion,
    tests: &TestSuite,
    sandbox: &Sandbox,
    refiner: &dyn Refiner,
    max_iterations: usize,
) -> Result<RefinementTrace, TraceError> {
    let mut versions: Vec<TraceStep> = Vec::new();
    let mut code = CodeVersion::new(0, &code0.source);
    loop {
        let outcome = sandbox.run_tests(&code, tests);
        if outcome.status == ExecStatus::SetupError {
            return Err(TraceError::Setup(outcome.stderr_excerpt));
        }
        let passed = outcome.passed();
        let iteration = code.iteration;
        versions.push(TraceStep {
            code: code.clone(),
            outcome: outcome.clone(),
        });
        if passed || iteration >= max_iterations {
            let terminal = match (passed, iteration) {
                (true, 0) => Terminal::PassedAtZero,
                (true, t) => Terminal::PassedAtT(t),
                (false, _) => Terminal::Exhausted,
            };
            return Ok(RefinementTrace {
                task: task.clone(),
                tests: tests.clone(),
                versions,
                terminal,
            });
        }
        let hint = render_error_hint(&outcome, sandbox.limits().max_output_bytes)
            .map_err(|e| TraceError::Aborted(e.to_string()))?;
        let next = refiner
            .refine(task, &code, tests, &hint)
            .map_err(TraceError::Aborted)?;
        code = CodeVersion::new(iteration + 1, &next.source);
    }
}

/// Generator for one trace, derived from the run seed and the task id so
/// that scheduling order cannot change which version is picked.
pub fn trace_rng(run_seed: u64, task_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Chosen = the passing version, rejected = a uniformly drawn earlier one.
/// Traces that passed at once or never passed yield nothing.
pub fn select_pair(trace: &RefinementTrace, run_seed: u64) -> Option<PreferencePair> {
    let t = match trace.terminal {
        Terminal::PassedAtT(t) if t > 0 => t,
        _ => return None,
    };
    let mut rng = trace_rng(run_seed, &trace.task.id);
    let r = rng.random_range(0..t);
    let chosen = trace.versions[t].code.clone();
    let rejected = trace.versions[r].code.clone();
    let (diff_plus, diff_minus) = extract_diff(&chosen, &rejected);
    Some(PreferencePair {
        x: trace.task.clone(),
        chosen,
        rejected,
        diff_plus,
        diff_minus,
        provenance: Provenance {
            trace_id: trace.task.id.clone(),
            chosen_iteration: t,
            rejected_iteration: r,
            rng_seed: run_seed,
        },
    })
}

/// Cumulative fraction of traces passing by each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRateReport {
    pub pass_rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no traces to report on")]
pub struct EmptyTraces;

pub fn pass_rate_report(
    traces: &[RefinementTrace],
    max_iterations: usize,
) -> Result<PassRateReport, EmptyTraces> {
    if traces.is_empty() {
        return Err(EmptyTraces);
    }
    let mut passed_at = vec![0usize; max_iterations + 1];
    for t in traces {
        if let Some(k) = t.terminal.pass_iteration() {
            if k <= max_iterations {
                passed_at[k] += 1;
            }
        }
    }
    let n = traces.len() as f64;
    let mut cumulative = 0;
    let pass_rate = passed_at
        .iter()
        .map(|c| {
            cumulative += c;
            cumulative as f64 / n
        })
        .collect();
    Ok(PassRateReport { pass_rate })
}

/// Total LLM calls per accepted pair; absent when nothing was accepted.
pub fn calls_per_accepted_pair(ledger: &CallLedger, accepted: u64) -> Option<f64> {
    (accepted > 0).then(|| ledger.total() as f64 / accepted as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureHistogram {
    pub by_status: BTreeMap<String, u64>,
    /// Runtime errors bucketed by exception class.
    pub by_exception: BTreeMap<String, u64>,
}

/// Counts every failing outcome across all iterations.
pub fn failure_histogram(
    traces: &[RefinementTrace],
    classifier: &FailureClassifier,
) -> FailureHistogram {
    let mut h = FailureHistogram::default();
    for step in traces.iter().flat_map(|t| &t.versions) {
        let status = step.outcome.status;
        if status.is_pass() {
            continue;
        }
        *h.by_status.entry(status.name().to_owned()).or_default() += 1;
        if status == ExecStatus::RuntimeError {
            let class = classifier
                .exception_class(&step.outcome.stderr_excerpt)
                .unwrap_or_else(|| "Unknown".to_owned());
            *h.by_exception.entry(class).or_default() += 1;
        }
    }
    h
}

/// One task's inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInput {
    pub id: String,
    pub instruction: String,
    pub code: String,
    pub tests: String,
    #[serde(default)]
    pub env_notes: Vec<String>,
}

/// Where tasks come from: an existing list or fresh generation.
#[derive(Debug, Clone)]
pub enum TaskSource {
    Ingest(Vec<TaskInput>),
    Generate(usize),
}

impl TaskSource {
    pub fn len(&self) -> usize {
        match self {
            TaskSource::Ingest(v) => v.len(),
            TaskSource::Generate(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads ingestion triples from JSONL.
pub fn read_task_inputs(path: &Path) -> Result<Vec<TaskInput>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let input: TaskInput = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(input);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    Aborted(String),
    Discarded(Terminal),
    Accepted,
    Rejected,
    Quarantined,
}

/// Everything one worker learned about one task.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub index: usize,
    pub task_id: String,
    pub trace: Option<RefinementTrace>,
    pub record: Option<DatasetRecord>,
    pub verdict: Option<FilterVerdict>,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounts {
    pub passed_at_zero: u64,
    pub passed_after_refinement: u64,
    pub exhausted: u64,
    pub aborted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_digest: String,
    pub tasks: u64,
    pub traces: TraceCounts,
    pub pass_rate: Vec<f64>,
    pub funnel: Vec<FunnelRow>,
    pub histogram: FailureHistogram,
    pub ledger: LedgerTotals,
    pub executions: u64,
    pub calls_per_pair: Option<f64>,
    pub accepted: u64,
    pub filtered: u64,
    pub quarantined: u64,
    pub aborted: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("infrastructure failure on task {task}: {detail}")]
    Infrastructure { task: String, detail: String },
}

/// Shared handles for one pipeline run.
pub struct Pipeline<'a> {
    pub sandbox: &'a Sandbox,
    pub llm: &'a LlmClient,
    pub tokenizer: Arc<dyn TokenizerBackend>,
    pub syntax: &'a dyn SyntaxBackend,
    pub cfg: RunConfig,
    tokenizer_lock: Mutex<()>,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        sandbox: &'a Sandbox,
        llm: &'a LlmClient,
        tokenizer: Arc<dyn TokenizerBackend>,
        syntax: &'a dyn SyntaxBackend,
        cfg: RunConfig,
    ) -> Self {
        Self {
            sandbox,
            llm,
            tokenizer,
            syntax,
            cfg,
            tokenizer_lock: Mutex::new(()),
        }
    }

    fn inputs_for(
        &self,
        source: &TaskSource,
        index: usize,
    ) -> Result<(TaskSpec, CodeVersion, TestSuite), (String, String)> {
        match source {
            TaskSource::Ingest(items) => {
                let t = &items[index];
                let mut task = TaskSpec::new(&t.id, &t.instruction)
                    .map_err(|e| (t.id.clone(), e.to_string()))?;
                task.env_notes = t.env_notes.clone();
                let tests = TestSuite::new(&t.tests).map_err(|e| (t.id.clone(), e.to_string()))?;
                Ok((task, CodeVersion::new(0, &t.code), tests))
            }
            TaskSource::Generate(_) => {
                let id = format!("gen-{index:05}");
                self.llm
                    .generate_task(&self.cfg.template_id, &id)
                    .map_err(|e| (id, e.to_string()))
            }
        }
    }

    /// Runs one task through trace, selection, masking and filtering.
    pub fn process(&self, source: &TaskSource, index: usize) -> Result<TaskReport, RunError> {
        let (task, code0, tests) = match self.inputs_for(source, index) {
            Ok(v) => v,
            Err((task_id, reason)) => {
                return Ok(TaskReport {
                    index,
                    task_id,
                    trace: None,
                    record: None,
                    verdict: None,
                    disposition: Disposition::Aborted(reason),
                })
            }
        };
        let report = |trace, record, verdict, disposition| TaskReport {
            index,
            task_id: task.id.clone(),
            trace,
            record,
            verdict,
            disposition,
        };
        let trace = match run_trace(
            &task,
            code0,
            &tests,
            self.sandbox,
            self.llm,
            self.cfg.max_iterations,
        ) {
            Ok(t) => t,
            Err(TraceError::Setup(detail)) => {
                return Err(RunError::Infrastructure {
                    task: task.id.clone(),
                    detail,
                })
            }
            Err(TraceError::Aborted(reason)) => {
                log::warn!("task {} aborted: {reason}", task.id);
                return Ok(report(None, None, None, Disposition::Aborted(reason)));
            }
        };
        let Some(pair) = select_pair(&trace, self.cfg.rng_seed) else {
            let terminal = trace.terminal;
            return Ok(report(
                Some(trace),
                None,
                None,
                Disposition::Discarded(terminal),
            ));
        };
        if let PairVerdict::Violation(v) = validate_pair(&pair) {
            return Err(RunError::Infrastructure {
                task: task.id.clone(),
                detail: format!("selected pair violates {v}"),
            });
        }

        let (mask, verdict) = {
            let _guard = (!self.tokenizer.concurrent_safe())
                .then(|| self.tokenizer_lock.lock().expect("tokenizer lock"));
            let mask = build_mask(&pair.rejected, &pair.diff_minus, self.tokenizer.as_ref())
                .map_err(|e| RunError::Infrastructure {
                    task: task.id.clone(),
                    detail: e.to_string(),
                })?;
            let verdict = apply_rule_filters(
                &pair,
                self.tokenizer.as_ref(),
                self.syntax,
                &self.cfg.filters,
            )
            .map_err(|e| RunError::Infrastructure {
                task: task.id.clone(),
                detail: e.to_string(),
            })?;
            (mask, verdict)
        };
        let mut verdict = verdict;
        let judge: Option<&dyn PairJudge> = (!self.cfg.filters.skip_judge).then_some(self.llm as _);
        extend_with_judge(&mut verdict, &pair, judge);

        let metadata = RecordMetadata {
            iterations_used: trace.versions.len() - 1,
            failure_statuses: trace
                .versions
                .iter()
                .map(|s| s.outcome.status)
                .filter(|s| !s.is_pass())
                .collect(),
            llm_calls: self.llm.task_calls(&task.id),
            rng_seed: self.cfg.rng_seed,
        };
        let record = DatasetRecord::new(&pair, &mask, Some(&verdict), metadata);
        let disposition = if verdict.accepted {
            Disposition::Accepted
        } else if verdict.quarantined {
            Disposition::Quarantined
        } else {
            Disposition::Rejected
        };
        Ok(report(
            Some(trace),
            Some(record),
            Some(verdict),
            disposition,
        ))
    }

    /// Processes every task and writes accepted records to `out` (and
    /// filtered ones to `rejected_out`), in input order.
    pub fn run(
        &self,
        source: &TaskSource,
        out: &Path,
        rejected_out: Option<&Path>,
        config_digest: &str,
    ) -> Result<RunSummary, RunError> {
        let total = source.len();
        let mut accepted_w = JsonlWriter::create(out)?;
        let mut rejected_w = rejected_out.map(JsonlWriter::create).transpose()?;
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<Result<TaskReport, RunError>>();
        let workers = self.cfg.worker_count.max(1).min(total.max(1));

        let mut reports: Vec<TaskReport> = Vec::with_capacity(total);
        let mut failure: Option<RunError> = None;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= total {
                        break;
                    }
                    if tx.send(self.process(source, i)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // single writer: release reports strictly in input order
            let mut pending: BTreeMap<usize, TaskReport> = BTreeMap::new();
            let mut cursor = 0;
            for msg in rx {
                match msg {
                    Ok(r) => {
                        pending.insert(r.index, r);
                    }
                    Err(e) => {
                        next.store(total, Ordering::SeqCst);
                        failure.get_or_insert(e);
                        continue;
                    }
                }
                while let Some(r) = pending.remove(&cursor) {
                    if failure.is_none() {
                        if let Err(e) = write_report(&r, &mut accepted_w, rejected_w.as_mut()) {
                            next.store(total, Ordering::SeqCst);
                            failure = Some(e.into());
                        }
                    }
                    reports.push(r);
                    cursor += 1;
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        accepted_w.finish()?;
        if let Some(w) = rejected_w {
            w.finish()?;
        }
        Ok(self.summarize(&reports, config_digest))
    }

    fn summarize(&self, reports: &[TaskReport], config_digest: &str) -> RunSummary {
        let traces: Vec<RefinementTrace> = reports.iter().filter_map(|r| r.trace.clone()).collect();
        let mut counts = TraceCounts::default();
        let mut aborted = Vec::new();
        for r in reports {
            match &r.disposition {
                Disposition::Aborted(reason) => {
                    counts.aborted += 1;
                    aborted.push((r.task_id.clone(), reason.clone()));
                }
                _ => match r.trace.as_ref().map(|t| t.terminal) {
                    Some(Terminal::PassedAtZero) => counts.passed_at_zero += 1,
                    Some(Terminal::PassedAtT(_)) => counts.passed_after_refinement += 1,
                    Some(Terminal::Exhausted) => counts.exhausted += 1,
                    None => {}
                },
            }
        }
        let verdicts: Vec<FilterVerdict> =
            reports.iter().filter_map(|r| r.verdict.clone()).collect();
        let accepted = reports
            .iter()
            .filter(|r| r.disposition == Disposition::Accepted)
            .count() as u64;
        let quarantined = reports
            .iter()
            .filter(|r| r.disposition == Disposition::Quarantined)
            .count() as u64;

        let n_traces = traces.len() as u64;
        let mut funnel = vec![FunnelRow::new("tasks", reports.len() as u64, n_traces)];
        if counts.aborted > 0 {
            funnel[0]
                .rejected_by_rule
                .insert("aborted".into(), counts.aborted);
        }
        let mut pairs = FunnelRow::new("pairs", n_traces, verdicts.len() as u64);
        for (k, v) in [
            ("passed_at_zero", counts.passed_at_zero),
            ("exhausted", counts.exhausted),
        ] {
            if v > 0 {
                pairs.rejected_by_rule.insert(k.into(), v);
            }
        }
        funnel.push(pairs);
        let mut filter_rows = funnel_report(&verdicts);
        if self.cfg.filters.skip_judge {
            filter_rows.truncate(1);
        }
        funnel.extend(filter_rows);

        let ledger = self.llm.ledger();
        RunSummary {
            seed: self.cfg.rng_seed,
            config_digest: config_digest.to_owned(),
            tasks: reports.len() as u64,
            traces: counts,
            pass_rate: pass_rate_report(&traces, self.cfg.max_iterations)
                .map(|r| r.pass_rate)
                .unwrap_or_default(),
            funnel,
            histogram: failure_histogram(&traces, self.sandbox.classifier()),
            ledger: ledger.totals(),
            executions: traces.iter().map(|t| t.versions.len() as u64).sum(),
            calls_per_pair: calls_per_accepted_pair(&ledger, accepted),
            accepted,
            filtered: verdicts.len() as u64 - accepted - quarantined,
            quarantined,
            aborted,
        }
    }
}

fn write_report(
    r: &TaskReport,
    accepted: &mut JsonlWriter,
    rejected: Option<&mut JsonlWriter>,
) -> Result<(), DatasetError> {
    match (&r.disposition, &r.record) {
        (Disposition::Accepted, Some(rec)) => accepted.append(rec),
        (Disposition::Rejected | Disposition::Quarantined, Some(rec)) => match rejected {
            Some(w) => w.append(rec),
            None => Ok(()),
        },
        _ => Ok(()),
    }
}
