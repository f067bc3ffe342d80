//! `prefforge` command-line entry point.
//!
//! Errors are reported on stderr as one line, `error[<code>]: <message>`.
//! Exit status: 0 success, 1 data error, 2 usage error, 3 infrastructure error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use prefforge::config::{ConfigError, PipelineConfig};
use prefforge::dataset::{read_records, DatasetError, DatasetRecord, JsonlWriter};
use prefforge::diff::{dilate_diff, extract_diff};
use prefforge::filters::{
    apply_rule_filters, extend_with_judge, funnel_report, PairJudge, PythonAstBackend,
};
use prefforge::llm::prompts::PromptTemplates;
use prefforge::llm::{ChatBackend, HttpBackend, LlmClient, MockBackend, Transcript};
use prefforge::loss::{finite_difference_check, pair_loss, LossConfig, PairLogProbs, Variant};
use prefforge::mask::{build_mask, TokenizerRegistry};
use prefforge::model::{CodeVersion, DiffLines, ExecStatus, TestSuite};
use prefforge::orchestrator::{
    read_task_inputs, Pipeline, RunConfig, RunError, RunSummary, TaskSource,
};
use prefforge::sandbox::Sandbox;

#[derive(Debug, Parser)]
#[command(
    name = "prefforge",
    version,
    about = "Build execution-verified code preference pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify, refine and filter a batch of tasks into a preference dataset.
    Run(RunArgs),
    /// Run one solution against its tests and print the outcome.
    Verify {
        code: PathBuf,
        tests: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Print the line diff between a chosen and a rejected file.
    Diff { chosen: PathBuf, rejected: PathBuf },
    /// Print the token mask for a rejected file and its diff.
    Mask {
        rejected: PathBuf,
        /// Output of `diff`, or a bare list of [index, text] entries.
        diff: PathBuf,
        #[arg(long, default_value = "code-lex-v1")]
        tokenizer: String,
        /// Widen the diff by this many lines on each side.
        #[arg(long, default_value_t = 0)]
        radius: usize,
    },
    /// Apply quality filters to a file of candidate records.
    Filter {
        input: PathBuf,
        #[arg(long)]
        accepted: PathBuf,
        #[arg(long)]
        rejected: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        skip_judge: bool,
        #[arg(long)]
        mock_transcript: Option<PathBuf>,
    },
    /// Evaluate loss fixtures and compare gradients with finite differences.
    LossCheck {
        fixtures: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
    /// Render a run summary.
    Report {
        summary: PathBuf,
        #[arg(long)]
        pretty: bool,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// A JSONL file of {id, instruction, code, tests}, or `generate:N`.
    #[arg(long)]
    input: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write filtered-out records here.
    #[arg(long)]
    rejected_out: Option<PathBuf>,
    /// Write the run summary here instead of stdout.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    mock_transcript: Option<PathBuf>,
    #[arg(long)]
    skip_judge: bool,
}

struct CliError {
    exit: u8,
    code: &'static str,
    message: String,
}

impl CliError {
    fn data(code: &'static str, message: impl ToString) -> Self {
        Self {
            exit: 1,
            code,
            message: message.to_string(),
        }
    }

    fn usage(code: &'static str, message: impl ToString) -> Self {
        Self {
            exit: 2,
            code,
            message: message.to_string(),
        }
    }

    fn infra(code: &'static str, message: impl ToString) -> Self {
        Self {
            exit: 3,
            code,
            message: message.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Self::usage("config_unreadable", e),
            _ => Self::usage("config_invalid", e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => Self::infra("io", e),
            DatasetError::Malformed { .. } => Self::data("malformed_record", e),
            DatasetError::SchemaVersion { .. } => Self::data("schema_version", e),
        }
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = e.print();
                return ExitCode::from(2);
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.message.replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code);
            ExitCode::from(e.exit)
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Verify {
            code,
            tests,
            config,
            timeout_ms,
        } => cmd_verify(&code, &tests, config, timeout_ms),
        Command::Diff { chosen, rejected } => cmd_diff(&chosen, &rejected),
        Command::Mask {
            rejected,
            diff,
            tokenizer,
            radius,
        } => cmd_mask(&rejected, &diff, &tokenizer, radius),
        Command::Filter {
            input,
            accepted,
            rejected,
            config,
            skip_judge,
            mock_transcript,
        } => cmd_filter(
            &input,
            &accepted,
            &rejected,
            config,
            skip_judge,
            mock_transcript,
        ),
        Command::LossCheck {
            fixtures,
            tolerance,
            epsilon,
        } => cmd_loss_check(&fixtures, tolerance, epsilon),
        Command::Report { summary, pretty } => cmd_report(&summary, pretty),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::data("input_unreadable", format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::infra("serialize", e))?;
    println!("{text}");
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<(PipelineConfig, PathBuf), CliError> {
    match path {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((PipelineConfig::load(p)?, base))
        }
        None => Ok((PipelineConfig::default(), PathBuf::from("."))),
    }
}

fn build_sandbox(cfg: &PipelineConfig) -> Result<Sandbox, CliError> {
    let sandbox = Sandbox::new(cfg.sandbox.runtime.clone(), cfg.sandbox.limits.clone())
        .map_err(|e| CliError::usage("config_invalid", e))?;
    sandbox
        .probe_runtime()
        .map_err(|e| CliError::infra("runtime_unavailable", e))?;
    Ok(sandbox)
}

fn build_llm(
    cfg: &PipelineConfig,
    base: &Path,
    transcript: Option<&Path>,
) -> Result<LlmClient, CliError> {
    let templates = PromptTemplates::load(&cfg.llm.templates, base)
        .map_err(|e| CliError::usage("template_unreadable", e))?;
    let backend: Arc<dyn ChatBackend> = match transcript {
        Some(p) => {
            let t = Transcript::load(p).map_err(|e| {
                CliError::data("transcript_invalid", format!("{}: {e}", p.display()))
            })?;
            Arc::new(MockBackend::new(t))
        }
        None => Arc::new(
            HttpBackend::from_env(Duration::from_millis(cfg.llm.request_timeout_ms))
                .map_err(|e| CliError::infra("llm_unavailable", e))?,
        ),
    };
    Ok(LlmClient::new(backend, cfg.llm.clone(), templates))
}

fn cmd_run(args: RunArgs) -> CliResult {
    let (mut cfg, base) = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.run.rng_seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.run.worker_count = w;
    }
    if let Some(m) = args.max_iters {
        cfg.run.max_iterations = m;
    }
    if args.skip_judge {
        cfg.filters.skip_judge = true;
    }
    cfg.validate()?;

    let source = match args.input.strip_prefix("generate:") {
        Some(n) => TaskSource::Generate(n.parse().map_err(|_| {
            CliError::usage(
                "bad_input",
                format!("expected generate:<count>, got {}", args.input),
            )
        })?),
        None => TaskSource::Ingest(read_task_inputs(Path::new(&args.input)).map_err(
            |e| match e {
                DatasetError::Io { .. } => CliError::data("input_unreadable", e),
                other => other.into(),
            },
        )?),
    };
    let tokenizer = TokenizerRegistry::default()
        .get(&cfg.run.tokenizer)
        .map_err(|e| CliError::usage("config_invalid", e))?;
    let sandbox = build_sandbox(&cfg)?;
    let llm = build_llm(&cfg, &base, args.mock_transcript.as_deref())?;
    let syntax = PythonAstBackend::default();
    let run_cfg = RunConfig {
        max_iterations: cfg.run.max_iterations,
        rng_seed: cfg.run.rng_seed,
        worker_count: cfg.run.worker_count,
        template_id: cfg.run.generate_template.clone(),
        filters: cfg.filters.clone(),
    };
    let rejected_out = args
        .rejected_out
        .clone()
        .or_else(|| cfg.run.rejected_out.as_ref().map(PathBuf::from));
    let digest = cfg.digest();
    let pipeline = Pipeline::new(&sandbox, &llm, tokenizer, &syntax, run_cfg);
    let summary = pipeline
        .run(&source, &args.out, rejected_out.as_deref(), &digest)
        .map_err(|e| match e {
            RunError::Dataset(d) => CliError::from(d),
            RunError::Infrastructure { .. } => CliError::infra("infrastructure", e),
        })?;
    match &args.summary {
        Some(path) => {
            let text = serde_json::to_string_pretty(&summary)
                .map_err(|e| CliError::infra("serialize", e))?;
            std::fs::write(path, text + "\n")
                .map_err(|e| CliError::infra("io", format!("{}: {e}", path.display())))
        }
        None => print_json(&summary),
    }
}

fn cmd_verify(
    code: &Path,
    tests: &Path,
    config: Option<PathBuf>,
    timeout_ms: Option<u64>,
) -> CliResult {
    let (mut cfg, _) = load_config(config.as_deref())?;
    if let Some(t) = timeout_ms {
        cfg.sandbox.limits.wall_timeout_ms = t;
    }
    cfg.validate()?;
    let code = CodeVersion::new(0, read_text(code)?);
    let tests =
        TestSuite::new(read_text(tests)?).map_err(|e| CliError::data("tests_invalid", e))?;
    let sandbox = build_sandbox(&cfg)?;
    let outcome = sandbox.run_tests(&code, &tests);
    if outcome.status == ExecStatus::SetupError {
        return Err(CliError::infra("sandbox_setup", outcome.stderr_excerpt));
    }
    print_json(&outcome)
}

fn cmd_diff(chosen: &Path, rejected: &Path) -> CliResult {
    let chosen = CodeVersion::new(0, read_text(chosen)?);
    let rejected = CodeVersion::new(0, read_text(rejected)?);
    let (plus, minus) = extract_diff(&chosen, &rejected);
    print_json(&json!({ "diff_plus": plus, "diff_minus": minus }))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DiffInput {
    Wrapped { diff_minus: DiffLines },
    Bare(DiffLines),
}

fn cmd_mask(rejected: &Path, diff: &Path, tokenizer: &str, radius: usize) -> CliResult {
    let rejected = CodeVersion::new(0, read_text(rejected)?);
    let diff: DiffInput =
        serde_json::from_str(&read_text(diff)?).map_err(|e| CliError::data("diff_invalid", e))?;
    let mut diff = match diff {
        DiffInput::Wrapped { diff_minus } | DiffInput::Bare(diff_minus) => diff_minus,
    };
    diff.check_against(&rejected.lines())
        .map_err(|e| CliError::data("diff_invalid", e))?;
    if radius > 0 {
        let idx = dilate_diff(&diff, radius, rejected.line_count)
            .map_err(|e| CliError::data("diff_invalid", e))?;
        diff = DiffLines::from_indices(&rejected.source, idx);
    }
    let tok = TokenizerRegistry::default()
        .get(tokenizer)
        .map_err(|e| CliError::usage("unknown_tokenizer", e))?;
    let mask =
        build_mask(&rejected, &diff, tok.as_ref()).map_err(|e| CliError::data("mask_failed", e))?;
    print_json(&mask)
}

fn cmd_filter(
    input: &Path,
    accepted: &Path,
    rejected: &Path,
    config: Option<PathBuf>,
    skip_judge: bool,
    transcript: Option<PathBuf>,
) -> CliResult {
    let (mut cfg, base) = load_config(config.as_deref())?;
    cfg.filters.skip_judge |= skip_judge;
    let records = read_records(input).map_err(|e| match e {
        DatasetError::Io { .. } => CliError::data("input_unreadable", e),
        other => other.into(),
    })?;
    let registry = TokenizerRegistry::default();
    let syntax = PythonAstBackend::default();
    let llm = if cfg.filters.skip_judge {
        None
    } else {
        Some(build_llm(&cfg, &base, transcript.as_deref())?)
    };
    let mut acc = JsonlWriter::create(accepted)?;
    let mut rej = JsonlWriter::create(rejected)?;
    let mut verdicts = Vec::with_capacity(records.len());
    for rec in &records {
        let pair = rec.to_pair();
        if let prefforge::model::PairVerdict::Violation(v) = prefforge::model::validate_pair(&pair)
        {
            return Err(CliError::data(
                "invalid_pair",
                format!("record {}: {v}", rec.id),
            ));
        }
        let tok = registry
            .get(&rec.tokenizer_id)
            .map_err(|e| CliError::data("unknown_tokenizer", e))?;
        let mut verdict = apply_rule_filters(&pair, tok.as_ref(), &syntax, &cfg.filters).map_err(
            |e| match e {
                prefforge::filters::FilterError::ChosenUnparsable { .. } => {
                    CliError::data("chosen_unparsable", format!("record {}: {e}", rec.id))
                }
                _ => CliError::infra("syntax_backend", e),
            },
        )?;
        let judge = llm.as_ref().map(|c| c as &dyn PairJudge);
        extend_with_judge(&mut verdict, &pair, judge);
        let out = DatasetRecord::new(
            &pair,
            &rec.token_mask(),
            Some(&verdict),
            rec.metadata.clone(),
        );
        if verdict.accepted {
            acc.append(&out)?;
        } else {
            rej.append(&out)?;
        }
        verdicts.push(verdict);
    }
    let n_acc = acc.finish()?;
    let n_rej = rej.finish()?;
    let mut funnel = funnel_report(&verdicts);
    if cfg.filters.skip_judge {
        funnel.truncate(1);
    }
    print_json(
        &json!({ "input": records.len(), "accepted": n_acc, "rejected": n_rej, "funnel": funnel }),
    )
}

#[derive(Deserialize)]
struct LossFixture {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    variant: Option<Variant>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(flatten)]
    logprobs: PairLogProbs,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LossFixtures {
    Many(Vec<LossFixture>),
    One(Box<LossFixture>),
}

fn cmd_loss_check(path: &Path, tolerance: f64, epsilon: f64) -> CliResult {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(CliError::usage("bad_tolerance", "tolerance must be >= 0"));
    }
    let fixtures = match serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::data("fixtures_invalid", e))?
    {
        LossFixtures::Many(v) => v,
        LossFixtures::One(f) => vec![*f],
    };
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, f) in fixtures.iter().enumerate() {
        let mut cfg = LossConfig::with_variant(f.variant.unwrap_or_default());
        if let Some(b) = f.beta {
            cfg.beta = b;
        }
        if let Some(a) = f.alpha {
            cfg.alpha = a;
        }
        let label = f.name.clone().unwrap_or_else(|| format!("#{i}"));
        let bad = |e: prefforge::loss::LossError| {
            CliError::data("fixture_invalid", format!("{label}: {e}"))
        };
        cfg.validate().map_err(bad)?;
        let r = pair_loss(&f.logprobs, &cfg).map_err(bad)?;
        let fd = finite_difference_check(&f.logprobs, &cfg, epsilon).map_err(|e| match e {
            prefforge::loss::LossError::BadConfig(_) => CliError::usage("bad_epsilon", e),
            e => bad(e),
        })?;
        worst = worst.max(fd);
        rows.push(json!({
            "name": label,
            "variant": cfg.variant,
            "loss": r.loss,
            "delta": r.delta,
            "components": r.components,
            "grad_chosen": r.grad_chosen,
            "grad_rejected": r.grad_rejected,
            "fd_error": fd,
        }));
    }
    print_json(&json!({ "fixtures": rows, "max_fd_error": worst, "tolerance": tolerance }))?;
    if worst > tolerance {
        return Err(CliError::data(
            "gradient_tolerance",
            format!("max finite-difference error {worst:e} exceeds {tolerance:e}"),
        ));
    }
    Ok(())
}

fn cmd_report(path: &Path, pretty: bool) -> CliResult {
    let summary: RunSummary = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::data("summary_invalid", e))?;
    if !pretty {
        return print_json(&summary);
    }
    print!("{}", render_summary(&summary));
    Ok(())
}

fn render_summary(s: &RunSummary) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seed {}  config {}",
        s.seed,
        &s.config_digest[..s.config_digest.len().min(12)]
    );
    let _ = writeln!(
        out,
        "tasks {}  passed@0 {}  refined {}  exhausted {}  aborted {}",
        s.tasks,
        s.traces.passed_at_zero,
        s.traces.passed_after_refinement,
        s.traces.exhausted,
        s.traces.aborted
    );
    let _ = writeln!(out, "\npass rate by iteration");
    for (k, p) in s.pass_rate.iter().enumerate() {
        let _ = writeln!(
            out,
            "  iter{k:<3} {:>6.1}%  {}",
            p * 100.0,
            "#".repeat((p * 40.0).round() as usize)
        );
    }
    let _ = writeln!(out, "\nfunnel");
    for row in &s.funnel {
        let _ = write!(
            out,
            "  {:<8} {:>6} -> {:<6}",
            row.stage, row.input, row.output
        );
        let reasons: Vec<String> = row
            .rejected_by_rule
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = writeln!(out, " {}", reasons.join(" "));
    }
    let _ = writeln!(out, "\nfailures");
    for (k, v) in &s.histogram.by_status {
        let _ = writeln!(out, "  {k:<14} {v}");
    }
    for (k, v) in &s.histogram.by_exception {
        let _ = writeln!(out, "    {k:<12} {v}");
    }
    let _ = writeln!(
        out,
        "\nllm calls {} (generate {}, refine {}, judge {})  executions {}",
        s.ledger.total, s.ledger.generate, s.ledger.refine, s.ledger.judge, s.executions
    );
    let per_pair = s
        .calls_per_pair
        .map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}"));
    let _ = writeln!(
        out,
        "accepted {}  filtered {}  quarantined {}  calls/pair {per_pair}",
        s.accepted, s.filtered, s.quarantined
    );
    for (task, reason) in &s.aborted {
        let _ = writeln!(out, "aborted {task}: {reason}");
    }
    out
}
