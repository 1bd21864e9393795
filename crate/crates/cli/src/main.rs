mod config;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hazardforge_core::annotation::{self, AnnotationState};
use hazardforge_core::backends::http::{HttpChat, HttpClient, HttpEditor};
use hazardforge_core::backends::stub::{ConstantAnswerer, ScriptedAnswerer, StubChat, StubEditor, StubJudge};
use hazardforge_core::backends::wire::{model_router, ModelService};
use hazardforge_core::backends::{Answerer, Backends, ChatAnswerer, Judge};
use hazardforge_core::evaluator::{
    self, export_human_sheets, read_answer_key, read_human_answers, read_results, render_report, score_human,
    write_report, AccuracyReport, EvalFilter, EvalOptions,
};
use hazardforge_core::fixtures::write_source_fixture;
use hazardforge_core::geometry::GeometryOverrides;
use hazardforge_core::manifest::{load_items, read_jsonl, Source};
use hazardforge_core::orchestrator::{generate_benchmark, stats, GenerateConfig, Selection};
use hazardforge_core::planner::{ObjectCategory, ScenarioKind};
use serde::Deserialize;

use crate::config::{parse_injection, resolve_endpoints, resolve_geometry, EndpointFlags, FileConfig};

static CANCEL: AtomicBool = AtomicBool::new(false);

/// Hazard-scenario benchmark generation and evaluation.
#[derive(Debug, Parser)]
#[command(name = "hazardforge", version, about)]
struct Cli {
    /// TOML config file (flags > env > file > defaults).
    #[arg(long, global = true, env = "HF_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the generate-and-check pipeline over a source manifest.
    Generate(GenerateArgs),
    /// Print the scenario x category table of a manifest.
    Stats(StatsArgs),
    /// Ask an answering model every question of a manifest.
    Evaluate(EvaluateArgs),
    /// Render accuracy tables from one or more results files.
    Report(ReportArgs),
    /// Sample human-study sheets and their answer key.
    ExportSheets(ExportSheetsArgs),
    /// Score annotator answers against an answer key.
    ScoreHuman(ScoreHumanArgs),
    /// Serve the annotation API and app.
    ServeAnnotation(ServeAnnotationArgs),
    /// Serve stub model endpoints over the wire protocol.
    ServeStub(ServeStubArgs),
    /// Write a synthetic source manifest with road-like images.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
struct EndpointArgs {
    /// Editor endpoint base URL.
    #[arg(long, env = "HF_EDITOR_URL")]
    editor_url: Option<String>,
    /// Judge endpoint base URL.
    #[arg(long, env = "HF_JUDGE_URL")]
    judge_url: Option<String>,
    /// Bearer token sent to every endpoint.
    #[arg(long, env = "HF_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Per-request timeout in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Maximum concurrent requests per endpoint.
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Source manifest (JSONL).
    #[arg(long)]
    source: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated scenarios (default: all).
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<ScenarioKind>,
    /// Comma-separated object categories (default: all).
    #[arg(long, value_delimiter = ',')]
    categories: Vec<ObjectCategory>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Attempts per edit step.
    #[arg(long)]
    max_trials: Option<u32>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Use the procedural stub editor and judge.
    #[arg(long)]
    stub: bool,
    /// Stub failure injection: off, always, first:N, rate:P.
    #[arg(long)]
    injection: Option<String>,
    /// Keep whatever the editor returns outside the mask.
    #[arg(long)]
    no_composite: bool,
    /// Also list the unedited source images in items.jsonl.
    #[arg(long)]
    include_originals: bool,
    /// Write a vanishing-point diagnostics file per source image.
    #[arg(long)]
    vp_diagnostics: bool,
    /// Stamp records with wall-clock times (default on in live mode).
    #[arg(long)]
    timestamps: Option<bool>,
    /// Intrusion mask half-width l in pixels.
    #[arg(long)]
    intrusion_half_width: Option<u32>,
    /// Outpaint width r in pixels.
    #[arg(long)]
    pad_width: Option<u32>,
    /// Distance band d as a fraction of the image height.
    #[arg(long)]
    distance_band: Option<f64>,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Manifest (JSONL).
    manifest: PathBuf,
    /// Print CSV rows instead of the table.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Benchmark manifest (JSONL); image paths are relative to it.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for results.jsonl and the report.
    #[arg(long)]
    out: PathBuf,
    /// Model tag written into the results.
    #[arg(long)]
    model: Option<String>,
    /// Stub answerer: oracle, const:<reply> or scripted:<jsonl of {item_id, text}>.
    #[arg(long)]
    stub: Option<String>,
    /// Answerer endpoint base URL.
    #[arg(long, env = "HF_ANSWERER_URL")]
    answerer_url: Option<String>,
    #[arg(long, env = "HF_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Concurrent questions.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Extra attempts after transport failures.
    #[arg(long)]
    retries: Option<u32>,
    /// Record wall-clock latency per item (results are then not byte-stable).
    #[arg(long)]
    latency: bool,
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<ScenarioKind>,
    #[arg(long, value_delimiter = ',')]
    categories: Vec<ObjectCategory>,
    /// Restrict to source benchmarks (e.g. DriveBench,SA-Bench).
    #[arg(long, value_delimiter = ',')]
    sources: Vec<String>,
    /// Skip unedited items.
    #[arg(long)]
    exclude_originals: bool,
    /// Accepted for symmetry with the other subcommands; evaluation order does not use randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Manifest the results refer to.
    #[arg(long)]
    manifest: PathBuf,
    /// results.jsonl files, one per model.
    #[arg(long = "results", required = true)]
    results: Vec<PathBuf>,
    /// Annotator answers to add as the human row (needs --key).
    #[arg(long, requires = "key")]
    human: Vec<PathBuf>,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Write report.txt / report.csv here instead of printing only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportSheetsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    sheets: usize,
    #[arg(long, default_value_t = 60)]
    per_category: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ScoreHumanArgs {
    /// Answer CSV files (row_id,answer).
    #[arg(long = "answers", required = true)]
    answers: Vec<PathBuf>,
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeAnnotationArgs {
    /// Directory with sheet_<n>.csv files.
    #[arg(long)]
    sheets: PathBuf,
    /// Directory sheet image paths are relative to.
    #[arg(long)]
    images_root: PathBuf,
    /// Answer key enabling the score endpoint.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Built annotation app served under /app.
    #[arg(long)]
    app: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Debug, Args)]
struct ServeStubArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    addr: SocketAddr,
    /// Editor failure injection: off, always, first:N, rate:P.
    #[arg(long, default_value = "off")]
    injection: String,
    /// Reply to chat prompts that are not quality checks.
    #[arg(long, default_value = "B")]
    reply: String,
    /// Artificial latency per call.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a, &file),
        Command::Stats(a) => cmd_stats(a),
        Command::Evaluate(a) => cmd_evaluate(a, &file),
        Command::Report(a) => cmd_report(a),
        Command::ExportSheets(a) => cmd_export_sheets(a, &file),
        Command::ScoreHuman(a) => cmd_score_human(a),
        Command::ServeAnnotation(a) => cmd_serve_annotation(a),
        Command::ServeStub(a) => cmd_serve_stub(a),
        Command::Fixture(a) => {
            let items = write_source_fixture(&a.out, a.count, a.seed)?;
            println!("wrote {} items to {}", items.len(), a.out.join("items.jsonl").display());
            Ok(0)
        }
    }
}

fn install_ctrlc() {
    let _ = ctrlc::set_handler(|| {
        if CANCEL.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing in-flight items and flushing manifests (press again to abort)");
    });
}

fn cmd_generate(a: GenerateArgs, file: &FileConfig) -> Result<u8> {
    let stub = a.stub || file.stub.unwrap_or(false);
    let flags = EndpointFlags {
        editor: a.endpoints.editor_url.clone(),
        judge: a.endpoints.judge_url.clone(),
        answerer: None,
        token: a.endpoints.token.clone(),
        timeout_ms: a.endpoints.timeout_ms,
        max_in_flight: a.endpoints.max_in_flight,
    };
    let endpoints = resolve_endpoints(&flags, &file.endpoints);
    let backends = if stub {
        let injection = parse_injection(a.injection.as_deref().or(file.injection.as_deref()).unwrap_or("off"))?;
        Backends {
            editor: Arc::new(StubEditor::new(injection)),
            judge: Judge::new(Arc::new(StubJudge::default())),
        }
    } else {
        if a.injection.is_some() {
            bail!("--injection only applies to --stub runs");
        }
        let editor = endpoints.endpoint("editor", endpoints.editor.as_ref())?;
        let judge = endpoints.endpoint("judge", endpoints.judge.as_ref())?;
        Backends {
            editor: Arc::new(HttpEditor(HttpClient::new(editor)?)),
            judge: Judge::new(Arc::new(HttpChat(HttpClient::new(judge)?))),
        }
    };
    let geometry = resolve_geometry(
        &GeometryOverrides {
            intrusion_half_width: a.intrusion_half_width,
            pad_width: a.pad_width,
            distance_band: a.distance_band,
        },
        &file.geometry,
    );
    let cfg = GenerateConfig {
        run_seed: a.seed.or(file.seed).unwrap_or(0),
        max_trials: a.max_trials.or(file.max_trials).unwrap_or(GenerateConfig::default().max_trials),
        workers: a.workers.or(file.workers).unwrap_or(4),
        geometry,
        composite: !a.no_composite && file.composite.unwrap_or(true),
        timestamps: a.timestamps.unwrap_or(!stub),
        vp_diagnostics: a.vp_diagnostics,
        include_originals: a.include_originals,
        ..GenerateConfig::default()
    };
    if cfg.max_trials == 0 {
        bail!("--max-trials must be at least 1");
    }
    let selection = Selection {
        scenarios: if a.scenarios.is_empty() { ScenarioKind::ALL.to_vec() } else { a.scenarios },
        categories: if a.categories.is_empty() { ObjectCategory::ALL.to_vec() } else { a.categories },
    };
    install_ctrlc();
    let summary = generate_benchmark(&a.source, &a.out, &selection, &cfg, &backends, &CANCEL)?;
    println!("{summary}");
    if summary.total_records() == 0 {
        println!("no eligible jobs for this selection");
    }
    Ok(summary.exit_code() as u8)
}

fn cmd_stats(a: StatsArgs) -> Result<u8> {
    let table = stats(&a.manifest)?;
    if a.csv {
        print!("{}", table.to_csv());
    } else {
        print!("{}", table.render());
    }
    Ok(0)
}

#[derive(Deserialize)]
struct ScriptLine {
    item_id: String,
    text: String,
}

fn stub_answerer(spec: &str, items: &[hazardforge_core::BenchItem]) -> Result<Arc<dyn Answerer>> {
    if spec == "oracle" {
        return Ok(Arc::new(ScriptedAnswerer::oracle(items)));
    }
    if let Some(reply) = spec.strip_prefix("const:") {
        return Ok(Arc::new(ConstantAnswerer(reply.to_string())));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        let lines: Vec<ScriptLine> = read_jsonl(Path::new(path))?;
        let replies: HashMap<String, String> = lines.into_iter().map(|l| (l.item_id, l.text)).collect();
        return Ok(Arc::new(ScriptedAnswerer {
            replies,
            fallback: Some(String::new()),
        }));
    }
    bail!("unknown stub answerer {spec:?} (use oracle, const:<reply> or scripted:<path>)")
}

fn cmd_evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<u8> {
    let items = load_items(&a.manifest)?;
    let answerer: Arc<dyn Answerer> = match &a.stub {
        Some(spec) => stub_answerer(spec, &items)?,
        None => {
            let flags = EndpointFlags {
                answerer: a.answerer_url.clone(),
                token: a.token.clone(),
                timeout_ms: a.timeout_ms,
                max_in_flight: a.max_in_flight,
                ..Default::default()
            };
            let endpoints = resolve_endpoints(&flags, &file.endpoints);
            let cfg = endpoints.endpoint("answerer", endpoints.answerer.as_ref())?;
            Arc::new(ChatAnswerer::new(Arc::new(HttpChat(HttpClient::new(cfg)?))))
        }
    };
    let model = a
        .model
        .or_else(|| file.evaluate.model.clone())
        .or_else(|| a.stub.as_ref().map(|s| format!("stub-{}", s.split(':').next().unwrap_or("stub"))))
        .unwrap_or_else(|| "model".into());
    let opts = EvalOptions {
        model,
        concurrency: a.concurrency.or(file.evaluate.concurrency).unwrap_or(4),
        retries: a.retries.or(file.evaluate.retries).unwrap_or(2),
        record_latency: a.latency,
        filter: EvalFilter {
            scenarios: (!a.scenarios.is_empty()).then_some(a.scenarios),
            categories: (!a.categories.is_empty()).then_some(a.categories),
            sources: (!a.sources.is_empty()).then(|| a.sources.into_iter().map(Source::from).collect()),
            exclude_originals: a.exclude_originals,
        },
    };
    let root = a.manifest.parent().unwrap_or(Path::new("."));
    let results_path = a.out.join("results.jsonl");
    let (results, report) = evaluator::evaluate(&items, root, answerer.as_ref(), &opts, Some(&results_path))?;
    let text = render_report(std::slice::from_ref(&report), None);
    write_report(&a.out, "report", &text, &report.to_csv())?;
    print!("{text}");
    let errors = results.iter().filter(|r| r.error.is_some()).count();
    if errors > 0 {
        eprintln!("{errors} of {} items failed at the transport level and count as incorrect", results.len());
    }
    Ok(0)
}

fn human_report(answers: &[PathBuf], key: &Path) -> Result<AccuracyReport> {
    let key = read_answer_key(key)?;
    let mut all = Vec::new();
    for p in answers {
        all.extend(read_human_answers(p)?);
    }
    Ok(score_human(&all, &key, "Human eval.")?)
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let items = load_items(&a.manifest)?;
    let mut reports = Vec::new();
    for path in &a.results {
        let results = read_results(path)?;
        let model = results
            .first()
            .map(|r| r.model.clone())
            .unwrap_or_else(|| path.display().to_string());
        reports.push(AccuracyReport::from_results(&model, &items, &results, false)?);
    }
    let human = match &a.key {
        Some(key) if !a.human.is_empty() => Some(human_report(&a.human, key)?),
        _ => None,
    };
    let text = render_report(&reports, human.as_ref());
    if let Some(out) = &a.out {
        let mut csv = String::new();
        for r in reports.iter().chain(human.iter()) {
            let body = r.to_csv();
            csv.push_str(if csv.is_empty() { &body } else { body.split_once('\n').map_or("", |x| x.1) });
        }
        write_report(out, "report", &text, &csv)?;
    }
    print!("{text}");
    Ok(0)
}

fn cmd_export_sheets(a: ExportSheetsArgs, file: &FileConfig) -> Result<u8> {
    let items = load_items(&a.manifest)?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let export = export_human_sheets(&items, a.sheets, a.per_category, seed, &a.out)?;
    for (k, rows) in export.sheets.iter().enumerate() {
        println!("{}: {} rows", a.out.join(evaluator::sheet_file_name(k + 1)).display(), rows.len());
    }
    println!("{}: {} rows", a.out.join(evaluator::ANSWER_KEY_FILE).display(), export.key.len());
    Ok(0)
}

fn cmd_score_human(a: ScoreHumanArgs) -> Result<u8> {
    let report = human_report(&a.answers, &a.key)?;
    let total = report.total();
    let text = format!(
        "{}overall: {}/{} = {}\n",
        render_report(&[], Some(&report)),
        total.correct,
        total.total,
        evaluator::format_pct(total.accuracy())
    );
    if let Some(out) = &a.out {
        write_report(out, "human_report", &text, &report.to_csv())?;
    }
    print!("{text}");
    Ok(0)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

fn cmd_serve_annotation(a: ServeAnnotationArgs) -> Result<u8> {
    let key = a.key.as_deref().map(read_answer_key).transpose()?;
    let state = Arc::new(AnnotationState::new(&a.sheets, &a.images_root, key));
    let router = annotation::router(state, a.app.as_deref());
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("annotation service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router).with_graceful_shutdown(shutdown_signal()).await?;
        Ok(0)
    })
}

fn cmd_serve_stub(a: ServeStubArgs) -> Result<u8> {
    let svc = ModelService {
        editor: Arc::new(StubEditor::new(parse_injection(&a.injection)?)),
        chat: Arc::new(StubChat::new(a.reply)),
        delay: Duration::from_millis(a.delay_ms),
    };
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("stub model service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, model_router(svc))
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok(0)
    })
}
