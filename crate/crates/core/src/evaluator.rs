//! Multiple-choice evaluation of answering models, accuracy tables and the
//! human-study sheets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{AnswerRequest, Answerer, BackendError};
use crate::geometry::ActionDirection;
use crate::manifest::{BenchItem, ManifestError, Source};
use crate::orchestrator::{render_rows, title_case};
use crate::planner::{CategoryClass, ObjectCategory, ScenarioKind};
use crate::seeds::derive;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("not enough {group} items for the sheets: need {needed}, have {available}")]
    Insufficient {
        group: SheetGroup,
        needed: usize,
        available: usize,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> EvalError + '_ {
    move |source| EvalError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Prompt sent for one item: question, fixed option block, answer instruction.
pub fn build_question(item: &BenchItem) -> Result<String, BackendError> {
    AnswerRequest {
        item_id: item.id.clone(),
        image: Vec::new(),
        question: item.question.clone(),
    }
    .prompt()
}

fn letter_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([ABC])\b").expect("static regex"))
}

/// First standalone option letter, else the first option phrase
/// (case-insensitive), else nothing.
pub fn parse_answer(raw: &str) -> Option<ActionDirection> {
    if let Some(m) = letter_re().captures(raw) {
        return ActionDirection::from_letter(m[1].chars().next()?);
    }
    let lower = raw.to_lowercase();
    ActionDirection::ALL
        .iter()
        .filter_map(|a| lower.find(a.option_text()).map(|pos| (pos, *a)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, a)| a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub item_id: String,
    pub model: String,
    pub raw: String,
    pub parsed: Option<ActionDirection>,
    pub correct: bool,
    /// Wall-clock latency; 0 when latency recording is off.
    pub ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalFilter {
    pub scenarios: Option<Vec<ScenarioKind>>,
    pub categories: Option<Vec<ObjectCategory>>,
    pub sources: Option<Vec<Source>>,
    pub exclude_originals: bool,
}

impl EvalFilter {
    pub fn matches(&self, item: &BenchItem) -> bool {
        if item.scenario.is_none() {
            return !self.exclude_originals && self.sources.as_ref().is_none_or(|s| s.contains(&item.source));
        }
        self.scenarios.as_ref().is_none_or(|s| item.scenario.is_some_and(|x| s.contains(&x)))
            && self.categories.as_ref().is_none_or(|c| item.category.is_some_and(|x| c.contains(&x)))
            && self.sources.as_ref().is_none_or(|s| s.contains(&item.source))
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub model: String,
    pub concurrency: usize,
    /// Extra attempts after a transport-level failure.
    pub retries: u32,
    pub record_latency: bool,
    pub filter: EvalFilter,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            model: "model".into(),
            concurrency: 4,
            retries: 2,
            record_latency: false,
            filter: EvalFilter::default(),
        }
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Transport(_) | BackendError::Timeout(_) => true,
        BackendError::Status { status, .. } => *status >= 500 || *status == 429,
        _ => false,
    }
}

fn ask_one(item: &BenchItem, image_root: &Path, answerer: &dyn Answerer, opts: &EvalOptions) -> EvalResult {
    let started = Instant::now();
    let mut result = EvalResult {
        item_id: item.id.clone(),
        model: opts.model.clone(),
        raw: String::new(),
        parsed: None,
        correct: false,
        ms: 0,
        error: None,
    };
    let outcome = fs::read(image_root.join(&item.image))
        .map_err(|e| format!("image: {e}"))
        .and_then(|image| {
            let req = AnswerRequest {
                item_id: item.id.clone(),
                image,
                question: item.question.clone(),
            };
            let mut attempt = 0;
            loop {
                match answerer.ask(&req) {
                    Ok(text) => break Ok(text),
                    Err(e) if attempt < opts.retries && retryable(&e) => attempt += 1,
                    Err(e) => break Err(format!("{}: {e}", e.tag())),
                }
            }
        });
    match outcome {
        Ok(raw) => {
            result.parsed = parse_answer(&raw);
            result.correct = result.parsed == Some(item.gt);
            result.raw = raw;
        }
        Err(e) => result.error = Some(e),
    }
    if opts.record_latency {
        result.ms = started.elapsed().as_millis() as u64;
    }
    result
}

/// Asks every item passing the filter, with bounded concurrency. Results come
/// back (and are streamed to `results_path`) in manifest order.
pub fn evaluate(
    items: &[BenchItem],
    image_root: &Path,
    answerer: &dyn Answerer,
    opts: &EvalOptions,
    results_path: Option<&Path>,
) -> Result<(Vec<EvalResult>, AccuracyReport), EvalError> {
    let selected: Vec<&BenchItem> = items.iter().filter(|i| opts.filter.matches(i)).collect();
    let mut writer = match results_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            Some(BufWriter::new(File::create(p).map_err(io_err(p))?))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, EvalResult)>();
    let mut results: Vec<EvalResult> = Vec::with_capacity(selected.len());
    let mut write_error: Option<EvalError> = None;
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.clamp(1, selected.len().max(1)) {
            let tx = tx.clone();
            let (next, selected) = (&next, &selected);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = selected.get(i) else { break };
                if tx.send((i, ask_one(item, image_root, answerer, opts))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&results.len()) {
                if let (Some(w), None) = (writer.as_mut(), &write_error) {
                    let path = results_path.unwrap_or(Path::new("results.jsonl"));
                    let line = serde_json::to_string(&r).expect("result serializes");
                    if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                        write_error = Some(io_err(path)(e));
                    }
                }
                results.push(r);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let report = AccuracyReport::from_results(&opts.model, items, &results, false)?;
    Ok((results, report))
}

/// Correct / total counts of one table cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64)
    }
}

/// What the aggregation needs to know about one answered item.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub scenario: Option<ScenarioKind>,
    pub category: Option<ObjectCategory>,
    pub source: Source,
    pub correct: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub model: String,
    /// Unedited original items.
    pub no_edit: Cell,
    pub scenarios: BTreeMap<ScenarioKind, Cell>,
    pub categories: BTreeMap<ObjectCategory, Cell>,
    /// Edited items by source benchmark.
    pub sources: BTreeMap<Source, Cell>,
    pub common: Cell,
    pub anomalous: Cell,
    /// All edited items.
    pub edited: Cell,
    /// Edited plus unedited items.
    pub all: Cell,
    /// Whether [`AccuracyReport::total`] counts the unedited items.
    pub total_includes_no_edit: bool,
}

impl AccuracyReport {
    pub fn from_outcomes<'a>(
        model: &str,
        outcomes: impl IntoIterator<Item = &'a Outcome>,
        total_includes_no_edit: bool,
    ) -> Self {
        let mut r = Self {
            model: model.to_string(),
            total_includes_no_edit,
            ..Self::default()
        };
        for o in outcomes {
            r.all.add(o.correct);
            let Some(scenario) = o.scenario else {
                r.no_edit.add(o.correct);
                continue;
            };
            r.edited.add(o.correct);
            r.scenarios.entry(scenario).or_default().add(o.correct);
            r.sources.entry(o.source.clone()).or_default().add(o.correct);
            if let Some(c) = o.category {
                r.categories.entry(c).or_default().add(o.correct);
                match c.class() {
                    CategoryClass::Common => r.common.add(o.correct),
                    CategoryClass::Anomalous => r.anomalous.add(o.correct),
                }
            }
        }
        r
    }

    /// Joins results to their items by id.
    pub fn from_results(
        model: &str,
        items: &[BenchItem],
        results: &[EvalResult],
        total_includes_no_edit: bool,
    ) -> Result<Self, EvalError> {
        let by_id: HashMap<&str, &BenchItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
        let outcomes = results
            .iter()
            .map(|r| {
                let item = by_id
                    .get(r.item_id.as_str())
                    .ok_or_else(|| EvalError::Input(format!("result for unknown item {}", r.item_id)))?;
                Ok(Outcome {
                    scenario: item.scenario,
                    category: item.category,
                    source: item.source.clone(),
                    correct: r.correct,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(Self::from_outcomes(model, &outcomes, total_includes_no_edit))
    }

    /// The "Total" column: edited items only for models, everything for the
    /// human study.
    pub fn total(&self) -> Cell {
        if self.total_includes_no_edit {
            self.all
        } else {
            self.edited
        }
    }

    pub fn scenario(&self, s: ScenarioKind) -> Cell {
        self.scenarios.get(&s).copied().unwrap_or_default()
    }

    pub fn category(&self, c: ObjectCategory) -> Cell {
        self.categories.get(&c).copied().unwrap_or_default()
    }

    pub fn source(&self, s: &Source) -> Cell {
        self.sources.get(s).copied().unwrap_or_default()
    }

    /// Machine-readable rows: `model,partition,key,correct,total,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,partition,key,correct,total,accuracy\n");
        let mut row = |partition: &str, key: &str, c: Cell| {
            let acc = c.accuracy().map_or(String::new(), |a| format!("{a:.4}"));
            let _ = writeln!(out, "{},{partition},{key},{},{},{acc}", csv_field(&self.model), c.correct, c.total);
        };
        row("overall", "no_edit", self.no_edit);
        for (s, c) in &self.scenarios {
            row("scenario", s.name(), *c);
        }
        for (k, c) in &self.categories {
            row("category", k.name(), *c);
        }
        row("class", "common", self.common);
        row("class", "anomalous", self.anomalous);
        for (s, c) in &self.sources {
            row("source", s.as_str(), *c);
        }
        row("overall", "edited", self.edited);
        row("overall", "all", self.all);
        row("overall", "total", self.total());
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One printed table row: a label and its cells (`None` prints blank).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub label: String,
    pub cells: Vec<Option<f64>>,
}

fn pct(c: Cell) -> Option<f64> {
    c.accuracy()
}

pub fn scenario_row(r: &AccuracyReport) -> ScoreRow {
    let mut cells = vec![pct(r.no_edit)];
    cells.extend(ScenarioKind::ALL.iter().map(|&s| pct(r.scenario(s))));
    cells.push(pct(r.total()));
    ScoreRow {
        label: r.model.clone(),
        cells,
    }
}

pub fn category_row(r: &AccuracyReport) -> ScoreRow {
    let mut cells = vec![pct(r.no_edit)];
    cells.extend(ObjectCategory::ALL.iter().map(|&c| pct(r.category(c))));
    cells.extend([pct(r.common), pct(r.anomalous), pct(r.total())]);
    ScoreRow {
        label: r.model.clone(),
        cells,
    }
}

pub fn source_row(r: &AccuracyReport) -> ScoreRow {
    ScoreRow {
        label: r.model.clone(),
        cells: vec![
            pct(r.source(&Source::DriveBench)),
            pct(r.source(&Source::SaBench)),
            pct(r.total()),
        ],
    }
}

/// Column-wise mean over the rows that have a value in that column.
pub fn average_row(rows: &[ScoreRow]) -> ScoreRow {
    let cols = rows.iter().map(|r| r.cells.len()).max().unwrap_or(0);
    let cells = (0..cols)
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.cells.get(c).copied().flatten()).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    ScoreRow {
        label: "Average".into(),
        cells,
    }
}

pub fn format_pct(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.1}"))
}

fn render_table(header: Vec<String>, human: Option<&ScoreRow>, models: &[ScoreRow], bars: &[usize]) -> String {
    let text_row = |r: &ScoreRow| {
        let mut v = vec![r.label.clone()];
        v.extend(r.cells.iter().map(|c| format_pct(*c)));
        v
    };
    let mut rows = vec![header];
    if let Some(h) = human {
        rows.push(text_row(h));
    }
    rows.extend(models.iter().map(text_row));
    if models.len() > 1 {
        rows.push(text_row(&average_row(models)));
    }
    render_rows(&rows, bars)
}

/// Scenario-wise layout: No edit | Static Motion Intrusion Distance | Total.
pub fn render_scenario_table(human: Option<&ScoreRow>, models: &[ScoreRow]) -> String {
    let mut header = vec!["Models".to_string(), "No edit".to_string()];
    header.extend(ScenarioKind::ALL.iter().map(|s| s.title().to_string()));
    header.push("Total".into());
    render_table(header, human, models, &[1, 2, 6])
}

/// Category-wise layout: No edit | common | anomalous | Norm. Anom. All.
pub fn render_category_table(models: &[ScoreRow]) -> String {
    let mut header = vec!["Model".to_string(), "No edit".to_string()];
    header.extend(ObjectCategory::ALL.iter().map(|c| c.name().to_string()));
    header.extend(["Norm.", "Anom.", "All"].map(String::from));
    render_table(header, None, models, &[1, 2, 6, 15])
}

/// Source-wise layout: DriveBench SA-Bench | Overall.
pub fn render_source_table(models: &[ScoreRow]) -> String {
    let header = ["Model", "DriveBench", "SA-Bench", "Overall"].map(String::from).to_vec();
    render_table(header, None, models, &[1, 3])
}

/// All three tables for a set of reports (and optionally the human row).
pub fn render_report(reports: &[AccuracyReport], human: Option<&AccuracyReport>) -> String {
    let scen: Vec<_> = reports.iter().map(scenario_row).collect();
    let cat: Vec<_> = reports.iter().map(category_row).collect();
    let src: Vec<_> = reports.iter().map(source_row).collect();
    let human_row = human.map(|h| ScoreRow {
        label: "Human eval.".into(),
        ..scenario_row(h)
    });
    let mut out = String::new();
    let _ = writeln!(out, "Scenario-wise accuracy (%)\n");
    out.push_str(&render_scenario_table(human_row.as_ref(), &scen));
    if !reports.is_empty() {
        let _ = writeln!(out, "\nCategory-wise accuracy (%)\n");
        out.push_str(&render_category_table(&cat));
        let _ = writeln!(out, "\nSource-wise accuracy (%)\n");
        out.push_str(&render_source_table(&src));
    }
    out
}

/// Reads a results file back.
pub fn read_results(path: &Path) -> Result<Vec<EvalResult>, EvalError> {
    Ok(crate::manifest::read_jsonl(path)?)
}

/// Category groups of the human study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SheetGroup {
    Original,
    Static,
    Motion,
    Intrusion,
    Distance,
}

impl SheetGroup {
    pub const ALL: [SheetGroup; 5] = [Self::Original, Self::Static, Self::Motion, Self::Intrusion, Self::Distance];

    pub fn of(item: &BenchItem) -> Self {
        match item.scenario {
            None => Self::Original,
            Some(ScenarioKind::Static) => Self::Static,
            Some(ScenarioKind::Motion) => Self::Motion,
            Some(ScenarioKind::Intrusion) => Self::Intrusion,
            Some(ScenarioKind::Distance) => Self::Distance,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Static => "static",
            Self::Motion => "motion",
            Self::Intrusion => "intrusion",
            Self::Distance => "distance",
        }
    }
}

impl std::fmt::Display for SheetGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of a human sheet as shown to the annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetRow {
    pub row_id: String,
    pub image: String,
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    pub option_c: String,
}

/// Hidden answer and metadata of a sheet row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRow {
    pub row_id: String,
    pub sheet: usize,
    pub item_id: String,
    pub group: SheetGroup,
    #[serde(default)]
    pub scenario: Option<ScenarioKind>,
    #[serde(default)]
    pub category: Option<ObjectCategory>,
    pub source: Source,
    pub answer: char,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SheetExport {
    pub sheets: Vec<Vec<SheetRow>>,
    pub key: Vec<KeyRow>,
}

pub const ANSWER_KEY_FILE: &str = "answer_key.csv";

pub fn sheet_file_name(sheet: usize) -> String {
    format!("sheet_{sheet}.csv")
}

/// Samples `per_category` items of every group into each of `sheets` sheets,
/// without reuse across sheets. Rows inside a sheet are shuffled.
pub fn build_human_sheets(
    items: &[BenchItem],
    sheets: usize,
    per_category: usize,
    seed: u64,
) -> Result<SheetExport, EvalError> {
    if sheets == 0 || per_category == 0 {
        return Err(EvalError::Input("sheets and per-category count must be positive".into()));
    }
    let mut groups: BTreeMap<SheetGroup, Vec<&BenchItem>> = BTreeMap::new();
    for item in items {
        groups.entry(SheetGroup::of(item)).or_default().push(item);
    }
    let needed = sheets * per_category;
    let mut per_sheet: Vec<Vec<&BenchItem>> = vec![Vec::new(); sheets];
    for group in SheetGroup::ALL {
        let mut pool = groups.remove(&group).unwrap_or_default();
        if pool.len() < needed {
            return Err(EvalError::Insufficient {
                group,
                needed,
                available: pool.len(),
            });
        }
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &format!("sheets/{}", group.name())));
        pool.shuffle(&mut rng);
        for (k, chunk) in pool[..needed].chunks(per_category).enumerate() {
            per_sheet[k].extend_from_slice(chunk);
        }
    }
    let mut export = SheetExport {
        sheets: Vec::new(),
        key: Vec::new(),
    };
    for (k, mut rows) in per_sheet.into_iter().enumerate() {
        let sheet = k + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &format!("sheet-order/{sheet}")));
        rows.shuffle(&mut rng);
        let mut out = Vec::with_capacity(rows.len());
        for (j, item) in rows.into_iter().enumerate() {
            let row_id = format!("{sheet}-{:03}", j + 1);
            let [a, b, c] = BenchItem::options();
            out.push(SheetRow {
                row_id: row_id.clone(),
                image: item.image.clone(),
                question: item.question.clone(),
                option_a: a.into(),
                option_b: b.into(),
                option_c: c.into(),
            });
            export.key.push(KeyRow {
                row_id,
                sheet,
                item_id: item.id.clone(),
                group: SheetGroup::of(item),
                scenario: item.scenario,
                category: item.category,
                source: item.source.clone(),
                answer: item.gt.letter(),
            });
        }
        export.sheets.push(out);
    }
    Ok(export)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, EvalError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Writes `sheet_<n>.csv` files and the answer key into `out_dir`.
pub fn export_human_sheets(
    items: &[BenchItem],
    sheets: usize,
    per_category: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<SheetExport, EvalError> {
    let export = build_human_sheets(items, sheets, per_category, seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for (k, rows) in export.sheets.iter().enumerate() {
        let path = out_dir.join(sheet_file_name(k + 1));
        let mut w = csv_writer(&path)?;
        for row in rows {
            w.serialize(row).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    write_key(&out_dir.join(ANSWER_KEY_FILE), &export.key)?;
    Ok(export)
}

#[derive(Serialize, Deserialize)]
struct KeyCsv {
    row_id: String,
    sheet: usize,
    item_id: String,
    group: SheetGroup,
    scenario: String,
    category: String,
    source: String,
    answer: String,
}

fn write_key(path: &Path, key: &[KeyRow]) -> Result<(), EvalError> {
    let mut w = csv_writer(path)?;
    for k in key {
        w.serialize(KeyCsv {
            row_id: k.row_id.clone(),
            sheet: k.sheet,
            item_id: k.item_id.clone(),
            group: k.group,
            scenario: k.scenario.map_or(String::new(), |s| s.name().to_string()),
            category: k.category.map_or(String::new(), |c| c.name().to_string()),
            source: k.source.as_str().to_string(),
            answer: k.answer.to_string(),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_answer_key(path: &Path) -> Result<Vec<KeyRow>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for row in r.deserialize::<KeyCsv>() {
        let k = row.map_err(csv_err(path))?;
        let bad = |what: &str| EvalError::Input(format!("{}: row {}: bad {what}", path.display(), k.row_id));
        let scenario = if k.scenario.is_empty() {
            None
        } else {
            Some(k.scenario.parse().map_err(|_| bad("scenario"))?)
        };
        let category = if k.category.is_empty() {
            None
        } else {
            Some(k.category.parse().map_err(|_| bad("category"))?)
        };
        let answer = k.answer.trim().chars().next().filter(|c| ActionDirection::from_letter(*c).is_some());
        out.push(KeyRow {
            scenario,
            category,
            answer: answer.ok_or_else(|| bad("answer"))?,
            source: Source::from(k.source.clone()),
            row_id: k.row_id,
            sheet: k.sheet,
            item_id: k.item_id,
            group: k.group,
        });
    }
    Ok(out)
}

/// One annotator answer; `answer` may be blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanAnswer {
    pub row_id: String,
    pub answer: String,
}

pub fn read_human_answers(path: &Path) -> Result<Vec<HumanAnswer>, EvalError> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    r.deserialize::<HumanAnswer>()
        .map(|row| row.map_err(csv_err(path)))
        .collect()
}

/// Normalizes one answer cell: blank stays blank, otherwise one of A/B/C.
pub fn normalize_choice(raw: &str) -> Result<Option<ActionDirection>, String> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    let mut chars = t.chars();
    match (chars.next().map(|c| c.to_ascii_uppercase()), chars.next()) {
        // 1/2/3 are the annotation app's keyboard shortcuts
        (Some(c), None) => ActionDirection::from_letter(match c {
            '1' => 'A',
            '2' => 'B',
            '3' => 'C',
            other => other,
        })
        .map(Some)
        .ok_or_else(|| format!("choice {t:?} is not A, B or C")),
        _ => Err(format!("choice {t:?} is not A, B or C")),
    }
}

/// Scores annotator answers against the key. Every key row of each sheet
/// that has answers is counted; blank or missing answers are incorrect.
pub fn score_human(answers: &[HumanAnswer], key: &[KeyRow], label: &str) -> Result<AccuracyReport, EvalError> {
    let by_row: HashMap<&str, &KeyRow> = key.iter().map(|k| (k.row_id.as_str(), k)).collect();
    let mut given: HashMap<&str, Option<ActionDirection>> = HashMap::new();
    let mut sheets = HashSet::new();
    for a in answers {
        let k = by_row
            .get(a.row_id.as_str())
            .ok_or_else(|| EvalError::Input(format!("answer for unknown row id {}", a.row_id)))?;
        let choice = normalize_choice(&a.answer).map_err(|e| EvalError::Input(format!("row {}: {e}", a.row_id)))?;
        if given.insert(a.row_id.as_str(), choice).is_some() {
            return Err(EvalError::Input(format!("duplicate answer for row id {}", a.row_id)));
        }
        sheets.insert(k.sheet);
    }
    let outcomes: Vec<Outcome> = key
        .iter()
        .filter(|k| sheets.contains(&k.sheet))
        .map(|k| Outcome {
            scenario: k.scenario,
            category: k.category,
            source: k.source.clone(),
            correct: given
                .get(k.row_id.as_str())
                .copied()
                .flatten()
                .is_some_and(|c| c.letter() == k.answer),
        })
        .collect();
    Ok(AccuracyReport::from_outcomes(label, &outcomes, true))
}

/// Writes the report as text and as CSV rows next to each other.
pub fn write_report(dir: &Path, stem: &str, text: &str, csv: &str) -> Result<(PathBuf, PathBuf), EvalError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let txt = dir.join(format!("{stem}.txt"));
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&txt, text).map_err(io_err(&txt))?;
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    Ok((txt, csv_path))
}

/// Title-cased category label, for callers building their own tables.
pub fn category_label(c: ObjectCategory) -> String {
    title_case(c.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_precedence() {
        assert_eq!(parse_answer("B"), Some(ActionDirection::Center));
        assert_eq!(parse_answer("I would go left because..."), Some(ActionDirection::Left));
        assert_eq!(parse_answer("Both A and C seem unsafe; answer: B"), Some(ActionDirection::Left));
        assert_eq!(parse_answer("(C) go right"), Some(ActionDirection::Right));
        assert_eq!(parse_answer("GO STRAIGHT, then go left"), Some(ActionDirection::Center));
        assert_eq!(parse_answer("a b c"), None);
        assert_eq!(parse_answer("ABC"), None);
        assert_eq!(parse_answer(""), None);
        for a in ActionDirection::ALL {
            assert_eq!(parse_answer(a.option_text()), Some(a));
        }
    }

    #[test]
    fn average_reproduces_motion_cell() {
        let models: Vec<ScoreRow> = [25.5, 32.6, 2.0, 10.6, 14.1, 55.8, 33.1]
            .iter()
            .enumerate()
            .map(|(i, v)| ScoreRow {
                label: format!("m{i}"),
                cells: vec![Some(*v)],
            })
            .collect();
        assert_eq!(format_pct(average_row(&models).cells[0]), "24.8");
    }

    #[test]
    fn choices() {
        assert_eq!(normalize_choice(" b "), Ok(Some(ActionDirection::Center)));
        assert_eq!(normalize_choice(""), Ok(None));
        assert!(normalize_choice("D").is_err());
        assert_eq!(normalize_choice("3"), Ok(Some(ActionDirection::Right)));
        assert!(normalize_choice("4").is_err());
        assert!(normalize_choice("AB").is_err());
    }
}
