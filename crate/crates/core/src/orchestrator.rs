//! Generate-and-check execution of edit plans and benchmark assembly.
//!
//! Each step gets up to `max_trials` attempts. An attempt edits the current
//! image inside the step mask, crops the mask region before and after, and asks
//! the judge for completeness and direction. Accepted edits feed the next step;
//! a step that never passes leaves the image as it was.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    decode_png, encode_png, BackendError, Backends, EditRequest, JudgeVerdict, OutpaintRequest, TRIAL_PARAM,
};
use crate::geometry::{
    composite_inside, crop_after_pad_checked, crop_to_mask, outside_mask_deviation, pad_canvas, raster_row_to_mask_y,
    rasterize_mask, ActionDirection, Edge, GeometryError, GeometryOverrides, ImageDims, MaskRegion,
};
use crate::manifest::{read_jsonl, read_jsonl_if_exists, write_jsonl, BenchItem, ManifestError};
use crate::planner::{
    effective_prompt, eligibility, plan, EditMode, EditPlan, EditStep, ObjectCategory, Orientation,
    ScenarioKind,
};
use crate::seeds::{item_seed, trial_seed};
use crate::vp_detect::{detect_vp_with_diagnostics, fallback_row, clamp_row, VpParams};

pub const DEFAULT_MAX_TRIALS: u32 = 3;
/// Mean outside-mask deviation above which a live edit is flagged.
pub const OUTSIDE_TOLERANCE: f64 = 2.0 / 255.0;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> GenerateError + '_ {
    move |source| GenerateError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Errors that abort an item rather than consume a trial.
#[derive(Debug, Error)]
pub enum StepAbort {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("step {index}: {message}")]
    Invalid { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub run_seed: u64,
    pub max_trials: u32,
    pub workers: usize,
    pub geometry: GeometryOverrides,
    pub vp: VpParams,
    /// Paste the edited pixels back inside the mask only.
    pub composite: bool,
    /// Stamp records with wall-clock times (breaks byte reproducibility).
    pub timestamps: bool,
    /// Write a `vp/<id>.txt` sidecar per source image.
    pub vp_diagnostics: bool,
    /// Also list the unedited source items in `items.jsonl`.
    pub include_originals: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            run_seed: 0,
            max_trials: DEFAULT_MAX_TRIALS,
            workers: 4,
            geometry: GeometryOverrides::default(),
            vp: VpParams::default(),
            composite: true,
            timestamps: false,
            vp_diagnostics: false,
            include_originals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub scenarios: Vec<ScenarioKind>,
    pub categories: Vec<ObjectCategory>,
}

impl Selection {
    pub fn all() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            categories: ObjectCategory::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub trial: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<JudgeVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub prompt: String,
    pub mask: MaskRegion,
    pub mode: EditMode,
    pub orientation: Orientation,
    pub trials_used: u32,
    pub attempts: Vec<Attempt>,
    pub accepted: bool,
    /// Attempts whose outside-mask deviation exceeded the tolerance.
    #[serde(default)]
    pub deviation_warnings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    pub confidence: f64,
    /// Raster row the band was centred on.
    pub row: u32,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalStatus {
    Success,
    PartialFailure,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Id of the generated item: `<source>__<scenario>__<category>`.
    pub item_id: String,
    pub source_item: String,
    pub scenario: ScenarioKind,
    pub category: ObjectCategory,
    pub gt_action: ActionDirection,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vp: Option<VpInfo>,
    pub final_status: FinalStatus,
    /// Path of the output image relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

pub fn record_id(source_id: &str, scenario: ScenarioKind, category: ObjectCategory) -> String {
    format!("{source_id}__{}__{}", scenario.name(), category.name())
}

fn status_of(steps: &[StepRecord]) -> FinalStatus {
    let accepted = steps.iter().filter(|s| s.accepted).count();
    if !steps.is_empty() && accepted == steps.len() {
        FinalStatus::Success
    } else if accepted > 0 {
        FinalStatus::PartialFailure
    } else {
        FinalStatus::Failed
    }
}

/// Outcome of one attempt: the candidate image in the final frame plus the verdict.
fn attempt(
    current: &RgbImage,
    step: &EditStep,
    backends: &Backends,
    composite: bool,
    seed: u64,
    trial: u32,
    warnings: &mut u32,
) -> Result<(RgbImage, JudgeVerdict), BackendError> {
    let dims = (current.width(), current.height());
    let canvas = match step.pad {
        Some(pad) => {
            let req = OutpaintRequest {
                image: encode_png(current)?,
                side: pad.side,
                pixels: pad.r,
            };
            let mut padded = decode_png(&backends.editor.outpaint(&req)?)?;
            let expected = (dims.0 + pad.r, dims.1);
            if padded.dimensions() != expected {
                return Err(BackendError::DimMismatch {
                    expected,
                    actual: padded.dimensions(),
                });
            }
            if composite {
                // keep the original span exactly; only the new strip is synthesized
                let reference = pad_canvas(current, pad);
                let offset = if pad.side == Edge::Left { pad.r } else { 0 };
                let span = MaskRegion::new(offset, offset + dims.0, 0, dims.1, pad.frame()).map_err(geometry_backend)?;
                padded = composite_inside(&padded, &reference, &span).map_err(geometry_backend)?;
            }
            padded
        }
        None => current.clone(),
    };
    let canvas_dims = ImageDims::of(&canvas).map_err(geometry_backend)?;
    let mask_img = rasterize_mask(&step.mask, canvas_dims).map_err(geometry_backend)?;
    let mut params = BTreeMap::new();
    params.insert(TRIAL_PARAM.to_string(), trial.to_string());
    let req = EditRequest::new(&canvas, &mask_img, effective_prompt(step), seed, params)?;
    let mut edited = decode_png(&backends.editor.edit(&req)?)?;
    if edited.dimensions() != canvas.dimensions() {
        return Err(BackendError::DimMismatch {
            expected: canvas.dimensions(),
            actual: edited.dimensions(),
        });
    }
    if composite {
        let dev = outside_mask_deviation(&canvas, &edited, &step.mask).map_err(geometry_backend)?;
        if dev > OUTSIDE_TOLERANCE {
            *warnings += 1;
            tracing::warn!(deviation = dev, "editor changed pixels outside the mask");
        }
        edited = composite_inside(&canvas, &edited, &step.mask).map_err(geometry_backend)?;
    }
    let before = encode_png(&crop_to_mask(&canvas, &step.mask).map_err(geometry_backend)?)?;
    let after = encode_png(&crop_to_mask(&edited, &step.mask).map_err(geometry_backend)?)?;
    let verdict = backends.judge.verdict(&before, &after)?;
    let out = match step.pad {
        Some(pad) => {
            let window = crop_after_pad_checked(
                canvas_dims,
                ImageDims {
                    width: dims.0,
                    height: dims.1,
                },
                pad,
            )
            .map_err(geometry_backend)?;
            crop_to_mask(&edited, &window).map_err(geometry_backend)?
        }
        None => edited,
    };
    Ok((out, verdict))
}

fn geometry_backend(e: GeometryError) -> BackendError {
    BackendError::InvalidRequest(e.to_string())
}

/// Runs one step with up to `max_trials` attempts.
pub fn run_step(
    current: &RgbImage,
    step: &EditStep,
    step_index: usize,
    backends: &Backends,
    cfg: &GenerateConfig,
    item_seed: u64,
) -> Result<(RgbImage, StepRecord), StepAbort> {
    let frame_w = step.mask.frame.width(current.width());
    step.mask.check_within(frame_w, current.height())?;
    if cfg.max_trials == 0 {
        return Err(StepAbort::Invalid {
            index: step_index,
            message: "max_trials must be at least 1".into(),
        });
    }
    let mut record = StepRecord {
        prompt: effective_prompt(step),
        mask: step.mask,
        mode: step.mode,
        orientation: step.orientation,
        trials_used: 0,
        attempts: Vec::new(),
        accepted: false,
        deviation_warnings: 0,
    };
    for trial in 1..=cfg.max_trials {
        let seed = trial_seed(item_seed, step_index, trial);
        record.trials_used = trial;
        match attempt(current, step, backends, cfg.composite, seed, trial, &mut record.deviation_warnings) {
            Ok((image, verdict)) => {
                let accepted = verdict.accepts(step.orientation);
                record.attempts.push(Attempt {
                    trial,
                    seed,
                    verdict: Some(verdict),
                    error: None,
                    accepted,
                });
                if accepted {
                    record.accepted = true;
                    return Ok((image, record));
                }
            }
            Err(e) => {
                tracing::debug!(step = step_index, trial, error = %e, "attempt failed");
                record.attempts.push(Attempt {
                    trial,
                    seed,
                    verdict: None,
                    error: Some(format!("{}: {e}", e.tag())),
                    accepted: false,
                });
            }
        }
    }
    Ok((current.clone(), record))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Executes every step in order. Returns the record and the final image
/// unless the plan failed outright.
pub fn run_plan(
    source: &RgbImage,
    plan: &EditPlan,
    backends: &Backends,
    cfg: &GenerateConfig,
    seed: u64,
    vp: Option<VpInfo>,
) -> (GenerationRecord, Option<RgbImage>) {
    let started_at = cfg.timestamps.then(now);
    let mut record = GenerationRecord {
        item_id: record_id(&plan.item_id, plan.scenario, plan.category),
        source_item: plan.item_id.clone(),
        scenario: plan.scenario,
        category: plan.category,
        gt_action: plan.gt,
        seed,
        steps: Vec::new(),
        vp,
        final_status: FinalStatus::Failed,
        output_image: None,
        error: None,
        started_at,
        finished_at: None,
    };
    let mut current = source.clone();
    for (i, step) in plan.steps.iter().enumerate() {
        match run_step(&current, step, i, backends, cfg, seed) {
            Ok((image, step_record)) => {
                current = image;
                record.steps.push(step_record);
            }
            Err(e) => {
                record.error = Some(e.to_string());
                record.steps.clear();
                break;
            }
        }
    }
    record.final_status = if record.error.is_some() {
        FinalStatus::Failed
    } else {
        status_of(&record.steps)
    };
    record.finished_at = cfg.timestamps.then(now);
    let image = (record.final_status != FinalStatus::Failed).then_some(current);
    (record, image)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GenerateSummary {
    /// Records produced by this invocation.
    pub ran: usize,
    /// Jobs whose record (and image) already existed.
    pub resumed: usize,
    /// Scenario x category pairs dropped by eligibility.
    pub ineligible: Vec<(ScenarioKind, ObjectCategory)>,
    /// (item, scenario) pairs the planner declared inapplicable, e.g. motion with a center ground truth.
    pub inapplicable: usize,
    pub success: usize,
    pub partial: usize,
    pub failed: usize,
    pub cancelled: bool,
}

impl GenerateSummary {
    pub fn total_records(&self) -> usize {
        self.success + self.partial + self.failed
    }

    /// 0 with at least one success or nothing to do, 2 when everything failed.
    pub fn exit_code(&self) -> i32 {
        if self.success > 0 || self.total_records() == 0 {
            0
        } else {
            2
        }
    }
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} records ({} new, {} resumed): {} success, {} partial, {} failed",
            self.total_records(),
            self.ran,
            self.resumed,
            self.success,
            self.partial,
            self.failed
        )?;
        if self.inapplicable > 0 {
            write!(f, "; {} item/scenario pairs inapplicable", self.inapplicable)?;
        }
        for (s, c) in &self.ineligible {
            write!(f, "\nnote: {c} is not eligible for the {s} scenario, skipped")?;
        }
        if self.cancelled {
            write!(f, "\ncancelled before all items were processed")?;
        }
        Ok(())
    }
}

struct Unit<'a> {
    item: &'a BenchItem,
    jobs: Vec<(ScenarioKind, ObjectCategory)>,
}

struct Ctx<'a> {
    manifest_dir: &'a Path,
    out_dir: &'a Path,
    backends: &'a Backends,
    cfg: &'a GenerateConfig,
    writer: Mutex<File>,
    inapplicable: AtomicUsize,
    ran: AtomicUsize,
}

fn write_png(path: &Path, image: &RgbImage) -> Result<(), GenerateError> {
    let bytes = encode_png(image).map_err(|e| GenerateError::Config(e.to_string()))?;
    let tmp = path.with_extension("png.tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn vp_for(ctx: &Ctx, item: &BenchItem, image: &RgbImage) -> VpInfo {
    let height = image.height();
    let detected = detect_vp_with_diagnostics(image, &ctx.cfg.vp);
    if ctx.cfg.vp_diagnostics {
        let dir = ctx.out_dir.join("vp");
        let text = match &detected {
            Ok((vp, diag)) => diag.render(vp.as_ref()),
            Err(e) => format!("{e}\n"),
        };
        if let Err(e) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(format!("{}.txt", item.id)), text)) {
            tracing::warn!(error = %e, "could not write vanishing-point diagnostics");
        }
    }
    match detected {
        Ok((Some(vp), _)) => VpInfo {
            x: Some(vp.x),
            y: Some(vp.y),
            confidence: vp.confidence,
            row: clamp_row(vp.y, height),
            fallback: false,
        },
        _ => VpInfo {
            x: None,
            y: None,
            confidence: 0.0,
            row: fallback_row(height),
            fallback: true,
        },
    }
}

fn failed_record(item: &BenchItem, scenario: ScenarioKind, category: ObjectCategory, seed: u64, error: String) -> GenerationRecord {
    GenerationRecord {
        item_id: record_id(&item.id, scenario, category),
        source_item: item.id.clone(),
        scenario,
        category,
        gt_action: item.gt,
        seed,
        steps: Vec::new(),
        vp: None,
        final_status: FinalStatus::Failed,
        output_image: None,
        error: Some(error),
        started_at: None,
        finished_at: None,
    }
}

fn append(ctx: &Ctx, record: &GenerationRecord) -> Result<(), GenerateError> {
    let mut line = serde_json::to_string(record).map_err(|e| GenerateError::Config(e.to_string()))?;
    line.push('\n');
    let mut w = ctx.writer.lock().unwrap_or_else(|p| p.into_inner());
    let path = ctx.out_dir.join(RECORDS_FILE);
    w.write_all(line.as_bytes()).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    ctx.ran.fetch_add(1, Ordering::Relaxed);
    Ok(())
}

fn process_unit(ctx: &Ctx, unit: &Unit, cancel: &AtomicBool) -> Result<(), GenerateError> {
    let path = ctx.manifest_dir.join(&unit.item.image);
    let loaded = image::open(&path)
        .map(|i| i.to_rgb8())
        .map_err(|e| format!("cannot load {}: {e}", path.display()))
        .and_then(|img| ImageDims::of(&img).map(|d| (img, d)).map_err(|e| e.to_string()));
    let mut vp_cache: Option<VpInfo> = None;
    for &(scenario, category) in &unit.jobs {
        if cancel.load(Ordering::Relaxed) {
            break;
        }
        let id = record_id(&unit.item.id, scenario, category);
        let seed = item_seed(ctx.cfg.run_seed, &id);
        let (source, dims) = match &loaded {
            Ok(pair) => (&pair.0, pair.1),
            Err(msg) => {
                append(ctx, &failed_record(unit.item, scenario, category, seed, msg.clone()))?;
                continue;
            }
        };
        let geometry = match ctx.cfg.geometry.resolve(dims) {
            Ok(g) => g,
            Err(e) => {
                append(ctx, &failed_record(unit.item, scenario, category, seed, e.to_string()))?;
                continue;
            }
        };
        let vp = if scenario == ScenarioKind::Distance {
            Some(*vp_cache.get_or_insert_with(|| vp_for(ctx, unit.item, source)))
        } else {
            None
        };
        let vp_y = vp.map_or(0, |v| raster_row_to_mask_y(v.row, dims.height));
        let plan = match plan(unit.item, scenario, category, dims, &geometry, vp_y) {
            Ok(p) => p,
            Err(e) if e.is_inapplicable() => {
                ctx.inapplicable.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            Err(e) => {
                append(ctx, &failed_record(unit.item, scenario, category, seed, e.to_string()))?;
                continue;
            }
        };
        let (mut record, image) = run_plan(source, &plan, ctx.backends, ctx.cfg, seed, vp);
        if let Some(image) = image {
            let rel = format!("{IMAGES_DIR}/{id}.png");
            write_png(&ctx.out_dir.join(&rel), &image)?;
            record.output_image = Some(rel);
        }
        append(ctx, &record)?;
    }
    Ok(())
}

fn completed_ids(out_dir: &Path, records: &[GenerationRecord]) -> BTreeSet<String> {
    records
        .iter()
        .filter(|r| r.output_image.as_ref().is_none_or(|p| out_dir.join(p).is_file()))
        .map(|r| r.item_id.clone())
        .collect()
}

/// Runs every eligible (item, scenario, category) job of the source manifest
/// and writes `images/`, `records.jsonl` and `items.jsonl` under `out_dir`.
/// Existing records whose outputs are present are kept and not re-run.
pub fn generate_benchmark(
    source_manifest: &Path,
    out_dir: &Path,
    selection: &Selection,
    cfg: &GenerateConfig,
    backends: &Backends,
    cancel: &AtomicBool,
) -> Result<GenerateSummary, GenerateError> {
    if cfg.max_trials == 0 {
        return Err(GenerateError::Config("max_trials must be at least 1".into()));
    }
    let items = read_jsonl::<BenchItem>(source_manifest)?;
    let mut seen = BTreeSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(GenerateError::Config(format!("duplicate source item id {}", item.id)));
        }
    }
    let manifest_dir = source_manifest.parent().unwrap_or(Path::new("."));
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let records_path = out_dir.join(RECORDS_FILE);
    let existing: Vec<GenerationRecord> = read_jsonl_if_exists(&records_path)?;
    let done = completed_ids(out_dir, &existing);
    // drop stale rows (missing images) so they are re-run cleanly
    let mut kept: HashMap<String, GenerationRecord> = HashMap::new();
    for r in existing {
        if done.contains(&r.item_id) {
            kept.insert(r.item_id.clone(), r);
        }
    }
    let mut kept_rows: Vec<_> = kept.values().cloned().collect();
    kept_rows.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    write_jsonl(&records_path, &kept_rows).map_err(io_err(&records_path))?;

    let mut summary = GenerateSummary::default();
    let mut ineligible = BTreeSet::new();
    let mut units = Vec::new();
    for item in &items {
        let mut jobs = Vec::new();
        for &scenario in &selection.scenarios {
            for &category in &selection.categories {
                if !eligibility(category, scenario) {
                    ineligible.insert((scenario, category));
                    continue;
                }
                if kept.contains_key(&record_id(&item.id, scenario, category)) {
                    summary.resumed += 1;
                    continue;
                }
                jobs.push((scenario, category));
            }
        }
        if !jobs.is_empty() {
            units.push(Unit { item, jobs });
        }
    }
    summary.ineligible = ineligible.into_iter().collect();

    let writer = OpenOptions::new()
        .append(true)
        .create(true)
        .open(&records_path)
        .map_err(io_err(&records_path))?;
    let ctx = Ctx {
        manifest_dir,
        out_dir,
        backends,
        cfg,
        writer: Mutex::new(writer),
        inapplicable: AtomicUsize::new(0),
        ran: AtomicUsize::new(0),
    };
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<GenerateError>> = Mutex::new(None);
    let workers = cfg.workers.clamp(1, units.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if cancel.load(Ordering::Relaxed) || first_error.lock().unwrap_or_else(|p| p.into_inner()).is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(unit) = units.get(i) else { break };
                if let Err(e) = process_unit(&ctx, unit, cancel) {
                    first_error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                }
            });
        }
    });
    summary.cancelled = cancel.load(Ordering::Relaxed);
    summary.ran = ctx.ran.load(Ordering::Relaxed);
    summary.inapplicable = ctx.inapplicable.load(Ordering::Relaxed);
    drop(ctx);

    let items_written = finalize(source_manifest, out_dir, cfg, &items)?;
    for r in &items_written {
        match r.final_status {
            FinalStatus::Success => summary.success += 1,
            FinalStatus::PartialFailure => summary.partial += 1,
            FinalStatus::Failed => summary.failed += 1,
        }
    }
    if let Some(e) = first_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    Ok(summary)
}

/// Rewrites `records.jsonl` sorted by id (last row per id wins) and derives
/// `items.jsonl` from the successful records. Returns the final records.
fn finalize(
    source_manifest: &Path,
    out_dir: &Path,
    cfg: &GenerateConfig,
    sources: &[BenchItem],
) -> Result<Vec<GenerationRecord>, GenerateError> {
    let records_path = out_dir.join(RECORDS_FILE);
    let mut by_id: BTreeMap<String, GenerationRecord> = BTreeMap::new();
    for r in read_jsonl_if_exists::<GenerationRecord>(&records_path)? {
        by_id.insert(r.item_id.clone(), r);
    }
    let records: Vec<GenerationRecord> = by_id.into_values().collect();
    write_jsonl(&records_path, &records).map_err(io_err(&records_path))?;

    let by_source: HashMap<&str, &BenchItem> = sources.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut items = Vec::new();
    if cfg.include_originals {
        let manifest_dir = source_manifest.parent().unwrap_or(Path::new("."));
        for src in sources {
            let rel = format!("{IMAGES_DIR}/{}.png", src.id);
            let dest = out_dir.join(&rel);
            if !dest.is_file() {
                let img = image::open(manifest_dir.join(&src.image))
                    .map_err(|e| GenerateError::Config(format!("cannot load {}: {e}", src.image)))?
                    .to_rgb8();
                write_png(&dest, &img)?;
            }
            items.push(BenchItem {
                image: rel,
                ..src.clone()
            });
        }
    }
    for r in records.iter().filter(|r| r.final_status == FinalStatus::Success) {
        let (Some(src), Some(image)) = (by_source.get(r.source_item.as_str()), &r.output_image) else {
            continue;
        };
        items.push(BenchItem {
            id: r.item_id.clone(),
            image: image.clone(),
            question: src.question.clone(),
            gt: r.gt_action,
            source: src.source.clone(),
            scenario: Some(r.scenario),
            category: Some(r.category),
            origin: Some(src.id.clone()),
        });
    }
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let items_path = out_dir.join(ITEMS_FILE);
    write_jsonl(&items_path, &items).map_err(io_err(&items_path))?;
    Ok(records)
}

/// Scenario x category counts of generated items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StatsTable {
    pub counts: BTreeMap<ScenarioKind, BTreeMap<ObjectCategory, usize>>,
    /// Items without a scenario (unedited originals).
    pub originals: usize,
}

impl StatsTable {
    pub fn from_items<'a>(items: impl IntoIterator<Item = &'a BenchItem>) -> Self {
        let mut table = Self::default();
        for item in items {
            match (item.scenario, item.category) {
                (Some(s), Some(c)) => *table.counts.entry(s).or_default().entry(c).or_default() += 1,
                _ => table.originals += 1,
            }
        }
        table
    }

    pub fn cell(&self, scenario: ScenarioKind, category: ObjectCategory) -> usize {
        self.counts
            .get(&scenario)
            .and_then(|row| row.get(&category))
            .copied()
            .unwrap_or(0)
    }

    pub fn row_total(&self, scenario: ScenarioKind) -> usize {
        self.counts.get(&scenario).map_or(0, |row| row.values().sum())
    }

    pub fn column_total(&self, category: ObjectCategory) -> usize {
        ScenarioKind::ALL.iter().map(|&s| self.cell(s, category)).sum()
    }

    pub fn total(&self) -> usize {
        ScenarioKind::ALL.iter().map(|&s| self.row_total(s)).sum()
    }

    /// Aligned text table: one row per scenario, categories in the fixed
    /// order, `-` for ineligible empty cells, totals on both margins.
    pub fn render(&self) -> String {
        let mut header = vec!["Scenario".to_string()];
        header.extend(ObjectCategory::ALL.iter().map(|c| title_case(c.name())));
        header.push("Total".into());
        let mut rows = vec![header];
        for s in ScenarioKind::ALL {
            let mut row = vec![s.title().to_string()];
            for c in ObjectCategory::ALL {
                let n = self.cell(s, c);
                row.push(if n == 0 && !eligibility(c, s) { "-".into() } else { n.to_string() });
            }
            row.push(self.row_total(s).to_string());
            rows.push(row);
        }
        let mut total = vec!["Total".to_string()];
        total.extend(ObjectCategory::ALL.iter().map(|&c| self.column_total(c).to_string()));
        total.push(self.total().to_string());
        rows.push(total);
        let mut out = render_rows(&rows, &[1, 5, 14, 5]);
        if self.originals > 0 {
            let _ = writeln!(out, "unedited items: {}", self.originals);
        }
        out
    }

    /// `scenario,category,count` rows for every cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,category,count\n");
        for s in ScenarioKind::ALL {
            for c in ObjectCategory::ALL {
                let _ = writeln!(out, "{},{},{}", s.name(), c.name(), self.cell(s, c));
            }
        }
        out
    }
}

pub(crate) fn title_case(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Left-aligns the first column, right-aligns the rest. A `|` separator is
/// drawn before each column index listed in `bars`; a rule goes under the
/// header and above the last row when `bars` is non-empty.
pub(crate) fn render_rows(rows: &[Vec<String>], bars: &[usize]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        let mut s = String::new();
        for (c, w) in widths.iter().enumerate() {
            let cell = row.get(c).map_or("", String::as_str);
            if c > 0 {
                s.push_str(if bars.contains(&c) { " | " } else { "  " });
            }
            if c == 0 {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "{cell:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let rule_len = line(&rows[0]).chars().count();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        if i == rows.len() - 1 && i > 1 {
            let _ = writeln!(out, "{}", "-".repeat(rule_len));
        }
        let _ = writeln!(out, "{}", line(row));
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(rule_len));
        }
    }
    out
}

/// Reads a manifest and tabulates it.
pub fn stats(manifest: &Path) -> Result<StatsTable, ManifestError> {
    let items: Vec<BenchItem> = read_jsonl(manifest)?;
    Ok(StatsTable::from_items(&items))
}

/// Output path helper for callers that need the items file of a run.
pub fn items_path(out_dir: &Path) -> PathBuf {
    out_dir.join(ITEMS_FILE)
}
