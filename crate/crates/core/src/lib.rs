//! Scenario synthesis for safe-direction driving questions: mask geometry,
//! vanishing-point detection, scenario planning, model backends, the
//! generate-and-check loop and multiple-choice evaluation.

pub mod annotation;
pub mod backends;
pub mod evaluator;
pub mod fixtures;
pub mod geometry;
pub mod manifest;
pub mod orchestrator;
pub mod planner;
pub mod seeds;
pub mod vp_detect;

pub use backends::{
    AnswerRequest, Answerer, BackendError, Backends, Completeness, EditRequest, Editor, Judge, JudgeVerdict,
    JudgedDirection, OutpaintRequest, VisionChat,
};
pub use evaluator::{parse_answer, AccuracyReport, EvalResult};
pub use geometry::{ActionDirection, Edge, Frame, GeometryConfig, ImageDims, MaskRegion, PadSpec};
pub use manifest::{BenchItem, Source};
pub use orchestrator::{FinalStatus, GenerationRecord};
pub use planner::{EditMode, EditPlan, EditStep, ObjectCategory, Orientation, ScenarioKind};
pub use vp_detect::{VPoint, VpParams};
