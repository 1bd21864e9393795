//! Model roles behind the pipeline: the image editor, the vision-language
//! judge and the answering model under evaluation.
//!
//! Every role has a wire client ([`http`]) and a procedural stub ([`stub`]) so
//! whole runs can happen offline. All three speak the JSON shapes in [`wire`].

pub mod http;
pub mod sprite;
pub mod stub;
pub mod wire;

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use image::{GrayImage, ImageFormat, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ActionDirection, Edge};
use crate::planner::Orientation;

/// Completeness question sent to the judge with the before/after crops.
pub const COMPLETENESS_PROMPT: &str =
    "Analyze the object's completeness in the edited image. Choose from: not generated, complete, incomplete";
/// Direction question sent to the judge with the after crop.
pub const DIRECTION_PROMPT: &str = "Analyze the object\u{2019}s direction. Choose from: left, right, forward, backward";

/// Request parameter carrying the 1-based attempt number of a step.
pub const TRIAL_PARAM: &str = "trial";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("undecodable payload: {0}")]
    Decode(String),
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Short machine tag for records and result files.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Transport(_) => "transport",
            Self::Timeout(_) => "timeout",
            Self::Status { .. } => "status",
            Self::Decode(_) => "decode",
            Self::DimMismatch { .. } => "dim_mismatch",
            Self::InvalidRequest(_) => "invalid_request",
        }
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, BackendError> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| BackendError::InvalidRequest(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn encode_mask_png(mask: &GrayImage) -> Result<Vec<u8>, BackendError> {
    let mut out = Cursor::new(Vec::new());
    mask.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| BackendError::InvalidRequest(format!("png encode: {e}")))?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage, BackendError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| BackendError::Decode(e.to_string()))
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<GrayImage, BackendError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_luma8())
        .map_err(|e| BackendError::Decode(e.to_string()))
}

pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), BackendError> {
    ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| BackendError::Decode(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditRequest {
    pub image: Vec<u8>,
    pub mask: Vec<u8>,
    pub prompt: String,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
}

impl EditRequest {
    pub fn new(
        image: &RgbImage,
        mask: &GrayImage,
        prompt: impl Into<String>,
        seed: u64,
        params: BTreeMap<String, String>,
    ) -> Result<Self, BackendError> {
        let req = Self {
            image: encode_png(image)?,
            mask: encode_mask_png(mask)?,
            prompt: prompt.into(),
            seed,
            params,
        };
        req.validate()?;
        Ok(req)
    }

    /// Rejects empty prompts and image/mask size mismatches before transport.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        let image = png_dimensions(&self.image)?;
        let mask = png_dimensions(&self.mask)?;
        if image != mask {
            return Err(BackendError::DimMismatch {
                expected: image,
                actual: mask,
            });
        }
        Ok(())
    }

    pub fn trial(&self) -> Option<u32> {
        self.params.get(TRIAL_PARAM).and_then(|t| t.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutpaintRequest {
    pub image: Vec<u8>,
    pub side: Edge,
    pub pixels: u32,
}

impl OutpaintRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.pixels == 0 {
            return Err(BackendError::InvalidRequest("outpaint width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completeness {
    NotGenerated,
    Complete,
    Incomplete,
}

/// Direction vocabulary of the judge's direction question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgedDirection {
    Left,
    Right,
    Forward,
    Backward,
}

impl JudgedDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Forward => "forward",
            Self::Backward => "backward",
        }
    }

    pub fn from_orientation(o: Orientation) -> Self {
        match o {
            Orientation::FacingLeft => Self::Left,
            Orientation::FacingRight => Self::Right,
            Orientation::FacingForward => Self::Forward,
            Orientation::FacingBackward => Self::Backward,
        }
    }
}

/// Outcome of both judge questions for one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub completeness: Completeness,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<JudgedDirection>,
    /// Raw judge transcripts, completeness first.
    pub raw: Vec<String>,
    /// True if any transcript had no recognizable keyword.
    #[serde(default)]
    pub unparseable: bool,
}

impl JudgeVerdict {
    pub fn accepts(&self, expected: Orientation) -> bool {
        self.completeness == Completeness::Complete && self.direction == Some(JudgedDirection::from_orientation(expected))
    }
}

/// First whole-word, case-insensitive occurrence among `keywords`. On a tie
/// at the same position the longer keyword wins.
pub fn first_keyword<T: Copy>(text: &str, keywords: &[(&str, T)]) -> Option<T> {
    let lower = text.to_lowercase();
    let bytes = lower.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut best: Option<(usize, usize, T)> = None;
    for &(kw, value) in keywords {
        let mut from = 0;
        while let Some(off) = lower[from..].find(kw) {
            let start = from + off;
            let end = start + kw.len();
            let left_ok = start == 0 || !is_word(bytes[start - 1]);
            let right_ok = end == bytes.len() || !is_word(bytes[end]);
            if left_ok && right_ok {
                let better = match best {
                    None => true,
                    Some((pos, len, _)) => start < pos || (start == pos && kw.len() > len),
                };
                if better {
                    best = Some((start, kw.len(), value));
                }
                break;
            }
            from = start + 1;
        }
    }
    best.map(|(_, _, v)| v)
}

pub fn parse_completeness(text: &str) -> Option<Completeness> {
    first_keyword(
        text,
        &[
            ("not generated", Completeness::NotGenerated),
            ("complete", Completeness::Complete),
            ("incomplete", Completeness::Incomplete),
        ],
    )
}

pub fn parse_direction(text: &str) -> Option<JudgedDirection> {
    first_keyword(
        text,
        &[
            ("left", JudgedDirection::Left),
            ("right", JudgedDirection::Right),
            ("forward", JudgedDirection::Forward),
            ("backward", JudgedDirection::Backward),
        ],
    )
}

/// Per-endpoint call counters.
#[derive(Debug, Default)]
pub struct CallMetrics {
    pub edit: AtomicU64,
    pub outpaint: AtomicU64,
    pub chat: AtomicU64,
    pub errors: AtomicU64,
}

impl CallMetrics {
    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn edits(&self) -> u64 {
        self.edit.load(Ordering::Relaxed)
    }

    pub fn outpaints(&self) -> u64 {
        self.outpaint.load(Ordering::Relaxed)
    }

    pub fn chats(&self) -> u64 {
        self.chat.load(Ordering::Relaxed)
    }
}

/// Mask-conditioned image editor and outpainter.
pub trait Editor: Send + Sync {
    /// Returns a PNG of the same size as the request image.
    fn edit(&self, req: &EditRequest) -> Result<Vec<u8>, BackendError>;
    /// Returns a PNG `pixels` wider than the request image.
    fn outpaint(&self, req: &OutpaintRequest) -> Result<Vec<u8>, BackendError>;
}

/// A vision-language chat endpoint: images plus a prompt in, text out.
pub trait VisionChat: Send + Sync {
    fn chat(&self, images: &[Vec<u8>], prompt: &str) -> Result<String, BackendError>;
}

/// Quality-check judge built on a [`VisionChat`] endpoint.
#[derive(Clone)]
pub struct Judge {
    chat: Arc<dyn VisionChat>,
}

impl Judge {
    pub fn new(chat: Arc<dyn VisionChat>) -> Self {
        Self { chat }
    }

    /// Unparseable transcripts map to `NotGenerated` (the flag is returned too).
    pub fn check_completeness(&self, crop_before: &[u8], crop_after: &[u8]) -> Result<(Completeness, String, bool), BackendError> {
        if png_dimensions(crop_before)? != png_dimensions(crop_after)? {
            return Err(BackendError::DimMismatch {
                expected: png_dimensions(crop_before)?,
                actual: png_dimensions(crop_after)?,
            });
        }
        let raw = self.chat.chat(&[crop_before.to_vec(), crop_after.to_vec()], COMPLETENESS_PROMPT)?;
        let parsed = parse_completeness(&raw);
        Ok((parsed.unwrap_or(Completeness::NotGenerated), raw, parsed.is_none()))
    }

    pub fn check_direction(&self, crop_after: &[u8]) -> Result<(Option<JudgedDirection>, String), BackendError> {
        let (w, h) = png_dimensions(crop_after)?;
        if w == 0 || h == 0 {
            return Err(BackendError::InvalidRequest("empty crop".into()));
        }
        let raw = self.chat.chat(&[crop_after.to_vec()], DIRECTION_PROMPT)?;
        Ok((parse_direction(&raw), raw))
    }

    /// Asks both questions; the direction question is skipped when the object
    /// is not complete.
    pub fn verdict(&self, crop_before: &[u8], crop_after: &[u8]) -> Result<JudgeVerdict, BackendError> {
        let (completeness, raw_c, bad_c) = self.check_completeness(crop_before, crop_after)?;
        let mut verdict = JudgeVerdict {
            completeness,
            direction: None,
            raw: vec![raw_c],
            unparseable: bad_c,
        };
        if completeness == Completeness::Complete {
            let (direction, raw_d) = self.check_direction(crop_after)?;
            verdict.unparseable |= direction.is_none();
            verdict.direction = direction;
            verdict.raw.push(raw_d);
        }
        Ok(verdict)
    }
}

/// One multiple-choice question for the answering model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerRequest {
    /// Not sent over the wire; lets scripted answerers key their replies.
    pub item_id: String,
    pub image: Vec<u8>,
    pub question: String,
}

impl AnswerRequest {
    /// Question followed by the fixed option block and the answer instruction.
    pub fn prompt(&self) -> Result<String, BackendError> {
        let question = self.question.trim();
        if question.is_empty() {
            return Err(BackendError::InvalidRequest("empty question".into()));
        }
        let options: Vec<String> = ActionDirection::ALL
            .iter()
            .map(|a| format!("{}. {}", a.letter(), a.option_text()))
            .collect();
        Ok(format!("{question}\n{}\nAnswer with A, B, or C.", options.join("  ")))
    }
}

/// The model under evaluation. Returns the transcript verbatim.
pub trait Answerer: Send + Sync {
    fn ask(&self, req: &AnswerRequest) -> Result<String, BackendError>;
}

/// Answers through any [`VisionChat`] endpoint.
pub struct ChatAnswerer {
    chat: Arc<dyn VisionChat>,
}

impl ChatAnswerer {
    pub fn new(chat: Arc<dyn VisionChat>) -> Self {
        Self { chat }
    }
}

impl Answerer for ChatAnswerer {
    fn ask(&self, req: &AnswerRequest) -> Result<String, BackendError> {
        let prompt = req.prompt()?;
        self.chat.chat(std::slice::from_ref(&req.image), &prompt)
    }
}

/// Editor and judge used by the generation loop.
#[derive(Clone)]
pub struct Backends {
    pub editor: Arc<dyn Editor>,
    pub judge: Judge,
}
