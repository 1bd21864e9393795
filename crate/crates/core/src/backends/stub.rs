//! Procedural stand-ins for the editor, judge and answerer.
//!
//! The stub editor draws a tagged sprite (see [`super::sprite`]) inside the
//! mask and leaves every other pixel untouched; the stub judge reads those
//! tags back. Both are pure functions of their inputs, so stub runs are
//! byte-reproducible.

use std::collections::HashMap;

use crate::backends::sprite;
use crate::backends::{
    decode_mask_png, decode_png, encode_png, AnswerRequest, Answerer, BackendError, CallMetrics, EditRequest, Editor,
    JudgedDirection, OutpaintRequest, VisionChat, COMPLETENESS_PROMPT, DIRECTION_PROMPT,
};
use crate::geometry::{pad_canvas, PadSpec};
use crate::manifest::BenchItem;
use crate::planner::{ObjectCategory, Orientation};
use crate::seeds::splitmix64;

/// When the stub editor pretends the model failed to render anything.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Injection {
    #[default]
    Off,
    Always,
    /// Fail attempts `1..=n` of every step (reads the `trial` request parameter).
    FirstTrials(u32),
    /// Fail with probability `p`, decided by the request seed.
    Rate(f64),
}

impl Injection {
    fn fails(&self, req: &EditRequest) -> bool {
        match *self {
            Self::Off => false,
            Self::Always => true,
            Self::FirstTrials(n) => req.trial().is_some_and(|t| t <= n),
            Self::Rate(p) => {
                let u = (splitmix64(req.seed ^ 0x1f0a_5eed) >> 11) as f64 / (1u64 << 53) as f64;
                u < p
            }
        }
    }

    /// Parses `off`, `always`, `first:N` or `rate:P`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "off" | "none" => Some(Self::Off),
            "always" | "on" => Some(Self::Always),
            _ => {
                let (kind, value) = s.split_once(':')?;
                match kind {
                    "first" => value.parse().ok().map(Self::FirstTrials),
                    "rate" => value.parse().ok().filter(|p: &f64| (0.0..=1.0).contains(p)).map(Self::Rate),
                    _ => None,
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct StubEditor {
    pub injection: Injection,
    pub metrics: CallMetrics,
}

impl StubEditor {
    pub fn new(injection: Injection) -> Self {
        Self {
            injection,
            metrics: CallMetrics::default(),
        }
    }
}

fn category_code(prompt: &str) -> u8 {
    let lower = prompt.to_ascii_lowercase();
    ObjectCategory::ALL
        .iter()
        .position(|c| lower.starts_with(&format!("render a {},", c.name())))
        .map_or(255, |i| i as u8)
}

impl Editor for StubEditor {
    fn edit(&self, req: &EditRequest) -> Result<Vec<u8>, BackendError> {
        CallMetrics::bump(&self.metrics.edit);
        req.validate()?;
        if self.injection.fails(req) {
            return Ok(req.image.clone());
        }
        let mut img = decode_png(&req.image)?;
        let mask = decode_mask_png(&req.mask)?;

        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y, p) in mask.enumerate_pixels() {
            if p[0] >= 128 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        if x0 >= x1 {
            return Ok(req.image.clone());
        }
        let (bw, bh) = (x1 - x0, y1 - y0);
        let inset = (bw.min(bh) / 8).max(1);
        let (mut sx, mut sy, mut sw, mut sh) = (x0 + inset, y0 + inset, bw.saturating_sub(2 * inset), bh.saturating_sub(2 * inset));
        if req.prompt.to_ascii_lowercase().contains("make the object smaller") {
            sx += sw / 4;
            sy += sh / 4;
            sw /= 2;
            sh /= 2;
        }
        if !sprite::fits(sw, sh) {
            return Ok(req.image.clone());
        }
        let direction = Orientation::from_prompt(&req.prompt)
            .map(JudgedDirection::from_orientation)
            .unwrap_or(JudgedDirection::Forward);
        let salt = splitmix64(req.seed) as u8;
        sprite::draw(&mut img, sx, sy, sw, sh, direction, category_code(&req.prompt), salt);
        encode_png(&img)
    }

    fn outpaint(&self, req: &OutpaintRequest) -> Result<Vec<u8>, BackendError> {
        CallMetrics::bump(&self.metrics.outpaint);
        req.validate()?;
        let img = decode_png(&req.image)?;
        if req.pixels >= img.width() {
            return Err(BackendError::InvalidRequest(format!(
                "outpaint width {} must be smaller than the image width {}",
                req.pixels,
                img.width()
            )));
        }
        let padded = pad_canvas(
            &img,
            PadSpec {
                side: req.side,
                r: req.pixels,
            },
        );
        encode_png(&padded)
    }
}

/// Judge that reads sprite tags instead of looking at the picture.
#[derive(Debug, Default)]
pub struct StubJudge {
    pub metrics: CallMetrics,
}

impl StubJudge {
    fn completeness(before: &[u8], after: &[u8]) -> Result<String, BackendError> {
        let before = decode_png(before)?;
        let after = decode_png(after)?;
        let old = sprite::find_tags(&before);
        let fresh = sprite::find_tags(&after).into_iter().find(|t| !old.contains(t));
        Ok(match fresh {
            None => "not generated".to_string(),
            Some(tag) if tag.is_complete(&after) => "complete".to_string(),
            Some(_) => "incomplete".to_string(),
        })
    }

    fn direction(after: &[u8]) -> Result<String, BackendError> {
        let after = decode_png(after)?;
        Ok(sprite::find_tags(&after)
            .first()
            .map_or_else(|| "unclear".to_string(), |t| t.direction.as_str().to_string()))
    }
}

impl VisionChat for StubJudge {
    fn chat(&self, images: &[Vec<u8>], prompt: &str) -> Result<String, BackendError> {
        CallMetrics::bump(&self.metrics.chat);
        match (prompt, images) {
            (COMPLETENESS_PROMPT, [before, after]) => Self::completeness(before, after),
            (DIRECTION_PROMPT, [after]) => Self::direction(after),
            _ => Err(BackendError::InvalidRequest(
                "stub judge only answers the quality-check prompts".into(),
            )),
        }
    }
}

/// Chat endpoint that answers quality-check prompts like [`StubJudge`] and
/// every other prompt with a fixed reply. Backs the stub HTTP server.
#[derive(Debug, Default)]
pub struct StubChat {
    pub judge: StubJudge,
    pub reply: String,
}

impl StubChat {
    pub fn new(reply: impl Into<String>) -> Self {
        Self {
            judge: StubJudge::default(),
            reply: reply.into(),
        }
    }
}

impl VisionChat for StubChat {
    fn chat(&self, images: &[Vec<u8>], prompt: &str) -> Result<String, BackendError> {
        if prompt == COMPLETENESS_PROMPT || prompt == DIRECTION_PROMPT {
            self.judge.chat(images, prompt)
        } else {
            CallMetrics::bump(&self.judge.metrics.chat);
            Ok(self.reply.clone())
        }
    }
}

/// Chat endpoint backed by a closure; handy for scripted judges in tests.
pub struct FnChat<F>(pub F);

impl<F> VisionChat for FnChat<F>
where
    F: Fn(&[Vec<u8>], &str) -> Result<String, BackendError> + Send + Sync,
{
    fn chat(&self, images: &[Vec<u8>], prompt: &str) -> Result<String, BackendError> {
        (self.0)(images, prompt)
    }
}

/// Always gives the same reply.
#[derive(Debug, Clone)]
pub struct ConstantAnswerer(pub String);

impl Answerer for ConstantAnswerer {
    fn ask(&self, req: &AnswerRequest) -> Result<String, BackendError> {
        req.prompt()?;
        Ok(self.0.clone())
    }
}

/// Replies looked up by item id.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAnswerer {
    pub replies: HashMap<String, String>,
    pub fallback: Option<String>,
}

impl ScriptedAnswerer {
    /// Answers every item with its ground-truth option letter.
    pub fn oracle<'a>(items: impl IntoIterator<Item = &'a BenchItem>) -> Self {
        Self {
            replies: items
                .into_iter()
                .map(|it| (it.id.clone(), it.gt.letter().to_string()))
                .collect(),
            fallback: None,
        }
    }
}

impl Answerer for ScriptedAnswerer {
    fn ask(&self, req: &AnswerRequest) -> Result<String, BackendError> {
        req.prompt()?;
        self.replies
            .get(&req.item_id)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::InvalidRequest(format!("no scripted reply for {}", req.item_id)))
    }
}
