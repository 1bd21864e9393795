//! Pixel-coordinate math for regions, scenario masks and pad/crop transforms.
//!
//! Mask rectangles use a bottom-left origin: `y = 0` is the bottom row of the
//! image. Rasters (`image::RgbImage`) are stored top-left row-major, so the only
//! y-flip lives in [`MaskRegion::raster_rows`], used by [`crop_to_mask`],
//! [`rasterize_mask`] and friends. The x axis is identical in both conventions.

use std::fmt;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate image dimensions {width}x{height} (need width >= 3, height >= 1)")]
    DegenerateDims { width: u32, height: u32 },
    #[error("invalid geometry configuration: {0}")]
    Config(String),
    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
    #[error("internal geometry error: {0}")]
    Internal(String),
}

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        let dims = Self { width, height };
        dims.validate()?;
        Ok(dims)
    }

    pub fn of(image: &RgbImage) -> Result<Self, GeometryError> {
        Self::new(image.width(), image.height())
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width < 3 || self.height < 1 {
            return Err(GeometryError::DegenerateDims {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

impl fmt::Display for ImageDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// One of the three steering answers of the multiple-choice question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionDirection {
    Left,
    Center,
    Right,
}

impl ActionDirection {
    pub const ALL: [ActionDirection; 3] = [Self::Left, Self::Center, Self::Right];

    /// The option text shown to the answering model.
    pub fn option_text(self) -> &'static str {
        match self {
            Self::Left => "go left",
            Self::Center => "go straight",
            Self::Right => "go right",
        }
    }

    /// Fixed option letter: A = left, B = straight, C = right.
    pub fn letter(self) -> char {
        match self {
            Self::Left => 'A',
            Self::Center => 'B',
            Self::Right => 'C',
        }
    }

    pub fn from_letter(letter: char) -> Option<Self> {
        match letter {
            'A' => Some(Self::Left),
            'B' => Some(Self::Center),
            'C' => Some(Self::Right),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Center => "center",
            Self::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Some(Self::Left),
            "center" | "centre" | "straight" | "c" => Some(Self::Center),
            "right" | "r" => Some(Self::Right),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            Self::Left => 0,
            Self::Center => 1,
            Self::Right => 2,
        }
    }
}

impl fmt::Display for ActionDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image edge used for outpainting and intrusion placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
}

impl Edge {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

/// Coordinate frame a mask is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pad")]
pub enum Frame {
    Original,
    PaddedLeft(u32),
    PaddedRight(u32),
}

impl Frame {
    /// Width of this frame given the original image width.
    pub fn width(self, original_width: u32) -> u32 {
        match self {
            Self::Original => original_width,
            Self::PaddedLeft(r) | Self::PaddedRight(r) => original_width + r,
        }
    }

    /// Offset that maps a padded-frame x to an original-frame x.
    fn x_offset(self) -> u32 {
        match self {
            Self::PaddedLeft(r) => r,
            Self::Original | Self::PaddedRight(_) => 0,
        }
    }
}

/// Axis-aligned half-open pixel rectangle `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskRegion {
    pub x_min: u32,
    pub x_max: u32,
    pub y_min: u32,
    pub y_max: u32,
    pub frame: Frame,
}

impl MaskRegion {
    pub fn new(x_min: u32, x_max: u32, y_min: u32, y_max: u32, frame: Frame) -> Result<Self, GeometryError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Internal(format!(
                "empty mask [{x_min},{x_max})x[{y_min},{y_max})"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max, frame })
    }

    pub fn full(dims: ImageDims) -> Self {
        Self {
            x_min: 0,
            x_max: dims.width,
            y_min: 0,
            y_max: dims.height,
            frame: Frame::Original,
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    /// True if `other` lies entirely inside `self`. Frames are not compared.
    pub fn contains(&self, other: &MaskRegion) -> bool {
        self.x_min <= other.x_min && other.x_max <= self.x_max && self.y_min <= other.y_min && other.y_max <= self.y_max
    }

    pub fn intersects(&self, other: &MaskRegion) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }

    /// Checks that the mask fits inside an image of the given size.
    pub fn check_within(&self, width: u32, height: u32) -> Result<(), GeometryError> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(GeometryError::FrameMismatch(format!("degenerate mask {self}")));
        }
        if self.x_max > width || self.y_max > height {
            return Err(GeometryError::FrameMismatch(format!(
                "mask {self} exceeds {width}x{height} frame"
            )));
        }
        Ok(())
    }

    /// Raster row span `[top, bottom)` in top-left storage for an image of height `height`.
    pub fn raster_rows(&self, height: u32) -> (u32, u32) {
        (height - self.y_max, height - self.y_min)
    }

    /// Projects the mask into the original (unpadded) frame, clipping away the
    /// part that falls on the outpainted strip. `None` if nothing survives.
    pub fn to_original(&self, original_width: u32) -> Option<MaskRegion> {
        let offset = self.frame.x_offset();
        let x_min = self.x_min.max(offset) - offset;
        let x_max = self.x_max.saturating_sub(offset).min(original_width);
        if x_min >= x_max {
            return None;
        }
        Some(MaskRegion {
            x_min,
            x_max,
            y_min: self.y_min,
            y_max: self.y_max,
            frame: Frame::Original,
        })
    }
}

impl fmt::Display for MaskRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})x[{},{})", self.x_min, self.x_max, self.y_min, self.y_max)?;
        match self.frame {
            Frame::Original => Ok(()),
            Frame::PaddedLeft(r) => write!(f, "@pad-left({r})"),
            Frame::PaddedRight(r) => write!(f, "@pad-right({r})"),
        }
    }
}

/// Outpainting request geometry: `r` extra columns on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PadSpec {
    pub side: Edge,
    pub r: u32,
}

impl PadSpec {
    pub fn new(side: Edge, r: u32, original_width: u32) -> Result<Self, GeometryError> {
        if r == 0 || r >= original_width {
            return Err(GeometryError::Config(format!(
                "pad width {r} must be in (0, {original_width})"
            )));
        }
        Ok(Self { side, r })
    }

    pub fn frame(&self) -> Frame {
        match self.side {
            Edge::Left => Frame::PaddedLeft(self.r),
            Edge::Right => Frame::PaddedRight(self.r),
        }
    }
}

/// Resolved scenario geometry parameters for one image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    /// Half-width `l` of the intrusion mask.
    pub intrusion_half_width: u32,
    /// Outpainting width `r`.
    pub pad_width: u32,
    /// Distance band `d` as a fraction of the image height.
    pub distance_band: f64,
}

impl GeometryConfig {
    /// Defaults scaled to the image: `r = round(0.2 W)`, `l = round(0.06 W)`, `d = 0.1`,
    /// nudged so that `0 < l < r` holds on tiny images.
    pub fn for_dims(dims: ImageDims) -> Self {
        let w = f64::from(dims.width);
        let l = ((0.06 * w).round() as u32).max(1);
        let r = ((0.2 * w).round() as u32).max(l + 1);
        Self {
            intrusion_half_width: l,
            pad_width: r,
            distance_band: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.intrusion_half_width == 0 {
            return Err(GeometryError::Config("intrusion half-width l must be > 0".into()));
        }
        if self.pad_width <= self.intrusion_half_width {
            return Err(GeometryError::Config(format!(
                "pad width r={} must exceed intrusion half-width l={}",
                self.pad_width, self.intrusion_half_width
            )));
        }
        if !(self.distance_band > 0.0 && self.distance_band <= 1.0) {
            return Err(GeometryError::Config(format!(
                "distance band d={} must lie in (0, 1]",
                self.distance_band
            )));
        }
        Ok(())
    }
}

/// User-facing overrides; unset fields fall back to [`GeometryConfig::for_dims`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryOverrides {
    pub intrusion_half_width: Option<u32>,
    pub pad_width: Option<u32>,
    pub distance_band: Option<f64>,
}

impl GeometryOverrides {
    pub fn resolve(&self, dims: ImageDims) -> Result<GeometryConfig, GeometryError> {
        let defaults = GeometryConfig::for_dims(dims);
        let cfg = GeometryConfig {
            intrusion_half_width: self.intrusion_half_width.unwrap_or(defaults.intrusion_half_width),
            pad_width: self.pad_width.unwrap_or(defaults.pad_width),
            distance_band: self.distance_band.unwrap_or(defaults.distance_band),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits the image into left, center and right thirds with boundaries
/// `floor(W/3)` and `floor(2W/3)`; the right region absorbs the remainder.
pub fn split_regions(dims: ImageDims) -> Result<[MaskRegion; 3], GeometryError> {
    dims.validate()?;
    let b1 = dims.width / 3;
    let b2 = (2 * u64::from(dims.width) / 3) as u32;
    let band = |x_min, x_max| MaskRegion {
        x_min,
        x_max,
        y_min: 0,
        y_max: dims.height,
        frame: Frame::Original,
    };
    Ok([band(0, b1), band(b1, b2), band(b2, dims.width)])
}

pub fn region_for_action(action: ActionDirection, dims: ImageDims) -> Result<MaskRegion, GeometryError> {
    Ok(split_regions(dims)?[action.index()])
}

/// Mask straddling the original image edge, expressed in the padded frame.
///
/// Left edge: `[r - l, r + l)`. Right edge: `[W - l, W + l)` where `W` is the
/// original width, so in both cases the crop that removes the `r` padded
/// columns keeps exactly `l` columns of the object.
pub fn intrusion_mask(side: Edge, dims: ImageDims, cfg: &GeometryConfig) -> Result<MaskRegion, GeometryError> {
    dims.validate()?;
    cfg.validate()?;
    let l = cfg.intrusion_half_width;
    let r = cfg.pad_width;
    let pad = PadSpec::new(side, r, dims.width)?;
    if l >= dims.width {
        return Err(GeometryError::Config(format!(
            "intrusion half-width l={l} must be smaller than the image width {}",
            dims.width
        )));
    }
    let (x_min, x_max) = match side {
        Edge::Left => (r - l, r + l),
        Edge::Right => (dims.width - l, dims.width + l),
    };
    Ok(MaskRegion {
        x_min,
        x_max,
        y_min: 0,
        y_max: dims.height,
        frame: pad.frame(),
    })
}

/// Window of the padded canvas that is kept after removing the `r` outpainted columns.
pub fn crop_after_pad(padded: ImageDims, pad: PadSpec) -> Result<MaskRegion, GeometryError> {
    if pad.r == 0 || padded.width <= pad.r {
        return Err(GeometryError::FrameMismatch(format!(
            "padded width {} cannot hold a pad of {}",
            padded.width, pad.r
        )));
    }
    let original = padded.width - pad.r;
    let (x_min, x_max) = match pad.side {
        Edge::Left => (pad.r, padded.width),
        Edge::Right => (0, original),
    };
    Ok(MaskRegion {
        x_min,
        x_max,
        y_min: 0,
        y_max: padded.height,
        frame: pad.frame(),
    })
}

/// Like [`crop_after_pad`] but checks the padded width against the known original width.
pub fn crop_after_pad_checked(padded: ImageDims, original: ImageDims, pad: PadSpec) -> Result<MaskRegion, GeometryError> {
    let expected = original.width + pad.r;
    if padded.width != expected || padded.height != original.height {
        return Err(GeometryError::FrameMismatch(format!(
            "padded canvas is {padded}, expected {expected}x{}",
            original.height
        )));
    }
    crop_after_pad(padded, pad)
}

/// Horizontal band `|y - vp_y| <= d H` within the ground-truth region.
pub fn distance_mask(
    gt_region: &MaskRegion,
    vp_y: u32,
    dims: ImageDims,
    cfg: &GeometryConfig,
) -> Result<MaskRegion, GeometryError> {
    dims.validate()?;
    if vp_y >= dims.height {
        return Err(GeometryError::Internal(format!(
            "vanishing point row {vp_y} outside [0, {})",
            dims.height
        )));
    }
    let h = f64::from(dims.height);
    let half = cfg.distance_band * h;
    let vp = f64::from(vp_y);
    // Snap away float noise such as 0.1 * 600 = 60.000000000000004.
    let lo = ((vp - half) + 1e-9).floor().max(0.0);
    let hi = ((vp + half + 1.0) - 1e-9).ceil().min(h);
    let y_min = (lo as u32).max(gt_region.y_min);
    let y_max = (hi as u32).min(gt_region.y_max);
    if y_min >= y_max {
        return Err(GeometryError::Internal("empty distance band".into()));
    }
    Ok(MaskRegion {
        x_min: gt_region.x_min,
        x_max: gt_region.x_max,
        y_min,
        y_max,
        frame: gt_region.frame,
    })
}

/// Converts a top-left raster row to the bottom-left mask convention.
pub fn raster_row_to_mask_y(row: u32, height: u32) -> u32 {
    height - 1 - row.min(height - 1)
}

/// Copies the pixels covered by `mask` into a new raster.
pub fn crop_to_mask(image: &RgbImage, mask: &MaskRegion) -> Result<RgbImage, GeometryError> {
    mask.check_within(image.width(), image.height())?;
    let (top, _) = mask.raster_rows(image.height());
    Ok(image::imageops::crop_imm(image, mask.x_min, top, mask.width(), mask.height()).to_image())
}

/// Single-channel mask raster: 255 inside, 0 outside.
pub fn rasterize_mask(mask: &MaskRegion, dims: ImageDims) -> Result<GrayImage, GeometryError> {
    mask.check_within(dims.width, dims.height)?;
    let (top, bottom) = mask.raster_rows(dims.height);
    Ok(GrayImage::from_fn(dims.width, dims.height, |x, y| {
        if (mask.x_min..mask.x_max).contains(&x) && (top..bottom).contains(&y) {
            Luma([255])
        } else {
            Luma([0])
        }
    }))
}

/// Extends the canvas by `pad.r` columns on one side, filling the new strip by
/// replicating the nearest original column. Original pixels are copied verbatim.
pub fn pad_canvas(image: &RgbImage, pad: PadSpec) -> RgbImage {
    let (w, h) = image.dimensions();
    RgbImage::from_fn(w + pad.r, h, |x, y| {
        let src_x = match pad.side {
            Edge::Left => x.saturating_sub(pad.r),
            Edge::Right => x.min(w - 1),
        };
        *image.get_pixel(src_x, y)
    })
}

/// Returns `base` with the pixels inside `mask` taken from `edited`.
pub fn composite_inside(base: &RgbImage, edited: &RgbImage, mask: &MaskRegion) -> Result<RgbImage, GeometryError> {
    if base.dimensions() != edited.dimensions() {
        return Err(GeometryError::FrameMismatch(format!(
            "composite of {:?} onto {:?}",
            edited.dimensions(),
            base.dimensions()
        )));
    }
    mask.check_within(base.width(), base.height())?;
    let (top, bottom) = mask.raster_rows(base.height());
    let mut out = base.clone();
    for y in top..bottom {
        for x in mask.x_min..mask.x_max {
            out.put_pixel(x, y, *edited.get_pixel(x, y));
        }
    }
    Ok(out)
}

/// Mean absolute per-channel deviation (in `[0, 1]`) over pixels outside `mask`.
pub fn outside_mask_deviation(before: &RgbImage, after: &RgbImage, mask: &MaskRegion) -> Result<f64, GeometryError> {
    if before.dimensions() != after.dimensions() {
        return Err(GeometryError::FrameMismatch(format!(
            "deviation between {:?} and {:?}",
            before.dimensions(),
            after.dimensions()
        )));
    }
    mask.check_within(before.width(), before.height())?;
    let (top, bottom) = mask.raster_rows(before.height());
    let mut total = 0u64;
    let mut count = 0u64;
    for (x, y, a) in before.enumerate_pixels() {
        if (mask.x_min..mask.x_max).contains(&x) && (top..bottom).contains(&y) {
            continue;
        }
        let b = after.get_pixel(x, y);
        for c in 0..3 {
            total += u64::from(a[c].abs_diff(b[c]));
        }
        count += 3;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total as f64 / count as f64 / 255.0)
}
