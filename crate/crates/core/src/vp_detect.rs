//! Rule-based vanishing-point detection.
//!
//! Pipeline: grayscale, Sobel gradient magnitude thresholded at a percentile,
//! progressive Hough extraction of straight segments (orientation-gated votes,
//! consumed pixels are un-voted), pairwise intersection of the segment lines,
//! and a density vote on a coarse grid. The reported point is the mean of the
//! intersections in the 3x3 block around the winning cell.
//!
//! All coordinates here are raster coordinates (x right, y down).

use std::f64::consts::PI;
use std::fmt::Write as _;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VpError {
    #[error("image {width}x{height} is too small for vanishing-point detection (min {min}x{min})")]
    TooSmall { width: u32, height: u32, min: u32 },
}

pub const MIN_IMAGE_SIDE: u32 = 32;

/// Fraction of the image height used when no vanishing point is found.
pub const FALLBACK_ROW_FRACTION: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpParams {
    /// Gradient-magnitude percentile used as the edge threshold.
    pub edge_percentile: f64,
    /// Minimum segment length as a fraction of `min(W, H)`.
    pub min_segment_fraction: f64,
    /// Segments within this many degrees of horizontal or vertical are dropped.
    pub axis_exclusion_deg: f64,
    /// The vote grid has `grid_divisions` cells across the image width and height.
    pub grid_divisions: u32,
    /// Minimum intersections in the winning cell.
    pub min_support: u32,
    /// Intersections further than this fraction of `max(W, H)` outside the frame are rejected.
    pub outside_margin_fraction: f64,
    /// Segment pairs closer than this angle (degrees) are treated as parallel.
    pub min_pair_angle_deg: f64,
    /// Angular resolution of the Hough accumulator.
    pub theta_bins: usize,
    /// Largest run of missing edge pixels tolerated inside one segment.
    pub max_gap: f64,
    /// Longest segments kept for the pairwise vote.
    pub max_segments: usize,
}

impl Default for VpParams {
    fn default() -> Self {
        Self {
            edge_percentile: 0.75,
            min_segment_fraction: 0.05,
            axis_exclusion_deg: 8.0,
            grid_divisions: 40,
            min_support: 10,
            outside_margin_fraction: 0.5,
            min_pair_angle_deg: 2.0,
            theta_bins: 180,
            max_gap: 4.0,
            max_segments: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPoint {
    pub x: f64,
    pub y: f64,
    /// Intersections that fell in the winning grid cell.
    pub support: u32,
    /// `support / total intersections`.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub start: (f64, f64),
    pub end: (f64, f64),
    /// Direction angle in `[0, pi)`.
    pub angle: f64,
    pub length: f64,
}

impl LineSegment {
    fn direction(&self) -> (f64, f64) {
        (self.angle.cos(), self.angle.sin())
    }

    fn midpoint(&self) -> (f64, f64) {
        (
            0.5 * (self.start.0 + self.end.0),
            0.5 * (self.start.1 + self.end.1),
        )
    }
}

/// Intermediate products, for the optional debugging sidecar.
#[derive(Debug, Clone, Default)]
pub struct VpDiagnostics {
    pub edge_threshold: f64,
    pub edge_pixels: usize,
    pub segments: Vec<LineSegment>,
    pub intersections: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub grid_origin: (f64, f64),
    pub cell_size: (f64, f64),
    pub votes: Vec<u32>,
}

impl VpDiagnostics {
    /// Plain-text dump of the segment list and the non-empty vote cells.
    pub fn render(&self, result: Option<&VPoint>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "edge_threshold {:.4}", self.edge_threshold);
        let _ = writeln!(out, "edge_pixels {}", self.edge_pixels);
        match result {
            Some(vp) => {
                let _ = writeln!(
                    out,
                    "vp {:.3} {:.3} support {} confidence {:.4}",
                    vp.x, vp.y, vp.support, vp.confidence
                );
            }
            None => {
                let _ = writeln!(out, "vp not_found");
            }
        }
        let _ = writeln!(out, "segments {}", self.segments.len());
        for s in &self.segments {
            let _ = writeln!(
                out,
                "seg {:.2} {:.2} {:.2} {:.2} angle_deg {:.3} len {:.2}",
                s.start.0,
                s.start.1,
                s.end.0,
                s.end.1,
                s.angle.to_degrees(),
                s.length
            );
        }
        let _ = writeln!(
            out,
            "grid {}x{} origin {:.2},{:.2} cell {:.3}x{:.3} intersections {}",
            self.grid_cols,
            self.grid_rows,
            self.grid_origin.0,
            self.grid_origin.1,
            self.cell_size.0,
            self.cell_size.1,
            self.intersections
        );
        for (idx, &v) in self.votes.iter().enumerate() {
            if v > 0 {
                let _ = writeln!(out, "cell {} {} {}", idx % self.grid_cols, idx / self.grid_cols, v);
            }
        }
        out
    }
}

pub fn detect_vp(image: &RgbImage, params: &VpParams) -> Result<Option<VPoint>, VpError> {
    detect_vp_with_diagnostics(image, params).map(|(vp, _)| vp)
}

pub fn detect_vp_with_diagnostics(
    image: &RgbImage,
    params: &VpParams,
) -> Result<(Option<VPoint>, VpDiagnostics), VpError> {
    let (w, h) = image.dimensions();
    if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
        return Err(VpError::TooSmall {
            width: w,
            height: h,
            min: MIN_IMAGE_SIDE,
        });
    }
    let mut diag = VpDiagnostics::default();
    let gradients = Gradients::compute(image);
    let threshold = gradients.percentile(params.edge_percentile);
    diag.edge_threshold = threshold;

    let edges = EdgeMap::from_gradients(&gradients, threshold, params.theta_bins);
    diag.edge_pixels = edges.count;

    let min_len = params.min_segment_fraction * f64::from(w.min(h));
    let mut segments = extract_segments(&edges, params, min_len);
    let exclusion = params.axis_exclusion_deg.to_radians();
    segments.retain(|s| {
        let a = s.angle;
        s.length >= min_len && a > exclusion && a < PI - exclusion && (a - PI / 2.0).abs() > exclusion
    });
    segments.sort_by(|a, b| b.length.total_cmp(&a.length));
    segments.truncate(params.max_segments);
    diag.segments = segments.clone();

    let (wf, hf) = (f64::from(w), f64::from(h));
    let margin = params.outside_margin_fraction * wf.max(hf);
    let min_sep = params.min_pair_angle_deg.to_radians();
    let mut points = Vec::new();
    for (i, a) in segments.iter().enumerate() {
        for b in &segments[i + 1..] {
            let mut sep = (a.angle - b.angle).abs();
            sep = sep.min(PI - sep);
            if sep < min_sep {
                continue;
            }
            if let Some((x, y)) = intersect(a, b) {
                if x >= -margin && x <= wf + margin && y >= -margin && y <= hf + margin {
                    points.push((x, y));
                }
            }
        }
    }
    diag.intersections = points.len();

    let divisions = f64::from(params.grid_divisions.max(1));
    let cell = (wf / divisions, hf / divisions);
    let origin = (-margin, -margin);
    let cols = ((wf + 2.0 * margin) / cell.0).ceil() as usize + 1;
    let rows = ((hf + 2.0 * margin) / cell.1).ceil() as usize + 1;
    let cell_of = |(x, y): (f64, f64)| {
        let cx = (((x - origin.0) / cell.0).floor().max(0.0) as usize).min(cols - 1);
        let cy = (((y - origin.1) / cell.1).floor().max(0.0) as usize).min(rows - 1);
        (cx, cy)
    };
    let mut votes = vec![0u32; cols * rows];
    for &p in &points {
        let (cx, cy) = cell_of(p);
        votes[cy * cols + cx] += 1;
    }
    diag.grid_cols = cols;
    diag.grid_rows = rows;
    diag.grid_origin = origin;
    diag.cell_size = cell;

    let winner = votes
        .iter()
        .enumerate()
        .fold(None::<(usize, u32)>, |best, (idx, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ if v > 0 => Some((idx, v)),
            _ => best,
        });
    let result = match winner {
        Some((idx, support)) if support >= params.min_support => {
            let (wx, wy) = (idx % cols, idx / cols);
            // Median, not mean: short noisy segments throw a few far-off
            // intersections into the block and drag the mean.
            let (mut xs, mut ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|&&p| {
                    let (cx, cy) = cell_of(p);
                    cx.abs_diff(wx) <= 1 && cy.abs_diff(wy) <= 1
                })
                .copied()
                .unzip();
            Some(VPoint {
                x: median(&mut xs),
                y: median(&mut ys),
                support,
                confidence: f64::from(support) / points.len() as f64,
            })
        }
        _ => None,
    };
    diag.votes = votes;
    Ok((result, diag))
}

/// Row used to anchor the distance band, with provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpRow {
    /// Raster row, clamped to `[0, H - 1]`.
    pub row: u32,
    pub point: Option<VPoint>,
    pub fallback: bool,
}

/// Detected vanishing-point row clamped into the image, or `round(0.45 H)`
/// when detection fails or the image is too small.
pub fn vp_y_or_fallback(image: &RgbImage, params: &VpParams) -> VpRow {
    let height = image.height();
    match detect_vp(image, params) {
        Ok(Some(vp)) => VpRow {
            row: clamp_row(vp.y, height),
            point: Some(vp),
            fallback: false,
        },
        _ => VpRow {
            row: fallback_row(height),
            point: None,
            fallback: true,
        },
    }
}

pub fn fallback_row(height: u32) -> u32 {
    ((FALLBACK_ROW_FRACTION * f64::from(height)).round() as u32).min(height.saturating_sub(1))
}

pub fn clamp_row(y: f64, height: u32) -> u32 {
    let max = f64::from(height.saturating_sub(1));
    y.round().clamp(0.0, max) as u32
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn intersect(a: &LineSegment, b: &LineSegment) -> Option<(f64, f64)> {
    let (p, r) = (a.midpoint(), a.direction());
    let (q, s) = (b.midpoint(), b.direction());
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = ((q.0 - p.0) * s.1 - (q.1 - p.1) * s.0) / denom;
    Some((p.0 + t * r.0, p.1 + t * r.1))
}

struct Gradients {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    magnitude: Vec<f64>,
}

impl Gradients {
    fn compute(image: &RgbImage) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let gray: Vec<f64> = image
            .pixels()
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect();
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        let mut magnitude = vec![0.0; w * h];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let at = |dx: isize, dy: isize| gray[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                let sx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
                let sy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
                let i = y * w + x;
                gx[i] = sx;
                gy[i] = sy;
                magnitude[i] = (sx * sx + sy * sy).sqrt();
            }
        }
        Self {
            width: w,
            height: h,
            gx,
            gy,
            magnitude,
        }
    }

    fn percentile(&self, q: f64) -> f64 {
        let mut values = self.magnitude.clone();
        let idx = ((q.clamp(0.0, 1.0) * (values.len() - 1) as f64).round() as usize).min(values.len() - 1);
        let (_, v, _) = values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
        *v
    }
}

/// Edge pixels with their quantized normal orientation.
struct EdgeMap {
    width: usize,
    height: usize,
    /// `Some(theta bin)` for edge pixels.
    bins: Vec<Option<u16>>,
    theta_bins: usize,
    count: usize,
}

impl EdgeMap {
    fn from_gradients(g: &Gradients, threshold: f64, theta_bins: usize) -> Self {
        let mut count = 0;
        let bins = (0..g.magnitude.len())
            .map(|i| {
                let m = g.magnitude[i];
                if m > threshold && m > 1e-9 {
                    count += 1;
                    let phi = g.gy[i].atan2(g.gx[i]).rem_euclid(PI);
                    Some(((phi / PI * theta_bins as f64).round() as usize % theta_bins) as u16)
                } else {
                    None
                }
            })
            .collect();
        Self {
            width: g.width,
            height: g.height,
            bins,
            theta_bins,
            count,
        }
    }

    fn bin_distance(&self, a: usize, b: usize) -> usize {
        let d = a.abs_diff(b);
        d.min(self.theta_bins - d)
    }
}

const VOTE_SPREAD: isize = 2;
const WALK_BAND: isize = 1;
const CONSUME_BAND: isize = 3;
const ORIENTATION_TOLERANCE: usize = 3;

struct Accumulator {
    theta_bins: usize,
    rho_bins: usize,
    rho_offset: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    votes: Vec<u32>,
}

impl Accumulator {
    fn new(edges: &EdgeMap) -> Self {
        let diag = ((edges.width * edges.width + edges.height * edges.height) as f64).sqrt().ceil();
        let rho_bins = 2 * diag as usize + 1;
        let (cos, sin) = (0..edges.theta_bins)
            .map(|b| {
                let t = b as f64 * PI / edges.theta_bins as f64;
                (t.cos(), t.sin())
            })
            .unzip();
        Self {
            theta_bins: edges.theta_bins,
            rho_bins,
            rho_offset: diag,
            cos,
            sin,
            votes: vec![0; edges.theta_bins * rho_bins],
        }
    }

    fn cells_for(&self, x: usize, y: usize, bin: usize) -> impl Iterator<Item = usize> + '_ {
        (-VOTE_SPREAD..=VOTE_SPREAD).map(move |off| {
            let t = (bin as isize + off).rem_euclid(self.theta_bins as isize) as usize;
            let rho = x as f64 * self.cos[t] + y as f64 * self.sin[t];
            let r = (rho + self.rho_offset).round() as usize;
            t * self.rho_bins + r.min(self.rho_bins - 1)
        })
    }

    fn vote(&mut self, x: usize, y: usize, bin: usize, add: bool) {
        let cells: Vec<usize> = self.cells_for(x, y, bin).collect();
        for c in cells {
            if add {
                self.votes[c] += 1;
            } else {
                self.votes[c] = self.votes[c].saturating_sub(1);
            }
        }
    }

    fn peak(&self) -> Option<(usize, u32)> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &v) in self.votes.iter().enumerate() {
            if v > best.map_or(0, |b| b.1) {
                best = Some((i, v));
            }
        }
        best
    }
}

fn extract_segments(edges: &EdgeMap, params: &VpParams, min_len: f64) -> Vec<LineSegment> {
    let mut acc = Accumulator::new(edges);
    let mut alive = edges.bins.clone();
    for (i, b) in alive.iter().enumerate() {
        if let Some(b) = b {
            acc.vote(i % edges.width, i / edges.width, usize::from(*b), true);
        }
    }

    let stop_votes = (min_len * 0.5).max(3.0) as u32;
    let max_iterations = params.max_segments * 4;
    let (w, h) = (edges.width as isize, edges.height as isize);
    let diag = acc.rho_offset;
    let mut segments = Vec::new();

    for _ in 0..max_iterations {
        let Some((cell, votes)) = acc.peak() else { break };
        if votes < stop_votes {
            break;
        }
        let theta_bin = cell / acc.rho_bins;
        let rho = (cell % acc.rho_bins) as f64 - acc.rho_offset;
        let (c, s) = (acc.cos[theta_bin], acc.sin[theta_bin]);
        let normal = (c, s);
        let dir = (-s, c);

        let compatible = |idx: usize, alive: &[Option<u16>]| {
            alive[idx].is_some_and(|b| edges.bin_distance(usize::from(b), theta_bin) <= ORIENTATION_TOLERANCE)
        };
        let pixel_at = |t: f64, k: isize| -> Option<usize> {
            let px = (rho * normal.0 + t * dir.0 + k as f64 * normal.0).round() as isize;
            let py = (rho * normal.1 + t * dir.1 + k as f64 * normal.1).round() as isize;
            (px >= 0 && py >= 0 && px < w && py < h).then(|| (py * w + px) as usize)
        };

        // Walk the line and group hits into runs separated by gaps > max_gap.
        let mut runs: Vec<(f64, f64)> = Vec::new();
        let mut current: Option<(f64, f64)> = None;
        let mut t = -diag;
        while t <= diag {
            let hit = (-WALK_BAND..=WALK_BAND).any(|k| pixel_at(t, k).is_some_and(|i| compatible(i, &alive)));
            if hit {
                current = match current {
                    Some((start, last)) if t - last <= params.max_gap + 1.0 => Some((start, t)),
                    Some(run) => {
                        runs.push(run);
                        Some((t, t))
                    }
                    None => Some((t, t)),
                };
            }
            t += 1.0;
        }
        if let Some(run) = current {
            runs.push(run);
        }

        for (start, end) in runs {
            let mut pts: Vec<(f64, f64)> = Vec::new();
            let mut t = start;
            while t <= end {
                for k in -CONSUME_BAND..=CONSUME_BAND {
                    if let Some(i) = pixel_at(t, k) {
                        if compatible(i, &alive) {
                            let (x, y) = (i % edges.width, i / edges.width);
                            if let Some(b) = alive[i].take() {
                                acc.vote(x, y, usize::from(b), false);
                            }
                            pts.push((x as f64, y as f64));
                        }
                    }
                }
                t += 1.0;
            }
            if end - start + 1.0 >= min_len && pts.len() >= 2 {
                if let Some(seg) = fit_segment(&pts) {
                    segments.push(seg);
                }
            }
        }
        // Guarantee progress even if the walk found nothing usable.
        acc.votes[cell] = 0;
    }
    segments
}

/// Total-least-squares line fit; endpoints are the extreme projections.
fn fit_segment(pts: &[(f64, f64)]) -> Option<LineSegment> {
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (c, s) = (theta.cos(), theta.sin());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let t = (x - mx) * c + (y - my) * s;
        lo = lo.min(t);
        hi = hi.max(t);
    }
    let length = hi - lo;
    if !length.is_finite() || length <= 0.0 {
        return None;
    }
    Some(LineSegment {
        start: (mx + lo * c, my + lo * s),
        end: (mx + hi * c, my + hi * s),
        angle: theta.rem_euclid(PI),
        length,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{converging_lines, parallel_lines, SceneStyle};
    use image::Rgb;

    #[test]
    fn recovers_known_intersection() {
        let img = converging_lines(900, 600, (450.0, 310.0), &[30.0, -30.0, 55.0, -55.0], &SceneStyle::default());
        let vp = detect_vp(&img, &VpParams::default()).unwrap().expect("vp");
        assert!((vp.x - 450.0).abs() <= 5.0 && (vp.y - 310.0).abs() <= 5.0, "{vp:?}");
        assert!(vp.support >= 10);
        assert!(vp.confidence > 0.0 && vp.confidence <= 1.0);
    }

    #[test]
    fn uniform_image_not_found() {
        let img = RgbImage::from_pixel(200, 150, Rgb([128, 128, 128]));
        assert_eq!(detect_vp(&img, &VpParams::default()).unwrap(), None);
    }

    #[test]
    fn parallel_family_not_found() {
        let img = parallel_lines(600, 400, 40.0, 90.0, &SceneStyle::default());
        assert_eq!(detect_vp(&img, &VpParams::default()).unwrap(), None);
    }

    #[test]
    fn too_small_is_an_error() {
        let img = RgbImage::new(31, 64);
        assert!(matches!(detect_vp(&img, &VpParams::default()), Err(VpError::TooSmall { .. })));
    }

    #[test]
    fn fallback_and_clamp() {
        let img = RgbImage::from_pixel(64, 600, Rgb([90, 90, 90]));
        let row = vp_y_or_fallback(&img, &VpParams::default());
        assert_eq!(row.row, 270);
        assert!(row.fallback);
        assert_eq!(clamp_row(-20.0, 600), 0);
        assert_eq!(clamp_row(700.2, 600), 599);
    }

    #[test]
    fn detected_row_is_clamped_detection() {
        let img = converging_lines(900, 600, (450.0, 310.0), &[30.0, -30.0, 55.0, -55.0], &SceneStyle::default());
        let row = vp_y_or_fallback(&img, &VpParams::default());
        assert!(!row.fallback);
        assert!(row.row.abs_diff(310) <= 5);
    }

    #[test]
    fn deterministic() {
        let img = converging_lines(400, 300, (210.0, 140.0), &[28.0, -33.0, 50.0, -57.0], &SceneStyle::default());
        let a = detect_vp(&img, &VpParams::default()).unwrap();
        let b = detect_vp(&img, &VpParams::default()).unwrap();
        assert_eq!(a.map(|v| (v.x.to_bits(), v.y.to_bits())), b.map(|v| (v.x.to_bits(), v.y.to_bits())));
    }

    #[test]
    fn diagnostics_render() {
        let img = converging_lines(400, 300, (200.0, 150.0), &[30.0, -30.0, 55.0, -55.0], &SceneStyle::default());
        let (vp, diag) = detect_vp_with_diagnostics(&img, &VpParams::default()).unwrap();
        let text = diag.render(vp.as_ref());
        assert!(text.contains("segments"));
        assert!(text.lines().any(|l| l.starts_with("cell ")));
    }
}
