//! Procedural scenes for tests, benchmarks and the bundled offline fixture.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::ActionDirection;
use crate::manifest::{write_jsonl, BenchItem, Source};

#[derive(Debug, Clone)]
pub struct SceneStyle {
    pub background: Rgb<u8>,
    pub line: Rgb<u8>,
    pub half_width: f64,
    /// `(on, off)` dash lengths in pixels; `None` draws solid lines.
    pub dash: Option<(f64, f64)>,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            background: Rgb([70, 70, 70]),
            line: Rgb([235, 235, 235]),
            half_width: 1.5,
            dash: Some((60.0, 30.0)),
        }
    }
}

/// Line through `anchor` with direction angle `angle_deg` (raster coordinates, y down).
#[derive(Debug, Clone, Copy)]
pub struct Stroke {
    pub anchor: (f64, f64),
    pub angle_deg: f64,
    /// Only draw the half of the line with `t >= 0` along the direction.
    pub ray: bool,
}

pub fn draw_strokes(width: u32, height: u32, strokes: &[Stroke], style: &SceneStyle) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, style.background);
    paint_strokes(&mut img, strokes, style);
    img
}

pub fn paint_strokes(img: &mut RgbImage, strokes: &[Stroke], style: &SceneStyle) {
    for stroke in strokes {
        let a = stroke.angle_deg.to_radians();
        let (dx, dy) = (a.cos(), a.sin());
        for (x, y, px) in img.enumerate_pixels_mut() {
            let (rx, ry) = (f64::from(x) - stroke.anchor.0, f64::from(y) - stroke.anchor.1);
            let along = rx * dx + ry * dy;
            let across = (rx * dy - ry * dx).abs();
            if across > style.half_width || (stroke.ray && along < 0.0) {
                continue;
            }
            if let Some((on, off)) = style.dash {
                if along.abs().rem_euclid(on + off) >= on {
                    continue;
                }
            }
            *px = style.line;
        }
    }
}

/// Full lines through `vp` at each of the given angles.
pub fn converging_lines(width: u32, height: u32, vp: (f64, f64), angles_deg: &[f64], style: &SceneStyle) -> RgbImage {
    let strokes: Vec<Stroke> = angles_deg
        .iter()
        .map(|&angle_deg| Stroke {
            anchor: vp,
            angle_deg,
            ray: false,
        })
        .collect();
    draw_strokes(width, height, &strokes, style)
}

/// A single family of parallel lines spaced `spacing` pixels apart.
pub fn parallel_lines(width: u32, height: u32, angle_deg: f64, spacing: f64, style: &SceneStyle) -> RgbImage {
    let a = angle_deg.to_radians();
    let normal = (-a.sin(), a.cos());
    let center = (f64::from(width) / 2.0, f64::from(height) / 2.0);
    let reach = f64::from(width.max(height));
    let count = (reach / spacing).ceil() as i32;
    let strokes: Vec<Stroke> = (-count..=count)
        .map(|k| Stroke {
            anchor: (
                center.0 + f64::from(k) * spacing * normal.0,
                center.1 + f64::from(k) * spacing * normal.1,
            ),
            angle_deg,
            ray: false,
        })
        .collect();
    draw_strokes(width, height, &strokes, style)
}

/// Road-like scene: sky above the horizon, asphalt below, dashed lane
/// markings converging to `vp`.
pub fn road_scene(width: u32, height: u32, vp: (f64, f64), rng: &mut impl Rng) -> RgbImage {
    let sky = Rgb([rng.random_range(140..190), rng.random_range(170..210), 230]);
    let ground = Rgb([rng.random_range(60..80), rng.random_range(60..80), rng.random_range(60..80)]);
    let mut img = RgbImage::from_fn(width, height, |_, y| if f64::from(y) < vp.1 { sky } else { ground });
    let spread: f64 = rng.random_range(0.0..6.0);
    let strokes = [22.0 + spread, 158.0 - spread, 48.0 + spread, 132.0 - spread].map(|angle_deg| Stroke {
        anchor: vp,
        angle_deg,
        ray: true,
    });
    let style = SceneStyle {
        background: ground,
        line: Rgb([240, 240, 225]),
        half_width: 1.2,
        dash: Some((18.0, 10.0)),
    };
    paint_strokes(&mut img, &strokes, &style);
    img
}

/// Writes `count` synthetic source items (road scenes) plus `items.jsonl` into `dir`.
pub fn write_source_fixture(dir: &Path, count: usize, seed: u64) -> std::io::Result<Vec<BenchItem>> {
    let (w, h) = (320u32, 192u32);
    fs::create_dir_all(dir.join("images"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let vp = (
            f64::from(w) * rng.random_range(0.42..0.58),
            f64::from(h) * rng.random_range(0.38..0.5),
        );
        let img = road_scene(w, h, vp, &mut rng);
        let id = format!("src-{:03}", i + 1);
        let rel = format!("images/{id}.png");
        img.save(dir.join(&rel)).map_err(std::io::Error::other)?;
        let gt = ActionDirection::ALL[i % 3];
        let source = if i % 2 == 0 { Source::DriveBench } else { Source::SaBench };
        items.push(BenchItem {
            id,
            image: rel,
            question: "What is the safest action for the ego vehicle?".to_string(),
            gt,
            source,
            scenario: None,
            category: None,
            origin: None,
        });
    }
    write_jsonl(&dir.join("items.jsonl"), &items)?;
    Ok(items)
}
