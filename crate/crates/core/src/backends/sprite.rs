//! Synthetic "objects" drawn by the stub editor and recognized by the stub judge.
//!
//! A sprite is a filled rectangle whose top row starts with a fixed-length tag.
//! Each tag pixel carries one data byte in its green channel between two
//! position-dependent magic bytes, so tags are found by a row scan and cannot
//! be confused with natural content.

use image::{Rgb, RgbImage};

use crate::backends::JudgedDirection;

pub const TAG_LEN: u32 = 10;
const MAGIC: [u8; 2] = [b'H', b'F'];

fn magic_r(k: u32) -> u8 {
    0xA0 ^ (k as u8).wrapping_mul(37)
}

fn magic_b(k: u32) -> u8 {
    0x5F ^ (k as u8).wrapping_mul(53)
}

fn dir_code(d: JudgedDirection) -> u8 {
    match d {
        JudgedDirection::Left => 1,
        JudgedDirection::Right => 2,
        JudgedDirection::Forward => 3,
        JudgedDirection::Backward => 4,
    }
}

fn code_dir(c: u8) -> Option<JudgedDirection> {
    match c {
        1 => Some(JudgedDirection::Left),
        2 => Some(JudgedDirection::Right),
        3 => Some(JudgedDirection::Forward),
        4 => Some(JudgedDirection::Backward),
        _ => None,
    }
}

/// Decoded sprite tag, positioned in raster coordinates of the scanned image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpriteTag {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub direction: JudgedDirection,
    pub category: u8,
    pub salt: u8,
}

/// Smallest box that can hold a sprite.
pub fn fits(width: u32, height: u32) -> bool {
    width >= TAG_LEN && height >= 2
}

/// Draws a sprite filling `[x, x + w) x [y, y + h)` (raster coordinates).
pub fn draw(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, direction: JudgedDirection, category: u8, salt: u8) {
    debug_assert!(fits(w, h));
    let body = Rgb([40u8.wrapping_add(salt / 2), 150u8.wrapping_add(category.wrapping_mul(7)), 90u8.wrapping_add(salt / 3)]);
    for yy in y..y + h {
        for xx in x..x + w {
            img.put_pixel(xx, yy, body);
        }
    }
    let mut data = [
        MAGIC[0],
        MAGIC[1],
        dir_code(direction),
        category,
        (w >> 8) as u8,
        w as u8,
        (h >> 8) as u8,
        h as u8,
        salt,
        0,
    ];
    data[9] = data[..9].iter().fold(0u8, |acc, b| acc.rotate_left(1) ^ b);
    for (k, byte) in data.iter().enumerate() {
        img.put_pixel(x + k as u32, y, Rgb([magic_r(k as u32), *byte, magic_b(k as u32)]));
    }
}

fn tag_at(img: &RgbImage, x: u32, y: u32) -> Option<SpriteTag> {
    let mut data = [0u8; TAG_LEN as usize];
    for k in 0..TAG_LEN {
        let p = img.get_pixel(x + k, y);
        if p[0] != magic_r(k) || p[2] != magic_b(k) {
            return None;
        }
        data[k as usize] = p[1];
    }
    let check = data[..9].iter().fold(0u8, |acc, b| acc.rotate_left(1) ^ b);
    if data[..2] != MAGIC || check != data[9] {
        return None;
    }
    Some(SpriteTag {
        x,
        y,
        width: u32::from(data[4]) << 8 | u32::from(data[5]),
        height: u32::from(data[6]) << 8 | u32::from(data[7]),
        direction: code_dir(data[2])?,
        category: data[3],
        salt: data[8],
    })
}

/// All tags in the image, in raster scan order.
pub fn find_tags(img: &RgbImage) -> Vec<SpriteTag> {
    let (w, h) = img.dimensions();
    let mut out = Vec::new();
    if w < TAG_LEN {
        return out;
    }
    for y in 0..h {
        for x in 0..=w - TAG_LEN {
            if img.get_pixel(x, y)[0] == magic_r(0) {
                if let Some(tag) = tag_at(img, x, y) {
                    out.push(tag);
                }
            }
        }
    }
    out
}

impl SpriteTag {
    /// True when the whole sprite body lies inside the image.
    pub fn is_complete(&self, img: &RgbImage) -> bool {
        let (w, h) = img.dimensions();
        if self.x + self.width > w || self.y + self.height > h || self.height < 2 {
            return false;
        }
        let body = img.get_pixel(self.x, self.y + 1);
        img.get_pixel(self.x + self.width - 1, self.y + self.height - 1) == body
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draw_then_find() {
        let mut img = RgbImage::from_pixel(40, 20, Rgb([10, 20, 30]));
        draw(&mut img, 5, 3, 20, 8, JudgedDirection::Backward, 9, 77);
        let tags = find_tags(&img);
        assert_eq!(tags.len(), 1);
        let t = tags[0];
        assert_eq!((t.x, t.y, t.width, t.height), (5, 3, 20, 8));
        assert_eq!(t.direction, JudgedDirection::Backward);
        assert!(t.is_complete(&img));
    }

    #[test]
    fn truncated_sprite_is_incomplete() {
        let mut img = RgbImage::from_pixel(40, 20, Rgb([0, 0, 0]));
        draw(&mut img, 5, 3, 30, 8, JudgedDirection::Left, 1, 2);
        let cropped = image::imageops::crop_imm(&img, 0, 0, 25, 20).to_image();
        let tags = find_tags(&cropped);
        assert_eq!(tags.len(), 1);
        assert!(!tags[0].is_complete(&cropped));
    }

    #[test]
    fn plain_image_has_no_tags() {
        let img = RgbImage::from_fn(64, 32, |x, y| Rgb([(x * 3) as u8, (y * 5) as u8, 7]));
        assert!(find_tags(&img).is_empty());
    }
}
