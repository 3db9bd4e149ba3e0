//! Pixel side of augmentation: loading sources, warping tiles onto a
//! composite canvas, and drawing preview outlines.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::augment::CompositeSample;
use crate::coco_io::{Annotation, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes)
        .map(|img| img.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: "<png>".into(),
            source,
        })?;
    Ok(out.into_inner())
}

/// Stable, well-spread colour per category id.
pub fn category_color(category_id: u64) -> Rgb<u8> {
    let h = category_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let c = |shift: u32| 64 + ((h >> shift) & 0xBF) as u8;
    Rgb([c(8), c(24), c(40)])
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: i64, yy: i64| img.get_pixel(xx as u32, yy as u32).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
        let bot = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
        out[ch] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Renders a composite by sampling each tile's source through the inverse of
/// its placement map.
pub fn render_composite(
    sample: &CompositeSample,
    sources: &HashMap<u64, RgbImage>,
) -> Result<RgbImage> {
    let mut canvas = RgbImage::new(sample.canvas_width, sample.canvas_height);
    for tile in &sample.tiles {
        let src = sources.get(&tile.source_image_id).ok_or_else(|| {
            Error::validation(format!("missing pixels for image {}", tile.source_image_id))
        })?;
        let inv = tile.map.inverse();
        let r = tile.dest_rect;
        let (x0, x1) = (
            r.x1.round() as u32,
            (r.x2.round() as u32).min(canvas.width()),
        );
        let (y0, y1) = (
            r.y1.round() as u32,
            (r.y2.round() as u32).min(canvas.height()),
        );
        for y in y0..y1 {
            let sy = inv.apply_y(y as f64 + 0.5) - 0.5;
            for x in x0..x1 {
                let sx = inv.apply_x(x as f64 + 0.5) - 0.5;
                canvas.put_pixel(x, y, bilinear(src, sx, sy));
            }
        }
    }
    Ok(canvas)
}

/// Draws `thickness`-pixel outlines, clamped to the image.
pub fn draw_outline(img: &mut RgbImage, b: &BBox<f64>, color: Rgb<u8>, thickness: u32) {
    if img.width() == 0 || img.height() == 0 {
        return;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x1 = (b.x1.round() as i64).clamp(0, w - 1);
    let y1 = (b.y1.round() as i64).clamp(0, h - 1);
    let x2 = (b.x2.round() as i64 - 1).clamp(0, w - 1);
    let y2 = (b.y2.round() as i64 - 1).clamp(0, h - 1);
    let t = thickness as i64;
    for y in y1..=y2 {
        for x in x1..=x2 {
            let edge = x < x1 + t || x > x2 - t || y < y1 + t || y > y2 - t;
            if edge {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

pub fn draw_preview<'a>(img: &mut RgbImage, boxes: impl IntoIterator<Item = (&'a BBox<f64>, u64)>) {
    for (b, cat) in boxes {
        draw_outline(img, b, category_color(cat), 2);
    }
}

/// Flat-shaded stand-in image: a background tint plus one filled rectangle
/// per annotation.
pub fn render_synthetic_image<'a>(
    record: &ImageRecord,
    annotations: impl IntoIterator<Item = &'a Annotation>,
) -> RgbImage {
    let tint = category_color(record.id.wrapping_add(1000));
    let bg = Rgb([tint[0] / 3, tint[1] / 3, tint[2] / 3]);
    let mut img = RgbImage::from_pixel(record.width, record.height, bg);
    for a in annotations {
        // half intensity so full-strength preview outlines stay visible
        let c = category_color(a.category_id);
        let color = Rgb([c[0] / 2, c[1] / 2, c[2] / 2]);
        let x1 = a.bbox.x1.max(0.0).round() as u32;
        let y1 = a.bbox.y1.max(0.0).round() as u32;
        let x2 = (a.bbox.x2.round() as u32).min(record.width);
        let y2 = (a.bbox.y2.round() as u32).min(record.height);
        for y in y1..y2 {
            for x in x1..x2 {
                img.put_pixel(x, y, color);
            }
        }
    }
    img
}
