//! Pixel-count overlap for integer boxes.

use crate::IBox;

/// (intersection, union) in unit pixels, by visiting every pixel of the
/// bounding region.
pub fn pixel_counts(a: &IBox, b: &IBox) -> (u64, u64) {
    let inside =
        |r: &IBox, px: i64, py: i64| px >= r.x && px < r.x + r.w && py >= r.y && py < r.y + r.h;
    let (x0, y0) = (a.x.min(b.x), a.y.min(b.y));
    let (x1, y1) = ((a.x + a.w).max(b.x + b.w), (a.y + a.h).max(b.y + b.h));
    let (mut inter, mut union) = (0, 0);
    for py in y0..y1 {
        for px in x0..x1 {
            match (inside(a, px, py), inside(b, px, py)) {
                (true, true) => {
                    inter += 1;
                    union += 1;
                }
                (true, false) | (false, true) => union += 1,
                _ => {}
            }
        }
    }
    (inter, union)
}

pub fn raster_iou(a: &IBox, b: &IBox) -> f64 {
    let (i, u) = pixel_counts(a, b);
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}
