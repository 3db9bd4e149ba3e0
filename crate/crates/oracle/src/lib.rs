//! Slow, obviously-correct reference implementations for tests.
//!
//! Nothing here depends on `detkit`. Instances are integer-valued so every
//! quantity can be computed exactly in rationals.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

pub mod nms;
pub mod raster;

/// Small exact values: overlaps, precisions, recalls.
pub type Q = Ratio<i64>;
/// Accumulated sums and means.
pub type BigQ = BigRational;

pub(crate) fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

fn big(v: &Q) -> BigQ {
    BigQ::new(BigInt::from(*v.numer()), BigInt::from(*v.denom()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl IBox {
    pub fn area(&self) -> i64 {
        self.w * self.h
    }

    pub fn inter(&self, o: &IBox) -> i64 {
        let w = (self.x + self.w).min(o.x + o.w) - self.x.max(o.x);
        let h = (self.y + self.h).min(o.y + o.h) - self.y.max(o.y);
        w.max(0) * h.max(0)
    }
}

#[derive(Debug, Clone)]
pub struct Gt {
    pub id: u64,
    pub image: u64,
    pub cat: u64,
    pub bbox: IBox,
    pub area: i64,
    pub crowd: bool,
}

#[derive(Debug, Clone)]
pub struct Det {
    pub image: u64,
    pub cat: u64,
    pub bbox: IBox,
    /// score in hundredths, 1..=100
    pub score: i64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    /// (id, width, height)
    pub images: Vec<(u64, i64, i64)>,
    pub categories: Vec<u64>,
    pub gts: Vec<Gt>,
    pub dets: Vec<Det>,
}

const SUPERS: [&str; 3] = ["animal", "vehicle", "food"];

impl Instance {
    pub fn gt_json(&self) -> String {
        let images: Vec<_> = self
            .images
            .iter()
            .map(|&(id, w, h)| {
                serde_json::json!({"id": id, "file_name": format!("img{id}.png"), "width": w, "height": h})
            })
            .collect();
        let categories: Vec<_> = self
            .categories
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                serde_json::json!({"id": c, "name": format!("class{c}"), "supercategory": SUPERS[i % 3]})
            })
            .collect();
        let anns: Vec<_> = self
            .gts
            .iter()
            .map(|g| {
                serde_json::json!({
                    "id": g.id, "image_id": g.image, "category_id": g.cat,
                    "bbox": [g.bbox.x, g.bbox.y, g.bbox.w, g.bbox.h],
                    "area": g.area, "iscrowd": u8::from(g.crowd),
                })
            })
            .collect();
        serde_json::json!({"images": images, "annotations": anns, "categories": categories})
            .to_string()
    }

    pub fn dets_json(&self) -> String {
        let dets: Vec<_> = self
            .dets
            .iter()
            .map(|d| {
                serde_json::json!({
                    "image_id": d.image, "category_id": d.cat,
                    "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                    "score": d.score as f64 / 100.0,
                })
            })
            .collect();
        serde_json::Value::Array(dets).to_string()
    }
}

fn rand_box<R: Rng>(rng: &mut R, w: i64, h: i64) -> IBox {
    // sizes spread over the small / medium / large strata
    let side = |rng: &mut R, lim: i64| {
        let s = match rng.random_range(0..3) {
            0 => rng.random_range(2..=31),
            1 => rng.random_range(32..=95),
            _ => rng.random_range(96..=lim),
        };
        s.min(lim)
    };
    let bw = side(rng, w);
    let bh = side(rng, h);
    IBox {
        x: rng.random_range(0..=w - bw),
        y: rng.random_range(0..=h - bh),
        w: bw,
        h: bh,
    }
}

fn nudge<R: Rng>(rng: &mut R, b: IBox, w: i64, h: i64) -> IBox {
    let d = |rng: &mut R, s: i64| rng.random_range(-(s / 4)..=s / 4);
    let bw = (b.w + d(rng, b.w)).clamp(1, w);
    let bh = (b.h + d(rng, b.h)).clamp(1, h);
    IBox {
        x: (b.x + d(rng, b.w)).clamp(0, w - bw),
        y: (b.y + d(rng, b.h)).clamp(0, h - bh),
        w: bw,
        h: bh,
    }
}

/// Up to 5 images of 128x128, up to 10 ground-truth boxes and 10 detections
/// per image, 3 classes. Detections are mostly nudged copies of ground truth
/// so that matches straddle the IoU thresholds; scores repeat on purpose.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let categories = vec![1, 2, 3];
    let n_img = rng.random_range(1..=5);
    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    let mut next_ann = 1;
    for i in 0..n_img {
        let id = 10 + 3 * i as u64;
        let (w, h) = (128, 128);
        images.push((id, w, h));
        let n_gt = rng.random_range(0..=10);
        let first = gts.len();
        for _ in 0..n_gt {
            let bbox = rand_box(rng, w, h);
            let crowd = rng.random_bool(0.1);
            // area field differs from box area, as for polygons
            let area = (bbox.area() * rng.random_range(60..=100) / 100).max(1);
            gts.push(Gt {
                id: next_ann,
                image: id,
                cat: categories[rng.random_range(0..3)],
                bbox,
                area,
                crowd,
            });
            next_ann += 1;
        }
        let n_det = rng.random_range(0..=10);
        for _ in 0..n_det {
            let mine = &gts[first..];
            let (cat, bbox) = if !mine.is_empty() && rng.random_bool(0.75) {
                let g = &mine[rng.random_range(0..mine.len())];
                let cat = if rng.random_bool(0.9) {
                    g.cat
                } else {
                    categories[rng.random_range(0..3)]
                };
                (cat, nudge(rng, g.bbox, w, h))
            } else {
                (categories[rng.random_range(0..3)], rand_box(rng, w, h))
            };
            let score = if rng.random_bool(0.3) {
                rng.random_range(1..=4) * 25
            } else {
                rng.random_range(1..=100)
            };
            dets.push(Det {
                image: id,
                cat,
                bbox,
                score,
            });
        }
    }
    // shuffle detections so the file is not grouped by image
    for i in (1..dets.len()).rev() {
        let j = rng.random_range(0..=i);
        dets.swap(i, j);
    }
    Instance {
        images,
        categories,
        gts,
        dets,
    }
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: i64,
    hi: Option<i64>,
}

impl Range {
    fn has(&self, a: i64) -> bool {
        a >= self.lo && self.hi.is_none_or(|h| a < h)
    }
}

const ALL: Range = Range { lo: 0, hi: None };
const SMALL: Range = Range {
    lo: 0,
    hi: Some(32 * 32),
};
const MEDIUM: Range = Range {
    lo: 32 * 32,
    hi: Some(96 * 96),
};
const LARGE: Range = Range {
    lo: 96 * 96,
    hi: None,
};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Tp,
    Fp,
    Skip,
}

/// Overlap of a detection with a ground-truth region: IoU, or the fraction
/// of the detection covered for crowd regions.
fn overlap(d: &IBox, g: &Gt) -> Q {
    let i = d.inter(&g.bbox);
    if g.crowd {
        if d.area() == 0 {
            Q::zero()
        } else {
            q(i, d.area())
        }
    } else {
        let u = d.area() + g.bbox.area() - i;
        if u == 0 {
            Q::zero()
        } else {
            q(i, u)
        }
    }
}

/// Outcomes for one image/class; `dets` already ranked.
fn match_cell(gts: &[&Gt], dets: &[&Det], thr: &Q, range: Range) -> Vec<Outcome> {
    let ignored = |g: &Gt| g.crowd || !range.has(g.area);
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for d in dets {
        // a regular ground truth is preferred over any ignored one; among
        // equals the highest overlap, and the last one listed on a tie
        let pick = |want_ignored: bool, used: &[bool]| -> Option<usize> {
            let mut best: Option<(usize, Q)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if ignored(g) != want_ignored || (used[gi] && !g.crowd) {
                    continue;
                }
                let o = overlap(&d.bbox, g);
                if o < *thr {
                    continue;
                }
                if best.is_none_or(|(_, b)| o >= b) {
                    best = Some((gi, o));
                }
            }
            best.map(|(gi, _)| gi)
        };
        let chosen = pick(false, &used).or_else(|| pick(true, &used));
        out.push(match chosen {
            Some(gi) => {
                used[gi] = true;
                if ignored(gts[gi]) {
                    Outcome::Skip
                } else {
                    Outcome::Tp
                }
            }
            None if !range.has(d.bbox.area()) => Outcome::Skip,
            None => Outcome::Fp,
        });
    }
    out
}

/// Exact AP of one class at one threshold; `None` without ground truth.
fn class_ap(inst: &Instance, cat: u64, thr: &Q, range: Range) -> Option<BigQ> {
    let npos = inst
        .gts
        .iter()
        .filter(|g| g.cat == cat && !g.crowd && range.has(g.area))
        .count() as i64;
    if npos == 0 {
        return None;
    }
    // (score, image, position in file, outcome)
    let mut flat: Vec<(i64, u64, usize, Outcome)> = Vec::new();
    let mut image_ids: Vec<u64> = inst.images.iter().map(|i| i.0).collect();
    image_ids.sort();
    for &img in &image_ids {
        let gts: Vec<&Gt> = inst
            .gts
            .iter()
            .filter(|g| g.image == img && g.cat == cat)
            .collect();
        let mut ranked: Vec<(usize, &Det)> = inst
            .dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.image == img && d.cat == cat)
            .collect();
        ranked.sort_by(|a, b| b.1.score.cmp(&a.1.score).then(a.0.cmp(&b.0)));
        ranked.truncate(100);
        let dets: Vec<&Det> = ranked.iter().map(|r| r.1).collect();
        for ((pos, d), o) in ranked.iter().zip(match_cell(&gts, &dets, thr, range)) {
            flat.push((d.score, img, *pos, o));
        }
    }
    flat.retain(|e| e.3 != Outcome::Skip);
    flat.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut points: Vec<(Q, Q)> = Vec::new();
    let (mut tp, mut n) = (0i64, 0i64);
    for e in &flat {
        n += 1;
        if e.3 == Outcome::Tp {
            tp += 1;
        }
        points.push((q(tp, npos), q(tp, n)));
    }
    let mut sum = BigQ::zero();
    for r in 0..=100 {
        let level = q(r, 100);
        // best precision at any recall at least this level
        let best = points
            .iter()
            .filter(|(rec, _)| *rec >= level)
            .map(|(_, p)| *p)
            .max()
            .unwrap_or_else(Q::zero);
        sum += big(&best);
    }
    Some(sum / big(&q(101, 1)))
}

fn mean(vals: Vec<BigQ>) -> Option<BigQ> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as i64;
    Some(vals.into_iter().fold(BigQ::zero(), |a, b| a + b) / big(&q(n, 1)))
}

fn metric(inst: &Instance, thresholds: &[Q], range: Range) -> Option<BigQ> {
    let mut vals = Vec::new();
    for t in thresholds {
        for &c in &inst.categories {
            vals.extend(class_ap(inst, c, t, range));
        }
    }
    mean(vals)
}

/// AP, AP50, AP75, APS, APM, APL, exactly.
pub fn coco_metrics(inst: &Instance) -> [Option<BigQ>; 6] {
    let all: Vec<Q> = (0..10).map(|i| q(50 + 5 * i, 100)).collect();
    [
        metric(inst, &all, ALL),
        metric(inst, &[q(1, 2)], ALL),
        metric(inst, &[q(3, 4)], ALL),
        metric(inst, &all, SMALL),
        metric(inst, &all, MEDIUM),
        metric(inst, &all, LARGE),
    ]
}

pub fn to_f64(v: &BigQ) -> f64 {
    v.to_f64().expect("finite")
}
