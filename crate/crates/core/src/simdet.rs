//! Synthetic detector: turns ground truth into a plausible detection set
//! (jittered boxes, misses, IoU-correlated scores, random false positives).

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco_io::{Dataset, Detection, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::{clip, iou, BBox};

const MIN_SCORE: f64 = 0.05;
const MAX_FP_SCORE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    /// Corner noise std as a fraction of box width (x) or height (y).
    pub jitter_sigma: f64,
    pub miss_rate: f64,
    /// Expected false positives per image.
    pub fp_rate: f64,
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            jitter_sigma: 0.1,
            miss_rate: 0.2,
            fp_rate: 1.0,
            score_noise: 0.1,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            jitter_sigma: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            score_noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter_sigma >= 0.0
            && (0.0..1.0).contains(&self.miss_rate)
            && self.fp_rate >= 0.0
            && self.score_noise >= 0.0
            && [self.jitter_sigma, self.fp_rate, self.score_noise]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid noise profile {self:?}")))
        }
    }
}

fn jitter<R: Rng>(rng: &mut R, v: f64, std: f64) -> f64 {
    if std > 0.0 {
        v + Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        v
    }
}

/// Detections for one image, drawn from the image's own stream.
fn simulate_image(dataset: &Dataset, image_id: u64, profile: &NoiseProfile) -> Vec<Detection> {
    let record = dataset.image(image_id).expect("image from dataset");
    let bounds = record.bounds();
    let mut rng = crate::stream_rng(profile.seed, image_id);
    let mut out = Vec::new();
    for gt in dataset.annotations_of(image_id).filter(|a| !a.iscrowd) {
        if profile.miss_rate > 0.0 && rng.random_bool(profile.miss_rate) {
            continue;
        }
        let b = gt.bbox;
        let sx = profile.jitter_sigma * b.width();
        let sy = profile.jitter_sigma * b.height();
        let (x1, x2) = (jitter(&mut rng, b.x1, sx), jitter(&mut rng, b.x2, sx));
        let (y1, y2) = (jitter(&mut rng, b.y1, sy), jitter(&mut rng, b.y2, sy));
        let raw = BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2));
        let Some(bbox) = clip(&raw, &bounds) else {
            continue;
        };
        let penalty = if profile.score_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            profile.score_noise * z.abs()
        } else {
            0.0
        };
        let score = (iou(&bbox, &b) - penalty).clamp(MIN_SCORE, 1.0);
        out.push(Detection::new(image_id, gt.category_id, bbox, score));
    }

    let categories = dataset.categories();
    if profile.fp_rate > 0.0 && !categories.is_empty() {
        let n = Poisson::new(profile.fp_rate)
            .expect("positive rate")
            .sample(&mut rng) as usize;
        let (w, h) = (record.width as f64, record.height as f64);
        for _ in 0..n {
            let cat = categories[rng.random_range(0..categories.len())].id;
            let bw = w * rng.random_range(0.05..=0.5);
            let bh = h * rng.random_range(0.05..=0.5);
            let x = rng.random_range(0.0..=(w - bw));
            let y = rng.random_range(0.0..=(h - bh));
            // (0, 0.5]
            let score = MAX_FP_SCORE * (1.0 - rng.random::<f64>());
            out.push(Detection::new(
                image_id,
                cat,
                BBox::new(x, y, x + bw, y + bh),
                score,
            ));
        }
    }
    out
}

/// Perturbs every non-crowd ground-truth box of `dataset`. Images are
/// processed in id order, each with its own `(seed, image_id)` stream.
pub fn simulate_detector(dataset: &Dataset, profile: &NoiseProfile) -> Result<DetectionSet> {
    profile.validate()?;
    let mut ids: Vec<u64> = dataset.images().iter().map(|i| i.id).collect();
    ids.sort_unstable();
    let per_image: Vec<Vec<Detection>> = ids
        .par_iter()
        .map(|&id| simulate_image(dataset, id, profile))
        .collect();
    Ok(DetectionSet::new(per_image.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{coco_summary, EvalConfig};
    use crate::fixture;

    #[test]
    fn noiseless_is_identity() {
        let ds = fixture::mini_dataset();
        let set = simulate_detector(&ds, &NoiseProfile::noiseless(1)).unwrap();
        let gt: Vec<_> = ds.annotations().iter().filter(|a| !a.iscrowd).collect();
        assert_eq!(set.len(), gt.len());
        // detections come out in image-id order, then annotation order
        let mut gt_sorted = gt.clone();
        gt_sorted.sort_by_key(|a| a.image_id);
        for (d, a) in set.detections().iter().zip(gt_sorted) {
            assert_eq!(d.bbox, a.bbox);
            assert_eq!(d.score, 1.0);
            assert_eq!(d.category_id, a.category_id);
        }
        let s = coco_summary(&ds, &set, &EvalConfig::default()).unwrap();
        assert_eq!(s.ap, Some(1.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = fixture::mini_dataset();
        let p = NoiseProfile {
            seed: 7,
            ..Default::default()
        };
        assert_eq!(
            simulate_detector(&ds, &p).unwrap(),
            simulate_detector(&ds, &p).unwrap()
        );
        let q = NoiseProfile { seed: 8, ..p };
        assert_ne!(
            simulate_detector(&ds, &p).unwrap(),
            simulate_detector(&ds, &q).unwrap()
        );
    }

    #[test]
    fn near_total_miss_rate() {
        let ds = fixture::mini_dataset();
        let p = NoiseProfile {
            miss_rate: 0.999,
            fp_rate: 0.0,
            ..Default::default()
        };
        let set = simulate_detector(&ds, &p).unwrap();
        assert!(set.len() <= 2, "{} detections", set.len());
    }

    #[test]
    fn scores_and_boxes_in_range() {
        let ds = fixture::mini_dataset();
        let p = NoiseProfile {
            jitter_sigma: 0.3,
            fp_rate: 3.0,
            seed: 3,
            ..Default::default()
        };
        let set = simulate_detector(&ds, &p).unwrap();
        for d in set.detections() {
            assert!(d.score > 0.0 && d.score <= 1.0);
            assert!(d.bbox.is_valid());
            assert!(ds.image(d.image_id).unwrap().bounds().contains(&d.bbox));
        }
    }

    #[test]
    fn profile_validation() {
        assert!(NoiseProfile {
            miss_rate: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(NoiseProfile {
            jitter_sigma: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
