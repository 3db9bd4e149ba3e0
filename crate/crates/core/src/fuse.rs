//! Multi-scale test-time fusion and multi-model ensembling.
//!
//! Scores are merged as-is (no per-model calibration). Before suppression the
//! pooled detections of an image are put in a canonical order, so the result
//! does not depend on the order in which runs or models are supplied.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::coco_io::{Annotation, Dataset, Detection, DetectionSet, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{clip, hflip_box, resize_for_scale, BBox, ScaleSpec};
use crate::suppress::{suppress_image, SuppressionConfig, SuppressionMethod};

/// Shorter-edge sizes used for multi-scale testing.
pub const DEFAULT_TEST_SCALES: [u32; 6] = [480, 640, 800, 960, 1120, 1280];

/// Detections produced on images resized by `scale` (and mirrored if `flipped`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRun {
    pub scale: ScaleSpec,
    pub detections: DetectionSet,
    pub flipped: bool,
}

fn image_of<'a>(dataset: &'a Dataset, d: &Detection) -> Result<&'a ImageRecord> {
    dataset.image(d.image_id).ok_or_else(|| Error::Reference {
        entity: "scale run detection".into(),
        missing: format!("image_id {}", d.image_id),
    })
}

fn scale_box(b: &BBox<f64>, s: f64) -> BBox<f64> {
    b.map(|v| v * s)
}

/// Brings a run's boxes back to original image coordinates, clipped to the
/// image. Boxes that end up empty are dropped.
pub fn map_to_original(run: &ScaleRun, dataset: &Dataset) -> Result<DetectionSet> {
    let mut out = Vec::with_capacity(run.detections.len());
    for d in run.detections.detections() {
        let img = image_of(dataset, d)?;
        let r = resize_for_scale(img.width, img.height, run.scale);
        let mut b = scale_box(&d.bbox, 1.0 / r.scale);
        if run.flipped {
            b = hflip_box(&b, img.width as f64);
        }
        if let Some(bbox) = clip(&b, &img.bounds()) {
            out.push(Detection { bbox, ..*d });
        }
    }
    let mut set = DetectionSet::new(out);
    set.tag = run.detections.tag.clone();
    Ok(set)
}

/// Inverse of [`map_to_original`]: original coordinates into a scale run's
/// resized (and optionally mirrored) frame.
pub fn map_to_scale(
    set: &DetectionSet,
    dataset: &Dataset,
    scale: ScaleSpec,
    flipped: bool,
) -> Result<DetectionSet> {
    let mut out = Vec::with_capacity(set.len());
    for d in set.detections() {
        let img = image_of(dataset, d)?;
        let r = resize_for_scale(img.width, img.height, scale);
        let b = if flipped {
            hflip_box(&d.bbox, img.width as f64)
        } else {
            d.bbox
        };
        out.push(Detection {
            bbox: scale_box(&b, r.scale),
            ..*d
        });
    }
    Ok(DetectionSet::new(out))
}

/// Ground truth as it appears after resizing every image with `scale`.
pub fn scale_dataset(dataset: &Dataset, scale: ScaleSpec) -> Result<Dataset> {
    let mut factors = BTreeMap::new();
    let images: Vec<ImageRecord> = dataset
        .images()
        .iter()
        .map(|img| {
            let r = resize_for_scale(img.width, img.height, scale);
            factors.insert(img.id, r);
            ImageRecord {
                width: r.width,
                height: r.height,
                ..img.clone()
            }
        })
        .collect();
    let annotations: Vec<Annotation> = dataset
        .annotations()
        .iter()
        .filter_map(|a| {
            let r = factors[&a.image_id];
            let bounds = BBox::new(0.0, 0.0, r.width as f64, r.height as f64);
            clip(&scale_box(&a.bbox, r.scale), &bounds).map(|bbox| Annotation {
                bbox,
                area: a.area * r.scale * r.scale,
                ..a.clone()
            })
        })
        .collect();
    Dataset::new(images, annotations, dataset.categories().to_vec())
}

fn canonical_cmp(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.category_id.cmp(&b.category_id))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x2.total_cmp(&b.bbox.x2))
        .then(a.bbox.y2.total_cmp(&b.bbox.y2))
}

/// Pools detections per image from all sets and suppresses each image.
/// Exact duplicates (same class, box and score) are pooled once.
fn merge_sets(sets: &[DetectionSet], cfg: &SuppressionConfig) -> DetectionSet {
    let mut pooled: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for set in sets {
        for id in set.image_ids() {
            pooled
                .entry(id)
                .or_default()
                .extend(set.for_image(id).copied());
        }
    }
    let pooled: Vec<Vec<Detection>> = pooled.into_values().collect();
    let merged: Vec<Vec<Detection>> = pooled
        .into_par_iter()
        .map(|mut dets| {
            dets.sort_by(canonical_cmp);
            dets.dedup();
            suppress_image(&dets, cfg)
        })
        .collect();
    DetectionSet::new(merged.into_iter().flatten().collect())
}

/// Maps every run back to original coordinates and merges them per image.
pub fn fuse_multiscale(
    runs: &[ScaleRun],
    dataset: &Dataset,
    cfg: &SuppressionConfig,
) -> Result<DetectionSet> {
    if runs.is_empty() {
        return Err(Error::validation(
            "multi-scale fusion needs at least one run",
        ));
    }
    cfg.validate()?;
    let mapped = runs
        .iter()
        .map(|r| map_to_original(r, dataset))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_sets(&mapped, cfg))
}

/// Merges several models' detections (already in original coordinates).
pub fn ensemble_models(sets: &[DetectionSet], cfg: &SuppressionConfig) -> Result<DetectionSet> {
    if sets.is_empty() {
        return Err(Error::validation(
            "ensembling needs at least one detection set",
        ));
    }
    cfg.validate()?;
    Ok(merge_sets(sets, cfg))
}

/// Gaussian Soft-NMS, the default for merging scales.
pub fn default_fusion_config() -> SuppressionConfig {
    SuppressionConfig::with_method(SuppressionMethod::SoftGaussian)
}

/// Top-k Voting, the default for merging models.
pub fn default_ensemble_config() -> SuppressionConfig {
    SuppressionConfig::with_method(SuppressionMethod::Tkv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::geometry::iou;
    use crate::simdet::{simulate_detector, NoiseProfile};
    use crate::suppress::suppress_set;
    use approx::assert_abs_diff_eq;

    fn one_image(w: u32, h: u32) -> Dataset {
        Dataset::new(
            vec![ImageRecord {
                id: 1,
                file_name: "a".into(),
                width: w,
                height: h,
            }],
            Vec::new(),
            fixture::coco_categories(),
        )
        .unwrap()
    }

    fn run(scale: u32, dets: Vec<Detection>, flipped: bool) -> ScaleRun {
        ScaleRun {
            scale: ScaleSpec::new(scale, 1333).unwrap(),
            detections: DetectionSet::new(dets),
            flipped,
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let ds = one_image(800, 800);
        let d = Detection::new(1, 3, BBox::new(10., 20., 30., 40.), 0.7);
        let out = map_to_original(&run(800, vec![d], false), &ds).unwrap();
        assert_eq!(out.detections(), &[d]);
    }

    #[test]
    fn inverse_scale_example() {
        let ds = one_image(640, 480);
        let d = Detection::new(1, 3, BBox::new(166.67, 83.33, 333.33, 166.67), 0.7);
        let out = map_to_original(&run(800, vec![d], false), &ds).unwrap();
        let b = out.detections()[0].bbox;
        for (got, want) in b.corners().iter().zip([100.0, 50.0, 200.0, 100.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-2);
        }
    }

    #[test]
    fn flipped_run_mirrors() {
        let ds = one_image(800, 800);
        let d = Detection::new(1, 3, BBox::new(10., 0., 20., 10.), 0.7);
        let out = map_to_original(&run(800, vec![d], true), &ds).unwrap();
        assert_eq!(out.detections()[0].bbox, BBox::new(780., 0., 790., 10.));
        let back = map_to_scale(&out, &ds, ScaleSpec::new(800, 1333).unwrap(), true).unwrap();
        assert_eq!(back.detections()[0].bbox, d.bbox);
    }

    #[test]
    fn unknown_image_is_reference_error() {
        let ds = one_image(100, 100);
        let d = Detection::new(5, 3, BBox::new(1., 1., 2., 2.), 0.7);
        assert!(matches!(
            map_to_original(&run(800, vec![d], false), &ds),
            Err(Error::Reference { .. })
        ));
    }

    #[test]
    fn forward_inverse_roundtrip() {
        let ds = fixture::mini_dataset();
        let set = simulate_detector(
            &ds,
            &NoiseProfile {
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        for &s in &DEFAULT_TEST_SCALES {
            for flipped in [false, true] {
                let spec = ScaleSpec::new(s, 1333).unwrap();
                let fwd = map_to_scale(&set, &ds, spec, flipped).unwrap();
                // through the wire format as well
                let bytes = crate::coco_io::write_detections(&fwd);
                let scaled_ds = scale_dataset(&ds, spec).unwrap();
                let fwd = crate::coco_io::parse_detections(&bytes, &scaled_ds).unwrap();
                let back = map_to_original(
                    &ScaleRun {
                        scale: spec,
                        detections: fwd,
                        flipped,
                    },
                    &ds,
                )
                .unwrap();
                assert_eq!(back.len(), set.len());
                for (a, b) in back.detections().iter().zip(set.detections()) {
                    for (x, y) in a.bbox.corners().iter().zip(b.bbox.corners()) {
                        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn single_run_equals_suppressed_mapping() {
        let ds = fixture::mini_dataset();
        let spec = ScaleSpec::new(640, 1333).unwrap();
        let scaled = scale_dataset(&ds, spec).unwrap();
        let dets = simulate_detector(
            &scaled,
            &NoiseProfile {
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let r = ScaleRun {
            scale: spec,
            detections: dets,
            flipped: false,
        };
        let cfg = default_fusion_config();
        let fused = fuse_multiscale(std::slice::from_ref(&r), &ds, &cfg).unwrap();
        let mapped = map_to_original(&r, &ds).unwrap();
        // suppress_set keeps input order within an image; fusion sorts
        // canonically first, which only matters for exact ties
        let direct = suppress_set(&mapped, &cfg);
        assert_eq!(fused.len(), direct.len());
        for (a, b) in fused.detections().iter().zip(direct.detections()) {
            assert_eq!(a.score, b.score);
        }
    }

    #[test]
    fn identical_runs_collapse() {
        let ds = one_image(640, 480);
        let truth = BBox::new(100., 50., 200., 150.);
        let runs: Vec<ScaleRun> = DEFAULT_TEST_SCALES
            .iter()
            .map(|&s| {
                let spec = ScaleSpec::new(s, 1333).unwrap();
                let set = DetectionSet::new(vec![Detection::new(1, 1, truth, 0.9)]);
                ScaleRun {
                    scale: spec,
                    detections: map_to_scale(&set, &ds, spec, false).unwrap(),
                    flipped: false,
                }
            })
            .collect();
        for method in [SuppressionMethod::Hard, SuppressionMethod::Tkv] {
            let out = fuse_multiscale(&runs, &ds, &SuppressionConfig::with_method(method)).unwrap();
            assert_eq!(out.len(), 1);
            assert!(iou(&out.detections()[0].bbox, &truth) > 1.0 - 1e-9);
        }
        // soft-NMS keeps decayed copies; only one survives at the original score
        let out = fuse_multiscale(&runs, &ds, &default_fusion_config()).unwrap();
        assert_eq!(
            out.detections().iter().filter(|d| d.score == 0.9).count(),
            1
        );
        assert!(fuse_multiscale(&[], &ds, &default_fusion_config()).is_err());
    }

    #[test]
    fn run_order_invariance() {
        let ds = fixture::mini_dataset();
        let runs: Vec<ScaleRun> = [480, 800, 1120]
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let spec = ScaleSpec::new(s, 1333).unwrap();
                let scaled = scale_dataset(&ds, spec).unwrap();
                let p = NoiseProfile {
                    seed: i as u64,
                    ..Default::default()
                };
                ScaleRun {
                    scale: spec,
                    detections: simulate_detector(&scaled, &p).unwrap(),
                    flipped: i == 1,
                }
            })
            .collect();
        let cfg = default_fusion_config();
        let a = fuse_multiscale(&runs, &ds, &cfg).unwrap();
        let rev: Vec<ScaleRun> = runs.iter().rev().cloned().collect();
        let b = fuse_multiscale(&rev, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        for id in a.image_ids() {
            assert!(a.for_image(id).count() <= cfg.max_per_image);
        }
    }

    #[test]
    fn ensemble_examples() {
        let ds = fixture::mini_dataset();
        let m = simulate_detector(
            &ds,
            &NoiseProfile {
                seed: 11,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = default_ensemble_config();
        let single = ensemble_models(std::slice::from_ref(&m), &cfg).unwrap();
        assert_eq!(single.len(), suppress_set(&m, &cfg).len());

        // disjoint coverage: union of per-image results
        let (left, right): (Vec<Detection>, Vec<Detection>) =
            m.detections().iter().partition(|d| d.image_id <= 8);
        let l = DetectionSet::new(left);
        let r = DetectionSet::new(right);
        let both = ensemble_models(&[l.clone(), r.clone()], &cfg).unwrap();
        let mut expected = ensemble_models(&[l], &cfg).unwrap().into_detections();
        expected.extend(ensemble_models(&[r], &cfg).unwrap().into_detections());
        assert_eq!(both.detections(), &expected[..]);
        assert!(ensemble_models(&[], &cfg).is_err());
    }

    #[test]
    fn self_ensemble_is_invariant() {
        let ds = fixture::mini_dataset();
        for seed in 0..5 {
            let m = simulate_detector(
                &ds,
                &NoiseProfile {
                    seed,
                    fp_rate: 3.0,
                    ..Default::default()
                },
            )
            .unwrap();
            for k in [1, 2, 5] {
                let cfg = SuppressionConfig {
                    k,
                    ..default_ensemble_config()
                };
                let single = ensemble_models(std::slice::from_ref(&m), &cfg).unwrap();
                let twice = ensemble_models(&[m.clone(), m.clone()], &cfg).unwrap();
                assert_eq!(single, twice);
            }
        }
    }

    #[test]
    fn scale_dataset_matches_resize() {
        let ds = fixture::mini_dataset();
        let spec = ScaleSpec::new(480, 1333).unwrap();
        let scaled = scale_dataset(&ds, spec).unwrap();
        for (a, b) in ds.images().iter().zip(scaled.images()) {
            let r = resize_for_scale(a.width, a.height, spec);
            assert_eq!((b.width, b.height), (r.width, r.height));
        }
        assert_eq!(scaled.annotations().len(), ds.annotations().len());
    }
}
