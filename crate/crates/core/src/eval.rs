//! COCO-protocol box evaluation: greedy per-image matching, 101-point
//! interpolated AP, and the six summary metrics.
//!
//! Matching follows the reference COCO evaluator: ground truth is ordered
//! non-ignored first, a detection takes the best-IoU available match (later
//! candidates win ties), crowd regions absorb any number of detections, and
//! unmatched detections outside the area range are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::coco_io::{Annotation, Dataset, Detection, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq)]
pub struct AreaRange {
    pub name: String,
    /// Inclusive lower bound in px².
    pub lo: f64,
    /// Exclusive upper bound in px².
    pub hi: f64,
}

impl AreaRange {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
        }
    }

    #[inline]
    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: Vec<f64>,
    /// Must include ranges named `all`, `small`, `medium` and `large` for
    /// [`coco_summary`] to report the area metrics.
    pub area_ranges: Vec<AreaRange>,
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            // (50 + 5i) / 100 so each threshold is the correctly rounded decimal
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            recall_points: (0..=100).map(|i| i as f64 / 100.0).collect(),
            area_ranges: vec![
                AreaRange::new("all", 0.0, f64::INFINITY),
                AreaRange::new("small", 0.0, 32.0 * 32.0),
                AreaRange::new("medium", 32.0 * 32.0, 96.0 * 96.0),
                AreaRange::new("large", 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) || t[0] <= 0.0 || t[t.len() - 1] > 1.0
        {
            return Err(Error::validation(
                "IoU thresholds must be strictly increasing within (0, 1]",
            ));
        }
        if self.recall_points.len() != 101 {
            return Err(Error::validation("exactly 101 recall points are required"));
        }
        if self.max_dets == 0 {
            return Err(Error::validation("max_dets must be positive"));
        }
        Ok(())
    }

    fn threshold_index(&self, t: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|&v| (v - t).abs() < 1e-12)
    }

    fn area_index(&self, name: &str) -> Option<usize> {
        self.area_ranges.iter().position(|a| a.name == name)
    }
}

/// Outcome of one detection at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Matched ground truth at this position in the input `gt` slice.
    TruePositive {
        gt: usize,
    },
    FalsePositive,
    /// Matched a crowd / out-of-range region, or unmatched and out of range.
    Ignored,
}

/// Per-image, per-class matching at a single threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassMatch {
    /// Scores of the evaluated detections, best first (at most `max_dets`).
    pub scores: Vec<f64>,
    pub outcomes: Vec<MatchOutcome>,
    /// Ground truth that counts toward recall.
    pub num_gt: usize,
}

#[inline]
fn crowd_iou(det: &BBox<f64>, crowd: &BBox<f64>) -> f64 {
    let a = det.area();
    if a <= 0.0 {
        0.0
    } else {
        det.intersection_area(crowd) / a
    }
}

/// Sorted detections (score desc, input order on ties) truncated to `max_dets`.
fn ranked_dets<'a>(dets: &[&'a Detection], max_dets: usize) -> Vec<&'a Detection> {
    let mut d: Vec<&Detection> = dets.to_vec();
    d.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    d.truncate(max_dets);
    d
}

/// Matches one image/class at several thresholds; IoUs are computed once.
fn match_all_thresholds(
    gt: &[&Annotation],
    dets: &[&Detection],
    thresholds: &[f64],
    area: &AreaRange,
    max_dets: usize,
) -> Vec<ImageClassMatch> {
    let dets = ranked_dets(dets, max_dets);
    let ignore: Vec<bool> = gt
        .iter()
        .map(|g| g.iscrowd || !area.contains(g.area))
        .collect();
    // non-ignored first, stable
    let mut gorder: Vec<usize> = (0..gt.len()).collect();
    gorder.sort_by_key(|&g| ignore[g]);
    let num_gt = ignore.iter().filter(|&&i| !i).count();

    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gorder
                .iter()
                .map(|&g| {
                    if gt[g].iscrowd {
                        crowd_iou(&d.bbox, &gt[g].bbox)
                    } else {
                        iou(&d.bbox, &gt[g].bbox)
                    }
                })
                .collect()
        })
        .collect();

    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    thresholds
        .iter()
        .map(|&thr| {
            let mut taken = vec![false; gorder.len()];
            let outcomes = dets
                .iter()
                .enumerate()
                .map(|(di, d)| {
                    let mut best = thr.min(1.0 - 1e-10);
                    let mut m: Option<usize> = None;
                    for (pos, &g) in gorder.iter().enumerate() {
                        if taken[pos] && !gt[g].iscrowd {
                            continue;
                        }
                        if let Some(mp) = m {
                            if !ignore[gorder[mp]] && ignore[g] {
                                break;
                            }
                        }
                        if ious[di][pos] < best {
                            continue;
                        }
                        best = ious[di][pos];
                        m = Some(pos);
                    }
                    match m {
                        Some(pos) => {
                            taken[pos] = true;
                            let g = gorder[pos];
                            if ignore[g] {
                                MatchOutcome::Ignored
                            } else {
                                MatchOutcome::TruePositive { gt: g }
                            }
                        }
                        None if !area.contains(d.bbox.area()) => MatchOutcome::Ignored,
                        None => MatchOutcome::FalsePositive,
                    }
                })
                .collect();
            ImageClassMatch {
                scores: scores.clone(),
                outcomes,
                num_gt,
            }
        })
        .collect()
}

/// Greedy COCO matching of one image's detections of one class.
pub fn match_image_class(
    gt: &[&Annotation],
    dets: &[&Detection],
    iou_threshold: f64,
    area: &AreaRange,
    max_dets: usize,
) -> ImageClassMatch {
    match_all_thresholds(gt, dets, &[iou_threshold], area, max_dets)
        .pop()
        .expect("one threshold")
}

/// Interpolated precision at each recall point, or `None` without ground
/// truth. `matches` are per image, in the order ties should be broken.
pub fn precision_recall_curve(
    matches: &[ImageClassMatch],
    recall_points: &[f64],
) -> Option<Vec<f64>> {
    let gt_count: usize = matches.iter().map(|m| m.num_gt).sum();
    if gt_count == 0 {
        return None;
    }
    let mut entries: Vec<(f64, bool)> = matches
        .iter()
        .flat_map(|m| {
            m.scores
                .iter()
                .zip(&m.outcomes)
                .filter_map(|(&s, o)| match o {
                    MatchOutcome::TruePositive { .. } => Some((s, true)),
                    MatchOutcome::FalsePositive => Some((s, false)),
                    MatchOutcome::Ignored => None,
                })
        })
        .collect();
    // stable: earlier images win ties
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(entries.len());
    let mut precision = Vec::with_capacity(entries.len());
    for &(_, is_tp) in &entries {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    Some(
        recall_points
            .iter()
            .map(|&r| {
                let idx = recall.partition_point(|&x| x < r);
                precision.get(idx).copied().unwrap_or(0.0)
            })
            .collect(),
    )
}

pub fn average_precision(curve: &[f64]) -> f64 {
    curve.iter().sum::<f64>() / curve.len() as f64
}

/// AP for every (area range, threshold, class); `None` where the class has
/// no ground truth in that area range.
#[derive(Debug, Clone, PartialEq)]
pub struct ApTable {
    pub category_ids: Vec<u64>,
    /// `ap[area][threshold][class]`
    pub ap: Vec<Vec<Vec<Option<f64>>>>,
}

impl ApTable {
    /// Mean over the given thresholds and all classes with ground truth.
    pub fn mean(&self, area: usize, thresholds: &[usize]) -> Option<f64> {
        let vals: Vec<f64> = thresholds
            .iter()
            .flat_map(|&t| self.ap[area][t].iter().flatten().copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Per-threshold AP (class mean) for one area range.
    pub fn per_threshold(&self, area: usize) -> Vec<Option<f64>> {
        (0..self.ap[area].len())
            .map(|t| self.mean(area, &[t]))
            .collect()
    }
}

fn check_references(gt: &Dataset, dets: &DetectionSet) -> Result<()> {
    for (i, d) in dets.detections().iter().enumerate() {
        if gt.image(d.image_id).is_none() {
            return Err(Error::Reference {
                entity: format!("detection {i}"),
                missing: format!("image_id {}", d.image_id),
            });
        }
        if gt.category(d.category_id).is_none() {
            return Err(Error::Reference {
                entity: format!("detection {i}"),
                missing: format!("category_id {}", d.category_id),
            });
        }
    }
    Ok(())
}

pub fn evaluate(gt: &Dataset, dets: &DetectionSet, cfg: &EvalConfig) -> Result<ApTable> {
    cfg.validate()?;
    check_references(gt, dets)?;
    let image_ids: BTreeSet<u64> = gt.images().iter().map(|i| i.id).collect();
    let category_ids: Vec<u64> = gt
        .categories()
        .iter()
        .map(|c| c.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    type Cell<'a> = (Vec<&'a Annotation>, Vec<&'a Detection>);
    // (category, image) -> gt, dets
    let mut cells: BTreeMap<(u64, u64), Cell> = BTreeMap::new();
    for &img in &image_ids {
        for a in gt.annotations_of(img) {
            cells.entry((a.category_id, img)).or_default().0.push(a);
        }
        for d in dets.for_image(img) {
            cells.entry((d.category_id, img)).or_default().1.push(d);
        }
    }

    let nt = cfg.iou_thresholds.len();
    // per class: [area][threshold] -> Option<AP>
    let per_class: Vec<Vec<Vec<Option<f64>>>> = category_ids
        .par_iter()
        .map(|&cat| {
            let class_cells: Vec<&Cell> = cells
                .range((cat, 0)..=(cat, u64::MAX))
                .map(|(_, c)| c)
                .collect();
            cfg.area_ranges
                .iter()
                .map(|area| {
                    // [image][threshold]
                    let per_image: Vec<Vec<ImageClassMatch>> = class_cells
                        .iter()
                        .map(|(g, d)| {
                            match_all_thresholds(g, d, &cfg.iou_thresholds, area, cfg.max_dets)
                        })
                        .collect();
                    (0..nt)
                        .map(|t| {
                            let at_t: Vec<ImageClassMatch> =
                                per_image.iter().map(|m| m[t].clone()).collect();
                            precision_recall_curve(&at_t, &cfg.recall_points)
                                .map(|c| average_precision(&c))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let ap = (0..cfg.area_ranges.len())
        .map(|a| {
            (0..nt)
                .map(|t| per_class.iter().map(|c| c[a][t]).collect())
                .collect()
        })
        .collect();
    Ok(ApTable { category_ids, ap })
}

/// The six headline COCO metrics; `None` means no ground truth in the stratum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSummary {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl EvalSummary {
    pub fn values(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("APS", self.ap_small),
            ("APM", self.ap_medium),
            ("APL", self.ap_large),
        ]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("summary serializes")
    }
}

impl Serialize for EvalSummary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(6))?;
        for (k, v) in self.values() {
            map.serialize_entry(k, &v)?;
        }
        map.end()
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, _) in self.values() {
            write!(f, "{name:>8}")?;
        }
        writeln!(f)?;
        for (_, v) in self.values() {
            match v {
                Some(v) => write!(f, "{:>8.1}", v * 100.0)?,
                None => write!(f, "{:>8}", "-")?,
            }
        }
        Ok(())
    }
}

pub fn summarize(table: &ApTable, cfg: &EvalConfig) -> EvalSummary {
    let all_t: Vec<usize> = (0..cfg.iou_thresholds.len()).collect();
    let area = |name: &str| cfg.area_index(name);
    let at = |a: Option<usize>, ts: &[usize]| a.and_then(|a| table.mean(a, ts));
    let single = |t: f64| cfg.threshold_index(t).map(|i| vec![i]);
    EvalSummary {
        ap: at(area("all"), &all_t),
        ap50: single(0.5).and_then(|t| at(area("all"), &t)),
        ap75: single(0.75).and_then(|t| at(area("all"), &t)),
        ap_small: at(area("small"), &all_t),
        ap_medium: at(area("medium"), &all_t),
        ap_large: at(area("large"), &all_t),
    }
}

pub fn coco_summary(gt: &Dataset, dets: &DetectionSet, cfg: &EvalConfig) -> Result<EvalSummary> {
    Ok(summarize(&evaluate(gt, dets, cfg)?, cfg))
}
