//! Non-maximum suppression family: hard NMS, Soft-NMS (linear, Gaussian) and
//! Top-k Voting (TkV).
//!
//! All methods work on one image and one class at a time; [`suppress_image`]
//! does the per-class dispatch. Equal scores are ordered by ascending input
//! index, which makes every method deterministic.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco_io::{Detection, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionMethod {
    Hard,
    SoftLinear,
    SoftGaussian,
    Tkv,
}

impl std::str::FromStr for SuppressionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "soft_linear" | "soft-linear" => Ok(Self::SoftLinear),
            "soft_gaussian" | "soft-gaussian" => Ok(Self::SoftGaussian),
            "tkv" => Ok(Self::Tkv),
            other => Err(Error::validation(format!(
                "unknown suppression method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionConfig {
    pub method: SuppressionMethod,
    /// Overlap threshold `Nt` (hard, linear Soft-NMS, TkV clustering).
    pub iou_threshold: f64,
    /// Gaussian Soft-NMS width.
    pub sigma: f64,
    /// TkV vote count.
    pub k: usize,
    /// Soft-NMS drops boxes rescored below this.
    pub score_floor: f64,
    pub max_per_image: usize,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            method: SuppressionMethod::Hard,
            iou_threshold: 0.5,
            sigma: 0.5,
            k: 5,
            score_floor: 0.001,
            max_per_image: 100,
        }
    }
}

impl SuppressionConfig {
    pub fn with_method(method: SuppressionMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::validation(format!("suppression config: {what}")));
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return bad("iou_threshold must be in (0, 1)");
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return bad("sigma must be positive");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.score_floor > 0.0 && self.score_floor < 1.0) {
            return bad("score_floor must be in (0, 1)");
        }
        if self.max_per_image == 0 {
            return bad("max_per_image must be at least 1");
        }
        Ok(())
    }
}

/// Score decay applied by Soft-NMS to a box overlapping the current maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SoftDecay {
    /// `s * (1 - iou)` when `iou > Nt`.
    Linear,
    /// `s * exp(-iou^2 / sigma)`, always.
    Gaussian,
    /// `0` when `iou > Nt`; reproduces hard NMS.
    Step,
}

/// Indices sorted by score descending, then index ascending.
fn rank<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp_lossy(&dets[a].score)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy clusters in rank order: each cluster starts at the best remaining
/// box and absorbs every remaining box overlapping it by more than `nt`.
fn greedy_clusters<T: Scalar>(dets: &[Detection<T>], nt: T) -> Vec<Vec<usize>> {
    let order = rank(dets);
    let mut taken = vec![false; dets.len()];
    let mut clusters = Vec::new();
    for (pos, &head) in order.iter().enumerate() {
        if taken[head] {
            continue;
        }
        taken[head] = true;
        let mut members = vec![head];
        for &j in &order[pos + 1..] {
            if !taken[j] && iou(&dets[head].bbox, &dets[j].bbox) > nt {
                taken[j] = true;
                members.push(j);
            }
        }
        clusters.push(members);
    }
    clusters
}

/// Classic greedy NMS; survivors keep their original scores and come out
/// best-first.
pub fn hard_nms<T: Scalar>(dets: &[Detection<T>], cfg: &SuppressionConfig) -> Vec<Detection<T>> {
    let nt = T::from_f64_lossy(cfg.iou_threshold);
    greedy_clusters(dets, nt)
        .into_iter()
        .map(|c| dets[c[0]])
        .collect()
}

pub fn soft_nms<T: Scalar>(dets: &[Detection<T>], cfg: &SuppressionConfig) -> Vec<Detection<T>> {
    let decay = match cfg.method {
        SuppressionMethod::SoftLinear => SoftDecay::Linear,
        _ => SoftDecay::Gaussian,
    };
    soft_nms_with(dets, cfg, decay)
}

pub fn soft_nms_with<T: Scalar>(
    dets: &[Detection<T>],
    cfg: &SuppressionConfig,
    decay: SoftDecay,
) -> Vec<Detection<T>> {
    let nt = T::from_f64_lossy(cfg.iou_threshold);
    let floor = T::from_f64_lossy(cfg.score_floor);
    // (input index, current score)
    let mut live: Vec<(usize, T)> = dets.iter().enumerate().map(|(i, d)| (i, d.score)).collect();
    let mut out: Vec<(usize, T)> = Vec::with_capacity(dets.len());
    while !live.is_empty() {
        let best = (0..live.len())
            .min_by(|&a, &b| {
                live[b]
                    .1
                    .total_cmp_lossy(&live[a].1)
                    .then(live[a].0.cmp(&live[b].0))
            })
            .expect("non-empty");
        let (m, ms) = live.swap_remove(best);
        out.push((m, ms));
        let mbox = dets[m].bbox;
        live.retain_mut(|(j, s)| {
            let o = iou(&mbox, &dets[*j].bbox);
            match decay {
                SoftDecay::Linear => {
                    if o > nt {
                        *s = *s * (T::one() - o);
                    }
                }
                SoftDecay::Gaussian => {
                    let o = o.to_f64_lossy();
                    let factor = (-(o * o) / cfg.sigma).exp();
                    *s = *s * T::from_f64_lossy(factor);
                }
                SoftDecay::Step => {
                    if o > nt {
                        *s = T::zero();
                    }
                }
            }
            *s >= floor
        });
    }
    out.sort_by(|a, b| b.1.total_cmp_lossy(&a.1).then(a.0.cmp(&b.0)));
    out.truncate(cfg.max_per_image);
    out.into_iter()
        .map(|(i, s)| Detection {
            score: s,
            ..dets[i]
        })
        .collect()
}

/// Score-weighted mean of the given members' boxes, clamped into their
/// coordinate envelope.
fn weighted_box<T: Scalar>(dets: &[Detection<T>], members: &[usize]) -> BBox<T> {
    if members.len() == 1 {
        return dets[members[0]].bbox;
    }
    let mut acc = [T::zero(); 4];
    let mut lo = dets[members[0]].bbox.corners();
    let mut hi = lo;
    let mut total = T::zero();
    for &m in members {
        let d = &dets[m];
        total = total + d.score;
        for (c, v) in d.bbox.corners().into_iter().enumerate() {
            acc[c] = acc[c] + d.score * v;
            lo[c] = lo[c].min_of(v);
            hi[c] = hi[c].max_of(v);
        }
    }
    let v: Vec<T> = (0..4)
        .map(|c| (acc[c] / total).max_of(lo[c]).min_of(hi[c]))
        .collect();
    BBox::new(v[0], v[1], v[2], v[3])
}

/// Top-k Voting: hard-NMS clustering, then each cluster's box becomes the
/// score-weighted mean of its `k` best members; the score is the cluster max.
pub fn tkv_nms<T: Scalar>(dets: &[Detection<T>], cfg: &SuppressionConfig) -> Vec<Detection<T>> {
    let nt = T::from_f64_lossy(cfg.iou_threshold);
    let k = cfg.k.max(1);
    let mut out: Vec<Detection<T>> = greedy_clusters(dets, nt)
        .into_iter()
        .map(|members| {
            let head = dets[members[0]];
            let votes = &members[..members.len().min(k)];
            Detection {
                bbox: weighted_box(dets, votes),
                ..head
            }
        })
        .collect();
    // Heads are already in rank order.
    out.truncate(cfg.max_per_image);
    out
}

/// Applies the configured method to detections of a single class.
pub fn suppress_class<T: Scalar>(
    dets: &[Detection<T>],
    cfg: &SuppressionConfig,
) -> Vec<Detection<T>> {
    match cfg.method {
        SuppressionMethod::Hard => hard_nms(dets, cfg),
        SuppressionMethod::SoftLinear | SuppressionMethod::SoftGaussian => soft_nms(dets, cfg),
        SuppressionMethod::Tkv => tkv_nms(dets, cfg),
    }
}

/// Per-class suppression for one image, merged best-first and truncated to
/// `max_per_image`.
pub fn suppress_image<T: Scalar>(
    dets: &[Detection<T>],
    cfg: &SuppressionConfig,
) -> Vec<Detection<T>> {
    let mut by_class: BTreeMap<u64, Vec<Detection<T>>> = BTreeMap::new();
    for d in dets {
        by_class.entry(d.category_id).or_default().push(*d);
    }
    let mut out: Vec<Detection<T>> = by_class
        .values()
        .flat_map(|class_dets| suppress_class(class_dets, cfg))
        .collect();
    out.sort_by(|a, b| b.score.total_cmp_lossy(&a.score));
    out.truncate(cfg.max_per_image);
    out
}

/// [`suppress_image`] over every image of a set, images in ascending id order.
pub fn suppress_set(set: &DetectionSet, cfg: &SuppressionConfig) -> DetectionSet {
    let ids: Vec<u64> = set.image_ids().collect();
    let per_image: Vec<Vec<Detection>> = ids
        .par_iter()
        .map(|&id| {
            let dets: Vec<Detection> = set.for_image(id).copied().collect();
            suppress_image(&dets, cfg)
        })
        .collect();
    let mut out = DetectionSet::new(per_image.into_iter().flatten().collect());
    out.tag = set.tag.clone();
    out
}
