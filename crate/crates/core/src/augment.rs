//! Four-image composites: stitchers (whole images squeezed into equal
//! quadrants) and mosaics (random-scale crops around a jittered split point),
//! with optional supercategory-aware companion selection.
//!
//! Every composite draws from its own ChaCha stream keyed by
//! `(seed, composite index)`, so generation is parallel and reproducible.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco_io::{supercategory_candidates, Annotation, Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{affine_map, clip, resize_for_scale, AffineMap2D, BBox, ScaleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    Stitcher,
    Mosaic,
    /// Fair coin per composite between stitcher and mosaic.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Random,
    Supercategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanvasSize {
    Fixed {
        width: u32,
        height: u32,
    },
    /// Canvas is the query image resized by this rule.
    Scaled(ScaleSpec),
}

impl CanvasSize {
    fn resolve(&self, query: &ImageRecord) -> (u32, u32) {
        match *self {
            CanvasSize::Fixed { width, height } => (width, height),
            CanvasSize::Scaled(spec) => {
                let r = resize_for_scale(query.width, query.height, spec);
                (r.width, r.height)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mode: ComposeMode,
    pub selection: Selection,
    pub canvas: CanvasSize,
    /// Split point as a fraction of canvas width/height.
    pub center_jitter: (f64, f64),
    /// Per-tile source scale interval.
    pub tile_scale: (f64, f64),
    pub min_visible_fraction: f64,
    /// Minimum side length in canvas pixels for a kept mosaic box.
    pub min_side_px: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: ComposeMode::Mosaic,
            selection: Selection::Supercategory,
            canvas: CanvasSize::Fixed {
                width: 1333,
                height: 800,
            },
            center_jitter: (0.25, 0.75),
            tile_scale: (0.5, 1.5),
            min_visible_fraction: 0.1,
            min_side_px: 2.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (j0, j1) = self.center_jitter;
        if !(0.25..=0.75).contains(&j0) || !(0.25..=0.75).contains(&j1) || j0 > j1 {
            return Err(Error::validation(format!(
                "center jitter {:?} must be an ordered pair within [0.25, 0.75]",
                self.center_jitter
            )));
        }
        let (s0, s1) = self.tile_scale;
        if !(s0 > 0.0 && s1 <= 4.0 && s0 <= s1) {
            return Err(Error::validation(format!(
                "tile scale range {:?} must be ordered within (0, 4]",
                self.tile_scale
            )));
        }
        if !(self.min_visible_fraction > 0.0 && self.min_visible_fraction <= 1.0) {
            return Err(Error::validation("min_visible_fraction must be in (0, 1]"));
        }
        if self.min_side_px.is_nan() || self.min_side_px < 0.0 {
            return Err(Error::validation("min_side_px must be non-negative"));
        }
        if let CanvasSize::Fixed { width, height } = self.canvas {
            if width < 2 || height < 2 {
                return Err(Error::validation("canvas must be at least 2x2"));
            }
        }
        Ok(())
    }
}

/// One source image placed onto the canvas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilePlacement {
    pub source_image_id: u64,
    pub source_crop: BBox<f64>,
    pub dest_rect: BBox<f64>,
    /// Sends `source_crop` onto `dest_rect`.
    pub map: AffineMap2D<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeAnnotation {
    pub source_annotation_id: u64,
    pub tile: usize,
    pub bbox: BBox<f64>,
    pub category_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeKind {
    Stitcher,
    Mosaic,
}

/// A 2x2 composite. Tiles are ordered top-left, top-right, bottom-left,
/// bottom-right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeSample {
    pub kind: CompositeKind,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub tiles: [TilePlacement; 4],
    pub annotations: Vec<CompositeAnnotation>,
}

impl CompositeSample {
    pub fn canvas(&self) -> BBox<f64> {
        BBox::new(
            0.0,
            0.0,
            self.canvas_width as f64,
            self.canvas_height as f64,
        )
    }
}

/// Source image plus the annotations that may be transferred.
#[derive(Debug, Clone)]
pub struct SourceTile<'a> {
    pub record: &'a ImageRecord,
    pub annotations: Vec<&'a Annotation>,
}

impl<'a> SourceTile<'a> {
    /// Non-crowd annotations of `image_id`.
    pub fn from_dataset(dataset: &'a Dataset, image_id: u64) -> Result<Self> {
        let record = dataset.image(image_id).ok_or_else(|| Error::Reference {
            entity: "composite".into(),
            missing: format!("image_id {image_id}"),
        })?;
        Ok(Self {
            record,
            annotations: dataset
                .annotations_of(image_id)
                .filter(|a| !a.iscrowd)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledGroup {
    pub image_ids: [u64; 4],
    /// Supercategories of the query image (first id).
    pub query_supercategories: BTreeSet<String>,
    /// Companions taken from outside the supercategory pool.
    pub fallback_fills: usize,
}

/// Draws four-image groups; holds the eligible-image list so repeated draws
/// don't rescan the dataset.
#[derive(Debug, Clone)]
pub struct GroupSampler<'a> {
    dataset: &'a Dataset,
    eligible: Vec<u64>,
}

impl<'a> GroupSampler<'a> {
    pub fn new(dataset: &'a Dataset) -> Result<Self> {
        let eligible = dataset.eligible_images();
        if eligible.len() < 4 {
            return Err(Error::InsufficientData {
                needed: 4,
                available: eligible.len(),
            });
        }
        Ok(Self { dataset, eligible })
    }

    pub fn eligible(&self) -> &[u64] {
        &self.eligible
    }

    pub fn sample<R: Rng + ?Sized>(&self, selection: Selection, rng: &mut R) -> SampledGroup {
        match selection {
            Selection::Random => {
                let picks = index::sample(rng, self.eligible.len(), 4);
                let ids: Vec<u64> = picks.iter().map(|i| self.eligible[i]).collect();
                let image_ids: [u64; 4] = ids.try_into().expect("four picks");
                SampledGroup {
                    query_supercategories: self.dataset.supercategories_of(image_ids[0]),
                    image_ids,
                    fallback_fills: 0,
                }
            }
            Selection::Supercategory => {
                let query = self.eligible[rng.random_range(0..self.eligible.len())];
                self.sample_with_query(query, rng)
            }
        }
    }

    /// Supercategory-aware companions for a fixed query image.
    pub fn sample_with_query<R: Rng + ?Sized>(&self, query: u64, rng: &mut R) -> SampledGroup {
        let supercats = self.dataset.supercategories_of(query);
        let mut pool = supercategory_candidates(self.dataset, supercats.iter().map(String::as_str));
        pool.remove(&query);
        let pool: Vec<u64> = pool.into_iter().collect();

        let mut companions: Vec<u64> = if pool.len() >= 3 {
            index::sample(rng, pool.len(), 3)
                .iter()
                .map(|i| pool[i])
                .collect()
        } else {
            let order = index::sample(rng, pool.len(), pool.len());
            order.iter().map(|i| pool[i]).collect()
        };
        let fallback_fills = 3 - companions.len();
        if fallback_fills > 0 {
            let rest: Vec<u64> = self
                .eligible
                .iter()
                .copied()
                .filter(|id| *id != query && !pool.contains(id))
                .collect();
            log::debug!(
                "image {query}: supercategory pool has {} companions, filling {fallback_fills} at random",
                pool.len()
            );
            companions.extend(
                index::sample(rng, rest.len(), fallback_fills)
                    .iter()
                    .map(|i| rest[i]),
            );
        }
        SampledGroup {
            image_ids: [query, companions[0], companions[1], companions[2]],
            query_supercategories: supercats,
            fallback_fills,
        }
    }
}

pub fn sample_group<R: Rng + ?Sized>(
    dataset: &Dataset,
    selection: Selection,
    rng: &mut R,
) -> Result<SampledGroup> {
    Ok(GroupSampler::new(dataset)?.sample(selection, rng))
}

/// Tile rectangles for a split at `(cx, cy)`, in TL, TR, BL, BR order.
fn quadrants(width: f64, height: f64, cx: f64, cy: f64) -> [BBox<f64>; 4] {
    [
        BBox::new(0.0, 0.0, cx, cy),
        BBox::new(cx, 0.0, width, cy),
        BBox::new(0.0, cy, cx, height),
        BBox::new(cx, cy, width, height),
    ]
}

fn check_canvas((w, h): (u32, u32)) -> Result<()> {
    if w < 2 || h < 2 {
        return Err(Error::validation(format!("invalid canvas {w}x{h}")));
    }
    Ok(())
}

/// Maps `clip(source, crop)` onto the tile and clamps to the tile rectangle.
fn transfer(ann: &Annotation, tile: &TilePlacement) -> Option<(BBox<f64>, BBox<f64>)> {
    let visible = clip(&ann.bbox, &tile.source_crop)?;
    let mapped = clip(&affine_map(&visible, &tile.map), &tile.dest_rect)?;
    Some((visible, mapped))
}

/// Four whole images resized into equal quadrants (split at `W/2`, `H/2`).
/// Aspect ratio is not preserved.
pub fn compose_stitcher(
    sources: [SourceTile<'_>; 4],
    canvas: (u32, u32),
) -> Result<CompositeSample> {
    check_canvas(canvas)?;
    let (w, h) = (canvas.0 as f64, canvas.1 as f64);
    let rects = quadrants(w, h, (canvas.0 / 2) as f64, (canvas.1 / 2) as f64);
    let mut annotations = Vec::new();
    let mut tiles = Vec::with_capacity(4);
    for (i, (src, dest)) in sources.iter().zip(rects).enumerate() {
        let crop = src.record.bounds();
        let tile = TilePlacement {
            source_image_id: src.record.id,
            source_crop: crop,
            dest_rect: dest,
            map: AffineMap2D::between(&crop, &dest)?,
        };
        for ann in &src.annotations {
            if let Some((_, bbox)) = transfer(ann, &tile) {
                annotations.push(CompositeAnnotation {
                    source_annotation_id: ann.id,
                    tile: i,
                    bbox,
                    category_id: ann.category_id,
                });
            }
        }
        tiles.push(tile);
    }
    Ok(CompositeSample {
        kind: CompositeKind::Stitcher,
        canvas_width: canvas.0,
        canvas_height: canvas.1,
        tiles: tiles.try_into().expect("four tiles"),
        annotations,
    })
}

fn draw<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Mosaic: jittered split point, per-tile random scale, random crop.
pub fn compose_mosaic<R: Rng + ?Sized>(
    sources: [SourceTile<'_>; 4],
    canvas: (u32, u32),
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<CompositeSample> {
    check_canvas(canvas)?;
    let (w, h) = canvas;
    let cx = ((w as f64 * draw(rng, config.center_jitter)).round() as u32).clamp(1, w - 1);
    let cy = ((h as f64 * draw(rng, config.center_jitter)).round() as u32).clamp(1, h - 1);
    let rects = quadrants(w as f64, h as f64, cx as f64, cy as f64);

    let mut annotations = Vec::new();
    let mut tiles = Vec::with_capacity(4);
    for (i, (src, dest)) in sources.iter().zip(rects).enumerate() {
        let (tw, th) = (dest.width(), dest.height());
        let (sw, sh) = (src.record.width as f64, src.record.height as f64);
        let mut scale = draw(rng, config.tile_scale);
        let min_feasible = (tw / sw).max(th / sh);
        if scale < min_feasible {
            scale = min_feasible;
        }
        let crop_w = (tw / scale).min(sw);
        let crop_h = (th / scale).min(sh);
        let ox = draw(rng, (0.0, sw - crop_w));
        let oy = draw(rng, (0.0, sh - crop_h));
        let crop = BBox::new(ox, oy, ox + crop_w, oy + crop_h);
        let tile = TilePlacement {
            source_image_id: src.record.id,
            source_crop: crop,
            dest_rect: dest,
            map: AffineMap2D::between(&crop, &dest)?,
        };
        for ann in &src.annotations {
            let Some((visible, bbox)) = transfer(ann, &tile) else {
                continue;
            };
            if visible.area() / ann.bbox.area() < config.min_visible_fraction {
                continue;
            }
            if bbox.width() < config.min_side_px || bbox.height() < config.min_side_px {
                continue;
            }
            annotations.push(CompositeAnnotation {
                source_annotation_id: ann.id,
                tile: i,
                bbox,
                category_id: ann.category_id,
            });
        }
        tiles.push(tile);
    }
    Ok(CompositeSample {
        kind: CompositeKind::Mosaic,
        canvas_width: w,
        canvas_height: h,
        tiles: tiles.try_into().expect("four tiles"),
        annotations,
    })
}

/// RNG for composite `index` under `seed`.
pub fn composite_rng(seed: u64, index: u64) -> ChaCha8Rng {
    crate::stream_rng(seed, index)
}

/// One composite plus the group it was built from.
#[derive(Debug, Clone)]
pub struct GeneratedComposite {
    pub group: SampledGroup,
    pub sample: CompositeSample,
}

fn generate_one(
    dataset: &Dataset,
    sampler: &GroupSampler<'_>,
    config: &AugmentConfig,
    index: u64,
) -> Result<GeneratedComposite> {
    let mut rng = composite_rng(config.seed, index);
    let group = sampler.sample(config.selection, &mut rng);
    let sources: Vec<SourceTile> = group
        .image_ids
        .iter()
        .map(|&id| SourceTile::from_dataset(dataset, id))
        .collect::<Result<_>>()?;
    let canvas = config.canvas.resolve(sources[0].record);
    let sources: [SourceTile; 4] = sources.try_into().expect("four sources");
    let mosaic = match config.mode {
        ComposeMode::Stitcher => false,
        ComposeMode::Mosaic => true,
        ComposeMode::Mixed => rng.random_bool(0.5),
    };
    let sample = if mosaic {
        compose_mosaic(sources, canvas, config, &mut rng)?
    } else {
        compose_stitcher(sources, canvas)?
    };
    Ok(GeneratedComposite { group, sample })
}

/// Composite number `index` exactly as [`generate_augmented_dataset`] would
/// produce it.
pub fn generate_composite(
    dataset: &Dataset,
    config: &AugmentConfig,
    index: u64,
) -> Result<GeneratedComposite> {
    config.validate()?;
    let sampler = GroupSampler::new(dataset)?;
    generate_one(dataset, &sampler, config, index)
}

/// Generates `count` composites and the COCO dataset describing them.
/// Image ids are `1..=count`; annotation ids are fresh and sequential from 1.
pub fn generate_augmented_dataset(
    dataset: &Dataset,
    config: &AugmentConfig,
    count: usize,
) -> Result<(Dataset, Vec<GeneratedComposite>)> {
    config.validate()?;
    if count == 0 {
        return Ok((Dataset::empty(dataset.categories().to_vec())?, Vec::new()));
    }
    let sampler = GroupSampler::new(dataset)?;
    let composites: Vec<GeneratedComposite> = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_one(dataset, &sampler, config, i))
        .collect::<Result<_>>()?;

    let mut images = Vec::with_capacity(count);
    let mut annotations = Vec::new();
    for (i, c) in composites.iter().enumerate() {
        let id = i as u64 + 1;
        images.push(ImageRecord {
            id,
            file_name: composite_file_name(id),
            width: c.sample.canvas_width,
            height: c.sample.canvas_height,
        });
        for a in &c.sample.annotations {
            annotations.push(Annotation {
                id: annotations.len() as u64 + 1,
                image_id: id,
                category_id: a.category_id,
                bbox: a.bbox,
                area: a.bbox.area(),
                iscrowd: false,
            });
        }
    }
    let out = Dataset::new(images, annotations, dataset.categories().to_vec())?;
    Ok((out, composites))
}

pub fn composite_file_name(id: u64) -> String {
    format!("composite_{id:06}.png")
}

/// Range of shorter-edge targets for multi-scale training with a shared
/// longer-edge cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainScaleRange {
    pub min: ScaleSpec,
    pub max: ScaleSpec,
}

impl Default for TrainScaleRange {
    fn default() -> Self {
        Self {
            min: ScaleSpec {
                shorter_target: 480,
                longer_cap: 1333,
            },
            max: ScaleSpec {
                shorter_target: 960,
                longer_cap: 1333,
            },
        }
    }
}

impl TrainScaleRange {
    pub fn new(min: ScaleSpec, max: ScaleSpec) -> Result<Self> {
        if min.longer_cap != max.longer_cap || min.shorter_target > max.shorter_target {
            return Err(Error::validation(
                "train scale range needs a shared longer cap and min <= max",
            ));
        }
        Ok(Self { min, max })
    }
}

/// Samples a shorter-edge target uniformly from the integer range.
pub fn multiscale_train_size<R: Rng + ?Sized>(range: &TrainScaleRange, rng: &mut R) -> ScaleSpec {
    ScaleSpec {
        shorter_target: rng.random_range(range.min.shorter_target..=range.max.shorter_target),
        longer_cap: range.min.longer_cap,
    }
}

/// Training-time resize of one image at a randomly drawn scale.
pub fn train_resize<R: Rng + ?Sized>(
    record: &ImageRecord,
    range: &TrainScaleRange,
    rng: &mut R,
) -> (ScaleSpec, crate::geometry::Resized) {
    let spec = multiscale_train_size(range, rng);
    (spec, resize_for_scale(record.width, record.height, spec))
}
