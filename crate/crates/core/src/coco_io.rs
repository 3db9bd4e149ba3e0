//! COCO annotation and result documents.
//!
//! Boxes are `[x, y, w, h]` on disk and corner form in memory; the conversion
//! happens only here. Unknown document fields are accepted and dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    pub fn bounds(&self) -> BBox<f64> {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub id: u64,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<f64>,
    pub area: f64,
    pub iscrowd: bool,
}

/// A detector output. Generic over the scalar so suppression can run in any
/// precision; files always carry `f64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T = f64> {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox<T>,
    pub score: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(image_id: u64, category_id: u64, bbox: BBox<T>, score: T) -> Self {
        Self {
            image_id,
            category_id,
            bbox,
            score,
        }
    }
}

/// Parsed COCO corpus with lookup indices. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<ImageRecord>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
    image_pos: HashMap<u64, usize>,
    category_pos: HashMap<u64, usize>,
    anns_by_image: BTreeMap<u64, Vec<usize>>,
    images_by_supercategory: BTreeMap<String, BTreeSet<u64>>,
    // same as above, restricted to non-crowd annotations
    sampling_index: BTreeMap<String, BTreeSet<u64>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images
            && self.annotations == other.annotations
            && self.categories == other.categories
    }
}

impl Dataset {
    /// Validates the flat lists and builds every index.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        let mut image_pos = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_pos.insert(img.id, i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "image",
                    id: img.id,
                });
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::validation(format!(
                    "image {} has zero width or height",
                    img.id
                )));
            }
        }
        let mut category_pos = HashMap::with_capacity(categories.len());
        for (i, cat) in categories.iter().enumerate() {
            if category_pos.insert(cat.id, i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "category",
                    id: cat.id,
                });
            }
            if cat.supercategory.is_empty() {
                return Err(Error::validation(format!(
                    "category {} has an empty supercategory",
                    cat.id
                )));
            }
        }
        let mut seen_ann = BTreeSet::new();
        let mut anns_by_image: BTreeMap<u64, Vec<usize>> =
            images.iter().map(|img| (img.id, Vec::new())).collect();
        let mut images_by_supercategory: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
        let mut sampling_index: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
        for (i, ann) in annotations.iter().enumerate() {
            if !seen_ann.insert(ann.id) {
                return Err(Error::DuplicateId {
                    kind: "annotation",
                    id: ann.id,
                });
            }
            let Some(list) = anns_by_image.get_mut(&ann.image_id) else {
                return Err(Error::Reference {
                    entity: format!("annotation {}", ann.id),
                    missing: format!("image_id {}", ann.image_id),
                });
            };
            let Some(&cpos) = category_pos.get(&ann.category_id) else {
                return Err(Error::Reference {
                    entity: format!("annotation {}", ann.id),
                    missing: format!("category_id {}", ann.category_id),
                });
            };
            if !ann.bbox.is_valid() || !ann.bbox.corners().iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!(
                    "annotation {} has a degenerate box",
                    ann.id
                )));
            }
            if !ann.area.is_finite() || ann.area < 0.0 || (!ann.iscrowd && ann.area <= 0.0) {
                return Err(Error::validation(format!(
                    "annotation {} has invalid area {}",
                    ann.id, ann.area
                )));
            }
            list.push(i);
            let sc = &categories[cpos].supercategory;
            images_by_supercategory
                .entry(sc.clone())
                .or_default()
                .insert(ann.image_id);
            if !ann.iscrowd {
                sampling_index
                    .entry(sc.clone())
                    .or_default()
                    .insert(ann.image_id);
            }
        }
        Ok(Self {
            images,
            annotations,
            categories,
            image_pos,
            category_pos,
            anns_by_image,
            images_by_supercategory,
            sampling_index,
        })
    }

    pub fn empty(categories: Vec<Category>) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), categories)
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.category_pos.get(&id).map(|&i| &self.categories[i])
    }

    /// Annotations of one image in document order.
    pub fn annotations_of(&self, image_id: u64) -> impl Iterator<Item = &Annotation> + '_ {
        self.anns_by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.annotations[i])
    }

    /// Images having at least one annotation in each supercategory.
    pub fn supercategory_index(&self) -> &BTreeMap<String, BTreeSet<u64>> {
        &self.images_by_supercategory
    }

    /// Supercategories of the image's non-crowd annotations.
    pub fn supercategories_of(&self, image_id: u64) -> BTreeSet<String> {
        self.annotations_of(image_id)
            .filter(|a| !a.iscrowd)
            .filter_map(|a| self.category(a.category_id))
            .map(|c| c.supercategory.clone())
            .collect()
    }

    /// Images with at least one non-crowd annotation.
    pub fn eligible_images(&self) -> Vec<u64> {
        self.images
            .iter()
            .filter(|img| self.annotations_of(img.id).any(|a| !a.iscrowd))
            .map(|img| img.id)
            .collect()
    }
}

/// Images having a non-crowd annotation whose category belongs to one of
/// `supercats`. Unknown names contribute nothing.
pub fn supercategory_candidates<'a, I>(dataset: &Dataset, supercats: I) -> BTreeSet<u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = BTreeSet::new();
    for sc in supercats {
        if let Some(ids) = dataset.sampling_index.get(sc) {
            out.extend(ids.iter().copied());
        }
    }
    out
}

/// Detections grouped by image, flat order preserved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    detections: Vec<Detection>,
    by_image: BTreeMap<u64, Vec<usize>>,
    pub tag: Option<String>,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>) -> Self {
        let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, d) in detections.iter().enumerate() {
            by_image.entry(d.image_id).or_default().push(i);
        }
        Self {
            detections,
            by_image,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_detections(self) -> Vec<Detection> {
        self.detections
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_image.keys().copied()
    }

    pub fn for_image(&self, image_id: u64) -> impl Iterator<Item = &Detection> + '_ {
        self.by_image
            .get(&image_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.detections[i])
    }

    pub fn group_index(&self) -> &BTreeMap<u64, Vec<usize>> {
        &self.by_image
    }
}

// ---- wire format ----

#[derive(Debug, Deserialize, Serialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CrowdFlag {
    Bool(bool),
    Int(u8),
}

impl Default for CrowdFlag {
    fn default() -> Self {
        CrowdFlag::Int(0)
    }
}

impl CrowdFlag {
    fn get(&self) -> bool {
        match *self {
            CrowdFlag::Bool(b) => b,
            CrowdFlag::Int(i) => i != 0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawAnnotationIn {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    #[serde(default)]
    iscrowd: CrowdFlag,
}

#[derive(Debug, Serialize)]
struct RawAnnotationOut {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawCategory {
    id: u64,
    name: String,
    supercategory: String,
}

#[derive(Debug, Deserialize)]
struct RawDatasetIn {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotationIn>,
    #[serde(default)]
    categories: Vec<RawCategory>,
}

#[derive(Debug, Serialize)]
struct RawDatasetOut {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotationOut>,
    categories: Vec<RawCategory>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawResult {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

fn parse_error(bytes: &[u8], err: serde_json::Error) -> Error {
    // serde_json reports 1-based line and column; convert to a byte offset.
    let (line, col) = (err.line(), err.column());
    let mut offset = 0usize;
    if line > 0 {
        for (n, chunk) in bytes.split(|&b| b == b'\n').enumerate() {
            if n + 1 == line {
                offset += col.saturating_sub(1).min(chunk.len());
                break;
            }
            offset += chunk.len() + 1;
        }
    }
    Error::Parse {
        offset: offset.min(bytes.len()),
        message: err.to_string(),
    }
}

fn box_from_wire(xywh: [f64; 4], what: impl FnOnce() -> String) -> Result<BBox<f64>> {
    let [x, y, w, h] = xywh;
    if !xywh.iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
        return Err(Error::validation(format!(
            "{} has a non-positive box size {xywh:?}",
            what()
        )));
    }
    Ok(BBox::from_xywh(x, y, w, h))
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let raw: RawDatasetIn = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, e))?;
    let images = raw
        .images
        .into_iter()
        .map(|r| ImageRecord {
            id: r.id,
            file_name: r.file_name,
            width: r.width,
            height: r.height,
        })
        .collect();
    let categories = raw
        .categories
        .into_iter()
        .map(|c| Category {
            id: c.id,
            name: c.name,
            supercategory: c.supercategory,
        })
        .collect();
    let annotations = raw
        .annotations
        .into_iter()
        .map(|a| {
            Ok(Annotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: box_from_wire(a.bbox, || format!("annotation {}", a.id))?,
                area: a.area,
                iscrowd: a.iscrowd.get(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, annotations, categories)
}

/// Parses a flat result array, checking every record against `dataset`.
pub fn parse_detections(bytes: &[u8], dataset: &Dataset) -> Result<DetectionSet> {
    let raw: Vec<RawResult> = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, e))?;
    let mut dets = Vec::with_capacity(raw.len());
    for (i, r) in raw.into_iter().enumerate() {
        if dataset.image(r.image_id).is_none() {
            return Err(Error::Reference {
                entity: format!("result {i}"),
                missing: format!("image_id {}", r.image_id),
            });
        }
        if dataset.category(r.category_id).is_none() {
            return Err(Error::Reference {
                entity: format!("result {i}"),
                missing: format!("category_id {}", r.category_id),
            });
        }
        if !(r.score > 0.0 && r.score <= 1.0) {
            return Err(Error::validation(format!(
                "result {i} has score {} outside (0, 1]",
                r.score
            )));
        }
        let bbox = box_from_wire(r.bbox, || format!("result {i}"))?;
        dets.push(Detection::new(r.image_id, r.category_id, bbox, r.score));
    }
    Ok(DetectionSet::new(dets))
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory serialization");
    out.push(b'\n');
    out
}

pub fn write_dataset(dataset: &Dataset) -> Vec<u8> {
    let raw = RawDatasetOut {
        images: dataset
            .images
            .iter()
            .map(|i| RawImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations: dataset
            .annotations
            .iter()
            .map(|a| RawAnnotationOut {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox.to_xywh(),
                area: a.area,
                iscrowd: a.iscrowd as u8,
            })
            .collect(),
        categories: dataset
            .categories
            .iter()
            .map(|c| RawCategory {
                id: c.id,
                name: c.name.clone(),
                supercategory: c.supercategory.clone(),
            })
            .collect(),
    };
    to_json(&raw)
}

pub fn write_detections(set: &DetectionSet) -> Vec<u8> {
    let raw: Vec<RawResult> = set
        .detections
        .iter()
        .map(|d| RawResult {
            image_id: d.image_id,
            category_id: d.category_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
        })
        .collect();
    to_json(&raw)
}
