//! Data-side and post-processing toolkit for data-efficient object detection:
//! supercategory-aware mosaic/stitcher augmentation over COCO datasets,
//! multi-scale and multi-model detection fusion, the NMS / Soft-NMS / Top-k
//! Voting family, a COCO-protocol evaluator, and a synthetic detector for
//! exercising all of it without a trained model.
//!
//! Box geometry and suppression are generic over [`Scalar`]; the aliases
//! below name the common instantiations.

pub mod augment;
pub mod coco_io;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod fuse;
pub mod geometry;
pub mod imaging;
pub mod scalar;
pub mod simdet;
pub mod suppress;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use coco_io::{Annotation, Category, Dataset, DetectionSet, ImageRecord};
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalSummary};
pub use geometry::{AffineMap2D, BBox, ScaleSpec};
pub use scalar::Scalar;
pub use suppress::{SuppressionConfig, SuppressionMethod};

pub type BBox64 = geometry::BBox<f64>;
pub type BBox32 = geometry::BBox<f32>;
/// Exact rational boxes, used for oracle-grade checks.
pub type BBoxExact = geometry::BBox<num_rational::Ratio<i64>>;
pub type Detection = coco_io::Detection<f64>;
pub type Detection32 = coco_io::Detection<f32>;
pub type DetectionExact = coco_io::Detection<num_rational::Ratio<i64>>;
pub type AffineMap64 = geometry::AffineMap2D<f64>;

/// Independent ChaCha stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
