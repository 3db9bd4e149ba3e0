//! Synthetic datasets used by tests, the acceptance suite and the CLI demo.
//!
//! The bundled `mini16` fixture is produced by [`synthetic_dataset`] and
//! committed under `fixtures/` so that golden values stay stable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coco_io::{parse_dataset, Annotation, Category, Dataset, ImageRecord};
use crate::geometry::BBox;

/// The 80 COCO 2017 detection categories and their 12 supercategories.
const COCO_CATEGORIES: &[(u64, &str, &str)] = &[
    (1, "person", "person"),
    (2, "bicycle", "vehicle"),
    (3, "car", "vehicle"),
    (4, "motorcycle", "vehicle"),
    (5, "airplane", "vehicle"),
    (6, "bus", "vehicle"),
    (7, "train", "vehicle"),
    (8, "truck", "vehicle"),
    (9, "boat", "vehicle"),
    (10, "traffic light", "outdoor"),
    (11, "fire hydrant", "outdoor"),
    (13, "stop sign", "outdoor"),
    (14, "parking meter", "outdoor"),
    (15, "bench", "outdoor"),
    (16, "bird", "animal"),
    (17, "cat", "animal"),
    (18, "dog", "animal"),
    (19, "horse", "animal"),
    (20, "sheep", "animal"),
    (21, "cow", "animal"),
    (22, "elephant", "animal"),
    (23, "bear", "animal"),
    (24, "zebra", "animal"),
    (25, "giraffe", "animal"),
    (27, "backpack", "accessory"),
    (28, "umbrella", "accessory"),
    (31, "handbag", "accessory"),
    (32, "tie", "accessory"),
    (33, "suitcase", "accessory"),
    (34, "frisbee", "sports"),
    (35, "skis", "sports"),
    (36, "snowboard", "sports"),
    (37, "sports ball", "sports"),
    (38, "kite", "sports"),
    (39, "baseball bat", "sports"),
    (40, "baseball glove", "sports"),
    (41, "skateboard", "sports"),
    (42, "surfboard", "sports"),
    (43, "tennis racket", "sports"),
    (44, "bottle", "kitchen"),
    (46, "wine glass", "kitchen"),
    (47, "cup", "kitchen"),
    (48, "fork", "kitchen"),
    (49, "knife", "kitchen"),
    (50, "spoon", "kitchen"),
    (51, "bowl", "kitchen"),
    (52, "banana", "food"),
    (53, "apple", "food"),
    (54, "sandwich", "food"),
    (55, "orange", "food"),
    (56, "broccoli", "food"),
    (57, "carrot", "food"),
    (58, "hot dog", "food"),
    (59, "pizza", "food"),
    (60, "donut", "food"),
    (61, "cake", "food"),
    (62, "chair", "furniture"),
    (63, "couch", "furniture"),
    (64, "potted plant", "furniture"),
    (65, "bed", "furniture"),
    (67, "dining table", "furniture"),
    (70, "toilet", "furniture"),
    (72, "tv", "electronic"),
    (73, "laptop", "electronic"),
    (74, "mouse", "electronic"),
    (75, "remote", "electronic"),
    (76, "keyboard", "electronic"),
    (77, "cell phone", "electronic"),
    (78, "microwave", "appliance"),
    (79, "oven", "appliance"),
    (80, "toaster", "appliance"),
    (81, "sink", "appliance"),
    (82, "refrigerator", "appliance"),
    (84, "book", "indoor"),
    (85, "clock", "indoor"),
    (86, "vase", "indoor"),
    (87, "scissors", "indoor"),
    (88, "teddy bear", "indoor"),
    (89, "hair drier", "indoor"),
    (90, "toothbrush", "indoor"),
];

pub fn coco_categories() -> Vec<Category> {
    COCO_CATEGORIES
        .iter()
        .map(|&(id, name, sc)| Category {
            id,
            name: name.to_string(),
            supercategory: sc.to_string(),
        })
        .collect()
}

// Themes: each synthetic image draws most objects from one supercategory.
const THEMES: &[&[u64]] = &[
    &[3, 6, 7, 8], // vehicle
    &[17, 18, 19], // animal
    &[59, 61, 53], // food
    &[62, 63, 65], // furniture
    &[72, 73, 77], // electronic
];

const SIZES: &[(u32, u32)] = &[
    (640, 480),
    (480, 640),
    (800, 600),
    (512, 512),
    (960, 540),
    (427, 640),
];

/// Deterministic COCO-style dataset with `num_images` images, 2–5 objects
/// each, spanning small/medium/large areas, with an occasional crowd region.
pub fn synthetic_dataset(num_images: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(num_images);
    let mut annotations = Vec::new();
    let mut next_ann = 1u64;
    for i in 0..num_images {
        let id = i as u64 + 1;
        let (w, h) = SIZES[rng.random_range(0..SIZES.len())];
        images.push(ImageRecord {
            id,
            file_name: format!("img_{id:04}.png"),
            width: w,
            height: h,
        });
        let theme = THEMES[i % THEMES.len()];
        let n = rng.random_range(2..=5);
        for k in 0..n {
            let category_id = if k > 0 && rng.random_bool(0.2) {
                1
            } else {
                theme[rng.random_range(0..theme.len())]
            };
            // Side length drawn log-uniformly so all three area strata occur.
            let side = |rng: &mut ChaCha8Rng, limit: u32| -> f64 {
                let lo = 12f64.ln();
                let hi = (limit as f64 * 0.6).ln();
                rng.random_range(lo..hi).exp().round()
            };
            let bw = side(&mut rng, w);
            let bh = side(&mut rng, h);
            let x = rng.random_range(0.0..(w as f64 - bw)).round();
            let y = rng.random_range(0.0..(h as f64 - bh)).round();
            let bbox = BBox::new(x, y, x + bw, y + bh);
            annotations.push(Annotation {
                id: next_ann,
                image_id: id,
                category_id,
                bbox,
                area: bw * bh,
                iscrowd: false,
            });
            next_ann += 1;
        }
        if i % 7 == 6 {
            let bbox = BBox::new(0.0, 0.0, (w / 3) as f64, (h / 3) as f64);
            annotations.push(Annotation {
                id: next_ann,
                image_id: id,
                category_id: 1,
                bbox,
                area: bbox.area() * 0.7,
                iscrowd: true,
            });
            next_ann += 1;
        }
    }
    Dataset::new(images, annotations, coco_categories()).expect("synthetic dataset is valid")
}

pub const MINI16_SEED: u64 = 2020;

/// The bundled 16-image fixture.
pub fn mini_dataset() -> Dataset {
    parse_dataset(MINI16_JSON).expect("bundled fixture parses")
}

pub const MINI16_JSON: &[u8] = include_bytes!("../fixtures/mini16.json");
