use std::collections::BTreeSet;
use std::sync::{Mutex, OnceLock};

use detkit::augment::{
    composite_rng, generate_augmented_dataset, generate_composite, AugmentConfig, ComposeMode,
    CompositeKind, GroupSampler, Selection,
};
use detkit::coco_io::{supercategory_candidates, write_dataset};
use detkit::fixture::{self, coco_categories};
use detkit::geometry::{affine_map, clip};
use detkit::{Annotation, BBox, Dataset, ImageRecord};

struct Capture;

fn captured() -> &'static Mutex<Vec<String>> {
    static LINES: OnceLock<Mutex<Vec<String>>> = OnceLock::new();
    LINES.get_or_init(|| Mutex::new(Vec::new()))
}

impl log::Log for Capture {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }
    fn log(&self, record: &log::Record) {
        captured().lock().unwrap().push(record.args().to_string());
    }
    fn flush(&self) {}
}

fn install_logger() {
    static LOGGER: Capture = Capture;
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(log::LevelFilter::Debug);
}

fn category_id(name: &str) -> u64 {
    coco_categories()
        .iter()
        .find(|c| c.name == name)
        .unwrap()
        .id
}

/// Vehicles are plentiful, animals moderate, food has two images, kitchen
/// one; sports appears only as crowd on one image and as a real object on
/// another, so crowd must not feed the pool.
fn engineered() -> Dataset {
    let layout: Vec<Vec<(&str, bool)>> = vec![
        vec![("car", false)],
        vec![("bus", false), ("truck", false)],
        vec![("train", false)],
        vec![("bicycle", false), ("dog", false)],
        vec![("boat", false)],
        vec![("airplane", false), ("person", false)],
        vec![("dog", false)],
        vec![("cat", false), ("horse", false)],
        vec![("zebra", false)],
        vec![("pizza", false)],
        vec![("banana", false), ("frisbee", true)],
        vec![("bottle", false)],
        vec![("kite", false)],
        vec![("person", false)],
        vec![("person", false), ("car", false)],
        vec![("cow", false)],
    ];
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for (i, objs) in layout.iter().enumerate() {
        let id = i as u64 + 1;
        images.push(ImageRecord {
            id,
            file_name: format!("e{id}.png"),
            width: 320,
            height: 240,
        });
        for (k, (name, crowd)) in objs.iter().enumerate() {
            let b = BBox::new(10.0 + 40.0 * k as f64, 20.0, 60.0 + 40.0 * k as f64, 90.0);
            anns.push(Annotation {
                id: anns.len() as u64 + 1,
                image_id: id,
                category_id: category_id(name),
                bbox: b,
                area: b.area(),
                iscrowd: *crowd,
            });
        }
    }
    Dataset::new(images, anns, coco_categories()).unwrap()
}

#[test]
fn supercategory_groups_respect_the_pool() {
    install_logger();
    let ds = engineered();
    let sampler = GroupSampler::new(&ds).unwrap();
    let (mut constrained, mut fallback) = (0, 0);
    for i in 0..1000u64 {
        let mut rng = composite_rng(77, i);
        let g = sampler.sample(Selection::Supercategory, &mut rng);
        let query = g.image_ids[0];
        let distinct: BTreeSet<u64> = g.image_ids.iter().copied().collect();
        assert_eq!(distinct.len(), 4);
        assert_eq!(g.query_supercategories, ds.supercategories_of(query));
        let mut pool =
            supercategory_candidates(&ds, g.query_supercategories.iter().map(String::as_str));
        pool.remove(&query);
        let companions = &g.image_ids[1..];
        if pool.len() >= 3 {
            constrained += 1;
            assert_eq!(g.fallback_fills, 0);
            for c in companions {
                assert!(!ds
                    .supercategories_of(*c)
                    .is_disjoint(&g.query_supercategories));
            }
        } else {
            fallback += 1;
            assert_eq!(g.fallback_fills, 3 - pool.len());
            assert!(pool.iter().all(|p| companions.contains(p)));
        }
    }
    assert!(constrained > 0 && fallback > 0);
    let lines = captured().lock().unwrap();
    assert!(lines.iter().any(|l| l.contains("supercategory pool")));
}

#[test]
fn composites_trace_back_to_sources() {
    let ds = fixture::mini_dataset();
    let cfg = AugmentConfig {
        mode: ComposeMode::Mixed,
        seed: 5,
        ..Default::default()
    };
    let (out, composites) = generate_augmented_dataset(&ds, &cfg, 500).unwrap();
    assert_eq!(composites.len(), 500);
    let kinds: BTreeSet<String> = composites
        .iter()
        .map(|c| format!("{:?}", c.sample.kind))
        .collect();
    assert_eq!(kinds.len(), 2);
    let mut checked = 0;
    for c in &composites {
        let s = &c.sample;
        let canvas = s.canvas();
        let area: f64 = s.tiles.iter().map(|t| t.dest_rect.area()).sum();
        assert_eq!(area, canvas.area());
        for (i, a) in s.tiles.iter().enumerate() {
            assert!(canvas.contains(&a.dest_rect));
            for b in &s.tiles[i + 1..] {
                assert_eq!(a.dest_rect.intersection_area(&b.dest_rect), 0.0);
            }
        }
        for a in &s.annotations {
            let src = ds
                .annotations()
                .iter()
                .find(|x| x.id == a.source_annotation_id)
                .unwrap();
            let tile = &s.tiles[a.tile];
            assert_eq!(src.image_id, tile.source_image_id);
            assert!(!src.iscrowd);
            let want = affine_map(&clip(&src.bbox, &tile.source_crop).unwrap(), &tile.map);
            for (g, w) in a.bbox.corners().iter().zip(want.corners()) {
                assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
            }
            assert!(tile.dest_rect.contains(&a.bbox));
            assert!(canvas.contains(&a.bbox));
            if s.kind == CompositeKind::Mosaic {
                assert!(a.bbox.width() >= cfg.min_side_px && a.bbox.height() >= cfg.min_side_px);
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
    assert_eq!(out.annotations().len(), checked);
    let ids: Vec<u64> = out.annotations().iter().map(|a| a.id).collect();
    assert_eq!(ids, (1..=checked as u64).collect::<Vec<_>>());
}

#[test]
fn generation_is_reproducible() {
    let ds = fixture::mini_dataset();
    for mode in [
        ComposeMode::Stitcher,
        ComposeMode::Mosaic,
        ComposeMode::Mixed,
    ] {
        let cfg = AugmentConfig {
            mode,
            seed: 9,
            ..Default::default()
        };
        let (a, _) = generate_augmented_dataset(&ds, &cfg, 40).unwrap();
        let (b, _) = generate_augmented_dataset(&ds, &cfg, 40).unwrap();
        assert_eq!(write_dataset(&a), write_dataset(&b));
        let other = AugmentConfig { seed: 10, ..cfg };
        let (c, _) = generate_augmented_dataset(&ds, &other, 40).unwrap();
        assert_ne!(write_dataset(&a), write_dataset(&c));
        let (_, all) = generate_augmented_dataset(&ds, &cfg, 40).unwrap();
        let single = generate_composite(&ds, &cfg, 17).unwrap();
        assert_eq!(single.sample, all[17].sample);
    }
}

#[test]
fn odd_canvas_still_partitions() {
    let ds = fixture::mini_dataset();
    let cfg = AugmentConfig {
        mode: ComposeMode::Stitcher,
        canvas: detkit::augment::CanvasSize::Fixed {
            width: 333,
            height: 201,
        },
        ..Default::default()
    };
    let (_, comps) = generate_augmented_dataset(&ds, &cfg, 10).unwrap();
    for c in comps {
        let total: f64 = c.sample.tiles.iter().map(|t| t.dest_rect.area()).sum();
        assert_eq!(total, 333.0 * 201.0);
    }
}
