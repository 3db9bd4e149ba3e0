use std::time::Instant;

use detkit::coco_io::{parse_dataset, parse_detections};
use detkit::eval::{coco_summary, evaluate, summarize, EvalConfig};
use detkit::{Dataset, Detection, DetectionSet, EvalSummary};
use detkit_oracle::{coco_metrics, random_instance, to_f64, Instance};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn load(inst: &Instance) -> (Dataset, DetectionSet) {
    let ds = parse_dataset(inst.gt_json().as_bytes()).unwrap();
    let dets = parse_detections(inst.dets_json().as_bytes(), &ds).unwrap();
    (ds, dets)
}

fn values(s: &EvalSummary) -> Vec<Option<f64>> {
    s.values().iter().map(|(_, v)| *v).collect()
}

fn assert_matches_oracle(inst: &Instance) {
    let (ds, dets) = load(inst);
    let got = coco_summary(&ds, &dets, &EvalConfig::default()).unwrap();
    let want = coco_metrics(inst);
    for ((name, g), w) in got.values().iter().zip(&want) {
        match (g, w) {
            (None, None) => {}
            (Some(g), Some(w)) => assert!(
                (g - to_f64(w)).abs() <= 1e-9,
                "{name}: evaluator {g} vs oracle {}",
                to_f64(w)
            ),
            _ => panic!("{name}: definedness differs: {g:?} vs {w:?}"),
        }
    }
}

#[test]
fn matches_brute_force_on_random_instances() {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x0c0c0);
    for _ in 0..200 {
        assert_matches_oracle(&random_instance(&mut rng));
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn hand_traced_curve() {
    let gt = br#"{"images":[{"id":1,"file_name":"a","width":100,"height":100}],
        "categories":[{"id":1,"name":"c","supercategory":"s"}],
        "annotations":[
          {"id":1,"image_id":1,"category_id":1,"bbox":[0,0,10,10],"area":100,"iscrowd":0},
          {"id":2,"image_id":1,"category_id":1,"bbox":[50,0,10,10],"area":100,"iscrowd":0}]}"#;
    let dets = br#"[
        {"image_id":1,"category_id":1,"bbox":[0,0,10,10],"score":0.9},
        {"image_id":1,"category_id":1,"bbox":[80,0,10,10],"score":0.8},
        {"image_id":1,"category_id":1,"bbox":[50,0,10,10],"score":0.7}]"#;
    let ds = parse_dataset(gt).unwrap();
    let set = parse_detections(dets, &ds).unwrap();
    let s = coco_summary(&ds, &set, &EvalConfig::default()).unwrap();
    let ap50 = s.ap50.unwrap();
    assert!((ap50 - 0.8350).abs() < 1e-4, "{ap50}");
    assert!((ap50 - (51.0 + 50.0 * 2.0 / 3.0) / 101.0).abs() < 1e-12);
}

#[test]
fn ap_is_mean_of_threshold_aps() {
    let mut rng = StdRng::seed_from_u64(5);
    let cfg = EvalConfig::default();
    for _ in 0..50 {
        let (ds, dets) = load(&random_instance(&mut rng));
        let table = evaluate(&ds, &dets, &cfg).unwrap();
        let s = summarize(&table, &cfg);
        let per: Vec<f64> = table.per_threshold(0).into_iter().flatten().collect();
        match s.ap {
            Some(ap) => {
                assert_eq!(per.len(), 10);
                assert!((ap - per.iter().sum::<f64>() / 10.0).abs() <= 1e-12);
            }
            None => assert!(per.is_empty()),
        }
    }
}

fn with_detections(dets: &DetectionSet, extra: Vec<Detection>) -> DetectionSet {
    let mut all = dets.detections().to_vec();
    all.extend(extra);
    DetectionSet::new(all)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn low_scoring_false_positive_never_helps(seed in any::<u64>(), img_pick in 0usize..5, cat in 1u64..=3,
                                              x in 0.0f64..100.0, y in 0.0f64..100.0, w in 1.0f64..28.0, h in 1.0f64..28.0) {
        let inst = random_instance(&mut StdRng::seed_from_u64(seed));
        let (ds, dets) = load(&inst);
        let cfg = EvalConfig::default();
        let before = coco_summary(&ds, &dets, &cfg).unwrap();
        let image_id = ds.images()[img_pick % ds.images().len()].id;
        let min = dets.detections().iter().map(|d| d.score).fold(1.0, f64::min);
        let extra = Detection::new(image_id, cat, detkit::BBox::from_xywh(x, y, w, h), min / 2.0);
        let after = coco_summary(&ds, &with_detections(&dets, vec![extra]), &cfg).unwrap();
        for (b, a) in values(&before).into_iter().zip(values(&after)) {
            if let (Some(b), Some(a)) = (b, a) {
                prop_assert!(a <= b + 1e-12, "{a} > {b}");
            } else {
                prop_assert_eq!(a.is_some(), b.is_some());
            }
        }
    }

    #[test]
    fn positive_score_scaling_is_invariant(seed in any::<u64>(), factor in 0.01f64..1.0) {
        let inst = random_instance(&mut StdRng::seed_from_u64(seed));
        let (ds, dets) = load(&inst);
        let cfg = EvalConfig::default();
        let scaled = DetectionSet::new(
            dets.detections()
                .iter()
                .map(|d| Detection { score: d.score * factor, ..*d })
                .collect(),
        );
        // ties may only survive if scaling keeps them; with hundredths and a
        // monotone map they do, and distinct scores stay distinct
        let a = coco_summary(&ds, &dets, &cfg).unwrap();
        let b = coco_summary(&ds, &scaled, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn duplicate_of_matched_gt_is_false_positive() {
    let gt = br#"{"images":[{"id":1,"file_name":"a","width":100,"height":100}],
        "categories":[{"id":1,"name":"c","supercategory":"s"}],
        "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[0,0,10,10],"area":100,"iscrowd":0}]}"#;
    let dets = br#"[
        {"image_id":1,"category_id":1,"bbox":[0,0,10,10],"score":0.9},
        {"image_id":1,"category_id":1,"bbox":[0,0,10,10],"score":0.8}]"#;
    let ds = parse_dataset(gt).unwrap();
    let set = parse_detections(dets, &ds).unwrap();
    let s = coco_summary(&ds, &set, &EvalConfig::default()).unwrap();
    // the duplicate arrives after full recall, so the envelope is untouched
    assert_eq!(s.ap50, Some(1.0));
    let flipped = br#"[
        {"image_id":1,"category_id":1,"bbox":[0,0,10,10],"score":0.8},
        {"image_id":1,"category_id":1,"bbox":[40,40,10,10],"score":0.9}]"#;
    let set = parse_detections(flipped, &ds).unwrap();
    let s = coco_summary(&ds, &set, &EvalConfig::default()).unwrap();
    assert!((s.ap50.unwrap() - 0.5).abs() < 1e-12);
}
