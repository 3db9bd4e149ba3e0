use detkit::coco_io::{parse_detections, write_detections};
use detkit::eval::{coco_summary, EvalConfig};
use detkit::fixture;
use detkit::simdet::{simulate_detector, NoiseProfile};

const GOLDEN: &[u8] = include_bytes!("../fixtures/simdet_seed42.json");
const GOLDEN_AP: f64 = 0.38151196369636997;
const GOLDEN_AP50: f64 = 0.6893564356435644;

fn golden_profile() -> NoiseProfile {
    NoiseProfile {
        jitter_sigma: 0.1,
        miss_rate: 0.2,
        fp_rate: 1.0,
        score_noise: 0.1,
        seed: 42,
    }
}

#[test]
fn seed_42_matches_committed_detections() {
    let ds = fixture::mini_dataset();
    let bytes = write_detections(&simulate_detector(&ds, &golden_profile()).unwrap());
    if std::env::var_os("DETKIT_BLESS").is_some() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/simdet_seed42.json");
        std::fs::write(path, &bytes).unwrap();
    }
    assert!(
        bytes == GOLDEN,
        "simulated detections differ from the committed file"
    );
}

#[test]
fn golden_ap_is_stable() {
    let ds = fixture::mini_dataset();
    let set = parse_detections(GOLDEN, &ds).unwrap();
    let s = coco_summary(&ds, &set, &EvalConfig::default()).unwrap();
    assert!((s.ap.unwrap() - GOLDEN_AP).abs() < 1e-12, "{:?}", s.ap);
    assert!(
        (s.ap50.unwrap() - GOLDEN_AP50).abs() < 1e-12,
        "{:?}",
        s.ap50
    );
}

#[test]
fn heavier_jitter_scores_lower_on_average() {
    let ds = fixture::mini_dataset();
    let cfg = EvalConfig::default();
    let mean_ap = |jitter: f64| {
        (0..20u64)
            .map(|seed| {
                let p = NoiseProfile {
                    jitter_sigma: jitter,
                    seed,
                    ..golden_profile()
                };
                coco_summary(&ds, &simulate_detector(&ds, &p).unwrap(), &cfg)
                    .unwrap()
                    .ap
                    .unwrap()
            })
            .sum::<f64>()
            / 20.0
    };
    let (tight, loose) = (mean_ap(0.05), mean_ap(0.2));
    assert!(loose < tight, "{loose} vs {tight}");
}
