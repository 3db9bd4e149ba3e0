//! The end-to-end desk run: K simulated detectors at every test scale, fused
//! per detector, ensembled across detectors, with every stage evaluated.

use std::fmt::Write as _;

use detkit::augment::generate_augmented_dataset;
use detkit::coco_io::{write_dataset, write_detections};
use detkit::eval::{coco_summary, EvalConfig};
use detkit::fuse::{ensemble_models, fuse_multiscale, map_to_original, scale_dataset, ScaleRun};
use detkit::simdet::{simulate_detector, NoiseProfile};
use detkit::{Dataset, EvalSummary, ScaleSpec, SuppressionConfig, SuppressionMethod};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::PipelineArgs;
use crate::commands::{mirror, Context};
use crate::failure::Outcome;
use crate::output::{read_dataset, write_atomic};

#[derive(Debug, Serialize)]
struct SingleScale {
    detector: usize,
    scale: u32,
    flipped: bool,
    metrics: EvalSummary,
}

#[derive(Debug, Serialize)]
struct Fused {
    detector: usize,
    metrics: EvalSummary,
}

#[derive(Debug, Serialize)]
struct Ensembles {
    tkv: EvalSummary,
    soft_nms: EvalSummary,
}

#[derive(Debug, Serialize)]
struct Checks {
    fused_ge_every_single_scale: bool,
    ensemble_ge_mean_detector: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    seed: u64,
    detectors: usize,
    scales: Vec<u32>,
    flip: bool,
    noise: NoiseProfile,
    fusion: SuppressionConfig,
    ensemble: SuppressionConfig,
    single_scale: Vec<SingleScale>,
    fused: Vec<Fused>,
    ensemble_results: Ensembles,
    checks: Checks,
}

/// Seed of detector `k` on scale slot `j`, mirrored or not.
fn run_seed(seed: u64, k: usize, j: usize, flipped: bool) -> u64 {
    let stream = ((k as u64) << 32) | ((j as u64) << 1) | flipped as u64;
    detkit::stream_rng(seed, stream).next_u64()
}

fn ap(s: &EvalSummary) -> Option<f64> {
    s.ap
}

fn row(out: &mut String, name: &str, s: &EvalSummary) {
    let _ = write!(out, "{name:<24}");
    for (_, v) in s.values() {
        match v {
            Some(v) => {
                let _ = write!(out, "{:>8.2}", v * 100.0);
            }
            None => {
                let _ = write!(out, "{:>8}", "-");
            }
        }
    }
    out.push('\n');
}

fn render_text(r: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "seed {}  detectors {}  scales {:?}{}",
        r.seed,
        r.detectors,
        r.scales,
        if r.flip { "  (+flip)" } else { "" }
    );
    let _ = write!(out, "{:<24}", "stage");
    for (name, _) in EvalSummary::default().values() {
        let _ = write!(out, "{name:>8}");
    }
    out.push('\n');
    for s in &r.single_scale {
        let flip = if s.flipped { " flip" } else { "" };
        row(
            &mut out,
            &format!("det{} @{}{}", s.detector, s.scale, flip),
            &s.metrics,
        );
    }
    for f in &r.fused {
        row(&mut out, &format!("det{} fused", f.detector), &f.metrics);
    }
    row(&mut out, "ensemble tkv", &r.ensemble_results.tkv);
    row(&mut out, "ensemble soft-nms", &r.ensemble_results.soft_nms);
    let _ = writeln!(
        out,
        "fused >= every single scale: {}\nensemble >= mean detector: {}",
        r.checks.fused_ge_every_single_scale, r.checks.ensemble_ge_mean_detector
    );
    out
}

pub fn run(ctx: &Context, a: &PipelineArgs) -> Outcome<()> {
    let gt_path = ctx.gt(&a.gt)?;
    let out = ctx.out_dir(&a.out)?;
    let mut p = ctx.file.pipeline.clone();
    if let Some(k) = a.detectors {
        p.detectors = k;
    }
    if let Some(s) = &a.scales {
        p.scales = s.clone();
    }
    p.flip |= a.flip;
    if let Some(n) = a.augment_count {
        p.augment_count = n;
    }
    p.validate()?;
    let noise = a.noise.apply(ctx.file.simulate.unwrap_or_default());
    noise.validate()?;
    let fusion = ctx.file.fusion_or_default();
    fusion.validate()?;
    let tkv = ctx.file.ensemble_or_default();
    tkv.validate()?;
    let soft = SuppressionConfig {
        method: SuppressionMethod::SoftGaussian,
        ..tkv
    };

    let ds = read_dataset(&gt_path)?;
    let eval_cfg = EvalConfig::default();
    let specs: Vec<ScaleSpec> = p
        .scales
        .iter()
        .map(|&s| ScaleSpec::new(s, p.longer_cap))
        .collect::<detkit::Result<_>>()?;
    let scaled: Vec<Dataset> = specs
        .par_iter()
        .map(|&s| scale_dataset(&ds, s))
        .collect::<detkit::Result<_>>()?;
    let variants: Vec<(usize, bool)> = (0..specs.len())
        .flat_map(|j| {
            let mut v = vec![(j, false)];
            if p.flip {
                v.push((j, true));
            }
            v
        })
        .collect();

    let runs: Vec<Vec<ScaleRun>> = (0..p.detectors)
        .into_par_iter()
        .map(|k| {
            variants
                .par_iter()
                .map(|&(j, flipped)| {
                    let profile = NoiseProfile {
                        seed: run_seed(ctx.seed, k, j, flipped),
                        ..noise
                    };
                    let mut set = simulate_detector(&scaled[j], &profile)?;
                    if flipped {
                        set = mirror(&set, &scaled[j]);
                    }
                    Ok(ScaleRun {
                        scale: specs[j],
                        detections: set,
                        flipped,
                    })
                })
                .collect::<detkit::Result<Vec<_>>>()
        })
        .collect::<detkit::Result<_>>()?;

    let single_scale: Vec<SingleScale> = runs
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, rs)| rs.iter().map(move |r| (k, r)))
        .map(|(k, r)| {
            let mapped = map_to_original(r, &ds)?;
            Ok(SingleScale {
                detector: k + 1,
                scale: r.scale.shorter_target,
                flipped: r.flipped,
                metrics: coco_summary(&ds, &mapped, &eval_cfg)?,
            })
        })
        .collect::<detkit::Result<_>>()?;
    let fused_sets: Vec<_> = runs
        .par_iter()
        .map(|rs| fuse_multiscale(rs, &ds, &fusion))
        .collect::<detkit::Result<_>>()?;
    let fused: Vec<Fused> = fused_sets
        .par_iter()
        .enumerate()
        .map(|(k, set)| {
            Ok(Fused {
                detector: k + 1,
                metrics: coco_summary(&ds, set, &eval_cfg)?,
            })
        })
        .collect::<detkit::Result<_>>()?;
    let ens_tkv = ensemble_models(&fused_sets, &tkv)?;
    let ens_soft = ensemble_models(&fused_sets, &soft)?;
    let ensemble_results = Ensembles {
        tkv: coco_summary(&ds, &ens_tkv, &eval_cfg)?,
        soft_nms: coco_summary(&ds, &ens_soft, &eval_cfg)?,
    };

    let fused_ok = fused.iter().all(|f| {
        single_scale
            .iter()
            .filter(|s| s.detector == f.detector)
            .all(|s| matches!((ap(&f.metrics), ap(&s.metrics)), (Some(a), Some(b)) if a >= b))
    });
    let fused_aps: Option<Vec<f64>> = fused.iter().map(|f| ap(&f.metrics)).collect();
    let ensemble_ok = match (ap(&ensemble_results.tkv), fused_aps) {
        (Some(e), Some(v)) => e >= v.iter().sum::<f64>() / v.len() as f64,
        _ => false,
    };

    let augmented = if p.augment_count > 0 {
        let mut cfg = ctx.file.augment.clone().unwrap_or_default();
        cfg.seed = ctx.seed;
        Some(generate_augmented_dataset(&ds, &cfg, p.augment_count)?.0)
    } else {
        None
    };

    let report = Report {
        seed: ctx.seed,
        detectors: p.detectors,
        scales: p.scales.clone(),
        flip: p.flip,
        noise,
        fusion,
        ensemble: tkv,
        single_scale,
        fused,
        ensemble_results,
        checks: Checks {
            fused_ge_every_single_scale: fused_ok,
            ensemble_ge_mean_detector: ensemble_ok,
        },
    };

    // Everything is computed before the first write.
    for (k, rs) in runs.iter().enumerate() {
        for r in rs {
            let flip = if r.flipped { "_flip" } else { "" };
            let name = format!("det{}_scale{}{flip}.json", k + 1, r.scale.shorter_target);
            write_atomic(
                &out.join("runs").join(name),
                &write_detections(&r.detections),
            )?;
        }
    }
    for (k, set) in fused_sets.iter().enumerate() {
        write_atomic(
            &out.join("fused").join(format!("det{}.json", k + 1)),
            &write_detections(set),
        )?;
    }
    write_atomic(&out.join("ensemble_tkv.json"), &write_detections(&ens_tkv))?;
    write_atomic(
        &out.join("ensemble_soft_nms.json"),
        &write_detections(&ens_soft),
    )?;
    if let Some(aug) = &augmented {
        write_atomic(
            &out.join("augmented").join("annotations.json"),
            &write_dataset(aug),
        )?;
    }
    let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
    json.push(b'\n');
    write_atomic(&out.join("report.json"), &json)?;
    let text = render_text(&report);
    write_atomic(&out.join("report.txt"), text.as_bytes())?;

    print!("{text}");
    println!(
        "pipeline: {} detectors x {} runs -> {}",
        p.detectors,
        variants.len(),
        out.display()
    );
    Ok(())
}
