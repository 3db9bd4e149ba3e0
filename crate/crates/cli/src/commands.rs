use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};
use detkit::augment::{generate_augmented_dataset, generate_composite, AugmentConfig, CanvasSize};
use detkit::coco_io::{write_dataset, write_detections};
use detkit::eval::{coco_summary, EvalConfig};
use detkit::fuse::{ensemble_models, fuse_multiscale, scale_dataset, ScaleRun};
use detkit::geometry::hflip_box;
use detkit::imaging::{
    draw_preview, encode_png, load_rgb, render_composite, render_synthetic_image,
};
use detkit::simdet::simulate_detector;
use detkit::suppress::suppress_set;
use detkit::{Dataset, DetectionSet, ScaleSpec};
use image::RgbImage;
use rayon::prelude::*;

use crate::args::*;
use crate::config::FileConfig;
use crate::failure::{Failure, Outcome, EXIT_OK, EXIT_USAGE};
use crate::output::{read_dataset, read_detections, write_atomic};
use crate::pipeline;

/// Everything a subcommand needs besides its own flags.
pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

impl Context {
    pub fn gt(&self, flag: &Option<PathBuf>) -> Outcome<PathBuf> {
        flag.clone()
            .or_else(|| self.file.data.gt.clone())
            .ok_or_else(|| Failure::invalid("no ground truth given (use --gt or [data] gt)"))
    }

    pub fn out_dir(&self, flag: &Option<PathBuf>) -> Outcome<PathBuf> {
        flag.clone()
            .or_else(|| self.file.output.dir.clone())
            .ok_or_else(|| {
                Failure::invalid("no output directory given (use --out or [output] dir)")
            })
    }

    fn images(&self, flag: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.file.data.images.clone())
    }

    fn augment_config(&self, flags: &ComposeFlags) -> AugmentConfig {
        let mut cfg = self.file.augment.clone().unwrap_or_default();
        cfg.seed = self.seed;
        if let Some(m) = flags.mode {
            cfg.mode = m.into();
        }
        if let Some(s) = flags.selection {
            cfg.selection = s.into();
        }
        if let Some((width, height)) = flags.canvas {
            cfg.canvas = CanvasSize::Fixed { width, height };
        }
        cfg.min_visible_fraction = flags
            .min_visible_fraction
            .unwrap_or(cfg.min_visible_fraction);
        cfg
    }
}

/// Parses `argv`, runs the subcommand and returns the exit status.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).expect("matches come from the same definition");
    init_logging(cli.verbose);
    match execute(&cli, &matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn execute(cli: &Cli, matches: &ArgMatches) -> Outcome<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    let workers = cli.workers.or(ctx.file.workers);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Failure::invalid("--workers must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Augment(a) => augment(&ctx, a),
        Command::Preview(a) => preview(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Suppress(a) => suppress(&ctx, a),
        Command::FuseScales(a) => {
            let sub = matches
                .subcommand_matches("fuse-scales")
                .expect("fuse-scales was parsed");
            fuse_scales(&ctx, a, sub)
        }
        Command::Ensemble(a) => ensemble(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Pipeline(a) => pipeline::run(&ctx, a),
    })
}

/// Pixels for every source image the composites use: read from `dir` by file
/// name, or drawn from the annotations when no directory is given.
fn source_pixels(
    dataset: &Dataset,
    ids: Vec<u64>,
    dir: Option<&Path>,
) -> Outcome<HashMap<u64, RgbImage>> {
    ids.into_par_iter()
        .map(|id| {
            let rec = dataset
                .image(id)
                .expect("composite sources come from the dataset");
            let img = match dir {
                Some(d) => load_rgb(&d.join(&rec.file_name))?,
                None => render_synthetic_image(rec, dataset.annotations_of(id)),
            };
            if img.dimensions() != (rec.width, rec.height) {
                return Err(Failure::invalid(format!(
                    "{}: image is {}x{}, annotations say {}x{}",
                    rec.file_name,
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                )));
            }
            Ok((id, img))
        })
        .collect()
}

fn augment(ctx: &Context, a: &AugmentArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let out = ctx.out_dir(&a.out)?;
    let cfg = ctx.augment_config(&a.compose);
    let (generated, composites) = generate_augmented_dataset(&ds, &cfg, a.count)?;
    if !a.annotations_only {
        let mut ids: Vec<u64> = composites
            .iter()
            .flat_map(|c| c.sample.tiles.iter().map(|t| t.source_image_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let pixels = source_pixels(&ds, ids, ctx.images(&a.images).as_deref())?;
        let pngs: Vec<(String, Vec<u8>)> = composites
            .par_iter()
            .zip(generated.images())
            .map(|(c, rec)| {
                let img = render_composite(&c.sample, &pixels)?;
                Ok((rec.file_name.clone(), encode_png(&img)?))
            })
            .collect::<Outcome<_>>()?;
        for (name, bytes) in pngs {
            write_atomic(&out.join(name), &bytes)?;
        }
    }
    write_atomic(&out.join("annotations.json"), &write_dataset(&generated))?;
    println!(
        "augment: {} composites, {} annotations -> {}",
        generated.images().len(),
        generated.annotations().len(),
        out.display()
    );
    Ok(())
}

fn preview(ctx: &Context, a: &PreviewArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let cfg = ctx.augment_config(&a.compose);
    let c = generate_composite(&ds, &cfg, a.index)?;
    let mut ids: Vec<u64> = c.sample.tiles.iter().map(|t| t.source_image_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let pixels = source_pixels(&ds, ids, ctx.images(&a.images).as_deref())?;
    let mut img = render_composite(&c.sample, &pixels)?;
    draw_preview(
        &mut img,
        c.sample
            .annotations
            .iter()
            .map(|x| (&x.bbox, x.category_id)),
    );
    write_atomic(&a.out, &encode_png(&img)?)?;
    println!(
        "preview: composite {} ({:?}, {} boxes) -> {}",
        a.index,
        c.sample.kind,
        c.sample.annotations.len(),
        a.out.display()
    );
    Ok(())
}

fn simulate(ctx: &Context, a: &SimulateArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let mut profile = a.noise.apply(ctx.file.simulate.unwrap_or_default());
    profile.seed = ctx.seed;
    let target = match a.scale {
        Some(s) => scale_dataset(&ds, ScaleSpec::new(s, a.longer_cap)?)?,
        None => ds,
    };
    let mut set = simulate_detector(&target, &profile)?;
    if a.flipped {
        set = mirror(&set, &target);
    }
    write_atomic(&a.out, &write_detections(&set))?;
    println!(
        "simulate: {} detections on {} images -> {}",
        set.len(),
        target.images().len(),
        a.out.display()
    );
    Ok(())
}

/// Detections as seen on horizontally mirrored images.
pub fn mirror(set: &DetectionSet, dataset: &Dataset) -> DetectionSet {
    DetectionSet::new(
        set.detections()
            .iter()
            .map(|d| {
                let w = dataset
                    .image(d.image_id)
                    .expect("simulated on this dataset")
                    .width as f64;
                detkit::Detection {
                    bbox: hflip_box(&d.bbox, w),
                    ..*d
                }
            })
            .collect(),
    )
}

fn suppress(ctx: &Context, a: &SuppressArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let set = read_detections(&a.dets, &ds)?;
    let cfg = a.suppression.apply(ctx.file.suppress.unwrap_or_default());
    cfg.validate()?;
    let out = suppress_set(&set, &cfg);
    write_atomic(&a.out, &write_detections(&out))?;
    println!(
        "suppress: {:?} kept {} of {} detections -> {}",
        cfg.method,
        out.len(),
        set.len(),
        a.out.display()
    );
    Ok(())
}

/// Pairs each `--dets` occurrence with the `--scale` and `--flipped` flags
/// given after it and before the next `--dets`.
fn tag_runs(m: &ArgMatches) -> Outcome<Vec<(usize, usize, bool)>> {
    let pos =
        |id: &str| -> Vec<usize> { m.indices_of(id).map(|i| i.collect()).unwrap_or_default() };
    let (dets, scales) = (pos("dets"), pos("scale"));
    // a Count flag carries a default value with an index even when absent
    let flips = if m.value_source("flipped") == Some(ValueSource::CommandLine) {
        pos("flipped")
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(dets.len());
    for (i, &d) in dets.iter().enumerate() {
        let end = dets.get(i + 1).copied().unwrap_or(usize::MAX);
        let inside = |p: &&usize| **p > d && **p < end;
        let mine: Vec<usize> = scales.iter().filter(inside).copied().collect();
        if mine.len() != 1 {
            return Err(Failure::invalid(format!(
                "result file #{} needs exactly one --scale after it, found {}",
                i + 1,
                mine.len()
            )));
        }
        let scale_slot = scales
            .iter()
            .position(|&s| s == mine[0])
            .expect("found above");
        out.push((i, scale_slot, flips.iter().any(|p| inside(&p))));
    }
    Ok(out)
}

fn fuse_scales(ctx: &Context, a: &FuseArgs, m: &ArgMatches) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let runs = tag_runs(m)?
        .into_iter()
        .map(|(d, s, flipped)| {
            Ok(ScaleRun {
                scale: ScaleSpec::new(a.scale[s], a.longer_cap)?,
                detections: read_detections(&a.dets[d], &ds)?,
                flipped,
            })
        })
        .collect::<Outcome<Vec<_>>>()?;
    let cfg = a.suppression.apply(ctx.file.fusion_or_default());
    let fused = fuse_multiscale(&runs, &ds, &cfg)?;
    write_atomic(&a.out, &write_detections(&fused))?;
    println!(
        "fuse-scales: {} runs merged with {:?} into {} detections -> {}",
        runs.len(),
        cfg.method,
        fused.len(),
        a.out.display()
    );
    Ok(())
}

fn ensemble(ctx: &Context, a: &EnsembleArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let sets = a
        .dets
        .iter()
        .map(|p| read_detections(p, &ds))
        .collect::<Outcome<Vec<_>>>()?;
    let cfg = a.suppression.apply(ctx.file.ensemble_or_default());
    let merged = ensemble_models(&sets, &cfg)?;
    write_atomic(&a.out, &write_detections(&merged))?;
    println!(
        "ensemble: {} models merged with {:?} into {} detections -> {}",
        sets.len(),
        cfg.method,
        merged.len(),
        a.out.display()
    );
    Ok(())
}

fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Outcome<()> {
    let ds = read_dataset(&ctx.gt(&a.gt)?)?;
    let set = read_detections(&a.dets, &ds)?;
    let summary = coco_summary(&ds, &set, &EvalConfig::default())?;
    let json = serde_json::to_string(&summary).expect("summary serializes");
    if let Some(out) = &a.out {
        write_atomic(out, format!("{json}\n").as_bytes())?;
    }
    println!("{summary}");
    println!("{json}");
    Ok(())
}
