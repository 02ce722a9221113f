//! Subcommand implementations. Every command is deterministic for fixed
//! inputs, config and seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pac_core::depth::{depth_histogram, depth_segment};
use pac_core::error::{Error, Result};
use pac_core::fusion::{fuse_segments_opts, label_regions, regions_from_pseudo_labels};
use pac_core::io::{
    load_depth, load_pseudo_labels, load_rgb, load_scene, load_segment_map, save_depth,
    save_labels, save_quantized_raster, save_rgb, save_segment_map, SegmentMapMode,
};
use pac_core::loss::{compute_prototypes, objectness_loss, EmbeddingMap};
use pac_core::model::{forward, scene_features, ToyModel, FEATURE_DIM};
use pac_core::raster::{SceneSample, SegmentMap};
use pac_core::slic::slic_segment;
use pac_core::synth::generate_scene_pair;
use pac_core::train::{
    eval_model, run_pac_uda, write_report_csv, write_summary, EvalSets, RegionMode,
};

use crate::config::Config;
use crate::{EvalArgs, FuseArgs, LabelArgs, LossArgs, SegDepthArgs, SegRgbArgs, TrainArgs};

fn write_scene(dir: &Path, idx: usize, scene: &SceneSample, depth_scale: f64) -> Result<()> {
    save_rgb(&scene.image, dir.join(format!("rgb_{idx:04}.png")))?;
    save_depth(&scene.depth, dir.join(format!("depth_{idx:04}.png")), depth_scale)?;
    if let Some(labels) = &scene.labels {
        save_labels(labels, dir.join(format!("labels_{idx:04}.png")))?;
    }
    Ok(())
}

fn write_split(dir: &Path, scenes: &[SceneSample], depth_scale: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in scenes.iter().enumerate() {
        write_scene(dir, i, s, depth_scale)?;
    }
    Ok(())
}

/// Loads every `rgb_*.png` scene of a split directory in name order.
fn load_split(dir: &Path, depth_scale: f64) -> Result<Vec<SceneSample>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("rgb_") && n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidParams(format!("no rgb_*.png scenes in {}", dir.display())));
    }
    let mut scenes = Vec::with_capacity(names.len());
    for name in names {
        let stem = name.trim_start_matches("rgb_").trim_end_matches(".png");
        let depth = dir.join(format!("depth_{stem}.png"));
        let labels = dir.join(format!("labels_{stem}.png"));
        let label_path = labels.exists().then_some(labels);
        scenes.push(load_scene(
            dir.join(&name),
            depth,
            label_path.as_deref(),
            depth_scale,
        )?);
    }
    Ok(scenes)
}

pub fn gen(cfg: &Config, out: &Path) -> Result<()> {
    let (source, target) = generate_scene_pair(
        &cfg.scene,
        cfg.n_source + cfg.n_source_eval,
        cfg.n_target + cfg.n_target_eval,
    )?;
    write_split(&out.join("source_train"), &source[..cfg.n_source], cfg.depth_scale)?;
    write_split(&out.join("source_eval"), &source[cfg.n_source..], cfg.depth_scale)?;
    write_split(&out.join("target_train"), &target[..cfg.n_target], cfg.depth_scale)?;
    write_split(&out.join("target_eval"), &target[cfg.n_target..], cfg.depth_scale)?;
    eprintln!(
        "generated {}+{} source and {}+{} target scenes under {}",
        cfg.n_source,
        cfg.n_source_eval,
        cfg.n_target,
        cfg.n_target_eval,
        out.display()
    );
    Ok(())
}

fn seg_outputs(
    input: &Path,
    out_dir: &Path,
    out_raw: &Option<PathBuf>,
    out_color: &Option<PathBuf>,
) -> (PathBuf, PathBuf) {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    let raw = out_raw.clone().unwrap_or_else(|| out_dir.join(format!("{stem}_seg.png")));
    let color =
        out_color.clone().unwrap_or_else(|| out_dir.join(format!("{stem}_seg_color.png")));
    (raw, color)
}

fn save_both(seg: &SegmentMap, raw: &Path, color: &Path) -> Result<()> {
    if let Some(parent) = raw.parent() {
        fs::create_dir_all(parent)?;
    }
    if let Some(parent) = color.parent() {
        fs::create_dir_all(parent)?;
    }
    save_segment_map(seg, raw, SegmentMapMode::Raw16)?;
    save_segment_map(seg, color, SegmentMapMode::Colorized)?;
    Ok(())
}

pub fn segment_rgb(cfg: &Config, out_dir: &Path, args: &SegRgbArgs) -> Result<()> {
    let image = load_rgb(&args.image)?;
    let seg = slic_segment(&image, cfg.slic())?;
    let (raw, color) = seg_outputs(&args.image, out_dir, &args.out_raw, &args.out_color);
    save_both(&seg, &raw, &color)?;
    eprintln!("{}: {} segments -> {}", args.image.display(), seg.segment_count(), raw.display());
    Ok(())
}

pub fn segment_depth(cfg: &Config, out_dir: &Path, args: &SegDepthArgs) -> Result<()> {
    let depth = load_depth(&args.depth, cfg.depth_scale)?;
    if let Some(csv) = &args.hist_csv {
        let hist = depth_histogram(&depth, cfg.depth_seg().bins)?;
        let mut f = fs::File::create(csv)?;
        hist.write_csv(&mut f)?;
    }
    let seg = depth_segment(&depth, cfg.depth_seg())?;
    let (raw, color) = seg_outputs(&args.depth, out_dir, &args.out_raw, &args.out_color);
    save_both(&seg, &raw, &color)?;
    eprintln!("{}: {} segments -> {}", args.depth.display(), seg.segment_count(), raw.display());
    Ok(())
}

pub fn segment_fuse(cfg: &Config, out_dir: &Path, args: &FuseArgs) -> Result<()> {
    let rgb_seg = load_segment_map(&args.rgb_seg)?;
    let depth_seg = load_segment_map(&args.depth_seg)?;
    let fused = fuse_segments_opts(&rgb_seg, &depth_seg, cfg.train.missing_depth_as_region)?;
    let (raw, color) = seg_outputs(&args.rgb_seg, out_dir, &args.out_raw, &args.out_color);
    save_both(&fused, &raw, &color)?;
    eprintln!("fused {} regions -> {}", fused.segment_count(), raw.display());
    Ok(())
}

pub fn label(cfg: &Config, args: &LabelArgs) -> Result<()> {
    let fused = load_segment_map(&args.fused)?;
    let pseudo = load_pseudo_labels(&args.pseudo)?;
    let labeling = label_regions(&fused, &pseudo, cfg.train.class_count, cfg.train.tau_p)?;
    let stdout = std::io::stdout();
    labeling.write_csv(stdout.lock())?;
    Ok(())
}

pub fn loss(cfg: &Config, args: &LossArgs) -> Result<()> {
    let scene = load_scene(&args.image, &args.depth, None, cfg.depth_scale)?;
    let pseudo = load_pseudo_labels(&args.pseudo)?;
    if pseudo.height() != scene.height() || pseudo.width() != scene.width() {
        return Err(Error::DimensionMismatch {
            what: "pseudo-labels",
            expected_h: scene.height(),
            expected_w: scene.width(),
            got_h: pseudo.height(),
            got_w: pseudo.width(),
        });
    }

    let fused = match cfg.train.region_mode {
        RegionMode::Multimodal => {
            let rgb_seg = slic_segment(&scene.image, cfg.slic())?;
            let depth_seg = depth_segment(&scene.depth, cfg.depth_seg())?;
            fuse_segments_opts(&rgb_seg, &depth_seg, cfg.train.missing_depth_as_region)?
        }
        RegionMode::PseudoOnly => regions_from_pseudo_labels(&pseudo),
    };
    let labeling = label_regions(&fused, &pseudo, cfg.train.class_count, cfg.train.tau_p)?;

    let emb = match &args.checkpoint {
        Some(path) => {
            let model = ToyModel::load(path)?;
            forward(&model, &scene.image).0
        }
        None => {
            let feats = scene_features(&scene.image);
            EmbeddingMap::new(scene.height(), scene.width(), FEATURE_DIM, feats)?
        }
    };
    let protos = compute_prototypes(&emb, &fused, &labeling)?;
    let result = objectness_loss(&emb, &fused, &labeling, &protos, cfg.obj())?;

    if let Some(raster) = &args.loss_raster {
        let values = result.per_pixel_loss.as_ref().expect("loss path computes the raster");
        save_quantized_raster(values, scene.height(), scene.width(), raster)?;
    }

    let valid = labeling.valid_regions().count();
    let mut out = std::io::stdout().lock();
    writeln!(out, "loss,s,regions,valid_regions,pl_coverage")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        result.loss,
        result.contributing_pixels,
        labeling.region_count(),
        valid,
        pseudo.coverage()
    )?;
    Ok(())
}

pub fn train(cfg: &Config, out: &Path, args: &TrainArgs) -> Result<()> {
    let source = load_split(&args.data.join("source_train"), cfg.depth_scale)?;
    let target = load_split(&args.data.join("target_train"), cfg.depth_scale)?;
    let eval_source = load_split(&args.data.join("source_eval"), cfg.depth_scale)?;
    let eval_target = load_split(&args.data.join("target_eval"), cfg.depth_scale)?;
    let eval = EvalSets { source: &eval_source, target: &eval_target };

    let (report, model) = run_pac_uda(&cfg.train, &source, &target, &eval)?;

    fs::create_dir_all(out)?;
    let csv_path = out.join("report.csv");
    write_report_csv(&report, fs::File::create(&csv_path)?)?;
    let summary_path = out.join("summary.txt");
    write_summary(&report, fs::File::create(&summary_path)?)?;
    let ckpt_path = out.join("model.pacm");
    model.save(&ckpt_path)?;

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "metric,value")?;
    writeln!(stdout, "miou_source,{}", report.source_eval.miou)?;
    writeln!(stdout, "miou_target,{}", report.target_eval.miou)?;
    eprintln!(
        "trained {} iterations in {:.1}s; report {}, checkpoint {}",
        report.records.len(),
        report.wall_secs,
        csv_path.display(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn eval(cfg: &Config, args: &EvalArgs) -> Result<()> {
    let model = ToyModel::load(&args.checkpoint)?;
    let scenes = load_split(&args.data.join(&args.split), cfg.depth_scale)?;
    let report = eval_model(&model, &scenes, cfg.train.class_count)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "class,iou")?;
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => writeln!(out, "{c},{v}")?,
            None => writeln!(out, "{c},")?,
        }
    }
    writeln!(out, "miou,{}", report.miou)?;
    Ok(())
}
