//! `pac` — batch front-end for the adaptation pipeline.
//!
//! Subcommands mirror the pipeline stages so every intermediate artifact can
//! be produced and inspected: scene generation, per-modality segmentation,
//! fusion, region labeling, loss evaluation, training and IoU evaluation.
//!
//! Exit codes: 0 success, 1 usage/config errors, 2 I/O and decode errors.
//! Machine-readable CSV goes to stdout, human summaries to stderr.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(name = "pac", version, about = "Multimodal objectness-regularized self-training pipeline")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Globals {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed for generation and training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Depth units per raw 16-bit step in depth PNGs.
    #[arg(long, global = true, value_name = "R")]
    depth_scale: Option<f64>,
    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Generic override, repeatable: --set key=value.
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Typed overrides for the most used config keys; everything else is
/// reachable through `--set`.
#[derive(Args)]
struct Overrides {
    /// Target SLIC segment count.
    #[arg(long, global = true, value_name = "N")]
    k_s: Option<usize>,
    /// SLIC spatial-vs-color weight.
    #[arg(long, global = true, value_name = "M")]
    compactness: Option<f64>,
    /// Depth histogram bin count.
    #[arg(long, global = true, value_name = "B")]
    bins: Option<usize>,
    /// Peak prominence threshold.
    #[arg(long, global = true, value_name = "D")]
    delta_peak: Option<f64>,
    /// Region-validity purity threshold.
    #[arg(long, global = true, value_name = "T")]
    tau_p: Option<f64>,
    /// Self-training loss weight.
    #[arg(long, global = true, value_name = "A")]
    alpha_st: Option<f64>,
    /// Objectness regularizer weight.
    #[arg(long, global = true, value_name = "A")]
    alpha_obj: Option<f64>,
    /// Pseudo-label confidence threshold.
    #[arg(long, global = true, value_name = "D")]
    delta: Option<f64>,
    /// Source-only warm-up iterations.
    #[arg(long, global = true, value_name = "N")]
    warmup_iters: Option<usize>,
    /// SGD learning rate.
    #[arg(long, global = true, value_name = "LR")]
    lr: Option<f64>,
    /// Total training iterations.
    #[arg(long, global = true, value_name = "N")]
    t_train: Option<usize>,
    /// Images per domain per step.
    #[arg(long, global = true, value_name = "N")]
    batch: Option<usize>,
    /// Embedding dimension.
    #[arg(long, global = true, value_name = "D")]
    emb_dim: Option<usize>,
    /// Number of semantic classes.
    #[arg(long, global = true, value_name = "C")]
    class_count: Option<usize>,
    /// Scene width in pixels.
    #[arg(long, global = true, value_name = "W")]
    width: Option<usize>,
    /// Scene height in pixels.
    #[arg(long, global = true, value_name = "H")]
    height: Option<usize>,
    /// Objects per generated scene.
    #[arg(long, global = true, value_name = "N")]
    num_objects: Option<usize>,
    /// Source-to-target photometric shift in [0, 1].
    #[arg(long, global = true, value_name = "S")]
    palette_shift: Option<f64>,
    /// Generated source training scenes.
    #[arg(long, global = true, value_name = "N")]
    n_source: Option<usize>,
    /// Generated target training scenes.
    #[arg(long, global = true, value_name = "N")]
    n_target: Option<usize>,
    /// Generated source evaluation scenes.
    #[arg(long, global = true, value_name = "N")]
    n_source_eval: Option<usize>,
    /// Generated target evaluation scenes.
    #[arg(long, global = true, value_name = "N")]
    n_target_eval: Option<usize>,
    /// Region estimation mode: multimodal | pseudo-only.
    #[arg(long, global = true, value_name = "MODE")]
    region_mode: Option<String>,
    /// Contrastive numerator variant: standard | plus.
    #[arg(long, global = true, value_name = "V")]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic source/target scene directories.
    Gen,
    /// Segment one modality (or fuse two segment maps).
    Segment {
        #[command(subcommand)]
        mode: SegmentMode,
    },
    /// Fuse two raw16 segment maps (shorthand for `segment fuse`).
    Fuse(FuseArgs),
    /// Region-labeling CSV from a fused map and pseudo-labels.
    Label(LabelArgs),
    /// Objectness loss of one scene (region pipeline + loss).
    Loss(LossArgs),
    /// Run the adaptation loop on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum SegmentMode {
    /// SLIC superpixels of an RGB image.
    Rgb(SegRgbArgs),
    /// Depth-histogram peak clustering of a depth map.
    Depth(SegDepthArgs),
    /// Intersection of two raw16 segment maps.
    Fuse(FuseArgs),
}

#[derive(Args)]
struct SegRgbArgs {
    /// Input 8-bit RGB PNG.
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    /// Raw16 output (default <out>/<stem>_seg.png).
    #[arg(long, value_name = "PATH")]
    out_raw: Option<PathBuf>,
    /// Colorized output (default <out>/<stem>_seg_color.png).
    #[arg(long, value_name = "PATH")]
    out_color: Option<PathBuf>,
}

#[derive(Args)]
struct SegDepthArgs {
    /// Input 16-bit grayscale depth PNG.
    #[arg(long, value_name = "PATH")]
    depth: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_raw: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    out_color: Option<PathBuf>,
    /// Also dump the depth histogram as bin_center,mass CSV.
    #[arg(long, value_name = "PATH")]
    hist_csv: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// RGB-segment raw16 PNG.
    #[arg(long, value_name = "PATH")]
    rgb_seg: PathBuf,
    /// Depth-segment raw16 PNG.
    #[arg(long, value_name = "PATH")]
    depth_seg: PathBuf,
    #[arg(long, value_name = "PATH")]
    out_raw: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    out_color: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    /// Fused segment map (raw16 PNG).
    #[arg(long, value_name = "PATH")]
    fused: PathBuf,
    /// Pseudo-label map (8-bit PNG, 255 = none).
    #[arg(long, value_name = "PATH")]
    pseudo: PathBuf,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    #[arg(long, value_name = "PATH")]
    depth: PathBuf,
    #[arg(long, value_name = "PATH")]
    pseudo: PathBuf,
    /// Model checkpoint; raw pixel features are used when absent.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Quantized per-pixel loss raster (raw16 PNG) for debugging.
    #[arg(long, value_name = "PATH")]
    loss_raster: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by `pac gen`.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Dataset split subdirectory to evaluate.
    #[arg(long, value_name = "NAME", default_value = "target_eval")]
    split: String,
}

fn apply_overrides(cfg: &mut Config, g: &Globals) -> Result<(), String> {
    if let Some(path) = &g.config {
        cfg.load_file(path)?;
    }
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set {kv}: expected key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let o = &g.overrides;
    macro_rules! put {
        ($field:ident, $key:literal) => {
            if let Some(v) = &o.$field {
                cfg.set($key, &v.to_string())?;
            }
        };
    }
    put!(k_s, "k_s");
    put!(compactness, "compactness");
    put!(bins, "bins");
    put!(delta_peak, "delta_peak");
    put!(tau_p, "tau_p");
    put!(alpha_st, "alpha_st");
    put!(alpha_obj, "alpha_obj");
    put!(delta, "delta");
    put!(warmup_iters, "warmup_iters");
    put!(lr, "lr");
    put!(t_train, "t_train");
    put!(batch, "batch");
    put!(emb_dim, "emb_dim");
    put!(class_count, "class_count");
    put!(width, "width");
    put!(height, "height");
    put!(num_objects, "num_objects");
    put!(palette_shift, "palette_shift");
    put!(n_source, "n_source");
    put!(n_target, "n_target");
    put!(n_source_eval, "n_source_eval");
    put!(n_target_eval, "n_target_eval");
    put!(region_mode, "region_mode");
    put!(variant, "variant");
    if let Some(seed) = g.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(scale) = g.depth_scale {
        cfg.set("depth_scale", &scale.to_string())?;
    }
    Ok(())
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let mut cfg = Config::default();
    if let Err(msg) = apply_overrides(&mut cfg, &cli.globals) {
        eprintln!("pac: {msg}");
        return 1;
    }
    if let Err(msg) = cfg.validate() {
        eprintln!("pac: {msg}");
        return 1;
    }
    let out_dir = cli.globals.out.clone().unwrap_or_else(|| PathBuf::from("."));

    let result = match &cli.cmd {
        Cmd::Gen => commands::gen(&cfg, &out_dir),
        Cmd::Segment { mode } => match mode {
            SegmentMode::Rgb(args) => commands::segment_rgb(&cfg, &out_dir, args),
            SegmentMode::Depth(args) => commands::segment_depth(&cfg, &out_dir, args),
            SegmentMode::Fuse(args) => commands::segment_fuse(&cfg, &out_dir, args),
        },
        Cmd::Fuse(args) => commands::segment_fuse(&cfg, &out_dir, args),
        Cmd::Label(args) => commands::label(&cfg, args),
        Cmd::Loss(args) => commands::loss(&cfg, args),
        Cmd::Train(args) => commands::train(&cfg, &out_dir, args),
        Cmd::Eval(args) => commands::eval(&cfg, args),
    };
    match result {
        Ok(()) => 0,
        // Downstream consumers closing stdout early is not an error.
        Err(pac_core::Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("pac: {e}");
            match e {
                pac_core::Error::InvalidSpec(_) | pac_core::Error::InvalidParams(_) => 1,
                _ => 2,
            }
        }
    }
}
