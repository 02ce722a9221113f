//! Paired-seed ablation driver: full regularizer vs. alpha_obj = 0 vs.
//! pseudo-label-only regions, on the synthetic shift benchmark.
//!
//! Usage: ablation [seeds] [t_train] [warmup] [shift] [lr] [n_train] [n_eval] [delta]

use pac_core::depth::DepthSegParams;
use pac_core::loss::ObjLossParams;
use pac_core::slic::SlicParams;
use pac_core::synth::{generate_scene_pair, SceneSpec};
use pac_core::train::{run_pac_uda, EvalSets, RegionMode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |i: usize, default: f64| -> f64 {
        args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
    };
    let seeds = get(1, 5.0) as u64;
    let t_train = get(2, 3000.0) as usize;
    let warmup = get(3, 500.0) as usize;
    let shift = get(4, 0.5);
    let lr = get(5, 2.0);
    let n_train = get(6, 200.0) as usize;
    let n_eval = get(7, 50.0) as usize;
    let delta = get(8, 0.9);

    let mut rows = Vec::new();
    for seed in 0..seeds {
        let spec = SceneSpec {
            width: 64,
            height: 64,
            num_objects: 6,
            class_count: 4,
            palette_shift: shift,
            seed: 1000 + seed,
            ..Default::default()
        };
        let (source, target) =
            generate_scene_pair(&spec, n_train + n_eval, n_train + n_eval).unwrap();
        let (src_train, src_eval) = source.split_at(n_train);
        let (tgt_train, tgt_eval) = target.split_at(n_train);
        let eval = EvalSets { source: src_eval, target: tgt_eval };

        let base = TrainConfig {
            alpha_st: 1.0,
            delta,
            warmup_iters: warmup,
            lr,
            t_train,
            batch: 2,
            emb_dim: 8,
            class_count: 4,
            seed,
            slic: SlicParams { k_s: 25, ..Default::default() },
            depth_seg: DepthSegParams { bins: 200, delta_peak: 0.0025 },
            tau_p: 0.9,
            obj: ObjLossParams::default(),
            region_mode: RegionMode::Multimodal,
            missing_depth_as_region: false,
        };
        let ablation = TrainConfig {
            obj: ObjLossParams { alpha_obj: 0.0, ..Default::default() },
            ..base.clone()
        };
        let pl_only = TrainConfig { region_mode: RegionMode::PseudoOnly, ..base.clone() };

        let t0 = std::time::Instant::now();
        let (pac, _) = run_pac_uda(&base, src_train, tgt_train, &eval).unwrap();
        let (off, _) = run_pac_uda(&ablation, src_train, tgt_train, &eval).unwrap();
        let (plo, _) = run_pac_uda(&pl_only, src_train, tgt_train, &eval).unwrap();
        let post: Vec<_> = pac.records.iter().skip(warmup).collect();
        let n = post.len().max(1) as f64;
        let mean_cov = post.iter().map(|r| r.pl_coverage).sum::<f64>() / n;
        let mean_obj = post.iter().map(|r| r.loss_obj).sum::<f64>() / n;
        let mean_s = post.iter().map(|r| r.contributing_pixels as f64).sum::<f64>() / n;
        println!(
            "seed {seed}: pac {:.4} | alpha_obj=0 {:.4} | pl-only {:.4} | src(pac) {:.4} | cov {:.3} obj {:.3} S {:.0} | {:.0}s",
            pac.target_eval.miou,
            off.target_eval.miou,
            plo.target_eval.miou,
            pac.source_eval.miou,
            mean_cov,
            mean_obj,
            mean_s,
            t0.elapsed().as_secs_f64()
        );
        rows.push((pac.target_eval.miou, off.target_eval.miou, plo.target_eval.miou));
    }
    let wins = rows.iter().filter(|(p, o, _)| p > o).count();
    let mean = |f: fn(&(f64, f64, f64)) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    println!(
        "pac wins {wins}/{} | means: pac {:.4} off {:.4} pl-only {:.4}",
        rows.len(),
        mean(|r| r.0),
        mean(|r| r.1),
        mean(|r| r.2)
    );
}
