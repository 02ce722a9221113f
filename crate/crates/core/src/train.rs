//! The desk-scale self-training loop: source cross-entropy, pseudo-label
//! self-training on the target domain, and the objectness regularizer, all
//! optimized jointly with plain SGD and exact analytic gradients.
//!
//! Per step the combined objective is
//! `L = L_cls + alpha_st * L_st + alpha_obj * mean_i L_obj_i`,
//! with both cross-entropy terms normalized per contributing pixel and the
//! objectness term averaged over the target batch. During the warm-up phase
//! both target-side weights are zero, which doubles as seed-model training
//! on the source domain.
//!
//! Pseudo-labels and region labels are recomputed from the current model at
//! every step; the segment maps they are intersected with depend only on the
//! fixed inputs and are cached per target image.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::depth::{depth_segment, DepthSegParams};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse_segments_opts, label_regions, regions_from_pseudo_labels, RegionLabeling,
};
use crate::loss::{
    compute_prototypes, objectness_loss, objectness_loss_grad, EmbeddingMap, ObjLossParams,
};
use crate::metrics::{evaluate_iou, IouReport};
use crate::model::{
    forward_features, scene_features, ProbMap, ToyModel, FEATURE_DIM,
};
use crate::raster::{
    LabelMap, PseudoLabelMap, SceneSample, SegmentMap, IGNORE_LABEL, NO_PSEUDO_LABEL,
};
use crate::slic::{slic_segment, SlicParams};

/// How object regions for the regularizer are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionMode {
    /// SLIC superpixels intersected with depth segments (the full method).
    Multimodal,
    /// Connected components of the pseudo-label map (ablation baseline).
    PseudoOnly,
}

/// Full training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the self-training term.
    pub alpha_st: f64,
    /// Pseudo-label confidence threshold (inclusive).
    pub delta: f64,
    /// Iterations of source-only seed training before the target terms kick in.
    pub warmup_iters: usize,
    /// SGD learning rate.
    pub lr: f64,
    /// Total iterations (including warm-up).
    pub t_train: usize,
    /// Images per domain per step.
    pub batch: usize,
    pub emb_dim: usize,
    pub class_count: usize,
    pub seed: u64,
    pub slic: SlicParams,
    pub depth_seg: DepthSegParams,
    /// Region-validity threshold on pseudo-label purity.
    pub tau_p: f64,
    /// Objectness-loss shape; `obj.alpha_obj` is the regularizer weight.
    pub obj: ObjLossParams,
    pub region_mode: RegionMode,
    /// Treat missing depth as its own depth segment when fusing.
    pub missing_depth_as_region: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha_st: 1.0,
            delta: 0.9,
            warmup_iters: 500,
            lr: 0.5,
            t_train: 3000,
            batch: 2,
            emb_dim: 8,
            class_count: 4,
            seed: 0,
            slic: SlicParams::default(),
            depth_seg: DepthSegParams::default(),
            tau_p: 0.9,
            obj: ObjLossParams::default(),
            region_mode: RegionMode::Multimodal,
            missing_depth_as_region: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParams(format!("delta = {} outside (0, 1]", self.delta)));
        }
        if self.warmup_iters > self.t_train {
            return Err(Error::InvalidParams(format!(
                "warmup_iters = {} exceeds t_train = {}",
                self.warmup_iters, self.t_train
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParams(format!("lr = {} must be > 0", self.lr)));
        }
        if !(self.alpha_st.is_finite() && self.alpha_st >= 0.0) {
            return Err(Error::InvalidParams(format!("alpha_st = {} must be >= 0", self.alpha_st)));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParams("batch must be >= 1".into()));
        }
        if self.emb_dim < 2 {
            return Err(Error::InvalidParams("emb_dim must be >= 2".into()));
        }
        if self.class_count < 2 || self.class_count > 255 {
            return Err(Error::InvalidParams(format!(
                "class_count = {} outside 2..=255",
                self.class_count
            )));
        }
        if !(self.tau_p > 0.0 && self.tau_p <= 1.0) {
            return Err(Error::InvalidParams(format!("tau_p = {} outside (0, 1]", self.tau_p)));
        }
        self.depth_seg.validate()?;
        self.obj.validate()?;
        Ok(())
    }

    pub fn alpha_obj(&self) -> f64 {
        self.obj.alpha_obj
    }
}

/// Mutable training state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ToyModel,
    pub iter: usize,
}

/// Per-iteration record of the loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub loss_cls: f64,
    pub loss_st: f64,
    pub loss_obj: f64,
    /// Summed contributing-pixel count `S` over the target batch.
    pub contributing_pixels: usize,
    /// Mean pseudo-label coverage over the target batch.
    pub pl_coverage: f64,
}

/// Training outcome: per-iteration records plus final evaluation.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub source_eval: IouReport,
    pub target_eval: IouReport,
    /// Wall-clock seconds; excluded from equality since it is not part of
    /// the deterministic output.
    pub wall_secs: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.source_eval == other.source_eval
            && self.target_eval == other.target_eval
    }
}

/// Evaluation splits for the final report.
pub struct EvalSets<'a> {
    pub source: &'a [SceneSample],
    pub target: &'a [SceneSample],
}

/// Mean cross-entropy over labeled pixels.
pub fn source_ce_loss(probs: &ProbMap, labels: &LabelMap) -> Result<f64> {
    if probs.height() != labels.height() || probs.width() != labels.width() {
        return Err(Error::dims(
            "source_ce_loss",
            (probs.height(), probs.width()),
            (labels.height(), labels.width()),
        ));
    }
    labels.check_classes(probs.class_count())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, &y) in labels.values().iter().enumerate() {
        if y == IGNORE_LABEL {
            continue;
        }
        sum -= probs.at(idx)[usize::from(y)].ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoLabeledPixels);
    }
    Ok(sum / n as f64)
}

/// Thresholded argmax predictions; a pixel is labeled iff its maximum
/// probability reaches `delta` (inclusive), ties to the smallest class.
pub fn pseudo_label(probs: &ProbMap, delta: f64) -> PseudoLabelMap {
    assert!(delta > 0.0 && delta <= 1.0, "delta = {delta} outside (0, 1]");
    let n = probs.height() * probs.width();
    let data = (0..n)
        .map(|idx| {
            let (class, p) = probs.argmax(idx);
            if p >= delta {
                class
            } else {
                NO_PSEUDO_LABEL
            }
        })
        .collect();
    PseudoLabelMap::new(probs.height(), probs.width(), data).expect("buffer sized to map")
}

/// Mean cross-entropy against pseudo-labels; 0 when nothing is labeled.
pub fn self_training_loss(probs: &ProbMap, pseudo: &PseudoLabelMap) -> Result<f64> {
    if probs.height() != pseudo.height() || probs.width() != pseudo.width() {
        return Err(Error::dims(
            "self_training_loss",
            (probs.height(), probs.width()),
            (pseudo.height(), pseudo.width()),
        ));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, &y) in pseudo.values().iter().enumerate() {
        if y == NO_PSEUDO_LABEL {
            continue;
        }
        if usize::from(y) >= probs.class_count() {
            return Err(Error::InvalidParams(format!("pseudo-label {y} out of range")));
        }
        sum -= probs.at(idx)[usize::from(y)].ln();
        n += 1;
    }
    Ok(if n > 0 { sum / n as f64 } else { 0.0 })
}

/// One frozen target-side term of the objective: the pseudo-labels, region
/// map and region labeling are treated as constants of the optimization.
pub struct TargetTerm<'a> {
    pub scene: &'a SceneSample,
    pub pseudo: &'a PseudoLabelMap,
    pub fused: &'a SegmentMap,
    pub labeling: &'a RegionLabeling,
}

/// Loss breakdown of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PacLosses {
    pub loss_cls: f64,
    pub loss_st: f64,
    pub loss_obj: f64,
    pub total: f64,
    pub contributing_pixels: usize,
    pub pl_coverage: f64,
}

/// Evaluates the combined objective with frozen target terms.
pub fn pac_objective(
    model: &ToyModel,
    source: &[&SceneSample],
    targets: &[TargetTerm],
    alpha_st: f64,
    alpha_obj: f64,
    obj_params: &ObjLossParams,
) -> Result<PacLosses> {
    objective(model, source, targets, alpha_st, alpha_obj, obj_params, false)
        .map(|(losses, _)| losses)
}

/// Objective plus the exact gradient over all model parameters.
pub fn pac_objective_grad(
    model: &ToyModel,
    source: &[&SceneSample],
    targets: &[TargetTerm],
    alpha_st: f64,
    alpha_obj: f64,
    obj_params: &ObjLossParams,
) -> Result<(PacLosses, ToyModel)> {
    objective(model, source, targets, alpha_st, alpha_obj, obj_params, true)
        .map(|(losses, g)| (losses, g.expect("gradient requested")))
}

fn objective(
    model: &ToyModel,
    source: &[&SceneSample],
    targets: &[TargetTerm],
    alpha_st: f64,
    alpha_obj: f64,
    obj_params: &ObjLossParams,
    want_grad: bool,
) -> Result<(PacLosses, Option<ToyModel>)> {
    let c = model.class_count;
    let d = model.emb_dim;
    let mut grad = want_grad.then(|| ToyModel::zeros(d, c));

    // Source pass: count labeled pixels across the batch first so the
    // per-pixel weights are known, caching the forwards.
    let mut src_cache = Vec::with_capacity(source.len());
    let mut n_src = 0usize;
    let mut cls_sum = 0.0;
    for s in source {
        let labels = s.labels.as_ref().ok_or(Error::NoLabeledPixels)?;
        labels.check_classes(c)?;
        let feats = scene_features(&s.image);
        let (emb, probs) = forward_features(model, &feats, s.height(), s.width());
        for (idx, &y) in labels.values().iter().enumerate() {
            if y != IGNORE_LABEL {
                n_src += 1;
                cls_sum -= probs.at(idx)[usize::from(y)].ln();
            }
        }
        src_cache.push((labels, feats, emb, probs));
    }
    if !source.is_empty() && n_src == 0 {
        return Err(Error::NoLabeledPixels);
    }
    let loss_cls = if n_src > 0 { cls_sum / n_src as f64 } else { 0.0 };

    if let Some(g) = grad.as_mut() {
        for (labels, feats, emb, probs) in &src_cache {
            backprop_ce(
                g,
                model,
                feats,
                emb,
                probs,
                |idx| match labels.values()[idx] {
                    IGNORE_LABEL => None,
                    y => Some(usize::from(y)),
                },
                1.0 / n_src.max(1) as f64,
                None,
                0.0,
            );
        }
    }
    drop(src_cache);

    // Target pass. The self-training weights also need the batch-wide
    // pseudo-label count, so forwards are cached here as well.
    struct TgtCache {
        feats: Vec<f64>,
        emb: EmbeddingMap,
        probs: ProbMap,
        obj_grad: Option<EmbeddingMap>,
    }
    let mut tgt_cache: Vec<TgtCache> = Vec::with_capacity(targets.len());
    let mut n_pl = 0usize;
    let mut st_sum = 0.0;
    let mut obj_sum = 0.0;
    let mut s_total = 0usize;
    let mut coverage_sum = 0.0;
    for t in targets {
        let (h, w) = (t.scene.height(), t.scene.width());
        if t.pseudo.height() != h || t.pseudo.width() != w {
            return Err(Error::dims("target pseudo-labels", (h, w), (t.pseudo.height(), t.pseudo.width())));
        }
        let feats = scene_features(&t.scene.image);
        let (emb, probs) = forward_features(model, &feats, h, w);
        for (idx, &y) in t.pseudo.values().iter().enumerate() {
            if y == NO_PSEUDO_LABEL {
                continue;
            }
            if usize::from(y) >= c {
                return Err(Error::InvalidParams(format!("pseudo-label {y} out of range")));
            }
            n_pl += 1;
            st_sum -= probs.at(idx)[usize::from(y)].ln();
        }
        coverage_sum += t.pseudo.coverage();

        let obj_grad = if alpha_obj != 0.0 {
            if want_grad {
                let res = objectness_loss_grad(&emb, t.fused, t.labeling, obj_params)?;
                obj_sum += res.loss;
                s_total += res.contributing_pixels;
                res.gradient
            } else {
                let protos = compute_prototypes(&emb, t.fused, t.labeling)?;
                let res = objectness_loss(&emb, t.fused, t.labeling, &protos, obj_params)?;
                obj_sum += res.loss;
                s_total += res.contributing_pixels;
                None
            }
        } else {
            None
        };
        tgt_cache.push(TgtCache { feats, emb, probs, obj_grad });
    }
    let loss_st = if n_pl > 0 { st_sum / n_pl as f64 } else { 0.0 };
    let loss_obj = if targets.is_empty() { 0.0 } else { obj_sum / targets.len() as f64 };
    let pl_coverage =
        if targets.is_empty() { 0.0 } else { coverage_sum / targets.len() as f64 };

    if let Some(g) = grad.as_mut() {
        let obj_scale = alpha_obj / targets.len().max(1) as f64;
        for (t, cache) in targets.iter().zip(&tgt_cache) {
            let st_weight = if n_pl > 0 { alpha_st / n_pl as f64 } else { 0.0 };
            backprop_ce(
                g,
                model,
                &cache.feats,
                &cache.emb,
                &cache.probs,
                |idx| match t.pseudo.values()[idx] {
                    NO_PSEUDO_LABEL => None,
                    y => Some(usize::from(y)),
                },
                st_weight,
                cache.obj_grad.as_ref(),
                obj_scale,
            );
        }
    }

    let losses = PacLosses {
        loss_cls,
        loss_st,
        loss_obj,
        total: loss_cls + alpha_st * loss_st + alpha_obj * loss_obj,
        contributing_pixels: s_total,
        pl_coverage,
    };
    Ok((losses, grad))
}

/// Accumulates gradients for one image: cross-entropy on the pixels selected
/// by `target_class` (weight `ce_weight` each) plus an optional extra
/// embedding-space gradient (`dz_extra`, scaled by `dz_scale`).
#[allow(clippy::too_many_arguments)]
fn backprop_ce(
    g: &mut ToyModel,
    model: &ToyModel,
    feats: &[f64],
    emb: &EmbeddingMap,
    probs: &ProbMap,
    target_class: impl Fn(usize) -> Option<usize>,
    ce_weight: f64,
    dz_extra: Option<&EmbeddingMap>,
    dz_scale: f64,
) {
    let d = model.emb_dim;
    let c = model.class_count;
    let n = probs.height() * probs.width();
    let mut dz = vec![0.0f64; d];
    for idx in 0..n {
        for v in dz.iter_mut() {
            *v = 0.0;
        }
        let mut touched = false;
        if ce_weight != 0.0 {
            if let Some(y) = target_class(idx) {
                touched = true;
                let p = probs.at(idx);
                let z = emb.at(idx);
                for cls in 0..c {
                    let glogit = ce_weight * (p[cls] - if cls == y { 1.0 } else { 0.0 });
                    g.psi_bias[cls] += glogit;
                    for j in 0..d {
                        g.psi[j * c + cls] += z[j] * glogit;
                        dz[j] += model.psi[j * c + cls] * glogit;
                    }
                }
            }
        }
        if let Some(extra) = dz_extra {
            let e = extra.at(idx);
            let mut any = false;
            for j in 0..d {
                if e[j] != 0.0 {
                    any = true;
                }
                dz[j] += dz_scale * e[j];
            }
            touched = touched || any;
        }
        if !touched {
            continue;
        }
        let f = &feats[idx * FEATURE_DIM..(idx + 1) * FEATURE_DIM];
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            let row = &mut g.phi[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += fi * dz[j];
            }
        }
        for j in 0..d {
            g.phi_bias[j] += dz[j];
        }
    }
}

/// One target image with its cached model-independent region map.
pub struct PreparedTarget {
    pub scene: SceneSample,
    fused_multimodal: Option<SegmentMap>,
}

/// Runs the model-independent part of the region pipeline once per image.
pub fn prepare_target(cfg: &TrainConfig, scene: SceneSample) -> Result<PreparedTarget> {
    let fused = match cfg.region_mode {
        RegionMode::Multimodal => {
            let rgb_seg = slic_segment(&scene.image, &cfg.slic)?;
            let depth_seg = depth_segment(&scene.depth, &cfg.depth_seg)?;
            Some(fuse_segments_opts(&rgb_seg, &depth_seg, cfg.missing_depth_as_region)?)
        }
        RegionMode::PseudoOnly => None,
    };
    Ok(PreparedTarget { scene, fused_multimodal: fused })
}

impl PreparedTarget {
    pub fn fused_multimodal(&self) -> Option<&SegmentMap> {
        self.fused_multimodal.as_ref()
    }
}

/// One SGD step of the full objective. During warm-up (`iter <
/// warmup_iters`) both target-side weights are zero and the target pipeline
/// is skipped entirely, so the update equals a source-only step.
pub fn pac_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    source_batch: &[&SceneSample],
    target_batch: &[&PreparedTarget],
) -> Result<StepRecord> {
    let warmup = state.iter < cfg.warmup_iters;
    let (alpha_st, alpha_obj) =
        if warmup { (0.0, 0.0) } else { (cfg.alpha_st, cfg.obj.alpha_obj) };

    let mut frozen: Vec<(&SceneSample, PseudoLabelMap, SegmentMap, RegionLabeling)> = Vec::new();
    if !warmup {
        for t in target_batch {
            let (_, probs) = crate::model::forward(&state.model, &t.scene.image);
            let pseudo = pseudo_label(&probs, cfg.delta);
            let fused = match &t.fused_multimodal {
                Some(f) => f.clone(),
                None => regions_from_pseudo_labels(&pseudo),
            };
            let labeling = label_regions(&fused, &pseudo, cfg.class_count, cfg.tau_p)?;
            frozen.push((&t.scene, pseudo, fused, labeling));
        }
    }
    let terms: Vec<TargetTerm> = frozen
        .iter()
        .map(|(scene, pseudo, fused, labeling)| TargetTerm { scene, pseudo, fused, labeling })
        .collect();

    let (losses, grad) =
        pac_objective_grad(&state.model, source_batch, &terms, alpha_st, alpha_obj, &cfg.obj)?;
    state.model.axpy(-cfg.lr, &grad);
    state.iter += 1;
    Ok(StepRecord {
        loss_cls: losses.loss_cls,
        loss_st: losses.loss_st,
        loss_obj: losses.loss_obj,
        contributing_pixels: losses.contributing_pixels,
        pl_coverage: losses.pl_coverage,
    })
}

/// Argmax predictions for one scene.
pub fn predict(model: &ToyModel, scene: &SceneSample) -> LabelMap {
    let (_, probs) = crate::model::forward(model, &scene.image);
    probs.predict_labels()
}

/// Whole-set IoU of the model's argmax predictions.
pub fn eval_model(model: &ToyModel, scenes: &[SceneSample], class_count: usize) -> Result<IouReport> {
    let mut preds = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    for s in scenes {
        let gt = s
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("evaluation scene lacks labels".into()))?;
        preds.push(predict(model, s));
        gts.push(gt.clone());
    }
    evaluate_iou(&preds, &gts, class_count)
}

/// Runs the full adaptation loop: seeded init, source-only warm-up, then
/// regularized self-training, with a final IoU evaluation. Deterministic
/// for a fixed configuration and datasets.
pub fn run_pac_uda(
    cfg: &TrainConfig,
    source: &[SceneSample],
    target: &[SceneSample],
    eval: &EvalSets,
) -> Result<(TrainReport, ToyModel)> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidParams("training sets must be non-empty".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ToyModel::init(cfg.emb_dim, cfg.class_count, &mut rng);
    let mut state = TrainState { model, iter: 0 };

    let prepared: Vec<PreparedTarget> =
        target.iter().map(|s| prepare_target(cfg, s.clone())).collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(cfg.t_train);
    for _ in 0..cfg.t_train {
        let source_batch: Vec<&SceneSample> =
            (0..cfg.batch).map(|_| &source[rng.random_range(0..source.len())]).collect();
        let target_batch: Vec<&PreparedTarget> =
            (0..cfg.batch).map(|_| &prepared[rng.random_range(0..prepared.len())]).collect();
        records.push(pac_step(&mut state, cfg, &source_batch, &target_batch)?);
    }

    let source_eval = eval_model(&state.model, eval.source, cfg.class_count)?;
    let target_eval = eval_model(&state.model, eval.target, cfg.class_count)?;
    let report = TrainReport {
        records,
        source_eval,
        target_eval,
        wall_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, state.model))
}

/// One CSV row per iteration.
pub fn write_report_csv(report: &TrainReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iter,loss_cls,loss_st,loss_obj,s_pixels,pl_coverage")?;
    for (i, r) in report.records.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i, r.loss_cls, r.loss_st, r.loss_obj, r.contributing_pixels, r.pl_coverage
        )?;
    }
    Ok(())
}

fn write_iou_block(name: &str, report: &IouReport, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "[{name}]")?;
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => writeln!(out, "class_{c}_iou = {v}")?,
            None => writeln!(out, "class_{c}_iou = absent")?,
        }
    }
    writeln!(out, "miou = {}", report.miou)
}

/// Deterministic human-readable summary (wall time deliberately omitted so
/// repeated runs produce identical bytes).
pub fn write_summary(report: &TrainReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iterations = {}", report.records.len())?;
    write_iou_block("source_eval", &report.source_eval, &mut out)?;
    write_iou_block("target_eval", &report.target_eval, &mut out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;
    use crate::synth::{generate_scene_pair, SceneSpec};

    fn probmap(h: usize, w: usize, c: usize, data: Vec<f64>) -> ProbMap {
        ProbMap::new(h, w, c, data).unwrap()
    }

    #[test]
    fn ce_closed_forms() {
        // Perfect one-hot prediction.
        let p = probmap(1, 1, 3, vec![0.0, 1.0, 0.0]);
        let l = LabelMap::new(1, 1, vec![1]).unwrap();
        assert_eq!(source_ce_loss(&p, &l).unwrap(), 0.0);

        // Uniform over 4 classes.
        let p = probmap(1, 2, 4, vec![0.25; 8]);
        let l = LabelMap::new(1, 2, vec![0, 3]).unwrap();
        assert!((source_ce_loss(&p, &l).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        // Single pixel at probability one half.
        let p = probmap(1, 1, 2, vec![0.5, 0.5]);
        let l = LabelMap::new(1, 1, vec![0]).unwrap();
        assert!((source_ce_loss(&p, &l).unwrap() - 0.693_147_180_559_945_3).abs() < 1e-12);

        // All pixels ignored.
        let l = LabelMap::new(1, 1, vec![IGNORE_LABEL]).unwrap();
        let p = probmap(1, 1, 2, vec![0.5, 0.5]);
        assert!(matches!(source_ce_loss(&p, &l), Err(Error::NoLabeledPixels)));
    }

    #[test]
    fn pseudo_label_thresholding() {
        let p = probmap(1, 1, 3, vec![0.7, 0.2, 0.1]);
        assert_eq!(pseudo_label(&p, 0.6).values(), &[0]);
        assert_eq!(pseudo_label(&p, 0.8).values(), &[NO_PSEUDO_LABEL]);
        // Exactly at the threshold is inclusive.
        assert_eq!(pseudo_label(&p, 0.7).values(), &[0]);
        // Argmax tie goes to the smallest class.
        let p = probmap(1, 1, 4, vec![0.1, 0.4, 0.4, 0.1]);
        assert_eq!(pseudo_label(&p, 0.3).values(), &[1]);
    }

    #[test]
    fn self_training_loss_cases() {
        let p = probmap(1, 2, 2, vec![0.5, 0.5, 1.0, 0.0]);
        let none = PseudoLabelMap::new(1, 2, vec![NO_PSEUDO_LABEL; 2]).unwrap();
        assert_eq!(self_training_loss(&p, &none).unwrap(), 0.0);
        let one = PseudoLabelMap::new(1, 2, vec![0, NO_PSEUDO_LABEL]).unwrap();
        assert!((self_training_loss(&p, &one).unwrap() - 0.5f64.ln().abs()).abs() < 1e-12);
        let both = PseudoLabelMap::new(1, 2, vec![0, 0]).unwrap();
        // Second pixel has probability 1 -> contributes 0.
        assert!((self_training_loss(&p, &both).unwrap() - 0.5 * 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn coverage_is_monotone_in_delta() {
        let spec = SceneSpec { width: 16, height: 16, seed: 5, ..Default::default() };
        let (_, tgt) = generate_scene_pair(&spec, 0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ToyModel::init(8, 4, &mut rng);
        let (_, probs) = forward(&model, &tgt[0].image);
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let delta = 0.5 + 0.05 * i as f64;
            let cov = pseudo_label(&probs, delta).coverage();
            assert!(cov <= prev + 1e-15, "coverage increased at delta={delta}");
            prev = cov;
        }
    }

    #[test]
    fn st_loss_is_proportional_to_per_image_sum_form() {
        // The per-pixel mean equals the summed form divided by the
        // pseudo-labeled pixel count.
        let p = probmap(1, 4, 2, vec![0.9, 0.1, 0.8, 0.2, 0.6, 0.4, 0.3, 0.7]);
        let pl = PseudoLabelMap::new(1, 4, vec![0, 0, NO_PSEUDO_LABEL, 1]).unwrap();
        let mean = self_training_loss(&p, &pl).unwrap();
        let sum: f64 = -(0.9f64.ln() + 0.8f64.ln() + 0.7f64.ln());
        assert!((mean - sum / 3.0).abs() < 1e-12);
    }

    fn tiny_dataset(seed: u64) -> (Vec<SceneSample>, Vec<SceneSample>) {
        let spec = SceneSpec {
            width: 16,
            height: 16,
            num_objects: 3,
            seed,
            ..Default::default()
        };
        generate_scene_pair(&spec, 4, 4).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            warmup_iters: 2,
            t_train: 6,
            batch: 1,
            lr: 0.5,
            slic: SlicParams { k_s: 6, ..Default::default() },
            depth_seg: DepthSegParams { bins: 32, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn warmup_step_matches_alpha_obj_zero_bitwise() {
        let (src, tgt) = tiny_dataset(3);
        let cfg = tiny_config();
        let mut cfg_zero = cfg.clone();
        cfg_zero.obj.alpha_obj = 0.0;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = ToyModel::init(cfg.emb_dim, cfg.class_count, &mut rng);
        let prepared = prepare_target(&cfg, tgt[0].clone()).unwrap();

        let mut a = TrainState { model: model.clone(), iter: 0 };
        let mut b = TrainState { model, iter: 0 };
        pac_step(&mut a, &cfg, &[&src[0]], &[&prepared]).unwrap();
        pac_step(&mut b, &cfg_zero, &[&src[0]], &[&prepared]).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn zero_weights_reduce_to_source_ce_step() {
        // With alpha_st = alpha_obj = 0 the update must match a pure source
        // cross-entropy gradient step, checked against a central
        // finite-difference oracle on the CE loss.
        let (src, tgt) = tiny_dataset(8);
        let mut cfg = tiny_config();
        cfg.alpha_st = 0.0;
        cfg.obj.alpha_obj = 0.0;
        cfg.warmup_iters = 0;
        cfg.lr = 0.25;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = ToyModel::init(cfg.emb_dim, cfg.class_count, &mut rng);
        let prepared = prepare_target(&cfg, tgt[0].clone()).unwrap();
        let mut state = TrainState { model: model.clone(), iter: 0 };
        pac_step(&mut state, &cfg, &[&src[0]], &[&prepared]).unwrap();

        let eps = 1e-6;
        let ce = |m: &ToyModel| {
            let (_, probs) = forward(m, &src[0].image);
            source_ce_loss(&probs, src[0].labels.as_ref().unwrap()).unwrap()
        };
        for i in 0..model.num_params() {
            let mut plus = model.clone();
            *plus.param_mut(i) += eps;
            let mut minus = model.clone();
            *minus.param_mut(i) -= eps;
            let fd = (ce(&plus) - ce(&minus)) / (2.0 * eps);
            let expected = model.param(i) - cfg.lr * fd;
            assert!(
                (state.model.param(i) - expected).abs() < 1e-6,
                "param {i}: {} vs {}",
                state.model.param(i),
                expected
            );
        }
    }

    #[test]
    fn small_step_decreases_frozen_objective() {
        let (src, tgt) = tiny_dataset(21);
        let mut cfg = tiny_config();
        cfg.warmup_iters = 0;
        cfg.lr = 1e-3;

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ToyModel::init(cfg.emb_dim, cfg.class_count, &mut rng);
        let prepared = prepare_target(&cfg, tgt[0].clone()).unwrap();

        // Freeze the target terms exactly as the step sees them.
        let (_, probs) = forward(&model, &prepared.scene.image);
        let pseudo = pseudo_label(&probs, cfg.delta);
        let fused = prepared.fused_multimodal().unwrap().clone();
        let labeling = label_regions(&fused, &pseudo, cfg.class_count, cfg.tau_p).unwrap();
        let terms = [TargetTerm {
            scene: &prepared.scene,
            pseudo: &pseudo,
            fused: &fused,
            labeling: &labeling,
        }];
        let before = pac_objective(&model, &[&src[0]], &terms, cfg.alpha_st, 1.0, &cfg.obj)
            .unwrap()
            .total;
        let (_, grad) =
            pac_objective_grad(&model, &[&src[0]], &terms, cfg.alpha_st, 1.0, &cfg.obj).unwrap();
        let mut stepped = model.clone();
        stepped.axpy(-cfg.lr, &grad);
        let after = pac_objective(&stepped, &[&src[0]], &terms, cfg.alpha_st, 1.0, &cfg.obj)
            .unwrap()
            .total;
        assert!(after < before, "objective did not decrease: {before} -> {after}");
    }

    #[test]
    fn run_is_deterministic_and_sized() {
        let (src, tgt) = tiny_dataset(13);
        let cfg = tiny_config();
        let eval = EvalSets { source: &src[2..], target: &tgt[2..] };
        let (r1, m1) = run_pac_uda(&cfg, &src[..2], &tgt[..2], &eval).unwrap();
        let (r2, m2) = run_pac_uda(&cfg, &src[..2], &tgt[..2], &eval).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.records.len(), cfg.t_train);
    }

    #[test]
    fn zero_iterations_still_evaluates() {
        let (src, tgt) = tiny_dataset(4);
        let cfg = TrainConfig { t_train: 0, warmup_iters: 0, ..tiny_config() };
        let eval = EvalSets { source: &src[..1], target: &tgt[..1] };
        let (report, _) = run_pac_uda(&cfg, &src, &tgt, &eval).unwrap();
        assert!(report.records.is_empty());
        assert!(report.target_eval.miou >= 0.0);
    }

    #[test]
    fn pseudo_only_mode_trains() {
        let (src, tgt) = tiny_dataset(6);
        let cfg = TrainConfig {
            region_mode: RegionMode::PseudoOnly,
            ..tiny_config()
        };
        let eval = EvalSets { source: &src[..1], target: &tgt[..1] };
        let (report, _) = run_pac_uda(&cfg, &src, &tgt, &eval).unwrap();
        assert_eq!(report.records.len(), cfg.t_train);
    }
}
