//! Finite-difference validation of the objectness-loss gradients across all
//! loss variants, including the reduced-resolution path where region maps
//! are downsampled to the embedding resolution.

use pac_core::fusion::{label_regions, RegionLabeling};
use pac_core::loss::{
    compute_prototypes, objectness_loss, objectness_loss_grad, EmbeddingMap, ObjLossParams,
    ObjLossVariant,
};
use pac_core::raster::{downsample_segments, PseudoLabelMap, SegmentMap, NO_PSEUDO_LABEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

/// Random geometry: an `h x w` map carved into `regions` blobs by nearest
/// random anchors, plus pseudo-labels drawing each region mostly from one of
/// `labels` classes (with some NONE holes).
fn random_setup(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    regions: usize,
    labels: usize,
) -> (SegmentMap, PseudoLabelMap) {
    let anchors: Vec<(f64, f64)> = (0..regions)
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
        .collect();
    let data: Vec<u32> = (0..h * w)
        .map(|idx| {
            let (y, x) = ((idx / w) as f64, (idx % w) as f64);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &(ay, ax)) in anchors.iter().enumerate() {
                let d = (y - ay).powi(2) + (x - ax).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as u32 + 1
        })
        .collect();
    // Not every anchor necessarily wins pixels; compact through the strict
    // constructor path by renumbering.
    let mut relabel = vec![0u32; regions + 1];
    let mut next = 0u32;
    let compact: Vec<u32> = data
        .iter()
        .map(|&v| {
            if relabel[v as usize] == 0 {
                next += 1;
                relabel[v as usize] = next;
            }
            relabel[v as usize]
        })
        .collect();
    let seg = SegmentMap::with_segment_count(h, w, compact, next as usize).unwrap();

    let region_class: Vec<u8> =
        (0..next).map(|_| rng.random_range(0..labels as u8)).collect();
    let pl: Vec<u8> = seg
        .indices()
        .iter()
        .map(|&r| {
            if rng.random_bool(0.15) {
                NO_PSEUDO_LABEL
            } else if rng.random_bool(0.05) {
                rng.random_range(0..labels as u8)
            } else {
                region_class[(r - 1) as usize]
            }
        })
        .collect();
    (seg, PseudoLabelMap::new(h, w, pl).unwrap())
}

fn random_embedding(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> EmbeddingMap {
    let data: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-1.5..1.5)).collect();
    EmbeddingMap::new(h, w, d, data).unwrap()
}

fn loss_value(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
    params: &ObjLossParams,
    frozen_protos: Option<&pac_core::loss::PrototypeSet>,
) -> f64 {
    let protos = match frozen_protos {
        Some(p) => p.clone(),
        None => compute_prototypes(emb, fused, labeling).unwrap(),
    };
    objectness_loss(emb, fused, labeling, &protos, params).unwrap().loss
}

fn check_gradient(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
    params: &ObjLossParams,
) -> f64 {
    let res = objectness_loss_grad(emb, fused, labeling, params).unwrap();
    let grad = res.gradient.expect("gradient requested");
    let frozen = params
        .stop_prototype_grad
        .then(|| compute_prototypes(emb, fused, labeling).unwrap());

    let mut max_rel = 0.0f64;
    let n = emb.height() * emb.width() * emb.dim();
    for i in 0..n {
        let mut plus = emb.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = emb.clone();
        minus.data_mut()[i] -= EPS;
        let fd = (loss_value(&plus, fused, labeling, params, frozen.as_ref())
            - loss_value(&minus, fused, labeling, params, frozen.as_ref()))
            / (2.0 * EPS);
        let an = grad.data()[i];
        let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    max_rel
}

#[test]
fn gradient_matches_finite_differences_for_all_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cases = [
        ObjLossParams::default(),
        ObjLossParams { variant: ObjLossVariant::Plus, ..Default::default() },
        ObjLossParams { include_positive_in_denominator: true, ..Default::default() },
        ObjLossParams {
            variant: ObjLossVariant::Plus,
            include_positive_in_denominator: true,
            temperature: 0.5,
            ..Default::default()
        },
        ObjLossParams { temperature: 2.0, ..Default::default() },
        ObjLossParams { stop_prototype_grad: true, ..Default::default() },
    ];
    for (ci, params) in cases.iter().enumerate() {
        let (fused, pseudo) = random_setup(&mut rng, 5, 5, 4, 2);
        let labeling = label_regions(&fused, &pseudo, 4, 0.6).unwrap();
        let emb = random_embedding(&mut rng, 5, 5, 3);
        if compute_prototypes(&emb, &fused, &labeling).unwrap().is_empty() {
            continue;
        }
        let max_rel = check_gradient(&emb, &fused, &labeling, params);
        assert!(max_rel <= 1e-4, "case {ci}: max relative error {max_rel}");
    }
}

#[test]
fn gradient_matches_finite_differences_at_reduced_resolution() {
    // Region maps and pseudo-labels are downsampled to the embedding
    // resolution before labeling, prototypes and loss are computed.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (fused_full, pseudo_full) = random_setup(&mut rng, 64, 64, 6, 3);
    let fused = downsample_segments(&fused_full, 32, 32).unwrap();
    let pseudo = pseudo_full.downsample(32, 32).unwrap();
    let labeling = label_regions(&fused, &pseudo, 4, 0.6).unwrap();
    let emb = random_embedding(&mut rng, 32, 32, 4);

    let res = objectness_loss_grad(&emb, &fused, &labeling, &ObjLossParams::default()).unwrap();
    assert!(res.contributing_pixels > 0, "degenerate fixture");
    let grad = res.gradient.unwrap();

    // Spot-check a deterministic subset of coordinates; the full map is
    // covered by the acceptance suite at smaller sizes.
    let n = 32 * 32 * 4;
    let mut max_rel = 0.0f64;
    for i in (0..n).step_by(97) {
        let mut plus = emb.clone();
        plus.data_mut()[i] += EPS;
        let mut minus = emb.clone();
        minus.data_mut()[i] -= EPS;
        let fd = (loss_value(&plus, &fused, &labeling, &ObjLossParams::default(), None)
            - loss_value(&minus, &fused, &labeling, &ObjLossParams::default(), None))
            / (2.0 * EPS);
        let an = grad.data()[i];
        let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    assert!(max_rel <= 1e-4, "max relative error {max_rel}");
}

#[test]
fn zero_contribution_configuration_has_zero_gradient() {
    // All regions share one label: no negatives anywhere.
    let fused = SegmentMap::new(2, 2, vec![1, 1, 2, 2]).unwrap();
    let pseudo = PseudoLabelMap::new(2, 2, vec![1, 1, 1, 1]).unwrap();
    let labeling = label_regions(&fused, &pseudo, 3, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let emb = random_embedding(&mut rng, 2, 2, 3);
    let res = objectness_loss_grad(&emb, &fused, &labeling, &ObjLossParams::default()).unwrap();
    assert_eq!(res.contributing_pixels, 0);
    assert_eq!(res.loss, 0.0);
    assert!(res.gradient.unwrap().data().iter().all(|&v| v == 0.0));
}
