//! Per-class intersection-over-union aggregated over a whole evaluation set.

use crate::error::{Error, Result};
use crate::raster::{LabelMap, IGNORE_LABEL};

/// Per-class IoU (absent classes are `None` and excluded from the mean).
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Computes IoU from a single confusion matrix over all image pairs.
/// Pixels with ground-truth [`IGNORE_LABEL`] are excluded entirely; a
/// prediction of [`IGNORE_LABEL`] counts as matching no class.
pub fn evaluate_iou(
    pred: &[LabelMap],
    gt: &[LabelMap],
    class_count: usize,
) -> Result<IouReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidParams(format!(
            "{} predictions for {} ground-truth maps",
            pred.len(),
            gt.len()
        )));
    }
    let mut tp = vec![0u64; class_count];
    let mut fp = vec![0u64; class_count];
    let mut fns = vec![0u64; class_count];
    for (p, g) in pred.iter().zip(gt) {
        if p.height() != g.height() || p.width() != g.width() {
            return Err(Error::dims(
                "evaluate_iou",
                (g.height(), g.width()),
                (p.height(), p.width()),
            ));
        }
        g.check_classes(class_count)?;
        p.check_classes(class_count)?;
        for (&pv, &gv) in p.values().iter().zip(g.values()) {
            if gv == IGNORE_LABEL {
                continue;
            }
            if pv == gv {
                tp[usize::from(gv)] += 1;
            } else {
                fns[usize::from(gv)] += 1;
                if pv != IGNORE_LABEL {
                    fp[usize::from(pv)] += 1;
                }
            }
        }
    }
    let mut per_class = Vec::with_capacity(class_count);
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..class_count {
        let denom = tp[c] + fp[c] + fns[c];
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp[c] as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            present += 1;
        }
    }
    let miou = if present > 0 { sum / present as f64 } else { 0.0 };
    Ok(IouReport { per_class, miou })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(h: usize, w: usize, v: Vec<u8>) -> LabelMap {
        LabelMap::new(h, w, v).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = lm(2, 2, vec![0, 1, 2, 2]);
        let report = evaluate_iou(&[gt.clone()], &[gt], 3).unwrap();
        assert_eq!(report.miou, 1.0);
        assert!(report.per_class.iter().all(|c| *c == Some(1.0)));
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = lm(1, 4, vec![0, 0, 0, 0]);
        let pred = lm(1, 4, vec![1, 1, 1, 1]);
        let report = evaluate_iou(&[pred], &[gt], 2).unwrap();
        assert_eq!(report.per_class[0], Some(0.0));
        assert_eq!(report.per_class[1], Some(0.0));
        assert_eq!(report.miou, 0.0);
    }

    #[test]
    fn partial_overlap_by_hand() {
        // Class 1 occupies 100 gt pixels; prediction covers 50 of them plus
        // 50 spurious ones: IoU = 50 / 150.
        let mut gt = vec![0u8; 200];
        let mut pred = vec![0u8; 200];
        for i in 0..100 {
            gt[i] = 1;
        }
        for i in 50..150 {
            pred[i] = 1;
        }
        let report = evaluate_iou(&[lm(10, 20, pred)], &[lm(10, 20, gt)], 2).unwrap();
        let iou1 = report.per_class[1].unwrap();
        assert!((iou1 - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded_from_mean() {
        let gt = lm(1, 2, vec![0, 0]);
        let pred = lm(1, 2, vec![0, 0]);
        let report = evaluate_iou(&[pred], &[gt], 5).unwrap();
        assert_eq!(report.per_class[0], Some(1.0));
        assert!(report.per_class[1..].iter().all(|c| c.is_none()));
        assert_eq!(report.miou, 1.0);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let gt = lm(1, 4, vec![0, IGNORE_LABEL, 1, IGNORE_LABEL]);
        let pred = lm(1, 4, vec![0, 1, 1, 0]);
        let report = evaluate_iou(&[pred], &[gt], 2).unwrap();
        assert_eq!(report.miou, 1.0);
    }

    #[test]
    fn matches_brute_force_confusion_on_random_maps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let c = 4usize;
        for _ in 0..20 {
            let gt_v: Vec<u8> = (0..48)
                .map(|_| if rng.random_bool(0.1) { IGNORE_LABEL } else { rng.random_range(0..c as u8) })
                .collect();
            let pred_v: Vec<u8> = (0..48).map(|_| rng.random_range(0..c as u8)).collect();
            let gt = lm(6, 8, gt_v.clone());
            let pred = lm(6, 8, pred_v.clone());
            let report = evaluate_iou(&[pred], &[gt], c).unwrap();

            // Independent confusion-matrix oracle.
            let mut conf = vec![vec![0u64; c]; c];
            for (&pv, &gv) in pred_v.iter().zip(&gt_v) {
                if gv != IGNORE_LABEL {
                    conf[usize::from(gv)][usize::from(pv)] += 1;
                }
            }
            for cls in 0..c {
                let tp = conf[cls][cls];
                let fn_: u64 = (0..c).map(|j| conf[cls][j]).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|i| conf[i][cls]).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                match report.per_class[cls] {
                    None => assert_eq!(denom, 0),
                    Some(iou) => {
                        assert_eq!(iou, tp as f64 / denom as f64);
                        assert!((0.0..=1.0).contains(&iou));
                    }
                }
            }
        }
    }
}
