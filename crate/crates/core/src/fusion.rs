//! Object-region estimation: intersecting RGB-segments with depth-segments,
//! and deriving region validity + labels from pseudo-labels.
//!
//! A fused region is a non-empty intersection of one RGB-segment and one
//! depth-segment. Pixels with missing depth (depth index 0) belong to no
//! region. A region is *valid* when the most frequent pseudo-label class
//! inside it accounts for at least `tau_p` of its pseudo-labeled pixels.

use std::io::Write;

use crate::error::{Error, Result};
use crate::raster::{compact_monotone, components, PseudoLabelMap, SegmentMap, NO_PSEUDO_LABEL};

/// Intersects the two segmentations; missing-depth pixels stay regionless.
pub fn fuse_segments(rgb_seg: &SegmentMap, depth_seg: &SegmentMap) -> Result<SegmentMap> {
    fuse_segments_opts(rgb_seg, depth_seg, false)
}

/// Like [`fuse_segments`], but `missing_as_region = true` treats the
/// missing-depth pool as one extra depth segment instead of a hole.
pub fn fuse_segments_opts(
    rgb_seg: &SegmentMap,
    depth_seg: &SegmentMap,
    missing_as_region: bool,
) -> Result<SegmentMap> {
    let (h, w) = (rgb_seg.height(), rgb_seg.width());
    if depth_seg.height() != h || depth_seg.width() != w {
        return Err(Error::dims(
            "fuse_segments",
            (h, w),
            (depth_seg.height(), depth_seg.width()),
        ));
    }
    let kd = depth_seg.segment_count() as u64;
    let raw: Vec<u64> = rgb_seg
        .indices()
        .iter()
        .zip(depth_seg.indices())
        .map(|(&ri, &di)| {
            if ri == 0 || (di == 0 && !missing_as_region) {
                0
            } else {
                // Lexicographic (rgb, depth) key, matching a double loop over
                // RGB-segments then depth-segments; empty pairs vanish in
                // compaction.
                (u64::from(ri) - 1) * (kd + 1) + u64::from(di) + 1
            }
        })
        .collect();
    let (data, count) = compact_monotone(&raw);
    Ok(SegmentMap::with_segment_count(h, w, data, count)
        .expect("compacted indices are bounded by construction"))
}

/// Per-region validity, labels and purity derived from pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabeling {
    region_count: usize,
    valid: Vec<bool>,
    label: Vec<Option<u8>>,
    purity: Vec<f64>,
    pixel_count: Vec<usize>,
    pl_pixel_count: Vec<usize>,
}

impl RegionLabeling {
    pub fn region_count(&self) -> usize {
        self.region_count
    }

    /// `region` is a 1-based fused-segment index.
    pub fn is_valid(&self, region: u32) -> bool {
        region >= 1 && self.valid[(region - 1) as usize]
    }

    /// Region label; defined only for valid regions.
    pub fn label_of(&self, region: u32) -> Option<u8> {
        self.label[(region - 1) as usize]
    }

    /// Fraction of pseudo-labeled pixels agreeing with the region label;
    /// 0 for regions without pseudo-labeled pixels.
    pub fn purity_of(&self, region: u32) -> f64 {
        self.purity[(region - 1) as usize]
    }

    pub fn pixel_count_of(&self, region: u32) -> usize {
        self.pixel_count[(region - 1) as usize]
    }

    pub fn pl_pixel_count_of(&self, region: u32) -> usize {
        self.pl_pixel_count[(region - 1) as usize]
    }

    pub fn valid_regions(&self) -> impl Iterator<Item = u32> + '_ {
        (1..=self.region_count as u32).filter(move |&r| self.is_valid(r))
    }

    /// Dumps `region,valid,label,purity,pixels,pl_pixels` rows.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "region,valid,label,purity,pixels,pl_pixels")?;
        for r in 1..=self.region_count as u32 {
            let label = match self.label_of(r) {
                Some(l) => l.to_string(),
                None => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r,
                self.is_valid(r),
                label,
                self.purity_of(r),
                self.pixel_count_of(r),
                self.pl_pixel_count_of(r)
            )?;
        }
        Ok(())
    }
}

/// Majority-votes pseudo-labels inside each fused region and thresholds the
/// vote fraction at `tau_p`.
///
/// Unlabeled pixels carry no one-hot mass: they are excluded from both the
/// purity numerator and denominator, and a region with zero pseudo-labeled
/// pixels is invalid. Argmax ties break to the smallest class index.
pub fn label_regions(
    fused: &SegmentMap,
    pseudo: &PseudoLabelMap,
    class_count: usize,
    tau_p: f64,
) -> Result<RegionLabeling> {
    let (h, w) = (fused.height(), fused.width());
    if pseudo.height() != h || pseudo.width() != w {
        return Err(Error::dims("label_regions", (h, w), (pseudo.height(), pseudo.width())));
    }
    assert!(
        tau_p > 0.0 && tau_p <= 1.0,
        "tau_p = {tau_p} outside (0, 1]"
    );
    let k = fused.segment_count();
    let mut counts = vec![0u32; k * class_count];
    let mut pixel_count = vec![0usize; k];
    for (&region, &pl) in fused.indices().iter().zip(pseudo.values()) {
        if region == 0 {
            continue;
        }
        let r = (region - 1) as usize;
        pixel_count[r] += 1;
        if pl == NO_PSEUDO_LABEL {
            continue;
        }
        if usize::from(pl) >= class_count {
            return Err(Error::InvalidParams(format!(
                "pseudo-label {pl} outside 0..{class_count}"
            )));
        }
        counts[r * class_count + usize::from(pl)] += 1;
    }

    let mut valid = vec![false; k];
    let mut label = vec![None; k];
    let mut purity = vec![0.0; k];
    let mut pl_pixel_count = vec![0usize; k];
    for r in 0..k {
        let slice = &counts[r * class_count..(r + 1) * class_count];
        let total: u32 = slice.iter().sum();
        pl_pixel_count[r] = total as usize;
        if total == 0 {
            continue;
        }
        let (best_class, best_count) = slice
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("class_count >= 1");
        purity[r] = f64::from(*best_count) / f64::from(total);
        if purity[r] >= tau_p {
            valid[r] = true;
            label[r] = Some(best_class as u8);
        }
    }
    Ok(RegionLabeling { region_count: k, valid, label, purity, pixel_count, pl_pixel_count })
}

/// Object regions estimated from pseudo-labels alone: 4-connected components
/// of equal pseudo-label class. Unlabeled pixels stay regionless. This is the
/// single-modality ablation baseline that reuses the model's own predictions
/// as structure.
pub fn regions_from_pseudo_labels(pseudo: &PseudoLabelMap) -> SegmentMap {
    let lifted: Vec<u32> = pseudo
        .values()
        .iter()
        .map(|&v| if v == NO_PSEUDO_LABEL { 0 } else { u32::from(v) + 1 })
        .collect();
    let (comp, sizes, _) = components(&lifted, pseudo.height(), pseudo.width());
    let count = sizes.len() - 1;
    SegmentMap::with_segment_count(pseudo.height(), pseudo.width(), comp, count)
        .expect("component ids are compact by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::SegmentMap;

    fn seg(h: usize, w: usize, v: Vec<u32>) -> SegmentMap {
        SegmentMap::new(h, w, v).unwrap()
    }

    #[test]
    fn identical_partitions_fuse_to_themselves() {
        let a = seg(2, 2, vec![1, 1, 2, 2]);
        let fused = fuse_segments(&a, &a).unwrap();
        assert_eq!(fused.indices(), &[1, 1, 2, 2]);
        assert_eq!(fused.segment_count(), 2);
    }

    #[test]
    fn crossed_halves_make_four_regions() {
        // RGB = left/right halves, depth = top/bottom halves -> 4 quadrant
        // regions of 4 pixels each (brute-force pair enumeration).
        let rgb = seg(4, 4, (0..16).map(|i| 1 + (i % 4 >= 2) as u32).collect());
        let depth = seg(4, 4, (0..16).map(|i| 1 + (i / 4 >= 2) as u32).collect());
        let fused = fuse_segments(&rgb, &depth).unwrap();
        assert_eq!(fused.segment_count(), 4);
        let sizes = fused.segment_sizes();
        assert!(sizes[1..].iter().all(|&s| s == 4));
        // Pixels agree on the fused index iff they agree on both inputs.
        for a in 0..16 {
            for b in 0..16 {
                let same = rgb.indices()[a] == rgb.indices()[b]
                    && depth.indices()[a] == depth.indices()[b];
                assert_eq!(fused.indices()[a] == fused.indices()[b], same);
            }
        }
    }

    #[test]
    fn missing_depth_produces_no_regions() {
        let rgb = seg(2, 2, vec![1, 1, 2, 2]);
        let depth = SegmentMap::with_segment_count(2, 2, vec![0, 0, 0, 0], 0).unwrap();
        let fused = fuse_segments(&rgb, &depth).unwrap();
        assert!(fused.indices().iter().all(|&v| v == 0));
        assert_eq!(fused.segment_count(), 0);
    }

    #[test]
    fn missing_as_region_flag_keeps_missing_pixels() {
        let rgb = seg(2, 2, vec![1, 1, 2, 2]);
        let depth = SegmentMap::with_segment_count(2, 2, vec![0, 1, 0, 1], 1).unwrap();
        let off = fuse_segments_opts(&rgb, &depth, false).unwrap();
        assert_eq!(off.segment_count(), 2);
        assert_eq!(off.indices()[0], 0);
        let on = fuse_segments_opts(&rgb, &depth, true).unwrap();
        assert_eq!(on.segment_count(), 4);
        assert!(on.indices().iter().all(|&v| v != 0));
    }

    #[test]
    fn pure_region_is_valid_with_its_class() {
        let fused = seg(2, 5, vec![1; 10]);
        let pseudo = PseudoLabelMap::new(2, 5, vec![3; 10]).unwrap();
        let lab = label_regions(&fused, &pseudo, 6, 0.9).unwrap();
        assert!(lab.is_valid(1));
        assert_eq!(lab.label_of(1), Some(3));
        assert_eq!(lab.purity_of(1), 1.0);
        assert_eq!(lab.pl_pixel_count_of(1), 10);
    }

    #[test]
    fn purity_thresholding_by_hand() {
        // 9 pixels of class 3, one of class 5: purity 0.9.
        let fused = seg(2, 5, vec![1; 10]);
        let mut pl = vec![3u8; 10];
        pl[7] = 5;
        let pseudo = PseudoLabelMap::new(2, 5, pl).unwrap();
        let at90 = label_regions(&fused, &pseudo, 6, 0.90).unwrap();
        assert!(at90.is_valid(1));
        assert_eq!(at90.label_of(1), Some(3));
        let at95 = label_regions(&fused, &pseudo, 6, 0.95).unwrap();
        assert!(!at95.is_valid(1));
        assert_eq!(at95.label_of(1), None);
    }

    #[test]
    fn region_without_pseudo_labels_is_invalid() {
        let fused = seg(1, 4, vec![1, 1, 2, 2]);
        let pseudo =
            PseudoLabelMap::new(1, 4, vec![0, 0, NO_PSEUDO_LABEL, NO_PSEUDO_LABEL]).unwrap();
        let lab = label_regions(&fused, &pseudo, 4, 0.9).unwrap();
        assert!(lab.is_valid(1));
        assert!(!lab.is_valid(2));
        assert_eq!(lab.purity_of(2), 0.0);
        assert_eq!(lab.pl_pixel_count_of(2), 0);
        assert_eq!(lab.pixel_count_of(2), 2);
    }

    #[test]
    fn argmax_ties_break_to_smallest_class() {
        let fused = seg(1, 4, vec![1, 1, 1, 1]);
        let pseudo = PseudoLabelMap::new(1, 4, vec![2, 2, 1, 1]).unwrap();
        let lab = label_regions(&fused, &pseudo, 4, 0.5).unwrap();
        assert_eq!(lab.label_of(1), Some(1));
    }

    #[test]
    fn validity_is_monotone_in_tau() {
        let fused = seg(1, 10, vec![1; 10]);
        let mut pl = vec![0u8; 10];
        for (i, v) in pl.iter_mut().enumerate() {
            if i % 4 == 0 {
                *v = 1;
            }
        }
        let pseudo = PseudoLabelMap::new(1, 10, pl).unwrap();
        let mut prev_valid = true;
        for tau in [0.5, 0.7, 0.8, 0.9, 0.95] {
            let lab = label_regions(&fused, &pseudo, 4, tau).unwrap();
            let v = lab.is_valid(1);
            assert!(!v || prev_valid, "validity not monotone at tau={tau}");
            prev_valid = v;
        }
    }

    #[test]
    fn pseudo_only_regions_are_class_components() {
        #[rustfmt::skip]
        let pl = vec![
            1, 1, 2,
            255, 1, 2,
            1, 1, 2,
        ];
        let pseudo = PseudoLabelMap::new(3, 3, pl).unwrap();
        let regions = regions_from_pseudo_labels(&pseudo);
        // Components: the 1s connected through the middle, the 2s column;
        // the NONE pixel stays regionless.
        assert_eq!(regions.segment_count(), 2);
        assert_eq!(regions.get(1, 0), 0);
        assert_eq!(regions.get(0, 0), regions.get(2, 1));
        assert_ne!(regions.get(0, 0), regions.get(0, 2));
    }
}
