//! Depth-histogram clustering: histogram construction, topographic
//! peak-prominence detection and nearest-peak pixel assignment.
//!
//! Objects of "things" categories occupy a narrow depth range compared to the
//! whole scene, so they show up as prominent histogram peaks; clustering
//! valid pixels to the nearest peak carves the scene into depth segments.
//! Missing measurements (exact zero) never join a segment.

use std::io::Write;

use crate::error::{Error, Result};
use crate::raster::{compact_monotone, DepthMap, SegmentMap};

/// Parameters of the depth segmenter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSegParams {
    /// Number of histogram bins.
    pub bins: usize,
    /// Prominence threshold on normalized mass.
    pub delta_peak: f64,
}

impl Default for DepthSegParams {
    fn default() -> Self {
        Self { bins: 200, delta_peak: 0.0025 }
    }
}

impl DepthSegParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::InvalidParams(format!("bins = {} must be >= 2", self.bins)));
        }
        if !self.delta_peak.is_finite() || self.delta_peak < 0.0 {
            return Err(Error::InvalidParams(format!(
                "delta_peak = {} must be >= 0",
                self.delta_peak
            )));
        }
        Ok(())
    }
}

/// Normalized histogram of the valid depth values of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHistogram {
    /// `bins + 1` strictly increasing edges spanning the valid depth range.
    edges: Vec<f64>,
    /// Per-bin mass, summing to 1 over valid pixels.
    mass: Vec<f64>,
}

impl DepthHistogram {
    pub fn bin_count(&self) -> usize {
        self.mass.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Dumps `bin_center,mass` rows for debugging.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "bin_center,mass")?;
        for i in 0..self.mass.len() {
            writeln!(out, "{},{}", self.bin_center(i), self.mass[i])?;
        }
        Ok(())
    }
}

/// Histogram peaks selected by prominence, in increasing depth order.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPeaks {
    centers: Vec<f64>,
    prominences: Vec<f64>,
}

impl DepthPeaks {
    pub fn new(centers: Vec<f64>, prominences: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidParams("peak set must be non-empty".into()));
        }
        if centers.len() != prominences.len() {
            return Err(Error::InvalidParams("centers/prominences length mismatch".into()));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("peak centers must be strictly increasing".into()));
        }
        Ok(Self { centers, prominences })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn prominences(&self) -> &[f64] {
        &self.prominences
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Builds an equal-width histogram over the observed valid depth range.
///
/// The top edge is inclusive. A constant depth map degenerates to a zero
/// range; the edges are then widened by machine-epsilon padding so that the
/// single occupied bin keeps mass 1. Missing (zero) pixels are excluded.
pub fn depth_histogram(depth: &DepthMap, bins: usize) -> Result<DepthHistogram> {
    if bins < 2 {
        return Err(Error::InvalidParams(format!("bins = {bins} must be >= 2")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut valid = 0usize;
    for &v in depth.values() {
        if v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(Error::AllDepthMissing);
    }

    // Widen until the edges are strictly increasing; handles both the
    // constant-depth case and ranges below the local float resolution.
    let mut pad = if hi > lo { 0.0 } else { f64::EPSILON * hi.abs().max(1.0) };
    let edges = loop {
        let (elo, ehi) = (lo - pad, hi + pad);
        let edges: Vec<f64> = (0..=bins)
            .map(|i| {
                let t = i as f64 / bins as f64;
                elo * (1.0 - t) + ehi * t
            })
            .collect();
        if edges.windows(2).all(|w| w[0] < w[1]) {
            break edges;
        }
        pad = if pad == 0.0 { f64::EPSILON * hi.abs().max(1.0) } else { pad * 2.0 };
    };

    let (elo, ehi) = (edges[0], edges[bins]);
    let mut mass = vec![0.0; bins];
    let weight = 1.0 / valid as f64;
    for &v in depth.values() {
        if v > 0.0 {
            let t = (v - elo) / (ehi - elo);
            let idx = ((t * bins as f64) as usize).min(bins - 1);
            mass[idx] += weight;
        }
    }
    Ok(DepthHistogram { edges, mass })
}

/// Finds local-maximum bins whose topographic prominence clears `delta_peak`.
///
/// A plateau of equal-mass bins collapses to its leftmost bin. The
/// prominence of a peak is its mass minus the higher of the two path minima,
/// where each path runs toward the nearest strictly higher bin; a path that
/// falls off the histogram end contributes a base of 0. If no peak clears
/// the threshold the single global-maximum bin (leftmost on ties) is
/// returned instead, so the peak set is never empty.
pub fn find_prominent_peaks(hist: &DepthHistogram, delta_peak: f64) -> DepthPeaks {
    let mass = hist.mass();
    let n = mass.len();

    let mut peak_bins = Vec::new();
    let mut i = 0;
    while i < n {
        // Maximal run of equal mass starting at i.
        let mut j = i;
        while j + 1 < n && mass[j + 1] == mass[i] {
            j += 1;
        }
        let left_ok = i == 0 || mass[i - 1] < mass[i];
        let right_ok = j == n - 1 || mass[j + 1] < mass[i];
        if left_ok && right_ok {
            peak_bins.push(i);
        }
        i = j + 1;
    }

    let prominence = |peak: usize| -> f64 {
        let h = mass[peak];
        let mut left = f64::INFINITY;
        let mut stopped = false;
        for k in (0..peak).rev() {
            if mass[k] > h {
                stopped = true;
                break;
            }
            left = left.min(mass[k]);
        }
        if !stopped {
            left = left.min(0.0);
        }
        let mut right = f64::INFINITY;
        let mut stopped = false;
        for k in peak + 1..n {
            if mass[k] > h {
                stopped = true;
                break;
            }
            right = right.min(mass[k]);
        }
        if !stopped {
            right = right.min(0.0);
        }
        h - left.max(right)
    };

    let mut centers = Vec::new();
    let mut proms = Vec::new();
    for &b in &peak_bins {
        let p = prominence(b);
        if p >= delta_peak {
            centers.push(hist.bin_center(b));
            proms.push(p);
        }
    }

    if centers.is_empty() {
        // Leftmost global maximum; its prominence equals its mass under the
        // boundary-base convention.
        let mut best = 0;
        for (k, &m) in mass.iter().enumerate() {
            if m > mass[best] {
                best = k;
            }
        }
        centers.push(hist.bin_center(best));
        proms.push(mass[best]);
    }

    DepthPeaks { centers, prominences: proms }
}

/// Assigns every valid pixel to the nearest peak center (ties go to the
/// lower peak index); missing pixels keep the reserved index 0. Indices are
/// compacted over non-empty segments, preserving depth order.
pub fn cluster_by_peaks(depth: &DepthMap, peaks: &DepthPeaks) -> SegmentMap {
    let centers = peaks.centers();
    let raw: Vec<u64> = depth
        .values()
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                return 0;
            }
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, &c) in centers.iter().enumerate() {
                let d = (v - c).abs();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as u64 + 1
        })
        .collect();
    let (data, count) = compact_monotone(&raw);
    SegmentMap::with_segment_count(depth.height(), depth.width(), data, count)
        .expect("compacted indices are bounded by construction")
}

/// Full depth segmentation: histogram, peak selection, nearest-peak labels.
pub fn depth_segment(depth: &DepthMap, params: &DepthSegParams) -> Result<SegmentMap> {
    params.validate()?;
    let hist = depth_histogram(depth, params.bins)?;
    let peaks = find_prominent_peaks(&hist, params.delta_peak);
    Ok(cluster_by_peaks(depth, &peaks))
}
