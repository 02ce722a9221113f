//! Raster types shared by the whole pipeline: RGB images, depth maps,
//! (pseudo-)label maps, segment maps and the scene sample bundling them.
//!
//! Conventions:
//! - all rasters are row-major, `index = y * width + x`;
//! - depth value `0.0` means *missing* and is excluded from all statistics;
//! - label value `255` is the ignore/none sentinel;
//! - segment index `0` is reserved for "no segment".

use crate::error::{Error, Result};

/// Sentinel for unlabeled pixels in a [`LabelMap`].
pub const IGNORE_LABEL: u8 = 255;

/// Sentinel for pixels without a pseudo-label (the all-zero one-hot row).
pub const NO_PSEUDO_LABEL: u8 = 255;

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "rgb buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        for px in &data {
            for &c in px {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidParams(format!(
                        "rgb channel {c} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { height, width, data })
    }

    /// Constant-color image.
    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![color; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

/// Per-pixel depth in arbitrary linear units; `0.0` marks missing measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "depth buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        for &v in &data {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("depth value {v} is not a non-negative real")));
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_missing(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == 0.0
    }

    /// Number of pixels carrying a valid (non-zero) measurement.
    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Ground-truth class indices in `{0..C-1}` with [`IGNORE_LABEL`] holes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "label buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Errors if any non-sentinel value is `>= class_count`.
    pub fn check_classes(&self, class_count: usize) -> Result<()> {
        for &v in &self.data {
            if v != IGNORE_LABEL && usize::from(v) >= class_count {
                return Err(Error::InvalidParams(format!(
                    "label {v} outside 0..{class_count}"
                )));
            }
        }
        Ok(())
    }
}

/// Thresholded model predictions; [`NO_PSEUDO_LABEL`] encodes the all-zero
/// one-hot row of an unconfident pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl PseudoLabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "pseudo-label buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Fraction of pixels carrying a pseudo-label.
    pub fn coverage(&self) -> f64 {
        let labeled = self.data.iter().filter(|&&v| v != NO_PSEUDO_LABEL).count();
        labeled as f64 / self.data.len() as f64
    }

    /// Nearest-neighbor resampling, used to bring pseudo-labels to the
    /// embedding resolution alongside the segment maps.
    pub fn downsample(&self, new_h: usize, new_w: usize) -> Result<Self> {
        let coords = downsample_coords(self.height, self.width, new_h, new_w)?;
        let data = coords
            .iter()
            .map(|&(sy, sx)| self.data[sy * self.width + sx])
            .collect();
        PseudoLabelMap::new(new_h, new_w, data)
    }
}

/// Per-pixel segment indices in `{0..K}` where `0` means "no segment".
///
/// `segment_count` is the number of real segments `K`. Maps produced by the
/// segmentation operations are *compact*: every index in `{1..K}` occurs.
/// [`SegmentMap::with_segment_count`] additionally admits sparse maps, which
/// arise when a labeling computed at full resolution is paired with a reduced
/// resolution view of the same regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
    segment_count: usize,
}

impl SegmentMap {
    /// Builds a compact map; `K` is inferred as the maximum index and every
    /// index in `{1..K}` must occur.
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "segment buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        let max = data.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &v in &data {
            seen[v as usize] = true;
        }
        if let Some(missing) = (1..=max).find(|&i| !seen[i]) {
            return Err(Error::InvalidParams(format!(
                "segment map not compact: index {missing} absent but {max} present"
            )));
        }
        Ok(Self { height, width, data, segment_count: max })
    }

    /// Builds a compact map from arbitrary raw indices by monotonically
    /// renumbering the distinct non-zero values to `1..=K` (zero stays the
    /// reserved no-segment index).
    pub fn from_raw_indices(height: usize, width: usize, raw: &[u32]) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "segment buffer has {} pixels, expected {}",
                raw.len(),
                height * width
            )));
        }
        let raw64: Vec<u64> = raw.iter().map(|&v| u64::from(v)).collect();
        let (data, segment_count) = compact_monotone(&raw64);
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        Ok(Self { height, width, data, segment_count })
    }

    /// Builds a map whose indices must only satisfy `index <= segment_count`;
    /// indices are allowed to be absent.
    pub fn with_segment_count(
        height: usize,
        width: usize,
        data: Vec<u32>,
        segment_count: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width {
            return Err(Error::InvalidSize(format!(
                "segment buffer has {} pixels, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v as usize > segment_count) {
            return Err(Error::InvalidParams(format!(
                "segment index {bad} exceeds segment count {segment_count}"
            )));
        }
        Ok(Self { height, width, data, segment_count })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn indices(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    /// Pixel count per segment index (slot 0 counts unassigned pixels).
    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.segment_count + 1];
        for &v in &self.data {
            sizes[v as usize] += 1;
        }
        sizes
    }
}

/// 4-connected components of equal non-zero label, numbered 1.. in row-major
/// scan order of their first pixel; label-0 pixels stay 0. Returns the
/// component id per pixel, sizes indexed by id, and pixel lists indexed by id.
pub(crate) fn components(
    labels: &[u32],
    h: usize,
    w: usize,
) -> (Vec<u32>, Vec<usize>, Vec<Vec<usize>>) {
    let mut comp = vec![0u32; labels.len()];
    let mut sizes = vec![0usize];
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new()];
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if labels[start] == 0 || comp[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        sizes.push(0);
        pixels.push(Vec::new());
        stack.push(start);
        comp[start] = id;
        while let Some(idx) = stack.pop() {
            sizes[id as usize] += 1;
            pixels[id as usize].push(idx);
            let (py, px) = (idx / w, idx % w);
            let mut visit = |n: usize| {
                if comp[n] == 0 && labels[n] == labels[idx] {
                    comp[n] = id;
                    stack.push(n);
                }
            };
            if py > 0 {
                visit(idx - w);
            }
            if py + 1 < h {
                visit(idx + w);
            }
            if px > 0 {
                visit(idx - 1);
            }
            if px + 1 < w {
                visit(idx + 1);
            }
        }
    }
    (comp, sizes, pixels)
}

/// Relabels arbitrary non-zero keys to `1..=K` preserving key order;
/// key `0` stays `0`. Returns the relabeled buffer and `K`.
pub(crate) fn compact_monotone(raw: &[u64]) -> (Vec<u32>, usize) {
    let mut distinct: Vec<u64> = raw.iter().copied().filter(|&v| v != 0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let data = raw
        .iter()
        .map(|&v| {
            if v == 0 {
                0
            } else {
                distinct.binary_search(&v).unwrap() as u32 + 1
            }
        })
        .collect();
    (data, distinct.len())
}

fn downsample_coords(
    h: usize,
    w: usize,
    new_h: usize,
    new_w: usize,
) -> Result<Vec<(usize, usize)>> {
    if new_h == 0 || new_w == 0 || new_h > h || new_w > w {
        return Err(Error::InvalidSize(format!(
            "cannot downsample {h}x{w} to {new_h}x{new_w}"
        )));
    }
    let mut coords = Vec::with_capacity(new_h * new_w);
    for y in 0..new_h {
        // Sample the input pixel containing the output pixel's center.
        let sy = (((y as f64 + 0.5) * h as f64 / new_h as f64) as usize).min(h - 1);
        for x in 0..new_w {
            let sx = (((x as f64 + 0.5) * w as f64 / new_w as f64) as usize).min(w - 1);
            coords.push((sy, sx));
        }
    }
    Ok(coords)
}

/// Nearest-neighbor downsampling of segment indices. No index is invented and
/// segments that lose all pixels are dropped, re-compacting the survivors in
/// ascending original order.
pub fn downsample_segments(seg: &SegmentMap, new_h: usize, new_w: usize) -> Result<SegmentMap> {
    let coords = downsample_coords(seg.height, seg.width, new_h, new_w)?;
    let raw: Vec<u64> = coords
        .iter()
        .map(|&(sy, sx)| seg.data[sy * seg.width + sx] as u64)
        .collect();
    let (data, count) = compact_monotone(&raw);
    Ok(SegmentMap { height: new_h, width: new_w, data, segment_count: count })
}

/// One RGB-D training sample: image, registered depth, optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub labels: Option<LabelMap>,
}

impl SceneSample {
    pub fn new(image: RgbImage, depth: DepthMap, labels: Option<LabelMap>) -> Result<Self> {
        let (h, w) = (image.height(), image.width());
        if depth.height() != h || depth.width() != w {
            return Err(Error::dims("scene depth", (h, w), (depth.height(), depth.width())));
        }
        if let Some(l) = &labels {
            if l.height() != h || l.width() != w {
                return Err(Error::dims("scene labels", (h, w), (l.height(), l.width())));
            }
        }
        Ok(Self { image, depth, labels })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}
