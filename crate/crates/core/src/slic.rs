//! SLIC superpixels: localized k-means over CIELAB + pixel coordinates.
//!
//! The distance between a pixel and a cluster center is
//! `sqrt(d_lab^2 + (compactness / S)^2 * d_xy^2)` with `S = sqrt(H*W / k_s)`.
//! Centers start on a regular grid, are nudged to the lowest-gradient pixel
//! of their 3x3 neighborhood, and are iterated within 2S x 2S windows until
//! they stop moving. A connectivity pass then splits stray fragments and
//! merges the ones below `min_segment_frac * H * W / k_s` pixels into their
//! largest 4-adjacent neighbor.

use crate::color::srgb_to_lab;
use crate::error::{Error, Result};
use crate::raster::{components, RgbImage, SegmentMap};

/// Superpixel clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    /// Target number of segments.
    pub k_s: usize,
    /// Spatial-vs-color weight `m`; larger values give more compact segments.
    pub compactness: f64,
    /// Maximum k-means iterations.
    pub max_iters: usize,
    /// Fraction of the average segment size below which fragments are merged.
    pub min_segment_frac: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self { k_s: 25, compactness: 10.0, max_iters: 10, min_segment_frac: 0.25 }
    }
}

impl SlicParams {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.k_s < 1 || self.k_s > height * width {
            return Err(Error::InvalidParams(format!(
                "k_s = {} outside 1..={}",
                self.k_s,
                height * width
            )));
        }
        if !(self.compactness.is_finite() && self.compactness > 0.0) {
            return Err(Error::InvalidParams(format!(
                "compactness = {} must be > 0",
                self.compactness
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParams("max_iters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.min_segment_frac) {
            return Err(Error::InvalidParams(format!(
                "min_segment_frac = {} outside [0, 1)",
                self.min_segment_frac
            )));
        }
        Ok(())
    }
}

/// Seed grid shape: rows follow the image aspect ratio, columns fill in the
/// remaining count. The raw rounding rule is not monotone in `k_s` on skewed
/// aspect ratios, so the result is the best grid over all targets up to
/// `k_s`, which makes the seed count non-decreasing by construction.
fn grid_dims(k_s: usize, height: usize, width: usize) -> (usize, usize) {
    let mut best = (1usize, 1usize);
    for k in 1..=k_s {
        let n_rows =
            ((k as f64 * height as f64 / width as f64).sqrt().round() as usize).clamp(1, height);
        let n_cols = ((k as f64 / n_rows as f64).round() as usize).clamp(1, width);
        if n_rows * n_cols >= best.0 * best.1 {
            best = (n_rows, n_cols);
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Center {
    y: f64,
    x: f64,
    lab: [f64; 3],
}

/// Segments an RGB image into superpixels; output indices are compact and
/// every segment is one 4-connected component.
pub fn slic_segment(image: &RgbImage, params: &SlicParams) -> Result<SegmentMap> {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    params.validate(h, w)?;

    let lab: Vec<[f64; 3]> = image.pixels().iter().map(|&p| srgb_to_lab(p)).collect();
    let labels = kmeans(&lab, h, w, params);
    let min_size = params.min_segment_frac * (h * w) as f64 / params.k_s as f64;
    let (data, count) = connectivity(&labels, h, w, min_size);
    Ok(SegmentMap::with_segment_count(h, w, data, count)
        .expect("connectivity output is compact by construction"))
}

fn kmeans(lab: &[[f64; 3]], h: usize, w: usize, params: &SlicParams) -> Vec<u32> {
    let (n_rows, n_cols) = grid_dims(params.k_s, h, w);
    let spacing = ((h * w) as f64 / params.k_s as f64).sqrt();

    let grad = |y: usize, x: usize| -> f64 {
        let xm = x.saturating_sub(1);
        let xp = (x + 1).min(w - 1);
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let gx: f64 = (0..3).map(|i| (lab[y * w + xp][i] - lab[y * w + xm][i]).powi(2)).sum();
        let gy: f64 = (0..3).map(|i| (lab[yp * w + x][i] - lab[ym * w + x][i]).powi(2)).sum();
        gx + gy
    };

    // Seeds on the grid, each nudged to the strictly lowest-gradient pixel in
    // the 3x3 neighborhood of the pixel containing it.
    let mut centers = Vec::with_capacity(n_rows * n_cols);
    for i in 0..n_rows {
        let cy = (2 * i + 1) as f64 * h as f64 / (2 * n_rows) as f64;
        for j in 0..n_cols {
            let cx = (2 * j + 1) as f64 * w as f64 / (2 * n_cols) as f64;
            let py = (cy as usize).min(h - 1);
            let px = (cx as usize).min(w - 1);
            let (mut by, mut bx) = (py, px);
            let mut best = grad(py, px);
            for ny in py.saturating_sub(1)..=(py + 1).min(h - 1) {
                for nx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                    if (ny, nx) != (py, px) && grad(ny, nx) < best {
                        best = grad(ny, nx);
                        by = ny;
                        bx = nx;
                    }
                }
            }
            if (by, bx) != (py, px) {
                centers.push(Center {
                    y: by as f64 + 0.5,
                    x: bx as f64 + 0.5,
                    lab: lab[by * w + bx],
                });
            } else {
                centers.push(Center { y: cy, x: cx, lab: lab[py * w + px] });
            }
        }
    }

    let spatial_weight = (params.compactness / spacing).powi(2);
    // Search windows must cover every pixel even when the grid pitch exceeds
    // the nominal spacing.
    let half_h = spacing.max(h as f64 / (2 * n_rows) as f64 + 1.0);
    let half_w = spacing.max(w as f64 / (2 * n_cols) as f64 + 1.0);

    let mut labels = vec![0u32; h * w];
    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..params.max_iters {
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let r0 = (c.y - half_h).floor().max(0.0) as usize;
            let r1 = ((c.y + half_h).ceil() as usize).min(h - 1);
            let c0 = (c.x - half_w).floor().max(0.0) as usize;
            let c1 = ((c.x + half_w).ceil() as usize).min(w - 1);
            for py in r0..=r1 {
                let dy = (py as f64 + 0.5) - c.y;
                for px in c0..=c1 {
                    let dx = (px as f64 + 0.5) - c.x;
                    let l = lab[py * w + px];
                    let dl = (l[0] - c.lab[0]).powi(2)
                        + (l[1] - c.lab[1]).powi(2)
                        + (l[2] - c.lab[2]).powi(2);
                    let d = dl + spatial_weight * (dy * dy + dx * dx);
                    let idx = py * w + px;
                    // Strict comparison: ties stay with the lower center index.
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = ci as u32 + 1;
                    }
                }
            }
        }

        let mut acc = vec![(0.0f64, 0.0f64, [0.0f64; 3], 0usize); centers.len()];
        for py in 0..h {
            for px in 0..w {
                let l = labels[py * w + px];
                if l == 0 {
                    continue;
                }
                let a = &mut acc[(l - 1) as usize];
                a.0 += py as f64 + 0.5;
                a.1 += px as f64 + 0.5;
                for i in 0..3 {
                    a.2[i] += lab[py * w + px][i];
                }
                a.3 += 1;
            }
        }
        let mut movement = 0.0f64;
        for (ci, a) in acc.iter().enumerate() {
            if a.3 == 0 {
                continue;
            }
            let inv = 1.0 / a.3 as f64;
            let ny = a.0 * inv;
            let nx = a.1 * inv;
            let c = &mut centers[ci];
            movement = movement.max(((ny - c.y).powi(2) + (nx - c.x).powi(2)).sqrt());
            c.y = ny;
            c.x = nx;
            c.lab = [a.2[0] * inv, a.2[1] * inv, a.2[2] * inv];
        }
        if movement < 1e-3 * spacing {
            break;
        }
    }

    // Window coverage can in principle miss pixels after large center
    // drifts; fall back to a global nearest-center pass for any stragglers.
    for py in 0..h {
        for px in 0..w {
            let idx = py * w + px;
            if labels[idx] != 0 {
                continue;
            }
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (ci, c) in centers.iter().enumerate() {
                let dy = (py as f64 + 0.5) - c.y;
                let dx = (px as f64 + 0.5) - c.x;
                let l = lab[idx];
                let dl = (l[0] - c.lab[0]).powi(2)
                    + (l[1] - c.lab[1]).powi(2)
                    + (l[2] - c.lab[2]).powi(2);
                let d = dl + spatial_weight * (dy * dy + dx * dx);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            labels[idx] = best as u32 + 1;
        }
    }
    labels
}

/// Splits segments into 4-connected components and merges components smaller
/// than `min_size` pixels into their largest 4-adjacent neighbor. Pixels with
/// index 0 are holes: they are never merged and never act as neighbors.
pub fn enforce_connectivity(seg: &SegmentMap, min_size: f64) -> SegmentMap {
    let (data, count) = connectivity(seg.indices(), seg.height(), seg.width(), min_size);
    SegmentMap::with_segment_count(seg.height(), seg.width(), data, count)
        .expect("connectivity output is compact by construction")
}

fn connectivity(labels: &[u32], h: usize, w: usize, min_size: f64) -> (Vec<u32>, usize) {
    let mut current = labels.to_vec();
    loop {
        let (comp, sizes, pixels) = components(&current, h, w);
        let mut merged = false;
        'outer: for cid in 1..sizes.len() {
            if (sizes[cid] as f64) >= min_size {
                continue;
            }
            // Largest 4-adjacent neighbor component; ties to the lower id.
            let mut best: Option<(usize, usize)> = None;
            for &idx in &pixels[cid] {
                let (py, px) = (idx / w, idx % w);
                let mut consider = |n: usize| {
                    let nc = comp[n] as usize;
                    if nc != 0 && nc != cid {
                        let cand = (sizes[nc], nc);
                        best = Some(match best {
                            None => cand,
                            Some((bs, bi)) => {
                                if cand.0 > bs || (cand.0 == bs && cand.1 < bi) {
                                    cand
                                } else {
                                    (bs, bi)
                                }
                            }
                        });
                    }
                };
                if py > 0 {
                    consider(idx - w);
                }
                if py + 1 < h {
                    consider(idx + w);
                }
                if px > 0 {
                    consider(idx - 1);
                }
                if px + 1 < w {
                    consider(idx + 1);
                }
            }
            if let Some((_, target)) = best {
                let target_label = current[pixels[target][0]];
                for &idx in &pixels[cid] {
                    current[idx] = target_label;
                }
                merged = true;
                break 'outer;
            }
        }
        if !merged {
            break;
        }
    }

    let (comp, _, _) = components(&current, h, w);
    let count = comp.iter().copied().max().unwrap_or(0) as usize;
    (comp, count)
}
