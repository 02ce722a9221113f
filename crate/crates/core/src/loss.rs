//! Region prototypes and the contrastive objectness loss.
//!
//! Each valid object region contributes a prototype: the mean of its raw
//! pixel embeddings, L2-normalized. A pixel in valid region `k` is pulled
//! toward its own prototype and pushed away from the prototypes of valid
//! regions with a *different* region label:
//!
//! `L(p) = -(z~_p . v~_k) + logsumexp_{k' in Omega(k)} (z~_p . v~_{k'})`
//!
//! where `Omega(k)` is the set of valid regions labeled differently from
//! `k`. Pixels without negatives contribute nothing; the loss averages over
//! the `S` contributing pixels. The `plus` variant replaces the positive
//! term with a log-sum-exp over all prototypes sharing `k`'s label.
//!
//! Gradients are exact, flowing both through each pixel's own normalization
//! and through every prototype mean (including a pixel's contribution to its
//! own region's prototype) unless `stop_prototype_grad` is set.

use crate::error::{Error, Result};
use crate::fusion::RegionLabeling;
use crate::raster::SegmentMap;

/// Dense per-pixel embeddings at (possibly reduced) spatial resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if dim < 2 {
            return Err(Error::InvalidParams(format!("embedding dim {dim} must be >= 2")));
        }
        if data.len() != height * width * dim {
            return Err(Error::InvalidSize(format!(
                "embedding buffer has {} values, expected {}",
                data.len(),
                height * width * dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("embedding contains non-finite values".into()));
        }
        Ok(Self { height, width, dim, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Embedding vector of the pixel at flat index `idx`.
    pub fn at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Which contrastive numerator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjLossVariant {
    /// Similarity to the pixel's own region prototype only.
    Standard,
    /// Log-sum-exp of similarities to all prototypes sharing the region label.
    Plus,
}

/// Objectness-loss configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjLossParams {
    pub variant: ObjLossVariant,
    /// Weight of the regularizer in the combined objective.
    pub alpha_obj: f64,
    /// Adds the positive term(s) to the softmax denominator (InfoNCE-style).
    /// The literal form keeps the denominator to negatives only.
    pub include_positive_in_denominator: bool,
    /// Similarity temperature; 1 reproduces the plain dot-product form.
    pub temperature: f64,
    /// Treat prototypes as constants in the gradient.
    pub stop_prototype_grad: bool,
}

impl Default for ObjLossParams {
    fn default() -> Self {
        Self {
            variant: ObjLossVariant::Standard,
            alpha_obj: 1.0,
            include_positive_in_denominator: false,
            temperature: 1.0,
            stop_prototype_grad: false,
        }
    }
}

impl ObjLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_obj.is_finite() && self.alpha_obj >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "alpha_obj = {} must be >= 0",
                self.alpha_obj
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParams(format!(
                "temperature = {} must be > 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// One region prototype: raw mean embedding and its unit-norm version.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub region: u32,
    pub label: u8,
    pub raw: Vec<f64>,
    pub unit: Vec<f64>,
}

/// Prototypes of all valid regions with at least one pixel at embedding
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    dim: usize,
    protos: Vec<Prototype>,
    /// Slot lookup by 1-based region index.
    slot: Vec<Option<usize>>,
}

impl PrototypeSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.protos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.protos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prototype> {
        self.protos.iter()
    }

    pub fn get(&self, slot: usize) -> &Prototype {
        &self.protos[slot]
    }

    pub fn slot_of_region(&self, region: u32) -> Option<usize> {
        self.slot.get(region as usize).copied().flatten()
    }
}

/// Result of one objectness-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjLossResult {
    /// Mean per-pixel loss over contributing pixels (0 when none contribute).
    pub loss: f64,
    /// `S`: pixels in valid regions with at least one negative prototype.
    pub contributing_pixels: usize,
    /// Raw per-pixel losses (0 where not contributing), row-major.
    pub per_pixel_loss: Option<Vec<f64>>,
    /// d(loss)/d(embedding), same layout as the input embedding map.
    pub gradient: Option<EmbeddingMap>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean embedding of every valid region, L2-normalized.
///
/// `fused` must already be at the embedding resolution; its indices refer to
/// `labeling`'s region space (a reduced-resolution view may lack some
/// regions entirely — those are dropped from the set).
pub fn compute_prototypes(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
) -> Result<PrototypeSet> {
    let (h, w) = (emb.height(), emb.width());
    if fused.height() != h || fused.width() != w {
        return Err(Error::dims("compute_prototypes", (h, w), (fused.height(), fused.width())));
    }
    if fused.segment_count() > labeling.region_count() {
        return Err(Error::InvalidParams(format!(
            "fused map has {} segments but labeling covers {}",
            fused.segment_count(),
            labeling.region_count()
        )));
    }
    let d = emb.dim();
    let k = labeling.region_count();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (idx, &region) in fused.indices().iter().enumerate() {
        if region == 0 || !labeling.is_valid(region) {
            continue;
        }
        let r = (region - 1) as usize;
        counts[r] += 1;
        let z = emb.at(idx);
        for (s, &zv) in sums[r * d..(r + 1) * d].iter_mut().zip(z) {
            *s += zv;
        }
    }

    let mut protos = Vec::new();
    let mut slot = vec![None; k + 1];
    for r in 0..k {
        let region = r as u32 + 1;
        if !labeling.is_valid(region) || counts[r] == 0 {
            continue;
        }
        let raw: Vec<f64> = sums[r * d..(r + 1) * d]
            .iter()
            .map(|s| s / counts[r] as f64)
            .collect();
        let n = norm(&raw);
        if n == 0.0 {
            return Err(Error::InvalidParams(format!(
                "region {region} has a zero-norm prototype; cosine similarity undefined"
            )));
        }
        let unit = raw.iter().map(|v| v / n).collect();
        slot[region as usize] = Some(protos.len());
        protos.push(Prototype {
            region,
            label: labeling.label_of(region).expect("valid region has a label"),
            raw,
            unit,
        });
    }
    Ok(PrototypeSet { dim: d, protos, slot })
}

fn check_proto_consistency(protos: &PrototypeSet, labeling: &RegionLabeling) -> Result<()> {
    for p in protos.iter() {
        if p.region == 0 || p.region as usize > labeling.region_count() {
            return Err(Error::MissingPrototypes(format!(
                "prototype region {} outside labeling with {} regions",
                p.region,
                labeling.region_count()
            )));
        }
        if !labeling.is_valid(p.region) || labeling.label_of(p.region) != Some(p.label) {
            return Err(Error::MissingPrototypes(format!(
                "prototype for region {} does not match the labeling",
                p.region
            )));
        }
    }
    Ok(())
}

/// Contrastive objectness loss against precomputed prototypes.
pub fn objectness_loss(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
    protos: &PrototypeSet,
    params: &ObjLossParams,
) -> Result<ObjLossResult> {
    evaluate(emb, fused, labeling, protos, params, false, true)
}

/// Loss plus the exact gradient with respect to every raw embedding;
/// prototypes are recomputed internally from the same inputs.
pub fn objectness_loss_grad(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
    params: &ObjLossParams,
) -> Result<ObjLossResult> {
    let protos = compute_prototypes(emb, fused, labeling)?;
    evaluate(emb, fused, labeling, &protos, params, true, false)
}

fn evaluate(
    emb: &EmbeddingMap,
    fused: &SegmentMap,
    labeling: &RegionLabeling,
    protos: &PrototypeSet,
    params: &ObjLossParams,
    want_grad: bool,
    want_per_pixel: bool,
) -> Result<ObjLossResult> {
    params.validate()?;
    let (h, w) = (emb.height(), emb.width());
    if fused.height() != h || fused.width() != w {
        return Err(Error::dims("objectness_loss", (h, w), (fused.height(), fused.width())));
    }
    if protos.dim() != emb.dim() {
        return Err(Error::MissingPrototypes(format!(
            "prototype dim {} vs embedding dim {}",
            protos.dim(),
            emb.dim()
        )));
    }
    check_proto_consistency(protos, labeling)?;

    let d = emb.dim();
    let n_protos = protos.len();
    let inv_t = 1.0 / params.temperature;

    let mut loss_sum = 0.0f64;
    let mut contributing = 0usize;
    let mut per_pixel = if want_per_pixel { Some(vec![0.0f64; h * w]) } else { None };
    let mut grad = if want_grad { Some(vec![0.0f64; h * w * d]) } else { None };
    // Per-prototype cotangent accumulators for the prototype-mean path.
    let mut proto_acc = vec![0.0f64; n_protos * d];

    let mut sims = vec![0.0f64; n_protos];
    let mut unit_z = vec![0.0f64; d];

    for idx in 0..h * w {
        let region = fused.indices()[idx];
        if region == 0 || !labeling.is_valid(region) {
            continue;
        }
        let own_slot = match protos.slot_of_region(region) {
            Some(s) => s,
            None => {
                return Err(Error::MissingPrototypes(format!(
                    "pixel in valid region {region} has no prototype"
                )))
            }
        };
        let own_label = protos.get(own_slot).label;

        let z = emb.at(idx);
        let z_norm = norm(z);
        if z_norm == 0.0 {
            // Cosine similarity undefined; the pixel cannot contribute.
            continue;
        }
        for (u, &zv) in unit_z.iter_mut().zip(z) {
            *u = zv / z_norm;
        }

        let mut has_negative = false;
        for (j, p) in protos.iter().enumerate() {
            let mut s = 0.0;
            for (a, b) in unit_z.iter().zip(&p.unit) {
                s += a * b;
            }
            sims[j] = s;
            if p.label != own_label {
                has_negative = true;
            }
        }
        if !has_negative {
            continue;
        }
        contributing += 1;

        let in_pos = |j: usize| match params.variant {
            ObjLossVariant::Standard => j == own_slot,
            ObjLossVariant::Plus => protos.get(j).label == own_label,
        };
        let in_den = |j: usize| {
            protos.get(j).label != own_label
                || (params.include_positive_in_denominator && in_pos(j))
        };

        let lse = |member: &dyn Fn(usize) -> bool| -> (f64, f64) {
            // Returns (max, sum of exp((s - max)/t)) over the member set.
            let mut m = f64::NEG_INFINITY;
            for j in 0..n_protos {
                if member(j) {
                    m = m.max(sims[j]);
                }
            }
            let mut sum = 0.0;
            for j in 0..n_protos {
                if member(j) {
                    sum += ((sims[j] - m) * inv_t).exp();
                }
            }
            (m, sum)
        };
        let (pos_max, pos_sum) = lse(&in_pos);
        let (den_max, den_sum) = lse(&in_den);
        let pixel_loss =
            -(pos_max * inv_t + pos_sum.ln()) + (den_max * inv_t + den_sum.ln());
        loss_sum += pixel_loss;
        if let Some(pp) = per_pixel.as_mut() {
            pp[idx] = pixel_loss;
        }

        if let Some(g) = grad.as_mut() {
            for j in 0..n_protos {
                let n_j = if in_pos(j) { ((sims[j] - pos_max) * inv_t).exp() / pos_sum } else { 0.0 };
                let d_j = if in_den(j) { ((sims[j] - den_max) * inv_t).exp() / den_sum } else { 0.0 };
                let coef = (d_j - n_j) * inv_t;
                if coef == 0.0 {
                    continue;
                }
                // d(sim)/d(z) through the pixel's normalization.
                let unit_p = &protos.get(j).unit;
                let gz = &mut g[idx * d..(idx + 1) * d];
                for i in 0..d {
                    gz[i] += coef * (unit_p[i] - sims[j] * unit_z[i]) / z_norm;
                }
                if !params.stop_prototype_grad {
                    let acc = &mut proto_acc[j * d..(j + 1) * d];
                    for i in 0..d {
                        acc[i] += coef * unit_z[i];
                    }
                }
            }
        }
    }

    let loss = if contributing > 0 { loss_sum / contributing as f64 } else { 0.0 };

    let gradient = match grad {
        None => None,
        Some(mut g) => {
            if contributing > 0 {
                let inv_s = 1.0 / contributing as f64;
                for v in g.iter_mut() {
                    *v *= inv_s;
                }
                if !params.stop_prototype_grad {
                    // Push the accumulated prototype cotangents through the
                    // prototype normalization and the region mean.
                    let sizes = region_sizes(fused, labeling.region_count());
                    let mut proto_grad = vec![0.0f64; n_protos * d];
                    for (j, p) in protos.iter().enumerate() {
                        let acc = &proto_acc[j * d..(j + 1) * d];
                        let r_norm = norm(&p.raw);
                        let dot: f64 = acc.iter().zip(&p.unit).map(|(a, u)| a * u).sum();
                        let pg = &mut proto_grad[j * d..(j + 1) * d];
                        for i in 0..d {
                            pg[i] = inv_s * (acc[i] - dot * p.unit[i]) / r_norm;
                        }
                    }
                    for (idx, &region) in fused.indices().iter().enumerate() {
                        if region == 0 {
                            continue;
                        }
                        if let Some(j) = protos.slot_of_region(region) {
                            let count = sizes[(region - 1) as usize] as f64;
                            let pg = &proto_grad[j * d..(j + 1) * d];
                            let gz = &mut g[idx * d..(idx + 1) * d];
                            for i in 0..d {
                                gz[i] += pg[i] / count;
                            }
                        }
                    }
                }
            }
            Some(EmbeddingMap::new(h, w, d, g)?)
        }
    };

    Ok(ObjLossResult { loss, contributing_pixels: contributing, per_pixel_loss: per_pixel, gradient })
}

fn region_sizes(fused: &SegmentMap, region_count: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; region_count];
    for &r in fused.indices() {
        if r > 0 {
            sizes[(r - 1) as usize] += 1;
        }
    }
    sizes
}
