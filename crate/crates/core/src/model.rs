//! Toy differentiable segmentation model: a per-pixel linear encoder from
//! hand-crafted features to a `d`-dimensional embedding, followed by a
//! linear classifier. Small enough for exact finite-difference checks while
//! still exposing the encoder/classifier split the regularizer needs.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::loss::EmbeddingMap;
use crate::raster::{LabelMap, RgbImage};

/// Per-pixel feature vector: RGB, normalized x/y, and 3x3-mean RGB.
pub const FEATURE_DIM: usize = 8;

const CHECKPOINT_MAGIC: &[u8; 4] = b"PACM";
const CHECKPOINT_VERSION: u32 = 1;

/// Encoder (`phi`) + classifier (`psi`) parameters. The same struct doubles
/// as the gradient container since it has exactly one slot per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub emb_dim: usize,
    pub class_count: usize,
    /// `FEATURE_DIM x emb_dim`, row-major by feature.
    pub phi: Vec<f64>,
    pub phi_bias: Vec<f64>,
    /// `emb_dim x class_count`, row-major by embedding dim.
    pub psi: Vec<f64>,
    pub psi_bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(emb_dim: usize, class_count: usize) -> Self {
        Self {
            emb_dim,
            class_count,
            phi: vec![0.0; FEATURE_DIM * emb_dim],
            phi_bias: vec![0.0; emb_dim],
            psi: vec![0.0; emb_dim * class_count],
            psi_bias: vec![0.0; class_count],
        }
    }

    /// Small uniform init, deterministic under the supplied generator.
    pub fn init(emb_dim: usize, class_count: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(emb_dim, class_count);
        for v in m.phi.iter_mut().chain(&mut m.phi_bias) {
            *v = rng.random_range(-0.1..=0.1);
        }
        for v in m.psi.iter_mut().chain(&mut m.psi_bias) {
            *v = rng.random_range(-0.1..=0.1);
        }
        m
    }

    pub fn num_params(&self) -> usize {
        self.phi.len() + self.phi_bias.len() + self.psi.len() + self.psi_bias.len()
    }

    /// Flat parameter access in (phi, phi_bias, psi, psi_bias) order; used by
    /// SGD updates and finite-difference probes.
    pub fn param(&self, i: usize) -> f64 {
        let mut i = i;
        for part in [&self.phi, &self.phi_bias, &self.psi, &self.psi_bias] {
            if i < part.len() {
                return part[i];
            }
            i -= part.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let mut i = i;
        for part in [&mut self.phi, &mut self.phi_bias, &mut self.psi, &mut self.psi_bias] {
            if i < part.len() {
                return &mut part[i];
            }
            i -= part.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += a * other`, used for SGD steps and gradient accumulation.
    pub fn axpy(&mut self, a: f64, other: &ToyModel) {
        debug_assert_eq!(self.emb_dim, other.emb_dim);
        debug_assert_eq!(self.class_count, other.class_count);
        for (x, y) in self.phi.iter_mut().zip(&other.phi) {
            *x += a * y;
        }
        for (x, y) in self.phi_bias.iter_mut().zip(&other.phi_bias) {
            *x += a * y;
        }
        for (x, y) in self.psi.iter_mut().zip(&other.psi) {
            *x += a * y;
        }
        for (x, y) in self.psi_bias.iter_mut().zip(&other.psi_bias) {
            *x += a * y;
        }
    }

    /// Flat little-endian checkpoint with a 16-byte header:
    /// magic `PACM`, version, and the (feature, embedding, class) dims.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.num_params() * 8);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(FEATURE_DIM as u16).to_le_bytes());
        buf.extend_from_slice(&(self.emb_dim as u16).to_le_bytes());
        buf.extend_from_slice(&(self.class_count as u16).to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        for part in [&self.phi, &self.phi_bias, &self.psi, &self.psi_bias] {
            for v in part.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |reason: &str| Error::Decode {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let f = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
        let d = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
        let c = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
        if f != FEATURE_DIM {
            return Err(bad(&format!("feature dim {f} unsupported")));
        }
        let expected = 16 + (f * d + d + d * c + c) * 8;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, got {}", bytes.len())));
        }
        let mut off = 16;
        let mut take = |n: usize| {
            let vals: Vec<f64> = (0..n)
                .map(|i| f64::from_le_bytes(bytes[off + i * 8..off + i * 8 + 8].try_into().unwrap()))
                .collect();
            off += n * 8;
            vals
        };
        Ok(Self {
            emb_dim: d,
            class_count: c,
            phi: take(f * d),
            phi_bias: take(d),
            psi: take(d * c),
            psi_bias: take(c),
        })
    }
}

/// Per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    class_count: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, class_count: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if class_count < 2 {
            return Err(Error::InvalidParams("class_count must be >= 2".into()));
        }
        if data.len() != height * width * class_count {
            return Err(Error::InvalidSize(format!(
                "probability buffer has {} values, expected {}",
                data.len(),
                height * width * class_count
            )));
        }
        for row in data.chunks(class_count) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParams("probability row is not a distribution".into()));
            }
        }
        Ok(Self { height, width, class_count, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Probability row of the pixel at flat index `idx`.
    pub fn at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.class_count..(idx + 1) * self.class_count]
    }

    /// Argmax class with ties to the smallest index.
    pub fn argmax(&self, idx: usize) -> (u8, f64) {
        let row = self.at(idx);
        let mut best = 0usize;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        (best as u8, row[best])
    }

    pub fn predict_labels(&self) -> LabelMap {
        let data = (0..self.height * self.width).map(|i| self.argmax(i).0).collect();
        LabelMap::new(self.height, self.width, data).expect("buffer sized to map")
    }
}

/// Deterministic per-pixel features: RGB, pixel-center coordinates
/// normalized to `(0, 1)`, and the mean RGB of the in-bounds 3x3 window.
pub fn scene_features(image: &RgbImage) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let mut feats = vec![0.0f64; h * w * FEATURE_DIM];
    for y in 0..h {
        for x in 0..w {
            let px = image.get(y, x);
            let mut mean = [0.0f64; 3];
            let mut n = 0.0;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let q = image.get(ny, nx);
                    for c in 0..3 {
                        mean[c] += q[c];
                    }
                    n += 1.0;
                }
            }
            let f = &mut feats[(y * w + x) * FEATURE_DIM..(y * w + x + 1) * FEATURE_DIM];
            f[0] = px[0];
            f[1] = px[1];
            f[2] = px[2];
            f[3] = (x as f64 + 0.5) / w as f64;
            f[4] = (y as f64 + 0.5) / h as f64;
            f[5] = mean[0] / n;
            f[6] = mean[1] / n;
            f[7] = mean[2] / n;
        }
    }
    feats
}

/// Embeddings and class probabilities from precomputed features.
pub fn forward_features(
    model: &ToyModel,
    feats: &[f64],
    height: usize,
    width: usize,
) -> (EmbeddingMap, ProbMap) {
    let d = model.emb_dim;
    let c = model.class_count;
    let n = height * width;
    debug_assert_eq!(feats.len(), n * FEATURE_DIM);

    let mut emb = vec![0.0f64; n * d];
    let mut probs = vec![0.0f64; n * c];
    for p in 0..n {
        let f = &feats[p * FEATURE_DIM..(p + 1) * FEATURE_DIM];
        let z = &mut emb[p * d..(p + 1) * d];
        z.copy_from_slice(&model.phi_bias);
        for (i, &fi) in f.iter().enumerate() {
            let row = &model.phi[i * d..(i + 1) * d];
            for j in 0..d {
                z[j] += fi * row[j];
            }
        }
        let logits = &mut probs[p * c..(p + 1) * c];
        logits.copy_from_slice(&model.psi_bias);
        for (j, &zj) in z.iter().enumerate() {
            let row = &model.psi[j * c..(j + 1) * c];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += zj * w;
            }
        }
        // Numerically stable softmax in place.
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logits.iter_mut() {
            *l /= sum;
        }
    }
    (
        EmbeddingMap::new(height, width, d, emb).expect("model outputs are finite"),
        ProbMap { height, width, class_count: c, data: probs },
    )
}

/// Full forward pass from an image.
pub fn forward(model: &ToyModel, image: &RgbImage) -> (EmbeddingMap, ProbMap) {
    let feats = scene_features(image);
    forward_features(model, &feats, image.height(), image.width())
}
