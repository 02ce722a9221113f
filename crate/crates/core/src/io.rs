//! Bit-exact raster file I/O.
//!
//! Formats:
//! - RGB images: 8-bit RGB PNG, channels scaled to `[0, 1]` in memory;
//! - depth: 16-bit grayscale PNG, `depth = raw * depth_scale`, raw `0`
//!   stays missing;
//! - labels / pseudo-labels: 8-bit grayscale PNG, `255` = ignore/none;
//! - segment maps: 16-bit grayscale PNG of raw indices, `0` = no segment,
//!   or a colorized rendering for inspection.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, LabelMap, PseudoLabelMap, RgbImage, SceneSample, SegmentMap};

/// How [`save_segment_map`] renders the indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMapMode {
    /// Lossless 16-bit grayscale; `load_segment_map` inverts it exactly.
    Raw16,
    /// Deterministic per-index colors for visual inspection.
    Colorized,
}

/// Deterministic color for a segment index: index 0 is reserved black, any
/// other index takes the low 24 bits of the 64-bit finalizer
/// `x ^= x>>30; x *= 0xbf58476d1ce4e5b9; x ^= x>>27; x *= 0x94d049bb133111eb;
/// x ^= x>>31` as `(r, g, b) = (bits 16..24, 8..16, 0..8)`.
pub fn segment_color(index: u32) -> [u8; 3] {
    if index == 0 {
        return [0, 0, 0];
    }
    let mut x = index as u64;
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    [(x >> 16) as u8, (x >> 8) as u8, x as u8]
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
}

fn encode_err(path: &Path, e: image::ImageError) -> Error {
    Error::Encode { path: path.to_path_buf(), reason: e.to_string() }
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [f64::from(p[0]) / 255.0, f64::from(p[1]) / 255.0, f64::from(p[2]) / 255.0])
        .collect();
    RgbImage::new(h, w, data)
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.get(y as usize, x as usize);
        Rgb([quant8(p[0]), quant8(p[1]), quant8(p[2])])
    });
    buf.save(path).map_err(|e| encode_err(path, e))
}

fn quant8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn load_depth(path: impl AsRef<Path>, depth_scale: f64) -> Result<DepthMap> {
    let path = path.as_ref();
    if depth_scale <= 0.0 {
        return Err(Error::InvalidParams(format!("depth scale {depth_scale} must be > 0")));
    }
    let img = open(path)?;
    let img = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("expected 16-bit grayscale depth, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| f64::from(p[0]) * depth_scale).collect();
    DepthMap::new(h, w, data)
}

pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>, depth_scale: f64) -> Result<()> {
    let path = path.as_ref();
    if depth_scale <= 0.0 {
        return Err(Error::InvalidParams(format!("depth scale {depth_scale} must be > 0")));
    }
    let mut buf = ImageBuffer::<Luma<u16>, _>::new(depth.width() as u32, depth.height() as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = depth.get(y as usize, x as usize);
        let raw = (v / depth_scale).round();
        if raw < 0.0 || raw > f64::from(u16::MAX) {
            return Err(Error::Encode {
                path: path.to_path_buf(),
                reason: format!("depth {v} does not fit 16 bits at scale {depth_scale}"),
            });
        }
        *px = Luma([raw as u16]);
    }
    buf.save(path).map_err(|e| encode_err(path, e))
}

fn load_luma8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?;
    let img = match img {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_raw()))
}

fn save_luma8(h: usize, w: usize, data: &[u8], path: &Path) -> Result<()> {
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data.to_vec())
        .expect("buffer sized by construction");
    buf.save(path).map_err(|e| encode_err(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (h, w, data) = load_luma8(path.as_ref())?;
    LabelMap::new(h, w, data)
}

pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    save_luma8(labels.height(), labels.width(), labels.values(), path.as_ref())
}

pub fn load_pseudo_labels(path: impl AsRef<Path>) -> Result<PseudoLabelMap> {
    let (h, w, data) = load_luma8(path.as_ref())?;
    PseudoLabelMap::new(h, w, data)
}

pub fn save_pseudo_labels(pseudo: &PseudoLabelMap, path: impl AsRef<Path>) -> Result<()> {
    save_luma8(pseudo.height(), pseudo.width(), pseudo.values(), path.as_ref())
}

pub fn load_segment_map(path: impl AsRef<Path>) -> Result<SegmentMap> {
    let path = path.as_ref();
    let img = open(path)?;
    let img = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("expected 16-bit grayscale segment map, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| u32::from(p[0])).collect();
    SegmentMap::new(h, w, data)
}

pub fn save_segment_map(
    seg: &SegmentMap,
    path: impl AsRef<Path>,
    mode: SegmentMapMode,
) -> Result<()> {
    let path = path.as_ref();
    match mode {
        SegmentMapMode::Raw16 => {
            let mut buf =
                ImageBuffer::<Luma<u16>, _>::new(seg.width() as u32, seg.height() as u32);
            for (x, y, px) in buf.enumerate_pixels_mut() {
                let idx = seg.get(y as usize, x as usize);
                if idx > u32::from(u16::MAX) {
                    return Err(Error::Encode {
                        path: path.to_path_buf(),
                        reason: format!("segment index {idx} does not fit 16 bits"),
                    });
                }
                *px = Luma([idx as u16]);
            }
            buf.save(path).map_err(|e| encode_err(path, e))
        }
        SegmentMapMode::Colorized => {
            let buf = ImageBuffer::from_fn(seg.width() as u32, seg.height() as u32, |x, y| {
                Rgb(segment_color(seg.get(y as usize, x as usize)))
            });
            buf.save(path).map_err(|e| encode_err(path, e))
        }
    }
}

/// Linearly quantizes arbitrary per-pixel values onto the full 16-bit range
/// and writes them as grayscale PNG. Debug aid for loss rasters; not a
/// stable, invertible format.
pub fn save_quantized_raster(
    values: &[f64],
    height: usize,
    width: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if values.len() != height * width {
        return Err(Error::InvalidSize(format!(
            "raster buffer has {} values, expected {}",
            values.len(),
            height * width
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = ImageBuffer::<Luma<u16>, _>::new(width as u32, height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = values[y as usize * width + x as usize];
        *px = Luma([(((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16]);
    }
    buf.save(path).map_err(|e| encode_err(path, e))
}

/// Loads an RGB + depth (+ optional labels) triple into a [`SceneSample`],
/// checking that all rasters agree on dimensions.
pub fn load_scene(
    image_path: impl AsRef<Path>,
    depth_path: impl AsRef<Path>,
    label_path: Option<&Path>,
    depth_scale: f64,
) -> Result<SceneSample> {
    let image = load_rgb(image_path)?;
    let depth = load_depth(depth_path, depth_scale)?;
    let labels = label_path.map(load_labels).transpose()?;
    SceneSample::new(image, depth, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn black_scene_with_zero_depth_is_all_missing() {
        let dir = tempfile::tempdir().unwrap();
        let rgb_path = dir.path().join("rgb.png");
        let depth_path = dir.path().join("depth.png");
        save_rgb(&RgbImage::filled(2, 2, [0.0; 3]).unwrap(), &rgb_path).unwrap();
        save_depth(&DepthMap::new(2, 2, vec![0.0; 4]).unwrap(), &depth_path, 1.0).unwrap();

        let scene = load_scene(&rgb_path, &depth_path, None, 1.0).unwrap();
        assert_eq!(scene.depth.valid_count(), 0);
        assert!(scene.image.pixels().iter().all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn depth_raw_values_scale_linearly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.png");
        // Raw value 256 at scale 1/256 loads as exactly 1.0.
        let buf = ImageBuffer::<Luma<u16>, _>::from_raw(1, 1, vec![256u16]).unwrap();
        buf.save(&path).unwrap();
        let depth = load_depth(&path, 1.0 / 256.0).unwrap();
        assert_eq!(depth.get(0, 0), 1.0);
    }

    #[test]
    fn mismatched_scene_dimensions_error() {
        let dir = tempfile::tempdir().unwrap();
        let rgb_path = dir.path().join("rgb.png");
        let depth_path = dir.path().join("depth.png");
        save_rgb(&RgbImage::filled(4, 4, [0.5; 3]).unwrap(), &rgb_path).unwrap();
        save_depth(&DepthMap::new(4, 5, vec![1.0; 20]).unwrap(), &depth_path, 1.0).unwrap();
        let err = load_scene(&rgb_path, &depth_path, None, 1.0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_rgb("/nonexistent/nope.png").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn raw16_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.png");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Random compact map: draw raw indices then compact through the
        // public constructor by remapping to first-occurrence order.
        let raw: Vec<u32> = (0..256).map(|_| rng.random_range(0..7)).collect();
        let (data, _) = crate::raster::compact_monotone(
            &raw.iter().map(|&v| v as u64).collect::<Vec<_>>(),
        );
        let seg = SegmentMap::new(16, 16, data).unwrap();
        save_segment_map(&seg, &path, SegmentMapMode::Raw16).unwrap();
        let back = load_segment_map(&path).unwrap();
        assert_eq!(back, seg);
    }

    #[test]
    fn constant_map_saves_constant_raw_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ones.png");
        let seg = SegmentMap::new(2, 3, vec![1; 6]).unwrap();
        save_segment_map(&seg, &path, SegmentMapMode::Raw16).unwrap();
        let img = image::open(&path).unwrap();
        match img {
            DynamicImage::ImageLuma16(buf) => {
                assert!(buf.pixels().all(|p| p[0] == 1));
            }
            _ => panic!("expected 16-bit output"),
        }
    }

    #[test]
    fn colorized_index_zero_is_black() {
        assert_eq!(segment_color(0), [0, 0, 0]);
        // Non-zero indices get distinct non-reserved colors.
        assert_ne!(segment_color(1), [0, 0, 0]);
        assert_ne!(segment_color(1), segment_color(2));
    }

    #[test]
    fn rgb_quantized_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    f64::from(rng.random_range(0u16..=255)) / 255.0,
                    f64::from(rng.random_range(0u16..=255)) / 255.0,
                    f64::from(rng.random_range(0u16..=255)) / 255.0,
                ]
            })
            .collect();
        let img = RgbImage::new(8, 8, data).unwrap();
        save_rgb(&img, &path).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), img);
    }
}
