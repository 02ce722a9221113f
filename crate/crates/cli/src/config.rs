//! Flat `key = value` configuration shared by all subcommands.
//!
//! One assignment per line, `#` starts a comment, unknown keys are rejected.
//! Values from a `--config` file are applied first; command-line flags
//! override them.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use pac_core::depth::DepthSegParams;
use pac_core::loss::{ObjLossParams, ObjLossVariant};
use pac_core::slic::SlicParams;
use pac_core::synth::{DepthLayer, SceneSpec};
use pac_core::train::{RegionMode, TrainConfig};

/// Everything the pipeline can be told, with working defaults.
#[derive(Debug, Clone)]
pub struct Config {
    pub train: TrainConfig,
    pub scene: SceneSpec,
    /// Depth units per raw 16-bit step in depth PNGs.
    pub depth_scale: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub n_source_eval: usize,
    pub n_target_eval: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            scene: SceneSpec::default(),
            depth_scale: 1.0 / 256.0,
            n_source: 8,
            n_target: 8,
            n_source_eval: 4,
            n_target_eval: 4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.trim().parse::<T>().map_err(|e| format!("invalid value for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("invalid value for {key}: expected a boolean, got {other}")),
    }
}

fn parse_layers(value: &str) -> Result<Vec<DepthLayer>, String> {
    let mut layers = Vec::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (d, j) = part
            .split_once(':')
            .ok_or_else(|| format!("depth layer {part} must be depth:jitter"))?;
        layers.push(DepthLayer {
            depth: parse::<f64>("depth_layers", d)?,
            jitter: parse::<f64>("depth_layers", j)?,
        });
    }
    if layers.is_empty() {
        return Err("depth_layers must contain at least one depth:jitter pair".into());
    }
    Ok(layers)
}

impl Config {
    /// Applies one assignment; errors name the offending key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            // Superpixels.
            "k_s" => self.train.slic.k_s = parse(key, value)?,
            "compactness" => self.train.slic.compactness = parse(key, value)?,
            "slic_max_iters" => self.train.slic.max_iters = parse(key, value)?,
            "min_segment_frac" => self.train.slic.min_segment_frac = parse(key, value)?,
            // Depth segmentation.
            "bins" => self.train.depth_seg.bins = parse(key, value)?,
            "delta_peak" => self.train.depth_seg.delta_peak = parse(key, value)?,
            // Region labeling and fusion.
            "tau_p" => self.train.tau_p = parse(key, value)?,
            "missing_depth_as_region" => {
                self.train.missing_depth_as_region = parse_bool(key, value)?
            }
            "region_mode" => {
                self.train.region_mode = match value.trim() {
                    "multimodal" => RegionMode::Multimodal,
                    "pseudo-only" => RegionMode::PseudoOnly,
                    other => {
                        return Err(format!(
                            "invalid value for region_mode: {other} (multimodal|pseudo-only)"
                        ))
                    }
                }
            }
            // Objectness loss.
            "variant" => {
                self.train.obj.variant = match value.trim() {
                    "standard" => ObjLossVariant::Standard,
                    "plus" => ObjLossVariant::Plus,
                    other => {
                        return Err(format!("invalid value for variant: {other} (standard|plus)"))
                    }
                }
            }
            "alpha_obj" => self.train.obj.alpha_obj = parse(key, value)?,
            "include_positive_in_denominator" => {
                self.train.obj.include_positive_in_denominator = parse_bool(key, value)?
            }
            "temperature" => self.train.obj.temperature = parse(key, value)?,
            "stop_prototype_grad" => {
                self.train.obj.stop_prototype_grad = parse_bool(key, value)?
            }
            // Training.
            "alpha_st" => self.train.alpha_st = parse(key, value)?,
            "delta" => self.train.delta = parse(key, value)?,
            "warmup_iters" => self.train.warmup_iters = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "t_train" => self.train.t_train = parse(key, value)?,
            "batch" => self.train.batch = parse(key, value)?,
            "emb_dim" => self.train.emb_dim = parse(key, value)?,
            "class_count" => {
                self.train.class_count = parse(key, value)?;
                self.scene.class_count = self.train.class_count;
            }
            "seed" => {
                self.train.seed = parse(key, value)?;
                self.scene.seed = self.train.seed;
            }
            // Scene generation.
            "width" => self.scene.width = parse(key, value)?,
            "height" => self.scene.height = parse(key, value)?,
            "num_objects" => self.scene.num_objects = parse(key, value)?,
            "palette_shift" => self.scene.palette_shift = parse(key, value)?,
            "depth_layers" => self.scene.depth_layers = parse_layers(value)?,
            "n_source" => self.n_source = parse(key, value)?,
            "n_target" => self.n_target = parse(key, value)?,
            "n_source_eval" => self.n_source_eval = parse(key, value)?,
            "n_target_eval" => self.n_target_eval = parse(key, value)?,
            // I/O.
            "depth_scale" => self.depth_scale = parse(key, value)?,
            other => return Err(format!("unknown config key: {other}")),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1))?;
        }
        Ok(())
    }

    /// Cross-cutting validation once file values and flags are merged.
    pub fn validate(&self) -> Result<(), String> {
        if self.train.slic.k_s < 1 {
            return Err("k_s must be >= 1".into());
        }
        if !(self.train.slic.compactness.is_finite() && self.train.slic.compactness > 0.0) {
            return Err("compactness must be > 0".into());
        }
        if self.train.slic.max_iters == 0 {
            return Err("slic_max_iters must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.train.slic.min_segment_frac) {
            return Err("min_segment_frac must be in [0, 1)".into());
        }
        if !(self.depth_scale.is_finite() && self.depth_scale > 0.0) {
            return Err("depth_scale must be > 0".into());
        }
        self.train.validate().map_err(|e| e.to_string())?;
        self.scene.validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn slic(&self) -> &SlicParams {
        &self.train.slic
    }

    pub fn depth_seg(&self) -> &DepthSegParams {
        &self.train.depth_seg
    }

    pub fn obj(&self) -> &ObjLossParams {
        &self.train.obj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("k_s", "50").is_ok());
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn file_parsing_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pac.conf");
        std::fs::write(&path, "# comment\nk_s = 37 # trailing\n\ntau_p = 0.8\n").unwrap();
        let mut cfg = Config::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.train.slic.k_s, 37);
        assert_eq!(cfg.train.tau_p, 0.8);
    }

    #[test]
    fn validations_catch_bad_values() {
        let mut cfg = Config::default();
        cfg.set("k_s", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.set("delta", "1.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn depth_layers_round_trip() {
        let mut cfg = Config::default();
        cfg.set("depth_layers", "2.0:0.25, 4.5:0.4").unwrap();
        assert_eq!(cfg.scene.depth_layers.len(), 2);
        assert_eq!(cfg.scene.depth_layers[1].depth, 4.5);
        assert!(cfg.set("depth_layers", "oops").is_err());
    }
}
