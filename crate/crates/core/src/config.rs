//! Pipeline configuration: one resolved struct with every knob concrete,
//! plus a sparse overlay ("patch") used by config files and CLI flags.
//! Precedence is flag > file > default, applied by merging patches before
//! resolution.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default sampling interval (Å) for global alignment of full-size maps.
pub const DEFAULT_INTERVAL_GLOBAL: f64 = 5.0;
/// Default sampling interval (Å) for small or single-chain inputs.
pub const DEFAULT_INTERVAL_SMALL: f64 = 3.0;

/// Fully resolved pipeline configuration. Every field is concrete; use
/// [`RunConfig::resolve`] to build one from defaults plus overrides.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    /// Lattice spacing of the uniform sampling (Å).
    pub sampling_interval: f64,
    /// Kernel bandwidth σ for density vectors and mean shift (Å);
    /// default 2 × interval.
    pub bandwidth: f64,
    /// Mean-shift iteration cap.
    pub mean_shift_max_iters: usize,
    /// Mean-shift convergence tolerance (Å).
    pub mean_shift_tol: f64,
    /// Keypoint clustering radius (Å); default = interval.
    pub dbscan_eps: f64,
    /// Minimum cluster size (the point itself counts).
    pub dbscan_min_pts: usize,
    /// Descriptor support radius (Å); default 3 × interval.
    pub descriptor_radius: f64,
    /// Coarse-stage inlier noise bound ε (Å); default = interval.
    pub noise_bound: f64,
    /// Minimum correspondences the coarse stage needs.
    pub min_correspondences: usize,
    /// Lp exponent of the fine stage, in (0, 1).
    pub p_exponent: f64,
    /// Fine-stage outer iteration cap.
    pub fine_max_iters: usize,
    /// Fine-stage correspondence cutoff (Å); default 3 × interval.
    pub max_corr_dist: f64,
    /// Fine-stage convergence tolerance (Å).
    pub fine_tol: f64,
    /// Vector-agreement dot threshold, in (0, 1).
    pub dot_threshold: f64,
    /// Pairing radius for the score (Å); default interval/2 + 1e-6.
    pub pair_radius: f64,
    /// Occupancy-histogram cell (Å); default = interval.
    pub grid_cell: f64,
    /// Mask lattice stride (Å); when absent, half the source bounding-box
    /// span per axis.
    pub mask_stride: Option<f64>,
    /// Mask box inflation beyond the source bounding box (Å).
    pub mask_margin: f64,
    /// Masks with fewer target points than this are dropped.
    pub mask_min_points: usize,
    /// Number of ranked candidates local alignment returns.
    pub candidates: usize,
    /// Candidates closer than this rotation angle (degrees) and...
    pub dedup_rotation_deg: f64,
    /// ...this translation distance (Å) are merged; default = interval.
    pub dedup_translation: f64,
    /// Seed for all randomized choices.
    pub seed: u64,
}

/// Sparse configuration overlay: every field optional. Parsed from JSON or
/// `key = value` files and accumulated from CLI flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub sampling_interval: Option<f64>,
    pub bandwidth: Option<f64>,
    pub mean_shift_max_iters: Option<usize>,
    pub mean_shift_tol: Option<f64>,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub descriptor_radius: Option<f64>,
    pub noise_bound: Option<f64>,
    pub min_correspondences: Option<usize>,
    pub p_exponent: Option<f64>,
    pub fine_max_iters: Option<usize>,
    pub max_corr_dist: Option<f64>,
    pub fine_tol: Option<f64>,
    pub dot_threshold: Option<f64>,
    pub pair_radius: Option<f64>,
    pub grid_cell: Option<f64>,
    pub mask_stride: Option<f64>,
    pub mask_margin: Option<f64>,
    pub mask_min_points: Option<usize>,
    pub candidates: Option<usize>,
    pub dedup_rotation_deg: Option<f64>,
    pub dedup_translation: Option<f64>,
    pub seed: Option<u64>,
}

macro_rules! merge_fields {
    ($self:ident, $base:ident; $($field:ident),* $(,)?) => {
        ConfigPatch {
            $($field: $self.$field.or($base.$field),)*
        }
    };
}

macro_rules! assign_kv {
    ($self:ident, $key:ident, $value:ident; $($field:ident),* $(,)?) => {
        match $key {
            $(stringify!($field) => {
                $self.$field = Some($value.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        concat!("cannot parse '{}' as a value for ", stringify!($field)),
                        $value
                    ))
                })?);
                Ok(())
            })*
            other => Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
    };
}

impl ConfigPatch {
    /// Overlay: fields set on `self` win over `base`.
    pub fn merged_over(&self, base: &ConfigPatch) -> ConfigPatch {
        merge_fields!(self, base;
            sampling_interval, bandwidth, mean_shift_max_iters, mean_shift_tol,
            dbscan_eps, dbscan_min_pts, descriptor_radius, noise_bound,
            min_correspondences, p_exponent, fine_max_iters, max_corr_dist,
            fine_tol, dot_threshold, pair_radius, grid_cell, mask_stride,
            mask_margin, mask_min_points, candidates, dedup_rotation_deg,
            dedup_translation, seed,
        )
    }

    /// Sets one field by its name from a string value.
    pub fn set_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        assign_kv!(self, key, value;
            sampling_interval, bandwidth, mean_shift_max_iters, mean_shift_tol,
            dbscan_eps, dbscan_min_pts, descriptor_radius, noise_bound,
            min_correspondences, p_exponent, fine_max_iters, max_corr_dist,
            fine_tol, dot_threshold, pair_radius, grid_cell, mask_stride,
            mask_margin, mask_min_points, candidates, dedup_rotation_deg,
            dedup_translation, seed,
        )
    }

    /// Loads a patch from a file. A leading `{` selects JSON; otherwise the
    /// file is read as `key = value` lines (blank lines and `#` comments
    /// allowed).
    pub fn from_file(path: &Path) -> Result<ConfigPatch> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            return Ok(serde_json::from_str(&text)?);
        }
        let mut patch = ConfigPatch::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                )));
            };
            patch.set_key_value(key, value)?;
        }
        Ok(patch)
    }
}

impl RunConfig {
    /// Resolves a patch against the defaults derived from `base_interval`
    /// (which the patch's own `sampling_interval` may override — derived
    /// defaults then follow the overridden interval).
    pub fn resolve(base_interval: f64, patch: &ConfigPatch) -> Result<RunConfig> {
        let interval = patch.sampling_interval.unwrap_or(base_interval);
        let cfg = RunConfig {
            sampling_interval: interval,
            bandwidth: patch.bandwidth.unwrap_or(2.0 * interval),
            mean_shift_max_iters: patch.mean_shift_max_iters.unwrap_or(100),
            mean_shift_tol: patch.mean_shift_tol.unwrap_or(0.01),
            dbscan_eps: patch.dbscan_eps.unwrap_or(interval),
            dbscan_min_pts: patch.dbscan_min_pts.unwrap_or(2),
            descriptor_radius: patch.descriptor_radius.unwrap_or(3.0 * interval),
            noise_bound: patch.noise_bound.unwrap_or(interval),
            min_correspondences: patch.min_correspondences.unwrap_or(3),
            p_exponent: patch.p_exponent.unwrap_or(0.4),
            fine_max_iters: patch.fine_max_iters.unwrap_or(50),
            max_corr_dist: patch.max_corr_dist.unwrap_or(3.0 * interval),
            fine_tol: patch.fine_tol.unwrap_or(1e-4),
            dot_threshold: patch.dot_threshold.unwrap_or(0.5),
            pair_radius: patch.pair_radius.unwrap_or(interval / 2.0 + 1e-6),
            grid_cell: patch.grid_cell.unwrap_or(interval),
            mask_stride: patch.mask_stride,
            mask_margin: patch.mask_margin.unwrap_or(interval),
            mask_min_points: patch.mask_min_points.unwrap_or(50),
            candidates: patch.candidates.unwrap_or(5),
            dedup_rotation_deg: patch.dedup_rotation_deg.unwrap_or(3.0),
            dedup_translation: patch.dedup_translation.unwrap_or(interval),
            seed: patch.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for full-size inputs (5 Å lattice).
    pub fn default_global() -> RunConfig {
        RunConfig::resolve(DEFAULT_INTERVAL_GLOBAL, &ConfigPatch::default())
            .expect("builtin defaults are valid")
    }

    /// Defaults for small or single-chain inputs (3 Å lattice).
    pub fn default_small() -> RunConfig {
        RunConfig::resolve(DEFAULT_INTERVAL_SMALL, &ConfigPatch::default())
            .expect("builtin defaults are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sampling_interval", self.sampling_interval),
            ("bandwidth", self.bandwidth),
            ("dbscan_eps", self.dbscan_eps),
            ("descriptor_radius", self.descriptor_radius),
            ("noise_bound", self.noise_bound),
            ("max_corr_dist", self.max_corr_dist),
            ("pair_radius", self.pair_radius),
            ("grid_cell", self.grid_cell),
            ("dedup_rotation_deg", self.dedup_rotation_deg),
            ("dedup_translation", self.dedup_translation),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if let Some(stride) = self.mask_stride {
            if !(stride > 0.0) || !stride.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "mask_stride must be positive and finite, got {stride}"
                )));
            }
        }
        if !(self.mask_margin >= 0.0) || !self.mask_margin.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "mask_margin must be non-negative, got {}",
                self.mask_margin
            )));
        }
        if !(self.mean_shift_tol >= 0.0) || !self.mean_shift_tol.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "mean_shift_tol must be non-negative, got {}",
                self.mean_shift_tol
            )));
        }
        if !(self.fine_tol >= 0.0) || !self.fine_tol.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fine_tol must be non-negative, got {}",
                self.fine_tol
            )));
        }
        if !(self.p_exponent > 0.0 && self.p_exponent < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_exponent must lie in (0, 1), got {}",
                self.p_exponent
            )));
        }
        if !(self.dot_threshold > 0.0 && self.dot_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dot_threshold must lie in (0, 1), got {}",
                self.dot_threshold
            )));
        }
        if self.dbscan_min_pts == 0 {
            return Err(Error::InvalidConfig("dbscan_min_pts must be ≥ 1".into()));
        }
        if self.min_correspondences < 3 {
            return Err(Error::InvalidConfig(
                "min_correspondences must be ≥ 3".into(),
            ));
        }
        if self.fine_max_iters == 0 || self.mean_shift_max_iters == 0 {
            return Err(Error::InvalidConfig("iteration caps must be ≥ 1".into()));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidConfig("candidates must be ≥ 1".into()));
        }
        Ok(())
    }
}
