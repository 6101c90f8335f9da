use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PartGrid;
use crate::head::{HeadDims, TrainConfig};
use crate::regroup::RegroupConfig;
use crate::spatial::OffsetScale;

/// Pipeline configuration. Every field has a default, so a config file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Object part grid `R`.
    pub grid_size: usize,
    /// Minimum object fraction of a bin for a valid part.
    pub min_bin_ratio: f64,
    /// Part-box side relative to the instance's longest side.
    pub part_box_ratio: f64,
    pub holistic_res: usize,
    pub part_res: usize,
    pub spatial_res: usize,
    /// Channels of the feature map.
    pub channels: usize,
    pub branch_width: usize,
    pub ho_width: usize,
    pub oh_width: usize,
    pub attention_hidden: usize,
    pub inter_hidden: usize,
    pub s_min: f64,
    pub beta: f64,
    /// Humans are kept when their score is strictly above this.
    pub human_threshold: f64,
    /// Objects are kept when their score is strictly above this.
    pub object_threshold: f64,
    pub offset_scale: OffsetScale,
    /// Keypoint-driven inputs (human parts, skeleton map). When off they are zeros.
    pub use_keypoints: bool,
    /// Mask-driven inputs (object parts). When off they are zeros.
    pub use_object_parts: bool,
    pub regroup: bool,
    pub feature_seed: u64,
    pub feature_noise: f64,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            grid_size: 3,
            min_bin_ratio: 1.0 / 16.0,
            part_box_ratio: 0.1,
            holistic_res: 7,
            part_res: 5,
            spatial_res: 64,
            channels: 256,
            branch_width: 256,
            ho_width: 512,
            oh_width: 256,
            attention_hidden: 64,
            inter_hidden: 256,
            s_min: 0.5,
            beta: 0.95,
            human_threshold: 0.5,
            object_threshold: 0.4,
            offset_scale: OffsetScale::Pixels,
            use_keypoints: true,
            use_object_parts: true,
            regroup: true,
            feature_seed: 0,
            feature_noise: 0.05,
            train: TrainConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(format!("config {name} = {v} outside [0, 1]")))
            }
        };
        unit("s_min", self.s_min)?;
        unit("beta", self.beta)?;
        unit("human_threshold", self.human_threshold)?;
        unit("object_threshold", self.object_threshold)?;
        unit("train.momentum", self.train.momentum)?;
        if !(self.min_bin_ratio > 0.0 && self.min_bin_ratio < 1.0) {
            return Err(Error::validation(format!(
                "config min_bin_ratio = {} outside (0, 1)",
                self.min_bin_ratio
            )));
        }
        if !(self.part_box_ratio > 0.0 && self.part_box_ratio.is_finite()) {
            return Err(Error::validation("config part_box_ratio must be positive"));
        }
        if self.feature_noise < 0.0 || !self.feature_noise.is_finite() {
            return Err(Error::validation("config feature_noise must be non-negative"));
        }
        if self.train.learning_rate < 0.0 || self.train.loss_weight < 0.0 {
            return Err(Error::validation("learning rate and loss weight must be non-negative"));
        }
        self.head_dims(1).validate()
    }

    pub fn head_dims(&self, num_actions: usize) -> HeadDims {
        HeadDims {
            channels: self.channels,
            holistic_res: self.holistic_res,
            part_res: self.part_res,
            spatial_res: self.spatial_res,
            object_grid: self.grid_size,
            branch_width: self.branch_width,
            ho_width: self.ho_width,
            oh_width: self.oh_width,
            attention_hidden: self.attention_hidden,
            inter_hidden: self.inter_hidden,
            num_actions,
        }
    }

    pub fn part_grid(&self) -> PartGrid {
        PartGrid {
            grid: self.grid_size,
            min_ratio: self.min_bin_ratio,
            box_ratio: self.part_box_ratio,
        }
    }

    pub fn regroup_config(&self) -> RegroupConfig {
        RegroupConfig {
            s_min: self.s_min,
            beta: self.beta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!((c.grid_size, c.holistic_res, c.part_res), (3, 7, 5));
        assert_eq!(c.min_bin_ratio, 0.0625);
        assert_eq!(c.train.negatives_per_positive, 3);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: Config = serde_json::from_str(r#"{"channels": 4, "train": {"steps": 10}}"#).unwrap();
        assert_eq!(c.channels, 4);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.s_min, 0.5);
        assert!(serde_json::from_str::<Config>(r#"{"chanels": 4}"#).is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        let c = Config {
            beta: 1.5,
            ..Config::default()
        };
        assert!(c.validate().is_err());
        let c = Config {
            channels: 0,
            ..Config::default()
        };
        assert!(c.validate().is_err());
    }
}
