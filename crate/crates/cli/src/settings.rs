//! `key=value` configuration files.

use std::path::Path;
use std::str::FromStr;

use seggraph_core::pipeline::PreprocessConfig;
use seggraph_core::synth::SynthConfig;
use seggraph_core::TrainConfig;

use crate::CliError;

/// Every tunable of the pipeline, starting from library defaults.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
}

pub const KEYS: &[&str] = &[
    "corpus_seed",
    "num_shapes",
    "num_train",
    "parts",
    "points",
    "feature_noise",
    "split_rate",
    "merge_rate",
    "object_mask",
    "channels",
    "views",
    "resolution",
    "camera_radius",
    "patch_size",
    "splat",
    "depth_epsilon",
    "min_pixels",
    "min_points",
    "iou_threshold",
    "adjacency_threshold",
    "seed",
    "shots",
    "epochs",
    "lr",
    "segments",
    "segment_encoder",
    "quality_unpool",
    "overlap_edges",
    "adjacency_edges",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value `{value}` for `{key}`")))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "corpus_seed" => s.seed = parse(key, value)?,
            "num_shapes" => s.num_shapes = parse(key, value)?,
            "num_train" => s.num_train = parse(key, value)?,
            "parts" => s.parts_per_shape = parse(key, value)?,
            "points" => s.points_per_shape = parse(key, value)?,
            "feature_noise" => s.feature_noise = parse(key, value)?,
            "split_rate" => s.split_rate = parse(key, value)?,
            "merge_rate" => s.merge_rate = parse(key, value)?,
            "object_mask" => s.object_mask = parse(key, value)?,
            "channels" => s.channels = parse(key, value)?,
            "views" => s.views = parse(key, value)?,
            "resolution" => s.resolution = parse(key, value)?,
            "camera_radius" => s.camera_radius = parse(key, value)?,
            "patch_size" => s.patch_size = parse(key, value)?,
            "splat" => s.render.splat = parse(key, value)?,
            "depth_epsilon" => s.render.depth_epsilon = parse(key, value)?,
            "min_pixels" => self.preprocess.min_pixels = parse(key, value)?,
            "min_points" => self.preprocess.min_points = parse(key, value)?,
            "iou_threshold" => self.preprocess.thresholds.iou = parse(key, value)?,
            "adjacency_threshold" => self.preprocess.thresholds.adjacency = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "shots" => t.shots = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "segments" => t.ablation.segments = parse(key, value)?,
            "segment_encoder" => t.ablation.segment_encoder = parse(key, value)?,
            "quality_unpool" => t.ablation.quality_unpool = parse(key, value)?,
            "overlap_edges" => t.ablation.overlap_edges = parse(key, value)?,
            "adjacency_edges" => t.ablation.adjacency_edges = parse(key, value)?,
            _ => {
                return Err(CliError::usage(format!(
                    "unknown configuration key `{key}`; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut settings = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
            settings.apply_text(&text)?;
        }
        Ok(settings)
    }
}
