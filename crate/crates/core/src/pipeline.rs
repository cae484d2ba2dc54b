//! Preprocessing of a shape: visibility, mask decomposition, lifting,
//! feature pooling and graph construction.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::container::{read_preprocessed, read_shape, write_preprocessed, Manifest, Preprocessed, ShapeInputs};
use crate::error::{Error, Result};
use crate::features::pool_point_features;
use crate::geometry::{rasterize_visibility, PointCloud, VisibilityMap};
use crate::graph::{build_segment_graph, GraphThresholds};
use crate::masks::{decompose_view_masks, lift_segments, DEFAULT_MIN_PIXELS, DEFAULT_MIN_SEGMENT_POINTS};
use crate::model::PreparedShape;
use crate::scalar::Scalar;

/// Allowed drift of a stored cloud from exact normalization (`f32` storage).
pub const STORED_CLOUD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub min_pixels: usize,
    pub min_points: usize,
    pub thresholds: GraphThresholds,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_pixels: DEFAULT_MIN_PIXELS,
            min_points: DEFAULT_MIN_SEGMENT_POINTS,
            thresholds: GraphThresholds::default(),
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    /// Visibility and feature pooling.
    pub render: f64,
    /// Decomposition and lifting.
    pub masks: f64,
    pub build_graph: f64,
}

impl StageTimings {
    pub fn add(&mut self, other: &StageTimings) {
        self.render += other.render;
        self.masks += other.masks;
        self.build_graph += other.build_graph;
    }
}

pub fn compute_visibility(inputs: &ShapeInputs) -> Vec<VisibilityMap> {
    let render = inputs.manifest.render;
    inputs
        .manifest
        .cameras
        .iter()
        .map(|c| rasterize_visibility(&inputs.cloud, c, render))
        .collect()
}

pub fn preprocess_inputs(inputs: &ShapeInputs, config: &PreprocessConfig) -> Result<(Preprocessed, StageTimings)> {
    inputs.cloud.validate(STORED_CLOUD_TOLERANCE)?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let vis = compute_visibility(inputs);
    let bank = pool_point_features(&inputs.features, &vis, inputs.cloud.len())?;
    if bank.channels != inputs.manifest.feature_channels {
        return Err(Error::Configuration(format!(
            "features have {} channels, manifest says {}",
            bank.channels, inputs.manifest.feature_channels
        )));
    }
    timings.render = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let regions: Vec<_> = inputs.masks.iter().map(|m| decompose_view_masks(m, config.min_pixels)).collect();
    let segments = lift_segments(&regions, &vis, &inputs.cloud, config.min_points)?;
    timings.masks = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let graph = build_segment_graph(&segments, &inputs.cloud.positions, config.thresholds)?;
    timings.build_graph = t.elapsed().as_secs_f64();

    Ok((Preprocessed { segments, graph, bank }, timings))
}

/// Preprocesses a shape directory in place.
pub fn preprocess_dir(dir: &Path, config: &PreprocessConfig) -> Result<StageTimings> {
    let mut inputs = read_shape(dir)?;
    let (pre, timings) = preprocess_inputs(&inputs, config)?;
    write_preprocessed(dir, &mut inputs.manifest, &pre)?;
    Ok(timings)
}

fn shape_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn prepare_shape<T: Scalar>(name: &str, cloud: &PointCloud, pre: &Preprocessed) -> Result<PreparedShape<T>> {
    PreparedShape::new(name, cloud, &pre.segments, &pre.graph, &pre.bank)
}

/// Loads a preprocessed directory as network input.
pub fn load_prepared<T: Scalar>(dir: &Path) -> Result<(Manifest, PreparedShape<T>)> {
    let inputs = read_shape(dir)?;
    if !inputs.manifest.is_preprocessed() {
        return Err(Error::MissingArtifact {
            shape: shape_name(dir),
            what: "preprocessing output (run `preprocess`)".into(),
        });
    }
    let pre = read_preprocessed(dir, &inputs.manifest, &inputs.cloud)?;
    let shape = prepare_shape(&shape_name(dir), &inputs.cloud, &pre)?;
    Ok((inputs.manifest, shape))
}
