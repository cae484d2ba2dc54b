//! Constant per-shape inputs of the network, computed once before training.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::PointFeatureBank;
use crate::geometry::{PointCloud, Vec3};
use crate::graph::SegmentGraph;
use crate::masks::{Segment, SegmentSet};
use crate::nn::Tensor;
use crate::scalar::{lit, Scalar};

/// Lower bound on per-axis segment extents.
pub const EXTENT_EPSILON: f64 = 1e-6;

/// Position of each member relative to the segment centroid, divided per
/// axis by the segment's extent along that axis.
pub fn relative_normalize(positions: &[Vec3], segment: &Segment) -> Vec<Vec3> {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &p in &segment.point_ids {
        lo = lo.inf(&positions[p as usize]);
        hi = hi.sup(&positions[p as usize]);
    }
    let extent = (hi - lo).map(|e| e.max(EXTENT_EPSILON));
    segment
        .point_ids
        .iter()
        .map(|&p| (positions[p as usize] - segment.centroid).component_div(&extent))
        .collect()
}

/// `|n · (p - c) / |p - c||`: how squarely the camera at `c` sees the
/// surface at `p`.
pub fn raw_view_quality(normal: &Vec3, point: &Vec3, camera: &Vec3) -> Result<f64> {
    let ray = point - camera;
    let len = ray.norm();
    if len < 1e-12 {
        return Err(Error::GeometricSingularity("point coincides with camera".into()));
    }
    Ok((normal.dot(&ray) / len).abs())
}

/// Directed edge list for attention: both directions of every undirected
/// edge plus a self-loop per node, sorted by `(dst, src)`.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn with_self_loops(nodes: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = (0..nodes).map(|i| (i, i)).collect();
        for &(a, b) in edges {
            let (a, b) = (a as usize, b as usize);
            if a >= nodes || b >= nodes {
                return Err(Error::Graph(format!("edge ({a}, {b}) out of range for {nodes} nodes")));
            }
            if a != b {
                pairs.push((b, a));
                pairs.push((a, b));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self {
            dst: pairs.iter().map(|p| p.0).collect(),
            src: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Everything the network consumes for one shape.
///
/// A membership ("entry") is one (segment, point) pair; entries are ordered
/// by segment, then by point id.
#[derive(Debug, Clone)]
pub struct PreparedShape<T> {
    pub name: String,
    pub num_points: usize,
    pub num_segments: usize,
    pub in_channels: usize,
    /// `num_points × in_channels` pooled image features.
    pub point_features: Tensor<T>,
    pub entry_segment: Arc<[usize]>,
    pub entry_point: Arc<[usize]>,
    /// `entries × 6`: point normal, then relative position.
    pub geom_input: Tensor<T>,
    /// `entries × 1` raw view-quality weights.
    pub raw_quality: Tensor<T>,
    /// `1 / |segment|` per entry.
    pub mean_pool: Arc<[T]>,
    /// `1 / (segments containing the point)` per entry.
    pub uniform_unpool: Arc<[T]>,
    pub overlap: EdgeIndex,
    pub adjacency: EdgeIndex,
    pub labels: Option<Arc<[i64]>>,
}

impl<T: Scalar> PreparedShape<T> {
    pub fn new(
        name: impl Into<String>,
        cloud: &PointCloud,
        segments: &SegmentSet,
        graph: &SegmentGraph,
        bank: &PointFeatureBank,
    ) -> Result<Self> {
        let n = cloud.len();
        if bank.num_points() != n {
            return Err(Error::Configuration(format!(
                "feature bank has {} rows for {n} points",
                bank.num_points()
            )));
        }
        if graph.node_count != segments.len() {
            return Err(Error::Configuration("graph does not match segment set".into()));
        }
        let mut entry_segment = Vec::new();
        let mut entry_point = Vec::new();
        let mut geom = Vec::new();
        let mut quality = Vec::new();
        let mut mean_pool = Vec::new();
        for (s, seg) in segments.segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::ContractViolation(format!("segment {s} is empty")));
            }
            let rel = relative_normalize(&cloud.positions, seg);
            let inv = lit::<T>(1.0 / seg.len() as f64);
            for (&p, r) in seg.point_ids.iter().zip(&rel) {
                let p = p as usize;
                let nrm = &cloud.normals[p];
                entry_segment.push(s);
                entry_point.push(p);
                geom.extend([nrm.x, nrm.y, nrm.z, r.x, r.y, r.z].map(lit::<T>));
                quality.push(lit(raw_view_quality(nrm, &cloud.positions[p], &seg.camera_position)?));
                mean_pool.push(inv);
            }
        }
        let uniform_unpool = entry_point
            .iter()
            .map(|&p| lit::<T>(1.0 / segments.point_memberships[p].len() as f64))
            .collect();
        let e = entry_segment.len();
        let features = bank.features.iter().map(|&x| lit::<T>(x as f64)).collect();
        let labels = cloud
            .labels
            .as_ref()
            .map(|l| l.iter().map(|&x| x as i64).collect::<Arc<[i64]>>());
        Ok(Self {
            name: name.into(),
            num_points: n,
            num_segments: segments.len(),
            in_channels: bank.channels,
            point_features: Tensor::new(vec![n, bank.channels], features)?,
            entry_segment: entry_segment.into(),
            entry_point: entry_point.into(),
            geom_input: Tensor::new(vec![e, 6], geom)?,
            raw_quality: Tensor::new(vec![e, 1], quality)?,
            mean_pool: mean_pool.into(),
            uniform_unpool,
            overlap: EdgeIndex::with_self_loops(segments.len(), &graph.overlap_edges)?,
            adjacency: EdgeIndex::with_self_loops(segments.len(), &graph.adjacency_edges)?,
            labels,
        })
    }

    pub fn num_entries(&self) -> usize {
        self.entry_segment.len()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x >= 0).count())
    }

    pub fn cast<U: Scalar>(&self) -> PreparedShape<U> {
        let conv = |a: &Arc<[T]>| a.iter().map(|x| lit::<U>(x.to_f64().unwrap())).collect::<Arc<[U]>>();
        PreparedShape {
            name: self.name.clone(),
            num_points: self.num_points,
            num_segments: self.num_segments,
            in_channels: self.in_channels,
            point_features: self.point_features.cast(),
            entry_segment: self.entry_segment.clone(),
            entry_point: self.entry_point.clone(),
            geom_input: self.geom_input.cast(),
            raw_quality: self.raw_quality.cast(),
            mean_pool: conv(&self.mean_pool),
            uniform_unpool: conv(&self.uniform_unpool),
            overlap: self.overlap.clone(),
            adjacency: self.adjacency.clone(),
            labels: self.labels.clone(),
        }
    }
}
