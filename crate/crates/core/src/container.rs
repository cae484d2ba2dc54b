//! On-disk format shared by the synthetic generator, the feature extractor
//! and every downstream stage.
//!
//! A blob is `"SGB1"`, a dtype code byte (0 f32, 1 u32, 2 u16, 3 u8), a
//! dimension count byte, that many little-endian `u32` dimensions, then the
//! row-major little-endian payload. A shape directory holds `manifest.json`
//! plus the blobs it names, with paths relative to the directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{PatchFeatureGrid, PointFeatureBank};
use crate::geometry::{CameraView, PointCloud, RasterConfig, Vec3};
use crate::graph::SegmentGraph;
use crate::masks::{MaskStack, Segment, SegmentSet};
use crate::model::{Ablation, ModelConfig};
use crate::nn::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"SGB1";
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
/// Stored in `u32` label blobs for unlabeled points.
pub const LABEL_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U16(Vec<u16>),
    U8(Vec<u8>),
}

impl BlobData {
    pub fn code(&self) -> u8 {
        match self {
            BlobData::F32(_) => 0,
            BlobData::U32(_) => 1,
            BlobData::U16(_) => 2,
            BlobData::U8(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::U32(v) => v.len(),
            BlobData::U16(v) => v.len(),
            BlobData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn type_name(&self) -> &'static str {
        ["f32", "u32", "u16", "u8"][self.code() as usize]
    }
}

fn element_size(code: u8) -> Option<usize> {
    match code {
        0 | 1 => Some(4),
        2 => Some(2),
        3 => Some(1),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub dims: Vec<usize>,
    pub data: BlobData,
}

impl Blob {
    pub fn new(dims: Vec<usize>, data: BlobData) -> Result<Self> {
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Configuration(format!("blob dims {dims:?} not representable")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Configuration(format!(
                "blob dims {dims:?} do not match {} elements",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, BlobData::F32(data))
    }

    pub fn u32(dims: Vec<usize>, data: Vec<u32>) -> Result<Self> {
        Self::new(dims, BlobData::U32(data))
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(dims, BlobData::U8(data))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.data.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            BlobData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            BlobData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Parses only the header: dtype code and dims.
    pub fn decode_header(bytes: &[u8]) -> std::result::Result<(u8, Vec<usize>, usize), String> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err("missing SGB1 magic".into());
        }
        let code = bytes[4];
        element_size(code).ok_or_else(|| format!("unknown dtype code {code}"))?;
        let ndims = bytes[5] as usize;
        let start = 6 + 4 * ndims;
        if bytes.len() < start {
            return Err("truncated header".into());
        }
        let dims = bytes[6..start]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        Ok((code, dims, start))
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (code, dims, start) = Self::decode_header(bytes)?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc: usize, &d| acc.checked_mul(d))
            .ok_or("dims overflow")?;
        let size = element_size(code).expect("checked");
        let payload = &bytes[start..];
        if Some(payload.len()) != count.checked_mul(size) {
            return Err(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                count.saturating_mul(size)
            ));
        }
        let data = match code {
            0 => BlobData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            1 => BlobData::U32(payload.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
            2 => BlobData::U16(payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()),
            _ => BlobData::U8(payload.to_vec()),
        };
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }

    fn expect_dims(&self, path: &Path, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::format(path, format!("dims {:?}, expected {dims:?}", self.dims)));
        }
        Ok(())
    }

    fn mismatch(&self, path: &Path, want: &str) -> Error {
        Error::format(path, format!("dtype {}, expected {want}", self.data.type_name()))
    }

    pub fn into_f32(self, path: &Path) -> Result<Vec<f32>> {
        match self.data {
            BlobData::F32(v) => Ok(v),
            _ => Err(self.mismatch(path, "f32")),
        }
    }

    pub fn into_u32(self, path: &Path) -> Result<Vec<u32>> {
        match self.data {
            BlobData::U32(v) => Ok(v),
            _ => Err(self.mismatch(path, "u32")),
        }
    }

    pub fn into_u8(self, path: &Path) -> Result<Vec<u8>> {
        match self.data {
            BlobData::U8(v) => Ok(v),
            _ => Err(self.mismatch(path, "u8")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBlobs {
    pub offsets: String,
    pub points: String,
    pub views: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBlobs {
    pub overlap: String,
    pub adjacency: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBankBlobs {
    pub features: String,
    pub view_counts: String,
}

/// Relative blob paths of a shape directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BlobPaths {
    pub points: String,
    pub normals: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub masks: Vec<String>,
    pub features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<SegmentBlobs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphBlobs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_features: Option<FeatureBankBlobs>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// `synthetic` or `extractor`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub category: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub num_points: usize,
    pub num_views: usize,
    pub feature_channels: usize,
    pub patch_size: usize,
    pub cameras: Vec<CameraView>,
    pub render: RasterConfig,
    pub blobs: BlobPaths,
    pub provenance: Provenance,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                shape: dir.display().to_string(),
                what: MANIFEST_FILE.into(),
            });
        }
        let m: Manifest = read_json(&path)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::format(&path, format!("unsupported schema version {}", m.schema_version)));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn height(&self) -> usize {
        self.cameras.first().map_or(0, CameraView::height)
    }

    pub fn width(&self) -> usize {
        self.cameras.first().map_or(0, CameraView::width)
    }

    pub fn is_preprocessed(&self) -> bool {
        let b = &self.blobs;
        b.segments.is_some() && b.graph.is_some() && b.point_features.is_some()
    }

    /// Checks internal consistency and that every referenced blob exists
    /// with the dims the manifest implies.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let bad = |msg: String| Err(Error::format(dir.join(MANIFEST_FILE), msg));
        if self.num_classes == 0 || self.class_names.len() != self.num_classes {
            return bad(format!("{} class names for {} classes", self.class_names.len(), self.num_classes));
        }
        if self.cameras.len() != self.num_views || self.blobs.masks.len() != self.num_views || self.blobs.features.len() != self.num_views {
            return bad("camera, mask and feature counts must equal num_views".into());
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            if cam.view_id != i {
                return bad(format!("camera {i} has view_id {}", cam.view_id));
            }
            cam.validate()?;
        }
        let n = self.num_points;
        let header = |rel: &str| -> Result<(u8, Vec<usize>)> {
            let path = dir.join(rel);
            let bytes = fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingArtifact {
                    shape: dir.display().to_string(),
                    what: rel.to_string(),
                },
                _ => Error::io(&path, e),
            })?;
            let blob = Blob::decode(&bytes).map_err(|m| Error::format(&path, m))?;
            Ok((blob.data.code(), blob.dims))
        };
        let expect = |rel: &str, code: u8, check: &dyn Fn(&[usize]) -> bool| -> Result<()> {
            let (c, dims) = header(rel)?;
            if c != code || !check(&dims) {
                return Err(Error::format(dir.join(rel), format!("dtype {c} dims {dims:?} disagree with manifest")));
            }
            Ok(())
        };
        expect(&self.blobs.points, 0, &|d| d == [n, 3])?;
        expect(&self.blobs.normals, 0, &|d| d == [n, 3])?;
        if let Some(c) = &self.blobs.colors {
            expect(c, 0, &|d| d == [n, 3])?;
        }
        if let Some(l) = &self.blobs.labels {
            expect(l, 1, &|d| d == [n])?;
        }
        for (rel, cam) in self.blobs.masks.iter().zip(&self.cameras) {
            let (h, w) = (cam.height(), cam.width());
            expect(rel, 3, &|d| d.len() == 3 && d[1] == h && d[2] == w)?;
        }
        for (rel, cam) in self.blobs.features.iter().zip(&self.cameras) {
            let (rows, cols) = PatchFeatureGrid::dims_for(cam.width(), cam.height(), self.patch_size);
            expect(rel, 0, &|d| d == [rows, cols, self.feature_channels])?;
        }
        if let Some(s) = &self.blobs.segments {
            let (_, off) = header(&s.offsets)?;
            expect(&s.offsets, 1, &|d| d.len() == 1 && d[0] >= 1)?;
            expect(&s.views, 1, &|d| d == [off[0] - 1])?;
            expect(&s.points, 1, &|d| d.len() == 1)?;
        }
        if let Some(g) = &self.blobs.graph {
            expect(&g.overlap, 1, &|d| d.len() == 2 && d[1] == 2)?;
            expect(&g.adjacency, 1, &|d| d.len() == 2 && d[1] == 2)?;
        }
        if let Some(f) = &self.blobs.point_features {
            expect(&f.features, 0, &|d| d == [n, self.feature_channels])?;
            expect(&f.view_counts, 1, &|d| d == [n])?;
        }
        Ok(())
    }
}

fn vec3_blob(v: &[Vec3]) -> Result<Blob> {
    Blob::f32(vec![v.len(), 3], v.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect())
}

fn read_vec3(dir: &Path, rel: &str, n: usize) -> Result<Vec<Vec3>> {
    let path = dir.join(rel);
    let blob = Blob::read(&path)?;
    blob.expect_dims(&path, &[n, 3])?;
    Ok(blob
        .into_f32(&path)?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect())
}

pub fn labels_to_u32(labels: &[i32]) -> Vec<u32> {
    labels.iter().map(|&l| if l < 0 { LABEL_SENTINEL } else { l as u32 }).collect()
}

pub fn labels_from_u32(raw: &[u32]) -> Vec<i32> {
    raw.iter().map(|&l| if l == LABEL_SENTINEL { -1 } else { l as i32 }).collect()
}

/// Raw inputs of one shape as produced by a generator or extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeInputs {
    pub manifest: Manifest,
    pub cloud: PointCloud,
    pub masks: Vec<MaskStack>,
    pub features: Vec<PatchFeatureGrid>,
}

/// Writes blobs first and the manifest last, so a directory with a
/// manifest is complete.
pub fn write_shape(dir: &Path, shape: &ShapeInputs) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &shape.manifest;
    let cloud = &shape.cloud;
    if cloud.len() != m.num_points || shape.masks.len() != m.num_views || shape.features.len() != m.num_views {
        return Err(Error::Configuration("shape contents disagree with manifest".into()));
    }
    vec3_blob(&cloud.positions)?.write(&dir.join(&m.blobs.points))?;
    vec3_blob(&cloud.normals)?.write(&dir.join(&m.blobs.normals))?;
    if let (Some(rel), Some(colors)) = (&m.blobs.colors, &cloud.colors) {
        Blob::f32(vec![colors.len(), 3], colors.iter().flatten().map(|&c| c as f32).collect())?.write(&dir.join(rel))?;
    }
    if let (Some(rel), Some(labels)) = (&m.blobs.labels, &cloud.labels) {
        Blob::u32(vec![labels.len()], labels_to_u32(labels))?.write(&dir.join(rel))?;
    }
    for (rel, stack) in m.blobs.masks.iter().zip(&shape.masks) {
        let data = stack.masks.iter().flatten().map(|&b| u8::from(b)).collect();
        Blob::u8(vec![stack.masks.len(), stack.height, stack.width], data)?.write(&dir.join(rel))?;
    }
    for (rel, grid) in m.blobs.features.iter().zip(&shape.features) {
        Blob::f32(vec![grid.rows, grid.cols, grid.channels], grid.data.clone())?.write(&dir.join(rel))?;
    }
    m.write(dir)?;
    m.validate(dir)
}

/// Reads and validates the raw inputs of a shape directory.
pub fn read_shape(dir: &Path) -> Result<ShapeInputs> {
    let manifest = Manifest::read(dir)?;
    manifest.validate(dir)?;
    let n = manifest.num_points;
    let positions = read_vec3(dir, &manifest.blobs.points, n)?;
    let normals = read_vec3(dir, &manifest.blobs.normals, n)?;
    let colors = match &manifest.blobs.colors {
        Some(rel) => Some(read_vec3(dir, rel, n)?.into_iter().map(|c| [c.x, c.y, c.z]).collect()),
        None => None,
    };
    let labels = match &manifest.blobs.labels {
        Some(rel) => {
            let path = dir.join(rel);
            Some(labels_from_u32(&Blob::read(&path)?.into_u32(&path)?))
        }
        None => None,
    };
    let cloud = PointCloud {
        positions,
        normals,
        colors,
        labels,
        category: manifest.category.clone(),
        num_classes: manifest.num_classes,
    };
    let mut masks = Vec::with_capacity(manifest.num_views);
    for (rel, cam) in manifest.blobs.masks.iter().zip(&manifest.cameras) {
        let path = dir.join(rel);
        let blob = Blob::read(&path)?;
        let count = blob.dims[0];
        let (h, w) = (blob.dims[1], blob.dims[2]);
        let raw = blob.into_u8(&path)?;
        let stacks = raw.chunks(w * h).take(count).map(|m| m.iter().map(|&b| b != 0).collect()).collect();
        masks.push(MaskStack::new(cam.view_id, w, h, stacks)?);
    }
    let mut features = Vec::with_capacity(manifest.num_views);
    for (rel, cam) in manifest.blobs.features.iter().zip(&manifest.cameras) {
        let path = dir.join(rel);
        let blob = Blob::read(&path)?;
        let (rows, cols, ch) = (blob.dims[0], blob.dims[1], blob.dims[2]);
        features.push(PatchFeatureGrid::new(cam.view_id, rows, cols, ch, manifest.patch_size, blob.into_f32(&path)?)?);
    }
    Ok(ShapeInputs {
        manifest,
        cloud,
        masks,
        features,
    })
}

/// Outputs of preprocessing stored next to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub segments: SegmentSet,
    pub graph: SegmentGraph,
    pub bank: PointFeatureBank,
}

fn edge_blob(edges: &[(u32, u32)]) -> Result<Blob> {
    Blob::u32(vec![edges.len(), 2], edges.iter().flat_map(|&(a, b)| [a, b]).collect())
}

fn read_edges(path: &Path) -> Result<Vec<(u32, u32)>> {
    Ok(Blob::read(path)?.into_u32(path)?.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// Writes preprocessing blobs and records them in the manifest.
pub fn write_preprocessed(dir: &Path, manifest: &mut Manifest, pre: &Preprocessed) -> Result<()> {
    let segs = &pre.segments.segments;
    let mut offsets = Vec::with_capacity(segs.len() + 1);
    offsets.push(0u32);
    let mut points = Vec::new();
    for s in segs {
        points.extend_from_slice(&s.point_ids);
        offsets.push(points.len() as u32);
    }
    let views: Vec<u32> = segs.iter().map(|s| s.view_id as u32).collect();
    let seg_blobs = SegmentBlobs {
        offsets: "segments/offsets.sgb".into(),
        points: "segments/points.sgb".into(),
        views: "segments/views.sgb".into(),
    };
    Blob::u32(vec![offsets.len()], offsets)?.write(&dir.join(&seg_blobs.offsets))?;
    Blob::u32(vec![points.len()], points)?.write(&dir.join(&seg_blobs.points))?;
    Blob::u32(vec![views.len()], views)?.write(&dir.join(&seg_blobs.views))?;

    let graph_blobs = GraphBlobs {
        overlap: "graph/overlap.sgb".into(),
        adjacency: "graph/adjacency.sgb".into(),
    };
    edge_blob(&pre.graph.overlap_edges)?.write(&dir.join(&graph_blobs.overlap))?;
    edge_blob(&pre.graph.adjacency_edges)?.write(&dir.join(&graph_blobs.adjacency))?;

    let bank_blobs = FeatureBankBlobs {
        features: "point_features.sgb".into(),
        view_counts: "view_counts.sgb".into(),
    };
    let bank = &pre.bank;
    Blob::f32(vec![bank.num_points(), bank.channels], bank.features.clone())?.write(&dir.join(&bank_blobs.features))?;
    Blob::u32(vec![bank.num_points()], bank.view_count.clone())?.write(&dir.join(&bank_blobs.view_counts))?;

    manifest.blobs.segments = Some(seg_blobs);
    manifest.blobs.graph = Some(graph_blobs);
    manifest.blobs.point_features = Some(bank_blobs);
    manifest.write(dir)?;
    manifest.validate(dir)
}

/// Reads preprocessing outputs; segment camera positions and centroids are
/// rebuilt from the manifest cameras and the cloud.
pub fn read_preprocessed(dir: &Path, manifest: &Manifest, cloud: &PointCloud) -> Result<Preprocessed> {
    let missing = |what: &str| Error::MissingArtifact {
        shape: dir.display().to_string(),
        what: what.into(),
    };
    let sb = manifest.blobs.segments.as_ref().ok_or_else(|| missing("segments"))?;
    let gb = manifest.blobs.graph.as_ref().ok_or_else(|| missing("graph"))?;
    let fb = manifest.blobs.point_features.as_ref().ok_or_else(|| missing("point features"))?;

    let read_u32 = |rel: &str| -> Result<Vec<u32>> {
        let path = dir.join(rel);
        Blob::read(&path)?.into_u32(&path)
    };
    let offsets = read_u32(&sb.offsets)?;
    let points = read_u32(&sb.points)?;
    let views = read_u32(&sb.views)?;
    if offsets.len() != views.len() + 1 || offsets.last().copied() != Some(points.len() as u32) {
        return Err(Error::format(dir.join(&sb.offsets), "segment offsets disagree with members"));
    }
    let mut segments = Vec::with_capacity(views.len());
    for (i, &v) in views.iter().enumerate() {
        let cam = manifest
            .cameras
            .get(v as usize)
            .ok_or_else(|| Error::format(dir.join(&sb.views), format!("segment {i} names view {v}")))?;
        let (a, b) = (offsets[i] as usize, offsets[i + 1] as usize);
        if a > b || b > points.len() {
            return Err(Error::format(dir.join(&sb.offsets), "offsets not monotone"));
        }
        if points[a..b].iter().any(|&p| p as usize >= cloud.len()) {
            return Err(Error::format(dir.join(&sb.points), format!("segment {i} references a missing point")));
        }
        segments.push(Segment::new(i, v as usize, cam.position(), points[a..b].to_vec(), &cloud.positions));
    }
    let segments = SegmentSet::from_segments(segments, cloud.len())?;
    let graph = SegmentGraph {
        node_count: segments.len(),
        overlap_edges: read_edges(&dir.join(&gb.overlap))?,
        adjacency_edges: read_edges(&dir.join(&gb.adjacency))?,
    };
    let view_of: Vec<usize> = segments.segments.iter().map(|s| s.view_id).collect();
    graph.validate(&view_of)?;

    let fpath = dir.join(&fb.features);
    let fblob = Blob::read(&fpath)?;
    let channels = fblob.dims.get(1).copied().unwrap_or(0);
    let bank = PointFeatureBank {
        channels,
        features: fblob.into_f32(&fpath)?,
        view_count: read_u32(&fb.view_counts)?,
    };
    Ok(Preprocessed { segments, graph, bank })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub blob: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub category: String,
    pub model: ModelConfig,
    pub ablation: Ablation,
    pub seed: u64,
    pub params: Vec<ParamRecord>,
}

/// Saves parameters as `f32` blobs plus `checkpoint.json`.
pub fn write_checkpoint<T: Scalar>(
    dir: &Path,
    category: &str,
    model: ModelConfig,
    ablation: Ablation,
    seed: u64,
    params: &ParamStore<T>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(params.len());
    for (i, (name, t)) in params.iter().enumerate() {
        let rel = format!("params/{i:03}.sgb");
        let data = t.data().iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect();
        Blob::f32(t.dims().to_vec(), data)?.write(&dir.join(&rel))?;
        records.push(ParamRecord {
            name: name.to_string(),
            dims: t.dims().to_vec(),
            blob: rel,
        });
    }
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        category: category.to_string(),
        model,
        ablation,
        seed,
        params: records,
    };
    write_json(&dir.join(CHECKPOINT_FILE), &manifest)
}

pub fn read_checkpoint<T: Scalar>(dir: &Path) -> Result<(CheckpointManifest, ParamStore<T>)> {
    let path = dir.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            shape: dir.display().to_string(),
            what: CHECKPOINT_FILE.into(),
        });
    }
    let manifest: CheckpointManifest = read_json(&path)?;
    let expected = manifest.model.param_shapes();
    let names: Vec<(&str, &[usize])> = manifest.params.iter().map(|r| (r.name.as_str(), r.dims.as_slice())).collect();
    let wanted: Vec<(&str, &[usize])> = expected.iter().map(|(n, d)| (n.as_str(), d.as_slice())).collect();
    if names != wanted {
        return Err(Error::format(&path, "parameter list does not match the model configuration"));
    }
    let mut store = ParamStore::new();
    for rec in &manifest.params {
        let bpath = dir.join(&rec.blob);
        let blob = Blob::read(&bpath)?;
        blob.expect_dims(&bpath, &rec.dims)?;
        let data = blob.into_f32(&bpath)?.into_iter().map(|x| T::from_f32(x).unwrap_or_else(T::nan)).collect();
        store.insert(rec.name.clone(), Tensor::new(rec.dims.clone(), data)?)?;
    }
    Ok((manifest, store))
}

/// Shape directories directly under a corpus root, sorted by name.
pub fn list_shape_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
