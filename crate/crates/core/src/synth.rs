//! Seeded synthetic benchmark: composite shapes, rendered masks with
//! controllable corruption, and prototype-plus-noise patch features.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the corpus seed
//! and a stream id built from the shape index, the purpose and the view,
//! so any artifact can be regenerated in isolation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{write_shape, BlobPaths, Manifest, Provenance, ShapeInputs, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::features::PatchFeatureGrid;
use crate::geometry::{make_cameras, normalize_cloud, rasterize_visibility, CameraView, PointCloud, RasterConfig, Vec3, VisibilityMap};
use crate::masks::MaskStack;
use crate::model::raw_view_quality;

/// Part names in label order; a shape with `k` parts uses the first `k`.
pub const PART_NAMES: [&str; 5] = ["body", "lid", "handle", "button", "knob"];
pub const CATEGORY: &str = "kettle";
pub const CORPUS_FILE: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_shapes: usize,
    /// The first `num_train` shapes form the training pool, the rest the test set.
    pub num_train: usize,
    pub parts_per_shape: usize,
    pub points_per_shape: usize,
    /// Standard deviation of per-channel patch noise.
    pub feature_noise: f64,
    /// Probability that a part's mask is split into fragments.
    pub split_rate: f64,
    /// Scale of the view-dependent probability that neighboring parts merge.
    pub merge_rate: f64,
    /// Add one mask covering the whole object to every view.
    pub object_mask: bool,
    pub channels: usize,
    pub views: usize,
    pub resolution: usize,
    pub camera_radius: f64,
    pub patch_size: usize,
    pub render: RasterConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_shapes: 36,
            num_train: 16,
            parts_per_shape: 5,
            points_per_shape: 2048,
            feature_noise: 0.5,
            split_rate: 0.3,
            merge_rate: 0.5,
            object_mask: true,
            channels: 96,
            views: 10,
            resolution: 112,
            camera_radius: 2.2,
            patch_size: 14,
            render: RasterConfig {
                splat: 6,
                depth_epsilon: 0.01,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Configuration(m));
        if !(1..=PART_NAMES.len()).contains(&self.parts_per_shape) {
            return bad(format!("parts_per_shape must be in 1..={}", PART_NAMES.len()));
        }
        if self.points_per_shape < 100 {
            return bad("points_per_shape must be at least 100".into());
        }
        for (name, p) in [("split_rate", self.split_rate), ("merge_rate", self.merge_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be a probability, got {p}"));
            }
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad("feature_noise must be non-negative".into());
        }
        if self.num_train > self.num_shapes {
            return bad("num_train exceeds num_shapes".into());
        }
        if self.channels == 0 || self.views == 0 || self.resolution == 0 || self.patch_size == 0 {
            return bad("channels, views, resolution and patch_size must be positive".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        PART_NAMES[..self.parts_per_shape].iter().map(|s| s.to_string()).collect()
    }

    /// Stream for one purpose of one shape; `index = None` is corpus-level.
    fn rng(&self, index: Option<usize>, purpose: u64, view: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shape = index.map_or(0xffff_ffff, |i| i as u64);
        rng.set_stream((shape << 24) | (purpose << 16) | view as u64);
        rng
    }
}

const STREAM_GEOMETRY: u64 = 1;
const STREAM_MASKS: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_PROTOTYPES: u64 = 4;

/// Surface primitive with analytic normals; cylinders are aligned with `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Box { center: Vec3, half: Vec3 },
    Cylinder { center: Vec3, radius: f64, half_height: f64 },
    Sphere { center: Vec3, radius: f64 },
}

impl Primitive {
    pub fn area(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Primitive::Box { half, .. } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Primitive::Cylinder { radius, half_height, .. } => 2.0 * PI * radius * (2.0 * half_height + radius),
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Uniform point on the surface with its outward normal.
    pub fn sample(&self, rng: &mut impl Rng) -> (Vec3, Vec3) {
        use std::f64::consts::PI;
        match *self {
            Primitive::Box { center, half } => {
                let faces = [half.y * half.z, half.x * half.z, half.x * half.y];
                let pick = rng.random::<f64>() * (faces[0] + faces[1] + faces[2]);
                let axis = if pick < faces[0] {
                    0
                } else if pick < faces[0] + faces[1] {
                    1
                } else {
                    2
                };
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut local = Vec3::new(
                    rng.random_range(-1.0..1.0) * half.x,
                    rng.random_range(-1.0..1.0) * half.y,
                    rng.random_range(-1.0..1.0) * half.z,
                );
                local[axis] = sign * half[axis];
                let mut normal = Vec3::zeros();
                normal[axis] = sign;
                (center + local, normal)
            }
            Primitive::Cylinder { center, radius, half_height } => {
                let side = 2.0 * half_height;
                let angle = rng.random_range(0.0..2.0 * PI);
                if rng.random::<f64>() * (side + radius) < side {
                    let y = rng.random_range(-half_height..half_height);
                    let n = Vec3::new(angle.cos(), 0.0, angle.sin());
                    (center + n * radius + Vec3::y() * y, n)
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let p = Vec3::new(r * angle.cos(), sign * half_height, r * angle.sin());
                    (center + p, Vec3::y() * sign)
                }
            }
            Primitive::Sphere { center, radius } => {
                let v = loop {
                    let v = Vec3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    if v.norm() > 1e-9 {
                        break v.normalize();
                    }
                };
                (center + v * radius, v)
            }
        }
    }

    /// Strictly inside, by at least `margin`.
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        match *self {
            Primitive::Box { center, half } => {
                let d = (p - center).abs();
                d.x < half.x - margin && d.y < half.y - margin && d.z < half.z - margin
            }
            Primitive::Cylinder { center, radius, half_height } => {
                let d = p - center;
                d.y.abs() < half_height - margin && (d.x * d.x + d.z * d.z).sqrt() < radius - margin
            }
            Primitive::Sphere { center, radius } => (p - center).norm() < radius - margin,
        }
    }

    /// Analytic outward normal at a surface point (closest face for boxes
    /// and cylinder rims).
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        match *self {
            Primitive::Box { center, half } => {
                let d = p - center;
                let gaps = [half.x - d.x.abs(), half.y - d.y.abs(), half.z - d.z.abs()];
                let axis = (0..3).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap_or(0);
                let mut n = Vec3::zeros();
                n[axis] = d[axis].signum();
                n
            }
            Primitive::Cylinder { center, radius, half_height } => {
                let d = p - center;
                let radial = (d.x * d.x + d.z * d.z).sqrt();
                if half_height - d.y.abs() < radius - radial {
                    Vec3::y() * d.y.signum()
                } else {
                    Vec3::new(d.x, 0.0, d.z) / radial
                }
            }
            Primitive::Sphere { center, .. } => (p - center).normalize(),
        }
    }

    pub fn translated(&self, t: Vec3) -> Self {
        match *self {
            Primitive::Box { center, half } => Primitive::Box { center: center + t, half },
            Primitive::Cylinder { center, radius, half_height } => Primitive::Cylinder {
                center: center + t,
                radius,
                half_height,
            },
            Primitive::Sphere { center, radius } => Primitive::Sphere { center: center + t, radius },
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            Primitive::Box { center, half } => Primitive::Box {
                center: center * s,
                half: half * s,
            },
            Primitive::Cylinder { center, radius, half_height } => Primitive::Cylinder {
                center: center * s,
                radius: radius * s,
                half_height: half_height * s,
            },
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: center * s,
                radius: radius * s,
            },
        }
    }
}

/// A generated shape: its labeled cloud and the part primitives in the
/// cloud's normalized frame, indexed by label.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthShape {
    pub cloud: PointCloud,
    pub parts: Vec<Primitive>,
}

fn part_layout(rng: &mut impl Rng, parts: usize) -> Vec<Primitive> {
    let cylinder = rng.random::<bool>();
    let hh = rng.random_range(0.30..0.42);
    let (body, x_ext, z_ext, top_r) = if cylinder {
        let r = rng.random_range(0.30..0.40);
        (
            Primitive::Cylinder {
                center: Vec3::zeros(),
                radius: r,
                half_height: hh,
            },
            r,
            r,
            r,
        )
    } else {
        let (a, c) = (rng.random_range(0.26..0.38), rng.random_range(0.24..0.34));
        (
            Primitive::Box {
                center: Vec3::zeros(),
                half: Vec3::new(a, hh, c),
            },
            a,
            c,
            a.min(c),
        )
    };
    let lid_hh = 0.05;
    let lid_r = 0.8 * top_r;
    let lid_y = hh + lid_hh - 0.01;
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let handle_half = Vec3::new(0.09, 0.35 * hh, 0.05);
    let button_y = rng.random_range(-0.3..0.3) * hh;
    let knob_r = 0.08;
    let all = [
        body,
        Primitive::Cylinder {
            center: Vec3::new(0.0, lid_y, 0.0),
            radius: lid_r,
            half_height: lid_hh,
        },
        Primitive::Box {
            center: Vec3::new(side * (x_ext + handle_half.x - 0.02), rng.random_range(-0.2..0.2) * hh, 0.0),
            half: handle_half,
        },
        Primitive::Box {
            center: Vec3::new(0.0, button_y, z_ext + 0.03 - 0.01),
            half: Vec3::new(0.07, 0.07, 0.03),
        },
        Primitive::Sphere {
            center: Vec3::new(0.0, lid_y + lid_hh + knob_r - 0.02, 0.0),
            radius: knob_r,
        },
    ];
    all[..parts].to_vec()
}

/// Samples a composite of `parts_per_shape` primitives: area-weighted
/// surface points, with points buried inside another part rejected.
/// Deterministic per `(seed, index)`.
pub fn generate_shape(config: &SynthConfig, index: usize) -> Result<SynthShape> {
    config.validate()?;
    let mut rng = config.rng(Some(index), STREAM_GEOMETRY, 0);
    let parts = part_layout(&mut rng, config.parts_per_shape);
    let areas: Vec<f64> = parts.iter().map(Primitive::area).collect();
    let total: f64 = areas.iter().sum();

    let n = config.points_per_shape;
    let mut positions = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    while positions.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut label = parts.len() - 1;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                label = i;
                break;
            }
            pick -= a;
        }
        let (p, nrm) = parts[label].sample(&mut rng);
        let buried = parts.iter().enumerate().any(|(j, q)| j != label && q.contains(&p, 1e-9));
        if buried {
            continue;
        }
        positions.push(p);
        normals.push(nrm);
        labels.push(label as i32);
    }

    let (lo, hi) = crate::geometry::bounding_box(&positions);
    let center = (lo + hi) * 0.5;
    let diagonal = (hi - lo).norm();
    let cloud = normalize_cloud(
        &positions,
        &normals,
        None,
        Some(labels),
        CATEGORY,
        config.parts_per_shape,
    )?;
    let parts = parts.iter().map(|p| p.translated(-center).scaled(1.0 / diagonal)).collect();
    Ok(SynthShape { cloud, parts })
}

/// Views of one shape with the per-pixel part label of the owning point.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedShape {
    pub cameras: Vec<CameraView>,
    pub visibility: Vec<VisibilityMap>,
    /// Per view, row-major part label or `-1`.
    pub label_images: Vec<Vec<i32>>,
}

pub fn render_shape(cloud: &PointCloud, config: &SynthConfig) -> Result<RenderedShape> {
    let cameras = make_cameras(config.views, config.camera_radius, [config.resolution, config.resolution])?;
    let labels = cloud
        .labels
        .as_ref()
        .ok_or_else(|| Error::Configuration("rendering needs a labeled cloud".into()))?;
    let visibility: Vec<VisibilityMap> = cameras.iter().map(|c| rasterize_visibility(cloud, c, config.render)).collect();
    let label_images = visibility
        .iter()
        .map(|v| v.pixel_owner.iter().map(|&o| if o < 0 { -1 } else { labels[o as usize] }).collect())
        .collect();
    Ok(RenderedShape {
        cameras,
        visibility,
        label_images,
    })
}

/// One merge decision between two neighboring parts in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub view_id: usize,
    pub parts: (usize, usize),
    pub probability: f64,
    pub draw: f64,
    pub merged: bool,
}

/// Every corruption decision, in draw order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskTrace {
    pub merges: Vec<MergeEvent>,
    /// `(view, part, fragments)` for every split part.
    pub splits: Vec<(usize, usize, usize)>,
}

/// Mean raw view quality of a part's visible points in one view.
fn part_quality(cloud: &PointCloud, vis: &VisibilityMap, classes: usize) -> Vec<Option<f64>> {
    let labels = cloud.labels.as_deref().unwrap_or(&[]);
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for (j, p) in vis.point_proj.iter().enumerate() {
        if !p.visible {
            continue;
        }
        let l = labels[j];
        if l < 0 {
            continue;
        }
        if let Ok(q) = raw_view_quality(&cloud.normals[j], &cloud.positions[j], &vis.camera_position) {
            sum[l as usize] += q;
            count[l as usize] += 1;
        }
    }
    sum.iter().zip(&count).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect()
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Splits `pixels` into `k` Voronoi cells around distinct random seeds.
fn voronoi_fragments(pixels: &[usize], width: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let seeds: Vec<usize> = rand::seq::index::sample(rng, pixels.len(), k)
        .into_iter()
        .map(|i| pixels[i])
        .collect();
    let mut cells = vec![Vec::new(); k];
    for &px in pixels {
        let (c, r) = ((px % width) as f64, (px / width) as f64);
        let nearest = (0..k)
            .min_by(|&a, &b| {
                let d = |s: usize| {
                    let (sc, sr) = ((seeds[s] % width) as f64, (seeds[s] / width) as f64);
                    (sc - c).powi(2) + (sr - r).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .unwrap_or(0);
        cells[nearest].push(px);
    }
    cells
}

/// Builds per-view masks from the rendered part labels.
///
/// Ideal masks are the visible-pixel sets of each part. Each pair of parts
/// touching in the image merges into one mask with probability
/// `merge_rate · (1 − q)`, where `q` is the mean view quality of the two
/// parts' visible points, so edge-on views merge more often. Parts that
/// stay unmerged split into 2–3 Voronoi fragments with probability
/// `split_rate`.
pub fn generate_views_and_masks(
    shape: &SynthShape,
    rendered: &RenderedShape,
    config: &SynthConfig,
    index: usize,
) -> Result<(Vec<MaskStack>, MaskTrace)> {
    let classes = config.parts_per_shape;
    let mut trace = MaskTrace::default();
    let mut stacks = Vec::with_capacity(rendered.cameras.len());
    for ((cam, vis), labels) in rendered.cameras.iter().zip(&rendered.visibility).zip(&rendered.label_images) {
        let mut rng = config.rng(Some(index), STREAM_MASKS, cam.view_id);
        let (w, h) = (cam.width(), cam.height());
        let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (px, &l) in labels.iter().enumerate() {
            if l >= 0 {
                pixels[l as usize].push(px);
            }
        }
        let mut touching = vec![vec![false; classes]; classes];
        for r in 0..h {
            for c in 0..w {
                let a = labels[r * w + c];
                if a < 0 {
                    continue;
                }
                for (dc, dr) in [(1, 0), (0, 1)] {
                    if c + dc < w && r + dr < h {
                        let b = labels[(r + dr) * w + c + dc];
                        if b >= 0 && b != a {
                            touching[a as usize][b as usize] = true;
                            touching[b as usize][a as usize] = true;
                        }
                    }
                }
            }
        }
        let quality = part_quality(&shape.cloud, vis, classes);
        let mut parent: Vec<usize> = (0..classes).collect();
        for a in 0..classes {
            for b in a + 1..classes {
                if !touching[a][b] {
                    continue;
                }
                let (qa, qb) = (quality[a].unwrap_or(0.0), quality[b].unwrap_or(0.0));
                let probability = config.merge_rate * (1.0 - 0.5 * (qa + qb));
                let draw: f64 = rng.random();
                let merged = draw < probability;
                if merged {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
                trace.merges.push(MergeEvent {
                    view_id: cam.view_id,
                    parts: (a, b),
                    probability,
                    draw,
                    merged,
                });
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for p in 0..classes {
            let root = find(&mut parent, p);
            groups.entry(root).or_default().push(p);
        }
        let mut masks: Vec<Vec<bool>> = Vec::new();
        let as_mask = |px: &[usize]| {
            let mut m = vec![false; w * h];
            px.iter().for_each(|&p| m[p] = true);
            m
        };
        for members in groups.values() {
            let px: Vec<usize> = members.iter().flat_map(|&p| pixels[p].iter().copied()).collect();
            if px.is_empty() {
                continue;
            }
            if members.len() == 1 && px.len() >= 2 && rng.random::<f64>() < config.split_rate {
                let k = rng.random_range(2..=3usize).min(px.len());
                for frag in voronoi_fragments(&px, w, k, &mut rng) {
                    masks.push(as_mask(&frag));
                }
                trace.splits.push((cam.view_id, members[0], k));
            } else {
                masks.push(as_mask(&px));
            }
        }
        if config.object_mask {
            masks.push(labels.iter().map(|&l| l >= 0).collect());
        }
        stacks.push(MaskStack::new(cam.view_id, w, h, masks)?);
    }
    Ok((stacks, trace))
}

/// Per-class feature prototypes shared by every shape of the corpus:
/// i.i.d. standard normal entries scaled to unit expected norm.
pub fn class_prototypes(config: &SynthConfig) -> Vec<Vec<f32>> {
    let mut rng = config.rng(None, STREAM_PROTOTYPES, 0);
    let scale = 1.0 / (config.channels as f64).sqrt();
    (0..config.parts_per_shape)
        .map(|_| {
            (0..config.channels)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (scale * z) as f32
                })
                .collect()
        })
        .collect()
}

/// Patch features: the pixel-count-weighted mean of the prototypes of the
/// parts visible in each patch (zero where none are) plus Gaussian noise.
pub fn generate_features(
    rendered: &RenderedShape,
    prototypes: &[Vec<f32>],
    config: &SynthConfig,
    index: usize,
) -> Result<Vec<PatchFeatureGrid>> {
    let ch = config.channels;
    let ps = config.patch_size;
    let mut grids = Vec::with_capacity(rendered.cameras.len());
    for (cam, labels) in rendered.cameras.iter().zip(&rendered.label_images) {
        let mut rng = config.rng(Some(index), STREAM_FEATURES, cam.view_id);
        let (w, h) = (cam.width(), cam.height());
        let (rows, cols) = PatchFeatureGrid::dims_for(w, h, ps);
        let mut data = Vec::with_capacity(rows * cols * ch);
        let mut counts = vec![0usize; prototypes.len()];
        for pr in 0..rows {
            for pc in 0..cols {
                counts.iter_mut().for_each(|c| *c = 0);
                for r in pr * ps..((pr + 1) * ps).min(h) {
                    for c in pc * ps..((pc + 1) * ps).min(w) {
                        let l = labels[r * w + c];
                        if l >= 0 {
                            counts[l as usize] += 1;
                        }
                    }
                }
                let total: usize = counts.iter().sum();
                for k in 0..ch {
                    let mean = if total == 0 {
                        0.0
                    } else {
                        counts
                            .iter()
                            .zip(prototypes)
                            .map(|(&n, proto)| n as f64 * proto[k] as f64)
                            .sum::<f64>()
                            / total as f64
                    };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    data.push((mean + config.feature_noise * noise) as f32);
                }
            }
        }
        grids.push(PatchFeatureGrid::new(cam.view_id, rows, cols, ch, ps, data)?);
    }
    Ok(grids)
}

/// A complete synthetic shape ready to be written or preprocessed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub name: String,
    pub shape: SynthShape,
    pub inputs: ShapeInputs,
    pub visibility: Vec<VisibilityMap>,
    pub trace: MaskTrace,
}

pub fn shape_name(index: usize) -> String {
    format!("shape_{index:03}")
}

pub fn generate_sample(config: &SynthConfig, index: usize, prototypes: &[Vec<f32>]) -> Result<SynthSample> {
    let shape = generate_shape(config, index)?;
    let rendered = render_shape(&shape.cloud, config)?;
    let (masks, trace) = generate_views_and_masks(&shape, &rendered, config, index)?;
    let features = generate_features(&rendered, prototypes, config, index)?;
    let views = rendered.cameras.len();
    let mut params = BTreeMap::new();
    params.insert(
        "config".to_string(),
        serde_json::to_value(config).map_err(|e| Error::Configuration(e.to_string()))?,
    );
    params.insert("index".to_string(), index.into());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        category: CATEGORY.into(),
        num_classes: config.parts_per_shape,
        class_names: config.class_names(),
        num_points: shape.cloud.len(),
        num_views: views,
        feature_channels: config.channels,
        patch_size: config.patch_size,
        cameras: rendered.cameras.clone(),
        render: config.render,
        blobs: BlobPaths {
            points: "points.sgb".into(),
            normals: "normals.sgb".into(),
            colors: None,
            labels: Some("labels.sgb".into()),
            masks: (0..views).map(|v| format!("masks/view_{v:02}.sgb")).collect(),
            features: (0..views).map(|v| format!("features/view_{v:02}.sgb")).collect(),
            segments: None,
            graph: None,
            point_features: None,
        },
        provenance: Provenance {
            source: "synthetic".into(),
            backend: None,
            params,
        },
    };
    Ok(SynthSample {
        name: shape_name(index),
        inputs: ShapeInputs {
            manifest,
            cloud: shape.cloud.clone(),
            masks,
            features,
        },
        shape,
        visibility: rendered.visibility,
        trace,
    })
}

/// Train/test split of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub category: String,
    pub class_names: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub config: SynthConfig,
}

impl CorpusIndex {
    pub fn for_config(config: &SynthConfig) -> Self {
        Self {
            category: CATEGORY.into(),
            class_names: config.class_names(),
            train: (0..config.num_train).map(shape_name).collect(),
            test: (config.num_train..config.num_shapes).map(shape_name).collect(),
            config: config.clone(),
        }
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(CORPUS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(CORPUS_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Writes one shape directory of the corpus and returns its mask trace.
pub fn write_sample(root: &Path, config: &SynthConfig, index: usize, prototypes: &[Vec<f32>]) -> Result<MaskTrace> {
    let sample = generate_sample(config, index, prototypes)?;
    write_shape(&root.join(&sample.name), &sample.inputs)?;
    Ok(sample.trace)
}
