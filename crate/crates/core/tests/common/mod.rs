//! Brute-force oracles and instance generators shared by the integration
//! tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seggraph_core::geometry::{normalize_cloud, CameraView, PointCloud, RasterConfig, Vec3, VisibilityMap};
use seggraph_core::graph::GraphThresholds;
use seggraph_core::masks::{MaskStack, RegionImage, Segment, SegmentSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Normalized cloud of `n` uniform points with random normals.
pub fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut r = rng(seed);
    let pts: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let normals: Vec<Vec3> = (0..n).map(|_| unit_vector(&mut r)).collect();
    normalize_cloud(&pts, &normals, None, None, "test", 1).unwrap()
}

/// Pixels covered by a point whose projection rounds to `(c0, r0)`.
fn covered(c0: i64, r0: i64, splat: usize, w: usize, h: usize) -> Vec<(usize, usize)> {
    let s = splat.max(1) as i64;
    let lo = -(s - 1) / 2;
    let mut out = Vec::new();
    for dr in lo..lo + s {
        for dc in lo..lo + s {
            let (c, r) = (c0 + dc, r0 + dr);
            if c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h {
                out.push((c as usize, r as usize));
            }
        }
    }
    out
}

/// Visibility flags from sorting, per pixel, the depths of every point
/// splatting there.
pub fn brute_visibility(cloud: &PointCloud, cam: &CameraView, cfg: RasterConfig) -> Vec<bool> {
    let (w, h) = (cam.width(), cam.height());
    let frame = cam.frame().unwrap();
    let proj: Vec<Option<(i64, i64, f64)>> = cloud
        .positions
        .iter()
        .map(|p| {
            let d = p - cam.position();
            let z = frame.forward.dot(&d);
            if z <= 0.0 {
                return None;
            }
            let u = cam.principal_point[0] + cam.focal * frame.right.dot(&d) / z;
            let v = cam.principal_point[1] + cam.focal * frame.down.dot(&d) / z;
            let (c, r) = (u.round(), v.round());
            (c >= 0.0 && r >= 0.0 && c < w as f64 && r < h as f64).then_some((c as i64, r as i64, z))
        })
        .collect();
    let mut depths: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for &(c, r, z) in proj.iter().flatten() {
        for px in covered(c, r, cfg.splat, w, h) {
            depths.entry(px).or_default().push(z);
        }
    }
    for d in depths.values_mut() {
        d.sort_by(f64::total_cmp);
    }
    proj.iter()
        .map(|p| match p {
            None => false,
            Some((c, r, z)) => covered(*c, *r, cfg.splat, w, h)
                .iter()
                .any(|px| *z <= depths[px][0] + cfg.depth_epsilon),
        })
        .collect()
}

/// Pixel partition as sorted lists of pixel indices.
pub type Partition = Vec<Vec<usize>>;

pub fn partition_of(regions: &RegionImage) -> Partition {
    let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (px, &g) in regions.region_of_pixel.iter().enumerate() {
        if g >= 0 {
            groups.entry(g).or_default().push(px);
        }
    }
    let mut out: Partition = groups.into_values().collect();
    out.sort();
    out
}

/// Groups pixels by the exact subset of masks covering them.
pub fn brute_decompose(stack: &MaskStack, min_pixels: usize) -> Partition {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for px in 0..stack.width * stack.height {
        let cover: Vec<usize> = (0..stack.masks.len()).filter(|&m| stack.masks[m][px]).collect();
        if !cover.is_empty() {
            groups.entry(cover).or_default().push(px);
        }
    }
    let mut out: Partition = groups.into_values().filter(|g| g.len() >= min_pixels).collect();
    out.sort();
    out
}

/// Random masks of rectangles and disks, some overlapping.
pub fn random_mask_stack(rng: &mut impl Rng, view_id: usize) -> MaskStack {
    let (w, h) = (rng.random_range(16..48), rng.random_range(16..48));
    let count = rng.random_range(1..9);
    let masks = (0..count)
        .map(|_| {
            if rng.random_bool(0.5) {
                let (c0, r0) = (rng.random_range(0..w), rng.random_range(0..h));
                let (c1, r1) = (rng.random_range(c0..=w), rng.random_range(r0..=h));
                (0..w * h).map(|i| (c0..c1).contains(&(i % w)) && (r0..r1).contains(&(i / w))).collect()
            } else {
                let (cc, cr) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                let rad: f64 = rng.random_range(1.0..w.min(h) as f64 * 0.5);
                (0..w * h)
                    .map(|i| ((i % w) as f64 - cc).powi(2) + ((i / w) as f64 - cr).powi(2) <= rad * rad)
                    .collect()
            }
        })
        .collect();
    MaskStack::new(view_id, w, h, masks).unwrap()
}

/// Lifting by walking every pixel of every region.
pub fn brute_lift(regions: &[RegionImage], vis: &[VisibilityMap], cloud: &PointCloud, min_points: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    for (reg, vm) in regions.iter().zip(vis) {
        let mut members = vec![Vec::new(); reg.region_count];
        for r in 0..reg.height {
            for c in 0..reg.width {
                let g = reg.region_at(c, r);
                if g < 0 {
                    continue;
                }
                for (j, p) in vm.point_proj.iter().enumerate() {
                    if p.visible && p.u.round() == c as f64 && p.v.round() == r as f64 {
                        members[g as usize].push(j as u32);
                    }
                }
            }
        }
        for m in members {
            if m.len() >= min_points.max(1) {
                out.push(Segment::new(0, reg.view_id, vm.camera_position, m, &cloud.positions));
            }
        }
    }
    for (i, s) in out.iter_mut().enumerate() {
        s.segment_id = i;
    }
    out
}

pub fn brute_min_distance(a: &[u32], b: &[u32], positions: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for &i in a {
        for &j in b {
            best = best.min((positions[i as usize] - positions[j as usize]).norm());
        }
    }
    best
}

pub fn brute_iou(a: &[u32], b: &[u32]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let inter = b.iter().filter(|x| sa.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// O(n²) graph over every segment pair.
pub fn brute_graph(segs: &SegmentSet, positions: &[Vec3], t: GraphThresholds) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
    let s = &segs.segments;
    let (mut overlap, mut adjacency) = (Vec::new(), Vec::new());
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let iou = brute_iou(&s[i].point_ids, &s[j].point_ids);
            if s[i].view_id != s[j].view_id && iou > t.iou {
                overlap.push((i as u32, j as u32));
            } else if iou <= t.iou && brute_min_distance(&s[i].point_ids, &s[j].point_ids, positions) < t.adjacency {
                adjacency.push((i as u32, j as u32));
            }
        }
    }
    (overlap, adjacency)
}

/// Segments on a random cloud: each view partitions a random subset of the
/// points into spatial slabs, so segments of one view are disjoint while
/// segments of different views overlap by varying amounts.
pub fn random_segments(seed: u64, max_segments: usize) -> (SegmentSet, Vec<Vec3>) {
    let mut r = rng(seed);
    let n = r.random_range(100..1500);
    let cloud = random_cloud(seed ^ 0x5eed, n);
    let views = r.random_range(1..8);
    let mut segments = Vec::new();
    'views: for v in 0..views {
        let axis = unit_vector(&mut r);
        let slabs = r.random_range(2..20);
        let keep = r.random_range(0.3..1.0);
        let jitter = r.random_range(0.0..0.2);
        let mut groups = vec![Vec::new(); slabs];
        for (j, p) in cloud.positions.iter().enumerate() {
            if !r.random_bool(keep) {
                continue;
            }
            let t = (p.dot(&axis) + r.random_range(-jitter..=jitter) + 1.0) / 2.0;
            let g = ((t * slabs as f64) as usize).min(slabs - 1);
            groups[g].push(j as u32);
        }
        let cam = axis * 2.2;
        for g in groups.into_iter().filter(|g| !g.is_empty()) {
            if segments.len() == max_segments {
                break 'views;
            }
            segments.push(Segment::new(0, v, cam, g, &cloud.positions));
        }
    }
    (SegmentSet::from_segments(segments, n).unwrap(), cloud.positions)
}

/// Rotation about a random axis.
pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Rotation3<f64> {
    let axis = nalgebra::Unit::new_normalize(unit_vector(rng));
    nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::TAU))
}
