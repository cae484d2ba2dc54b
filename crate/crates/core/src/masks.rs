//! Per-view mask decomposition and lifting of regions to 3D segments.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3, VisibilityMap};

/// Regions smaller than this many pixels are dropped.
pub const DEFAULT_MIN_PIXELS: usize = 20;
/// Segments smaller than this many points are dropped.
pub const DEFAULT_MIN_SEGMENT_POINTS: usize = 5;

/// Raw, possibly overlapping masks of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    pub view_id: usize,
    pub width: usize,
    pub height: usize,
    /// Each mask is row-major `height × width`.
    pub masks: Vec<Vec<bool>>,
}

impl MaskStack {
    pub fn new(view_id: usize, width: usize, height: usize, masks: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(bad) = masks.iter().position(|m| m.len() != width * height) {
            return Err(Error::Configuration(format!(
                "mask {bad} of view {view_id} does not match {width}x{height}"
            )));
        }
        Ok(Self {
            view_id,
            width,
            height,
            masks,
        })
    }
}

/// Disjoint regions of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionImage {
    pub view_id: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major region id or `-1`.
    pub region_of_pixel: Vec<i32>,
    pub region_count: usize,
}

impl RegionImage {
    pub fn region_at(&self, col: usize, row: usize) -> i32 {
        self.region_of_pixel[row * self.width + col]
    }
}

/// Partitions pixels by the exact set of masks covering them.
///
/// Pixels covered by no mask get `-1`. Region ids follow the raster order
/// of each region's first pixel, so the result does not depend on the
/// order of the input masks.
pub fn decompose_view_masks(stack: &MaskStack, min_pixels: usize) -> RegionImage {
    let words = stack.masks.len().div_ceil(64).max(1);
    let pixels = stack.width * stack.height;
    let mut ids: HashMap<Box<[u64]>, usize> = HashMap::new();
    let mut provisional = vec![-1i32; pixels];
    let mut sizes: Vec<usize> = Vec::new();
    let mut key = vec![0u64; words];

    for (px, slot) in provisional.iter_mut().enumerate() {
        key.iter_mut().for_each(|w| *w = 0);
        let mut any = false;
        for (m, mask) in stack.masks.iter().enumerate() {
            if mask[px] {
                key[m / 64] |= 1 << (m % 64);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let id = match ids.get(key.as_slice()) {
            Some(&id) => id,
            None => {
                let id = sizes.len();
                ids.insert(key.clone().into_boxed_slice(), id);
                sizes.push(0);
                id
            }
        };
        sizes[id] += 1;
        *slot = id as i32;
    }

    let mut remap = vec![-1i32; sizes.len()];
    let mut count = 0usize;
    for (id, &size) in sizes.iter().enumerate() {
        if size >= min_pixels {
            remap[id] = count as i32;
            count += 1;
        }
    }
    let region_of_pixel = provisional
        .into_iter()
        .map(|p| if p < 0 { -1 } else { remap[p as usize] })
        .collect();

    RegionImage {
        view_id: stack.view_id,
        width: stack.width,
        height: stack.height,
        region_of_pixel,
        region_count: count,
    }
}

/// Points lifted from one decomposed region of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub segment_id: usize,
    pub view_id: usize,
    /// Position of the camera the region was seen from.
    pub camera_position: Vec3,
    /// Sorted, unique point ids.
    pub point_ids: Vec<u32>,
    /// Mean member position.
    pub centroid: Vec3,
}

impl Segment {
    pub fn new(segment_id: usize, view_id: usize, camera_position: Vec3, mut point_ids: Vec<u32>, positions: &[Vec3]) -> Self {
        point_ids.sort_unstable();
        point_ids.dedup();
        let mut centroid = Vec3::zeros();
        for &p in &point_ids {
            centroid += positions[p as usize];
        }
        if !point_ids.is_empty() {
            centroid /= point_ids.len() as f64;
        }
        Self {
            segment_id,
            view_id,
            camera_position,
            point_ids,
            centroid,
        }
    }

    pub fn len(&self) -> usize {
        self.point_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_ids.is_empty()
    }
}

/// All segments of a shape plus the inverse point → segments index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    /// For every point, the sorted ids of segments containing it.
    pub point_memberships: Vec<Vec<u32>>,
}

impl SegmentSet {
    /// Renumbers segments by position and rebuilds memberships.
    pub fn from_segments(mut segments: Vec<Segment>, num_points: usize) -> Result<Self> {
        let mut point_memberships = vec![Vec::new(); num_points];
        for (i, s) in segments.iter_mut().enumerate() {
            s.segment_id = i;
            for &p in &s.point_ids {
                let slot = point_memberships.get_mut(p as usize).ok_or_else(|| {
                    Error::Configuration(format!("segment {i} references point {p} of {num_points}"))
                })?;
                slot.push(i as u32);
            }
        }
        Ok(Self {
            segments,
            point_memberships,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total number of (segment, point) memberships.
    pub fn membership_count(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }
}

/// Gathers, for every region of every view, the visible points whose rounded
/// projection lands on a pixel of that region.
///
/// Regions and visibility maps must be paired by view id and resolution.
/// Segments with fewer than `min_points` members are dropped.
pub fn lift_segments(
    regions: &[RegionImage],
    vis: &[VisibilityMap],
    cloud: &PointCloud,
    min_points: usize,
) -> Result<SegmentSet> {
    if regions.len() != vis.len() {
        return Err(Error::Configuration(format!(
            "{} region images for {} visibility maps",
            regions.len(),
            vis.len()
        )));
    }
    let mut segments = Vec::new();
    for (reg, vm) in regions.iter().zip(vis) {
        if reg.view_id != vm.view_id || reg.width != vm.width || reg.height != vm.height {
            return Err(Error::Configuration(format!(
                "view mismatch: regions of view {} vs visibility of view {}",
                reg.view_id, vm.view_id
            )));
        }
        if vm.point_proj.len() != cloud.len() {
            return Err(Error::Configuration("visibility map built for another cloud".into()));
        }
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); reg.region_count];
        for (j, p) in vm.point_proj.iter().enumerate() {
            if !p.visible {
                continue;
            }
            if let Some((c, r)) = p.pixel(vm.width, vm.height) {
                let region = reg.region_at(c, r);
                if region >= 0 {
                    members[region as usize].push(j as u32);
                }
            }
        }
        for ids in members {
            if ids.len() >= min_points.max(1) {
                segments.push(Segment::new(0, reg.view_id, vm.camera_position, ids, &cloud.positions));
            }
        }
    }
    SegmentSet::from_segments(segments, cloud.len())
}
