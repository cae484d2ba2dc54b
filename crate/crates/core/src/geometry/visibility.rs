//! Point-splat z-buffering.

use serde::{Deserialize, Serialize};

use crate::geometry::camera::CameraView;
use crate::geometry::cloud::{PointCloud, Vec3};

/// Splat size and depth tolerance used when rasterizing points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    /// Side of the square pixel footprint of each point.
    pub splat: usize,
    /// A point stays visible within this depth margin of the nearest surface.
    pub depth_epsilon: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            splat: 2,
            depth_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

impl PointProjection {
    /// Pixel `(col, row)` under the rounded projection, if inside the image.
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (c, r) = (self.u.round(), self.v.round());
        if c >= 0.0 && r >= 0.0 && (c as usize) < width && (r as usize) < height {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }
}

/// Per-view z-buffer result.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    pub view_id: usize,
    pub width: usize,
    pub height: usize,
    pub camera_position: Vec3,
    /// Row-major `height × width`; nearest point id or `-1`.
    pub pixel_owner: Vec<i32>,
    pub point_proj: Vec<PointProjection>,
}

impl VisibilityMap {
    pub fn owner(&self, col: usize, row: usize) -> i32 {
        self.pixel_owner[row * self.width + col]
    }

    pub fn visible_count(&self) -> usize {
        self.point_proj.iter().filter(|p| p.visible).count()
    }
}

/// Half-open pixel ranges `(cols, rows)` of a splat footprint clipped to
/// the image. The footprint always contains the rounded projection.
pub fn footprint(u: f64, v: f64, splat: usize, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let splat = splat.max(1) as i64;
    let start = |x: f64| x.round() as i64 - (splat - 1) / 2;
    let clip = |s: i64, limit: usize| {
        let lo = s.clamp(0, limit as i64) as usize;
        let hi = (s + splat).clamp(0, limit as i64) as usize;
        lo..hi
    };
    (clip(start(u), width), clip(start(v), height))
}

/// Rasterizes the cloud into one view.
///
/// Only points in front of the camera whose rounded projection falls inside
/// the image take part. Such a point is visible when, on at least one pixel
/// of its footprint, its depth is within `depth_epsilon` of the nearest depth
/// splatted there. Each pixel is owned by its nearest point, lowest id on ties.
pub fn rasterize_visibility(cloud: &PointCloud, camera: &CameraView, config: RasterConfig) -> VisibilityMap {
    let (w, h) = (camera.width(), camera.height());
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner = vec![-1i32; w * h];
    let frame = camera.frame().ok();

    let mut proj: Vec<PointProjection> = cloud
        .positions
        .iter()
        .map(|p| {
            let pr = frame.as_ref().and_then(|f| camera.project_with(f, p).ok());
            match pr {
                Some(pr) => PointProjection {
                    u: pr.u,
                    v: pr.v,
                    depth: pr.depth,
                    visible: false,
                },
                None => PointProjection {
                    u: f64::NAN,
                    v: f64::NAN,
                    depth: 0.0,
                    visible: false,
                },
            }
        })
        .collect();

    let in_frustum = |p: &PointProjection| p.depth > 0.0 && p.pixel(w, h).is_some();

    for (j, p) in proj.iter().enumerate() {
        if !in_frustum(p) {
            continue;
        }
        let (cols, rows) = footprint(p.u, p.v, config.splat, w, h);
        for r in rows {
            for c in cols.clone() {
                let slot = r * w + c;
                if p.depth < zbuf[slot] {
                    zbuf[slot] = p.depth;
                    owner[slot] = j as i32;
                }
            }
        }
    }

    for p in proj.iter_mut() {
        if !in_frustum(p) {
            continue;
        }
        let (cols, rows) = footprint(p.u, p.v, config.splat, w, h);
        p.visible = rows
            .flat_map(|r| cols.clone().map(move |c| r * w + c))
            .any(|slot| p.depth <= zbuf[slot] + config.depth_epsilon);
    }

    VisibilityMap {
        view_id: camera.view_id,
        width: w,
        height: h,
        camera_position: camera.position(),
        pixel_owner: owner,
        point_proj: proj,
    }
}
