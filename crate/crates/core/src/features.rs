//! Sampling of patch-level image features at projected point locations.

use crate::error::{Error, Result};
use crate::geometry::VisibilityMap;

/// Patch side of DINOv2-style backbones.
pub const DEFAULT_PATCH_SIZE: usize = 14;

/// Low-resolution feature map of one view, row-major `rows × cols × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid {
    pub view_id: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub data: Vec<f32>,
}

impl PatchFeatureGrid {
    pub fn new(view_id: usize, rows: usize, cols: usize, channels: usize, patch_size: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || patch_size == 0 {
            return Err(Error::Configuration("empty patch grid".into()));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::Configuration(format!(
                "patch grid data has {} values, expected {rows}x{cols}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            view_id,
            rows,
            cols,
            channels,
            patch_size,
            data,
        })
    }

    /// Grid dimensions covering an image of `width × height` pixels.
    pub fn dims_for(width: usize, height: usize, patch_size: usize) -> (usize, usize) {
        (height.div_ceil(patch_size), width.div_ceil(patch_size))
    }

    /// Whether the grid covers the image without excess of a whole patch.
    pub fn covers(&self, width: usize, height: usize) -> bool {
        (self.rows, self.cols) == Self::dims_for(width, height, self.patch_size)
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Continuous patch coordinate of an image coordinate; patch centers map
    /// to integers.
    pub fn patch_coord(&self, pixel: f64) -> f64 {
        (pixel + 0.5) / self.patch_size as f64 - 0.5
    }
}

/// Catmull-Rom kernel (`a = -0.5`).
pub fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn taps(s: f64, len: usize) -> ([usize; 4], [f64; 4]) {
    let base = s.floor();
    let frac = s - base;
    let mut idx = [0usize; 4];
    let mut w = [0.0; 4];
    for k in 0..4 {
        let offset = k as f64 - 1.0;
        idx[k] = (base as i64 + k as i64 - 1).clamp(0, len as i64 - 1) as usize;
        w[k] = cubic_weight(frac - offset);
    }
    (idx, w)
}

/// Bicubic interpolation of the grid at image coordinate `(u, v)`, with
/// border clamping. Equal to upsampling the grid to image resolution and
/// reading the pixel.
pub fn bicubic_sample(grid: &PatchFeatureGrid, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.channels];
    bicubic_sample_into(grid, u, v, &mut out);
    out
}

fn bicubic_sample_into(grid: &PatchFeatureGrid, u: f64, v: f64, out: &mut [f64]) {
    let (cols, wc) = taps(grid.patch_coord(u), grid.cols);
    let (rows, wr) = taps(grid.patch_coord(v), grid.rows);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (&r, &wy) in rows.iter().zip(&wr) {
        for (&c, &wx) in cols.iter().zip(&wc) {
            let w = wx * wy;
            if w == 0.0 {
                continue;
            }
            for (o, &f) in out.iter_mut().zip(grid.patch(r, c)) {
                *o += w * f as f64;
            }
        }
    }
}

/// Per-point features averaged over the views that see each point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatureBank {
    pub channels: usize,
    /// Row-major `num_points × channels`.
    pub features: Vec<f32>,
    pub view_count: Vec<u32>,
}

impl PointFeatureBank {
    pub fn num_points(&self) -> usize {
        self.view_count.len()
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.features[j * self.channels..(j + 1) * self.channels]
    }
}

/// Averages bicubic samples over every view where a point is visible.
/// Points seen by no view get a zero row.
pub fn pool_point_features(grids: &[PatchFeatureGrid], vis: &[VisibilityMap], num_points: usize) -> Result<PointFeatureBank> {
    if grids.len() != vis.len() {
        return Err(Error::Configuration(format!(
            "{} feature grids for {} visibility maps",
            grids.len(),
            vis.len()
        )));
    }
    let channels = grids.first().map_or(0, |g| g.channels);
    let mut pairs: Vec<(&PatchFeatureGrid, &VisibilityMap)> = grids.iter().zip(vis).collect();
    for (g, v) in &pairs {
        if g.view_id != v.view_id {
            return Err(Error::Configuration(format!(
                "view mismatch: features of view {} vs visibility of view {}",
                g.view_id, v.view_id
            )));
        }
        if g.channels != channels {
            return Err(Error::Configuration("feature grids disagree on channel count".into()));
        }
        if v.point_proj.len() != num_points {
            return Err(Error::Configuration("visibility map built for another cloud".into()));
        }
    }
    // fixed summation order regardless of input order
    pairs.sort_by_key(|(g, _)| g.view_id);

    let mut sums = vec![0.0f64; num_points * channels];
    let mut view_count = vec![0u32; num_points];
    let mut sample = vec![0.0; channels];
    for (grid, vm) in pairs {
        for (j, p) in vm.point_proj.iter().enumerate() {
            if !p.visible {
                continue;
            }
            bicubic_sample_into(grid, p.u, p.v, &mut sample);
            for (o, &s) in sums[j * channels..(j + 1) * channels].iter_mut().zip(&sample) {
                *o += s;
            }
            view_count[j] += 1;
        }
    }
    let features = sums
        .chunks(channels.max(1))
        .zip(&view_count)
        .flat_map(|(row, &n)| {
            row.iter()
                .map(move |&s| if n == 0 { 0.0 } else { (s / n as f64) as f32 })
        })
        .collect();
    Ok(PointFeatureBank {
        channels,
        features,
        view_count,
    })
}
