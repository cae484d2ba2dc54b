use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cloud::Vec3;

/// Default number of views.
pub const DEFAULT_VIEWS: usize = 10;
/// Default camera distance from the origin, in normalized units.
pub const DEFAULT_RADIUS: f64 = 2.2;
/// Default square image side; divisible by the 14-pixel patch size.
pub const DEFAULT_RESOLUTION: usize = 518;
/// Focal length in pixels per pixel of image width. A unit-diagonal shape
/// seen from [`DEFAULT_RADIUS`] fills about 90% of the frame.
pub const FOCAL_PER_WIDTH: f64 = 2.0;

/// A pinhole camera. Image `u` grows to the right, `v` downwards; pixel
/// `(c, r)` has its center at `u = c`, `v = r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub view_id: usize,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub resolution: [usize; 2],
}

/// Continuous image coordinates and signed depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn is_behind(&self) -> bool {
        self.depth <= 0.0
    }
}

/// Right, down and forward unit axes of a camera.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
}

/// `+y`, or `+x` when the view direction is within 1e-3 of `±y`.
pub fn default_up(forward: &Vec3) -> Vec3 {
    if forward.normalize().dot(&Vec3::y()).abs() > 1.0 - 1e-3 {
        Vec3::x()
    } else {
        Vec3::y()
    }
}

impl CameraView {
    /// Camera at `position` looking at `look_at` with the default up rule.
    pub fn looking_at(view_id: usize, position: Vec3, look_at: Vec3, resolution: [usize; 2]) -> Result<Self> {
        let forward = look_at - position;
        if forward.norm() == 0.0 {
            return Err(Error::Configuration("camera position equals look-at point".into()));
        }
        if resolution[0] == 0 || resolution[1] == 0 {
            return Err(Error::Configuration("zero camera resolution".into()));
        }
        let up = default_up(&forward);
        let [w, h] = resolution;
        Ok(Self {
            view_id,
            position: position.into(),
            look_at: look_at.into(),
            up: up.into(),
            focal: FOCAL_PER_WIDTH * w as f64,
            principal_point: [(w as f64 - 1.0) * 0.5, (h as f64 - 1.0) * 0.5],
            resolution,
        })
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn width(&self) -> usize {
        self.resolution[0]
    }

    pub fn height(&self) -> usize {
        self.resolution[1]
    }

    pub fn frame(&self) -> Result<CameraFrame> {
        let forward = Vec3::from(self.look_at) - self.position();
        if forward.norm() == 0.0 {
            return Err(Error::Configuration("camera position equals look-at point".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&Vec3::from(self.up));
        if right.norm() < 1e-12 {
            return Err(Error::Configuration("up vector parallel to view direction".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Ok(CameraFrame { right, down, forward })
    }

    /// Checks the camera invariants.
    pub fn validate(&self) -> Result<()> {
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(Error::Configuration("zero camera resolution".into()));
        }
        if !(self.focal > 0.0) {
            return Err(Error::Configuration("non-positive focal length".into()));
        }
        self.frame().map(|_| ())
    }

    /// Pinhole projection of `p`.
    pub fn project_point(&self, p: &Vec3) -> Result<Projection> {
        self.project_with(&self.frame()?, p)
    }

    /// Projection with a precomputed frame.
    pub fn project_with(&self, frame: &CameraFrame, p: &Vec3) -> Result<Projection> {
        let d = p - self.position();
        let (x, y, z) = (frame.right.dot(&d), frame.down.dot(&d), frame.forward.dot(&d));
        if z.abs() < 1e-12 {
            return Err(Error::ProjectionSingular);
        }
        Ok(Projection {
            u: self.principal_point[0] + self.focal * x / z,
            v: self.principal_point[1] + self.focal * y / z,
            depth: z,
        })
    }
}

/// `m` cameras on a Fibonacci sphere of the given radius, all aimed at
/// the origin. A single camera sits at `(0, 0, radius)`.
pub fn make_cameras(m: usize, radius: f64, resolution: [usize; 2]) -> Result<Vec<CameraView>> {
    if m == 0 {
        return Err(Error::Configuration("at least one view is required".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Configuration("camera radius must be positive".into()));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..m)
        .map(|i| {
            let height = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
            let ring = (1.0 - height * height).max(0.0).sqrt();
            let phi = golden * i as f64;
            let pos = Vec3::new(ring * phi.sin(), height, ring * phi.cos()) * radius;
            CameraView::looking_at(i, pos, Vec3::zeros(), resolution)
        })
        .collect()
}
