use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Label value for unlabeled points.
pub const UNLABELED: i32 = -1;

/// One shape in normalized space: bounding-box diagonal 1, centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub labels: Option<Vec<i32>>,
    pub category: String,
    pub num_classes: usize,
}

/// Axis-aligned bounds of a point set.
pub fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn check_labels(labels: &[i32], k: usize) -> Result<()> {
    match labels.iter().find(|&&l| l < UNLABELED || l >= k as i32) {
        Some(l) => Err(Error::Configuration(format!("label {l} outside [-1, {k})"))),
        None => Ok(()),
    }
}

/// Translates the bounding-box center to the origin and scales uniformly
/// to a unit diagonal. Normals are renormalized, never transformed.
pub fn normalize_cloud(
    raw_positions: &[Vec3],
    normals: &[Vec3],
    colors: Option<Vec<[f64; 3]>>,
    labels: Option<Vec<i32>>,
    category: &str,
    num_classes: usize,
) -> Result<PointCloud> {
    let n = raw_positions.len();
    if n == 0 {
        return Err(Error::DegenerateInput("empty point cloud".into()));
    }
    if normals.len() != n {
        return Err(Error::Configuration(format!("{} normals for {n} points", normals.len())));
    }
    if colors.as_ref().is_some_and(|c| c.len() != n) || labels.as_ref().is_some_and(|l| l.len() != n) {
        return Err(Error::Configuration("per-point attribute length mismatch".into()));
    }
    if let Some(l) = &labels {
        check_labels(l, num_classes)?;
    }
    if raw_positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::DegenerateInput("non-finite position".into()));
    }
    let (lo, hi) = bounding_box(raw_positions);
    let diagonal = (hi - lo).norm();
    if diagonal <= 0.0 {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let center = (lo + hi) * 0.5;
    let positions = raw_positions.iter().map(|p| (p - center) / diagonal).collect();
    let normals = normals
        .iter()
        .map(|nrm| {
            let len = nrm.norm();
            if !len.is_finite() || len == 0.0 {
                Err(Error::DegenerateInput("zero or non-finite normal".into()))
            } else {
                Ok(nrm / len)
            }
        })
        .collect::<Result<_>>()?;
    Ok(PointCloud {
        positions,
        normals,
        colors,
        labels,
        category: category.to_string(),
        num_classes,
    })
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks the invariants of an already-normalized cloud, with a tolerance
    /// suited to positions that went through `f32` storage.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.len();
        if n == 0 || self.normals.len() != n {
            return Err(Error::DegenerateInput("empty cloud or normal count mismatch".into()));
        }
        if let Some(bad) = self.normals.iter().position(|v| (v.norm() - 1.0).abs() > 1e-4) {
            return Err(Error::DegenerateInput(format!("normal {bad} is not unit length")));
        }
        let (lo, hi) = bounding_box(&self.positions);
        if ((hi - lo).norm() - 1.0).abs() > tol || ((lo + hi) * 0.5).norm() > tol {
            return Err(Error::DegenerateInput("cloud is not normalized".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::Configuration("label count mismatch".into()));
            }
            check_labels(l, self.num_classes)?;
        }
        Ok(())
    }

    /// Radius of the smallest origin-centered ball holding every point.
    pub fn bounding_radius(&self) -> f64 {
        self.positions.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_normals(n: usize) -> Vec<Vec3> {
        vec![Vec3::z(); n]
    }

    #[test]
    fn unit_cube_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let c = normalize_cloud(&corners, &unit_normals(8), None, None, "cube", 1).unwrap();
        let (lo, hi) = bounding_box(&c.positions);
        assert!(((hi - lo).norm() - 1.0).abs() < 1e-12);
        assert!(((lo + hi) * 0.5).norm() < 1e-12);
        // scale factor 1/√3 maps the corner (1,1,1) to (0.5,0.5,0.5)/√3
        let s = 1.0 / 3f64.sqrt();
        assert!((c.positions[7] - Vec3::repeat(0.5 * s)).norm() < 1e-12);
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        let err = normalize_cloud(&pts, &unit_normals(4), None, None, "x", 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn normals_are_renormalized_only() {
        let pts = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        let normals = vec![Vec3::new(0.0, 3.0, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let c = normalize_cloud(&pts, &normals, None, None, "x", 1).unwrap();
        assert!((c.normals[0] - Vec3::y()).norm() < 1e-15);
        assert!((c.normals[1].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_label_rejected() {
        let pts = vec![Vec3::zeros(), Vec3::x()];
        let err = normalize_cloud(&pts, &unit_normals(2), None, Some(vec![0, 3]), "x", 3).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }
}
