mod common;

use nalgebra::{Isometry3, Matrix4, Point3, Vector4};
use proptest::prelude::*;
use rand::Rng;

use seggraph_core::geometry::{make_cameras, normalize_cloud, rasterize_visibility, CameraView, PointCloud, RasterConfig, Vec3};

use common::{brute_visibility, random_cloud, random_rotation, rng};

/// Projection through homogeneous matrices: a right-handed look-at view
/// matrix, a flip to the image's down/forward axes, and the intrinsics.
fn matrix_projection(cam: &CameraView, p: &Vec3) -> (f64, f64, f64) {
    let view = Isometry3::look_at_rh(
        &Point3::from(cam.position()),
        &Point3::from(Vec3::from(cam.look_at)),
        &Vec3::from(cam.up),
    )
    .to_homogeneous();
    let flip = Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, 1.0));
    let [cx, cy] = cam.principal_point;
    let f = cam.focal;
    #[rustfmt::skip]
    let k = Matrix4::new(
        f, 0.0, cx, 0.0,
        0.0, f, cy, 0.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    let cam_space = flip * view * p.push(1.0);
    let img = k * cam_space;
    (img.x / img.z, img.y / img.z, cam_space.z)
}

#[test]
fn projection_matches_matrix_pipeline() {
    let mut r = rng(3);
    let cams = make_cameras(10, 2.2, [518, 518]).unwrap();
    for _ in 0..2000 {
        let cam = &cams[r.random_range(0..cams.len())];
        let p = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let got = cam.project_point(&p).unwrap();
        let (u, v, z) = matrix_projection(cam, &p);
        assert!((got.u - u).abs() < 1e-6 && (got.v - v).abs() < 1e-6 && (got.depth - z).abs() < 1e-6);
    }
}

#[test]
fn visibility_matches_depth_sort() {
    for seed in 0..20 {
        let cloud = random_cloud(seed, 200);
        for (splat, eps) in [(1, 0.0), (2, 0.01), (3, 0.05)] {
            let cfg = RasterConfig { splat, depth_epsilon: eps };
            for cam in make_cameras(6, 2.2, [48, 40]).unwrap() {
                let vis = rasterize_visibility(&cloud, &cam, cfg);
                let flags: Vec<bool> = vis.point_proj.iter().map(|p| p.visible).collect();
                assert_eq!(flags, brute_visibility(&cloud, &cam, cfg), "seed {seed} splat {splat} view {}", cam.view_id);
            }
        }
    }
}

#[test]
fn owners_are_visible_and_nearest() {
    let cloud = random_cloud(9, 300);
    let cfg = RasterConfig::default();
    for cam in make_cameras(4, 2.2, [64, 64]).unwrap() {
        let vis = rasterize_visibility(&cloud, &cam, cfg);
        for r in 0..vis.height {
            for c in 0..vis.width {
                let o = vis.owner(c, r);
                if o >= 0 {
                    assert!(vis.point_proj[o as usize].visible);
                }
            }
        }
        assert!(vis.visible_count() < cloud.len(), "some points are occluded");
    }
}

fn rotate_camera(cam: &CameraView, rot: &nalgebra::Rotation3<f64>) -> CameraView {
    CameraView {
        position: (rot * cam.position()).into(),
        look_at: (rot * Vec3::from(cam.look_at)).into(),
        up: (rot * Vec3::from(cam.up)).into(),
        ..cam.clone()
    }
}

/// Rounding ties make pixel assignment ambiguous under rotation.
fn has_rounding_tie(cloud: &PointCloud, cam: &CameraView) -> bool {
    let near_half = |x: f64| ((x - x.floor()) - 0.5).abs() < 1e-6;
    cloud.positions.iter().any(|p| {
        let pr = cam.project_point(p).unwrap();
        near_half(pr.u) || near_half(pr.v)
    })
}

#[test]
fn joint_rotation_preserves_visibility() {
    let mut r = rng(11);
    let mut checked = 0;
    for seed in 0..30 {
        let cloud = random_cloud(100 + seed, 250);
        let rot = random_rotation(&mut r);
        let rotated = PointCloud {
            positions: cloud.positions.iter().map(|p| rot * p).collect(),
            normals: cloud.normals.iter().map(|n| rot * n).collect(),
            ..cloud.clone()
        };
        for cam in make_cameras(5, 2.2, [64, 64]).unwrap() {
            if has_rounding_tie(&cloud, &cam) {
                continue;
            }
            let a = rasterize_visibility(&cloud, &cam, RasterConfig::default());
            let b = rasterize_visibility(&rotated, &rotate_camera(&cam, &rot), RasterConfig::default());
            let fa: Vec<bool> = a.point_proj.iter().map(|p| p.visible).collect();
            let fb: Vec<bool> = b.point_proj.iter().map(|p| p.visible).collect();
            assert_eq!(fa, fb);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn normalize_is_idempotent_and_keeps_distance_ratios() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = 100;
        let raw: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(r.random_range(-7.0..3.0), r.random_range(2.0..4.0), r.random_range(-0.1..0.1)))
            .collect();
        let normals = vec![Vec3::new(0.0, 0.0, 2.0); n];
        let once = normalize_cloud(&raw, &normals, None, None, "c", 1).unwrap();
        let twice = normalize_cloud(&once.positions, &once.normals, None, None, "c", 1).unwrap();
        for (a, b) in once.positions.iter().zip(&twice.positions) {
            assert!((a - b).norm() < 1e-9);
        }
        for _ in 0..100 {
            let (i, j, k, l) = (r.random_range(0..n), r.random_range(0..n), r.random_range(0..n), r.random_range(0..n));
            let raw_d = (raw[k] - raw[l]).norm();
            if raw_d < 1e-3 {
                continue;
            }
            let ratio_raw = (raw[i] - raw[j]).norm() / raw_d;
            let ratio = (once.positions[i] - once.positions[j]).norm() / (once.positions[k] - once.positions[l]).norm();
            assert!((ratio_raw - ratio).abs() < 1e-9 * ratio_raw.max(1.0));
        }
        assert!(once.normals.iter().all(|v| (v - Vec3::z()).norm() < 1e-15));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn visibility_is_monotone_in_epsilon(seed in 0u64..1000, lo in 0.0f64..0.05, extra in 0.0f64..0.1, splat in 1usize..4) {
        let cloud = random_cloud(seed, 150);
        let cam = &make_cameras(3, 2.2, [40, 40]).unwrap()[(seed % 3) as usize];
        let a = rasterize_visibility(&cloud, cam, RasterConfig { splat, depth_epsilon: lo });
        let b = rasterize_visibility(&cloud, cam, RasterConfig { splat, depth_epsilon: lo + extra });
        for (x, y) in a.point_proj.iter().zip(&b.point_proj) {
            prop_assert!(!x.visible || y.visible);
        }
    }

    #[test]
    fn cameras_sit_on_the_sphere(m in 1usize..40, radius in 1.0f64..5.0) {
        let cams = make_cameras(m, radius, [32, 32]).unwrap();
        prop_assert_eq!(cams.len(), m);
        for c in &cams {
            prop_assert!((c.position().norm() - radius).abs() < 1e-9);
            let axis = c.project_point(&Vec3::zeros()).unwrap();
            prop_assert!((axis.u - c.principal_point[0]).abs() < 1e-9 && (axis.v - c.principal_point[1]).abs() < 1e-9);
        }
    }
}
