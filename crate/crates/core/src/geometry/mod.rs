//! Shapes, cameras, projection and occlusion culling.

pub mod camera;
pub mod cloud;
pub mod visibility;

pub use camera::{make_cameras, CameraView, Projection};
pub use cloud::{bounding_box, normalize_cloud, PointCloud, Vec3, UNLABELED};
pub use visibility::{rasterize_visibility, PointProjection, RasterConfig, VisibilityMap};
