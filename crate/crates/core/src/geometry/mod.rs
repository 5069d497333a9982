//! Poses, projection, template meshes and exact point-to-surface distances.

mod boxes;
mod camera;
mod mesh;
pub mod obj;
mod pose;
mod template;

pub use boxes::{posed_box, OrientedBox3D};
pub use camera::{filter_points_by_mask, CameraCalibration, CloudFrame, Mask2D, PointCloud, Projection};
pub use mesh::{point_to_mesh_sq_distance, ClosestPoint, Region, TemplateMesh, TightBox};
pub use pose::{
    apply_pose, normalize_angle, wrap_pi, yaw_rotation, yaw_rotation_derivative, EgoMotion,
    Pose4DoF, RigidTransform, Vec3,
};
pub use template::{builtin_car_template, CarShape, DEFAULT_CAR_DIMENSIONS};
