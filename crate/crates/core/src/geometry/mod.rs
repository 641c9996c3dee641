//! Mesh representation and pose mathematics.
//!
//! Everything in here is immutable after construction and free of interior
//! mutability, so meshes and poses can be shared across render workers.

mod mesh;
mod obj;
mod pose;
mod transform;

pub use mesh::{Mesh, Texture};
pub use obj::{load_obj, ObjError};
pub use pose::{
    circular_distance, frustum_bound, wrap_angle, FrustumSpec, PoseParam, PoseParams, TrigPose,
    DEFAULT_DEPTH_RANGE, DEFAULT_HALF_ANGLE_DEG,
};
pub(crate) use transform::axis_angle_unchecked as transform_axis_angle;
pub use transform::{
    apply_pose, compose_chain, homogeneous, pose_rotation, rotation_matrix_axis_angle,
    translation_matrix, TransformChain, PITCH_AXIS, ROLL_AXIS, YAW_AXIS,
};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;

/// Tolerance on axis length for axis-angle rotations and transform chains.
pub const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation axis must be unit length, got norm {norm}")]
    NonUnitAxis { norm: f64 },
    #[error("z_delta {z} outside depth range [{min}, {max}]")]
    DepthOutOfRange { z: f64, min: f64, max: f64 },
    #[error("{axis}_delta {value} exceeds frustum bound {bound} at z_delta {z}")]
    LateralOutOfRange {
        axis: char,
        value: f64,
        bound: f64,
        z: f64,
    },
    #[error("angle {name} = {value} is not finite")]
    NonFiniteAngle { name: &'static str, value: f64 },
    #[error("degenerate (cos, sin) pair for {name}: both components are zero")]
    DegenerateAngle { name: &'static str },
    #[error("invalid frustum: {0}")]
    InvalidFrustum(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}
