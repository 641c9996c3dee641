use serde::{Deserialize, Serialize};

use super::{GeometryError, Mat3, Mat4, Mesh, PoseParams, Vec3, AXIS_TOLERANCE};

/// Yaw rotates about the vertical axis.
pub const YAW_AXIS: [f64; 3] = [0.0, 1.0, 0.0];
pub const PITCH_AXIS: [f64; 3] = [1.0, 0.0, 0.0];
pub const ROLL_AXIS: [f64; 3] = [0.0, 0.0, 1.0];

/// Rotation by `theta` radians about a unit `axis` (right-handed).
///
/// The axis is checked, not normalized: a caller handing in a non-unit axis
/// most likely has a bug upstream.
pub fn rotation_matrix_axis_angle(axis: Vec3, theta: f64) -> Result<Mat3, GeometryError> {
    let norm = axis.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > AXIS_TOLERANCE {
        return Err(GeometryError::NonUnitAxis { norm });
    }
    Ok(axis_angle_unchecked(&axis, theta))
}

pub(crate) fn axis_angle_unchecked(axis: &Vec3, theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    let (x, y, z) = (axis.x, axis.y, axis.z);
    Mat3::new(
        x * x * t + c,
        x * y * t - z * s,
        x * z * t + y * s,
        x * y * t + z * s,
        y * y * t + c,
        y * z * t - x * s,
        x * z * t - y * s,
        y * z * t + x * s,
        z * z * t + c,
    )
}

/// Embeds a 3×3 linear map into a 4×4 homogeneous matrix.
pub fn homogeneous(linear: &Mat3) -> Mat4 {
    linear.to_homogeneous()
}

pub fn translation_matrix(t: Vec3) -> Mat4 {
    Mat4::new_translation(&t)
}

/// `R_yaw · R_pitch · R_roll` for a pose: roll is applied first, about fixed
/// world axes.
pub fn pose_rotation(pose: &PoseParams) -> Mat3 {
    let yaw = axis_angle_unchecked(&Vec3::from(YAW_AXIS), pose.theta_y);
    let pitch = axis_angle_unchecked(&Vec3::from(PITCH_AXIS), pose.theta_p);
    let roll = axis_angle_unchecked(&Vec3::from(ROLL_AXIS), pose.theta_r);
    yaw * pitch * roll
}

/// Posed vertex positions `T + R v` for every mesh vertex.
pub fn apply_pose(mesh: &Mesh, pose: &PoseParams) -> Vec<Vec3> {
    let rotation = pose_rotation(pose);
    let t = pose.translation();
    mesh.vertices.iter().map(|v| t + rotation * v).collect()
}

/// An ordered list of axis-angle rotations followed by one translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformChain {
    rotations: Vec<([f64; 3], f64)>,
    translation: [f64; 3],
}

impl TransformChain {
    pub fn new(
        rotations: Vec<([f64; 3], f64)>,
        translation: [f64; 3],
    ) -> Result<Self, GeometryError> {
        for (axis, _) in &rotations {
            let norm = Vec3::from(*axis).norm();
            if !norm.is_finite() || (norm - 1.0).abs() > AXIS_TOLERANCE {
                return Err(GeometryError::NonUnitAxis { norm });
            }
        }
        Ok(Self {
            rotations,
            translation,
        })
    }

    /// The roll → pitch → yaw chain equivalent to [`apply_pose`].
    pub fn from_pose(pose: &PoseParams) -> Self {
        Self {
            rotations: vec![
                (ROLL_AXIS, pose.theta_r),
                (PITCH_AXIS, pose.theta_p),
                (YAW_AXIS, pose.theta_y),
            ],
            translation: [pose.x_delta, pose.y_delta, pose.z_delta],
        }
    }

    pub fn rotations(&self) -> &[([f64; 3], f64)] {
        &self.rotations
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }
}

/// `M = T · R_{n-1} ··· R_1 · R_0`: the first rotation in the list is
/// applied to a point first.
pub fn compose_chain(chain: &TransformChain) -> Mat4 {
    let rotation = chain
        .rotations
        .iter()
        .fold(Mat4::identity(), |acc, (axis, theta)| {
            homogeneous(&axis_angle_unchecked(&Vec3::from(*axis), *theta)) * acc
        });
    translation_matrix(Vec3::from(chain.translation)) * rotation
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn zero_rotation_is_identity() {
        let r = rotation_matrix_axis_angle(Vec3::y(), 0.0).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_y() {
        let r = rotation_matrix_axis_angle(Vec3::y(), FRAC_PI_2).unwrap();
        let expected = Mat3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn half_turn_about_x() {
        let r = rotation_matrix_axis_angle(Vec3::x(), PI).unwrap();
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn non_unit_axis_rejected() {
        let err = rotation_matrix_axis_angle(Vec3::new(0.0, 2.0, 0.0), 1.0).unwrap_err();
        assert_eq!(err, GeometryError::NonUnitAxis { norm: 2.0 });
        assert!(TransformChain::new(vec![([1.0, 1.0, 0.0], 0.3)], [0.0; 3]).is_err());
    }

    #[test]
    fn homogeneous_block_structure() {
        let theta = 0.7;
        let t = Vec3::new(1.0, -2.0, 3.5);
        let chain = TransformChain::new(vec![(ROLL_AXIS, theta)], t.into()).unwrap();
        let m = compose_chain(&chain);
        let r = rotation_matrix_axis_angle(Vec3::z(), theta).unwrap();
        assert_eq!(m.fixed_view::<3, 3>(0, 0).into_owned(), r);
        assert_eq!(m.fixed_view::<3, 1>(0, 3).into_owned(), t);
        assert_eq!(m.row(3).into_owned(), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn empty_chain_is_identity() {
        let chain = TransformChain::new(vec![], [0.0; 3]).unwrap();
        assert_eq!(compose_chain(&chain), Mat4::identity());
    }

    #[test]
    fn two_eighth_turns_make_a_quarter_turn() {
        let chain =
            TransformChain::new(vec![(YAW_AXIS, FRAC_PI_4), (YAW_AXIS, FRAC_PI_4)], [0.0; 3])
                .unwrap();
        let direct = homogeneous(&rotation_matrix_axis_angle(Vec3::y(), FRAC_PI_2).unwrap());
        assert_relative_eq!(compose_chain(&chain), direct, epsilon = 1e-12);
    }

    #[test]
    fn chain_order_is_first_rotation_first() {
        // Roll a point on +x into +y, then yaw: yaw leaves +y alone.
        let chain = TransformChain::new(
            vec![(ROLL_AXIS, FRAC_PI_2), (YAW_AXIS, FRAC_PI_2)],
            [0.0; 3],
        )
        .unwrap();
        let p = compose_chain(&chain) * nalgebra::Vector4::new(1.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(p, nalgebra::Vector4::new(0.0, 1.0, 0.0, 1.0), epsilon = 1e-15);
    }
}
