use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

/// Half of the vertical angle of view used by default, in degrees.
pub const DEFAULT_HALF_ANGLE_DEG: f64 = 8.213;
pub const DEFAULT_DEPTH_RANGE: [f64; 2] = [-28.0, 0.0];

/// Maps any finite angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid of a tiny negative value can round up to exactly 2π.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest angular distance between two angles, always in `[0, π]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}

/// The six pose parameters, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseParam {
    X,
    Y,
    Z,
    Yaw,
    Pitch,
    Roll,
}

impl PoseParam {
    pub const ALL: [PoseParam; 6] = [
        PoseParam::X,
        PoseParam::Y,
        PoseParam::Z,
        PoseParam::Yaw,
        PoseParam::Pitch,
        PoseParam::Roll,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_angle(self) -> bool {
        matches!(self, PoseParam::Yaw | PoseParam::Pitch | PoseParam::Roll)
    }

    pub fn name(self) -> &'static str {
        match self {
            PoseParam::X => "x_delta",
            PoseParam::Y => "y_delta",
            PoseParam::Z => "z_delta",
            PoseParam::Yaw => "theta_y",
            PoseParam::Pitch => "theta_p",
            PoseParam::Roll => "theta_r",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        PoseParam::ALL.into_iter().find(|p| {
            p.name() == s
                || matches!(
                    (p, s),
                    (PoseParam::X, "x")
                        | (PoseParam::Y, "y")
                        | (PoseParam::Z, "z")
                        | (PoseParam::Yaw, "yaw")
                        | (PoseParam::Pitch, "pitch")
                        | (PoseParam::Roll, "roll")
                )
        })
    }
}

impl fmt::Display for PoseParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A 6D object pose: translation in world units, yaw/pitch/roll in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PoseParams {
    pub x_delta: f64,
    pub y_delta: f64,
    pub z_delta: f64,
    pub theta_y: f64,
    pub theta_p: f64,
    pub theta_r: f64,
}

impl PoseParams {
    /// Builds a pose, wrapping the angles into `[0, 2π)`.
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self {
            x_delta: x,
            y_delta: y,
            z_delta: z,
            theta_y: wrap_angle(yaw),
            theta_p: wrap_angle(pitch),
            theta_r: wrap_angle(roll),
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.x_delta,
            self.y_delta,
            self.z_delta,
            self.theta_y,
            self.theta_p,
            self.theta_r,
        ]
    }

    pub fn get(&self, param: PoseParam) -> f64 {
        self.to_array()[param.index()]
    }

    /// Copy of this pose with one parameter replaced (angles are wrapped).
    pub fn with(&self, param: PoseParam, value: f64) -> Self {
        let mut v = self.to_array();
        v[param.index()] = value;
        Self::from_array(v)
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.x_delta, self.y_delta, self.z_delta)
    }

    /// Checks every invariant against a frustum: depth range, lateral
    /// bounds and angle normalization.
    pub fn validate(&self, spec: &FrustumSpec) -> Result<(), GeometryError> {
        for (name, value) in [
            ("theta_y", self.theta_y),
            ("theta_p", self.theta_p),
            ("theta_r", self.theta_r),
        ] {
            if !value.is_finite() || !(0.0..TAU).contains(&value) {
                return Err(GeometryError::NonFiniteAngle { name, value });
            }
        }
        let s = frustum_bound(spec, self.z_delta)?;
        for (axis, value) in [('x', self.x_delta), ('y', self.y_delta)] {
            if !value.is_finite() || value.abs() > s {
                return Err(GeometryError::LateralOutOfRange {
                    axis,
                    value,
                    bound: s,
                    z: self.z_delta,
                });
            }
        }
        Ok(())
    }
}

/// Camera viewing-frustum parameters used to bound object translations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrustumSpec {
    /// Half of the vertical angle of view, radians.
    pub half_angle_v: f64,
    pub camera_z: f64,
    pub depth_range: [f64; 2],
}

impl Default for FrustumSpec {
    fn default() -> Self {
        Self {
            half_angle_v: DEFAULT_HALF_ANGLE_DEG.to_radians(),
            camera_z: 0.0,
            depth_range: DEFAULT_DEPTH_RANGE,
        }
    }
}

impl FrustumSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.half_angle_v > 0.0 && self.half_angle_v < std::f64::consts::FRAC_PI_2) {
            return Err(GeometryError::InvalidFrustum(format!(
                "half_angle_v {} must lie in (0, pi/2)",
                self.half_angle_v
            )));
        }
        let [lo, hi] = self.depth_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(GeometryError::InvalidFrustum(format!(
                "depth range [{lo}, {hi}] is not an ordered finite interval"
            )));
        }
        if !self.camera_z.is_finite() {
            return Err(GeometryError::InvalidFrustum("camera_z not finite".into()));
        }
        Ok(())
    }

    pub fn contains_depth(&self, z: f64) -> bool {
        z >= self.depth_range[0] && z <= self.depth_range[1]
    }

    /// Lateral bound without the depth-range check.
    pub fn lateral_bound(&self, z: f64) -> f64 {
        (self.camera_z - z).abs() * self.half_angle_v.tan()
    }

    /// Clamps a translation into the frustum box: depth first, then the
    /// lateral bound at the clamped depth.
    pub fn clamp_translation(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let z = z.clamp(self.depth_range[0], self.depth_range[1]);
        let s = self.lateral_bound(z);
        (x.clamp(-s, s), y.clamp(-s, s), z)
    }
}

/// Largest lateral offset `s = d · tan(half_angle_v)` keeping the object
/// centre in frame at depth `z_delta`.
pub fn frustum_bound(spec: &FrustumSpec, z_delta: f64) -> Result<f64, GeometryError> {
    if !spec.contains_depth(z_delta) {
        return Err(GeometryError::DepthOutOfRange {
            z: z_delta,
            min: spec.depth_range[0],
            max: spec.depth_range[1],
        });
    }
    Ok(spec.lateral_bound(z_delta))
}

/// Pose with every angle replaced by a `(cos, sin)` pair: the 9-dimensional
/// space the finite-difference optimizer moves in.
///
/// Layout: `[x, y, z, cos yaw, sin yaw, cos pitch, sin pitch, cos roll, sin roll]`.
/// Pairs are allowed to drift off the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigPose(pub [f64; 9]);

impl TrigPose {
    pub const DIM: usize = 9;

    pub fn encode(pose: &PoseParams) -> Self {
        let (sy, cy) = pose.theta_y.sin_cos();
        let (sp, cp) = pose.theta_p.sin_cos();
        let (sr, cr) = pose.theta_r.sin_cos();
        TrigPose([
            pose.x_delta,
            pose.y_delta,
            pose.z_delta,
            cy,
            sy,
            cp,
            sp,
            cr,
            sr,
        ])
    }

    /// Recovers angles with `atan2`, which ignores the pair's scale.
    pub fn decode(&self) -> Result<PoseParams, GeometryError> {
        let v = &self.0;
        let angle = |name: &'static str, c: f64, s: f64| -> Result<f64, GeometryError> {
            if !(c.is_finite() && s.is_finite()) {
                return Err(GeometryError::NonFiniteAngle {
                    name,
                    value: f64::NAN,
                });
            }
            if c == 0.0 && s == 0.0 {
                return Err(GeometryError::DegenerateAngle { name });
            }
            Ok(wrap_angle(s.atan2(c)))
        };
        Ok(PoseParams {
            x_delta: v[0],
            y_delta: v[1],
            z_delta: v[2],
            theta_y: angle("theta_y", v[3], v[4])?,
            theta_p: angle("theta_p", v[5], v[6])?,
            theta_r: angle("theta_r", v[7], v[8])?,
        })
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.0
    }
}
