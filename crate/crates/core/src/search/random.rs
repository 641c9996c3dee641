use std::f64::consts::TAU;

use rand::Rng;

use super::{Evaluator, Phase, SearchConfig, SearchError, TrialRecord};
use crate::geometry::{FrustumSpec, PoseParams};
use crate::parallel::{map_indexed, split_at_first_error};
use crate::rng::substream;

/// Uniform on the open interval `(a, b)`; `a` when the interval is empty.
pub(crate) fn open_uniform<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    if !(a < b) {
        return a;
    }
    loop {
        let v = rng.random_range(a..b);
        if v > a {
            return v;
        }
    }
}

/// Angles and lateral offsets drawn for a given depth.
pub fn sample_pose_at_depth<R: Rng + ?Sized>(rng: &mut R, spec: &FrustumSpec, z: f64) -> PoseParams {
    let s = spec.lateral_bound(z);
    let x = open_uniform(rng, -s, s);
    let y = open_uniform(rng, -s, s);
    let yaw = open_uniform(rng, 0.0, TAU);
    let pitch = open_uniform(rng, 0.0, TAU);
    let roll = open_uniform(rng, 0.0, TAU);
    PoseParams {
        x_delta: x,
        y_delta: y,
        z_delta: z,
        theta_y: yaw,
        theta_p: pitch,
        theta_r: roll,
    }
}

/// Depth uniform on `[near_limit, far_limit)` (never the camera-side end),
/// then lateral offsets inside the frustum bound at that depth.
pub fn sample_random_pose<R: Rng + ?Sized>(rng: &mut R, spec: &FrustumSpec) -> PoseParams {
    let [lo, hi] = spec.depth_range;
    let z = if lo < hi { rng.random_range(lo..hi) } else { lo };
    sample_pose_at_depth(rng, spec, z)
}

/// Evaluates `budget` independent random poses. Pose `i` comes from its own
/// substream, so the records do not depend on the execution policy.
pub fn run_random_search(eval: &Evaluator, cfg: &SearchConfig) -> Result<Vec<TrialRecord>, SearchError> {
    cfg.validate(eval.backend().num_classes())?;
    let frustum = cfg.frustum(eval.scene())?;
    let results = map_indexed(cfg.execution, cfg.budget, |i| {
        let pose = sample_random_pose(&mut substream(cfg.rng_seed, "rs", i as u64), &frustum);
        eval.record(i, Phase::Rs, &pose, cfg.target_class)
    });
    match split_at_first_error(results) {
        (records, None) => Ok(records),
        (records, Some(e)) => Err(SearchError::aborted(records, e)),
    }
}
