use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::geometry::PoseParams;
use crate::parallel::{map_indexed, ExecPolicy};
use crate::search::Evaluator;

/// Camera-to-object distances of the canonical sweep.
pub const SWEEP_DISTANCES: [f64; 3] = [4.0, 6.0, 8.0];
const YAWS: usize = 12;
const FIRST_YAW_DEG: f64 = 10.0;
const YAW_STEP_DEG: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawView {
    pub distance: f64,
    pub yaw_deg: f64,
    pub top_label: usize,
    pub confidence: f64,
    pub top1: bool,
    pub top5: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub distance: f64,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YawSweepReport {
    pub views: Vec<YawView>,
    pub per_distance: Vec<DistanceSummary>,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    /// Mean top-1 confidence.
    pub mean_confidence: f64,
}

/// `(distance, yaw in degrees, pose)` for the 36 canonical views: the object
/// sits `distance` in front of the camera, yawed 10°, 40°, …, 340°.
pub fn yaw_sweep_poses(camera_z: f64) -> Vec<(f64, f64, PoseParams)> {
    SWEEP_DISTANCES
        .iter()
        .flat_map(|&d| {
            (0..YAWS).map(move |j| {
                let deg = FIRST_YAW_DEG + YAW_STEP_DEG * j as f64;
                (d, deg, PoseParams::new(0.0, 0.0, camera_z - d, deg.to_radians(), 0.0, 0.0))
            })
        })
        .collect()
}

fn summarize(distance: f64, views: &[&YawView]) -> DistanceSummary {
    let n = views.len().max(1) as f64;
    DistanceSummary {
        distance,
        top1_accuracy: 100.0 * views.iter().filter(|v| v.top1).count() as f64 / n,
        top5_accuracy: 100.0 * views.iter().filter(|v| v.top5).count() as f64 / n,
        mean_confidence: views.iter().map(|v| v.confidence).sum::<f64>() / n,
    }
}

pub fn yaw_sweep_eval(eval: &Evaluator, policy: ExecPolicy) -> Result<YawSweepReport, AnalysisError> {
    let truth = eval
        .scene()
        .config()
        .true_class
        .ok_or_else(|| AnalysisError::invalid("yaw sweep needs the scene's true_class"))?;
    let poses = yaw_sweep_poses(eval.scene().frustum().camera_z);
    let results = map_indexed(policy, poses.len(), |i| {
        let (distance, yaw_deg, pose) = poses[i];
        let resp = eval.evaluate(&pose)?;
        Ok::<_, AnalysisError>(YawView {
            distance,
            yaw_deg,
            top_label: resp.top_label,
            confidence: resp.confidence(),
            top1: resp.top_label == truth,
            top5: resp.top_k(5).iter().any(|&(c, _)| c == truth),
        })
    });
    let views = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let per_distance = SWEEP_DISTANCES
        .iter()
        .map(|&d| summarize(d, &views.iter().filter(|v| v.distance == d).collect::<Vec<_>>()))
        .collect();
    let all = summarize(0.0, &views.iter().collect::<Vec<_>>());
    Ok(YawSweepReport {
        views,
        per_distance,
        top1_accuracy: all.top1_accuracy,
        top5_accuracy: all.top5_accuracy,
        mean_confidence: all.mean_confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SyntheticConfig;
    use crate::testkit::{cube_scene, synthetic};

    #[test]
    fn thirty_six_views() {
        let p = yaw_sweep_poses(0.0);
        assert_eq!(p.len(), 36);
        assert_eq!(p[0].1, 10.0);
        assert_eq!(p[11].1, 340.0);
        assert_eq!(p[12].2.z_delta, -6.0);
    }

    #[test]
    fn correct_everywhere_is_full_accuracy() {
        let mut cfg = SyntheticConfig::uniform(8);
        cfg.bias = vec![0.0; 8];
        cfg.bias[5] = 1.0;
        let eval = Evaluator::new(cube_scene(16, Some(5)), synthetic(cfg));
        let r = yaw_sweep_eval(&eval, ExecPolicy::Parallel).unwrap();
        assert_eq!(eval.calls(), 36);
        assert_eq!(r.top1_accuracy, 100.0);
        assert_eq!(r.top5_accuracy, 100.0);
        assert_eq!(r.per_distance.len(), 3);
    }

    #[test]
    fn top5_counts_near_misses() {
        let mut cfg = SyntheticConfig::uniform(8);
        cfg.bias = vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.0, 0.0];
        let eval = Evaluator::new(cube_scene(16, Some(3)), synthetic(cfg));
        let r = yaw_sweep_eval(&eval, ExecPolicy::Sequential).unwrap();
        assert_eq!(r.top1_accuracy, 0.0);
        assert_eq!(r.top5_accuracy, 100.0);
    }
}
