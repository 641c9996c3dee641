use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{median, AnalysisError};
use crate::geometry::{circular_distance, PoseParam, PoseParams};
use crate::parallel::{map_indexed, ExecPolicy};
use crate::renderer::{bbox_area, project_point};
use crate::rng::substream;
use crate::search::{open_uniform, sample_random_pose, Evaluator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default = "default_hundred")]
    pub n_starts: usize,
    #[serde(default = "default_hundred")]
    pub n_resamples: usize,
    /// Explicit starting poses; otherwise drawn from correctly classified
    /// random-search samples.
    #[serde(default)]
    pub starts: Option<Vec<PoseParams>>,
    /// Random poses tried when looking for correctly classified starts.
    #[serde(default = "default_candidates")]
    pub max_candidates: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub execution: ExecPolicy,
}

fn default_hundred() -> usize {
    100
}

fn default_candidates() -> usize {
    1_000_000
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            n_starts: 100,
            n_resamples: 100,
            starts: None,
            max_candidates: default_candidates(),
            rng_seed: 0,
            execution: ExecPolicy::default(),
        }
    }
}

/// One single-parameter resample of a start pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleRecord {
    pub object: String,
    pub start: usize,
    pub param: PoseParam,
    pub value: f64,
    /// `|new − old|`; circular for angles.
    pub delta: f64,
    /// Pixels of object-centre shift for x/y, percent bounding-box-area
    /// change for z, degrees for angles.
    pub delta_units: Option<f64>,
    pub top_label: usize,
    pub misclassified: bool,
}

pub fn unit_name(p: PoseParam) -> &'static str {
    match p {
        PoseParam::X | PoseParam::Y => "px",
        PoseParam::Z => "% bbox area",
        _ => "deg",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartParam {
    pub start: usize,
    pub param: PoseParam,
    pub resamples: usize,
    pub failure_rate: f64,
    pub min_delta: Option<f64>,
    pub min_delta_units: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub param: PoseParam,
    pub unit: String,
    pub starts: usize,
    pub failure_rate: Option<f64>,
    pub min_delta: Option<f64>,
    pub min_delta_units: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSensitivity {
    pub object: String,
    pub per_start: Vec<StartParam>,
    /// Medians over starts, one entry per parameter.
    pub params: Vec<ParamSummary>,
}

/// Medians over objects of the per-object medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub objects: usize,
    pub rows: Vec<ParamSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRun {
    pub starts: Vec<PoseParams>,
    pub skipped_starts: usize,
    pub records: Vec<ResampleRecord>,
    pub summary: ObjectSensitivity,
}

fn min_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

/// Per (start, parameter): failure rate in percent and the smallest change
/// that flipped the label; then medians over starts. Minimum changes are
/// absent when nothing flipped and are left out of the medians.
pub fn summarize_object(object: &str, records: &[ResampleRecord]) -> ObjectSensitivity {
    let mut groups: BTreeMap<(PoseParam, usize), Vec<&ResampleRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.object == object) {
        groups.entry((r.param, r.start)).or_default().push(r);
    }
    let per_start: Vec<StartParam> = groups
        .into_iter()
        .map(|((param, start), rs)| {
            let failed: Vec<&&ResampleRecord> = rs.iter().filter(|r| r.misclassified).collect();
            StartParam {
                start,
                param,
                resamples: rs.len(),
                failure_rate: 100.0 * failed.len() as f64 / rs.len() as f64,
                min_delta: min_of(failed.iter().map(|r| r.delta)),
                min_delta_units: min_of(failed.iter().filter_map(|r| r.delta_units)),
            }
        })
        .collect();
    let params = PoseParam::ALL
        .into_iter()
        .map(|param| {
            let rows: Vec<&StartParam> = per_start.iter().filter(|s| s.param == param).collect();
            let col = |f: &dyn Fn(&StartParam) -> Option<f64>| {
                median(&rows.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
            };
            ParamSummary {
                param,
                unit: unit_name(param).to_string(),
                starts: rows.len(),
                failure_rate: col(&|s| Some(s.failure_rate)),
                min_delta: col(&|s| s.min_delta),
                min_delta_units: col(&|s| s.min_delta_units),
            }
        })
        .collect();
    ObjectSensitivity {
        object: object.to_string(),
        per_start,
        params,
    }
}

pub fn median_of_medians(objects: &[ObjectSensitivity]) -> SensitivityTable {
    let rows = PoseParam::ALL
        .into_iter()
        .map(|param| {
            let ps: Vec<&ParamSummary> = objects
                .iter()
                .flat_map(|o| o.params.iter().filter(move |p| p.param == param))
                .collect();
            let col = |f: &dyn Fn(&ParamSummary) -> Option<f64>| {
                median(&ps.iter().filter_map(|p| f(p)).collect::<Vec<_>>())
            };
            ParamSummary {
                param,
                unit: unit_name(param).to_string(),
                starts: ps.iter().map(|p| p.starts).sum(),
                failure_rate: col(&|p| p.failure_rate),
                min_delta: col(&|p| p.min_delta),
                min_delta_units: col(&|p| p.min_delta_units),
            }
        })
        .collect();
    SensitivityTable {
        objects: objects.len(),
        rows,
    }
}

/// Draws a replacement value for one parameter following the random-search
/// distribution. Depth is limited to where the start's lateral offsets stay
/// inside the frustum.
fn resample<R: Rng>(rng: &mut R, eval: &Evaluator, start: &PoseParams, p: PoseParam) -> f64 {
    let f = eval.scene().frustum();
    match p {
        PoseParam::X | PoseParam::Y => {
            let s = f.lateral_bound(start.z_delta);
            open_uniform(rng, -s, s)
        }
        PoseParam::Z => {
            let m = start.x_delta.abs().max(start.y_delta.abs());
            let far = f.camera_z - m / f.half_angle_v.tan();
            let hi = f.depth_range[1].min(far);
            let lo = f.depth_range[0];
            if lo < hi {
                rng.random_range(lo..hi)
            } else {
                start.z_delta
            }
        }
        _ => open_uniform(rng, 0.0, TAU),
    }
}

/// Single-parameter perturbation study around correctly classified starts.
pub fn sensitivity(
    eval: &Evaluator,
    object: &str,
    cfg: &SensitivityConfig,
) -> Result<SensitivityRun, AnalysisError> {
    let truth = eval
        .scene()
        .config()
        .true_class
        .ok_or_else(|| AnalysisError::invalid("sensitivity needs the scene's true_class"))?;
    let (starts, skipped) = match &cfg.starts {
        Some(given) => {
            let checks = map_indexed(cfg.execution, given.len(), |i| eval.evaluate(&given[i]));
            let mut kept = Vec::new();
            for (pose, resp) in given.iter().zip(checks) {
                if resp?.top_label == truth {
                    kept.push(*pose);
                } else {
                    log::warn!("sensitivity start {pose:?} is not correctly classified; skipped");
                }
            }
            let skipped = given.len() - kept.len();
            (kept, skipped)
        }
        None => (find_starts(eval, truth, cfg)?, 0),
    };

    let scene = eval.scene().config();
    let start_info = map_indexed(cfg.execution, starts.len(), |i| {
        let (image, _) = eval.evaluate_full(&starts[i])?;
        let centre = project_point(scene, starts[i].translation()).ok();
        Ok::<_, AnalysisError>((bbox_area(&image), centre))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let n = cfg.n_resamples;
    let per_start = 6 * n;
    let results = map_indexed(cfg.execution, starts.len() * per_start, |k| {
        let (s, rest) = (k / per_start, k % per_start);
        let (p, r) = (PoseParam::ALL[rest / n], rest % n);
        let start = &starts[s];
        let mut rng = substream(cfg.rng_seed, &format!("sensitivity/{s}/{}", p.name()), r as u64);
        let value = resample(&mut rng, eval, start, p);
        let pose = start.with(p, value);
        let (image, resp) = eval.evaluate_full(&pose)?;
        let old = start.get(p);
        let delta = if p.is_angle() {
            circular_distance(pose.get(p), old)
        } else {
            (pose.get(p) - old).abs()
        };
        let (area0, centre0) = start_info[s];
        let delta_units = match p {
            PoseParam::X | PoseParam::Y => centre0.and_then(|c0| {
                project_point(scene, pose.translation())
                    .ok()
                    .map(|c| ((c.u - c0.u).powi(2) + (c.v - c0.v).powi(2)).sqrt())
            }),
            PoseParam::Z => (area0 > 0).then(|| {
                100.0 * (bbox_area(&image) as f64 - area0 as f64).abs() / area0 as f64
            }),
            _ => Some(delta.to_degrees()),
        };
        Ok::<_, AnalysisError>(ResampleRecord {
            object: object.to_string(),
            start: s,
            param: p,
            value: pose.get(p),
            delta,
            delta_units,
            top_label: resp.top_label,
            misclassified: resp.top_label != truth,
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize_object(object, &records);
    Ok(SensitivityRun {
        starts,
        skipped_starts: skipped,
        records,
        summary,
    })
}

fn find_starts(eval: &Evaluator, truth: usize, cfg: &SensitivityConfig) -> Result<Vec<PoseParams>, AnalysisError> {
    let frustum = eval.scene().frustum();
    let batch = (cfg.n_starts * 4).max(64);
    let mut starts = Vec::new();
    let mut tried = 0;
    while starts.len() < cfg.n_starts && tried < cfg.max_candidates {
        let size = batch.min(cfg.max_candidates - tried);
        let found = map_indexed(cfg.execution, size, |i| {
            let mut rng = substream(cfg.rng_seed, "sensitivity/start", (tried + i) as u64);
            let pose = sample_random_pose(&mut rng, &frustum);
            eval.evaluate(&pose).map(|r| (r.top_label == truth).then_some(pose))
        });
        for f in found {
            if let Some(p) = f? {
                if starts.len() < cfg.n_starts {
                    starts.push(p);
                }
            }
        }
        tried += size;
    }
    if starts.len() < cfg.n_starts {
        log::warn!(
            "only {} of {} correctly classified starts found in {tried} samples",
            starts.len(),
            cfg.n_starts
        );
    }
    Ok(starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SyntheticConfig;
    use crate::testkit::{cube_scene, synthetic, yaw_correct_fraction};

    fn rec(start: usize, param: PoseParam, delta: f64, mis: bool) -> ResampleRecord {
        ResampleRecord {
            object: "o".into(),
            start,
            param,
            value: 0.0,
            delta,
            delta_units: Some(delta * 10.0),
            top_label: mis as usize,
            misclassified: mis,
        }
    }

    #[test]
    fn summary_by_hand() {
        let records = vec![
            rec(0, PoseParam::Yaw, 0.5, true),
            rec(0, PoseParam::Yaw, 0.2, true),
            rec(0, PoseParam::Yaw, 0.1, false),
            rec(0, PoseParam::Yaw, 0.9, false),
            rec(1, PoseParam::Yaw, 0.3, false),
            rec(1, PoseParam::Yaw, 0.4, true),
        ];
        let s = summarize_object("o", &records);
        let yaw = &s.params[PoseParam::Yaw.index()];
        assert_eq!(yaw.failure_rate, Some(50.0));
        assert_eq!(yaw.min_delta, Some((0.2 + 0.4) / 2.0));
        assert_eq!(yaw.min_delta_units, Some((2.0 + 4.0) / 2.0));
        assert_eq!(s.params[0].starts, 0);
        assert_eq!(s.params[0].failure_rate, None);
    }

    #[test]
    fn correct_everywhere_has_no_failures() {
        let mut cfg = SyntheticConfig::uniform(3);
        cfg.bias = vec![0.0, 2.0, 0.0];
        let eval = Evaluator::new(cube_scene(16, Some(1)), synthetic(cfg));
        let sc = SensitivityConfig {
            n_starts: 3,
            n_resamples: 5,
            ..Default::default()
        };
        let run = sensitivity(&eval, "o", &sc).unwrap();
        assert_eq!(run.records.len(), 3 * 6 * 5);
        for p in &run.summary.params {
            assert_eq!(p.failure_rate, Some(0.0));
            assert_eq!(p.min_delta, None);
        }
    }

    #[test]
    fn incorrect_starts_skipped() {
        let eval = Evaluator::new(cube_scene(16, Some(0)), synthetic(yaw_correct_fraction(0.5)));
        let good = PoseParams::new(0.0, 0.0, -5.0, std::f64::consts::PI, 0.0, 0.0);
        let bad = PoseParams::new(0.0, 0.0, -5.0, 0.0, 0.0, 0.0);
        let sc = SensitivityConfig {
            n_resamples: 20,
            starts: Some(vec![good, bad]),
            ..Default::default()
        };
        let run = sensitivity(&eval, "o", &sc).unwrap();
        assert_eq!(run.skipped_starts, 1);
        assert_eq!(run.starts, vec![good]);
        // only yaw matters to this oracle
        let yaw = &run.summary.params[PoseParam::Yaw.index()];
        assert!(yaw.failure_rate.unwrap() > 20.0);
        assert_eq!(run.summary.params[0].failure_rate, Some(0.0));
        let min = yaw.min_delta.unwrap();
        assert!((std::f64::consts::FRAC_PI_2 - 1e-12..=std::f64::consts::PI).contains(&min));
        assert!((yaw.min_delta_units.unwrap() - min.to_degrees()).abs() < 1e-9);
    }
}
