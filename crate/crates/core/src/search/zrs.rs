use rand::Rng;
use serde::{Deserialize, Serialize};

use super::random::sample_pose_at_depth;
use super::{Evaluator, Phase, SearchConfig, SearchError, SearchMode, TrialRecord};
use crate::geometry::PoseParams;
use crate::parallel::{map_indexed, split_at_first_error};
use crate::rng::substream;

/// `n` evenly spaced depths over `[lo, hi]`, both ends included.
pub fn zrs_levels(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|j| if j + 1 == n { hi } else { lo + step * j as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZrsOutcome {
    pub records: Vec<TrialRecord>,
    pub levels: Vec<f64>,
    /// Highest target probability seen at each level during initialization.
    pub level_max: Vec<f64>,
    pub best_pose: PoseParams,
    pub best_target_prob: f64,
    /// The two best levels, best first (attack mode only).
    pub selected_levels: Option<[usize; 2]>,
    /// Closed depth interval the refinement sampled from.
    pub refined_range: Option<[f64; 2]>,
}

/// Index of the highest value; the first one wins ties.
fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Depth-level sweep followed, in attack mode, by random search restricted
/// to the depth interval between the two most promising levels.
///
/// Initialization costs `zrs_levels × zrs_samples_per_level` evaluations;
/// attack mode adds `budget` more.
pub fn run_zrs(eval: &Evaluator, cfg: &SearchConfig) -> Result<ZrsOutcome, SearchError> {
    if !matches!(cfg.mode, SearchMode::ZrsInit | SearchMode::ZrsAttack) {
        return Err(SearchError::InvalidConfig(format!(
            "run_zrs called with mode {:?}",
            cfg.mode
        )));
    }
    zrs_inner(eval, cfg, cfg.mode == SearchMode::ZrsAttack)
}

pub(super) fn zrs_inner(
    eval: &Evaluator,
    cfg: &SearchConfig,
    attack: bool,
) -> Result<ZrsOutcome, SearchError> {
    cfg.validate(eval.backend().num_classes())?;
    let target = cfg.target()?;
    let frustum = cfg.frustum(eval.scene())?;
    let [lo, hi] = frustum.depth_range;
    let levels = zrs_levels(lo, hi, cfg.zrs_levels);
    let per = cfg.zrs_samples_per_level;

    let results = map_indexed(cfg.execution, levels.len() * per, |k| {
        let mut rng = substream(cfg.rng_seed, "zrs_init", k as u64);
        let pose = sample_pose_at_depth(&mut rng, &frustum, levels[k / per]);
        eval.record(k, Phase::ZrsInit, &pose, Some(target))
    });
    let mut records = match split_at_first_error(results) {
        (r, None) => r,
        (r, Some(e)) => return Err(SearchError::aborted(r, e)),
    };
    let tp = |r: &TrialRecord| r.target_prob.unwrap_or(0.0);
    let level_max: Vec<f64> = records
        .chunks(per)
        .map(|c| c.iter().map(tp).fold(f64::NEG_INFINITY, f64::max))
        .collect();

    let (mut selected_levels, mut refined_range) = (None, None);
    if attack {
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| level_max[b].total_cmp(&level_max[a]).then(a.cmp(&b)));
        let (a, b) = (order[0], order[1]);
        let range = [levels[a].min(levels[b]), levels[a].max(levels[b])];
        let offset = records.len();
        let results = map_indexed(cfg.execution, cfg.budget, |i| {
            let mut rng = substream(cfg.rng_seed, "zrs_attack", i as u64);
            let z = rng.random_range(range[0]..=range[1]);
            let pose = sample_pose_at_depth(&mut rng, &frustum, z);
            eval.record(offset + i, Phase::ZrsAttack, &pose, Some(target))
        });
        let (refined, err) = split_at_first_error(results);
        records.extend(refined);
        if let Some(e) = err {
            return Err(SearchError::aborted(records, e));
        }
        selected_levels = Some([a, b]);
        refined_range = Some(range);
    }

    let best = first_argmax(records.iter().map(tp)).expect("at least one record");
    Ok(ZrsOutcome {
        best_pose: records[best].pose,
        best_target_prob: tp(&records[best]),
        records,
        levels,
        level_max,
        selected_levels,
        refined_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_include_both_ends() {
        let l = zrs_levels(-28.0, 0.0, 30);
        assert_eq!(l.len(), 30);
        assert_eq!(l[0], -28.0);
        assert_eq!(l[29], 0.0);
        for w in l.windows(2) {
            assert!((w[1] - w[0] - 28.0 / 29.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(first_argmax([0.2, 0.5, 0.5, 0.1]), Some(1));
        assert_eq!(first_argmax([0.3; 4]), Some(0));
        assert_eq!(first_argmax(std::iter::empty()), None);
    }
}
