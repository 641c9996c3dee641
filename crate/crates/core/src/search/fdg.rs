use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    decode_clamped, Evaluator, Phase, SearchConfig, SearchError, TargetSummary, TrialRecord,
};
use crate::classifier::{cross_entropy, ClassifierResponse};
use crate::geometry::{FrustumSpec, PoseParams, TrigPose};
use crate::parallel::{map_indexed, ExecPolicy};

/// A loss surface over the 9-dimensional trig pose space, possibly seen
/// from several camera views.
pub trait Objective: Sync {
    fn views(&self) -> usize;

    /// The pose actually evaluated (after any clamping) and the response.
    fn evaluate(
        &self,
        view: usize,
        w: &TrigPose,
    ) -> Result<(PoseParams, ClassifierResponse), SearchError>;

    fn true_class(&self) -> Option<usize> {
        None
    }
}

/// Renders through the scene camera(s); translations are clamped into the
/// frustum box before rendering.
#[derive(Debug, Clone)]
pub struct SceneObjective {
    views: Vec<Evaluator>,
    frustum: FrustumSpec,
}

impl SceneObjective {
    pub fn new(eval: &Evaluator, frustum: FrustumSpec) -> Self {
        Self {
            views: vec![eval.clone()],
            frustum,
        }
    }

    /// `k` cameras orbiting the depth pivot at yaw `2πi/k`.
    pub fn multiview(eval: &Evaluator, frustum: FrustumSpec, k: usize) -> Self {
        let views = (0..k)
            .map(|i| {
                let yaw = TAU * i as f64 / k as f64;
                eval.with_scene(Arc::new(eval.scene().with_view_yaw(yaw)))
            })
            .collect();
        Self { views, frustum }
    }
}

impl Objective for SceneObjective {
    fn views(&self) -> usize {
        self.views.len()
    }

    fn evaluate(
        &self,
        view: usize,
        w: &TrigPose,
    ) -> Result<(PoseParams, ClassifierResponse), SearchError> {
        let pose = decode_clamped(w, &self.frustum)?;
        Ok((pose, self.views[view].evaluate(&pose)?))
    }

    fn true_class(&self) -> Option<usize> {
        self.views[0].scene().config().true_class
    }
}

/// Central differences: `g_i = [f(w + h_i/2 e_i) − f(w − h_i/2 e_i)] / h_i`.
/// Exactly 18 calls to `f`, independent of each other.
pub fn fd_gradient<F, E>(policy: ExecPolicy, f: F, w: &[f64; 9], h: &[f64; 9]) -> Result<[f64; 9], E>
where
    F: Fn(&[f64; 9]) -> Result<f64, E> + Sync + Send,
    E: Send,
{
    let values: Vec<f64> = map_indexed(policy, 18, |k| f(&probe(w, h, k)))
        .into_iter()
        .collect::<Result<_, E>>()?;
    Ok(std::array::from_fn(|i| (values[2 * i] - values[2 * i + 1]) / h[i]))
}

/// Point `k` of the 18-point stencil: component `k/2`, plus side first.
fn probe(w: &[f64; 9], h: &[f64; 9], k: usize) -> [f64; 9] {
    let i = k / 2;
    let mut p = *w;
    if k % 2 == 0 {
        p[i] += h[i] * 0.5;
    } else {
        p[i] -= h[i] * 0.5;
    }
    p
}

/// Gradient of the cross-entropy for `target` seen through one view.
pub fn fd_gradient_scene(
    obj: &dyn Objective,
    view: usize,
    w: &TrigPose,
    target: usize,
    h: &[f64; 9],
    policy: ExecPolicy,
) -> Result<[f64; 9], SearchError> {
    fd_gradient(
        policy,
        |p| {
            let (_, resp) = obj.evaluate(view, &TrigPose(*p))?;
            Ok(cross_entropy(&resp, target)?)
        },
        &w.0,
        h,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdgOutcome {
    /// One record per step: the pose evaluated before that step's update.
    pub records: Vec<TrialRecord>,
    pub summary: TargetSummary,
    /// Pose after the last update (not evaluated).
    pub final_pose: PoseParams,
}

/// Plain gradient descent in trig space for `cfg.budget` steps. Each step
/// costs one loss evaluation plus 18 for the gradient.
pub fn run_fdg_with(
    obj: &dyn Objective,
    cfg: &SearchConfig,
    init: &PoseParams,
    frustum: &FrustumSpec,
) -> Result<FdgOutcome, SearchError> {
    descend(obj, cfg, init, frustum, 1, false)
}

/// Gradient descent where every step computes losses and gradients in all
/// views and applies the update from the view with the lowest loss (lower
/// index on ties). Per step: `k` loss evaluations plus `18k` for gradients.
pub fn run_multiview_fdg_with(
    obj: &dyn Objective,
    cfg: &SearchConfig,
    init: &PoseParams,
    frustum: &FrustumSpec,
) -> Result<FdgOutcome, SearchError> {
    descend(obj, cfg, init, frustum, obj.views(), true)
}

pub fn run_fdg(eval: &Evaluator, cfg: &SearchConfig, init: &PoseParams) -> Result<FdgOutcome, SearchError> {
    cfg.validate(eval.backend().num_classes())?;
    let frustum = cfg.frustum(eval.scene())?;
    run_fdg_with(&SceneObjective::new(eval, frustum), cfg, init, &frustum)
}

pub fn run_multiview_fdg(
    eval: &Evaluator,
    cfg: &SearchConfig,
    init: &PoseParams,
) -> Result<FdgOutcome, SearchError> {
    cfg.validate(eval.backend().num_classes())?;
    let frustum = cfg.frustum(eval.scene())?;
    let obj = SceneObjective::multiview(eval, frustum, cfg.views);
    run_multiview_fdg_with(&obj, cfg, init, &frustum)
}

fn descend(
    obj: &dyn Objective,
    cfg: &SearchConfig,
    init: &PoseParams,
    frustum: &FrustumSpec,
    k: usize,
    tag_views: bool,
) -> Result<FdgOutcome, SearchError> {
    let target = cfg.target()?;
    if k < 1 || k > obj.views() {
        return Err(SearchError::InvalidConfig(format!(
            "{k} views requested, objective has {}",
            obj.views()
        )));
    }
    let h = cfg.trig_steps();
    let mut start = *init;
    (start.x_delta, start.y_delta, start.z_delta) =
        frustum.clamp_translation(init.x_delta, init.y_delta, init.z_delta);
    let mut w = TrigPose::encode(&start);
    let mut records = Vec::with_capacity(cfg.budget);

    for step in 0..cfg.budget {
        let current = w;
        // k loss evaluations followed by k × 18 stencil points, all independent.
        let results = map_indexed(cfg.execution, k * 19, |j| {
            if j < k {
                let (pose, resp) = obj.evaluate(j, &current)?;
                let loss = cross_entropy(&resp, target)?;
                Ok(Eval::Current(pose, resp, loss))
            } else {
                let (view, point) = ((j - k) / 18, (j - k) % 18);
                let (_, resp) = obj.evaluate(view, &TrigPose(probe(&current.0, &h, point)))?;
                Ok(Eval::Probe(cross_entropy(&resp, target)?))
            }
        });
        let results: Vec<Eval> = match results.into_iter().collect::<Result<_, SearchError>>() {
            Ok(r) => r,
            Err(e) => return Err(SearchError::aborted(records, e)),
        };

        let mut chosen = 0;
        let mut best_loss = f64::INFINITY;
        for (v, r) in results[..k].iter().enumerate() {
            if let Eval::Current(_, _, loss) = r {
                if *loss < best_loss {
                    best_loss = *loss;
                    chosen = v;
                }
            }
        }
        let Eval::Current(pose, resp, _) = &results[chosen] else {
            unreachable!()
        };
        let mut record = TrialRecord::from_response(
            step,
            Phase::Fdg,
            *pose,
            resp,
            Some(target),
            obj.true_class(),
        )?;
        if tag_views {
            record.view = Some(chosen);
        }
        records.push(record);

        let stencil = &results[k + chosen * 18..k + (chosen + 1) * 18];
        for i in 0..9 {
            let (Eval::Probe(p), Eval::Probe(m)) = (&stencil[2 * i], &stencil[2 * i + 1]) else {
                unreachable!()
            };
            w.0[i] -= cfg.learning_rate * (p - m) / h[i];
        }
    }

    let summary = TargetSummary::of(&records, target);
    Ok(FdgOutcome {
        records,
        summary,
        final_pose: decode_clamped(&w, frustum)?,
    })
}

enum Eval {
    Current(PoseParams, ClassifierResponse, f64),
    Probe(f64),
}
