//! Pose attacks: random search (RS), depth-constrained random search (ZRS),
//! finite-difference gradient descent (FDG) and its multi-view variant.

mod fdg;
mod random;
mod zrs;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use fdg::{
    fd_gradient, fd_gradient_scene, run_fdg, run_fdg_with, run_multiview_fdg,
    run_multiview_fdg_with, FdgOutcome, Objective, SceneObjective,
};
pub use random::{run_random_search, sample_pose_at_depth, sample_random_pose};
pub(crate) use random::open_uniform;
pub use zrs::{run_zrs, zrs_levels, ZrsOutcome};

use crate::classifier::{cross_entropy, Classifier, ClassifierError, ClassifierResponse};
use crate::geometry::{FrustumSpec, GeometryError, PoseParam, PoseParams, TrigPose};
use crate::parallel::ExecPolicy;
use crate::renderer::{render, RenderOutput, Scene};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    /// A backend failure mid-run; `records` holds everything completed
    /// before the failing evaluation.
    #[error("run aborted after {} records: {source}", records.len())]
    Aborted {
        records: Vec<TrialRecord>,
        source: Box<SearchError>,
    },
}

impl SearchError {
    pub(crate) fn aborted(records: Vec<TrialRecord>, source: SearchError) -> Self {
        match source {
            SearchError::Aborted { source, .. } => SearchError::Aborted { records, source },
            other => SearchError::Aborted {
                records,
                source: Box::new(other),
            },
        }
    }

    /// Records completed before an abort; empty for other errors.
    pub fn partial_records(&self) -> &[TrialRecord] {
        match self {
            SearchError::Aborted { records, .. } => records,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[serde(rename = "rs")]
    Rs,
    ZrsInit,
    ZrsAttack,
    Fdg,
    MultiviewFdg,
}

impl SearchMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rs" => Some(Self::Rs),
            "zrs_init" => Some(Self::ZrsInit),
            "zrs" | "zrs_attack" => Some(Self::ZrsAttack),
            "fdg" => Some(Self::Fdg),
            "multiview" | "multiview_fdg" => Some(Self::MultiviewFdg),
            _ => None,
        }
    }

    pub fn is_targeted(self) -> bool {
        !matches!(self, SearchMode::Rs)
    }
}

fn default_budget() -> usize {
    100
}
fn default_step() -> f64 {
    1e-3
}
fn default_levels() -> usize {
    30
}
fn default_samples() -> usize {
    10
}
fn default_views() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub mode: SearchMode,
    /// Evaluations for RS and ZRS refinement; steps for FDG.
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub target_class: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
    /// Central-difference step `h`.
    #[serde(default = "default_step")]
    pub fd_step: f64,
    /// Per-parameter `h` overrides keyed by parameter name; an angle's
    /// override applies to both its cosine and sine.
    #[serde(default)]
    pub fd_step_overrides: BTreeMap<String, f64>,
    #[serde(default = "default_step")]
    pub learning_rate: f64,
    /// Overrides the scene camera's depth range.
    #[serde(default)]
    pub depth_range: Option<[f64; 2]>,
    #[serde(default = "default_levels")]
    pub zrs_levels: usize,
    #[serde(default = "default_samples")]
    pub zrs_samples_per_level: usize,
    /// Camera views for multi-view FDG, evenly spaced in yaw.
    #[serde(default = "default_views")]
    pub views: usize,
    /// FDG starting pose; when absent a ZRS initialization picks it.
    #[serde(default)]
    pub init_pose: Option<PoseParams>,
    #[serde(default)]
    pub execution: ExecPolicy,
}

impl SearchConfig {
    pub fn new(mode: SearchMode) -> Self {
        Self {
            mode,
            budget: default_budget(),
            target_class: None,
            rng_seed: 0,
            fd_step: default_step(),
            fd_step_overrides: BTreeMap::new(),
            learning_rate: default_step(),
            depth_range: None,
            zrs_levels: default_levels(),
            zrs_samples_per_level: default_samples(),
            views: default_views(),
            init_pose: None,
            execution: ExecPolicy::default(),
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.budget < 1 {
            return bad("budget must be at least 1".into());
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return bad(format!("fd_step must be positive, got {}", self.fd_step));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.zrs_levels < 2 {
            return bad("zrs_levels must be at least 2".into());
        }
        if self.zrs_samples_per_level < 1 {
            return bad("zrs_samples_per_level must be at least 1".into());
        }
        for (name, h) in &self.fd_step_overrides {
            if PoseParam::parse(name).is_none() {
                return bad(format!("unknown parameter '{name}' in fd_step_overrides"));
            }
            if !(*h > 0.0 && h.is_finite()) {
                return bad(format!("fd_step override for {name} must be positive"));
            }
        }
        if self.mode == SearchMode::MultiviewFdg && self.views < 1 {
            return bad("views must be at least 1".into());
        }
        match self.target_class {
            Some(t) if t >= num_classes => {
                return bad(format!("target_class {t} out of range for {num_classes} classes"))
            }
            None if self.mode.is_targeted() => {
                return bad(format!("mode {:?} requires target_class", self.mode))
            }
            _ => {}
        }
        Ok(())
    }

    /// The scene frustum with this config's depth-range override applied.
    pub fn frustum(&self, scene: &Scene) -> Result<FrustumSpec, SearchError> {
        let mut f = scene.frustum();
        if let Some(r) = self.depth_range {
            f.depth_range = r;
        }
        f.validate()?;
        Ok(f)
    }

    /// Per-component step sizes in the 9-dimensional trig space.
    pub fn trig_steps(&self) -> [f64; 9] {
        let mut h = [self.fd_step; 9];
        for (name, &v) in &self.fd_step_overrides {
            let slots: &[usize] = match PoseParam::parse(name) {
                Some(PoseParam::X) => &[0],
                Some(PoseParam::Y) => &[1],
                Some(PoseParam::Z) => &[2],
                Some(PoseParam::Yaw) => &[3, 4],
                Some(PoseParam::Pitch) => &[5, 6],
                Some(PoseParam::Roll) => &[7, 8],
                None => &[],
            };
            for &i in slots {
                h[i] = v;
            }
        }
        h
    }

    fn target(&self) -> Result<usize, SearchError> {
        self.target_class
            .ok_or_else(|| SearchError::InvalidConfig("target_class is required".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Rs,
    ZrsInit,
    ZrsAttack,
    Fdg,
    Census,
    Landscape,
    Sensitivity,
    YawSweep,
    Transfer,
}

/// One evaluated pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub step_index: usize,
    pub phase: Phase,
    /// Camera view index for multi-view runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<usize>,
    /// Lighting preset or other named condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub pose: PoseParams,
    pub top_label: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Against the scene's ground-truth class, when one is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    /// Excluded from serialized records so outputs are reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrialRecord {
    pub fn from_response(
        step_index: usize,
        phase: Phase,
        pose: PoseParams,
        resp: &ClassifierResponse,
        target: Option<usize>,
        true_class: Option<usize>,
    ) -> Result<Self, SearchError> {
        let (target_prob, loss) = match target {
            Some(t) => (Some(resp.probs[t]), Some(cross_entropy(resp, t)?)),
            None => (None, None),
        };
        Ok(Self {
            step_index,
            phase,
            view: None,
            setting: None,
            pose,
            top_label: resp.top_label,
            confidence: resp.confidence(),
            target_prob,
            loss,
            correct: true_class.map(|c| c == resp.top_label),
            wall_time: resp.latency,
        })
    }

    pub fn hit(&self, target: usize) -> bool {
        self.top_label == target
    }
}

/// Renders and classifies poses, counting backend calls.
#[derive(Clone)]
pub struct Evaluator {
    scene: Arc<Scene>,
    backend: Arc<dyn Classifier>,
    calls: Arc<AtomicU64>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("scene", &self.scene.hash())
            .field("calls", &self.calls())
            .finish()
    }
}

impl Evaluator {
    pub fn new(scene: Arc<Scene>, backend: Arc<dyn Classifier>) -> Self {
        Self {
            scene,
            backend,
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Same backend and call counter, different scene.
    pub fn with_scene(&self, scene: Arc<Scene>) -> Self {
        Self {
            scene,
            backend: self.backend.clone(),
            calls: self.calls.clone(),
        }
    }

    /// Same scene and call counter, different backend.
    pub fn with_backend(&self, backend: Arc<dyn Classifier>) -> Self {
        Self {
            scene: self.scene.clone(),
            backend,
            calls: self.calls.clone(),
        }
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn backend(&self) -> &Arc<dyn Classifier> {
        &self.backend
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn evaluate(&self, pose: &PoseParams) -> Result<ClassifierResponse, SearchError> {
        Ok(self.evaluate_full(pose)?.1)
    }

    /// Like [`Evaluator::evaluate`] but also returns the render.
    pub fn evaluate_full(
        &self,
        pose: &PoseParams,
    ) -> Result<(RenderOutput, ClassifierResponse), SearchError> {
        let image = render(&self.scene, pose);
        self.calls.fetch_add(1, Ordering::Relaxed);
        let resp = self.backend.classify(&image)?;
        Ok((image, resp))
    }

    pub fn record(
        &self,
        step_index: usize,
        phase: Phase,
        pose: &PoseParams,
        target: Option<usize>,
    ) -> Result<TrialRecord, SearchError> {
        let resp = self.evaluate(pose)?;
        TrialRecord::from_response(
            step_index,
            phase,
            *pose,
            &resp,
            target,
            self.scene.config().true_class,
        )
    }
}

/// Decodes a trig vector and clamps its translation into the frustum box.
pub fn decode_clamped(w: &TrigPose, frustum: &FrustumSpec) -> Result<PoseParams, SearchError> {
    let mut pose = w.decode()?;
    let (x, y, z) = frustum.clamp_translation(pose.x_delta, pose.y_delta, pose.z_delta);
    pose.x_delta = x;
    pose.y_delta = y;
    pose.z_delta = z;
    Ok(pose)
}

/// Summary statistics shared by the targeted attacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub hit: bool,
    pub max_target_prob: f64,
    /// Step index of the first hit.
    pub first_hit: Option<usize>,
}

impl TargetSummary {
    pub fn of(records: &[TrialRecord], target: usize) -> Self {
        let first_hit = records.iter().find(|r| r.hit(target)).map(|r| r.step_index);
        let max_target_prob = records
            .iter()
            .filter_map(|r| r.target_prob)
            .fold(0.0, f64::max);
        Self {
            hit: first_hit.is_some(),
            max_target_prob,
            first_hit,
        }
    }
}
