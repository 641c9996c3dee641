//! Small fixtures shared by unit tests, integration tests and benches:
//! a cheap textured-cube scene and planted synthetic backends.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::classifier::{Classifier, ClassifierError, ClassifierResponse, Handshake, PlantedRegion, RegionShape, SyntheticClassifier, SyntheticConfig};
use crate::renderer::{BuiltinMesh, MeshSource, RenderOutput, Scene, SceneConfig};

/// Textured cube rendered at `side × side`.
pub fn cube_scene(side: u32, true_class: Option<usize>) -> Arc<Scene> {
    let mut cfg = SceneConfig::new(MeshSource::Builtin(BuiltinMesh::Cube));
    cfg.image_size = [side, side];
    cfg.true_class = true_class;
    Arc::new(Scene::load(cfg).expect("builtin cube scene"))
}

pub fn synthetic(config: SyntheticConfig) -> Arc<dyn Classifier> {
    Arc::new(SyntheticClassifier::new(config, None).expect("valid synthetic config"))
}

/// Two classes; class 0 is the truth and class 1 wins wherever the yaw is
/// within `fraction · π` of `center_yaw`, i.e. on `fraction` of the circle.
///
/// A bump of amplitude 2 beats a unit bias where `½(1 + cos πρ) > ½`, which
/// is `ρ < ½`; the yaw radius is therefore `2 · fraction · π`.
pub fn yaw_split(fraction: f64, center_yaw: f64) -> SyntheticConfig {
    SyntheticConfig {
        seed: 0,
        num_classes: 2,
        bias: vec![1.0, 0.0],
        pixel_scale: 0.0,
        regions: vec![PlantedRegion {
            class: 1,
            center: [0.0, 0.0, 0.0, center_yaw, 0.0, 0.0],
            radii: [None, None, None, Some(2.0 * fraction * PI), None, None],
            amplitude: 2.0,
            shape: RegionShape::Bump,
        }],
        supports_embedding: true,
    }
}

/// Class 0 (the truth) wins only on `fraction` of the yaw circle.
pub fn yaw_correct_fraction(fraction: f64) -> SyntheticConfig {
    let mut cfg = yaw_split(fraction, PI);
    cfg.bias = vec![0.0, 1.0];
    cfg.regions[0].class = 0;
    cfg
}

/// Number of classes in a planted-target case.
pub const PLANTED_CLASSES: usize = 10;

/// Class the planted-target cases steer towards.
pub const PLANTED_TARGET: usize = 3;

/// Planted-target case `index` of a deterministic family keyed by `seed`.
///
/// Class 0 is the truth with logit 1. The target has logit `2 − 8ρ²` around
/// a random centre (depth scale 10, unit angle scale), so it wins only where
/// `ρ < 1/√8` while its gradient is nonzero everywhere else.
pub fn planted_target_case(seed: u64, index: u64) -> SyntheticConfig {
    use rand::Rng;
    let mut rng = crate::rng::substream(seed, "planted_target", index);
    let center = [
        0.0,
        0.0,
        rng.random_range(-24.0..-4.0),
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(0.0..2.0 * PI),
    ];
    let mut bias = vec![0.0; PLANTED_CLASSES];
    bias[0] = 1.0;
    bias[PLANTED_TARGET] = 2.0;
    SyntheticConfig {
        seed: index,
        num_classes: PLANTED_CLASSES,
        bias,
        pixel_scale: 0.0,
        regions: vec![PlantedRegion {
            class: PLANTED_TARGET,
            center,
            radii: [None, None, Some(10.0), Some(1.0), Some(1.0), Some(1.0)],
            amplitude: 8.0,
            shape: RegionShape::Paraboloid,
        }],
        supports_embedding: true,
    }
}

/// Delegates to `inner` for the first `n` classify calls, then fails every
/// call as if the backend had gone away.
pub struct FailAfter {
    inner: Arc<dyn Classifier>,
    calls: AtomicUsize,
    n: usize,
}

impl FailAfter {
    pub fn new(inner: Arc<dyn Classifier>, n: usize) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            n,
        }
    }
}

impl Classifier for FailAfter {
    fn info(&self) -> &Handshake {
        self.inner.info()
    }

    fn classify(&self, image: &RenderOutput) -> Result<ClassifierResponse, ClassifierError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.n {
            return Err(ClassifierError::Protocol("backend went away".into()));
        }
        self.inner.classify(image)
    }

    fn embed(&self, image: &RenderOutput) -> Result<Vec<f64>, ClassifierError> {
        self.inner.embed(image)
    }
}
