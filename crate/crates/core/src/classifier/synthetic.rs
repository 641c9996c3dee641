//! Seeded stand-in for a pretrained classifier.
//!
//! Logits are a fixed bias, plus a seeded random projection of coarse pixel
//! statistics, plus smooth fields planted in pose space. The planted fields
//! give tests an oracle: the region where a class wins is known in closed form.

use std::f64::consts::PI;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::Handshake;
use super::{check_class_table, softmax, Classifier, ClassifierError, ClassifierResponse};
use crate::geometry::{circular_distance, PoseParam, PoseParams};
use crate::renderer::RenderOutput;

/// Side of the grid pixel statistics are pooled over.
const GRID: usize = 4;
const FEATURES: usize = GRID * GRID * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    /// `amplitude · ½(1 + cos πρ)` for `ρ < 1`, zero outside.
    #[default]
    Bump,
    /// `-amplitude · ρ²` everywhere.
    Paraboloid,
}

/// A logit field for one class centred on a pose.
///
/// `ρ` is the ellipsoidal distance `sqrt(Σ (Δᵢ / radiusᵢ)²)` over the
/// parameters that have a radius; angles use circular distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedRegion {
    pub class: usize,
    /// `[x, y, z, yaw, pitch, roll]`.
    pub center: [f64; 6],
    /// `None` leaves the parameter unconstrained. Serialized as a map from
    /// parameter name to radius; a six-element array with nulls also parses.
    #[serde(with = "radii_serde")]
    pub radii: [Option<f64>; 6],
    pub amplitude: f64,
    #[serde(default)]
    pub shape: RegionShape,
}

mod radii_serde {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geometry::PoseParam;

    pub fn serialize<S: Serializer>(radii: &[Option<f64>; 6], s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = PoseParam::ALL
            .iter()
            .zip(radii)
            .filter_map(|(p, r)| r.map(|r| (p.name(), r)))
            .collect();
        map.serialize(s)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Map(BTreeMap<String, f64>),
        Array([Option<f64>; 6]),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Option<f64>; 6], D::Error> {
        match Repr::deserialize(d)? {
            Repr::Array(a) => Ok(a),
            Repr::Map(m) => {
                let mut out = [None; 6];
                for (name, r) in m {
                    let p = PoseParam::parse(&name)
                        .ok_or_else(|| D::Error::custom(format!("unknown pose parameter '{name}' in radii")))?;
                    out[p.index()] = Some(r);
                }
                Ok(out)
            }
        }
    }
}

impl PlantedRegion {
    pub fn bump(class: usize, center: [f64; 6], radii: [Option<f64>; 6], amplitude: f64) -> Self {
        Self {
            class,
            center,
            radii,
            amplitude,
            shape: RegionShape::Bump,
        }
    }

    pub fn distance(&self, pose: &PoseParams) -> f64 {
        let p = pose.to_array();
        let mut sum = 0.0;
        for param in PoseParam::ALL {
            let i = param.index();
            if let Some(r) = self.radii[i] {
                let d = if param.is_angle() {
                    circular_distance(p[i], self.center[i])
                } else {
                    p[i] - self.center[i]
                };
                sum += (d / r) * (d / r);
            }
        }
        sum.sqrt()
    }

    pub fn logit(&self, pose: &PoseParams) -> f64 {
        let rho = self.distance(pose);
        match self.shape {
            RegionShape::Bump if rho < 1.0 => self.amplitude * 0.5 * (1.0 + (PI * rho).cos()),
            RegionShape::Bump => 0.0,
            RegionShape::Paraboloid => -self.amplitude * rho * rho,
        }
    }

    /// Conservative overlap test: two bumps are disjoint when their bounding
    /// boxes are separated along some constrained parameter.
    fn may_overlap(&self, other: &PlantedRegion) -> bool {
        if self.shape == RegionShape::Paraboloid || other.shape == RegionShape::Paraboloid {
            return true;
        }
        !PoseParam::ALL.into_iter().any(|param| {
            let i = param.index();
            match (self.radii[i], other.radii[i]) {
                (Some(a), Some(b)) => {
                    let d = if param.is_angle() {
                        circular_distance(self.center[i], other.center[i])
                    } else {
                        (self.center[i] - other.center[i]).abs()
                    };
                    d >= a + b
                }
                _ => false,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_classes: usize,
    /// Per-class base logit; empty means all zero.
    #[serde(default)]
    pub bias: Vec<f64>,
    /// Scale of the seeded projection of pixel statistics.
    #[serde(default)]
    pub pixel_scale: f64,
    #[serde(default)]
    pub regions: Vec<PlantedRegion>,
    #[serde(default = "yes")]
    pub supports_embedding: bool,
}

fn yes() -> bool {
    true
}

impl SyntheticConfig {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            seed: 0,
            num_classes,
            bias: Vec::new(),
            pixel_scale: 0.0,
            regions: Vec::new(),
            supports_embedding: true,
        }
    }
}

/// Pure, thread-safe synthetic classifier.
#[derive(Debug, Clone)]
pub struct SyntheticClassifier {
    config: SyntheticConfig,
    bias: Vec<f64>,
    projection: Vec<f64>,
    info: Handshake,
}

impl SyntheticClassifier {
    pub fn new(
        config: SyntheticConfig,
        class_table: Option<Vec<String>>,
    ) -> Result<Self, ClassifierError> {
        let k = config.num_classes;
        if k < 2 {
            return Err(ClassifierError::InvalidConfig(format!(
                "num_classes must be at least 2, got {k}"
            )));
        }
        let bias = if config.bias.is_empty() {
            vec![0.0; k]
        } else if config.bias.len() == k {
            config.bias.clone()
        } else {
            return Err(ClassifierError::InvalidConfig(format!(
                "bias has {} entries for {k} classes",
                config.bias.len()
            )));
        };
        for (i, r) in config.regions.iter().enumerate() {
            if r.class >= k {
                return Err(ClassifierError::ClassOutOfRange {
                    index: r.class,
                    num_classes: k,
                });
            }
            if r.radii.iter().flatten().any(|&x| !(x > 0.0)) {
                return Err(ClassifierError::InvalidConfig(format!(
                    "region {i} has a non-positive radius"
                )));
            }
            if let Some(j) = config.regions[..i].iter().position(|o| o.may_overlap(r)) {
                return Err(ClassifierError::InvalidConfig(format!(
                    "planted regions {j} and {i} overlap"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (FEATURES as f64).sqrt();
        let projection = (0..k * FEATURES)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let labels = check_class_table(class_table, k)?
            .unwrap_or_else(|| (0..k).map(|i| format!("class_{i}")).collect());
        let info = Handshake {
            protocol: 1,
            num_classes: k,
            labels,
            supports_embedding: config.supports_embedding,
            metadata: Some(serde_json::json!({ "backend": "synthetic", "seed": config.seed })),
        };
        Ok(Self {
            config,
            bias,
            projection,
            info,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    /// Logits for an image rendered at `pose`.
    pub fn logits(&self, image: &RenderOutput, pose: &PoseParams) -> Vec<f64> {
        let mut logits = self.bias.clone();
        if self.config.pixel_scale != 0.0 {
            let features = pooled_features(image);
            for (k, logit) in logits.iter_mut().enumerate() {
                let row = &self.projection[k * FEATURES..(k + 1) * FEATURES];
                let dot: f64 = row.iter().zip(&features).map(|(a, b)| a * b).sum();
                *logit += self.config.pixel_scale * dot;
            }
        }
        for region in &self.config.regions {
            logits[region.class] += region.logit(pose);
        }
        logits
    }

    /// Classifies an image given the pose explicitly.
    pub fn classify_pose(&self, image: &RenderOutput, pose: &PoseParams) -> ClassifierResponse {
        let probs = softmax(&self.logits(image, pose));
        let top_label = super::argmax(&probs);
        ClassifierResponse {
            probs,
            top_label,
            embedding: None,
            latency: Duration::ZERO,
        }
    }
}

/// Per-channel means over a `GRID × GRID` partition, centred on 0.5.
fn pooled_features(image: &RenderOutput) -> Vec<f64> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut sums = vec![0.0f64; FEATURES];
    let mut counts = vec![0usize; GRID * GRID];
    let px = image.pixels();
    for y in 0..h {
        let gy = y * GRID / h;
        for x in 0..w {
            let gx = x * GRID / w;
            let cell = gy * GRID + gx;
            counts[cell] += 1;
            let i = (y * w + x) * 3;
            for c in 0..3 {
                sums[cell * 3 + c] += px[i + c] as f64;
            }
        }
    }
    sums.iter()
        .enumerate()
        .map(|(j, s)| s / counts[j / 3].max(1) as f64 - 0.5)
        .collect()
}

impl Classifier for SyntheticClassifier {
    fn info(&self) -> &Handshake {
        &self.info
    }

    /// Uses the pose recorded in the render's metadata.
    fn classify(&self, image: &RenderOutput) -> Result<ClassifierResponse, ClassifierError> {
        Ok(self.classify_pose(image, &image.meta.pose))
    }

    /// Mean of each colour channel.
    fn embed(&self, image: &RenderOutput) -> Result<Vec<f64>, ClassifierError> {
        if !self.config.supports_embedding {
            return Err(ClassifierError::Unsupported("embeddings"));
        }
        let n = (image.width() * image.height()) as f64;
        let mut mean = vec![0.0; 3];
        for px in image.pixels().chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
        }
        Ok(mean.into_iter().map(|s| s / n).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::RenderMeta;

    #[test]
    fn radii_accept_map_and_array_forms() {
        let r = PlantedRegion::bump(1, [0.0; 6], [None, None, Some(2.0), Some(0.5), None, None], 1.0);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["radii"], serde_json::json!({"theta_y": 0.5, "z_delta": 2.0}));
        assert_eq!(serde_json::from_value::<PlantedRegion>(v).unwrap(), r);
        let arr = r#"{"class":1,"center":[0,0,0,0,0,0],"radii":[null,null,2.0,0.5,null,null],"amplitude":1.0}"#;
        assert_eq!(serde_json::from_str::<PlantedRegion>(arr).unwrap(), r);
        let short = r#"{"class":1,"center":[0,0,0,0,0,0],"radii":{"z":2.0,"yaw":0.5},"amplitude":1.0}"#;
        assert_eq!(serde_json::from_str::<PlantedRegion>(short).unwrap(), r);
        let bad = r#"{"class":1,"center":[0,0,0,0,0,0],"radii":{"warp":1.0},"amplitude":1.0}"#;
        assert!(serde_json::from_str::<PlantedRegion>(bad).is_err());
    }

    fn image(value: f32, pose: PoseParams) -> RenderOutput {
        RenderOutput::from_pixels(
            16,
            16,
            vec![value; 16 * 16 * 3],
            vec![false; 256],
            RenderMeta {
                pose,
                scene_hash: String::new(),
            },
        )
    }

    fn z_bump(class: usize, z: f64, r: f64, amplitude: f64) -> PlantedRegion {
        PlantedRegion::bump(
            class,
            [0.0, 0.0, z, 0.0, 0.0, 0.0],
            [None, None, Some(r), None, None, None],
            amplitude,
        )
    }

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let c = SyntheticClassifier::new(SyntheticConfig::uniform(10), None).unwrap();
        let r = c.classify(&image(0.3, PoseParams::default())).unwrap();
        for p in &r.probs {
            assert!((p - 0.1).abs() < 1e-15);
        }
        assert_eq!(r.top_label, 0);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut cfg = SyntheticConfig::uniform(5);
        cfg.seed = 42;
        cfg.pixel_scale = 3.0;
        let a = SyntheticClassifier::new(cfg.clone(), None).unwrap();
        let b = SyntheticClassifier::new(cfg, None).unwrap();
        let img = image(0.8, PoseParams::default());
        let ra = a.classify(&img).unwrap();
        assert_eq!(ra, b.classify(&img).unwrap());
        assert!((ra.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // pixel statistics matter
        assert_ne!(ra.probs, a.classify(&image(0.1, PoseParams::default())).unwrap().probs);
    }

    #[test]
    fn planted_region_wins_inside() {
        let mut cfg = SyntheticConfig::uniform(4);
        cfg.regions.push(z_bump(3, -5.0, 2.0, 20.0));
        let c = SyntheticClassifier::new(cfg, None).unwrap();
        let inside = PoseParams::new(0.0, 0.0, -5.1, 0.0, 0.0, 0.0);
        assert_eq!(c.classify(&image(0.5, inside)).unwrap().top_label, 3);
        let far = PoseParams::new(0.0, 0.0, -20.0, 0.0, 0.0, 0.0);
        let r = c.classify(&image(0.5, far)).unwrap();
        assert!(r.probs.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn confidence_is_continuous_across_the_boundary() {
        let mut cfg = SyntheticConfig::uniform(3);
        cfg.regions.push(z_bump(1, -5.0, 2.0, 8.0));
        let c = SyntheticClassifier::new(cfg, None).unwrap();
        let conf = |z: f64| {
            c.classify(&image(0.5, PoseParams::new(0.0, 0.0, z, 0.0, 0.0, 0.0)))
                .unwrap()
                .probs[1]
        };
        let mut z = -8.0;
        while z < -2.0 {
            assert!((conf(z + 1e-3) - conf(z)).abs() <= 0.05, "jump at {z}");
            z += 1e-3;
        }
    }

    #[test]
    fn angles_use_circular_distance() {
        let region = PlantedRegion::bump(
            0,
            [0.0, 0.0, 0.0, 0.1, 0.0, 0.0],
            [None, None, None, Some(0.5), None, None],
            1.0,
        );
        let pose = PoseParams::new(0.0, 0.0, 0.0, 2.0 * PI - 0.1, 0.0, 0.0);
        assert!((region.distance(&pose) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rejects_overlapping_regions_and_bad_config() {
        let mut cfg = SyntheticConfig::uniform(3);
        cfg.regions = vec![z_bump(1, -5.0, 2.0, 1.0), z_bump(2, -7.0, 2.0, 1.0)];
        assert!(SyntheticClassifier::new(cfg.clone(), None).is_err());
        cfg.regions = vec![z_bump(1, -5.0, 2.0, 1.0), z_bump(2, -9.0, 2.0, 1.0)];
        assert!(SyntheticClassifier::new(cfg.clone(), None).is_ok());
        cfg.regions = vec![z_bump(7, -5.0, 2.0, 1.0)];
        assert!(SyntheticClassifier::new(cfg.clone(), None).is_err());
        assert!(SyntheticClassifier::new(SyntheticConfig::uniform(1), None).is_err());
        assert!(SyntheticClassifier::new(SyntheticConfig::uniform(3), Some(vec!["a".into()])).is_err());
    }

    #[test]
    fn embedding_is_channel_mean() {
        let c = SyntheticClassifier::new(SyntheticConfig::uniform(2), None).unwrap();
        let a = c.embed(&image(0.25, PoseParams::default())).unwrap();
        assert_eq!(a, vec![0.25; 3]);
        let b = c.embed(&image(0.75, PoseParams::default())).unwrap();
        assert!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.0);
        let mut cfg = SyntheticConfig::uniform(2);
        cfg.supports_embedding = false;
        let c = SyntheticClassifier::new(cfg, None).unwrap();
        assert_eq!(
            c.embed(&image(0.1, PoseParams::default())),
            Err(ClassifierError::Unsupported("embeddings"))
        );
    }
}
