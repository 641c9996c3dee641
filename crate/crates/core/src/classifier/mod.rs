//! Black-box classifiers: the [`Classifier`] trait, a seeded synthetic
//! backend, and a newline-delimited JSON client for external model servers.

mod client;
pub mod conformance;
pub mod protocol;
mod synthetic;

pub use client::{Endpoint, ExternalClassifier, ExternalConfig};
pub use protocol::Handshake;
pub use synthetic::{PlantedRegion, RegionShape, SyntheticClassifier, SyntheticConfig};

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::renderer::RenderOutput;

/// Floor added inside the logarithm of the cross-entropy loss.
pub const LOSS_EPSILON: f64 = 1e-12;
/// Allowed deviation of a probability vector's sum from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("backend {endpoint} unreachable after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend reported an error for request {id}: {message}")]
    Remote { id: String, message: String },
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },
    #[error("class tables differ: {0}")]
    ClassTableMismatch(String),
}

/// Softmax output of a classifier for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierResponse {
    pub probs: Vec<f64>,
    pub top_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// Wall time of the backend call; zero for synthetic backends.
    #[serde(with = "duration_secs", default)]
    pub latency: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs.max(0.0)))
    }
}

impl ClassifierResponse {
    /// Validates a probability vector and derives the top label (ties go
    /// to the lowest index).
    pub fn from_probs(probs: Vec<f64>, latency: Duration) -> Result<Self, ClassifierError> {
        if probs.len() < 2 {
            return Err(ClassifierError::Protocol(format!(
                "probability vector has {} entries, need at least 2",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
            return Err(ClassifierError::Protocol(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(ClassifierError::Protocol(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        let top_label = argmax(&probs);
        Ok(Self {
            probs,
            top_label,
            embedding: None,
            latency,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.top_label]
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Class indices sorted by probability, highest first, ties by index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.probs[i])).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln(p_target + ε)`.
pub fn cross_entropy(resp: &ClassifierResponse, target: usize) -> Result<f64, ClassifierError> {
    let p = resp
        .probs
        .get(target)
        .ok_or(ClassifierError::ClassOutOfRange {
            index: target,
            num_classes: resp.probs.len(),
        })?;
    Ok(-(p + LOSS_EPSILON).ln())
}

/// An image classifier seen as a black box.
pub trait Classifier: Send + Sync {
    fn info(&self) -> &Handshake;

    fn classify(&self, image: &RenderOutput) -> Result<ClassifierResponse, ClassifierError>;

    fn embed(&self, image: &RenderOutput) -> Result<Vec<f64>, ClassifierError>;

    fn num_classes(&self) -> usize {
        self.info().num_classes
    }

    fn labels(&self) -> &[String] {
        &self.info().labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Synthetic(SyntheticConfig),
    External(ExternalConfig),
}

/// Which classifier to use and how images are shaped for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Overrides the backend's own labels; must have one entry per class.
    #[serde(default)]
    pub class_table: Option<Vec<String>>,
    /// `[H, W]` the backend expects; external images are resized to it.
    #[serde(default = "default_input_size")]
    pub input_size: [u32; 2],
}

fn default_input_size() -> [u32; 2] {
    crate::renderer::DEFAULT_IMAGE_SIZE
}

impl BackendSpec {
    pub fn synthetic(config: SyntheticConfig) -> Self {
        Self {
            kind: BackendKind::Synthetic(config),
            class_table: None,
            input_size: default_input_size(),
        }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::External(ExternalConfig::new(endpoint)),
            class_table: None,
            input_size: default_input_size(),
        }
    }

    /// Instantiates the backend. External backends perform their handshake here.
    pub fn connect(&self) -> Result<Arc<dyn Classifier>, ClassifierError> {
        let backend: Arc<dyn Classifier> = match &self.kind {
            BackendKind::Synthetic(cfg) => {
                Arc::new(SyntheticClassifier::new(cfg.clone(), self.class_table.clone())?)
            }
            BackendKind::External(cfg) => Arc::new(ExternalClassifier::connect(
                cfg.clone(),
                self.input_size,
                self.class_table.clone(),
            )?),
        };
        if backend.num_classes() < 2 {
            return Err(ClassifierError::InvalidConfig(
                "backend must have at least 2 classes".into(),
            ));
        }
        Ok(backend)
    }
}

/// Maps a class label table into `[class, label]` pairs, rejecting a table
/// whose length disagrees with the backend.
pub(crate) fn check_class_table(
    table: Option<Vec<String>>,
    num_classes: usize,
) -> Result<Option<Vec<String>>, ClassifierError> {
    match table {
        Some(t) if t.len() != num_classes => Err(ClassifierError::ClassTableMismatch(format!(
            "class table has {} labels but the backend has {num_classes} classes",
            t.len()
        ))),
        other => Ok(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let r = |p: f64| ClassifierResponse::from_probs(vec![p, 1.0 - p], Duration::ZERO).unwrap();
        assert!(cross_entropy(&r(1.0), 0).unwrap().abs() < 1e-11);
        let e_inv = (-1.0f64).exp();
        assert!((cross_entropy(&r(e_inv), 0).unwrap() - 1.0).abs() < 1e-10);
        let floor = cross_entropy(&r(0.0), 0).unwrap();
        assert!((floor - 27.631_021_115_928_547).abs() < 1e-9, "{floor}");
        assert_eq!(
            cross_entropy(&r(0.5), 2),
            Err(ClassifierError::ClassOutOfRange {
                index: 2,
                num_classes: 2
            })
        );
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        let resp = ClassifierResponse::from_probs(vec![0.25, 0.375, 0.375], Duration::ZERO).unwrap();
        assert_eq!(resp.top_label, 1);
        assert_eq!(resp.top_k(2), vec![(1, 0.375), (2, 0.375)]);
    }

    #[test]
    fn invalid_probability_vectors() {
        assert!(ClassifierResponse::from_probs(vec![0.5, 0.6], Duration::ZERO).is_err());
        assert!(ClassifierResponse::from_probs(vec![1.0], Duration::ZERO).is_err());
        assert!(ClassifierResponse::from_probs(vec![1.5, -0.5], Duration::ZERO).is_err());
        assert!(ClassifierResponse::from_probs(vec![f64::NAN, 1.0], Duration::ZERO).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[1001.0, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn cross_entropy_decreases_in_target_probability(p in 0.0f64..0.999, dp in 1e-6f64..1e-3) {
            let mk = |p: f64| ClassifierResponse::from_probs(vec![p, 1.0 - p], Duration::ZERO).unwrap();
            let q = (p + dp).min(1.0);
            proptest::prop_assert!(cross_entropy(&mk(q), 0).unwrap() < cross_entropy(&mk(p), 0).unwrap());
        }
    }
}
