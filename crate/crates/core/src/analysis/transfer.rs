use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::classifier::ClassifierError;
use crate::geometry::PoseParams;
use crate::parallel::{map_indexed, ExecPolicy};
use crate::renderer::LightingConfig;
use crate::search::{Evaluator, TrialRecord};

/// Maps class indices of the second backend onto the source class table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassMapping(pub BTreeMap<usize, usize>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "default_floor")]
    pub confidence_floor: f64,
    /// Required when the two backends' class tables differ.
    #[serde(default)]
    pub mapping: Option<ClassMapping>,
    #[serde(default)]
    pub execution: ExecPolicy,
}

fn default_floor() -> f64 {
    0.9
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            confidence_floor: default_floor(),
            mapping: None,
            execution: ExecPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub pose: PoseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub source_label: usize,
    pub source_confidence: f64,
    pub label: usize,
    pub confidence: f64,
    /// `label` in the source class table; `None` if unmapped.
    pub mapped_label: Option<usize>,
    pub misclassified: bool,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Records that passed the misclassified-and-confident filter.
    pub n: usize,
    /// Percent of poses the second backend also misclassifies.
    pub misclassification_rate: Option<f64>,
    /// Percent whose top-1 equals the source backend's top-1.
    pub agreement_rate: Option<f64>,
    pub records: Vec<TransferRecord>,
}

/// Re-renders confidently misclassified poses from `records` and classifies
/// them with the backend in `eval_b`. Records tagged with a lighting preset
/// name are re-rendered under that preset.
pub fn transfer(
    eval_b: &Evaluator,
    source_labels: &[String],
    records: &[TrialRecord],
    cfg: &TransferConfig,
) -> Result<TransferReport, AnalysisError> {
    let truth = eval_b
        .scene()
        .config()
        .true_class
        .ok_or_else(|| AnalysisError::invalid("transfer needs the scene's true_class"))?;
    let b_labels = eval_b.backend().labels();
    let map: Box<dyn Fn(usize) -> Option<usize> + Sync> = match &cfg.mapping {
        None if b_labels != source_labels => {
            return Err(ClassifierError::ClassTableMismatch(format!(
                "source has {} classes, second backend has {}; a class mapping is required",
                source_labels.len(),
                b_labels.len()
            ))
            .into())
        }
        None => Box::new(Some),
        Some(m) => {
            if let Some((b, s)) = m.0.iter().find(|(b, s)| **b >= b_labels.len() || **s >= source_labels.len()) {
                return Err(AnalysisError::invalid(format!("class mapping entry {b} -> {s} out of range")));
            }
            let m = m.0.clone();
            Box::new(move |b| m.get(&b).copied())
        }
    };

    let chosen: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.correct == Some(false) && r.confidence >= cfg.confidence_floor)
        .collect();
    let mut lit: BTreeMap<String, Evaluator> = BTreeMap::new();
    for name in chosen.iter().filter_map(|r| r.setting.as_deref()) {
        if let (false, Some(l)) = (lit.contains_key(name), LightingConfig::preset(name)) {
            let scene = Arc::new(eval_b.scene().with_lighting(l)?);
            lit.insert(name.to_string(), eval_b.with_scene(scene));
        }
    }
    let results = map_indexed(cfg.execution, chosen.len(), |i| {
        let r = chosen[i];
        let eval = r.setting.as_deref().and_then(|s| lit.get(s)).unwrap_or(eval_b);
        let resp = eval.evaluate(&r.pose)?;
        let mapped = map(resp.top_label);
        Ok::<_, AnalysisError>(TransferRecord {
            pose: r.pose,
            setting: r.setting.clone(),
            source_label: r.top_label,
            source_confidence: r.confidence,
            label: resp.top_label,
            confidence: resp.confidence(),
            mapped_label: mapped,
            misclassified: mapped != Some(truth),
            agrees: mapped == Some(r.top_label),
        })
    });
    let out = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = out.len();
    let pct = |k: usize| (n > 0).then(|| 100.0 * k as f64 / n as f64);
    Ok(TransferReport {
        n,
        misclassification_rate: pct(out.iter().filter(|t| t.misclassified).count()),
        agreement_rate: pct(out.iter().filter(|t| t.agrees).count()),
        records: out,
    })
}
