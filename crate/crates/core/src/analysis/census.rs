use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{median, AnalysisError, Histogram};
use crate::classifier::Classifier;
use crate::parallel::ExecPolicy;
use crate::renderer::{LightingConfig, Scene};
use crate::rng::substream;
use crate::search::{run_random_search, Evaluator, Phase, SearchConfig, SearchMode, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusConfig {
    /// Samples per lighting setting.
    pub n: usize,
    /// Named lighting settings; defaults to the bright/medium/dark presets.
    #[serde(default = "default_settings")]
    pub settings: Vec<(String, LightingConfig)>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub execution: ExecPolicy,
}

fn default_settings() -> Vec<(String, LightingConfig)> {
    ["bright", "medium", "dark"]
        .into_iter()
        .map(|n| (n.to_string(), LightingConfig::preset(n).expect("preset")))
        .collect()
}

impl CensusConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            settings: default_settings(),
            rng_seed: 0,
            execution: ExecPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingCensus {
    pub name: String,
    pub n: usize,
    pub correct: usize,
    /// Percent correct; `None` when `n = 0`.
    pub accuracy: Option<f64>,
    pub histogram: Histogram,
    pub distinct_labels: usize,
    pub median_confidence_correct: Option<f64>,
    pub median_confidence_incorrect: Option<f64>,
}

impl SettingCensus {
    fn from_records(name: &str, records: &[TrialRecord]) -> Self {
        let mut histogram = Histogram::new();
        let (mut conf_ok, mut conf_bad) = (Vec::new(), Vec::new());
        for r in records {
            *histogram.entry(r.top_label).or_default() += 1;
            if r.correct == Some(true) {
                conf_ok.push(r.confidence);
            } else {
                conf_bad.push(r.confidence);
            }
        }
        let n = records.len();
        Self {
            name: name.to_string(),
            n,
            correct: conf_ok.len(),
            accuracy: (n > 0).then(|| 100.0 * conf_ok.len() as f64 / n as f64),
            distinct_labels: histogram.len(),
            histogram,
            median_confidence_correct: median(&conf_ok),
            median_confidence_incorrect: median(&conf_bad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub settings: Vec<SettingCensus>,
    pub pooled: SettingCensus,
}

/// Random-search census under each lighting setting. Records carry the
/// setting name; the scene must declare its ground-truth class.
pub fn census(
    scene: &Arc<Scene>,
    backend: &Arc<dyn Classifier>,
    cfg: &CensusConfig,
) -> Result<(CensusReport, Vec<TrialRecord>), AnalysisError> {
    if scene.config().true_class.is_none() {
        return Err(AnalysisError::invalid("census needs the scene's true_class"));
    }
    let mut all = Vec::with_capacity(cfg.n * cfg.settings.len());
    let mut settings = Vec::new();
    for (i, (name, lighting)) in cfg.settings.iter().enumerate() {
        let mut records = if cfg.n == 0 {
            Vec::new()
        } else {
            let lit = Arc::new(scene.with_lighting(*lighting)?);
            let eval = Evaluator::new(lit, backend.clone());
            let mut sc = SearchConfig::new(SearchMode::Rs);
            sc.budget = cfg.n;
            sc.rng_seed = substream(cfg.rng_seed, "census", i as u64).random();
            sc.execution = cfg.execution;
            match run_random_search(&eval, &sc) {
                Ok(r) => r,
                Err(e) => {
                    let mut partial = all;
                    partial.extend(tag(e.partial_records().to_vec(), name));
                    return Err(crate::search::SearchError::aborted(partial, e).into());
                }
            }
        };
        records = tag(records, name);
        settings.push(SettingCensus::from_records(name, &records));
        all.extend(records);
    }
    let pooled = SettingCensus::from_records("pooled", &all);
    Ok((CensusReport { settings, pooled }, all))
}

fn tag(mut records: Vec<TrialRecord>, name: &str) -> Vec<TrialRecord> {
    for r in &mut records {
        r.phase = Phase::Census;
        r.setting = Some(name.to_string());
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{cube_scene, synthetic, yaw_correct_fraction};

    #[test]
    fn empty_census_is_undefined() {
        let scene = cube_scene(16, Some(0));
        let backend = synthetic(yaw_correct_fraction(0.5));
        let (report, records) = census(&scene, &backend, &CensusConfig::new(0)).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.pooled.accuracy, None);
        assert_eq!(report.settings.len(), 3);
    }

    #[test]
    fn planted_fraction_recovered() {
        let scene = cube_scene(16, Some(0));
        let backend = synthetic(yaw_correct_fraction(0.25));
        let (report, records) = census(&scene, &backend, &CensusConfig::new(2000)).unwrap();
        assert_eq!(records.len(), 6000);
        let acc = report.pooled.accuracy.unwrap();
        assert!((acc - 25.0).abs() < 2.5, "{acc}");
        assert_eq!(report.pooled.distinct_labels, 2);
        assert!(report.pooled.median_confidence_correct.unwrap() > 0.5);
        assert_eq!(records[0].setting.as_deref(), Some("bright"));
    }

    #[test]
    fn requires_true_class() {
        let scene = cube_scene(16, None);
        let backend = synthetic(yaw_correct_fraction(0.5));
        assert!(census(&scene, &backend, &CensusConfig::new(3)).is_err());
    }
}
