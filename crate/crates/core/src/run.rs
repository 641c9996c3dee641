//! Run specifications, manifests and on-disk artifacts.
//!
//! A [`RunSpec`] fully determines a run: scene, backend and task config
//! (which carries the seed). Executing it writes `records.jsonl`,
//! `summary.json`, task-specific tables and `manifest.json` into an output
//! directory. Re-executing the spec stored in a manifest reproduces the
//! JSONL byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{
    census, landscape_grid, lighting_overlap, nearest_neighbors, sensitivity, transfer,
    write_csv, yaw_sweep_eval, AnalysisError, CensusConfig, CensusReport, LandscapeConfig,
    SensitivityConfig, TransferConfig,
};
use crate::classifier::{BackendSpec, Classifier, ClassifierError, Handshake};
use crate::parallel::ExecPolicy;
use crate::renderer::{MeshSource, RenderError, RenderOutput, Scene, SceneConfig};
use crate::search::{
    run_fdg, run_multiview_fdg, run_random_search, run_zrs, Evaluator, SearchConfig, SearchError,
    SearchMode, TargetSummary, TrialRecord,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Bad configuration or missing input files.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Whether the failure comes from the caller's input rather than from
    /// running it.
    pub fn is_usage(&self) -> bool {
        match self {
            RunError::Usage(_) => true,
            RunError::Render(e) => matches!(
                e,
                RenderError::InvalidScene(_) | RenderError::MissingFile(_) | RenderError::Mesh(_)
            ),
            RunError::Classifier(e) => matches!(
                e,
                ClassifierError::InvalidConfig(_) | ClassifierError::ClassTableMismatch(_)
            ),
            RunError::Search(SearchError::InvalidConfig(_)) => true,
            RunError::Analysis(e) => matches!(
                e,
                AnalysisError::InvalidInput(_) | AnalysisError::Search(SearchError::InvalidConfig(_))
            ),
            _ => false,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YawSweepTask {
    #[serde(default)]
    pub execution: ExecPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferTask {
    /// JSONL of source-backend trial records.
    pub records: PathBuf,
    /// Source backend labels; defaults to the second backend's labels.
    #[serde(default)]
    pub source_labels: Option<Vec<String>>,
    #[serde(default)]
    pub options: TransferConfig,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborsTask {
    pub queries: Vec<PathBuf>,
    pub corpus: Vec<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub execution: ExecPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Attack(SearchConfig),
    Census(CensusConfig),
    Landscape(LandscapeConfig),
    Sensitivity(SensitivityConfig),
    YawSweep(YawSweepTask),
    Transfer(TransferTask),
    Neighbors(NeighborsTask),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Attack(_) => "attack",
            Task::Census(_) => "census",
            Task::Landscape(_) => "landscape",
            Task::Sensitivity(_) => "sensitivity",
            Task::YawSweep(_) => "yaw_sweep",
            Task::Transfer(_) => "transfer",
            Task::Neighbors(_) => "neighbors",
        }
    }

    /// The task's root seed; tasks without randomness report 0.
    pub fn seed(&self) -> u64 {
        match self {
            Task::Attack(c) => c.rng_seed,
            Task::Census(c) => c.rng_seed,
            Task::Sensitivity(c) => c.rng_seed,
            _ => 0,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            Task::Attack(c) => c.rng_seed = seed,
            Task::Census(c) => c.rng_seed = seed,
            Task::Sensitivity(c) => c.rng_seed = seed,
            _ => {}
        }
    }

    pub fn set_execution(&mut self, policy: ExecPolicy) {
        match self {
            Task::Attack(c) => c.execution = policy,
            Task::Census(c) => c.execution = policy,
            Task::Landscape(c) => c.execution = policy,
            Task::Sensitivity(c) => c.execution = policy,
            Task::YawSweep(c) => c.execution = policy,
            Task::Transfer(c) => c.options.execution = policy,
            Task::Neighbors(c) => c.execution = policy,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub scene: SceneConfig,
    pub backend: BackendSpec,
    pub task: Task,
}

impl RunSpec {
    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    pub config: RunSpec,
    pub scene_hash: String,
    pub backend: Handshake,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    /// Artifact name → path relative to the run directory.
    pub outputs: BTreeMap<String, PathBuf>,
    pub summary: Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| RunError::Usage(format!("invalid manifest {}: {e}", path.display())))
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| RunError::io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RunError::Usage(format!("file not found: {}", path.display())),
        _ => RunError::io(path, e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            RunError::Usage(format!("{}:{}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| RunError::io(path, e))
}

fn now_rfc3339() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

/// Name used for per-object tables: the mesh file stem or builtin name.
pub fn object_name(scene: &SceneConfig) -> String {
    match &scene.mesh {
        MeshSource::Obj(p) => p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string()),
        MeshSource::Builtin(b) => serde_json::to_value(b)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
    }
}

/// A spec with its scene loaded and backend connected.
pub struct PreparedRun {
    pub spec: RunSpec,
    pub scene: Arc<Scene>,
    pub backend: Arc<dyn Classifier>,
}

impl PreparedRun {
    pub fn new(spec: RunSpec) -> Result<Self, RunError> {
        let scene = Arc::new(Scene::load(spec.scene.clone())?);
        let backend = spec.backend.connect()?;
        Ok(Self {
            spec,
            scene,
            backend,
        })
    }

    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(self.scene.clone(), self.backend.clone())
    }

    /// Executes the task into `out_dir` (created if needed) and writes the
    /// manifest. On failure the manifest records the error and any partial
    /// trial records are still written.
    pub fn execute(&self, out_dir: &Path, run_id: Option<String>) -> Result<RunManifest, RunError> {
        fs::create_dir_all(out_dir).map_err(|e| RunError::io(out_dir, e))?;
        let started_at = now_rfc3339();
        let run_id = run_id.unwrap_or_else(|| default_run_id(&self.spec));
        let mut outputs = BTreeMap::new();
        let result = self.run_task(out_dir, &mut outputs);
        let (status, summary) = match &result {
            Ok(summary) => (RunStatus::Completed, summary.clone()),
            Err(e) => {
                let partial = partial_records(e);
                if !partial.is_empty() {
                    write_jsonl(&out_dir.join(RECORDS_FILE), partial)?;
                    outputs.insert("records".into(), PathBuf::from(RECORDS_FILE));
                }
                (
                    RunStatus::Failed {
                        error: e.to_string(),
                    },
                    json!({ "partial_records": partial.len() }),
                )
            }
        };
        let manifest = RunManifest {
            run_id,
            command: self.spec.task.name().into(),
            seed: self.spec.task.seed(),
            config: self.spec.clone(),
            scene_hash: self.scene.hash().to_string(),
            backend: self.backend.info().clone(),
            started_at,
            finished_at: now_rfc3339(),
            status,
            outputs,
            summary,
        };
        write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
        result.map(|_| manifest)
    }

    fn run_task(&self, dir: &Path, outputs: &mut BTreeMap<String, PathBuf>) -> Result<Value, RunError> {
        let mut emit = |name: &str, file: &str| {
            outputs.insert(name.into(), PathBuf::from(file));
            dir.join(file)
        };
        let summary = match &self.spec.task {
            Task::Attack(cfg) => {
                let (records, summary) = self.attack(cfg)?;
                write_jsonl(&emit("records", RECORDS_FILE), &records)?;
                summary
            }
            Task::Census(cfg) => {
                let (report, records) = census(&self.scene, &self.backend, cfg)?;
                write_jsonl(&emit("records", RECORDS_FILE), &records)?;
                write_census_csv(&emit("table", "census.csv"), &report)?;
                let overlap = match report.settings.as_slice() {
                    [a, b, c] if [a, b, c].iter().all(|s| !s.histogram.is_empty()) => Some(
                        lighting_overlap([&a.histogram, &b.histogram, &c.histogram])?,
                    ),
                    _ => None,
                };
                json!({ "census": report, "overlap": overlap })
            }
            Task::Landscape(cfg) => {
                let grid = landscape_grid(&self.evaluator(), cfg)?;
                write_jsonl(&emit("records", RECORDS_FILE), &grid.cells)?;
                let file = File::create(emit("table", "landscape.csv")).map_err(|e| RunError::io(dir, e))?;
                write_csv(file, &grid.cells)?;
                let png = emit("heatmap", "heatmap.png");
                grid.heatmap(4)
                    .save(&png)
                    .map_err(|e| RunError::io(&png, std::io::Error::other(e)))?;
                let correct = grid.cells.iter().filter(|c| c.correct == Some(true)).count();
                json!({
                    "sweep": grid.sweep,
                    "resolution": grid.resolution,
                    "ranges": grid.ranges,
                    "cells": grid.cells.len(),
                    "correct_cells": correct,
                })
            }
            Task::Sensitivity(cfg) => {
                let object = object_name(&self.spec.scene);
                let run = sensitivity(&self.evaluator(), &object, cfg)?;
                write_jsonl(&emit("records", RECORDS_FILE), &run.records)?;
                let file = File::create(emit("table", "sensitivity.csv")).map_err(|e| RunError::io(dir, e))?;
                write_csv(file, &run.summary.params)?;
                json!({
                    "object": object,
                    "starts": run.starts,
                    "skipped_starts": run.skipped_starts,
                    "params": run.summary.params,
                })
            }
            Task::YawSweep(cfg) => {
                let report = yaw_sweep_eval(&self.evaluator(), cfg.execution)?;
                write_jsonl(&emit("records", RECORDS_FILE), &report.views)?;
                let file = File::create(emit("table", "yaw_sweep.csv")).map_err(|e| RunError::io(dir, e))?;
                write_csv(file, &report.per_distance)?;
                json!({
                    "per_distance": report.per_distance,
                    "top1_accuracy": report.top1_accuracy,
                    "top5_accuracy": report.top5_accuracy,
                    "mean_confidence": report.mean_confidence,
                })
            }
            Task::Transfer(t) => {
                let records: Vec<TrialRecord> = read_jsonl(&t.records)?;
                let labels = t
                    .source_labels
                    .clone()
                    .unwrap_or_else(|| self.backend.labels().to_vec());
                let report = transfer(&self.evaluator(), &labels, &records, &t.options)?;
                write_jsonl(&emit("records", RECORDS_FILE), &report.records)?;
                json!({
                    "n": report.n,
                    "misclassification_rate": report.misclassification_rate,
                    "agreement_rate": report.agreement_rate,
                })
            }
            Task::Neighbors(t) => {
                let load = |paths: &[PathBuf]| {
                    paths
                        .iter()
                        .map(|p| RenderOutput::load(p))
                        .collect::<Result<Vec<_>, _>>()
                };
                let queries = load(&t.queries)?;
                let corpus = load(&t.corpus)?;
                let ranked = nearest_neighbors(self.backend.as_ref(), &queries, &corpus, t.k, t.execution)?;
                let lines: Vec<Value> = ranked
                    .iter()
                    .zip(&t.queries)
                    .map(|(ns, q)| {
                        let ns: Vec<Value> = ns
                            .iter()
                            .map(|n| json!({ "index": n.index, "path": t.corpus[n.index], "distance": n.distance }))
                            .collect();
                        json!({ "query": q, "neighbors": ns })
                    })
                    .collect();
                write_jsonl(&emit("records", RECORDS_FILE), &lines)?;
                json!({ "queries": queries.len(), "corpus": corpus.len(), "k": t.k })
            }
        };
        write_json(&emit("summary", SUMMARY_FILE), &summary)?;
        Ok(summary)
    }

    fn attack(&self, cfg: &SearchConfig) -> Result<(Vec<TrialRecord>, Value), RunError> {
        let eval = self.evaluator();
        let truth = self.spec.scene.true_class;
        let (records, extra) = match cfg.mode {
            SearchMode::Rs => (run_random_search(&eval, cfg)?, json!({})),
            SearchMode::ZrsInit | SearchMode::ZrsAttack => {
                let out = run_zrs(&eval, cfg)?;
                let extra = json!({
                    "levels": out.levels,
                    "level_max": out.level_max,
                    "selected_levels": out.selected_levels,
                    "refined_range": out.refined_range,
                    "best_pose": out.best_pose,
                    "best_target_prob": out.best_target_prob,
                });
                (out.records, extra)
            }
            SearchMode::Fdg | SearchMode::MultiviewFdg => {
                let (mut records, init) = match cfg.init_pose {
                    Some(p) => (Vec::new(), p),
                    None => {
                        let mut init_cfg = cfg.clone();
                        init_cfg.mode = SearchMode::ZrsInit;
                        let out = run_zrs(&eval, &init_cfg)?;
                        (out.records, out.best_pose)
                    }
                };
                let outcome = if cfg.mode == SearchMode::Fdg {
                    run_fdg(&eval, cfg, &init)
                } else {
                    run_multiview_fdg(&eval, cfg, &init)
                };
                let outcome = outcome.map_err(|e| {
                    let mut all = records.clone();
                    all.extend_from_slice(e.partial_records());
                    RunError::Search(match e {
                        SearchError::Aborted { source, .. } => SearchError::Aborted { records: all, source },
                        other => other,
                    })
                })?;
                records.extend(outcome.records);
                let extra = json!({ "init_pose": init, "final_pose": outcome.final_pose });
                (records, extra)
            }
        };
        let target = cfg.target_class.map(|t| TargetSummary::of(&records, t));
        let misclassified = truth.map(|t| records.iter().filter(|r| r.top_label != t).count());
        let summary = json!({
            "mode": cfg.mode,
            "records": records.len(),
            "evaluations": eval.calls(),
            "target_class": cfg.target_class,
            "target": target,
            "misclassified": misclassified,
            "details": extra,
        });
        Ok((records, summary))
    }
}

fn partial_records(e: &RunError) -> &[TrialRecord] {
    match e {
        RunError::Search(s) | RunError::Analysis(AnalysisError::Search(s)) => s.partial_records(),
        _ => &[],
    }
}

fn default_run_id(spec: &RunSpec) -> String {
    let millis = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    format!("{}-{millis:x}", &spec.digest()[..12])
}

#[derive(Serialize)]
struct CensusRow<'a> {
    setting: &'a str,
    n: usize,
    correct: usize,
    accuracy: Option<f64>,
    distinct_labels: usize,
    median_confidence_correct: Option<f64>,
    median_confidence_incorrect: Option<f64>,
}

fn write_census_csv(path: &Path, report: &CensusReport) -> Result<(), RunError> {
    let rows: Vec<CensusRow> = report
        .settings
        .iter()
        .chain(std::iter::once(&report.pooled))
        .map(|s| CensusRow {
            setting: &s.name,
            n: s.n,
            correct: s.correct,
            accuracy: s.accuracy,
            distinct_labels: s.distinct_labels,
            median_confidence_correct: s.median_confidence_correct,
            median_confidence_incorrect: s.median_confidence_incorrect,
        })
        .collect();
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    write_csv(file, &rows)?;
    Ok(())
}

/// Re-executes the spec stored in a manifest into `out_dir`.
pub fn replay(manifest: &Path, out_dir: &Path) -> Result<RunManifest, RunError> {
    let m = RunManifest::load(manifest)?;
    let prepared = PreparedRun::new(m.config)?;
    if prepared.scene.hash() != m.scene_hash {
        log::warn!(
            "scene hash changed since the original run ({} vs {})",
            prepared.scene.hash(),
            m.scene_hash
        );
    }
    prepared.execute(out_dir, None)
}
