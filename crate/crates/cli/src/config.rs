//! Config files, flag overrides and the backend endpoint environment override.
//!
//! A config file (TOML or JSON, chosen by extension) has optional sections
//! `scene`, `backend` and one per task (`attack`, `census`, `landscape`,
//! `sensitivity`, `yaw_sweep`, `transfer`, `neighbors`). Flags patch the
//! section as JSON before it is parsed into its typed config, so unknown
//! keys from either source are rejected with the list of valid ones.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use posehunt_core::classifier::{BackendKind, BackendSpec, ExternalConfig, SyntheticConfig};
use posehunt_core::geometry::PoseParams;
use posehunt_core::renderer::{BuiltinMesh, MeshSource, SceneConfig};
use posehunt_core::run::RunError;

/// Overrides the backend with an external protocol endpoint.
pub const BACKEND_ENV: &str = "POSEHUNT_BACKEND_ENDPOINT";

/// Classes in the default synthetic backend.
pub const DEFAULT_SYNTHETIC_CLASSES: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_usage() => 2,
            _ => 1,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: Option<Value>,
    pub backend: Option<Value>,
    pub attack: Option<Value>,
    pub census: Option<Value>,
    pub landscape: Option<Value>,
    pub sensitivity: Option<Value>,
    pub yaw_sweep: Option<Value>,
    pub transfer: Option<Value>,
    pub neighbors: Option<Value>,
    /// Directory relative paths in the file resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: ConfigFile = parse_file(path)?;
        cfg.base_dir = parent_dir(path)?;
        Ok(cfg)
    }

    pub fn section(&self, name: &str) -> Option<&Value> {
        match name {
            "attack" => self.attack.as_ref(),
            "census" => self.census.as_ref(),
            "landscape" => self.landscape.as_ref(),
            "sensitivity" => self.sensitivity.as_ref(),
            "yaw_sweep" => self.yaw_sweep.as_ref(),
            "transfer" => self.transfer.as_ref(),
            "neighbors" => self.neighbors.as_ref(),
            _ => None,
        }
    }
}

fn parent_dir(path: &Path) -> Result<PathBuf, CliError> {
    let abs = std::path::absolute(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(abs.parent().map(Path::to_path_buf).unwrap_or_default())
}

/// Reads a TOML (`.toml`) or JSON file into `T`.
pub fn parse_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => usage(format!("config file not found: {}", path.display())),
        _ => usage(format!("cannot read {}: {e}", path.display())),
    })?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        let de = toml::Deserializer::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_path_to_error::deserialize(de).map_err(|e| usage(format!("{}: {}", path.display(), describe(&e))))
    } else {
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| usage(format!("{}: {}", path.display(), describe(&e))))
    }
}

fn describe<E: std::fmt::Display>(e: &serde_path_to_error::Error<E>) -> String {
    let path = e.path().to_string();
    if path == "." {
        e.inner().to_string()
    } else {
        format!("at `{path}`: {}", e.inner())
    }
}

/// Parses a JSON value into `T`, naming the offending key path on failure.
pub fn typed<T: DeserializeOwned>(what: &str, value: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| usage(format!("invalid {what} config {}", describe(&e))))
}

/// Parses `"x,y,z,yaw,pitch,roll"`.
pub fn parse_pose(s: &str) -> Result<PoseParams, CliError> {
    let v = parse_floats(s, 6, "pose")?;
    Ok(PoseParams::from_array([v[0], v[1], v[2], v[3], v[4], v[5]]))
}

pub fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("{what} '{s}': {e}")))?;
    if v.len() != n {
        return Err(usage(format!("{what} '{s}' needs {n} comma-separated numbers, got {}", v.len())));
    }
    Ok(v)
}

/// Object patch built from flags; later inserts win.
#[derive(Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn set_opt<T: Into<Value>>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// `KEY=VALUE` pairs; values parse as JSON when possible, else as strings.
    pub fn set_pairs(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            self.set(k.trim(), value);
        }
        Ok(())
    }

    pub fn apply(self, base: Option<&Value>) -> Result<Value, CliError> {
        let mut obj = match base {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(other) => return Err(usage(format!("expected a table, found {other}"))),
        };
        obj.extend(self.0);
        Ok(Value::Object(obj))
    }
}

/// Scene sources in increasing priority: config section, `--scene` file,
/// `--mesh` path. Defaults to the builtin cube.
pub fn resolve_scene(
    file: Option<&ConfigFile>,
    scene_path: Option<&Path>,
    mesh: Option<&Path>,
    true_class: Option<usize>,
) -> Result<SceneConfig, CliError> {
    let mut scene = if let Some(p) = scene_path {
        let cfg: SceneConfig = parse_file(p)?;
        cfg.resolve_paths(&parent_dir(p)?)
    } else if let Some(v) = file.and_then(|f| f.scene.clone()) {
        let cfg: SceneConfig = typed("scene", v)?;
        cfg.resolve_paths(&file.map(|f| f.base_dir.clone()).unwrap_or_default())
    } else {
        SceneConfig::new(MeshSource::Builtin(BuiltinMesh::Cube))
    };
    if let Some(m) = mesh {
        scene.mesh = MeshSource::Obj(absolute(m)?);
    }
    if true_class.is_some() {
        scene.true_class = true_class;
    }
    Ok(scene)
}

/// Backend sources in increasing priority: config section, `--backend`
/// file, then the endpoint environment variable. Defaults to a seeded
/// synthetic backend with 1000 classes.
pub fn resolve_backend(file: Option<&ConfigFile>, backend_path: Option<&Path>) -> Result<BackendSpec, CliError> {
    let mut spec = if let Some(p) = backend_path {
        parse_file(p)?
    } else if let Some(v) = file.and_then(|f| f.backend.clone()) {
        typed("backend", v)?
    } else {
        let mut cfg = SyntheticConfig::uniform(DEFAULT_SYNTHETIC_CLASSES);
        cfg.pixel_scale = 1.0;
        BackendSpec::synthetic(cfg)
    };
    apply_endpoint_env(&mut spec, env::var(BACKEND_ENV).ok().as_deref());
    Ok(spec)
}

/// Points the backend at `endpoint` when set, keeping any external pool
/// settings, class table and input size.
pub fn apply_endpoint_env(spec: &mut BackendSpec, endpoint: Option<&str>) {
    let Some(endpoint) = endpoint.filter(|e| !e.trim().is_empty()) else {
        return;
    };
    match &mut spec.kind {
        BackendKind::External(cfg) => cfg.endpoint = endpoint.to_string(),
        kind => *kind = BackendKind::External(ExternalConfig::new(endpoint)),
    }
}

pub fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

/// Resolves `p` against `base` when relative.
pub fn resolve_in(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}
