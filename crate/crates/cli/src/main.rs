use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use posehunt_cli::config::{
    absolute, parse_file, parse_floats, parse_pose, resolve_backend, resolve_in, resolve_scene, typed,
    usage, CliError, ConfigFile, Overrides,
};
use posehunt_cli::service::{self, AppState, ServiceConfig};
use posehunt_core::classifier::conformance;
use posehunt_core::classifier::protocol::{serve_connection, serve_tcp, EchoHandler};
use posehunt_core::parallel::ExecPolicy;
use posehunt_core::renderer::{render, LightingConfig, Scene};
use posehunt_core::run::{replay, PreparedRun, RunManifest, RunSpec, RunStatus, Task, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "posehunt", version, about = "Adversarial 6D pose search against image classifiers")]
struct Cli {
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SceneArgs {
    /// Run config (TOML or JSON) with `scene`, `backend` and task sections.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Scene config file; overrides the config's `scene` section.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// OBJ mesh; overrides the scene's mesh.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Ground-truth class of the object.
    #[arg(long)]
    true_class: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Backend spec file; overrides the config's `backend` section.
    #[arg(long)]
    backend: Option<PathBuf>,
    /// Root seed for every random substream.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate sequentially instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Run directory for artifacts; defaults to runs/<task>-<spec digest>.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Extra task config keys as KEY=VALUE (VALUE parsed as JSON if possible).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackMode {
    Rs,
    Zrs,
    ZrsInit,
    Fdg,
    Multiview,
}

impl AttackMode {
    fn key(self) -> &'static str {
        match self {
            AttackMode::Rs => "rs",
            AttackMode::Zrs => "zrs_attack",
            AttackMode::ZrsInit => "zrs_init",
            AttackMode::Fdg => "fdg",
            AttackMode::Multiview => "multiview_fdg",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render one pose to a PNG.
    Render {
        #[command(flatten)]
        scene: SceneArgs,
        /// "x,y,z,yaw,pitch,roll" with angles in radians.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long, short = 'o')]
        out: PathBuf,
        /// Lighting preset: bright, medium or dark.
        #[arg(long)]
        lighting: Option<String>,
    },
    /// Random-pose census under each lighting setting.
    Census {
        #[command(flatten)]
        run: RunArgs,
        /// Samples per lighting setting.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Label/confidence grid over two pose parameters.
    Landscape {
        #[command(flatten)]
        run: RunArgs,
        /// Row and column parameters, e.g. "pitch,roll".
        #[arg(long)]
        sweep: Option<String>,
        /// Cells per axis, e.g. "64x64".
        #[arg(long)]
        resolution: Option<String>,
        /// Values for the fixed parameters as a full pose.
        #[arg(long, allow_hyphen_values = true)]
        fixed: Option<String>,
    },
    /// Single-parameter sensitivity around correctly classified poses.
    Sensitivity {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Pose attacks: rs, zrs, zrs-init, fdg or multiview.
    Attack {
        mode: AttackMode,
        #[command(flatten)]
        run: RunArgs,
        /// Target class for targeted modes.
        #[arg(long)]
        target: Option<usize>,
        /// Evaluations for rs/zrs.
        #[arg(long)]
        budget: Option<usize>,
        /// Descent steps for fdg/multiview.
        #[arg(long)]
        steps: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Finite-difference step.
        #[arg(long)]
        h: Option<f64>,
        /// Camera views for multiview.
        #[arg(long)]
        views: Option<usize>,
        /// Depth levels for zrs.
        #[arg(long)]
        levels: Option<usize>,
        /// Samples per depth level for zrs.
        #[arg(long)]
        samples_per_level: Option<usize>,
        /// Starting pose for fdg; otherwise the best zrs-init sample.
        #[arg(long, allow_hyphen_values = true)]
        init: Option<String>,
        /// Depth range "lo,hi" overriding the camera's.
        #[arg(long, allow_hyphen_values = true)]
        depth_range: Option<String>,
    },
    /// Re-classify confident misclassifications with another backend.
    Transfer {
        #[command(flatten)]
        run: RunArgs,
        /// JSONL of source trial records.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Manifest of the source run; supplies records and source labels.
        #[arg(long)]
        source_manifest: Option<PathBuf>,
        #[arg(long)]
        confidence_floor: Option<f64>,
        /// JSON object mapping this backend's classes to source classes.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Accuracy over 36 canonical views (3 distances × 12 yaws).
    YawSweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Nearest corpus images in embedding space.
    Neighbors {
        #[command(flatten)]
        run: RunArgs,
        /// Query images or directories of images.
        #[arg(long = "query")]
        queries: Vec<PathBuf>,
        /// Corpus images or directories of images.
        #[arg(long = "corpus")]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Re-execute a run from its manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// HTTP service for interactive exploration and run launching.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        /// Runs executing at once.
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
    /// Protocol v1 fixture backend with fixed uniform probabilities.
    EchoServer {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Also answer embed requests with a fixed vector of this length.
        #[arg(long)]
        embedding_dim: Option<usize>,
        /// Listen address for TCP mode.
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
        /// Serve a single session over stdin/stdout.
        #[arg(long)]
        stdio: bool,
    },
    /// Check a backend endpoint against protocol v1.
    Conformance {
        /// host:port or stdio:<command>.
        endpoint: String,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn print_json(v: &Value) {
    let _ = writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn load_config(args: &SceneArgs) -> Result<Option<ConfigFile>, CliError> {
    args.config.as_deref().map(ConfigFile::load).transpose()
}

/// Builds a run spec from the config file, flags and task overrides.
fn build_spec(run: &RunArgs, task: &str, mut o: Overrides) -> Result<(RunSpec, Option<ConfigFile>), CliError> {
    let file = load_config(&run.scene)?;
    let scene = resolve_scene(
        file.as_ref(),
        run.scene.scene.as_deref(),
        run.scene.mesh.as_deref(),
        run.scene.true_class,
    )?;
    let backend = resolve_backend(file.as_ref(), run.backend.as_deref())?;
    o.set_pairs(&run.set)?;
    let section = o.apply(file.as_ref().and_then(|f| f.section(task)))?;
    let mut task: Task = typed("task", json!({ task: section }))?;
    if let Some(seed) = run.seed {
        task.set_seed(seed);
    }
    if run.sequential {
        task.set_execution(ExecPolicy::Sequential);
    }
    Ok((
        RunSpec {
            scene,
            backend,
            task,
        },
        file,
    ))
}

fn execute(spec: RunSpec, out: Option<&Path>) -> Result<(), CliError> {
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from("runs").join(format!("{}-{}", spec.task.name(), &spec.digest()[..12])),
    };
    let prepared = PreparedRun::new(spec)?;
    if let Task::Attack(cfg) = &prepared.spec.task {
        cfg.validate(prepared.backend.num_classes())
            .map_err(|e| usage(e.to_string()))?;
    }
    let manifest = prepared.execute(&dir, None)?;
    report(&manifest, &dir);
    Ok(())
}

fn report(m: &RunManifest, dir: &Path) {
    print_json(&json!({
        "run_id": m.run_id,
        "manifest": dir.join(MANIFEST_FILE),
        "status": m.status,
        "summary": m.summary,
    }));
}

/// Expands directories into their image files, sorted by name.
fn expand_images(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| usage(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.extension()
                        .and_then(|x| x.to_str())
                        .is_some_and(|x| matches!(x.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                })
                .collect();
            files.sort();
            out.extend(files);
        } else if p.exists() {
            out.push(absolute(p)?);
        } else {
            return Err(usage(format!("image not found: {}", p.display())));
        }
    }
    Ok(out)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Render {
            scene,
            pose,
            out,
            lighting,
        } => {
            let file = load_config(&scene)?;
            let mut cfg = resolve_scene(file.as_ref(), scene.scene.as_deref(), scene.mesh.as_deref(), scene.true_class)?;
            if let Some(name) = lighting {
                cfg.lighting = LightingConfig::preset(&name)
                    .ok_or_else(|| usage(format!("unknown lighting preset '{name}' (bright, medium, dark)")))?;
            }
            let pose = parse_pose(&pose)?;
            let scene = Scene::load(cfg).map_err(posehunt_core::run::RunError::from)?;
            pose.validate(&scene.frustum())
                .map_err(|e| usage(format!("invalid pose: {e}")))?;
            let img = render(&scene, &pose);
            img.save_png(&out).map_err(|e| CliError::Runtime(e.to_string()))?;
            print_json(&json!({
                "out": out,
                "scene_hash": scene.hash(),
                "coverage_bbox": img.coverage_bbox(),
            }));
            Ok(())
        }
        Command::Census { run, n } => {
            let mut o = Overrides::default();
            o.set_opt("n", n);
            let (spec, _) = build_spec(&run, "census", o)?;
            if let Task::Census(c) = &spec.task {
                if c.n == 0 {
                    log::warn!("census with n = 0 produces an empty report");
                }
            }
            require_truth(&spec)?;
            execute(spec, run.out.as_deref())
        }
        Command::Landscape {
            run,
            sweep,
            resolution,
            fixed,
        } => {
            let mut o = Overrides::default();
            if let Some(s) = sweep {
                let parts: Vec<&str> = s.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(usage(format!("--sweep needs two parameters, got '{s}'")));
                }
                let names: Vec<Value> = parts
                    .iter()
                    .map(|p| {
                        posehunt_core::geometry::PoseParam::parse(p)
                            .map(|p| json!(p))
                            .ok_or_else(|| usage(format!("unknown pose parameter '{p}'")))
                    })
                    .collect::<Result<_, _>>()?;
                o.set("sweep", names);
            }
            if let Some(r) = resolution {
                let dims: Vec<usize> = r
                    .split(['x', 'X', ','])
                    .map(|p| p.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|e| usage(format!("--resolution '{r}': {e}")))?;
                if dims.len() != 2 {
                    return Err(usage(format!("--resolution needs ROWSxCOLS, got '{r}'")));
                }
                o.set("resolution", json!(dims));
            }
            if let Some(f) = fixed {
                o.set("fixed", json!(parse_pose(&f)?));
            }
            let (spec, _) = build_spec(&run, "landscape", o)?;
            execute(spec, run.out.as_deref())
        }
        Command::Sensitivity { run, starts, resamples } => {
            let mut o = Overrides::default();
            o.set_opt("n_starts", starts);
            o.set_opt("n_resamples", resamples);
            let (spec, _) = build_spec(&run, "sensitivity", o)?;
            require_truth(&spec)?;
            execute(spec, run.out.as_deref())
        }
        Command::Attack {
            mode,
            run,
            target,
            budget,
            steps,
            lr,
            h,
            views,
            levels,
            samples_per_level,
            init,
            depth_range,
        } => {
            let mut o = Overrides::default();
            o.set("mode", mode.key());
            o.set_opt("target_class", target);
            o.set_opt("budget", budget);
            o.set_opt("budget", steps);
            o.set_opt("learning_rate", lr);
            o.set_opt("fd_step", h);
            o.set_opt("views", views);
            o.set_opt("zrs_levels", levels);
            o.set_opt("zrs_samples_per_level", samples_per_level);
            if let Some(p) = init {
                o.set("init_pose", json!(parse_pose(&p)?));
            }
            if let Some(r) = depth_range {
                o.set("depth_range", json!(parse_floats(&r, 2, "--depth-range")?));
            }
            let (spec, _) = build_spec(&run, "attack", o)?;
            execute(spec, run.out.as_deref())
        }
        Command::Transfer {
            run,
            records,
            source_manifest,
            confidence_floor,
            mapping,
        } => {
            let mut o = Overrides::default();
            let mut options = Overrides::default();
            let source = source_manifest.as_deref().map(RunManifest::load).transpose()?;
            let records = match (&records, &source_manifest) {
                (Some(r), _) => Some(absolute(r)?),
                (None, Some(m)) => {
                    let m_dir = absolute(m)?.parent().map(Path::to_path_buf).unwrap_or_default();
                    Some(m_dir.join(posehunt_core::run::RECORDS_FILE))
                }
                (None, None) => None,
            };
            o.set_opt("records", records.map(|p| json!(p)));
            if let Some(m) = &source {
                o.set("source_labels", json!(m.backend.labels));
            }
            options.set_opt("confidence_floor", confidence_floor);
            if let Some(p) = mapping {
                let map: Value = parse_file(&p)?;
                options.set("mapping", map);
            }
            let file = load_config(&run.scene)?;
            let base_options = file
                .as_ref()
                .and_then(|f| f.transfer.as_ref())
                .and_then(|t| t.get("options"));
            o.set("options", options.apply(base_options)?);
            let (mut spec, file) = build_spec(&run, "transfer", o)?;
            if let (Task::Transfer(t), Some(f)) = (&mut spec.task, &file) {
                t.records = resolve_in(&f.base_dir, &t.records);
            }
            require_truth(&spec)?;
            execute(spec, run.out.as_deref())
        }
        Command::YawSweep { run } => {
            let (spec, _) = build_spec(&run, "yaw_sweep", Overrides::default())?;
            execute(spec, run.out.as_deref())
        }
        Command::Neighbors {
            run,
            queries,
            corpus,
            k,
        } => {
            let mut o = Overrides::default();
            if !queries.is_empty() {
                o.set("queries", json!(expand_images(&queries)?));
            }
            if !corpus.is_empty() {
                o.set("corpus", json!(expand_images(&corpus)?));
            }
            o.set_opt("k", k);
            let (mut spec, file) = build_spec(&run, "neighbors", o)?;
            if let (Task::Neighbors(t), Some(f)) = (&mut spec.task, &file) {
                for p in t.queries.iter_mut().chain(t.corpus.iter_mut()) {
                    *p = resolve_in(&f.base_dir, p);
                }
            }
            execute(spec, run.out.as_deref())
        }
        Command::Replay { manifest, out } => {
            let m = replay(&manifest, &out)?;
            report(&m, &out);
            match m.status {
                RunStatus::Completed => Ok(()),
                RunStatus::Failed { error } => Err(CliError::Runtime(error)),
            }
        }
        Command::Serve {
            run,
            bind,
            runs_dir,
            workers,
        } => {
            let file = load_config(&run.scene)?;
            let scene = resolve_scene(
                file.as_ref(),
                run.scene.scene.as_deref(),
                run.scene.mesh.as_deref(),
                run.scene.true_class,
            )?;
            let backend = resolve_backend(file.as_ref(), run.backend.as_deref())?;
            let state = AppState::new(ServiceConfig {
                scene,
                backend,
                runs_dir,
                workers,
            })?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
            rt.block_on(service::serve(state, &bind))
                .map_err(|e| CliError::Runtime(format!("serve on {bind}: {e}")))
        }
        Command::EchoServer {
            classes,
            embedding_dim,
            listen,
            stdio,
        } => {
            if classes < 2 {
                return Err(usage("--classes must be at least 2"));
            }
            let mut handler = EchoHandler::new(vec![1.0 / classes as f64; classes]);
            if let Some(d) = embedding_dim {
                handler = handler.with_embedding(d);
            }
            if stdio {
                let stdin = io::stdin();
                serve_connection(&handler, BufReader::new(stdin.lock()), io::stdout().lock())
                    .map_err(|e| CliError::Runtime(e.to_string()))
            } else {
                let listener = TcpListener::bind(&listen).map_err(|e| CliError::Runtime(format!("{listen}: {e}")))?;
                eprintln!("echo backend listening on {}", listener.local_addr().map_err(|e| CliError::Runtime(e.to_string()))?);
                serve_tcp(Arc::new(handler), listener).map_err(|e| CliError::Runtime(e.to_string()))
            }
        }
        Command::Conformance { endpoint, timeout_ms } => {
            let report = conformance::run(&endpoint, Duration::from_millis(timeout_ms))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for c in &report.checks {
                let _ = writeln!(
                    io::stdout().lock(),
                    "{} {:<24} {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{endpoint} failed protocol conformance")))
            }
        }
    }
}

fn require_truth(spec: &RunSpec) -> Result<(), CliError> {
    if spec.scene.true_class.is_none() {
        return Err(usage(format!(
            "{} needs the object's true class: set scene.true_class or pass --true-class",
            spec.task.name()
        )));
    }
    Ok(())
}
