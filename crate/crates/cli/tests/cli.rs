use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_posehunt");

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args).env_remove("POSEHUNT_BACKEND_ENDPOINT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn posehunt")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

/// Small cube scene with a known class so runs stay fast.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.json");
    fs::write(&scene, r#"{"mesh": {"builtin": "cube"}, "image_size": [16, 16], "true_class": 0}"#).unwrap();
    (dir, scene)
}

#[test]
fn render_writes_png() {
    let (dir, _) = workspace();
    let o = run(dir.path(), &["render", "--scene", "s.json", "--pose", "0,0,-3,0.785,0,0", "--out", "img.png"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let png = fs::read(dir.path().join("img.png")).unwrap();
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    let v = stdout_json(&o);
    assert!(v["coverage_bbox"].is_array());
}

#[test]
fn render_rejects_out_of_frustum_pose() {
    let (dir, _) = workspace();
    let o = run(dir.path(), &["render", "--scene", "s.json", "--pose", "0,0,5,0,0,0", "--out", "x.png"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("z_delta"), "{}", stderr(&o));
}

#[test]
fn missing_mesh_exits_2_naming_the_path() {
    let (dir, _) = workspace();
    fs::write(dir.path().join("bad.json"), r#"{"mesh": {"obj": "meshes/absent.obj"}}"#).unwrap();
    let o = run(dir.path(), &["attack", "rs", "--scene", "bad.json", "--budget", "1"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("meshes/absent.obj"), "{}", stderr(&o));
    let o = run(dir.path(), &["render", "--mesh", "nowhere.obj", "--pose", "0,0,-3,0,0,0", "--out", "x.png"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.obj"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_exit_2_listing_valid_keys() {
    let (dir, _) = workspace();
    let o = run(dir.path(), &["attack", "rs", "--scene", "s.json", "--set", "budgit=3"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("budgit") && e.contains("`budget`") && e.contains("`learning_rate`"), "{e}");

    fs::write(dir.path().join("run.toml"), "[census]\nn = 3\nsamples = 4\n").unwrap();
    let o = run(dir.path(), &["census", "-c", "run.toml", "--scene", "s.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("samples"), "{}", stderr(&o));

    let o = run(dir.path(), &["attack", "rs", "--bogus-flag"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fdg_defaults_and_flags() {
    let (dir, _) = workspace();
    let args = [
        "attack", "fdg", "--scene", "s.json", "--target", "654", "--steps", "2", "--levels", "2",
        "--samples-per-level", "1", "--out", "fdg",
    ];
    let o = run(dir.path(), &args, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = stdout_json(&o);
    assert_eq!(v["summary"]["evaluations"], 2 + 2 * 19);
    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("fdg/manifest.json")).unwrap()).unwrap();
    let cfg = &m["config"]["task"]["attack"];
    assert_eq!(cfg["learning_rate"], 0.001);
    assert_eq!(cfg["fd_step"], 0.001);
    assert_eq!(cfg["target_class"], 654);
    assert_eq!(m["backend"]["num_classes"], 1000);

    let explicit = [&args[..12], &["--lr", "0.001", "--h", "0.001", "--out", "fdg2"]].concat();
    let o = run(dir.path(), &explicit, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("fdg/records.jsonl")).unwrap(),
        fs::read(dir.path().join("fdg2/records.jsonl")).unwrap()
    );
}

#[test]
fn replay_and_sequential_runs_match_byte_for_byte() {
    let (dir, _) = workspace();
    let o = run(dir.path(), &["census", "--scene", "s.json", "--n", "20", "--seed", "9", "--out", "a"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(dir.path(), &["replay", "a/manifest.json", "--out", "b"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(
        dir.path(),
        &["census", "--scene", "s.json", "--n", "20", "--seed", "9", "--sequential", "--out", "c"],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(dir.path().join("a/records.jsonl")).unwrap();
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 60);
    assert_eq!(a, fs::read(dir.path().join("b/records.jsonl")).unwrap());
    assert_eq!(a, fs::read(dir.path().join("c/records.jsonl")).unwrap());
    assert!(dir.path().join("a/census.csv").exists());
}

#[test]
fn toml_config_drives_a_run() {
    let (dir, _) = workspace();
    fs::write(
        dir.path().join("run.toml"),
        r#"
[scene]
mesh = { builtin = "cube" }
image_size = [16, 16]
true_class = 0

[backend.kind.synthetic]
seed = 1
num_classes = 4
regions = [{ class = 2, center = [0, 0, -5, 0, 0, 0], radii = { z = 20 }, amplitude = 9 }]

[landscape]
resolution = [4, 5]
"#,
    )
    .unwrap();
    let o = run(dir.path(), &["landscape", "-c", "run.toml", "--out", "l"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = stdout_json(&o);
    assert_eq!(v["summary"]["cells"], 20);
    assert_eq!(v["summary"]["correct_cells"], 0);
    assert!(dir.path().join("l/heatmap.png").exists());
    let lines = fs::read_to_string(dir.path().join("l/records.jsonl")).unwrap();
    assert!(lines.lines().all(|l| l.contains("\"label\":2")));
}

#[test]
fn stdio_backend_endpoint_via_environment() {
    let (dir, _) = workspace();
    let endpoint = format!("stdio:{BIN} echo-server --stdio --classes 4 --embedding-dim 8");
    let env = [("POSEHUNT_BACKEND_ENDPOINT", endpoint.as_str())];
    let o = run(dir.path(), &["attack", "rs", "--scene", "s.json", "--budget", "6", "--out", "r"], &env);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&fs::read(dir.path().join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["backend"]["num_classes"], 4);
    assert_eq!(m["summary"]["records"], 6);

    let o = run(dir.path(), &["conformance", &endpoint], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn unreachable_backend_is_a_runtime_failure() {
    let (dir, _) = workspace();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let env = [("POSEHUNT_BACKEND_ENDPOINT", addr.as_str())];
    let o = run(dir.path(), &["attack", "rs", "--scene", "s.json", "--budget", "1"], &env);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains(&addr), "{}", stderr(&o));
}
