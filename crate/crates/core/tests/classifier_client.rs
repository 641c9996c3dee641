use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use posehunt_core::classifier::conformance;
use posehunt_core::classifier::protocol::{fixture_embedding, spawn_local, EchoHandler};
use posehunt_core::classifier::{
    BackendSpec, Classifier, ClassifierError, ExternalClassifier, ExternalConfig,
};
use posehunt_core::geometry::PoseParams;
use posehunt_core::renderer::{RenderMeta, RenderOutput};

fn gray(w: u32, h: u32) -> RenderOutput {
    let meta = RenderMeta {
        pose: PoseParams::default(),
        scene_hash: String::new(),
    };
    let n = (w * h) as usize;
    RenderOutput::from_pixels(w, h, vec![0.5; n * 3], vec![false; n], meta)
}

#[test]
fn echo_backend_classify_and_embed() {
    let addr = spawn_local(EchoHandler::new(vec![0.7, 0.3]).with_embedding(4096)).unwrap();
    let spec = BackendSpec::external(addr.to_string());
    let backend = spec.connect().unwrap();
    assert_eq!(backend.num_classes(), 2);
    let r = backend.classify(&gray(20, 10)).unwrap();
    assert_eq!(r.top_label, 0);
    assert!((r.confidence() - 0.7).abs() < 1e-15);
    let e = backend.embed(&gray(20, 10)).unwrap();
    assert_eq!(e, fixture_embedding(4096));
}

#[test]
fn pooled_client_serves_concurrent_callers() {
    let addr = spawn_local(EchoHandler::new(vec![0.1, 0.2, 0.7])).unwrap();
    let mut cfg = ExternalConfig::new(format!("tcp://{addr}"));
    cfg.pool_size = 3;
    let client = Arc::new(ExternalClassifier::connect(cfg, [16, 16], None).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let c = Arc::clone(&client);
            thread::spawn(move || {
                for _ in 0..10 {
                    assert_eq!(c.classify(&gray(16, 16)).unwrap().top_label, 2);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn embed_without_support_is_an_error() {
    let addr = spawn_local(EchoHandler::new(vec![0.5, 0.5])).unwrap();
    let backend = BackendSpec::external(addr.to_string()).connect().unwrap();
    assert!(backend.embed(&gray(4, 4)).is_err());
}

#[test]
fn class_table_length_mismatch_rejected() {
    let addr = spawn_local(EchoHandler::new(vec![0.5, 0.5])).unwrap();
    let mut spec = BackendSpec::external(addr.to_string());
    spec.class_table = Some(vec!["a".into(), "b".into(), "c".into()]);
    assert!(matches!(spec.connect(), Err(ClassifierError::ClassTableMismatch(_))));
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            writeln!(
                stream,
                r#"{{"protocol":1,"num_classes":2,"labels":["a","b"],"supports_embedding":false}}"#
            )
            .unwrap();
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 {
                writeln!(stream, "not json at all").unwrap();
                line.clear();
            }
        }
    });
    let mut cfg = ExternalConfig::new(addr.to_string());
    cfg.retries = 1;
    cfg.timeout_ms = 2000;
    let client = ExternalClassifier::connect(cfg, [8, 8], None).unwrap();
    let err = client.classify(&gray(8, 8)).unwrap_err();
    assert!(matches!(err, ClassifierError::Protocol(_)), "{err:?}");
}

#[test]
fn conformance_passes_on_echo_fixture() {
    let addr = spawn_local(EchoHandler::new(vec![0.25, 0.25, 0.5]).with_embedding(16)).unwrap();
    let report = conformance::run(&addr.to_string(), Duration::from_secs(5)).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert!(report.checks.len() >= 10);
}

#[test]
fn conformance_reports_unreachable_endpoint() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let report = conformance::run(&addr.to_string(), Duration::from_millis(500)).unwrap();
    assert!(!report.passed());
}
