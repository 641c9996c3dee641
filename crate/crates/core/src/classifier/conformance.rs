//! Protocol-v1 conformance suite, runnable against any endpoint.
//!
//! Checks the handshake shape, id echo, probability and embedding payloads,
//! determinism, and that malformed requests produce error responses while
//! the connection stays usable.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;
use serde_json::json;

use super::client::{Connection, Endpoint};
use super::protocol::{Handshake, Response};
use super::{ClassifierError, PROB_SUM_TOLERANCE};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub endpoint: String,
    pub handshake: Option<Handshake>,
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }
}

struct Probe {
    conn: Connection,
    counter: u32,
}

impl Probe {
    fn send(&mut self, line: String) -> Result<Response, String> {
        let mut bytes = line.into_bytes();
        bytes.push(b'\n');
        let reply = self.conn.round_trip(&bytes)?;
        Response::parse(reply.trim_end())
    }

    fn image_request(&mut self, op: &str, width: u32, height: u32, bytes: usize) -> (String, String) {
        self.counter += 1;
        let id = format!("conf-{}", self.counter);
        let pixels: Vec<u8> = (0..bytes).map(|i| (i * 37 % 251) as u8).collect();
        let line = json!({
            "id": id, "op": op, "width": width, "height": height,
            "pixels_b64": B64.encode(pixels),
        })
        .to_string();
        (id, line)
    }
}

/// Runs every check; transport failures are reported as failed checks.
pub fn run(endpoint: &str, timeout: Duration) -> Result<ConformanceReport, ClassifierError> {
    let parsed = Endpoint::parse(endpoint)?;
    let mut report = ConformanceReport {
        endpoint: endpoint.to_string(),
        handshake: None,
        checks: Vec::new(),
    };
    let push = |report: &mut ConformanceReport, name, result: Result<(), String>| {
        report.checks.push(Check {
            name,
            passed: result.is_ok(),
            detail: result.err().unwrap_or_default(),
        })
    };

    let (conn, hs) = match Connection::open(&parsed, timeout) {
        Ok(x) => x,
        Err(e) => {
            push(&mut report, "handshake", Err(e));
            return Ok(report);
        }
    };
    push(&mut report, "handshake", hs.validate());
    let k = hs.num_classes;
    let supports_embedding = hs.supports_embedding;
    report.handshake = Some(hs);
    let mut probe = Probe { conn, counter: 0 };

    let (w, h) = (8u32, 6u32);
    let n = (w * h * 3) as usize;

    let mut first_probs = None;
    let (id, line) = probe.image_request("classify", w, h, n);
    let result = probe.send(line).and_then(|r| {
        if r.id != id {
            return Err(format!("id {} not echoed (got {})", id, r.id));
        }
        let probs = r.probs.ok_or("no probs in classify reply")?;
        if probs.len() != k {
            return Err(format!("{} probs for {k} classes", probs.len()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("probability outside [0, 1]".into());
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(format!("probs sum to {sum}"));
        }
        first_probs = Some(probs);
        Ok(())
    });
    push(&mut report, "classify", result);

    let (_, line) = probe.image_request("classify", w, h, n);
    let result = probe.send(line).and_then(|r| match (r.probs, &first_probs) {
        (Some(p), Some(first)) if &p == first => Ok(()),
        (Some(_), Some(_)) => Err("identical request produced different probs".into()),
        _ => Err("classify failed".into()),
    });
    push(&mut report, "classify_deterministic", result);

    let (id, line) = probe.image_request("embed", w, h, n);
    let result = probe.send(line).and_then(|r| {
        if r.id != id {
            return Err(format!("id {id} not echoed"));
        }
        match (supports_embedding, r.embedding, r.error) {
            (true, Some(e), _) if !e.is_empty() && e.iter().all(|v| v.is_finite()) => Ok(()),
            (true, _, _) => Err("advertised embeddings but reply had none".into()),
            (false, None, Some(_)) => Ok(()),
            (false, _, _) => Err("embed without support must return an error".into()),
        }
    });
    push(&mut report, "embed", result);

    let expect_error = |resp: Result<Response, String>, id: &str| -> Result<(), String> {
        let r = resp?;
        if r.error.is_none() {
            return Err("expected an error response".into());
        }
        if r.id != id {
            return Err(format!("error response id '{}' should be '{id}'", r.id));
        }
        Ok(())
    };

    let result = expect_error(probe.send("{this is not json".into()), "");
    push(&mut report, "error_malformed_json", result);

    let (id, line) = probe.image_request("classify", w, h, n - 1);
    let result = expect_error(probe.send(line), &id);
    push(&mut report, "error_pixel_length", result);

    let (id, line) = probe.image_request("segment", w, h, n);
    let result = expect_error(probe.send(line), &id);
    push(&mut report, "error_unknown_op", result);

    let line = json!({"id": "conf-b64", "op": "classify", "width": 1, "height": 1, "pixels_b64": "@@@@"})
        .to_string();
    let result = expect_error(probe.send(line), "conf-b64");
    push(&mut report, "error_bad_base64", result);

    let result = expect_error(probe.send(json!({"id": "conf-missing"}).to_string()), "conf-missing");
    push(&mut report, "error_missing_fields", result);

    // the connection must still serve after all the errors
    let (id, line) = probe.image_request("classify", w, h, n);
    let result = probe.send(line).and_then(|r| {
        if r.id == id && r.probs.is_some() {
            Ok(())
        } else {
            Err("connection unusable after error responses".into())
        }
    });
    push(&mut report, "survives_errors", result);

    Ok(report)
}
