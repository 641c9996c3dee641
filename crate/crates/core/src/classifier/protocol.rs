//! Protocol v1: newline-delimited JSON between the engine and a model server.
//!
//! The server speaks first with a [`Handshake`]. Each request carries one
//! image as base64 of `H × W × 3` row-major 8-bit RGB; each response echoes
//! the request id and carries `probs`, `embedding` or `error`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;
/// Largest request line a server accepts (a 4096² image fits comfortably).
pub const MAX_LINE_BYTES: usize = 96 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub num_classes: usize,
    pub labels: Vec<String>,
    pub supports_embedding: bool,
    /// Free-form server details such as preprocessing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<Value>,
}

impl Handshake {
    pub fn validate(&self) -> Result<(), String> {
        if self.protocol != PROTOCOL_VERSION {
            return Err(format!(
                "unsupported protocol version {} (expected {PROTOCOL_VERSION})",
                self.protocol
            ));
        }
        if self.num_classes < 2 {
            return Err(format!("num_classes {} < 2", self.num_classes));
        }
        if self.labels.len() != self.num_classes {
            return Err(format!(
                "{} labels for {} classes",
                self.labels.len(),
                self.num_classes
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Classify,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub op: Op,
    pub width: u32,
    pub height: u32,
    pub pixels_b64: String,
}

impl Request {
    pub fn new(id: impl Into<String>, op: Op, width: u32, height: u32, rgb: &[u8]) -> Self {
        Self {
            id: id.into(),
            op,
            width,
            height,
            pixels_b64: B64.encode(rgb),
        }
    }

    /// Decodes and size-checks the pixel payload.
    pub fn decode_pixels(&self) -> Result<Vec<u8>, String> {
        let bytes = B64
            .decode(self.pixels_b64.as_bytes())
            .map_err(|e| format!("invalid base64 pixel payload: {e}"))?;
        let expected = self.width as usize * self.height as usize * 3;
        if bytes.len() != expected {
            return Err(format!(
                "pixel payload has {} bytes, expected {expected} for {}x{} RGB",
                bytes.len(),
                self.width,
                self.height
            ));
        }
        Ok(bytes)
    }
}

/// One response line. Exactly one of `probs`, `embedding`, `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Response {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn probs(id: impl Into<String>, probs: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            probs: Some(probs),
            ..Default::default()
        }
    }

    pub fn embedding(id: impl Into<String>, embedding: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            embedding: Some(embedding),
            ..Default::default()
        }
    }

    pub fn error(id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            error: Some(error.into()),
            ..Default::default()
        }
    }

    /// Parses a response line, insisting on exactly one payload field.
    pub fn parse(line: &str) -> Result<Self, String> {
        let resp: Response =
            serde_json::from_str(line).map_err(|e| format!("malformed response: {e}"))?;
        let n = [
            resp.probs.is_some(),
            resp.embedding.is_some(),
            resp.error.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if n != 1 {
            return Err(format!(
                "response {} must carry exactly one of probs/embedding/error",
                resp.id
            ));
        }
        Ok(resp)
    }
}

/// Model-side behaviour behind a protocol server.
pub trait ProtocolHandler: Send + Sync {
    fn handshake(&self) -> Handshake;
    fn classify(&self, width: u32, height: u32, rgb: &[u8]) -> Result<Vec<f64>, String>;
    fn embed(&self, width: u32, height: u32, rgb: &[u8]) -> Result<Vec<f64>, String>;
}

/// Handles one request line. Never panics on bad input: every failure
/// becomes an error response, with the request id when it can be recovered.
pub fn handle_line<H: ProtocolHandler + ?Sized>(handler: &H, line: &str) -> Response {
    if line.len() > MAX_LINE_BYTES {
        return Response::error("", format!("request exceeds {MAX_LINE_BYTES} bytes"));
    }
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return Response::error("", format!("malformed JSON: {e}")),
    };
    let id = value
        .get("id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let req: Request = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return Response::error(id, format!("invalid request: {e}")),
    };
    let rgb = match req.decode_pixels() {
        Ok(b) => b,
        Err(e) => return Response::error(id, e),
    };
    let result = match req.op {
        Op::Classify => handler
            .classify(req.width, req.height, &rgb)
            .map(|p| Response::probs(id.clone(), p)),
        Op::Embed => handler
            .embed(req.width, req.height, &rgb)
            .map(|e| Response::embedding(id.clone(), e)),
    };
    result.unwrap_or_else(|e| Response::error(id, e))
}

/// Runs the handshake and request loop over one byte stream until EOF.
pub fn serve_connection<H, R, W>(handler: &H, reader: R, mut writer: W) -> io::Result<()>
where
    H: ProtocolHandler + ?Sized,
    R: BufRead,
    W: Write,
{
    write_json_line(&mut writer, &handler.handshake())?;
    let mut reader = reader;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = Read::take(&mut reader, MAX_LINE_BYTES as u64 + 1).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        let response = if buf.len() > MAX_LINE_BYTES && buf.last() != Some(&b'\n') {
            // drain the rest of the oversized line
            let mut sink = Vec::new();
            reader.read_until(b'\n', &mut sink)?;
            Response::error("", format!("request exceeds {MAX_LINE_BYTES} bytes"))
        } else {
            match std::str::from_utf8(&buf) {
                Ok(s) if s.trim().is_empty() => continue,
                Ok(s) => handle_line(handler, s.trim_end()),
                Err(_) => Response::error("", "request is not valid UTF-8"),
            }
        };
        write_json_line(&mut writer, &response)?;
    }
}

fn write_json_line<W: Write, T: Serialize>(writer: &mut W, value: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    writer.write_all(&line)?;
    writer.flush()
}

/// Accepts connections forever, one thread per connection.
pub fn serve_tcp<H: ProtocolHandler + 'static>(handler: Arc<H>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let handler = handler.clone();
        thread::spawn(move || {
            let _ = serve_stream(&*handler, stream);
        });
    }
    Ok(())
}

fn serve_stream<H: ProtocolHandler + ?Sized>(handler: &H, stream: TcpStream) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_connection(handler, reader, stream)
}

/// Binds an ephemeral local port and serves `handler` on a background thread.
pub fn spawn_local<H: ProtocolHandler + 'static>(handler: H) -> io::Result<std::net::SocketAddr> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handler = Arc::new(handler);
    thread::spawn(move || serve_tcp(handler, listener));
    Ok(addr)
}

/// Conformance fixture: returns fixed probabilities and a fixed embedding
/// for every well-formed image.
#[derive(Debug, Clone)]
pub struct EchoHandler {
    pub probs: Vec<f64>,
    pub labels: Vec<String>,
    pub embedding: Option<Vec<f64>>,
}

impl EchoHandler {
    pub fn new(probs: Vec<f64>) -> Self {
        let labels = (0..probs.len()).map(|i| format!("class_{i}")).collect();
        Self {
            probs,
            labels,
            embedding: None,
        }
    }

    /// Adds a deterministic embedding of length `dim`.
    pub fn with_embedding(mut self, dim: usize) -> Self {
        self.embedding = Some(fixture_embedding(dim));
        self
    }
}

/// Deterministic vector used by echo fixtures: `sin(i) / (i + 1)`.
pub fn fixture_embedding(dim: usize) -> Vec<f64> {
    (0..dim).map(|i| (i as f64).sin() / (i as f64 + 1.0)).collect()
}

impl ProtocolHandler for EchoHandler {
    fn handshake(&self) -> Handshake {
        Handshake {
            protocol: PROTOCOL_VERSION,
            num_classes: self.probs.len(),
            labels: self.labels.clone(),
            supports_embedding: self.embedding.is_some(),
            metadata: Some(serde_json::json!({ "mode": "echo" })),
        }
    }

    fn classify(&self, _w: u32, _h: u32, _rgb: &[u8]) -> Result<Vec<f64>, String> {
        Ok(self.probs.clone())
    }

    fn embed(&self, _w: u32, _h: u32, _rgb: &[u8]) -> Result<Vec<f64>, String> {
        self.embedding
            .clone()
            .ok_or_else(|| "embedding not supported".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo() -> EchoHandler {
        EchoHandler::new(vec![0.7, 0.3]).with_embedding(8)
    }

    fn request(op: &str, w: u32, h: u32, bytes: usize) -> String {
        serde_json::json!({
            "id": "r1", "op": op, "width": w, "height": h,
            "pixels_b64": B64.encode(vec![7u8; bytes]),
        })
        .to_string()
    }

    #[test]
    fn classify_and_embed_round_trip() {
        let r = handle_line(&echo(), &request("classify", 2, 2, 12));
        assert_eq!(r, Response::probs("r1", vec![0.7, 0.3]));
        let r = handle_line(&echo(), &request("embed", 2, 2, 12));
        assert_eq!(r.embedding.unwrap().len(), 8);
    }

    #[test]
    fn error_paths_keep_the_id() {
        let r = handle_line(&echo(), &request("classify", 2, 2, 11));
        assert_eq!(r.id, "r1");
        assert!(r.error.unwrap().contains("expected 12"));
        let r = handle_line(&echo(), &request("segment", 2, 2, 12));
        assert_eq!(r.id, "r1");
        assert!(r.error.is_some());
        let r = handle_line(&echo(), "{\"id\": \"x\", \"op\": \"classify\", \"width\": 1, \"height\": 1, \"pixels_b64\": \"!!\"}");
        assert_eq!(r.id, "x");
        assert!(r.error.unwrap().contains("base64"));
        let r = handle_line(&echo(), "{not json");
        assert_eq!(r.id, "");
        assert!(r.error.is_some());
        let r = handle_line(&EchoHandler::new(vec![0.5, 0.5]), &request("embed", 1, 1, 3));
        assert!(r.error.is_some());
    }

    #[test]
    fn connection_loop_answers_every_line() {
        let input = format!("{}\n\n{{bad\n{}\n", request("classify", 1, 1, 3), request("embed", 1, 1, 3));
        let mut out = Vec::new();
        serve_connection(&echo(), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 4);
        let hs: Handshake = serde_json::from_str(lines[0]).unwrap();
        assert!(hs.validate().is_ok());
        assert!(Response::parse(lines[1]).unwrap().probs.is_some());
        assert!(Response::parse(lines[2]).unwrap().error.is_some());
        assert!(Response::parse(lines[3]).unwrap().embedding.is_some());
    }

    #[test]
    fn response_parse_requires_one_payload() {
        assert!(Response::parse("{\"id\":\"a\"}").is_err());
        assert!(Response::parse("{\"id\":\"a\",\"probs\":[1.0],\"error\":\"x\"}").is_err());
        assert!(Response::parse("[1,2]").is_err());
    }

    #[test]
    fn handshake_validation() {
        let mut hs = echo().handshake();
        assert!(hs.validate().is_ok());
        hs.protocol = 2;
        assert!(hs.validate().is_err());
        hs.protocol = 1;
        hs.labels.pop();
        assert!(hs.validate().is_err());
    }
}
