use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{Handshake, Op, Request, Response};
use super::{check_class_table, Classifier, ClassifierError, ClassifierResponse};
use crate::renderer::RenderOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// `host:port`, `tcp://host:port`, or `stdio:<command line>`.
    pub endpoint: String,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_pool_size() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    3
}

impl ExternalConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            pool_size: default_pool_size(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio { program: String, args: Vec<String> },
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self, ClassifierError> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| {
                ClassifierError::InvalidConfig("stdio endpoint without a command".into())
            })?;
            return Ok(Endpoint::Stdio {
                program,
                args: parts.collect(),
            });
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.is_empty() || !addr.contains(':') {
            return Err(ClassifierError::InvalidConfig(format!(
                "endpoint '{s}' is neither host:port nor stdio:<command>"
            )));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

pub(super) struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    pub(super) fn open(endpoint: &Endpoint, timeout: Duration) -> Result<(Self, Handshake), String> {
        let mut conn = match endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| format!("cannot resolve {addr}: {e}"))?
                    .next()
                    .ok_or_else(|| format!("{addr} resolves to no address"))?;
                let stream =
                    TcpStream::connect_timeout(&sock, timeout).map_err(|e| e.to_string())?;
                stream
                    .set_read_timeout(Some(timeout))
                    .map_err(|e| e.to_string())?;
                let _ = stream.set_nodelay(true);
                let read_half = stream.try_clone().map_err(|e| e.to_string())?;
                Connection {
                    reader: BufReader::new(Box::new(read_half)),
                    writer: Box::new(stream),
                    child: None,
                }
            }
            Endpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| format!("cannot spawn {program}: {e}"))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Connection {
                    reader: BufReader::new(Box::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                }
            }
        };
        let line = conn.read_line()?;
        let hs: Handshake =
            serde_json::from_str(&line).map_err(|e| format!("malformed handshake: {e}"))?;
        Ok((conn, hs))
    }

    fn read_line(&mut self) -> Result<String, String> {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("connection closed by backend".into());
        }
        Ok(line)
    }

    pub(super) fn round_trip(&mut self, request: &[u8]) -> Result<String, String> {
        self.writer.write_all(request).map_err(|e| e.to_string())?;
        self.writer.flush().map_err(|e| e.to_string())?;
        self.read_line()
    }
}

struct Pool {
    idle: Vec<Connection>,
    open: usize,
}

/// Client for a protocol-v1 model server with a bounded connection pool.
/// Each connection carries at most one request at a time.
pub struct ExternalClassifier {
    config: ExternalConfig,
    endpoint: Endpoint,
    info: Handshake,
    input_size: [u32; 2],
    pool: Mutex<Pool>,
    available: Condvar,
    next_id: AtomicU64,
}

impl std::fmt::Debug for ExternalClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalClassifier")
            .field("endpoint", &self.config.endpoint)
            .field("num_classes", &self.info.num_classes)
            .finish()
    }
}

impl ExternalClassifier {
    /// Connects, reads and validates the handshake.
    pub fn connect(
        config: ExternalConfig,
        input_size: [u32; 2],
        class_table: Option<Vec<String>>,
    ) -> Result<Self, ClassifierError> {
        let endpoint = Endpoint::parse(&config.endpoint)?;
        let timeout = Duration::from_millis(config.timeout_ms.max(1));
        let attempts = config.retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            match Connection::open(&endpoint, timeout) {
                Ok((conn, mut info)) => {
                    info.validate().map_err(ClassifierError::Protocol)?;
                    if let Some(table) = check_class_table(class_table, info.num_classes)? {
                        info.labels = table;
                    }
                    return Ok(Self {
                        pool: Mutex::new(Pool {
                            idle: vec![conn],
                            open: 1,
                        }),
                        available: Condvar::new(),
                        next_id: AtomicU64::new(0),
                        input_size,
                        info,
                        endpoint,
                        config,
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(ClassifierError::Transport {
            endpoint: config.endpoint,
            attempts,
            message: last,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    fn checkout(&self) -> Result<Connection, String> {
        let mut pool = self.pool.lock().expect("pool lock");
        loop {
            if let Some(conn) = pool.idle.pop() {
                return Ok(conn);
            }
            if pool.open < self.config.pool_size.max(1) {
                pool.open += 1;
                drop(pool);
                let timeout = Duration::from_millis(self.config.timeout_ms.max(1));
                return match Connection::open(&self.endpoint, timeout) {
                    Ok((conn, hs)) if hs.num_classes == self.info.num_classes => Ok(conn),
                    Ok((_, hs)) => {
                        self.release(None);
                        Err(format!(
                            "new connection advertised {} classes, expected {}",
                            hs.num_classes, self.info.num_classes
                        ))
                    }
                    Err(e) => {
                        self.release(None);
                        Err(e)
                    }
                };
            }
            pool = self.available.wait(pool).expect("pool lock");
        }
    }

    /// Returns a connection to the pool, or forgets a broken one.
    fn release(&self, conn: Option<Connection>) {
        let mut pool = self.pool.lock().expect("pool lock");
        match conn {
            Some(c) => pool.idle.push(c),
            None => pool.open -= 1,
        }
        self.available.notify_one();
    }

    fn call(&self, op: Op, image: &RenderOutput) -> Result<(Response, Duration), ClassifierError> {
        let (w, h, rgb) = prepare_pixels(image, self.input_size);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed).to_string();
        let mut line = serde_json::to_vec(&Request::new(id.clone(), op, w, h, &rgb))
            .map_err(|e| ClassifierError::Protocol(e.to_string()))?;
        line.push(b'\n');

        let attempts = self.config.retries.max(1);
        let mut last = String::new();
        for _ in 0..attempts {
            let mut conn = match self.checkout() {
                Ok(c) => c,
                Err(e) => {
                    last = e;
                    continue;
                }
            };
            let start = Instant::now();
            match conn.round_trip(&line) {
                Ok(reply) => {
                    let latency = start.elapsed();
                    let parsed = Response::parse(reply.trim_end());
                    match parsed {
                        Ok(resp) if resp.id == id => {
                            self.release(Some(conn));
                            if let Some(message) = resp.error {
                                return Err(ClassifierError::Remote { id, message });
                            }
                            return Ok((resp, latency));
                        }
                        Ok(resp) => {
                            self.release(None);
                            return Err(ClassifierError::Protocol(format!(
                                "response id {} does not match request id {id}",
                                resp.id
                            )));
                        }
                        Err(e) => {
                            // the stream may be out of sync; drop it
                            self.release(None);
                            return Err(ClassifierError::Protocol(e));
                        }
                    }
                }
                Err(e) => {
                    self.release(None);
                    last = e;
                }
            }
        }
        Err(ClassifierError::Transport {
            endpoint: self.config.endpoint.clone(),
            attempts,
            message: last,
        })
    }
}

/// 8-bit RGB for the wire, bilinearly resized when the render size differs
/// from the backend input size `[H, W]`.
pub(crate) fn prepare_pixels(image: &RenderOutput, input_size: [u32; 2]) -> (u32, u32, Vec<u8>) {
    let [h, w] = input_size;
    if image.width() == w && image.height() == h {
        return (w, h, image.to_rgb8());
    }
    let resized =
        image::imageops::resize(&image.to_image(), w, h, image::imageops::FilterType::Triangle);
    (w, h, resized.into_raw())
}

impl Classifier for ExternalClassifier {
    fn info(&self) -> &Handshake {
        &self.info
    }

    fn classify(&self, image: &RenderOutput) -> Result<ClassifierResponse, ClassifierError> {
        let (resp, latency) = self.call(Op::Classify, image)?;
        let probs = resp
            .probs
            .ok_or_else(|| ClassifierError::Protocol("classify reply without probs".into()))?;
        if probs.len() != self.info.num_classes {
            return Err(ClassifierError::Protocol(format!(
                "{} probabilities for {} classes",
                probs.len(),
                self.info.num_classes
            )));
        }
        ClassifierResponse::from_probs(probs, latency)
    }

    fn embed(&self, image: &RenderOutput) -> Result<Vec<f64>, ClassifierError> {
        if !self.info.supports_embedding {
            return Err(ClassifierError::Unsupported("embeddings"));
        }
        let (resp, _) = self.call(Op::Embed, image)?;
        let embedding = resp
            .embedding
            .ok_or_else(|| ClassifierError::Protocol("embed reply without embedding".into()))?;
        if embedding.is_empty() || embedding.iter().any(|v| !v.is_finite()) {
            return Err(ClassifierError::Protocol(
                "embedding must be a non-empty finite vector".into(),
            ));
        }
        Ok(embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_forms() {
        assert_eq!(
            Endpoint::parse("tcp://127.0.0.1:9").unwrap(),
            Endpoint::Tcp("127.0.0.1:9".into())
        );
        assert_eq!(
            Endpoint::parse("localhost:7000").unwrap(),
            Endpoint::Tcp("localhost:7000".into())
        );
        assert_eq!(
            Endpoint::parse("stdio:python3 adapter.py --echo").unwrap(),
            Endpoint::Stdio {
                program: "python3".into(),
                args: vec!["adapter.py".into(), "--echo".into()]
            }
        );
        assert!(Endpoint::parse("nowhere").is_err());
        assert!(Endpoint::parse("stdio:").is_err());
    }

    #[test]
    fn unreachable_backend_reports_attempts() {
        // Reserve a port, then close it so nothing listens there.
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut cfg = ExternalConfig::new(format!("127.0.0.1:{port}"));
        cfg.retries = 2;
        cfg.timeout_ms = 200;
        match ExternalClassifier::connect(cfg, [16, 16], None).unwrap_err() {
            ClassifierError::Transport { attempts, endpoint, .. } => {
                assert_eq!(attempts, 2);
                assert!(endpoint.ends_with(&port.to_string()));
            }
            other => panic!("{other}"),
        }
    }
}
