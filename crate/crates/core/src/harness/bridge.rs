//! Client for external scorers speaking line-delimited JSON.
//!
//! Each request is one line `{"id": n, "op": ..., "payload": {...}}` and
//! each response one line `{"id": n, "result": ...}` or
//! `{"id": n, "error": {"code": ..., "message": ...}}`. Supported ops are
//! `info`, `score` and `judge_pair`. Up to `window` requests are written
//! before responses are read, and responses may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{BridgeError, Result};
use crate::scorer::{PairwiseJudgment, Scorer, ScorerIdentity};

pub const ENDPOINT_ENV: &str = "MASKCERT_BRIDGE";

/// Tolerance on `p0 + p1 = 1` for pairwise responses.
const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Tcp(String),
    Exec { program: String, args: Vec<String> },
}

impl Endpoint {
    /// Parses `tcp://host:port` or `exec:program arg...`.
    pub fn parse(spec: &str) -> Result<Self, BridgeError> {
        if let Some(addr) = spec.strip_prefix("tcp://") {
            if addr.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                return Err(BridgeError::Endpoint(spec.to_string()));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = spec.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| BridgeError::Endpoint(spec.to_string()))?;
            return Ok(Endpoint::Exec {
                program,
                args: parts.collect(),
            });
        }
        Err(BridgeError::Endpoint(spec.to_string()))
    }

    /// The endpoint from the environment if set, otherwise `configured`.
    pub fn resolve(configured: Option<&str>) -> Option<String> {
        std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .or_else(|| configured.map(str::to_string))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeOptions {
    pub timeout_ms: u64,
    /// Maximum requests in flight per connection.
    pub window: usize,
    pub docs_per_request: usize,
    pub max_connections: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        BridgeOptions {
            timeout_ms: 30_000,
            window: 64,
            docs_per_request: 8,
            max_connections: std::thread::available_parallelism().map_or(4, |n| n.get()),
        }
    }
}

/// What the server reported in the `info` handshake.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeInfo {
    pub name: String,
    pub version: String,
    pub max_doc_tokens: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    op: &'a str,
    payload: &'a Value,
}

struct Connection {
    writer: Option<Box<dyn Write + Send>>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, BridgeError> {
        let transport = |e: std::io::Error| BridgeError::Transport(e.to_string());
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                let read_half = stream.try_clone().map_err(transport)?;
                (Box::new(BufReader::new(read_half)), Box::new(stream), None)
            }
            Endpoint::Exec { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| BridgeError::Transport(format!("spawn {program}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
        };
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Connection {
            writer: Some(writer),
            lines,
            child,
        })
    }

    /// Sends every request, keeping at most `window` in flight, and returns
    /// the results in request order. Any failure poisons the connection.
    fn exchange(
        &mut self,
        requests: &[(u64, &str, Value)],
        window: usize,
        timeout: Duration,
    ) -> Result<Vec<Value>, BridgeError> {
        let mut results: HashMap<u64, Value> = HashMap::with_capacity(requests.len());
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| BridgeError::Transport("connection closed".into()))?;
        for chunk in requests.chunks(window.max(1)) {
            let mut buf = Vec::new();
            for (id, op, payload) in chunk {
                serde_json::to_writer(&mut buf, &Request { id: *id, op, payload })
                    .map_err(|e| BridgeError::Malformed(e.to_string()))?;
                buf.push(b'\n');
            }
            writer
                .write_all(&buf)
                .and_then(|_| writer.flush())
                .map_err(|e| BridgeError::Transport(e.to_string()))?;

            let pending: Vec<u64> = chunk.iter().map(|(id, _, _)| *id).collect();
            let deadline = Instant::now() + timeout;
            let mut outstanding = pending.len();
            while outstanding > 0 {
                let wait = deadline.saturating_duration_since(Instant::now());
                let first_missing = || *pending.iter().find(|id| !results.contains_key(id)).unwrap();
                let line = match self.lines.recv_timeout(wait) {
                    Ok(Ok(line)) => line,
                    Ok(Err(e)) => return Err(BridgeError::Transport(e.to_string())),
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(BridgeError::Timeout {
                            id: first_missing(),
                            millis: timeout.as_millis() as u64,
                        })
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(BridgeError::Transport("connection closed by scorer".into()))
                    }
                };
                let (id, result) = parse_response(&line)?;
                if !pending.contains(&id) || results.contains_key(&id) {
                    return Err(BridgeError::Malformed(format!("unexpected response id {id}")));
                }
                results.insert(id, result?);
                outstanding -= 1;
            }
        }
        Ok(requests
            .iter()
            .map(|(id, _, _)| results.remove(id).expect("every id answered"))
            .collect())
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(1);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Splits a response line into its id and either the result or the
/// remote error.
fn parse_response(line: &str) -> Result<(u64, Result<Value, BridgeError>), BridgeError> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| BridgeError::Malformed(format!("{e}: {}", line.trim())))?;
    let id = value
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| BridgeError::Malformed(format!("response without id: {}", line.trim())))?;
    if let Some(err) = value.get("error").filter(|e| !e.is_null()) {
        let field = |k: &str| err.get(k).and_then(Value::as_str).unwrap_or("").to_string();
        return Ok((
            id,
            Err(BridgeError::RemoteError {
                code: field("code"),
                message: field("message"),
            }),
        ));
    }
    match value.get("result") {
        Some(result) => Ok((id, Ok(result.clone()))),
        None => Err(BridgeError::Malformed(format!("response {id} has neither result nor error"))),
    }
}

fn unit_interval(v: &Value, what: &str) -> Result<f64, BridgeError> {
    let x = v
        .as_f64()
        .ok_or_else(|| BridgeError::Malformed(format!("{what} is not a number")))?;
    if !(0.0..=1.0).contains(&x) {
        return Err(BridgeError::RangeViolation(format!("{what} = {x}")));
    }
    Ok(x)
}

/// A pooled connection to an external scorer.
pub struct BridgeScorer {
    endpoint: Endpoint,
    options: BridgeOptions,
    info: BridgeInfo,
    pool: Mutex<Vec<Connection>>,
    next_id: AtomicU64,
}

impl BridgeScorer {
    /// Connects and performs the `info` handshake.
    pub fn connect(endpoint: Endpoint, options: BridgeOptions) -> Result<Self, BridgeError> {
        let mut conn = Connection::open(&endpoint)?;
        let timeout = Duration::from_millis(options.timeout_ms);
        let reply = conn.exchange(&[(0, "info", json!({}))], 1, timeout)?.remove(0);
        let info: BridgeInfo = serde_json::from_value(reply)
            .map_err(|e| BridgeError::Malformed(format!("info: {e}")))?;
        Ok(BridgeScorer {
            endpoint,
            options,
            info,
            pool: Mutex::new(vec![conn]),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn info(&self) -> &BridgeInfo {
        &self.info
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn call(&self, ops: Vec<(&str, Value)>) -> Result<Vec<Value>, BridgeError> {
        let requests: Vec<(u64, &str, Value)> = ops
            .into_iter()
            .map(|(op, payload)| (self.next_id.fetch_add(1, Ordering::Relaxed), op, payload))
            .collect();
        let pooled = self.pool.lock().expect("bridge pool").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.endpoint)?,
        };
        let timeout = Duration::from_millis(self.options.timeout_ms);
        let out = conn.exchange(&requests, self.options.window, timeout)?;
        let mut pool = self.pool.lock().expect("bridge pool");
        if pool.len() < self.options.max_connections.max(1) {
            pool.push(conn);
        }
        Ok(out)
    }

    fn check_len(&self, doc: &[String]) -> Result<(), BridgeError> {
        if self.info.max_doc_tokens > 0 && doc.len() > self.info.max_doc_tokens {
            return Err(BridgeError::RangeViolation(format!(
                "document of {} tokens exceeds the scorer limit of {}",
                doc.len(),
                self.info.max_doc_tokens
            )));
        }
        Ok(())
    }

    pub fn score_docs(&self, query: &[String], docs: &[Vec<String>]) -> Result<Vec<f64>, BridgeError> {
        for d in docs {
            self.check_len(d)?;
        }
        let per = self.options.docs_per_request.max(1);
        let ops: Vec<(&str, Value)> = docs
            .chunks(per)
            .map(|chunk| ("score", json!({ "query": query, "docs": chunk })))
            .collect();
        let replies = self.call(ops)?;
        let mut scores = Vec::with_capacity(docs.len());
        for (reply, chunk) in replies.iter().zip(docs.chunks(per)) {
            let list = reply
                .get("scores")
                .and_then(Value::as_array)
                .ok_or_else(|| BridgeError::Malformed("score result without `scores`".into()))?;
            if list.len() != chunk.len() {
                return Err(BridgeError::Malformed(format!(
                    "{} scores for {} documents",
                    list.len(),
                    chunk.len()
                )));
            }
            for v in list {
                scores.push(unit_interval(v, "score")?);
            }
        }
        Ok(scores)
    }

    pub fn judge(&self, query: &[String], doc_i: &[String], doc_j: &[String]) -> Result<PairwiseJudgment, BridgeError> {
        self.check_len(doc_i)?;
        self.check_len(doc_j)?;
        let reply = self
            .call(vec![("judge_pair", json!({ "query": query, "docs": [doc_i, doc_j] }))])?
            .remove(0);
        let probs = reply
            .get("probs")
            .and_then(Value::as_array)
            .filter(|p| p.len() == 2)
            .ok_or_else(|| BridgeError::Malformed("judge_pair result needs two `probs`".into()))?;
        let p = [unit_interval(&probs[0], "prob")?, unit_interval(&probs[1], "prob")?];
        if (p[0] + p[1] - 1.0).abs() > PROB_SUM_TOL {
            return Err(BridgeError::RangeViolation(format!("probabilities sum to {}", p[0] + p[1])));
        }
        let tie = p[0] == p[1];
        Ok(PairwiseJudgment {
            probs: p,
            class: u8::from(!tie && p[1] > p[0]),
            tie,
        })
    }
}

impl Scorer for BridgeScorer {
    fn identity(&self) -> ScorerIdentity {
        ScorerIdentity {
            name: self.info.name.clone(),
            version: self.info.version.clone(),
        }
    }

    fn score(&self, query: &[String], doc: &[String]) -> Result<f64> {
        Ok(self.score_docs(query, &[doc.to_vec()])?[0])
    }

    fn score_batch(&self, query: &[String], docs: &[Vec<String>]) -> Result<Vec<f64>> {
        Ok(self.score_docs(query, docs)?)
    }

    fn judge_pair(&self, query: &[String], doc_i: &[String], doc_j: &[String]) -> Result<PairwiseJudgment> {
        Ok(self.judge(query, doc_i, doc_j)?)
    }
}
