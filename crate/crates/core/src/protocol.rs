//! Line-delimited JSON worker protocol.
//!
//! A worker is an external process that reads one JSON request per line on
//! stdin and writes exactly one JSON response per line on stdout, in request
//! order. Every worker answers the handshake `{"op":"hello"}` with
//! `{"name":…}` (segmenters also report `"coverage"`). A reply carrying an
//! `"error"` string reports a request-level failure.
//!
//! [`Transport`] abstracts over a pool of live worker processes
//! ([`WorkerPool`]) and a recorded session ([`ReplayTransport`]).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::segmenter::Coverage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Coverage>,
}

pub fn hello_request() -> Value {
    json!({"op": "hello"})
}

/// Canonical one-line encoding of a message. `serde_json` objects keep keys
/// sorted, so equal values always encode to identical bytes.
pub fn encode_line(value: &Value) -> String {
    serde_json::to_string(value).expect("JSON values always serialize")
}

pub trait Transport: Send + Sync {
    fn handshake(&self) -> &Handshake;

    /// Sends one request and waits for its reply. Replies with an `"error"`
    /// field are turned into [`Error::Backend`].
    fn call(&self, request: &Value) -> Result<Value>;
}

fn check_error_reply(backend: &str, reply: Value) -> Result<Value> {
    match reply.get("error") {
        None | Some(Value::Null) => Ok(reply),
        Some(Value::String(msg)) => Err(Error::backend(backend, format!("worker reported: {msg}"))),
        Some(other) => Err(Error::backend(backend, format!("worker reported: {other}"))),
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(argv: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
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
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    /// Raw exchange. Any error leaves the worker in an unknown state.
    fn exchange(&mut self, backend: &str, request: &Value, timeout: Duration) -> Result<Value> {
        let mut line = encode_line(request);
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::backend(backend, format!("write to worker failed: {e}")))?;
        let reply = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::backend(backend, format!("read from worker failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::backend(backend, format!("no reply within {timeout:?}")))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "closed stdout".into());
                return Err(Error::backend(backend, format!("worker exited ({status})")));
            }
        };
        serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::protocol(backend, format!("malformed reply {:?}: {e}", reply.trim_end())))
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct PoolState {
    idle: Vec<Worker>,
    live: usize,
}

/// Fixed-size pool of worker processes, one in-flight request per process.
pub struct WorkerPool {
    argv: Vec<String>,
    label: String,
    size: usize,
    timeout: Duration,
    handshake: Handshake,
    state: Mutex<PoolState>,
    available: Condvar,
}

impl WorkerPool {
    /// Spawns the first worker and performs the handshake; further workers
    /// are started on demand up to `size`.
    pub fn spawn(command: &str, size: usize, timeout: Duration) -> Result<Self> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Config(format!("cannot parse worker command '{command}'")))?;
        let label = argv[0].clone();
        let size = size.max(1);
        let mut first = Worker::spawn(&argv)
            .map_err(|e| Error::backend(&label, format!("failed to start '{command}': {e}")))?;
        let handshake = Self::handshake_with(&mut first, &label, timeout)?;
        Ok(Self {
            argv,
            label,
            size,
            timeout,
            handshake,
            state: Mutex::new(PoolState {
                idle: vec![first],
                live: 1,
            }),
            available: Condvar::new(),
        })
    }

    fn handshake_with(worker: &mut Worker, label: &str, timeout: Duration) -> Result<Handshake> {
        let reply = check_error_reply(label, worker.exchange(label, &hello_request(), timeout)?)?;
        serde_json::from_value(reply.clone())
            .map_err(|e| Error::protocol(label, format!("bad handshake {reply}: {e}")))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn checkout(&self) -> Result<Worker> {
        let mut state = self.state.lock().unwrap();
        loop {
            if let Some(w) = state.idle.pop() {
                return Ok(w);
            }
            if state.live < self.size {
                state.live += 1;
                drop(state);
                return self.start_worker().inspect_err(|_| {
                    self.state.lock().unwrap().live -= 1;
                    self.available.notify_one();
                });
            }
            state = self.available.wait(state).unwrap();
        }
    }

    fn start_worker(&self) -> Result<Worker> {
        let mut w = Worker::spawn(&self.argv)
            .map_err(|e| Error::backend(&self.label, format!("failed to start worker: {e}")))?;
        let hs = Self::handshake_with(&mut w, &self.label, self.timeout)?;
        if hs != self.handshake {
            w.kill();
            return Err(Error::protocol(
                &self.label,
                format!("worker handshake changed from {:?} to {hs:?}", self.handshake),
            ));
        }
        Ok(w)
    }

    fn checkin(&self, worker: Worker) {
        self.state.lock().unwrap().idle.push(worker);
        self.available.notify_one();
    }

    fn discard(&self, worker: Worker) {
        worker.kill();
        self.state.lock().unwrap().live -= 1;
        self.available.notify_one();
    }
}

impl Transport for WorkerPool {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn call(&self, request: &Value) -> Result<Value> {
        let mut worker = self.checkout()?;
        match worker.exchange(&self.handshake.name, request, self.timeout) {
            Ok(reply) => {
                self.checkin(worker);
                check_error_reply(&self.handshake.name, reply)
            }
            Err(e) => {
                // a timed-out or crashed worker may still emit a stale reply
                log::warn!("discarding worker '{}': {e}", self.label);
                self.discard(worker);
                Err(e)
            }
        }
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        let state = self.state.get_mut().unwrap();
        for w in state.idle.drain(..) {
            w.kill();
        }
    }
}

/// One request/response exchange of a recorded session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: Value,
    pub response: Value,
}

/// Recorded worker session, stored as JSON lines of [`TranscriptEntry`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| {
                    Error::Config(format!("{} line {}: {e}", path.display(), i + 1))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Answers requests from a recorded [`Transcript`], matching on the
/// canonical request line.
pub struct ReplayTransport {
    handshake: Handshake,
    responses: HashMap<String, Value>,
}

impl ReplayTransport {
    pub fn new(transcript: &Transcript) -> Result<Self> {
        let hello = encode_line(&hello_request());
        let mut responses = HashMap::new();
        for entry in &transcript.entries {
            responses.insert(encode_line(&entry.request), entry.response.clone());
        }
        let handshake = responses
            .get(&hello)
            .ok_or_else(|| Error::Config("transcript has no handshake entry".into()))
            .and_then(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| Error::Config(format!("transcript handshake: {e}")))
            })?;
        Ok(Self {
            handshake,
            responses,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(&Transcript::load(path)?)
    }
}

impl Transport for ReplayTransport {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn call(&self, request: &Value) -> Result<Value> {
        let reply = self.responses.get(&encode_line(request)).cloned().ok_or_else(|| {
            Error::protocol(
                &self.handshake.name,
                format!("no recorded reply for {}", encode_line(request)),
            )
        })?;
        check_error_reply(&self.handshake.name, reply)
    }
}

/// Wraps a transport and records every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<TranscriptEntry>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        let log = vec![TranscriptEntry {
            request: hello_request(),
            response: serde_json::to_value(inner.handshake()).expect("serializable"),
        }];
        Self {
            inner,
            log: Mutex::new(log),
        }
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            entries: self.log.lock().unwrap().clone(),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn handshake(&self) -> &Handshake {
        self.inner.handshake()
    }

    fn call(&self, request: &Value) -> Result<Value> {
        let reply = self.inner.call(request)?;
        self.log.lock().unwrap().push(TranscriptEntry {
            request: request.clone(),
            response: reply.clone(),
        });
        Ok(reply)
    }
}

fn spawn_raw(command: &str) -> Result<(Worker, String)> {
    let argv = shlex::split(command)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| Error::Config(format!("cannot parse worker command '{command}'")))?;
    let label = argv[0].clone();
    let worker = Worker::spawn(&argv).map_err(|e| Error::backend(&label, format!("failed to start '{command}': {e}")))?;
    Ok((worker, label))
}

/// Sends `requests` to a fresh worker one at a time and records the raw
/// replies, error replies included.
pub fn record_transcript(command: &str, requests: &[Value], timeout: Duration) -> Result<Transcript> {
    let (mut worker, label) = spawn_raw(command)?;
    let entries = requests
        .iter()
        .map(|r| {
            Ok(TranscriptEntry {
                request: r.clone(),
                response: worker.exchange(&label, r, timeout)?,
            })
        })
        .collect::<Result<Vec<_>>>();
    worker.kill();
    Ok(Transcript { entries: entries? })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConformanceReport {
    pub exchanges: usize,
    pub failures: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks RLE masks in a segment reply against the request's image size.
fn check_masks(request: &Value, response: &Value) -> Option<String> {
    let masks = response.get("masks")?.as_array()?;
    let h = request.get("height")?.as_u64()? as u32;
    let w = request.get("width")?.as_u64()? as u32;
    for m in masks {
        let runs: Vec<u32> = match serde_json::from_value(m.get("rle").cloned().unwrap_or(Value::Null)) {
            Ok(r) => r,
            Err(e) => return Some(format!("mask {m}: {e}")),
        };
        if let Err(e) = crate::mask::BinaryMask::from_runs(h, w, runs) {
            return Some(format!("mask for frame {}: {e}", m.get("index").unwrap_or(&Value::Null)));
        }
    }
    None
}

/// Replays the requests of a golden transcript against a live worker.
///
/// Checks, in order: the first exchange is a valid handshake; each reply is
/// one JSON line canonically equal to the recorded one; segment replies
/// carry valid RLE; and a second worker fed every request at once answers
/// in request order with the same replies.
pub fn run_conformance(command: &str, golden: &Transcript, timeout: Duration) -> Result<ConformanceReport> {
    let mut report = ConformanceReport::default();
    let hello = encode_line(&hello_request());
    match golden.entries.first() {
        Some(e) if encode_line(&e.request) == hello => {
            if let Err(err) = serde_json::from_value::<Handshake>(e.response.clone()) {
                report.failures.push(format!("golden handshake is invalid: {err}"));
            }
        }
        _ => report.failures.push("golden transcript does not start with a handshake".into()),
    }

    let (mut worker, label) = spawn_raw(command)?;
    for (i, entry) in golden.entries.iter().enumerate() {
        report.exchanges += 1;
        match worker.exchange(&label, &entry.request, timeout) {
            Ok(reply) => {
                if encode_line(&reply) != encode_line(&entry.response) {
                    report.failures.push(format!(
                        "exchange {}: expected {} got {}",
                        i + 1,
                        encode_line(&entry.response),
                        encode_line(&reply)
                    ));
                }
                if let Some(problem) = check_masks(&entry.request, &reply) {
                    report.failures.push(format!("exchange {}: {problem}", i + 1));
                }
            }
            Err(e) => {
                report.failures.push(format!("exchange {}: {e}", i + 1));
                break;
            }
        }
    }
    worker.kill();

    // ordering under pipelining
    let (mut worker, label) = spawn_raw(command)?;
    let mut batch = String::new();
    for entry in &golden.entries {
        batch.push_str(&encode_line(&entry.request));
        batch.push('\n');
    }
    let written = worker.stdin.write_all(batch.as_bytes()).and_then(|_| worker.stdin.flush());
    if let Err(e) = written {
        report.failures.push(format!("pipelined write failed: {e}"));
    } else {
        for (i, entry) in golden.entries.iter().enumerate() {
            match worker.lines.recv_timeout(timeout) {
                Ok(Ok(line)) => {
                    let same = serde_json::from_str::<Value>(line.trim_end())
                        .map(|v| encode_line(&v) == encode_line(&entry.response))
                        .unwrap_or(false);
                    if !same {
                        report.failures.push(format!("pipelined reply {} out of order or different: {}", i + 1, line.trim_end()));
                    }
                }
                _ => {
                    report.failures.push(format!("pipelined reply {} missing ({label})", i + 1));
                    break;
                }
            }
        }
    }
    worker.kill();
    Ok(report)
}
