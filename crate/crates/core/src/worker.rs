//! Built-in mock worker speaking the line-delimited JSON protocol.
//!
//! Used to exercise the process transport without external dependencies;
//! reachable as `rvos mock-worker`.

use std::io::{BufRead, Write};

use serde_json::{json, Value};

use crate::protocol::encode_line;
use crate::segmenter::Coverage;
use crate::vlc::MOCK_REJECT_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Checker,
    Segmenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fill {
    Empty,
    Full,
}

#[derive(Debug, Clone, clap::Args)]
pub struct MockWorkerOptions {
    #[arg(long, value_enum)]
    pub role: Role,
    /// Name reported in the handshake.
    #[arg(long, default_value = "mock-worker")]
    pub name: String,
    /// Checker answers "no" for expressions containing this token.
    #[arg(long, default_value = MOCK_REJECT_MARKER)]
    pub marker: String,
    /// Checker replies with a full sentence instead of a bare yes/no.
    #[arg(long)]
    pub verbose_answers: bool,
    #[arg(long, value_enum, default_value = "empty")]
    pub fill: Fill,
    /// Segmenter returns masks for every frame.
    #[arg(long)]
    pub full_sequence: bool,
    /// Reply with an error for expressions containing this token.
    #[arg(long)]
    pub fail_marker: Option<String>,
    /// Exit without replying for expressions containing this token.
    #[arg(long)]
    pub crash_marker: Option<String>,
}

impl MockWorkerOptions {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            name: "mock-worker".into(),
            marker: MOCK_REJECT_MARKER.into(),
            verbose_answers: false,
            fill: Fill::Empty,
            full_sequence: false,
            fail_marker: None,
            crash_marker: None,
        }
    }
}

enum Reply {
    Line(Value),
    Crash,
}

fn has(marker: &Option<String>, text: &str) -> bool {
    marker.as_deref().is_some_and(|m| text.contains(m))
}

fn handle(opts: &MockWorkerOptions, request: &Value) -> Reply {
    let op = request.get("op").and_then(Value::as_str).unwrap_or("");
    let expression = request.get("expression").and_then(Value::as_str).unwrap_or("");
    if op != "hello" {
        if has(&opts.crash_marker, expression) {
            return Reply::Crash;
        }
        if has(&opts.fail_marker, expression) {
            return Reply::Line(json!({"error": format!("injected failure for '{expression}'")}));
        }
    }
    Reply::Line(match (op, opts.role) {
        ("hello", Role::Checker) => json!({"name": opts.name}),
        ("hello", Role::Segmenter) => {
            let coverage = if opts.full_sequence {
                Coverage::FullSequence
            } else {
                Coverage::KeyFramesOnly
            };
            json!({"name": opts.name, "coverage": coverage})
        }
        ("check", Role::Checker) => {
            let yes = !expression.contains(&opts.marker);
            let answer = match (yes, opts.verbose_answers) {
                (true, false) => "yes",
                (false, false) => "no",
                (true, true) => "Yes, the described subject appears and acts as stated.",
                (false, true) => "No. The subject described does not appear.",
            };
            json!({"answer": answer})
        }
        ("segment", Role::Segmenter) => segment_reply(opts, request),
        _ => json!({"error": format!("unsupported op '{op}' for {:?} worker", opts.role)}),
    })
}

fn segment_reply(opts: &MockWorkerOptions, request: &Value) -> Value {
    let dim = |k: &str| request.get(k).and_then(Value::as_u64);
    let (Some(h), Some(w)) = (dim("height"), dim("width")) else {
        return json!({"error": "segment request lacks height/width"});
    };
    let area = h * w;
    let rle = match opts.fill {
        Fill::Empty => json!([area]),
        Fill::Full => json!([0, area]),
    };
    let indices: Vec<u64> = if opts.full_sequence {
        let n = request.get("all_frames").and_then(Value::as_array).map_or(0, Vec::len);
        (0..n as u64).collect()
    } else {
        request
            .get("key_frames")
            .and_then(Value::as_array)
            .map(|k| k.iter().filter_map(|f| f.get("index").and_then(Value::as_u64)).collect())
            .unwrap_or_default()
    };
    let masks: Vec<Value> = indices.into_iter().map(|i| json!({"index": i, "rle": rle})).collect();
    json!({"masks": masks})
}

/// Serves requests until EOF. Returns the process exit code.
pub fn serve(opts: &MockWorkerOptions, input: impl BufRead, mut output: impl Write) -> std::io::Result<i32> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(request) => handle(opts, &request),
            Err(e) => Reply::Line(json!({"error": format!("bad request: {e}")})),
        };
        match reply {
            Reply::Line(v) => {
                writeln!(output, "{}", encode_line(&v))?;
                output.flush()?;
            }
            Reply::Crash => return Ok(1),
        }
    }
    Ok(0)
}
