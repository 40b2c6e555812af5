//! Video-language checker: asks a vision-language backend whether the
//! expression's subject and action occur in the video.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::dataset::{ReferringExpression, VideoSequence};
use crate::error::{Error, Result};
use crate::protocol::Transport;
use crate::sampler::{sample, KeyFrameSet, SamplerConfig};

pub const CHECK_INSTRUCTION: &str = "Please check whether the video matches the input text, i.e., whether the subject described in the text exists in the video and whether the subject's action corresponds to the action described in the text. Output yes/no.";

/// Marker token the built-in mock checker rejects.
pub const MOCK_REJECT_MARKER: &str = "ABSENT";

pub fn build_prompt(expression_text: &str) -> String {
    format!("{CHECK_INSTRUCTION}\nText: {expression_text}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub matches: bool,
    /// Neither "yes" nor "no" was found; `matches` fell back to true.
    pub ambiguous: bool,
}

/// Reads a yes/no verdict out of free text. The first standalone `yes` or
/// `no` token (case-insensitive) decides; text with neither counts as yes.
pub fn parse_answer(raw: &str) -> ParsedAnswer {
    let first = raw
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| !tok.is_empty())
        .find_map(|tok| {
            if tok.eq_ignore_ascii_case("yes") {
                Some(true)
            } else if tok.eq_ignore_ascii_case("no") {
                Some(false)
            } else {
                None
            }
        });
    match first {
        Some(matches) => ParsedAnswer {
            matches,
            ambiguous: false,
        },
        None => ParsedAnswer {
            matches: true,
            ambiguous: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckRequest {
    pub video_id: String,
    pub expression_id: String,
    pub expression_text: String,
    pub frame_paths: Vec<PathBuf>,
    pub prompt: String,
}

impl CheckRequest {
    pub fn new(video: &VideoSequence, expr: &ReferringExpression, frames: &KeyFrameSet) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{}: no frames selected for checking",
                expr.key()
            )));
        }
        Ok(Self {
            video_id: video.video_id.clone(),
            expression_id: expr.expression_id.clone(),
            expression_text: expr.text.clone(),
            frame_paths: frames.iter().map(|t| video.frame_path(t)).collect(),
            prompt: build_prompt(&expr.text),
        })
    }

    /// Wire form: `{"op":"check","video_id":…,"expression":…,"prompt":…,"frames":[…]}`.
    pub fn to_wire(&self) -> Value {
        json!({
            "op": "check",
            "video_id": self.video_id,
            "expression": self.expression_text,
            "prompt": self.prompt,
            "frames": self.frame_paths.iter().map(|p| p.to_string_lossy()).collect::<Vec<_>>(),
        })
    }

    fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.prompt.as_bytes());
        for p in &self.frame_paths {
            h.update([0u8]);
            h.update(p.to_string_lossy().as_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub matches: bool,
    pub raw_answer: String,
    pub backend_id: String,
    #[serde(default)]
    pub ambiguous: bool,
}

pub trait CheckerBackend: Send + Sync {
    fn id(&self) -> &str;
    /// Returns the backend's free-text answer.
    fn ask(&self, request: &CheckRequest) -> Result<String>;
}

/// Answers "no" when the expression contains a marker token, else "yes".
#[derive(Debug, Clone)]
pub struct MockChecker {
    marker: String,
}

impl MockChecker {
    pub fn new(marker: impl Into<String>) -> Self {
        Self {
            marker: marker.into(),
        }
    }
}

impl Default for MockChecker {
    fn default() -> Self {
        Self::new(MOCK_REJECT_MARKER)
    }
}

impl CheckerBackend for MockChecker {
    fn id(&self) -> &str {
        "mock"
    }

    fn ask(&self, request: &CheckRequest) -> Result<String> {
        Ok(if request.expression_text.contains(&self.marker) {
            "no".into()
        } else {
            "yes".into()
        })
    }
}

/// Checker backed by a protocol [`Transport`] (worker processes or a replayed
/// transcript).
pub struct WorkerChecker<T> {
    transport: T,
}

impl<T: Transport> WorkerChecker<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

impl<T: Transport> CheckerBackend for WorkerChecker<T> {
    fn id(&self) -> &str {
        &self.transport.handshake().name
    }

    fn ask(&self, request: &CheckRequest) -> Result<String> {
        let reply = self.transport.call(&request.to_wire())?;
        match reply.get("answer") {
            Some(Value::String(answer)) => Ok(answer.clone()),
            _ => Err(Error::protocol(
                self.id(),
                format!("check reply lacks a string 'answer': {reply}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    video_id: String,
    expression_id: String,
    backend_id: String,
    request_hash: String,
}

/// Caching front end over a checker backend.
///
/// Results are cached per (video, expression, backend, request content) so a
/// changed prompt or frame selection is never served a stale verdict.
pub struct VideoLanguageChecker {
    backend: Box<dyn CheckerBackend>,
    cache: Mutex<HashMap<CacheKey, Arc<Mutex<Option<CheckVerdict>>>>>,
    backend_calls: AtomicUsize,
}

impl VideoLanguageChecker {
    pub fn new(backend: Box<dyn CheckerBackend>) -> Self {
        Self {
            backend,
            cache: Mutex::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    /// Samples check frames with `sampler` and checks the pair.
    pub fn check(
        &self,
        video: &VideoSequence,
        expr: &ReferringExpression,
        sampler: &SamplerConfig,
    ) -> Result<CheckVerdict> {
        let frames = sample(sampler, video.frame_count())?;
        self.check_frames(video, expr, &frames)
    }

    pub fn check_frames(
        &self,
        video: &VideoSequence,
        expr: &ReferringExpression,
        frames: &KeyFrameSet,
    ) -> Result<CheckVerdict> {
        let request = CheckRequest::new(video, expr, frames)?;
        let key = CacheKey {
            video_id: request.video_id.clone(),
            expression_id: request.expression_id.clone(),
            backend_id: self.backend.id().to_string(),
            request_hash: request.content_hash(),
        };
        let slot = self.cache.lock().unwrap().entry(key).or_default().clone();
        // holding the slot lock makes concurrent callers for the same key wait
        // for the first answer instead of issuing duplicate calls
        let mut slot = slot.lock().unwrap();
        if let Some(v) = slot.as_ref() {
            return Ok(v.clone());
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self.backend.ask(&request)?;
        let parsed = parse_answer(&raw);
        if parsed.ambiguous {
            log::warn!(
                "{}: unparseable checker answer {raw:?}, treating as yes",
                expr.key()
            );
        }
        let verdict = CheckVerdict {
            matches: parsed.matches,
            raw_answer: raw,
            backend_id: self.backend.id().to_string(),
            ambiguous: parsed.ambiguous,
        };
        *slot = Some(verdict.clone());
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{hello_request, ReplayTransport, Transcript, TranscriptEntry};
    use std::path::Path;

    fn video() -> VideoSequence {
        VideoSequence {
            video_id: "v".into(),
            frame_ids: (0..10).map(|i| format!("{i:05}")).collect(),
            height: 4,
            width: 4,
            frame_dir: Path::new("/data/JPEGImages/v").into(),
        }
    }

    fn expr(text: &str) -> ReferringExpression {
        ReferringExpression {
            video_id: "v".into(),
            expression_id: "0".into(),
            text: text.into(),
        }
    }

    #[test]
    fn prompt_is_verbatim() {
        let p = build_prompt("a cat running");
        assert!(p.starts_with(
            "Please check whether the video matches the input text, i.e., whether the subject described \
             in the text exists in the video and whether the subject's action corresponds to the action \
             described in the text. Output yes/no."
        ));
        assert!(p.ends_with("\nText: a cat running"));
        assert_eq!(p, build_prompt("a cat running"));
    }

    #[test]
    fn answers() {
        assert!(!parse_answer("No.").matches);
        assert!(parse_answer("Yes, the subject appears.").matches);
        let unclear = parse_answer("unable to determine");
        assert!(unclear.matches && unclear.ambiguous);
        assert!(!parse_answer("no, not yes").matches);
        assert!(parse_answer("YES no").matches);
        // substrings do not count
        assert!(parse_answer("nothing here, knowing").ambiguous);
        assert!(!parse_answer("Answer: no").matches);
    }

    #[test]
    fn mock_rejects_marker() {
        let checker = VideoLanguageChecker::new(Box::new(MockChecker::default()));
        let cfg = SamplerConfig::default();
        assert!(!checker.check(&video(), &expr("the ABSENT dog"), &cfg).unwrap().matches);
        assert!(checker.check(&video(), &expr("a running cat"), &cfg).unwrap().matches);
    }

    #[test]
    fn repeated_check_hits_cache() {
        let checker = VideoLanguageChecker::new(Box::new(MockChecker::default()));
        let cfg = SamplerConfig::default();
        let a = checker.check(&video(), &expr("a cat"), &cfg).unwrap();
        let b = checker.check(&video(), &expr("a cat"), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(checker.backend_calls(), 1);
        // a different frame selection is a different request
        let other = SamplerConfig::new(crate::sampler::Strategy::HeadContinue, 2);
        checker.check(&video(), &expr("a cat"), &other).unwrap();
        assert_eq!(checker.backend_calls(), 2);
    }

    #[test]
    fn transcript_replay_yes() {
        let v = video();
        let e = expr("a cat running");
        let frames = KeyFrameSet::from_indices(vec![0, 9]);
        let req = CheckRequest::new(&v, &e, &frames).unwrap();
        let transcript = Transcript {
            entries: vec![
                TranscriptEntry { request: hello_request(), response: json!({"name": "qwen-rec"}) },
                TranscriptEntry { request: req.to_wire(), response: json!({"answer": "Yes."}) },
            ],
        };
        let backend = WorkerChecker::new(ReplayTransport::new(&transcript).unwrap());
        let checker = VideoLanguageChecker::new(Box::new(backend));
        let verdict = checker.check_frames(&v, &e, &frames).unwrap();
        assert!(verdict.matches);
        assert_eq!(verdict.backend_id, "qwen-rec");
    }

    #[test]
    fn malformed_reply_is_protocol_error() {
        let v = video();
        let e = expr("x");
        let frames = KeyFrameSet::from_indices(vec![0]);
        let req = CheckRequest::new(&v, &e, &frames).unwrap();
        let transcript = Transcript {
            entries: vec![
                TranscriptEntry { request: hello_request(), response: json!({"name": "w"}) },
                TranscriptEntry { request: req.to_wire(), response: json!({"verdict": true}) },
            ],
        };
        let checker =
            VideoLanguageChecker::new(Box::new(WorkerChecker::new(ReplayTransport::new(&transcript).unwrap())));
        assert!(matches!(checker.check_frames(&v, &e, &frames), Err(Error::Protocol { .. })));
        // failures are not cached
        assert!(checker.check_frames(&v, &e, &frames).is_err());
        assert_eq!(checker.backend_calls(), 2);
    }

    #[test]
    fn wire_format_fields() {
        let req = CheckRequest::new(&video(), &expr("a cat"), &KeyFrameSet::from_indices(vec![3])).unwrap();
        let wire = req.to_wire();
        assert_eq!(wire["op"], "check");
        assert_eq!(wire["video_id"], "v");
        assert_eq!(wire["expression"], "a cat");
        assert_eq!(wire["frames"], json!(["/data/JPEGImages/v/00003.jpg"]));
        assert_eq!(wire["prompt"], build_prompt("a cat"));
    }
}
