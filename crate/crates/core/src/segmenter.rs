//! Segmentation backends and key-frame mask propagation.
//!
//! A backend turns an expression plus key frames into masks. Backends that
//! only segment the key frames (`key_frames_only`) are completed by
//! [`propagate`], which copies each key-frame mask to the frames nearest to
//! it. Backends that track through the whole video themselves report
//! `full_sequence` and bypass propagation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{mask_path, ReferringExpression, VideoSequence};
use crate::error::{Error, Result};
use crate::mask::{load_mask_png, BinaryMask, MaskSequence};
use crate::protocol::Transport;
use crate::sampler::KeyFrameSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    KeyFramesOnly,
    FullSequence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRequest {
    pub video_id: String,
    /// Not sent over the wire; used by in-process backends such as the oracle.
    pub expression_id: String,
    pub expression_text: String,
    pub key_frames: KeyFrameSet,
    pub key_frame_paths: Vec<PathBuf>,
    pub all_frame_paths: Vec<PathBuf>,
    pub height: u32,
    pub width: u32,
}

impl SegmentRequest {
    pub fn new(video: &VideoSequence, expr: &ReferringExpression, key_frames: KeyFrameSet) -> Result<Self> {
        if let Some(bad) = key_frames.iter().find(|&t| t >= video.frame_count()) {
            return Err(Error::InvalidInput(format!(
                "key frame {bad} out of range for {}-frame video {}",
                video.frame_count(),
                video.video_id
            )));
        }
        Ok(Self {
            video_id: video.video_id.clone(),
            expression_id: expr.expression_id.clone(),
            expression_text: expr.text.clone(),
            key_frame_paths: key_frames.iter().map(|t| video.frame_path(t)).collect(),
            key_frames,
            all_frame_paths: video.frame_paths(),
            height: video.height,
            width: video.width,
        })
    }

    pub fn to_wire(&self) -> Value {
        let key_frames: Vec<Value> = self
            .key_frames
            .iter()
            .zip(&self.key_frame_paths)
            .map(|(index, path)| json!({"index": index, "path": path.to_string_lossy()}))
            .collect();
        json!({
            "op": "segment",
            "video_id": self.video_id,
            "expression": self.expression_text,
            "height": self.height,
            "width": self.width,
            "key_frames": key_frames,
            "all_frames": self.all_frame_paths.iter().map(|p| p.to_string_lossy()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyFrameMasks {
    pub masks: BTreeMap<usize, BinaryMask>,
    pub coverage: Coverage,
}

pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;
    fn coverage(&self) -> Coverage;
    fn segment(&self, request: &SegmentRequest) -> Result<KeyFrameMasks>;
}

/// Calls `backend` and checks its reply against the request.
pub fn segment_key_frames(backend: &dyn SegmenterBackend, request: &SegmentRequest) -> Result<KeyFrameMasks> {
    let out = backend.segment(request)?;
    let expected: Vec<usize> = match out.coverage {
        Coverage::KeyFramesOnly => request.key_frames.indices().to_vec(),
        Coverage::FullSequence => (0..request.all_frame_paths.len()).collect(),
    };
    let got: Vec<usize> = out.masks.keys().copied().collect();
    if got != expected {
        return Err(Error::protocol(
            backend.name(),
            format!(
                "{:?} reply for {} covers frames {got:?}, expected {expected:?}",
                out.coverage, request.video_id
            ),
        ));
    }
    for (&t, mask) in &out.masks {
        if mask.dims() != (request.height, request.width) {
            let frame = request
                .all_frame_paths
                .get(t)
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| t.to_string());
            return Err(Error::Shape(format!(
                "backend '{}' returned a {}x{} mask for frame {frame}, expected {}x{}",
                backend.name(),
                mask.height(),
                mask.width(),
                request.height,
                request.width
            )));
        }
    }
    Ok(out)
}

/// Index into `keys` (sorted, non-empty) of the key frame nearest to `t`,
/// ties going to the earlier key frame.
fn nearest_key(keys: &[usize], t: usize) -> usize {
    match keys.binary_search(&t) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == keys.len() => i - 1,
        Err(i) => {
            if t - keys[i - 1] <= keys[i] - t {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Extends key-frame masks to every frame of `video` by nearest-key-frame copy.
pub fn propagate(key_masks: KeyFrameMasks, video: &VideoSequence, expression_id: &str) -> Result<MaskSequence> {
    let frame_count = video.frame_count();
    if key_masks.coverage == Coverage::FullSequence {
        let masks: Vec<BinaryMask> = key_masks.masks.into_values().collect();
        let seq = MaskSequence::new(video.video_id.clone(), expression_id, masks);
        seq.validate_against(video)?;
        return Ok(seq);
    }
    if key_masks.masks.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cannot propagate: no key-frame masks for {}/{expression_id}",
            video.video_id
        )));
    }
    let keys: Vec<usize> = key_masks.masks.keys().copied().collect();
    let sources: Vec<&BinaryMask> = key_masks.masks.values().collect();
    let masks = (0..frame_count)
        .map(|t| sources[nearest_key(&keys, t)].clone())
        .collect();
    let seq = MaskSequence::new(video.video_id.clone(), expression_id, masks);
    seq.validate_against(video)?;
    Ok(seq)
}

/// Segments the key frames and completes the sequence.
pub fn run_segmentation(
    backend: &dyn SegmenterBackend,
    video: &VideoSequence,
    expr: &ReferringExpression,
    key_frames: &KeyFrameSet,
) -> Result<MaskSequence> {
    let request = SegmentRequest::new(video, expr, key_frames.clone())?;
    let masks = segment_key_frames(backend, &request)?;
    propagate(masks, video, &expr.expression_id)
}

/// Returns ground-truth masks read from an annotation-layout root.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    gt_root: PathBuf,
}

impl OracleSegmenter {
    pub fn new(gt_root: impl Into<PathBuf>) -> Self {
        Self {
            gt_root: gt_root.into(),
        }
    }
}

fn frame_stem(path: &Path) -> Result<&str> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidInput(format!("frame path {} has no stem", path.display())))
}

impl SegmenterBackend for OracleSegmenter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn coverage(&self) -> Coverage {
        Coverage::KeyFramesOnly
    }

    fn segment(&self, request: &SegmentRequest) -> Result<KeyFrameMasks> {
        let mut masks = BTreeMap::new();
        for (t, path) in request.key_frames.iter().zip(&request.key_frame_paths) {
            let gt = mask_path(&self.gt_root, &request.video_id, &request.expression_id, frame_stem(path)?);
            masks.insert(t, load_mask_png(&gt)?);
        }
        Ok(KeyFrameMasks {
            masks,
            coverage: Coverage::KeyFramesOnly,
        })
    }
}

/// Returns all-background masks.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptySegmenter;

impl SegmenterBackend for EmptySegmenter {
    fn name(&self) -> &str {
        "empty"
    }

    fn coverage(&self) -> Coverage {
        Coverage::KeyFramesOnly
    }

    fn segment(&self, request: &SegmentRequest) -> Result<KeyFrameMasks> {
        let mask = BinaryMask::empty(request.height, request.width);
        Ok(KeyFrameMasks {
            masks: request.key_frames.iter().map(|t| (t, mask.clone())).collect(),
            coverage: Coverage::KeyFramesOnly,
        })
    }
}

#[derive(Deserialize)]
struct WireMask {
    index: usize,
    rle: Vec<u32>,
}

#[derive(Deserialize)]
struct WireSegmentReply {
    masks: Vec<WireMask>,
}

/// Segmenter backed by a protocol [`Transport`]. Coverage comes from the
/// worker handshake and defaults to `key_frames_only`.
pub struct WorkerSegmenter<T> {
    transport: T,
}

impl<T: Transport> WorkerSegmenter<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }
}

impl<T: Transport> SegmenterBackend for WorkerSegmenter<T> {
    fn name(&self) -> &str {
        &self.transport.handshake().name
    }

    fn coverage(&self) -> Coverage {
        self.transport
            .handshake()
            .coverage
            .unwrap_or(Coverage::KeyFramesOnly)
    }

    fn segment(&self, request: &SegmentRequest) -> Result<KeyFrameMasks> {
        let reply = self.transport.call(&request.to_wire())?;
        let parsed: WireSegmentReply = serde_json::from_value(reply)
            .map_err(|e| Error::protocol(self.name(), format!("bad segment reply: {e}")))?;
        let mut masks = BTreeMap::new();
        for m in parsed.masks {
            let mask = BinaryMask::from_runs(request.height, request.width, m.rle).map_err(|e| {
                Error::protocol(self.name(), format!("frame {} of {}: {e}", m.index, request.video_id))
            })?;
            if masks.insert(m.index, mask).is_some() {
                return Err(Error::protocol(
                    self.name(),
                    format!("frame {} returned twice", m.index),
                ));
            }
        }
        Ok(KeyFrameMasks {
            masks,
            coverage: self.coverage(),
        })
    }
}
