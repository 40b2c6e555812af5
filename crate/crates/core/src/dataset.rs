//! MeViS-style dataset ingestion.
//!
//! Layout:
//!
//! ```text
//! <root>/JPEGImages/<video_id>/<frame_id>.jpg
//! <root>/meta_expressions.json
//! <root>/Annotations/<video_id>/<expression_id>/<frame_id>.png
//! ```
//!
//! When `<root>/<split>/meta_expressions.json` exists, `<root>/<split>` is
//! used as the dataset base instead.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{load_mask_png, MaskSequence};

pub const FRAMES_DIR: &str = "JPEGImages";
pub const ANNOTATIONS_DIR: &str = "Annotations";
pub const META_FILE: &str = "meta_expressions.json";
pub const FRAME_EXT: &str = "jpg";
pub const MASK_EXT: &str = "png";

/// `meta_expressions.json` contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaExpressions {
    pub videos: BTreeMap<String, MetaVideo>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaVideo {
    pub frames: Vec<String>,
    pub expressions: BTreeMap<String, MetaExpression>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaExpression {
    pub exp: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSequence {
    pub video_id: String,
    /// Sorted, unique frame stems.
    pub frame_ids: Vec<String>,
    pub height: u32,
    pub width: u32,
    /// Directory holding this video's frame images.
    pub frame_dir: PathBuf,
}

impl VideoSequence {
    pub fn frame_count(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn frame_path(&self, t: usize) -> PathBuf {
        self.frame_dir
            .join(format!("{}.{FRAME_EXT}", self.frame_ids[t]))
    }

    pub fn frame_paths(&self) -> Vec<PathBuf> {
        (0..self.frame_count()).map(|t| self.frame_path(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferringExpression {
    pub video_id: String,
    pub expression_id: String,
    pub text: String,
}

impl ReferringExpression {
    /// `"<video_id>/<expression_id>"`, the key used in reports.
    pub fn key(&self) -> String {
        pair_key(&self.video_id, &self.expression_id)
    }
}

pub fn pair_key(video_id: &str, expression_id: &str) -> String {
    format!("{video_id}/{expression_id}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    /// Resolved dataset base directory.
    pub root: PathBuf,
    pub split: String,
    pub videos: BTreeMap<String, VideoSequence>,
    /// Ordered by (video_id, expression_id).
    pub expressions: Vec<ReferringExpression>,
    pub annotations_present: bool,
}

impl DatasetIndex {
    pub fn video(&self, video_id: &str) -> Result<&VideoSequence> {
        self.videos
            .get(video_id)
            .ok_or_else(|| Error::DatasetFormat(format!("unknown video '{video_id}'")))
    }

    /// Pairs every expression with its video.
    pub fn pairs(&self) -> impl Iterator<Item = (&VideoSequence, &ReferringExpression)> {
        self.expressions
            .iter()
            .map(|e| (&self.videos[&e.video_id], e))
    }
}

/// Directory holding the per-frame masks of one expression under an
/// annotation-layout root (ground truth or predictions).
pub fn mask_dir(root: &Path, video_id: &str, expression_id: &str) -> PathBuf {
    root.join(ANNOTATIONS_DIR).join(video_id).join(expression_id)
}

pub fn mask_path(root: &Path, video_id: &str, expression_id: &str, frame_id: &str) -> PathBuf {
    mask_dir(root, video_id, expression_id).join(format!("{frame_id}.{MASK_EXT}"))
}

/// Loads every frame mask of one expression and checks it against the video.
pub fn load_mask_sequence(root: &Path, video: &VideoSequence, expression_id: &str) -> Result<MaskSequence> {
    let masks = video
        .frame_ids
        .iter()
        .map(|f| load_mask_png(&mask_path(root, &video.video_id, expression_id, f)))
        .collect::<Result<Vec<_>>>()?;
    let seq = MaskSequence::new(video.video_id.clone(), expression_id, masks);
    seq.validate_against(video)?;
    Ok(seq)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Seeds the choice of the second frame used for dimension checks.
    pub seed: u64,
}

pub fn load_dataset(root: &Path, split: &str) -> Result<DatasetIndex> {
    load_dataset_with(root, split, &LoadOptions::default())
}

pub fn load_dataset_with(root: &Path, split: &str, opts: &LoadOptions) -> Result<DatasetIndex> {
    if split.trim().is_empty() {
        return Err(Error::DatasetFormat("split name is empty".into()));
    }
    let base = if root.join(split).join(META_FILE).is_file() {
        root.join(split)
    } else {
        root.to_path_buf()
    };
    let meta_path = base.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::DatasetFormat(format!(
            "missing manifest {}",
            meta_path.display()
        )));
    }
    let raw = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaExpressions = serde_json::from_str(&raw).map_err(|e| {
        Error::DatasetFormat(format!("{}: {e}", meta_path.display()))
    })?;

    let frames_root = base.join(FRAMES_DIR);
    let entries: Vec<(&String, &MetaVideo)> = meta.videos.iter().collect();
    let videos = entries
        .par_iter()
        .map(|(id, v)| load_video(&frames_root, id, v, opts.seed))
        .collect::<Result<Vec<_>>>()?;
    let videos: BTreeMap<String, VideoSequence> =
        videos.into_iter().map(|v| (v.video_id.clone(), v)).collect();

    let mut expressions = Vec::new();
    for (video_id, v) in &meta.videos {
        for (expression_id, e) in &v.expressions {
            if e.exp.trim().is_empty() {
                return Err(Error::DatasetFormat(format!(
                    "expression {video_id}/{expression_id} has empty text"
                )));
            }
            expressions.push(ReferringExpression {
                video_id: video_id.clone(),
                expression_id: expression_id.clone(),
                text: e.exp.clone(),
            });
        }
    }

    Ok(DatasetIndex {
        annotations_present: base.join(ANNOTATIONS_DIR).is_dir(),
        root: base,
        split: split.to_string(),
        videos,
        expressions,
    })
}

fn load_video(frames_root: &Path, video_id: &str, meta: &MetaVideo, seed: u64) -> Result<VideoSequence> {
    let frame_dir = frames_root.join(video_id);
    if !frame_dir.is_dir() {
        return Err(Error::DatasetFormat(format!(
            "video '{video_id}' listed in manifest but {} does not exist",
            frame_dir.display()
        )));
    }
    if meta.frames.is_empty() {
        return Err(Error::DatasetFormat(format!("video '{video_id}' has no frames")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = meta.frames.iter().find(|f| !seen.insert(f.as_str())) {
        return Err(Error::DatasetFormat(format!(
            "video '{video_id}' lists frame '{dup}' twice"
        )));
    }
    let mut frame_ids = meta.frames.clone();
    frame_ids.sort();

    let mut video = VideoSequence {
        video_id: video_id.to_string(),
        frame_ids,
        height: 0,
        width: 0,
        frame_dir,
    };
    let (w, h) = frame_dims(&video.frame_path(0))?;
    video.height = h;
    video.width = w;

    if video.frame_count() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(video_id.as_bytes()));
        let t = rng.random_range(1..video.frame_count());
        let path = video.frame_path(t);
        let (w2, h2) = frame_dims(&path)?;
        if (w2, h2) != (w, h) {
            return Err(Error::DatasetFormat(format!(
                "video '{video_id}': frame {} is {w2}x{h2}, first frame is {w}x{h}",
                path.display()
            )));
        }
    }
    Ok(video)
}

fn frame_dims(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other)),
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
