//! Check → sample → segment orchestration.
//!
//! For each (video, expression) pair the masks are all zero when the
//! checker is enabled and rejects the pair; otherwise they come from the
//! segmenter run on the sampled key frames.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_path, DatasetIndex, ReferringExpression, VideoSequence};
use crate::error::{Error, Result};
use crate::mask::{save_mask_png, zero_mask_sequence, MaskSequence};
use crate::protocol::{ReplayTransport, WorkerPool};
use crate::sampler::{sample, KeyFrameSet, SamplerConfig};
use crate::segmenter::{run_segmentation, EmptySegmenter, OracleSegmenter, SegmenterBackend, WorkerSegmenter};
use crate::vlc::{CheckVerdict, CheckerBackend, MockChecker, VideoLanguageChecker, WorkerChecker, MOCK_REJECT_MARKER};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Where a backend comes from.
///
/// String forms: `builtin:mock[=MARKER]`, `builtin:oracle[=GT_ROOT]`,
/// `builtin:empty`, `replay:TRANSCRIPT`, or anything else as a worker
/// command line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Mock { marker: String },
    Oracle { gt_root: Option<PathBuf> },
    Empty,
    Replay(PathBuf),
    Worker(String),
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Config("empty backend spec".into()));
        }
        if let Some(rest) = s.strip_prefix("builtin:") {
            let (name, arg) = match rest.split_once('=') {
                Some((n, a)) => (n, Some(a)),
                None => (rest, None),
            };
            return match (name, arg) {
                ("mock", None) => Ok(BackendSpec::Mock { marker: MOCK_REJECT_MARKER.into() }),
                ("mock", Some(m)) if !m.is_empty() => Ok(BackendSpec::Mock { marker: m.into() }),
                ("oracle", None) => Ok(BackendSpec::Oracle { gt_root: None }),
                ("oracle", Some(p)) => Ok(BackendSpec::Oracle { gt_root: Some(p.into()) }),
                ("empty", None) => Ok(BackendSpec::Empty),
                _ => Err(Error::Config(format!("unknown built-in backend '{s}'"))),
            };
        }
        if let Some(path) = s.strip_prefix("replay:") {
            return Ok(BackendSpec::Replay(path.into()));
        }
        Ok(BackendSpec::Worker(s.to_string()))
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock { marker } if marker == MOCK_REJECT_MARKER => f.write_str("builtin:mock"),
            BackendSpec::Mock { marker } => write!(f, "builtin:mock={marker}"),
            BackendSpec::Oracle { gt_root: None } => f.write_str("builtin:oracle"),
            BackendSpec::Oracle { gt_root: Some(p) } => write!(f, "builtin:oracle={}", p.display()),
            BackendSpec::Empty => f.write_str("builtin:empty"),
            BackendSpec::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendSpec::Worker(cmd) => f.write_str(cmd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub vlc_enabled: bool,
    pub vlc_backend: Option<BackendSpec>,
    pub segmenter_backend: BackendSpec,
    pub pool_size: usize,
    pub output_root: PathBuf,
    /// Abort the run when the checker fails instead of proceeding as "yes".
    pub vlc_strict: bool,
    /// Abort the run when segmentation fails instead of writing empty masks.
    pub strict: bool,
    pub worker_timeout_secs: u64,
}

impl PipelineConfig {
    pub fn new(segmenter_backend: BackendSpec, output_root: impl Into<PathBuf>) -> Self {
        Self {
            sampler: SamplerConfig::default(),
            vlc_enabled: false,
            vlc_backend: None,
            segmenter_backend,
            pool_size: 1,
            output_root: output_root.into(),
            vlc_strict: false,
            strict: false,
            worker_timeout_secs: crate::protocol::DEFAULT_TIMEOUT.as_secs(),
        }
    }

    pub fn with_vlc(mut self, backend: BackendSpec) -> Self {
        self.vlc_enabled = true;
        self.vlc_backend = Some(backend);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.pool_size == 0 {
            return Err(Error::Config("pool size must be at least 1".into()));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the backend specs needed by
    /// [`Backends::from_config`].
    pub fn validate_specs(&self) -> Result<()> {
        self.validate()?;
        if self.vlc_enabled && self.vlc_backend.is_none() {
            return Err(Error::Config("checker enabled but no checker backend given".into()));
        }
        Ok(())
    }
}

pub struct Backends {
    pub checker: Option<VideoLanguageChecker>,
    pub segmenter: Box<dyn SegmenterBackend>,
}

impl Backends {
    pub fn new(checker: Option<VideoLanguageChecker>, segmenter: Box<dyn SegmenterBackend>) -> Self {
        Self { checker, segmenter }
    }

    /// Instantiates the configured backends. Worker pools get `pool_size`
    /// processes; the oracle defaults to the dataset's own annotations.
    pub fn from_config(cfg: &PipelineConfig, dataset_root: &Path) -> Result<Self> {
        cfg.validate_specs()?;
        let timeout = Duration::from_secs(cfg.worker_timeout_secs.max(1));
        let checker = match &cfg.vlc_backend {
            Some(spec) => Some(VideoLanguageChecker::new(build_checker(spec, cfg.pool_size, timeout)?)),
            None => None,
        };
        let segmenter = build_segmenter(&cfg.segmenter_backend, dataset_root, cfg.pool_size, timeout)?;
        Ok(Self { checker, segmenter })
    }
}

pub fn build_checker(spec: &BackendSpec, pool_size: usize, timeout: Duration) -> Result<Box<dyn CheckerBackend>> {
    Ok(match spec {
        BackendSpec::Mock { marker } => Box::new(MockChecker::new(marker.clone())),
        BackendSpec::Worker(cmd) => Box::new(WorkerChecker::new(WorkerPool::spawn(cmd, pool_size, timeout)?)),
        BackendSpec::Replay(path) => Box::new(WorkerChecker::new(ReplayTransport::load(path)?)),
        other => return Err(Error::Config(format!("'{other}' cannot act as a checker"))),
    })
}

pub fn build_segmenter(
    spec: &BackendSpec,
    dataset_root: &Path,
    pool_size: usize,
    timeout: Duration,
) -> Result<Box<dyn SegmenterBackend>> {
    Ok(match spec {
        BackendSpec::Oracle { gt_root } => Box::new(OracleSegmenter::new(
            gt_root.clone().unwrap_or_else(|| dataset_root.to_path_buf()),
        )),
        BackendSpec::Empty => Box::new(EmptySegmenter),
        BackendSpec::Worker(cmd) => Box::new(WorkerSegmenter::new(WorkerPool::spawn(cmd, pool_size, timeout)?)),
        BackendSpec::Replay(path) => Box::new(WorkerSegmenter::new(ReplayTransport::load(path)?)),
        other => return Err(Error::Config(format!("'{other}' cannot act as a segmenter"))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    Ok,
    GatedZero,
    BackendError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionOutcome {
    pub masks: MaskSequence,
    pub status: PairStatus,
    pub key_frames: KeyFrameSet,
    pub verdict: Option<CheckVerdict>,
    pub note: Option<String>,
}

/// Produces the mask sequence of one pair.
///
/// Under the default fail-open policy, a checker failure proceeds as if the
/// answer were "yes" and a segmentation failure yields empty masks with
/// status `backend_error`. Strict flags turn either into an error.
pub fn run_expression(
    video: &VideoSequence,
    expr: &ReferringExpression,
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<ExpressionOutcome> {
    let key_frames = sample(&cfg.sampler, video.frame_count())?;
    let mut verdict = None;
    let mut note = None;

    if cfg.vlc_enabled {
        let checker = backends
            .checker
            .as_ref()
            .ok_or_else(|| Error::Config("checker enabled but no checker backend available".into()))?;
        match checker.check_frames(video, expr, &key_frames) {
            Ok(v) if !v.matches => {
                return Ok(ExpressionOutcome {
                    masks: zero_mask_sequence(video, &expr.expression_id),
                    status: PairStatus::GatedZero,
                    key_frames,
                    verdict: Some(v),
                    note: None,
                });
            }
            Ok(v) => verdict = Some(v),
            Err(e) if !cfg.vlc_strict => {
                log::warn!("{}: checker failed, proceeding: {e}", expr.key());
                note = Some(format!("checker failed, treated as yes: {e}"));
            }
            Err(e) => return Err(e),
        }
    }

    match run_segmentation(backends.segmenter.as_ref(), video, expr, &key_frames) {
        Ok(masks) => Ok(ExpressionOutcome {
            masks,
            status: PairStatus::Ok,
            key_frames,
            verdict,
            note,
        }),
        Err(e) if !cfg.strict => {
            log::warn!("{}: segmentation failed: {e}", expr.key());
            Ok(ExpressionOutcome {
                masks: zero_mask_sequence(video, &expr.expression_id),
                status: PairStatus::BackendError,
                key_frames,
                verdict,
                note: Some(format!("segmentation failed: {e}")),
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub video_id: String,
    pub expression_id: String,
    pub status: PairStatus,
    pub key_frames: KeyFrameSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlc_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub dataset_root: PathBuf,
    pub split: String,
    pub checker_backend: Option<String>,
    pub segmenter_backend: String,
    pub pairs: Vec<PairRecord>,
    pub elapsed_ms: f64,
}

impl RunManifest {
    pub fn count(&self, status: PairStatus) -> usize {
        self.pairs.iter().filter(|p| p.status == status).count()
    }

    pub fn has_failures(&self) -> bool {
        self.count(PairStatus::BackendError) > 0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Writes a sequence's masks under `root` in annotation layout.
pub fn write_mask_sequence(root: &Path, video: &VideoSequence, masks: &MaskSequence) -> Result<()> {
    masks.validate_against(video)?;
    for (frame_id, mask) in video.frame_ids.iter().zip(&masks.masks) {
        save_mask_png(mask, &mask_path(root, &masks.video_id, &masks.expression_id, frame_id))?;
    }
    Ok(())
}

/// In strict mode every per-pair failure aborts the run as a backend error,
/// so callers can tell it apart from local data or config problems.
fn strict_abort(cfg: &PipelineConfig, backends: &Backends, expr: &ReferringExpression, e: Error) -> Error {
    let strict = cfg.strict || cfg.vlc_strict;
    if !strict || e.is_backend_failure() || matches!(e, Error::Config(_)) {
        return e;
    }
    Error::backend(backends.segmenter.name(), format!("{} (strict): {e}", expr.key()))
}

/// Runs every pair of `dataset`, writing predictions and `run_manifest.json`
/// under `cfg.output_root`. Pairs run concurrently on `cfg.pool_size`
/// threads; record order follows the dataset, not completion order.
pub fn run_dataset(dataset: &DatasetIndex, cfg: &PipelineConfig, backends: &Backends) -> Result<RunManifest> {
    cfg.validate()?;
    if cfg.vlc_enabled && backends.checker.is_none() {
        return Err(Error::Config("checker enabled but no checker backend available".into()));
    }
    let out = &cfg.output_root;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.pool_size)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;

    let started = Instant::now();
    let pairs = pool.install(|| {
        dataset
            .pairs()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&(video, expr)| {
                let t0 = Instant::now();
                let outcome = run_expression(video, expr, cfg, backends)
                    .map_err(|e| strict_abort(cfg, backends, expr, e))?;
                write_mask_sequence(out, video, &outcome.masks)?;
                Ok(PairRecord {
                    video_id: expr.video_id.clone(),
                    expression_id: expr.expression_id.clone(),
                    status: outcome.status,
                    key_frames: outcome.key_frames,
                    vlc_answer: outcome.verdict.map(|v| v.raw_answer),
                    note: outcome.note,
                    elapsed_ms: t0.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let manifest = RunManifest {
        config: cfg.clone(),
        dataset_root: dataset.root.clone(),
        split: dataset.split.clone(),
        checker_backend: backends.checker.as_ref().map(|c| c.backend_id().to_string()),
        segmenter_backend: backends.segmenter.name().to_string(),
        pairs,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
