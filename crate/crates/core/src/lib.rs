//! Referring video object segmentation toolkit: key-frame sampling, a
//! video-language gate, segmentation via external workers, and J&F scoring.

pub mod ablation;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod sampler;
pub mod segmenter;
pub mod synth;
pub mod vlc;
pub mod worker;

pub use error::{Error, Result};
pub use mask::{BinaryMask, MaskSequence};
pub use metrics::{boundary_f, region_j, BoundaryTolerance, EvalReport, FrameScore};
pub use sampler::{sample, KeyFrameSet, SamplerConfig, Strategy};
