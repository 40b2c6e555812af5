//! Key-frame selection under a fixed frame budget.
//!
//! Three strategies are provided: a contiguous head prefix, evenly spaced
//! frames over the whole video, and a hybrid that unions a head prefix with
//! uniform coverage of the rest of the budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: usize = 40;
pub const DEFAULT_HEAD_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    HeadContinue,
    Uniform,
    Hybrid,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::HeadContinue => "head-continue",
            Strategy::Uniform => "uniform",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head-continue" | "head_continue" => Ok(Strategy::HeadContinue),
            "uniform" => Ok(Strategy::Uniform),
            "hybrid" => Ok(Strategy::Hybrid),
            other => Err(Error::Config(format!(
                "unknown key-frame strategy '{other}' (expected head-continue, uniform or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub budget: usize,
    #[serde(default = "default_head_fraction")]
    pub head_fraction: f64,
}

fn default_head_fraction() -> f64 {
    DEFAULT_HEAD_FRACTION
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hybrid,
            budget: DEFAULT_BUDGET,
            head_fraction: DEFAULT_HEAD_FRACTION,
        }
    }
}

impl SamplerConfig {
    pub fn new(strategy: Strategy, budget: usize) -> Self {
        Self {
            strategy,
            budget,
            head_fraction: DEFAULT_HEAD_FRACTION,
        }
    }

    pub fn with_head_fraction(mut self, head_fraction: f64) -> Self {
        self.head_fraction = head_fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("key-frame budget must be at least 1".into()));
        }
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return Err(Error::Config(format!(
                "hybrid head fraction must lie in (0, 1), got {}",
                self.head_fraction
            )));
        }
        Ok(())
    }
}

/// Strictly increasing frame indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyFrameSet(Vec<usize>);

impl KeyFrameSet {
    /// Sorts and deduplicates arbitrary indices.
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn all(frame_count: usize) -> Self {
        Self((0..frame_count).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// The first `min(n, frame_count)` frames.
pub fn sample_head_continue(frame_count: usize, n: usize) -> KeyFrameSet {
    KeyFrameSet((0..n.min(frame_count)).collect())
}

/// `n` frames evenly spaced over `[0, frame_count - 1]`, rounding half up.
///
/// Returns every frame when the budget covers the video, and `[0]` for a
/// budget of one.
pub fn sample_uniform(frame_count: usize, n: usize) -> KeyFrameSet {
    if n == 0 || frame_count == 0 {
        return KeyFrameSet::default();
    }
    if n >= frame_count {
        return KeyFrameSet::all(frame_count);
    }
    if n == 1 {
        return KeyFrameSet(vec![0]);
    }
    // floor(i * (T-1) / (N-1) + 1/2) in exact integer arithmetic
    let span = (frame_count - 1) as u128;
    let steps = (n - 1) as u128;
    let indices = (0..n as u128)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect();
    KeyFrameSet::from_indices(indices)
}

/// Number of frames the hybrid strategy spends on the head prefix:
/// `ceil(head_fraction * n)`.
pub fn hybrid_head_len(n: usize, head_fraction: f64) -> usize {
    let x = head_fraction * n as f64;
    let nearest = x.round();
    // 0.3 * 10 must give 3, not 4
    let len = if (x - nearest).abs() < 1e-9 { nearest } else { x.ceil() };
    (len.max(0.0) as usize).min(n)
}

/// Head prefix of `ceil(head_fraction * n)` frames united with a uniform
/// sample of the remaining budget. Overlap is not topped up, so the result
/// may hold fewer than `n` frames. A budget covering the whole video takes
/// every frame.
pub fn sample_hybrid(frame_count: usize, n: usize, head_fraction: f64) -> KeyFrameSet {
    if n >= frame_count {
        return KeyFrameSet::all(frame_count);
    }
    let head = hybrid_head_len(n, head_fraction);
    let mut indices = sample_head_continue(frame_count, head).into_vec();
    indices.extend(sample_uniform(frame_count, n - head).iter());
    KeyFrameSet::from_indices(indices)
}

pub fn sample(config: &SamplerConfig, frame_count: usize) -> Result<KeyFrameSet> {
    config.validate()?;
    let n = config.budget;
    Ok(match config.strategy {
        Strategy::HeadContinue => sample_head_continue(frame_count, n),
        Strategy::Uniform => sample_uniform(frame_count, n),
        Strategy::Hybrid => sample_hybrid(frame_count, n, config.head_fraction),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Strategy;

    #[test]
    fn head_continue_examples() {
        assert_eq!(sample_head_continue(100, 40).indices(), (0..40).collect::<Vec<_>>());
        assert_eq!(sample_head_continue(3, 40).indices(), &[0, 1, 2]);
        assert_eq!(sample_head_continue(1, 1).indices(), &[0]);
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(
            sample_uniform(100, 10).indices(),
            &[0, 11, 22, 33, 44, 55, 66, 77, 88, 99]
        );
        // 0, 4.5 -> 5, 9
        assert_eq!(sample_uniform(10, 3).indices(), &[0, 5, 9]);
        assert_eq!(sample_uniform(5, 40).indices(), &[0, 1, 2, 3, 4]);
        assert_eq!(sample_uniform(7, 1).indices(), &[0]);
    }

    #[test]
    fn hybrid_examples() {
        assert_eq!(sample_hybrid(10, 6, 0.5).indices(), &[0, 1, 2, 5, 9]);
        assert_eq!(sample_hybrid(40, 40, 0.5).indices(), (0..40).collect::<Vec<_>>());
        // one frame short of the budget: 20 head frames plus uniform-20 over 41
        assert_eq!(sample_hybrid(41, 40, 0.5).len(), 30);
        let long = sample_hybrid(10_000, 40, 0.5);
        assert!((0..20).all(|i| long.contains(i)));
        assert!(long.contains(9999));
    }

    #[test]
    fn head_len_is_robust_to_float_error() {
        assert_eq!(hybrid_head_len(10, 0.3), 3);
        assert_eq!(hybrid_head_len(10, 0.31), 4);
        assert_eq!(hybrid_head_len(40, 0.5), 20);
        assert_eq!(hybrid_head_len(1, 0.5), 1);
    }

    #[test]
    fn dispatch() {
        let cfg = SamplerConfig::new(Strategy::Uniform, 40);
        assert_eq!(sample(&cfg, 50).unwrap(), sample_uniform(50, 40));
        let cfg = SamplerConfig::new(Strategy::HeadContinue, 5);
        assert_eq!(sample(&cfg, 100).unwrap().indices(), &[0, 1, 2, 3, 4]);
        let got = sample(&SamplerConfig::new(Strategy::Hybrid, 40), 300).unwrap();
        assert!(got.len() <= 40);
        assert!(got.indices().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_configs() {
        assert!(sample(&SamplerConfig::new(Strategy::Uniform, 0), 10).is_err());
        let cfg = SamplerConfig::new(Strategy::Hybrid, 4).with_head_fraction(1.0);
        assert!(matches!(sample(&cfg, 10), Err(Error::Config(_))));
        assert!(matches!("random".parse::<Strategy>(), Err(Error::Config(_))));
        assert_eq!("head-continue".parse::<Strategy>().unwrap(), Strategy::HeadContinue);
    }

    proptest! {
        #[test]
        fn hybrid_keeps_head_prefix(t in 1usize..2000, n in 2usize..100, p in 0.05f64..0.95) {
            let got = sample_hybrid(t, n, p);
            let head = hybrid_head_len(n, p).min(t);
            prop_assert!((0..head).all(|i| got.contains(i)));
            prop_assert!(got.len() <= n.min(t));
        }
    }
}
