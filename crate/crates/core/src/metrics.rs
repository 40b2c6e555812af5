//! Region (J) and boundary (F) similarity.
//!
//! J is the IoU of two masks. F is the F-measure of boundary precision and
//! recall, where a boundary pixel counts as matched when a boundary pixel of
//! the other mask lies within Chebyshev distance `r`. Boundary pixels are
//! foreground pixels with a 4-neighbour that is background or outside the
//! image. Both-empty frames score 1, frames with exactly one empty mask 0.
//!
//! Frames are scored on bit-packed rows (64 pixels per word) restricted to
//! the rows spanned by either mask, so cost scales with `rows × width / 64`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_mask_sequence, mask_dir, mask_path, pair_key, DatasetIndex};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, BitGrid, MaskSequence};

/// Boundary tolerance as a fraction of the image diagonal.
pub const DEFAULT_BOUNDARY_FRACTION: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTolerance {
    /// `r = ceil(fraction * sqrt(H² + W²))`.
    Fraction(f64),
    Pixels(u32),
}

impl Default for BoundaryTolerance {
    fn default() -> Self {
        BoundaryTolerance::Fraction(DEFAULT_BOUNDARY_FRACTION)
    }
}

impl BoundaryTolerance {
    /// Values `>= 1` are pixel radii (rounded up); values in `(0, 1)` are
    /// fractions of the diagonal.
    pub fn from_bound_th(th: f64) -> Result<Self> {
        if th.is_nan() || th <= 0.0 || !th.is_finite() {
            return Err(Error::Config(format!("boundary threshold must be positive, got {th}")));
        }
        Ok(if th >= 1.0 {
            BoundaryTolerance::Pixels(th.ceil() as u32)
        } else {
            BoundaryTolerance::Fraction(th)
        })
    }

    pub fn radius(self, height: u32, width: u32) -> usize {
        match self {
            BoundaryTolerance::Pixels(r) => r as usize,
            BoundaryTolerance::Fraction(f) => {
                let diag = ((height as f64).powi(2) + (width as f64).powi(2)).sqrt();
                (f * diag).ceil() as usize
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub j: f64,
    pub f: f64,
}

impl FrameScore {
    pub const PERFECT: FrameScore = FrameScore { j: 1.0, f: 1.0 };
    pub const ZERO: FrameScore = FrameScore { j: 0.0, f: 0.0 };

    pub fn jf(&self) -> f64 {
        (self.j + self.f) / 2.0
    }
}

fn check_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Bit-packed mask rows. Bit `x % 64` of word `x / 64` holds column `x`;
/// padding bits past the width are always zero.
struct Packed {
    words_per_row: usize,
    words: Vec<u64>,
}

impl Packed {
    fn zeros(height: usize, width: usize) -> Self {
        let words_per_row = width.div_ceil(64).max(1);
        Self {
            words_per_row,
            words: vec![0; height * words_per_row],
        }
    }

    fn from_mask(mask: &BinaryMask) -> Self {
        let width = mask.width() as usize;
        let mut p = Self::zeros(mask.height() as usize, width);
        for (start, len) in mask.foreground_runs() {
            let end = start + len;
            let mut pos = start;
            while pos < end {
                let y = pos / width;
                let x0 = pos % width;
                let x1 = (x0 + (end - pos)).min(width);
                p.set_range(y, x0, x1);
                pos += x1 - x0;
            }
        }
        p
    }

    fn set_range(&mut self, y: usize, x0: usize, x1: usize) {
        let row = &mut self.words[y * self.words_per_row..(y + 1) * self.words_per_row];
        let (w0, w1) = (x0 / 64, (x1 - 1) / 64);
        for (w, word) in row.iter_mut().enumerate().take(w1 + 1).skip(w0) {
            let lo = if w == w0 { x0 % 64 } else { 0 };
            let hi = if w == w1 { (x1 - 1) % 64 + 1 } else { 64 };
            let bits = if hi - lo == 64 { u64::MAX } else { ((1u64 << (hi - lo)) - 1) << lo };
            *word |= bits;
        }
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.words[y * self.words_per_row..(y + 1) * self.words_per_row]
    }

    fn count_and(&self, other: &Packed, rows: std::ops::Range<usize>) -> u64 {
        let wpr = self.words_per_row;
        let range = rows.start * wpr..rows.end * wpr;
        self.words[range.clone()]
            .iter()
            .zip(&other.words[range])
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }

    fn count_or(&self, other: &Packed, rows: std::ops::Range<usize>) -> u64 {
        let wpr = self.words_per_row;
        let range = rows.start * wpr..rows.end * wpr;
        self.words[range.clone()]
            .iter()
            .zip(&other.words[range])
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum()
    }

    fn count(&self, rows: std::ops::Range<usize>) -> u64 {
        let wpr = self.words_per_row;
        self.words[rows.start * wpr..rows.end * wpr]
            .iter()
            .map(|w| w.count_ones() as u64)
            .sum()
    }

    /// Foreground pixels with a background or out-of-image 4-neighbour.
    /// Rows outside `rows` must be empty.
    fn boundary(&self, rows: std::ops::Range<usize>, height: usize) -> Packed {
        let wpr = self.words_per_row;
        let mut out = Packed {
            words_per_row: wpr,
            words: vec![0; self.words.len()],
        };
        let zero = vec![0u64; wpr];
        for y in rows {
            let cur = self.row(y);
            let up = if y > 0 { self.row(y - 1) } else { &zero[..] };
            let down = if y + 1 < height { self.row(y + 1) } else { &zero[..] };
            let dst = &mut out.words[y * wpr..(y + 1) * wpr];
            for i in 0..wpr {
                let c = cur[i];
                if c == 0 {
                    continue;
                }
                // left neighbour of column x is x-1: shift towards higher bits
                let left = (c << 1) | if i > 0 { cur[i - 1] >> 63 } else { 0 };
                let right = (c >> 1) | if i + 1 < wpr { cur[i + 1] << 63 } else { 0 };
                let interior = c & left & right & up[i] & down[i];
                dst[i] = c & !interior;
            }
        }
        out
    }

    /// Square (Chebyshev) dilation by `radius`, evaluated on `rows` only.
    /// Rows outside `rows` must be empty on input.
    fn dilate(&self, radius: usize, rows: std::ops::Range<usize>, width: usize) -> Packed {
        let wpr = self.words_per_row;
        let mut acc = Packed {
            words_per_row: wpr,
            words: self.words.clone(),
        };
        if radius == 0 || rows.is_empty() {
            return acc;
        }
        let pad_mask = if width.is_multiple_of(64) { u64::MAX } else { (1u64 << (width % 64)) - 1 };

        // Window doubling: if acc covers [-span, span], OR-ing shifts by
        // step <= span + 1 covers [-(span+step), span+step] contiguously.
        let mut tmp = vec![0u64; wpr];
        for y in rows.clone() {
            let row = &mut acc.words[y * wpr..(y + 1) * wpr];
            if row.iter().all(|&w| w == 0) {
                continue;
            }
            let mut span = 0;
            while span < radius {
                let step = (span + 1).min(radius - span);
                tmp.copy_from_slice(row);
                or_shifted_up(row, &tmp, step);
                or_shifted_down(row, &tmp, step);
                row[wpr - 1] &= pad_mask;
                span += step;
            }
        }

        let mut span = 0;
        let mut prev = acc.words.clone();
        while span < radius {
            let step = (span + 1).min(radius - span);
            prev.copy_from_slice(&acc.words);
            for y in rows.clone() {
                let dst = y * wpr;
                if y >= rows.start + step {
                    let src = (y - step) * wpr;
                    for i in 0..wpr {
                        acc.words[dst + i] |= prev[src + i];
                    }
                }
                if y + step < rows.end {
                    let src = (y + step) * wpr;
                    for i in 0..wpr {
                        acc.words[dst + i] |= prev[src + i];
                    }
                }
            }
            span += step;
        }
        acc
    }
}

/// `dst |= src` shifted towards higher columns by `k`.
fn or_shifted_up(dst: &mut [u64], src: &[u64], k: usize) {
    let (q, s) = (k / 64, k % 64);
    for i in (q..dst.len()).rev() {
        let mut v = src[i - q] << s;
        if s > 0 && i > q {
            v |= src[i - q - 1] >> (64 - s);
        }
        dst[i] |= v;
    }
}

/// `dst |= src` shifted towards lower columns by `k`.
fn or_shifted_down(dst: &mut [u64], src: &[u64], k: usize) {
    let (q, s) = (k / 64, k % 64);
    let n = dst.len();
    for i in 0..n.saturating_sub(q) {
        let mut v = src[i + q] >> s;
        if s > 0 && i + q + 1 < n {
            v |= src[i + q + 1] << (64 - s);
        }
        dst[i] |= v;
    }
}

/// Rows `[first, last]` holding foreground, if any.
fn row_span(mask: &BinaryMask) -> Option<(usize, usize)> {
    let width = mask.width() as usize;
    let mut runs = mask.foreground_runs();
    let (first_start, mut last) = runs.next()?;
    last += first_start;
    for (s, l) in runs {
        last = s + l;
    }
    Some((first_start / width, (last - 1) / width))
}

fn union_rows(a: &BinaryMask, b: &BinaryMask) -> std::ops::Range<usize> {
    match (row_span(a), row_span(b)) {
        (None, None) => 0..0,
        (Some((s, e)), None) | (None, Some((s, e))) => s..e + 1,
        (Some((s1, e1)), Some((s2, e2))) => s1.min(s2)..e1.max(e2) + 1,
    }
}

/// Region similarity: `|pred ∩ gt| / |pred ∪ gt|`.
pub fn region_j(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let (pa, ga) = (pred.count_ones(), gt.count_ones());
    if pa == 0 || ga == 0 {
        return Ok(if pa == ga { 1.0 } else { 0.0 });
    }
    let rows = union_rows(pred, gt);
    let (p, g) = (Packed::from_mask(pred), Packed::from_mask(gt));
    let inter = p.count_and(&g, rows.clone());
    let union = p.count_or(&g, rows);
    Ok(inter as f64 / union as f64)
}

/// Boundary pixels of `mask` as a bit grid.
pub fn extract_boundary(mask: &BinaryMask) -> BitGrid {
    let (h, w) = (mask.height() as usize, mask.width() as usize);
    let rows = union_rows(mask, mask);
    let b = Packed::from_mask(mask).boundary(rows, h);
    BitGrid::from_fn(h, w, |y, x| b.row(y)[x / 64] >> (x % 64) & 1 == 1)
}

/// F-measure from matched boundary counts.
fn f_measure(pred_boundary: u64, gt_boundary: u64, pred_hits: u64, gt_hits: u64) -> f64 {
    if pred_boundary == 0 || gt_boundary == 0 {
        return if pred_boundary == gt_boundary { 1.0 } else { 0.0 };
    }
    let precision = pred_hits as f64 / pred_boundary as f64;
    let recall = gt_hits as f64 / gt_boundary as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Boundary similarity with the given tolerance.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tolerance: BoundaryTolerance) -> Result<f64> {
    Ok(score_frame(pred, gt, tolerance)?.f)
}

/// J and F of one frame, sharing the packed representation.
pub fn score_frame(pred: &BinaryMask, gt: &BinaryMask, tolerance: BoundaryTolerance) -> Result<FrameScore> {
    check_dims(pred, gt)?;
    let (pa, ga) = (pred.count_ones(), gt.count_ones());
    if pa == 0 || ga == 0 {
        return Ok(if pa == ga { FrameScore::PERFECT } else { FrameScore::ZERO });
    }
    let (h, w) = (pred.height() as usize, pred.width() as usize);
    let rows = union_rows(pred, gt);
    let (p, g) = (Packed::from_mask(pred), Packed::from_mask(gt));
    let j = p.count_and(&g, rows.clone()) as f64 / p.count_or(&g, rows.clone()) as f64;

    let radius = tolerance.radius(pred.height(), pred.width());
    let (bp, bg) = (p.boundary(rows.clone(), h), g.boundary(rows.clone(), h));
    let pred_hits = bp.count_and(&bg.dilate(radius, rows.clone(), w), rows.clone());
    let gt_hits = bg.count_and(&bp.dilate(radius, rows.clone(), w), rows.clone());
    let f = f_measure(bp.count(rows.clone()), bg.count(rows), pred_hits, gt_hits);
    Ok(FrameScore { j, f })
}

/// Mean J and F over all frames of a sequence.
pub fn evaluate_sequence(pred: &MaskSequence, gt: &MaskSequence, tolerance: BoundaryTolerance) -> Result<FrameScore> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{}/{}: {} predicted frames vs {} ground-truth frames",
            gt.video_id,
            gt.expression_id,
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}/{}: empty sequence",
            gt.video_id, gt.expression_id
        )));
    }
    let mut sum_j = 0.0;
    let mut sum_f = 0.0;
    for (p, g) in pred.masks.iter().zip(&gt.masks) {
        let s = score_frame(p, g, tolerance)?;
        sum_j += s.j;
        sum_f += s.f;
    }
    let n = gt.len() as f64;
    Ok(FrameScore {
        j: sum_j / n,
        f: sum_f / n,
    })
}

/// Per-expression and aggregate scores, as fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_expression: BTreeMap<String, FrameScore>,
    pub aggregate_j: f64,
    pub aggregate_f: f64,
}

impl EvalReport {
    /// Unweighted mean over expressions, summed in key order.
    pub fn from_scores(per_expression: BTreeMap<String, FrameScore>) -> Self {
        let n = per_expression.len().max(1) as f64;
        let (sj, sf) = per_expression
            .values()
            .fold((0.0, 0.0), |(j, f), s| (j + s.j, f + s.f));
        Self {
            per_expression,
            aggregate_j: sj / n,
            aggregate_f: sf / n,
        }
    }

    /// Aggregate-only report from percentages, e.g. a published leaderboard row.
    pub fn from_percentages(j: f64, f: f64) -> Self {
        Self {
            per_expression: BTreeMap::new(),
            aggregate_j: j / 100.0,
            aggregate_f: f / 100.0,
        }
    }

    pub fn aggregate_jf(&self) -> f64 {
        (self.aggregate_j + self.aggregate_f) / 2.0
    }

    pub fn to_json(&self) -> String {
        let file = ReportFile {
            aggregate: PercentScores {
                j: self.aggregate_j * 100.0,
                f: self.aggregate_f * 100.0,
                jf: Some(self.aggregate_jf() * 100.0),
            },
            per_expression: self
                .per_expression
                .iter()
                .map(|(k, s)| {
                    (k.clone(), PercentScores { j: s.j * 100.0, f: s.f * 100.0, jf: None })
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("report serializes")
    }

    /// Parses a report file. `J&F` is always recomputed from `J` and `F`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ReportFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report file: {e}")))?;
        Ok(Self {
            per_expression: file
                .per_expression
                .into_iter()
                .map(|(k, s)| (k, FrameScore { j: s.j / 100.0, f: s.f / 100.0 }))
                .collect(),
            aggregate_j: file.aggregate.j / 100.0,
            aggregate_f: file.aggregate.f / 100.0,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct PercentScores {
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "F")]
    f: f64,
    #[serde(rename = "J&F", default, skip_serializing_if = "Option::is_none")]
    jf: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    aggregate: PercentScores,
    #[serde(default)]
    per_expression: BTreeMap<String, PercentScores>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub tolerance: BoundaryTolerance,
    /// Score expressions without predictions as (0, 0) instead of failing.
    pub score_missing_zero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// `video/expression` keys that had no complete prediction.
    pub missing: Vec<String>,
}

/// Scores in-memory (prediction, ground truth) pairs in parallel.
pub fn evaluate_sequences(pairs: &[(MaskSequence, MaskSequence)], tolerance: BoundaryTolerance) -> Result<EvalReport> {
    let scores = pairs
        .par_iter()
        .map(|(p, g)| Ok((pair_key(&g.video_id, &g.expression_id), evaluate_sequence(p, g, tolerance)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores.into_iter().collect()))
}

/// Scores every expression of `dataset`, reading predictions from
/// `pred_root` and ground truth from `gt_root` (both in annotation layout).
pub fn evaluate_dataset(pred_root: &Path, gt_root: &Path, dataset: &DatasetIndex, opts: &EvalOptions) -> Result<EvalOutcome> {
    let results = dataset
        .expressions
        .par_iter()
        .map(|expr| {
            let video = dataset.video(&expr.video_id)?;
            let complete = mask_dir(pred_root, &expr.video_id, &expr.expression_id).is_dir()
                && video
                    .frame_ids
                    .iter()
                    .all(|f| mask_path(pred_root, &expr.video_id, &expr.expression_id, f).is_file());
            if !complete {
                return Ok((expr.key(), None));
            }
            let gt = load_mask_sequence(gt_root, video, &expr.expression_id)?;
            let pred = load_mask_sequence(pred_root, video, &expr.expression_id)?;
            Ok((expr.key(), Some(evaluate_sequence(&pred, &gt, opts.tolerance)?)))
        })
        .collect::<Result<Vec<_>>>()?;

    let missing: Vec<String> = results
        .iter()
        .filter(|(_, s)| s.is_none())
        .map(|(k, _)| k.clone())
        .collect();
    if !missing.is_empty() && !opts.score_missing_zero {
        return Err(Error::MissingPrediction(missing));
    }
    let scores = results
        .into_iter()
        .map(|(k, s)| (k, s.unwrap_or(FrameScore::ZERO)))
        .collect();
    Ok(EvalOutcome {
        report: EvalReport::from_scores(scores),
        missing,
    })
}
