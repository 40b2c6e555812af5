//! Synthetic datasets of moving rectangles with exact ground truth.
//!
//! Each video holds up to four solid-colour boxes, one per horizontal band so
//! boxes never occlude each other. Every box gets one expression; with
//! `markers` enabled each video also gets one expression containing the
//! mock checker's reject token, whose ground truth is the first box.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_path, MetaExpression, MetaExpressions, MetaVideo, FRAMES_DIR, META_FILE};
use crate::error::{Error, Result};
use crate::mask::{save_mask_png, BinaryMask, RunBuilder};
use crate::vlc::MOCK_REJECT_MARKER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Static,
    Linear,
    Bounce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub height: u32,
    pub width: u32,
    /// Boxes per video, 1..=4.
    pub objects: usize,
    pub motion: Motion,
    pub markers: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            videos: 5,
            min_frames: 12,
            max_frames: 20,
            height: 96,
            width: 128,
            objects: 2,
            motion: Motion::Bounce,
            markers: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.videos == 0 {
            return err("need at least one video");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return err("frame range must satisfy 1 <= min <= max");
        }
        if !(1..=4).contains(&self.objects) {
            return err("objects per video must be between 1 and 4");
        }
        if self.height < 8 * self.objects as u32 || self.width < 16 {
            return err("frames too small for the requested objects");
        }
        Ok(())
    }
}

const COLORS: [(&str, [u8; 3]); 4] = [
    ("red", [230, 40, 40]),
    ("green", [40, 220, 60]),
    ("blue", [50, 80, 240]),
    ("yellow", [240, 230, 50]),
];

#[derive(Debug, Clone, Copy)]
struct Track {
    w: i64,
    h: i64,
    x0: i64,
    y0: i64,
    vx: i64,
    vy: i64,
    band: (i64, i64),
}

impl Track {
    /// Top-left corner at frame `t`, reflecting off the band edges.
    fn position(&self, t: usize, width: i64) -> (i64, i64) {
        let reflect = |start: i64, v: i64, lo: i64, hi: i64| {
            let span = hi - lo;
            if span <= 0 || v == 0 {
                return start;
            }
            let p = (start - lo + v * t as i64).rem_euclid(2 * span);
            lo + if p > span { 2 * span - p } else { p }
        };
        (
            reflect(self.x0, self.vx, 0, width - self.w),
            reflect(self.y0, self.vy, self.band.0, self.band.1 - self.h),
        )
    }

    fn direction(&self) -> &'static str {
        match self.vx.signum() {
            0 if self.vy == 0 => "staying still",
            0 => "moving vertically",
            1 => "moving right",
            _ => "moving left",
        }
    }
}

fn make_track(rng: &mut ChaCha8Rng, spec: &SynthSpec, band: (i64, i64), frames: usize) -> Track {
    let width = spec.width as i64;
    let band_h = band.1 - band.0;
    let h = rng.random_range((band_h / 3).max(2)..=(band_h * 2 / 3).max(2));
    let w = rng.random_range((width / 8).max(2)..=(width / 3).max(2));
    let mut vx = match spec.motion {
        Motion::Static => 0,
        _ => *[-3i64, -2, -1, 1, 2, 3].get(rng.random_range(0..6)).unwrap(),
    };
    let vy = match spec.motion {
        Motion::Bounce => rng.random_range(-1..=1),
        _ => 0,
    };
    if spec.motion == Motion::Linear {
        // keep the straight path inside the frame
        let room = width - w;
        let steps = frames.saturating_sub(1).max(1) as i64;
        vx = vx.signum() * vx.abs().min(room / steps);
    }
    let x0 = if spec.motion == Motion::Linear {
        let travel = vx.abs() * frames.saturating_sub(1) as i64;
        let base = rng.random_range(0..=(width - w - travel).max(0));
        if vx < 0 { base + travel } else { base }
    } else {
        rng.random_range(0..=width - w)
    };
    let y0 = rng.random_range(band.0..=band.1 - h);
    Track { w, h, x0, y0, vx, vy, band }
}

fn rect_mask(height: u32, width: u32, x: i64, y: i64, w: i64, h: i64) -> BinaryMask {
    let mut b = RunBuilder::new();
    for row in 0..height as i64 {
        if row >= y && row < y + h {
            b.push_run(false, x as u32);
            b.push_run(true, w as u32);
            b.push_run(false, (width as i64 - x - w) as u32);
        } else {
            b.push_run(false, width);
        }
    }
    BinaryMask::from_runs_unchecked(height, width, b.finish())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub videos: usize,
    pub expressions: usize,
    pub frames: usize,
}

/// Writes a dataset tree under `out`. Output is a pure function of `spec`.
pub fn generate(out: &Path, spec: &SynthSpec) -> Result<SynthSummary> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut meta = MetaExpressions {
        videos: BTreeMap::new(),
    };
    let (height, width) = (spec.height, spec.width);
    let band_h = height as i64 / spec.objects as i64;
    let mut summary = SynthSummary {
        videos: 0,
        expressions: 0,
        frames: 0,
    };

    for v in 0..spec.videos {
        let video_id = format!("vid{v:03}");
        let frames = rng.random_range(spec.min_frames..=spec.max_frames);
        let frame_ids: Vec<String> = (0..frames).map(|t| format!("{t:05}")).collect();
        let tracks: Vec<Track> = (0..spec.objects)
            .map(|k| {
                let band = (k as i64 * band_h, (k as i64 + 1) * band_h);
                make_track(&mut rng, spec, band, frames)
            })
            .collect();

        // (expression id, text, object index)
        let mut exprs: Vec<(String, String, usize)> = tracks
            .iter()
            .enumerate()
            .map(|(k, tr)| (k.to_string(), format!("the {} box {}", COLORS[k].0, tr.direction()), k))
            .collect();
        if spec.markers {
            exprs.push((
                tracks.len().to_string(),
                format!("the {MOCK_REJECT_MARKER} {} box {}", COLORS[0].0, tracks[0].direction()),
                0,
            ));
        }

        let frame_dir = out.join(FRAMES_DIR).join(&video_id);
        std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        for (t, frame_id) in frame_ids.iter().enumerate() {
            let mut img = RgbImage::from_fn(width, height, |x, y| {
                let g = 20 + ((x + y) % 16) as u8;
                Rgb([g, g, g + 4])
            });
            let mut masks = Vec::with_capacity(tracks.len());
            for (k, tr) in tracks.iter().enumerate() {
                let (x, y) = tr.position(t, width as i64);
                for yy in y..y + tr.h {
                    for xx in x..x + tr.w {
                        img.put_pixel(xx as u32, yy as u32, Rgb(COLORS[k].1));
                    }
                }
                masks.push(rect_mask(height, width, x, y, tr.w, tr.h));
            }
            let path = frame_dir.join(format!("{frame_id}.jpg"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            JpegEncoder::new_with_quality(BufWriter::new(file), 90)
                .encode_image(&img)
                .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
            for (eid, _, k) in &exprs {
                save_mask_png(&masks[*k], &mask_path(out, &video_id, eid, frame_id))?;
            }
        }

        summary.videos += 1;
        summary.expressions += exprs.len();
        summary.frames += frames;
        meta.videos.insert(
            video_id,
            MetaVideo {
                frames: frame_ids,
                expressions: exprs
                    .into_iter()
                    .map(|(eid, text, _)| (eid, MetaExpression { exp: text }))
                    .collect(),
            },
        );
    }

    let meta_path = out.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).expect("manifest serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(summary)
}
