//! Run-length encoded binary masks and their PNG representation.
//!
//! A [`BinaryMask`] stores a row-major `height × width` bitmap as alternating
//! run lengths, starting with background. The first run may be zero (a mask
//! whose first pixel is foreground); no other run may be zero.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::VideoSequence;
use crate::error::{Error, Result};

/// Row-major grid of bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitGrid {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BitGrid {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "bit grid has {} cells, expected {height}x{width}={}",
                bits.len(),
                height * width
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Incrementally builds a run list from a stream of pixel values.
#[derive(Debug)]
pub(crate) struct RunBuilder {
    runs: Vec<u32>,
    current: bool,
    len: u32,
}

impl RunBuilder {
    pub(crate) fn new() -> Self {
        Self {
            runs: Vec::new(),
            current: false,
            len: 0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, value: bool) {
        if value != self.current {
            self.runs.push(self.len);
            self.current = value;
            self.len = 0;
        }
        self.len += 1;
    }

    /// Appends `count` pixels of the same value.
    pub(crate) fn push_run(&mut self, value: bool, count: u32) {
        if count == 0 {
            return;
        }
        if value != self.current {
            self.runs.push(self.len);
            self.current = value;
            self.len = 0;
        }
        self.len += count;
    }

    pub(crate) fn finish(mut self) -> Vec<u32> {
        self.runs.push(self.len);
        self.runs
    }
}

#[derive(Deserialize)]
struct RawMask {
    height: u32,
    width: u32,
    runs: Vec<u32>,
}

impl TryFrom<RawMask> for BinaryMask {
    type Error = Error;

    fn try_from(raw: RawMask) -> Result<Self> {
        BinaryMask::from_runs(raw.height, raw.width, raw.runs)
    }
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct BinaryMask {
    height: u32,
    width: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    /// Validates a run list against the mask invariants.
    pub fn from_runs(height: u32, width: u32, runs: Vec<u32>) -> Result<Self> {
        let area = height as u64 * width as u64;
        if runs.is_empty() {
            return Err(Error::CorruptMask("empty run list".into()));
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(Error::CorruptMask(format!(
                "zero-length run at position {}",
                pos + 1
            )));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        if total != area {
            return Err(Error::CorruptMask(format!(
                "runs sum to {total}, expected {height}x{width}={area}"
            )));
        }
        Ok(Self {
            height,
            width,
            runs,
        })
    }

    pub fn empty(height: u32, width: u32) -> Self {
        Self {
            height,
            width,
            runs: vec![height * width],
        }
    }

    pub fn full(height: u32, width: u32) -> Self {
        let area = height * width;
        let runs = if area == 0 { vec![0] } else { vec![0, area] };
        Self {
            height,
            width,
            runs,
        }
    }

    /// Encodes a row-major bitmap.
    pub fn encode(bits: &[bool], height: u32, width: u32) -> Result<Self> {
        let area = height as usize * width as usize;
        if bits.len() != area {
            return Err(Error::Shape(format!(
                "bitmap has {} pixels, expected {height}x{width}={area}",
                bits.len()
            )));
        }
        let mut builder = RunBuilder::new();
        for &b in bits {
            builder.push(b);
        }
        Ok(Self {
            height,
            width,
            runs: builder.finish(),
        })
    }

    pub fn from_grid(grid: &BitGrid) -> Self {
        // dimensions always agree for a well-formed grid
        Self::encode(grid.bits(), grid.height() as u32, grid.width() as u32)
            .expect("BitGrid dimensions are consistent")
    }

    pub(crate) fn from_runs_unchecked(height: u32, width: u32, runs: Vec<u32>) -> Self {
        debug_assert!(Self::from_runs(height, width, runs.clone()).is_ok());
        Self {
            height,
            width,
            runs,
        }
    }

    pub fn decode(&self) -> BitGrid {
        let mut bits = Vec::with_capacity(self.area());
        let mut value = false;
        for &run in &self.runs {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        BitGrid {
            height: self.height as usize,
            width: self.width as usize,
            bits,
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.height, self.width)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn into_runs(self) -> Vec<u32> {
        self.runs
    }

    pub fn area(&self) -> usize {
        self.height as usize * self.width as usize
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    /// Foreground runs as `(start, len)` offsets into the row-major pixel array.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut offset = 0usize;
        self.runs.iter().enumerate().filter_map(move |(i, &run)| {
            let start = offset;
            offset += run as usize;
            (i % 2 == 1).then_some((start, run as usize))
        })
    }
}

pub fn rle_encode(bits: &[bool], height: u32, width: u32) -> Result<BinaryMask> {
    BinaryMask::encode(bits, height, width)
}

pub fn rle_decode(mask: &BinaryMask) -> BitGrid {
    mask.decode()
}

/// Per-frame masks of one (video, expression) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    pub video_id: String,
    pub expression_id: String,
    pub masks: Vec<BinaryMask>,
}

impl MaskSequence {
    pub fn new(video_id: impl Into<String>, expression_id: impl Into<String>, masks: Vec<BinaryMask>) -> Self {
        Self {
            video_id: video_id.into(),
            expression_id: expression_id.into(),
            masks,
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Checks length and per-frame dimensions against `video`.
    pub fn validate_against(&self, video: &VideoSequence) -> Result<()> {
        if self.masks.len() != video.frame_count() {
            return Err(Error::Shape(format!(
                "{}/{}: {} masks for a {}-frame video",
                self.video_id,
                self.expression_id,
                self.masks.len(),
                video.frame_count()
            )));
        }
        for (t, mask) in self.masks.iter().enumerate() {
            if mask.dims() != (video.height, video.width) {
                return Err(Error::Shape(format!(
                    "{}/{} frame {}: mask is {}x{}, video is {}x{}",
                    self.video_id,
                    self.expression_id,
                    video.frame_ids[t],
                    mask.height(),
                    mask.width(),
                    video.height,
                    video.width
                )));
            }
        }
        Ok(())
    }
}

/// All-background masks for every frame of `video`.
pub fn zero_mask_sequence(video: &VideoSequence, expression_id: &str) -> MaskSequence {
    let mask = BinaryMask::empty(video.height, video.width);
    MaskSequence::new(
        video.video_id.clone(),
        expression_id,
        vec![mask; video.frame_count()],
    )
}

fn mask_format(path: &Path, reason: impl Into<String>) -> Error {
    Error::MaskFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads an 8-bit grayscale or paletted PNG; any nonzero pixel is foreground.
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| mask_format(path, e.to_string()))?;

    let (color, depth) = reader.output_color_type();
    let bits_per_pixel = match (color, depth) {
        (png::ColorType::Grayscale | png::ColorType::Indexed, png::BitDepth::Sixteen) => {
            return Err(mask_format(path, "16-bit masks are not supported"));
        }
        (png::ColorType::Grayscale | png::ColorType::Indexed, d) => d as usize,
        (other, _) => {
            return Err(mask_format(
                path,
                format!("expected a single-channel or paletted PNG, found {other:?}"),
            ));
        }
    };

    let size = reader
        .output_buffer_size()
        .ok_or_else(|| mask_format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| mask_format(path, e.to_string()))?;
    let (width, height) = (info.width, info.height);

    let mut builder = RunBuilder::new();
    for row in buf.chunks_exact(info.line_size).take(height as usize) {
        if bits_per_pixel == 8 {
            for &px in &row[..width as usize] {
                builder.push(px != 0);
            }
        } else {
            let per_byte = 8 / bits_per_pixel;
            let value_mask = (1u8 << bits_per_pixel) - 1;
            for x in 0..width as usize {
                let byte = row[x / per_byte];
                let shift = 8 - bits_per_pixel * (x % per_byte + 1);
                builder.push((byte >> shift) & value_mask != 0);
            }
        }
    }
    Ok(BinaryMask::from_runs_unchecked(height, width, builder.finish()))
}

/// Writes an 8-bit grayscale PNG with foreground = 255 and background = 0.
pub fn save_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut pixels = Vec::with_capacity(mask.area());
    let mut value = 0u8;
    for &run in mask.runs() {
        pixels.extend(std::iter::repeat_n(value, run as usize));
        value ^= 255;
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), mask.width(), mask.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Fast);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => mask_format(path, other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_grid_is_single_background_run() {
        let m = rle_encode(&[false; 16], 4, 4).unwrap();
        assert_eq!(m.runs(), &[16]);
    }

    #[test]
    fn all_one_grid_has_leading_zero_run() {
        let m = rle_encode(&[true; 16], 4, 4).unwrap();
        assert_eq!(m.runs(), &[0, 16]);
        assert_eq!(m, BinaryMask::full(4, 4));
    }

    #[test]
    fn decode_known_run_lists() {
        let zeros = BinaryMask::from_runs(4, 4, vec![16]).unwrap().decode();
        assert_eq!(zeros.count_ones(), 0);
        let ones = BinaryMask::from_runs(4, 4, vec![0, 16]).unwrap().decode();
        assert_eq!(ones.count_ones(), 16);
    }

    #[test]
    fn encode_rejects_size_mismatch() {
        assert!(matches!(rle_encode(&[false; 15], 4, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn invalid_run_lists_are_corrupt() {
        for runs in [vec![], vec![3, 0, 13], vec![15], vec![0, 8, 9]] {
            assert!(
                matches!(BinaryMask::from_runs(4, 4, runs.clone()), Err(Error::CorruptMask(_))),
                "{runs:?}"
            );
        }
    }

    #[test]
    fn deserialize_validates_invariants() {
        let bad = r#"{"height":2,"width":2,"runs":[1,0,3]}"#;
        assert!(serde_json::from_str::<BinaryMask>(bad).is_err());
        let good = r#"{"height":2,"width":2,"runs":[1,3]}"#;
        assert_eq!(serde_json::from_str::<BinaryMask>(good).unwrap().count_ones(), 3);
    }

    #[test]
    fn foreground_runs_offsets() {
        let m = BinaryMask::from_runs(2, 4, vec![1, 2, 3, 2]).unwrap();
        assert_eq!(m.foreground_runs().collect::<Vec<_>>(), vec![(1, 2), (6, 2)]);
        assert_eq!(m.count_ones(), 4);
    }

    #[test]
    fn saved_full_mask_decodes_to_255() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        save_mask_png(&BinaryMask::full(2, 2), &path).unwrap();
        let img = image::open(&path).unwrap().into_luma8();
        assert_eq!(img.as_raw(), &vec![255u8; 4]);
    }

    #[test]
    fn sixteen_bit_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m16.png");
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_pixel(3, 3, image::Luma([1000u16]));
        img.save(&path).unwrap();
        assert!(matches!(load_mask_png(&path), Err(Error::MaskFormat { .. })));
    }

    #[test]
    fn rgba_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        image::RgbaImage::from_pixel(2, 2, image::Rgba([255, 0, 0, 255]))
            .save(&path)
            .unwrap();
        assert!(matches!(load_mask_png(&path), Err(Error::MaskFormat { .. })));
    }

    #[test]
    fn non_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(load_mask_png(&path), Err(Error::MaskFormat { .. })));
    }

    #[test]
    fn paletted_png_uses_index_as_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pal.png");
        let (w, h) = (5u32, 3u32);
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Two);
        enc.set_palette(vec![0, 0, 0, 128, 0, 0, 0, 128, 0]);
        let mut writer = enc.write_header().unwrap();
        // 2 bits per pixel, rows padded to 2 bytes; index 1 and 2 are foreground
        let rows: [[u8; 2]; 3] = [[0b00_01_00_10, 0b00_000000], [0; 2], [0b01_01_01_01, 0b01_000000]];
        writer.write_image_data(&rows.concat()).unwrap();
        writer.finish().unwrap();

        let m = load_mask_png(&path).unwrap();
        let g = m.decode();
        let expected = [
            [false, true, false, true, false],
            [false; 5],
            [true; 5],
        ];
        for (y, row) in expected.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                assert_eq!(g.get(y, x), v, "({y},{x})");
            }
        }
    }

    fn arb_grid(max: usize) -> impl Strategy<Value = (usize, usize, Vec<bool>)> {
        (1..=max, 1..=max).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), proptest::collection::vec(any::<bool>(), h * w))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rle_round_trip((h, w, bits) in arb_grid(16)) {
            let m = rle_encode(&bits, h as u32, w as u32).unwrap();
            let sum: u64 = m.runs().iter().map(|&r| r as u64).sum();
            prop_assert_eq!(sum, (h * w) as u64);
            prop_assert!(m.runs().iter().skip(1).all(|&r| r > 0));
            let decoded = m.decode();
            prop_assert_eq!(decoded.bits(), &bits[..]);
            prop_assert_eq!(BinaryMask::from_grid(&decoded), m);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn png_round_trip((h, w, bits) in arb_grid(24)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.png");
            let m = rle_encode(&bits, h as u32, w as u32).unwrap();
            save_mask_png(&m, &path).unwrap();
            prop_assert_eq!(load_mask_png(&path).unwrap(), m);
        }
    }
}
