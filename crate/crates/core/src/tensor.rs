//! Image and video containers, resampling, and PNG I/O.
//!
//! A [`Frame`] stores interleaved row-major `f64` samples. Pixel data loaded
//! from or saved to disk lives in `[0, 1]`; in-memory frames (gradients,
//! residuals) may hold any finite values. All arithmetic is `f64`; images
//! quantize only at the PNG boundary.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel;

/// A single image: `height * width * channels` interleaved samples.
///
/// Channels are 1 (grayscale) or 3 (RGB). The sample for channel `c` of
/// pixel `(x, y)` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Per-pixel `d loss / d pixel` values; same layout as the [`Frame`] it
/// differentiates. Unlike images, gradient values are not confined to
/// `[0, 1]`.
pub type GradientTensor = Frame;

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!(
                "frame dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "frame channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "frame data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(
                "frame data contains non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 0.0)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Build a frame by evaluating `f(y, x, c)` at every sample.
    pub fn from_fn<F: FnMut(usize, usize, usize) -> f64>(
        height: usize,
        width: usize,
        channels: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of samples (`height * width * channels`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.shape() == other.shape()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Elementwise map into a new frame.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Frame, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// An ordered frame sequence. All frames share one shape.
#[derive(Debug, Clone)]
pub struct VideoClip {
    frames: Vec<Frame>,
    frame_rate: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, frame_rate: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidParameter("clip must have at least one frame".into()));
        }
        let shape = frames[0].shape();
        for (i, f) in frames.iter().enumerate() {
            if f.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    f.shape(),
                    shape
                )));
            }
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

/// A multi-channel feature map stored as channel planes (`[c][y][x]`).
///
/// Frames hold interleaved image data with 1 or 3 channels; feature maps
/// inside the loss extractor and the restoration model need arbitrary
/// channel counts, so they use this planar layout instead.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Convert an interleaved frame into channel planes.
    pub fn from_frame(frame: &Frame) -> Tensor {
        let (h, w, ch) = frame.shape();
        let mut t = Tensor::zeros(ch, h, w);
        for c in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    t.set(c, y, x, frame.get(y, x, c));
                }
            }
        }
        t
    }

    /// Convert channel planes back to an interleaved frame. The channel
    /// count must be 1 or 3.
    pub fn to_frame(&self) -> Result<Frame> {
        let mut f = Frame::zeros(self.height, self.width, self.channels);
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "tensor with {} channels is not frame-convertible",
                self.channels
            )));
        }
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    f.set(y, x, c, self.get(c, y, x));
                }
            }
        }
        Ok(f)
    }
}

// ---------------------------------------------------------------------------
// Bilinear sampling
// ---------------------------------------------------------------------------

/// One bilinear tap: flat pixel index (not sample index) plus its weight.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub y: usize,
    pub x: usize,
    pub weight: f64,
}

/// The four taps of a clamp-to-edge bilinear sample at `(x, y)`.
///
/// Coordinates are clamped to `[0, w-1] x [0, h-1]` before interpolation,
/// which realizes replicate border handling. The same taps drive both the
/// forward sample and its adjoint scatter, so the two are exact transposes.
#[inline]
pub(crate) fn bilinear_taps(height: usize, width: usize, x: f64, y: f64) -> [Tap; 4] {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    [
        Tap { y: y0, x: x0, weight: (1.0 - fx) * (1.0 - fy) },
        Tap { y: y0, x: x1, weight: fx * (1.0 - fy) },
        Tap { y: y1, x: x0, weight: (1.0 - fx) * fy },
        Tap { y: y1, x: x1, weight: fx * fy },
    ]
}

/// Bilinear interpolation of `frame` at the sub-pixel position `(x, y)`;
/// returns one value per channel. Out-of-range coordinates clamp to the
/// border (replicate).
pub fn bilinear_sample(frame: &Frame, x: f64, y: f64) -> Vec<f64> {
    let taps = bilinear_taps(frame.height(), frame.width(), x, y);
    (0..frame.channels())
        .map(|c| {
            taps.iter()
                .map(|t| t.weight * frame.get(t.y, t.x, c))
                .sum()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Downsampling
// ---------------------------------------------------------------------------

/// Halve both dimensions by 2x2 mean pooling. Output dims are
/// `ceil(dim / 2)`; edge blocks of odd-sized inputs average the available
/// pixels.
pub fn downsample_half(frame: &Frame) -> Result<Frame> {
    let (h, w, ch) = frame.shape();
    if h < 2 || w < 2 {
        return Err(Error::InvalidParameter(format!(
            "downsample_half needs height and width >= 2, got {h}x{w}"
        )));
    }
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Frame::zeros(oh, ow, ch);
    let row_len = ow * ch;
    let width = w;
    let height = h;
    parallel::for_each_chunk(out.data_mut(), row_len, |oy, row| {
        for ox in 0..ow {
            for c in 0..ch {
                let mut sum = 0.0;
                let mut count = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let sy = oy * 2 + dy;
                        let sx = ox * 2 + dx;
                        if sy < height && sx < width {
                            sum += frame.get(sy, sx, c);
                            count += 1.0;
                        }
                    }
                }
                row[ox * ch + c] = sum / count;
            }
        }
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

/// Load an 8- or 16-bit grayscale or RGB PNG, mapping samples to `[0, 1]`
/// by the bit-depth maximum.
pub fn load_png(path: &Path) -> Result<Frame> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::CorruptPng {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedPng {
                path: path.to_path_buf(),
                detail: format!("color type {other:?}; only grayscale and RGB are supported"),
            })
        }
    };
    let (depth, peak) = match info.bit_depth {
        png::BitDepth::Eight => (8, 255.0),
        png::BitDepth::Sixteen => (16, 65535.0),
        other => {
            return Err(Error::UnsupportedPng {
                path: path.to_path_buf(),
                detail: format!("bit depth {other:?}; only 8 and 16 bit are supported"),
            })
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame_info = reader.next_frame(&mut buf).map_err(|e| Error::CorruptPng {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (frame_info.width as usize, frame_info.height as usize);
    let n = w * h * channels;
    let data: Vec<f64> = if depth == 8 {
        buf[..n].iter().map(|&b| b as f64 / peak).collect()
    } else {
        // PNG stores 16-bit samples big-endian.
        buf[..n * 2]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / peak)
            .collect()
    };
    Frame::new(h, w, channels, data)
}

/// Save a frame as an 8-bit PNG (grayscale or RGB by channel count).
///
/// All values must already lie in `[0, 1]`; images are quantized with
/// round-to-nearest, so a save/load round trip is within `1/255` per sample.
pub fn save_png(frame: &Frame, path: &Path) -> Result<()> {
    if let Some(bad) = frame.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::ValueOutOfRange(format!(
            "cannot save value {bad} to {}",
            path.display()
        )));
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        frame.width() as u32,
        frame.height() as u32,
    );
    encoder.set_color(match frame.channels() {
        1 => png::ColorType::Grayscale,
        _ => png::ColorType::Rgb,
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(())
}

/// Frame file name inside a clip directory: `frame_00000.png`, ...
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Load a clip from a directory of `frame_XXXXX.png` files, in index order.
pub fn load_clip_dir(dir: &Path) -> Result<VideoClip> {
    if !dir.is_dir() {
        return Err(Error::FileNotFound(dir.to_path_buf()));
    }
    let mut indexed: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".png")) {
            if let Ok(idx) = stem.parse::<usize>() {
                indexed.push((idx, entry.path()));
            }
        }
    }
    if indexed.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no frame_XXXXX.png files in {}",
            dir.display()
        )));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let frames = indexed
        .iter()
        .map(|(_, p)| load_png(p))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, 30.0)
}

/// Write a clip as `frame_XXXXX.png` files, creating the directory.
pub fn save_clip_dir(clip: &VideoClip, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in clip.frames().iter().enumerate() {
        save_png(frame, &dir.join(frame_file_name(i)))?;
    }
    Ok(())
}
