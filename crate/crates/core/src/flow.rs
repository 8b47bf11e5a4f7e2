//! Flow-based temporal consistency: frame warping, occlusion masking, the
//! classic flow-based loss, a block-matching flow estimator, and Middlebury
//! `.flo` file I/O.
//!
//! Flow semantics: a field relating a target frame `t` to a source frame
//! `t+1` stores, at target pixel `(x, y)`, the displacement `(dx, dy)` such
//! that the corresponding source sample sits at `(x + dx, y + dy)`.
//! [`warp`] therefore brings the source frame into the target frame's
//! coordinates.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel;
use crate::relation::{sign, RelationLossReport};
use crate::tensor::{bilinear_taps, Frame, GradientTensor};

/// Per-pixel 2D displacement field, stored as interleaved `(dx, dy)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for _ in 0..height * width {
            data.push(dx);
            data.push(dy);
        }
        Self { height, width, data }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> (f64, f64)>(
        height: usize,
        width: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data.push(dx);
                data.push(dy);
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, dx: f64, dy: f64) {
        let i = (y * self.width + x) * 2;
        self.data[i] = dx;
        self.data[i + 1] = dy;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Bilinearly sample the field at a sub-pixel position (clamped).
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let taps = bilinear_taps(self.height, self.width, x, y);
        let mut dx = 0.0;
        let mut dy = 0.0;
        for t in taps {
            let (vx, vy) = self.get(t.y, t.x);
            dx += t.weight * vx;
            dy += t.weight * vy;
        }
        (dx, dy)
    }

    fn matches_frame(&self, frame: &Frame) -> bool {
        self.height == frame.height() && self.width == frame.width()
    }
}

/// Binary per-pixel visibility weights: 1 = visible, 0 = occluded.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl OcclusionMask {
    /// All pixels visible.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// All pixels occluded.
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_visible(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set_visible(&mut self, y: usize, x: usize, visible: bool) {
        self.data[y * self.width + x] = visible as u8;
    }

    pub fn visible_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Knobs for block-matching flow estimation and occlusion masking.
#[derive(Debug, Clone, Copy)]
pub struct FlowParams {
    /// Odd block size for SAD matching.
    pub block: usize,
    /// Search radius in pixels.
    pub radius: usize,
    /// Relative forward-backward tolerance.
    pub alpha: f64,
    /// Absolute forward-backward tolerance, px^2.
    pub beta: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            block: 7,
            radius: 3,
            alpha: 0.01,
            beta: 0.5,
        }
    }
}

// ---------------------------------------------------------------------------
// Warping and its adjoint
// ---------------------------------------------------------------------------

/// Warp `source` into the flow's target coordinates:
/// `out(x, y) = bilinear(source, x + dx, y + dy)` with border clamping.
pub fn warp(source: &Frame, flow: &FlowField) -> Result<Frame> {
    if !flow.matches_frame(source) {
        return Err(Error::ShapeMismatch(format!(
            "flow {}x{} vs frame {:?}",
            flow.height,
            flow.width,
            source.shape()
        )));
    }
    let (h, w, ch) = source.shape();
    let mut out = Frame::zeros(h, w, ch);
    let row_len = w * ch;
    parallel::for_each_chunk(out.data_mut(), row_len, |y, row| {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            let taps = bilinear_taps(h, w, x as f64 + dx, y as f64 + dy);
            for c in 0..ch {
                let mut v = 0.0;
                for t in &taps {
                    v += t.weight * source.get(t.y, t.x, c);
                }
                row[x * ch + c] = v;
            }
        }
    });
    Ok(out)
}

/// Exact transpose of [`warp`]: scatters `grad` through the same bilinear
/// taps, so `<warp(x, f), y> == <x, warp_adjoint(y, f)>`.
pub fn warp_adjoint(grad: &GradientTensor, flow: &FlowField) -> Result<GradientTensor> {
    if !flow.matches_frame(grad) {
        return Err(Error::ShapeMismatch(format!(
            "flow {}x{} vs gradient {:?}",
            flow.height,
            flow.width,
            grad.shape()
        )));
    }
    let (h, w, ch) = grad.shape();
    let mut out = Frame::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(y, x);
            let taps = bilinear_taps(h, w, x as f64 + dx, y as f64 + dy);
            for c in 0..ch {
                let g = grad.get(y, x, c);
                if g == 0.0 {
                    continue;
                }
                for t in &taps {
                    let i = out.index(t.y, t.x, c);
                    out.data_mut()[i] += t.weight * g;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Occlusion masking
// ---------------------------------------------------------------------------

/// Forward-backward consistency check.
///
/// A pixel `p` of the target frame is visible iff
/// `|f_fwd(p) + f_bwd(p + f_fwd(p))|^2 <= alpha * (|f_fwd(p)|^2 +
/// |f_bwd(p + f_fwd(p))|^2) + beta`, with `f_bwd` sampled bilinearly.
pub fn occlusion_mask(
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    alpha: f64,
    beta: f64,
) -> Result<OcclusionMask> {
    if flow_fwd.height != flow_bwd.height || flow_fwd.width != flow_bwd.width {
        return Err(Error::ShapeMismatch(format!(
            "forward flow {}x{} vs backward flow {}x{}",
            flow_fwd.height, flow_fwd.width, flow_bwd.height, flow_bwd.width
        )));
    }
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::InvalidParameter(
            "occlusion thresholds must be non-negative".into(),
        ));
    }
    let (h, w) = (flow_fwd.height, flow_fwd.width);
    let mut mask = OcclusionMask::empty(h, w);
    let rows: Vec<Vec<u8>> = parallel::map_indices(h, |y| {
        let mut row = vec![0u8; w];
        for (x, m) in row.iter_mut().enumerate() {
            let (fx, fy) = flow_fwd.get(y, x);
            let (bx, by) = flow_bwd.sample(x as f64 + fx, y as f64 + fy);
            let residual = (fx + bx).powi(2) + (fy + by).powi(2);
            let bound = alpha * (fx * fx + fy * fy + bx * bx + by * by) + beta;
            *m = (residual <= bound) as u8;
        }
        row
    });
    for (y, row) in rows.into_iter().enumerate() {
        for (x, v) in row.into_iter().enumerate() {
            mask.set_visible(y, x, v != 0);
        }
    }
    Ok(mask)
}

// ---------------------------------------------------------------------------
// Flow-based consistency loss
// ---------------------------------------------------------------------------

/// Classic flow-based temporal consistency loss:
/// masked L1 between `warp(O^{t+1})` and `O^t`, normalized by the visible
/// sample count (`max(1, visible pixels * channels)`).
///
/// Gradients: the L1 subgradient flows to `O^t` directly and to `O^{t+1}`
/// through the transpose of the warp's bilinear sampling; occluded pixels
/// contribute nothing.
pub fn flow_consistency_loss(
    out_t: &Frame,
    out_t1: &Frame,
    flow_t1_to_t: &FlowField,
    mask: &OcclusionMask,
) -> Result<RelationLossReport> {
    out_t.check_same_shape(out_t1, "flow loss outputs")?;
    if !flow_t1_to_t.matches_frame(out_t) || mask.height != out_t.height() || mask.width != out_t.width() {
        return Err(Error::ShapeMismatch(format!(
            "flow/mask vs frame {:?}",
            out_t.shape()
        )));
    }
    let (h, w, ch) = out_t.shape();
    let warped = warp(out_t1, flow_t1_to_t)?;
    let denom = (mask.visible_count() * ch).max(1) as f64;

    let mut grad_t = Frame::zeros(h, w, ch);
    let mut masked_sign = Frame::zeros(h, w, ch);
    let mut value = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !mask.is_visible(y, x) {
                continue;
            }
            for c in 0..ch {
                let r = warped.get(y, x, c) - out_t.get(y, x, c);
                value += r.abs();
                let s = sign(r) / denom;
                let i = grad_t.index(y, x, c);
                grad_t.data_mut()[i] = -s;
                masked_sign.data_mut()[i] = s;
            }
        }
    }
    let grad_t1 = warp_adjoint(&masked_sign, flow_t1_to_t)?;
    let n = out_t.len();
    Ok(RelationLossReport {
        value: value / denom,
        grad_out_t: grad_t,
        grad_out_t1: grad_t1,
        selected_scale_map: vec![1; n],
    })
}

// ---------------------------------------------------------------------------
// Block-matching flow
// ---------------------------------------------------------------------------

/// Integer block-matching flow from `target` to `source`.
///
/// The image is tiled into `block x block` cells; each cell's displacement
/// minimizes the sum of absolute differences against the source within
/// `±radius`, with source coordinates clamped at the borders. Ties prefer
/// the smallest displacement magnitude, then lexicographic `(dx, dy)`.
/// Every pixel inherits its containing cell's displacement.
pub fn block_matching_flow(
    target: &Frame,
    source: &Frame,
    block: usize,
    radius: usize,
) -> Result<FlowField> {
    target.check_same_shape(source, "block matching frames")?;
    if block == 0 || block % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "block size must be odd and positive, got {block}"
        )));
    }
    if radius == 0 {
        return Err(Error::InvalidParameter("search radius must be >= 1".into()));
    }
    let (h, w, ch) = target.shape();
    let by = h.div_ceil(block);
    let bx = w.div_ceil(block);
    let r = radius as isize;

    let best: Vec<(f64, f64)> = parallel::map_indices(by * bx, |bi| {
        let cell_y = bi / bx;
        let cell_x = bi % bx;
        let y0 = cell_y * block;
        let x0 = cell_x * block;
        let y1 = (y0 + block).min(h);
        let x1 = (x0 + block).min(w);
        let mut best_sad = f64::INFINITY;
        let mut best_d = (0i64, 0i64);
        let mut best_mag = i64::MAX;
        for dy in -r..=r {
            for dx in -r..=r {
                let mut sad = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for x in x0..x1 {
                        let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        for c in 0..ch {
                            sad += (target.get(y, x, c) - source.get(sy, sx, c)).abs();
                        }
                    }
                }
                let mag = (dx * dx + dy * dy) as i64;
                let cand = (dx as i64, dy as i64);
                let better = sad < best_sad
                    || (sad == best_sad && mag < best_mag)
                    || (sad == best_sad && mag == best_mag && cand < best_d);
                if better {
                    best_sad = sad;
                    best_mag = mag;
                    best_d = cand;
                }
            }
        }
        (best_d.0 as f64, best_d.1 as f64)
    });

    Ok(FlowField::from_fn(h, w, |y, x| {
        best[(y / block) * bx + x / block]
    }))
}

// ---------------------------------------------------------------------------
// Middlebury .flo I/O
// ---------------------------------------------------------------------------

const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Read a Middlebury `.flo` file: magic "PIEH", width and height as 32-bit
/// little-endian integers, then interleaved `(dx, dy)` little-endian f32
/// pairs in row-major order.
pub fn read_flo(path: &Path) -> Result<FlowField> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut reader = BufReader::new(file);
    let bad = |detail: String| Error::BadFlowFile {
        path: path.to_path_buf(),
        detail,
    };
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != FLO_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
    let width = i32::from_le_bytes(word);
    reader.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
    let height = i32::from_le_bytes(word);
    if width <= 0 || height <= 0 {
        return Err(bad(format!("bad dimensions {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    let mut data = Vec::with_capacity(h * w * 2);
    for _ in 0..h * w * 2 {
        reader.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
        data.push(f32::from_le_bytes(word) as f64);
    }
    Ok(FlowField { height: h, width: w, data })
}

/// Write a flow field in Middlebury `.flo` format (f32 components).
pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(FLO_MAGIC)?;
    writer.write_all(&(flow.width as i32).to_le_bytes())?;
    writer.write_all(&(flow.height as i32).to_le_bytes())?;
    for &v in &flow.data {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Flow file name inside a flow directory: `flow_00000.flo` relates frames
/// `t+1 -> t` for pair index `t`.
pub fn flow_file_name(pair_index: usize) -> String {
    format!("flow_{pair_index:05}.flo")
}
