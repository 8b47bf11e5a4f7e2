//! Frame- and video-level evaluation: PSNR, SSIM, and the flow-warping
//! error.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{flow_consistency_loss, FlowField, OcclusionMask};
use crate::parallel;
use crate::tensor::{Frame, VideoClip};

/// PSNR values are capped here so identical frames stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Warping errors are reported at this scale for readability.
pub const WARPING_ERROR_SCALE: f64 = 1000.0;

/// Per-frame (or per-pair) metric values plus their arithmetic mean.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub name: String,
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, per_frame: Vec<f64>) -> Self {
        let mean = if per_frame.is_empty() {
            0.0
        } else {
            per_frame.iter().sum::<f64>() / per_frame.len() as f64
        };
        Self {
            name: name.into(),
            per_frame,
            mean,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.per_frame.len()
    }
}

/// Peak signal-to-noise ratio in dB with peak 1.0, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.check_same_shape(gt, "psnr")?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Valid-mode separable Gaussian filtering of one channel plane.
fn gauss_filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // Horizontal pass (full rows, valid columns).
    let mut horiz = vec![0.0; h * ow];
    parallel::for_each_chunk(&mut horiz, ow, |y, row| {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * plane[y * w + x + k];
            }
            row[x] = acc;
        }
    });
    // Vertical pass.
    let mut out = vec![0.0; oh * ow];
    parallel::for_each_chunk(&mut out, ow, |y, row| {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + k) * ow + x];
            }
            row[x] = acc;
        }
    });
    out
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, peak 1.0. Windows are evaluated in
/// valid mode (no padding) and channels are averaged.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    pred.check_same_shape(gt, "ssim")?;
    let (h, w, ch) = pred.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} frames, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut channel_means = Vec::with_capacity(ch);
    for c in 0..ch {
        let n = h * w;
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut xx = vec![0.0; n];
        let mut yy = vec![0.0; n];
        let mut xy = vec![0.0; n];
        for py in 0..h {
            for px in 0..w {
                let a = pred.get(py, px, c);
                let b = gt.get(py, px, c);
                let i = py * w + px;
                x[i] = a;
                y[i] = b;
                xx[i] = a * a;
                yy[i] = b * b;
                xy[i] = a * b;
            }
        }
        let mu_x = gauss_filter_valid(&x, h, w, &taps);
        let mu_y = gauss_filter_valid(&y, h, w, &taps);
        let e_xx = gauss_filter_valid(&xx, h, w, &taps);
        let e_yy = gauss_filter_valid(&yy, h, w, &taps);
        let e_xy = gauss_filter_valid(&xy, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let sx = e_xx[i] - mu_x[i] * mu_x[i];
            let sy = e_yy[i] - mu_y[i] * mu_y[i];
            let sxy = e_xy[i] - mu_x[i] * mu_y[i];
            let num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * sxy + c2);
            let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (sx + sy + c2);
            sum += num / den;
        }
        channel_means.push(sum / mu_x.len() as f64);
    }
    Ok(channel_means.iter().sum::<f64>() / ch as f64)
}

/// Flow-warping error of a clip: for each consecutive pair, the masked L1
/// residual between frame `t` and the flow-warped frame `t+1` (the value of
/// the flow-consistency loss), reported per pair and as the clip mean,
/// scaled by [`WARPING_ERROR_SCALE`].
///
/// `flows[t]` must relate frame `t+1` to frame `t`; `masks[t]` weights
/// frame `t`'s pixels.
pub fn warping_error(
    clip: &VideoClip,
    flows: &[FlowField],
    masks: &[OcclusionMask],
) -> Result<MetricReport> {
    let pairs = clip.len() - 1;
    if flows.len() != pairs || masks.len() != pairs {
        return Err(Error::ShapeMismatch(format!(
            "clip with {} frames needs {} flows/masks, got {}/{}",
            clip.len(),
            pairs,
            flows.len(),
            masks.len()
        )));
    }
    let mut per_pair = Vec::with_capacity(pairs);
    for t in 0..pairs {
        let rep = flow_consistency_loss(clip.frame(t), clip.frame(t + 1), &flows[t], &masks[t])?;
        per_pair.push(rep.value * WARPING_ERROR_SCALE);
    }
    Ok(MetricReport::new("warping_error", per_pair))
}

/// Per-frame PSNR of a predicted clip against its reference.
pub fn clip_psnr(pred: &VideoClip, gt: &VideoClip) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "clip lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let values = parallel::map_indices(pred.len(), |i| psnr(pred.frame(i), gt.frame(i)));
    Ok(MetricReport::new(
        "psnr",
        values.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Per-frame SSIM of a predicted clip against its reference.
pub fn clip_ssim(pred: &VideoClip, gt: &VideoClip) -> Result<MetricReport> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "clip lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let values = parallel::map_indices(pred.len(), |i| ssim(pred.frame(i), gt.frame(i)));
    Ok(MetricReport::new(
        "ssim",
        values.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Write the per-frame CSV report: one row per frame with PSNR and SSIM,
/// then a `mean` footer row.
pub fn write_frame_metrics_csv(
    path: &Path,
    psnr_report: &MetricReport,
    ssim_report: &MetricReport,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "frame,psnr,ssim")?;
    for (i, (p, s)) in psnr_report
        .per_frame
        .iter()
        .zip(&ssim_report.per_frame)
        .enumerate()
    {
        writeln!(file, "{i},{p:.6},{s:.6}")?;
    }
    writeln!(file, "mean,{:.6},{:.6}", psnr_report.mean, ssim_report.mean)?;
    Ok(())
}

/// Write the warping-error CSV report: one row per frame pair, then a
/// `mean` footer row.
pub fn write_warping_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "pair,warping_error")?;
    for (i, v) in report.per_frame.iter().enumerate() {
        writeln!(file, "{i},{v:.6}")?;
    }
    writeln!(file, "mean,{:.6}", report.mean)?;
    Ok(())
}
