//! A small, manually differentiated multi-frame restoration model.
//!
//! The model restores the center frame of a three-frame window:
//!
//! 1. Each frame is rearranged space-to-depth (factor 2) to enlarge the
//!    receptive field without discarding information, then encoded by a
//!    shared two-layer convolution stack.
//! 2. A 1x1 head predicts one logit per frame per pixel; the per-pixel
//!    softmax of those logits gives normalized blending weights, and the
//!    aggregated feature is their pixel-wise weighted sum. This lets the
//!    model pick whichever frame is least degraded at each location.
//! 3. Two fusion convolutions and three output heads emit residuals at
//!    full, half, and quarter resolution (depth-to-space undoes the input
//!    rearrangement); each output adds its residual to the correspondingly
//!    downsampled center frame, so zero-initialized heads start at the
//!    identity.
//!
//! The reverse pass is written by hand and returns exact gradients for
//! every parameter block, including through the softmax weighting. Training
//! runs Adam with a cosine-annealed learning rate, optionally enabling a
//! temporal consistency term from a configured epoch onward; everything is
//! a pure function of the dataset bytes, the config, and the seed.

use std::io::Write;
use std::path::Path;

use crate::conv::{relu, relu_backward, Conv};
use crate::error::{Error, Result};
use crate::flow::{block_matching_flow, occlusion_mask, read_flo, FlowParams};
use crate::metrics::{clip_psnr, clip_ssim, warping_error, MetricReport};
use crate::recon::{
    training_objective, ExtractorConfig, FeatureExtractor, FlowInputs, ObjectiveConfig,
    ScaledGrads, ScaledOutputs, TemporalLossKind,
};
use crate::tensor::{downsample_half, Frame, Tensor, VideoClip};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// The window is always three frames: previous, center, next.
pub const WINDOW: usize = 3;

/// Trainable parameters. Shapes follow the input channel count (after
/// space-to-depth) and the encoder width.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    input_channels: usize,
    encoder_channels: usize,
    seed: u64,
    revision: u64,
    enc1: Conv,
    enc2: Conv,
    weight_head: Conv,
    fus1: Conv,
    fus2: Conv,
    head_s1: Conv,
    head_s2: Conv,
    head_s3: Conv,
}

impl ToyModelParams {
    /// Seeded initialization: encoder, weight head, and fusion layers draw
    /// small uniform weights; output heads start at zero so the model is
    /// the identity at initialization.
    pub fn init(input_channels: usize, encoder_channels: usize, seed: u64) -> Result<Self> {
        if input_channels != 1 && input_channels != 3 {
            return Err(Error::InvalidParameter(
                "model input channels must be 1 or 3".into(),
            ));
        }
        if encoder_channels == 0 {
            return Err(Error::InvalidParameter("encoder needs at least one channel".into()));
        }
        let c4 = input_channels * 4;
        let e = encoder_channels;
        Ok(Self {
            input_channels,
            encoder_channels,
            seed,
            revision: 0,
            enc1: Conv::seeded(e, c4, 3, 1, seed, 0),
            enc2: Conv::seeded(e, e, 3, 1, seed, 1),
            weight_head: Conv::seeded(WINDOW, WINDOW * e, 1, 1, seed, 2),
            fus1: Conv::seeded(e, e, 3, 1, seed, 3),
            fus2: Conv::seeded(e, e, 3, 1, seed, 4),
            head_s1: Conv::zeros(c4, e, 3, 1),
            head_s2: Conv::zeros(c4, e, 3, 1),
            head_s3: Conv::zeros(c4, e, 3, 1),
        })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn encoder_channels(&self) -> usize {
        self.encoder_channels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|(_, d)| d.len()).sum()
    }

    fn convs(&self) -> [&Conv; 8] {
        [
            &self.enc1,
            &self.enc2,
            &self.weight_head,
            &self.fus1,
            &self.fus2,
            &self.head_s1,
            &self.head_s2,
            &self.head_s3,
        ]
    }

    fn convs_mut(&mut self) -> [&mut Conv; 8] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.weight_head,
            &mut self.fus1,
            &mut self.fus2,
            &mut self.head_s1,
            &mut self.head_s2,
            &mut self.head_s3,
        ]
    }

    const CONV_NAMES: [&'static str; 8] = [
        "enc1",
        "enc2",
        "weight_head",
        "fus1",
        "fus2",
        "head_s1",
        "head_s2",
        "head_s3",
    ];

    /// Named parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(16);
        for (name, conv) in Self::CONV_NAMES.iter().zip(self.convs()) {
            out.push((format!("{name}.weight"), conv.weights.as_slice()));
            out.push((format!("{name}.bias"), conv.bias.as_slice()));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::with_capacity(16);
        for conv in self.convs_mut() {
            let Conv { weights, bias, .. } = conv;
            out.push(weights);
            out.push(bias);
        }
        out
    }

    /// Copies of all block values in checkpoint order (finite-difference
    /// harnesses perturb these and write them back).
    pub fn blocks_values(&self) -> Vec<Vec<f64>> {
        self.blocks().iter().map(|(_, d)| d.to_vec()).collect()
    }

    /// Overwrite every parameter block; lengths must match exactly.
    pub fn set_blocks_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let dests = self.blocks_mut();
        if values.len() != dests.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} blocks, got {}",
                dests.len(),
                values.len()
            )));
        }
        for (dst, src) in dests.into_iter().zip(values) {
            if dst.len() != src.len() {
                return Err(Error::ShapeMismatch(format!(
                    "block length {} vs {}",
                    dst.len(),
                    src.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Gradients (or any per-parameter values) aligned with
/// [`ToyModelParams::blocks`] order.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    blocks: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(params: &ToyModelParams) -> Self {
        Self {
            blocks: params
                .blocks()
                .iter()
                .map(|(_, d)| vec![0.0; d.len()])
                .collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks.iter_mut() {
            for v in b.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

// ---------------------------------------------------------------------------
// Space-to-depth and tensor pooling
// ---------------------------------------------------------------------------

/// Rearrange a frame into 4x the channels at half the resolution.
/// Channel layout: `c * 4 + dy * 2 + dx`.
fn space_to_depth(frame: &Frame) -> Tensor {
    let (h, w, ch) = frame.shape();
    let mut t = Tensor::zeros(ch * 4, h / 2, w / 2);
    for c in 0..ch {
        for dy in 0..2 {
            for dx in 0..2 {
                let oc = c * 4 + dy * 2 + dx;
                for y in 0..h / 2 {
                    for x in 0..w / 2 {
                        t.set(oc, y, x, frame.get(y * 2 + dy, x * 2 + dx, c));
                    }
                }
            }
        }
    }
    t
}

/// Inverse of [`space_to_depth`]. Because the rearrangement is a
/// permutation, this is also its adjoint.
fn depth_to_space(t: &Tensor, channels: usize) -> Frame {
    let h = t.height * 2;
    let w = t.width * 2;
    let mut f = Frame::zeros(h, w, channels);
    for c in 0..channels {
        for dy in 0..2 {
            for dx in 0..2 {
                let ic = c * 4 + dy * 2 + dx;
                for y in 0..t.height {
                    for x in 0..t.width {
                        f.set(y * 2 + dy, x * 2 + dx, c, t.get(ic, y, x));
                    }
                }
            }
        }
    }
    f
}

/// 2x2 mean pooling of a feature tensor (dims must be even).
fn down2_mean(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.channels, t.height / 2, t.width / 2);
    for c in 0..t.channels {
        for y in 0..out.height {
            for x in 0..out.width {
                let s = t.get(c, 2 * y, 2 * x)
                    + t.get(c, 2 * y, 2 * x + 1)
                    + t.get(c, 2 * y + 1, 2 * x)
                    + t.get(c, 2 * y + 1, 2 * x + 1);
                out.set(c, y, x, s * 0.25);
            }
        }
    }
    out
}

fn down2_mean_adjoint(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(g.channels, g.height * 2, g.width * 2);
    for c in 0..g.channels {
        for y in 0..g.height {
            for x in 0..g.width {
                let v = g.get(c, y, x) * 0.25;
                out.set(c, 2 * y, 2 * x, v);
                out.set(c, 2 * y, 2 * x + 1, v);
                out.set(c, 2 * y + 1, 2 * x, v);
                out.set(c, 2 * y + 1, 2 * x + 1, v);
            }
        }
    }
    out
}

fn concat_channels(tensors: &[&Tensor]) -> Tensor {
    let (h, w) = (tensors[0].height, tensors[0].width);
    let channels = tensors.iter().map(|t| t.channels).sum();
    let mut out = Tensor::zeros(channels, h, w);
    let mut offset = 0;
    for t in tensors {
        out.data[offset..offset + t.data.len()].copy_from_slice(&t.data);
        offset += t.data.len();
    }
    out
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

/// Per-frame blending weights, each in (0, 1), summing to 1 per pixel.
pub type WeightMaps = Tensor;

/// Activations cached by [`forward`] for the reverse pass.
pub struct ForwardCache {
    revision: u64,
    inputs: Vec<Tensor>,
    enc_z1: Vec<Tensor>,
    enc_a1: Vec<Tensor>,
    enc_z2: Vec<Tensor>,
    feats: Vec<Tensor>,
    wcat: Tensor,
    weights: Tensor,
    agg: Tensor,
    fus_z1: Tensor,
    fus_a1: Tensor,
    fus_z2: Tensor,
    x1: Tensor,
    x2: Tensor,
    x3: Tensor,
}

fn check_window(params: &ToyModelParams, window: &[Frame; WINDOW]) -> Result<()> {
    let shape = window[0].shape();
    for f in window.iter() {
        if f.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "window frames disagree: {:?} vs {:?}",
                f.shape(),
                shape
            )));
        }
    }
    let (h, w, c) = shape;
    if c != params.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} channels, window has {c}",
            params.input_channels
        )));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidParameter(format!(
            "window dims must be divisible by 8, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Run the model on a three-frame window. Returns the output pyramid, the
/// per-frame blending weight maps, and the cache for [`backward`].
pub fn forward(
    params: &ToyModelParams,
    window: &[Frame; WINDOW],
) -> Result<(ScaledOutputs, WeightMaps, ForwardCache)> {
    check_window(params, window)?;
    let center = &window[1];
    let ch = center.channels();

    let inputs: Vec<Tensor> = window.iter().map(space_to_depth).collect();
    let mut enc_z1 = Vec::with_capacity(WINDOW);
    let mut enc_a1 = Vec::with_capacity(WINDOW);
    let mut enc_z2 = Vec::with_capacity(WINDOW);
    let mut feats = Vec::with_capacity(WINDOW);
    for input in &inputs {
        let z1 = params.enc1.forward(input);
        let a1 = relu(&z1);
        let z2 = params.enc2.forward(&a1);
        let f = relu(&z2);
        enc_z1.push(z1);
        enc_a1.push(a1);
        enc_z2.push(z2);
        feats.push(f);
    }

    let wcat = concat_channels(&[&feats[0], &feats[1], &feats[2]]);
    let logits = params.weight_head.forward(&wcat);

    // Per-pixel softmax over the three frame logits.
    let (fh, fw) = (logits.height, logits.width);
    let mut weights = Tensor::zeros(WINDOW, fh, fw);
    for y in 0..fh {
        for x in 0..fw {
            let l = [
                logits.get(0, y, x),
                logits.get(1, y, x),
                logits.get(2, y, x),
            ];
            let m = l[0].max(l[1]).max(l[2]);
            let e = [(l[0] - m).exp(), (l[1] - m).exp(), (l[2] - m).exp()];
            let sum = e[0] + e[1] + e[2];
            for f in 0..WINDOW {
                weights.set(f, y, x, e[f] / sum);
            }
        }
    }

    // Selective aggregation: pixel-wise weighted sum of frame features.
    let e_ch = params.encoder_channels;
    let mut agg = Tensor::zeros(e_ch, fh, fw);
    for f in 0..WINDOW {
        for c in 0..e_ch {
            for y in 0..fh {
                for x in 0..fw {
                    let i = agg.index(c, y, x);
                    agg.data[i] += weights.get(f, y, x) * feats[f].get(c, y, x);
                }
            }
        }
    }

    let fus_z1 = params.fus1.forward(&agg);
    let fus_a1 = relu(&fus_z1);
    let fus_z2 = params.fus2.forward(&fus_a1);
    let x1 = relu(&fus_z2);
    let x2 = down2_mean(&x1);
    let x3 = down2_mean(&x2);

    let base1 = center.clone();
    let base2 = downsample_half(&base1)?;
    let base3 = downsample_half(&base2)?;

    let add_residual = |base: &Frame, head_out: &Tensor| -> Frame {
        let res = depth_to_space(head_out, ch);
        let mut out = base.clone();
        for (o, r) in out.data_mut().iter_mut().zip(res.data()) {
            *o += r;
        }
        out
    };
    let o1 = add_residual(&base1, &params.head_s1.forward(&x1));
    let o2 = add_residual(&base2, &params.head_s2.forward(&x2));
    let o3 = add_residual(&base3, &params.head_s3.forward(&x3));

    let outputs = ScaledOutputs::new(o1, o2, o3)?;
    let cache = ForwardCache {
        revision: params.revision,
        inputs,
        enc_z1,
        enc_a1,
        enc_z2,
        feats,
        wcat,
        weights: weights.clone(),
        agg,
        fus_z1,
        fus_a1,
        fus_z2,
        x1,
        x2,
        x3,
    };
    Ok((outputs, weights, cache))
}

/// Convenience wrapper: the sliding window centered at `t`, with edge
/// clamping; `single_frame` replaces the neighbours with copies of the
/// center frame.
pub fn window_at(clip: &VideoClip, t: usize, single_frame: bool) -> [Frame; WINDOW] {
    let center = clip.frame(t).clone();
    if single_frame {
        return [center.clone(), center.clone(), center];
    }
    let prev = clip.frame(t.saturating_sub(1)).clone();
    let next = clip.frame((t + 1).min(clip.len() - 1)).clone();
    [prev, center, next]
}

/// Exact reverse-mode gradients for all parameters given output-side
/// gradients on the pyramid. Fails if the cache was produced by an older
/// parameter revision.
pub fn backward(
    params: &ToyModelParams,
    cache: &ForwardCache,
    grads: &ScaledGrads,
) -> Result<ParamGrads> {
    if cache.revision != params.revision {
        return Err(Error::StaleCache);
    }
    let mut out = ParamGrads::zeros_like(params);
    // Block indices in ToyModelParams::blocks order.
    const ENC1: usize = 0;
    const ENC2: usize = 2;
    const WHEAD: usize = 4;
    const FUS1: usize = 6;
    const FUS2: usize = 8;
    const HEAD1: usize = 10;
    const HEAD2: usize = 12;
    const HEAD3: usize = 14;

    // Residual heads: output gradient -> space-to-depth -> conv backward.
    let head_pass = |conv: &Conv, x: &Tensor, g_frame: &Frame, widx: usize, out: &mut ParamGrads| -> Tensor {
        let g_res = space_to_depth(g_frame);
        let g = conv.backward(x, &g_res);
        for (a, b) in out.blocks[widx].iter_mut().zip(&g.weights) {
            *a += b;
        }
        for (a, b) in out.blocks[widx + 1].iter_mut().zip(&g.bias) {
            *a += b;
        }
        g.input
    };
    let gx1_head = head_pass(&params.head_s1, &cache.x1, &grads.s1, HEAD1, &mut out);
    let gx2_head = head_pass(&params.head_s2, &cache.x2, &grads.s2, HEAD2, &mut out);
    let gx3_head = head_pass(&params.head_s3, &cache.x3, &grads.s3, HEAD3, &mut out);

    // Fold the pooled branches back up to x1.
    let mut gx2 = gx2_head;
    let gx3_up = down2_mean_adjoint(&gx3_head);
    for (a, b) in gx2.data.iter_mut().zip(&gx3_up.data) {
        *a += b;
    }
    let mut gx1 = gx1_head;
    let gx2_up = down2_mean_adjoint(&gx2);
    for (a, b) in gx1.data.iter_mut().zip(&gx2_up.data) {
        *a += b;
    }

    // Fusion stack.
    let g_fz2 = relu_backward(&cache.fus_z2, &gx1);
    let g2 = params.fus2.backward(&cache.fus_a1, &g_fz2);
    for (a, b) in out.blocks[FUS2].iter_mut().zip(&g2.weights) {
        *a += b;
    }
    for (a, b) in out.blocks[FUS2 + 1].iter_mut().zip(&g2.bias) {
        *a += b;
    }
    let g_fz1 = relu_backward(&cache.fus_z1, &g2.input);
    let g1 = params.fus1.backward(&cache.agg, &g_fz1);
    for (a, b) in out.blocks[FUS1].iter_mut().zip(&g1.weights) {
        *a += b;
    }
    for (a, b) in out.blocks[FUS1 + 1].iter_mut().zip(&g1.bias) {
        *a += b;
    }
    let g_agg = g1.input;

    // Aggregation: agg = sum_f w_f * feat_f.
    let e_ch = params.encoder_channels;
    let (fh, fw) = (g_agg.height, g_agg.width);
    let mut g_weights = Tensor::zeros(WINDOW, fh, fw);
    let mut g_feats: Vec<Tensor> = (0..WINDOW).map(|_| Tensor::zeros(e_ch, fh, fw)).collect();
    for f in 0..WINDOW {
        for c in 0..e_ch {
            for y in 0..fh {
                for x in 0..fw {
                    let g = g_agg.get(c, y, x);
                    let i = g_weights.index(f, y, x);
                    g_weights.data[i] += g * cache.feats[f].get(c, y, x);
                    let j = g_feats[f].index(c, y, x);
                    g_feats[f].data[j] += g * cache.weights.get(f, y, x);
                }
            }
        }
    }

    // Softmax backward: g_logit = w * (g_w - sum_f w_f g_w_f).
    let mut g_logits = Tensor::zeros(WINDOW, fh, fw);
    for y in 0..fh {
        for x in 0..fw {
            let mut dot = 0.0;
            for f in 0..WINDOW {
                dot += cache.weights.get(f, y, x) * g_weights.get(f, y, x);
            }
            for f in 0..WINDOW {
                let wv = cache.weights.get(f, y, x);
                g_logits.set(f, y, x, wv * (g_weights.get(f, y, x) - dot));
            }
        }
    }

    let gw = params.weight_head.backward(&cache.wcat, &g_logits);
    for (a, b) in out.blocks[WHEAD].iter_mut().zip(&gw.weights) {
        *a += b;
    }
    for (a, b) in out.blocks[WHEAD + 1].iter_mut().zip(&gw.bias) {
        *a += b;
    }
    // Split the concatenated gradient back per frame.
    let plane = e_ch * fh * fw;
    for f in 0..WINDOW {
        let chunk = &gw.input.data[f * plane..(f + 1) * plane];
        for (a, b) in g_feats[f].data.iter_mut().zip(chunk) {
            *a += b;
        }
    }

    // Shared encoder: accumulate over the three frames.
    for f in 0..WINDOW {
        let g_z2 = relu_backward(&cache.enc_z2[f], &g_feats[f]);
        let g2 = params.enc2.backward(&cache.enc_a1[f], &g_z2);
        for (a, b) in out.blocks[ENC2].iter_mut().zip(&g2.weights) {
            *a += b;
        }
        for (a, b) in out.blocks[ENC2 + 1].iter_mut().zip(&g2.bias) {
            *a += b;
        }
        let g_z1 = relu_backward(&cache.enc_z1[f], &g2.input);
        let g1 = params.enc1.backward(&cache.inputs[f], &g_z1);
        for (a, b) in out.blocks[ENC1].iter_mut().zip(&g1.weights) {
            *a += b;
        }
        for (a, b) in out.blocks[ENC1 + 1].iter_mut().zip(&g1.bias) {
            *a += b;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment estimates aligned with the parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &ToyModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .blocks()
            .iter()
            .map(|(_, d)| vec![0.0; d.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut ToyModelParams, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for ((block, m), (v, g)) in params
            .blocks_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(self.v.iter_mut().zip(&grads.blocks))
        {
            for i in 0..block.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                block[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
        params.revision += 1;
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate of the cosine schedule.
    pub base_lr: f64,
    /// Learning-rate floor of the cosine schedule.
    pub min_lr: f64,
    /// Epoch from which the temporal term is applied; `None` means the
    /// final sixth of training.
    pub temporal_activation_epoch: Option<usize>,
    /// Pause after this epoch of the `epochs`-long schedule (for splitting
    /// a run across sessions); `None` runs to completion.
    pub stop_epoch: Option<usize>,
    /// Replace the window with three copies of the center frame.
    pub single_frame: bool,
    pub encoder_channels: usize,
    pub objective: ObjectiveConfig,
    pub extractor: ExtractorConfig,
    /// Block matching / occlusion settings for the flow-based temporal
    /// term and for flow-based evaluation.
    pub flow: FlowParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 1,
            base_lr: 2e-4,
            min_lr: 0.0,
            temporal_activation_epoch: None,
            stop_epoch: None,
            single_frame: false,
            encoder_channels: 16,
            objective: ObjectiveConfig::default(),
            extractor: ExtractorConfig::default(),
            flow: FlowParams::default(),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn activation_epoch(&self) -> usize {
        self.temporal_activation_epoch
            .unwrap_or_else(|| self.epochs - self.epochs / 6)
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.base_lr;
        }
        let progress = epoch as f64 / self.epochs as f64;
        self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "training needs epochs >= 1 and batch size >= 1".into(),
            ));
        }
        if self.base_lr < 0.0 || self.min_lr < 0.0 {
            return Err(Error::InvalidParameter("learning rates must be >= 0".into()));
        }
        if self.activation_epoch() > self.epochs {
            return Err(Error::InvalidParameter(
                "temporal activation epoch beyond training length".into(),
            ));
        }
        if let Some(stop) = self.stop_epoch {
            if stop == 0 || stop > self.epochs {
                return Err(Error::InvalidParameter(format!(
                    "stop epoch {stop} outside 1..={}",
                    self.epochs
                )));
            }
        }
        self.objective.validate()
    }
}

/// Per-epoch averages written to the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub frame_loss: f64,
    pub temporal_loss: f64,
    pub total: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "epoch,frame_loss,temporal_loss,total,learning_rate")?;
        for e in &self.epochs {
            writeln!(
                file,
                "{},{:.9},{:.9},{:.9},{:.9}",
                e.epoch, e.frame_loss, e.temporal_loss, e.total, e.learning_rate
            )?;
        }
        Ok(())
    }
}

/// A resumable training snapshot: parameters plus optimizer state and the
/// next epoch to run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ToyModelParams,
    pub optimizer: Option<AdamState>,
    pub next_epoch: usize,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

fn dataset_checks(dataset: &[(VideoClip, VideoClip)]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (degraded, clean) in dataset {
        if degraded.len() < 3 {
            return Err(Error::ClipTooShort {
                len: degraded.len(),
                needed: 3,
            });
        }
        if degraded.len() != clean.len() || degraded.shape() != clean.shape() {
            return Err(Error::ShapeMismatch(
                "degraded and clean clips must pair up exactly".into(),
            ));
        }
    }
    Ok(())
}

/// Flow and mask for every consecutive pair of a clip, computed from the
/// clean frames by block matching plus forward-backward masking.
fn clip_flow_inputs(clean: &VideoClip, fp: &FlowParams) -> Result<Vec<FlowInputs>> {
    let mut out = Vec::with_capacity(clean.len() - 1);
    for t in 0..clean.len() - 1 {
        let fwd = block_matching_flow(clean.frame(t), clean.frame(t + 1), fp.block, fp.radius)?;
        let bwd = block_matching_flow(clean.frame(t + 1), clean.frame(t), fp.block, fp.radius)?;
        let mask = occlusion_mask(&fwd, &bwd, fp.alpha, fp.beta)?;
        out.push(FlowInputs {
            flow_t1_to_t: fwd,
            mask,
        });
    }
    Ok(out)
}

/// Train from scratch. See [`train_resumed`] for continuing a checkpoint.
pub fn train(dataset: &[(VideoClip, VideoClip)], cfg: &TrainConfig) -> Result<TrainResult> {
    dataset_checks(dataset)?;
    let ch = dataset[0].0.shape().2;
    let params = ToyModelParams::init(ch, cfg.encoder_channels, cfg.seed)?;
    let checkpoint = Checkpoint {
        optimizer: Some(AdamState::new(&params)),
        params,
        next_epoch: 0,
    };
    train_resumed(dataset, cfg, checkpoint)
}

/// Continue training from a checkpoint until `cfg.epochs`. A run split
/// into save/resume segments reproduces the uninterrupted run bit for bit.
pub fn train_resumed(
    dataset: &[(VideoClip, VideoClip)],
    cfg: &TrainConfig,
    checkpoint: Checkpoint,
) -> Result<TrainResult> {
    cfg.validate()?;
    dataset_checks(dataset)?;
    let ch = dataset[0].0.shape().2;
    if checkpoint.params.input_channels != ch {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {} channels, dataset has {ch}",
            checkpoint.params.input_channels
        )));
    }
    let mut params = checkpoint.params;
    let mut adam = checkpoint
        .optimizer
        .unwrap_or_else(|| AdamState::new(&params));

    let extractor = FeatureExtractor::new(cfg.extractor, ch)?;
    let needs_flow = cfg.objective.temporal_kind == TemporalLossKind::Flow;
    let flows: Vec<Vec<FlowInputs>> = if needs_flow {
        dataset
            .iter()
            .map(|(_, clean)| clip_flow_inputs(clean, &cfg.flow))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let activation = cfg.activation_epoch();
    let has_temporal =
        cfg.objective.temporal_kind != TemporalLossKind::None && cfg.objective.lambda_temporal > 0.0;
    let end_epoch = cfg.stop_epoch.unwrap_or(cfg.epochs);
    let mut log = TrainLog::default();
    for epoch in checkpoint.next_epoch..end_epoch {
        let lr = cfg.learning_rate(epoch);
        let temporal_active = epoch >= activation;
        // The temporal term changes the gradient scale abruptly; stale
        // second moments would turn that into oversized steps, so the
        // optimizer state restarts with the new objective.
        if has_temporal && epoch == activation {
            adam = AdamState::new(&params);
        }
        let mut obj_cfg = cfg.objective.clone();
        if !temporal_active {
            obj_cfg.temporal_kind = TemporalLossKind::None;
        }

        let mut acc = ParamGrads::zeros_like(&params);
        let mut acc_count = 0usize;
        let mut sum_frame = 0.0;
        let mut sum_temporal = 0.0;
        let mut sum_total = 0.0;
        let mut samples = 0usize;

        for (ci, (degraded, clean)) in dataset.iter().enumerate() {
            for t in 1..=degraded.len() - 2 {
                let win_t = window_at(degraded, t, cfg.single_frame);
                let win_t1 = window_at(degraded, t + 1, cfg.single_frame);
                let (out_t, _, cache_t) = forward(&params, &win_t)?;
                let (out_t1, _, cache_t1) = forward(&params, &win_t1)?;
                let flow_in = if obj_cfg.temporal_kind == TemporalLossKind::Flow {
                    Some(&flows[ci][t])
                } else {
                    None
                };
                let report = training_objective(
                    &out_t,
                    &out_t1,
                    clean.frame(t),
                    clean.frame(t + 1),
                    &obj_cfg,
                    &extractor,
                    flow_in,
                )?;
                let g_t = backward(&params, &cache_t, &report.grads_t)?;
                let g_t1 = backward(&params, &cache_t1, &report.grads_t1)?;
                acc.add(&g_t);
                acc.add(&g_t1);
                acc_count += 1;

                sum_frame += report.frame_t + report.frame_t1;
                sum_temporal += cfg.objective.lambda_temporal * report.temporal;
                sum_total += report.value;
                samples += 1;

                if acc_count == cfg.batch_size {
                    acc.scale(1.0 / acc_count as f64);
                    adam.apply(&mut params, &acc, lr);
                    acc = ParamGrads::zeros_like(&params);
                    acc_count = 0;
                }
            }
        }
        if acc_count > 0 {
            acc.scale(1.0 / acc_count as f64);
            adam.apply(&mut params, &acc, lr);
        }

        let n = samples.max(1) as f64;
        log.epochs.push(EpochStats {
            epoch,
            frame_loss: sum_frame / n,
            temporal_loss: sum_temporal / n,
            total: sum_total / n,
            learning_rate: lr,
        });
    }

    Ok(TrainResult {
        checkpoint: Checkpoint {
            params,
            optimizer: Some(adam),
            next_epoch: end_epoch,
        },
        log,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Where evaluation flows come from.
#[derive(Debug, Clone)]
pub enum FlowSource {
    /// Block matching on the clean reference clip (default: correspondence
    /// is independent of each model's artifacts).
    BlockMatchClean,
    /// Block matching on the restored clip itself.
    BlockMatchPred,
    /// Precomputed `flow_XXXXX.flo` files (full visibility masks).
    FloDir(std::path::PathBuf),
}

/// Restore every frame of a degraded clip (windows clamp at the clip
/// edges); outputs are clamped to `[0, 1]`.
pub fn restore_clip(
    params: &ToyModelParams,
    degraded: &VideoClip,
    single_frame: bool,
) -> Result<VideoClip> {
    let mut frames = Vec::with_capacity(degraded.len());
    for t in 0..degraded.len() {
        let window = window_at(degraded, t, single_frame);
        let (outputs, _, _) = forward(params, &window)?;
        frames.push(outputs.s1.map(|v| v.clamp(0.0, 1.0)));
    }
    VideoClip::new(frames, degraded.frame_rate())
}

#[derive(Debug, Clone)]
pub struct ClipEval {
    pub psnr: MetricReport,
    pub ssim: MetricReport,
    pub warping: MetricReport,
}

#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub clips: Vec<ClipEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_warping: f64,
}

/// Restore and score a dataset: per-frame PSNR/SSIM against the clean
/// clips and the warping error of the restored clips. Restored clips are
/// written under `out_dir` when given (one `clip_XXX` directory each).
pub fn evaluate(
    params: &ToyModelParams,
    dataset: &[(VideoClip, VideoClip)],
    single_frame: bool,
    flow_source: &FlowSource,
    flow_params: &FlowParams,
    out_dir: Option<&Path>,
) -> Result<EvalBundle> {
    dataset_checks(dataset)?;
    let mut clips = Vec::with_capacity(dataset.len());
    for (idx, (degraded, clean)) in dataset.iter().enumerate() {
        let restored = restore_clip(params, degraded, single_frame)?;
        if let Some(dir) = out_dir {
            crate::tensor::save_clip_dir(&restored, &dir.join(format!("clip_{idx:03}")))?;
        }
        let pairs = restored.len() - 1;
        let mut flows = Vec::with_capacity(pairs);
        let mut masks = Vec::with_capacity(pairs);
        for t in 0..pairs {
            let (flow, mask) = match flow_source {
                FlowSource::BlockMatchClean | FlowSource::BlockMatchPred => {
                    let basis = if matches!(flow_source, FlowSource::BlockMatchClean) {
                        clean
                    } else {
                        &restored
                    };
                    let fwd = block_matching_flow(
                        basis.frame(t),
                        basis.frame(t + 1),
                        flow_params.block,
                        flow_params.radius,
                    )?;
                    let bwd = block_matching_flow(
                        basis.frame(t + 1),
                        basis.frame(t),
                        flow_params.block,
                        flow_params.radius,
                    )?;
                    let mask = occlusion_mask(&fwd, &bwd, flow_params.alpha, flow_params.beta)?;
                    (fwd, mask)
                }
                FlowSource::FloDir(dir) => {
                    let flow = read_flo(&dir.join(crate::flow::flow_file_name(t)))?;
                    let mask = crate::flow::OcclusionMask::full(flow.height(), flow.width());
                    (flow, mask)
                }
            };
            flows.push(flow);
            masks.push(mask);
        }
        clips.push(ClipEval {
            psnr: clip_psnr(&restored, clean)?,
            ssim: clip_ssim(&restored, clean)?,
            warping: warping_error(&restored, &flows, &masks)?,
        });
    }
    let n = clips.len() as f64;
    Ok(EvalBundle {
        mean_psnr: clips.iter().map(|c| c.psnr.mean).sum::<f64>() / n,
        mean_ssim: clips.iter().map(|c| c.ssim.mean).sum::<f64>() / n,
        mean_warping: clips.iter().map(|c| c.warping.mean).sum::<f64>() / n,
        clips,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint file format
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"TRLT";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a checkpoint: magic "TRLT", version, model configuration, then
/// named parameter blocks as 64-bit little-endian floats, then (optionally)
/// the optimizer moments. Round trips are bit-exact.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let p = &ckpt.params;
    buf.extend_from_slice(&(p.input_channels as u32).to_le_bytes());
    buf.extend_from_slice(&(p.encoder_channels as u32).to_le_bytes());
    buf.extend_from_slice(&p.seed.to_le_bytes());
    buf.extend_from_slice(&p.revision.to_le_bytes());
    buf.extend_from_slice(&(ckpt.next_epoch as u32).to_le_bytes());
    let blocks = p.blocks();
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, data) in &blocks {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ckpt.optimizer {
        Some(adam) => {
            buf.push(1);
            buf.extend_from_slice(&adam.step.to_le_bytes());
            for series in [&adam.m, &adam.v] {
                for block in series {
                    buf.extend_from_slice(&(block.len() as u64).to_le_bytes());
                    for v in block {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        None => buf.push(0),
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::BadCheckpoint {
                path: self.path.to_path_buf(),
                detail: "unexpected end of file".into(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let data = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut r = ByteReader {
        data: &data,
        pos: 0,
        path,
    };
    let bad = |detail: &str| Error::BadCheckpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    if r.u32()? != CHECKPOINT_VERSION {
        return Err(bad("unsupported version"));
    }
    let input_channels = r.u32()? as usize;
    let encoder_channels = r.u32()? as usize;
    let seed = r.u64()?;
    let revision = r.u64()?;
    let next_epoch = r.u32()? as usize;
    let block_count = r.u32()? as usize;

    let mut params = ToyModelParams::init(input_channels, encoder_channels, seed)
        .map_err(|e| bad(&format!("bad model config: {e}")))?;
    params.revision = revision;
    {
        let expected = params.blocks();
        if block_count != expected.len() {
            return Err(bad(&format!(
                "expected {} blocks, file has {block_count}",
                expected.len()
            )));
        }
    }
    let expected_names: Vec<(String, usize)> = params
        .blocks()
        .iter()
        .map(|(n, d)| (n.clone(), d.len()))
        .collect();
    let mut loaded: Vec<Vec<f64>> = Vec::with_capacity(block_count);
    for (name, len) in &expected_names {
        let name_len = r.u16()? as usize;
        let got_name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| bad("non-utf8 block name"))?
            .to_string();
        if got_name != *name {
            return Err(bad(&format!("expected block '{name}', found '{got_name}'")));
        }
        let got_len = r.u64()? as usize;
        if got_len != *len {
            return Err(bad(&format!(
                "block '{name}' has {got_len} values, expected {len}"
            )));
        }
        loaded.push(r.f64_vec(got_len)?);
    }
    for (dst, src) in params.blocks_mut().into_iter().zip(loaded) {
        *dst = src;
    }

    let has_optimizer = r.take(1)?[0];
    let optimizer = if has_optimizer == 1 {
        let step = r.u64()?;
        let read_series = |r: &mut ByteReader| -> Result<Vec<Vec<f64>>> {
            let mut out = Vec::with_capacity(expected_names.len());
            for (name, len) in &expected_names {
                let got = r.u64()? as usize;
                if got != *len {
                    return Err(bad(&format!("optimizer block '{name}' length mismatch")));
                }
                out.push(r.f64_vec(got)?);
            }
            Ok(out)
        };
        let m = read_series(&mut r)?;
        let v = read_series(&mut r)?;
        Some(AdamState { m, v, step })
    } else {
        None
    };
    Ok(Checkpoint {
        params,
        optimizer,
        next_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::synth::{degrade, generate_clean, SynthConfig};

    fn random_frame(seed: u64, h: usize, w: usize, c: usize) -> Frame {
        let rng = CounterRng::new(seed, 47);
        let mut i = 0;
        Frame::from_fn(h, w, c, |_, _, _| {
            i += 1;
            rng.unit_f64(i)
        })
    }

    fn tiny_window(seed: u64) -> [Frame; 3] {
        [
            random_frame(seed, 8, 8, 3),
            random_frame(seed + 1, 8, 8, 3),
            random_frame(seed + 2, 8, 8, 3),
        ]
    }

    fn tiny_dataset(seed: u64, clips: usize) -> Vec<(VideoClip, VideoClip)> {
        (0..clips)
            .map(|i| {
                let cfg = SynthConfig {
                    seed: seed + i as u64,
                    frames: 5,
                    height: 16,
                    width: 16,
                    motion: (0.5, 0.0),
                    moire_amplitude: 0.2,
                    flicker_amplitude: 0.05,
                    brightness_ramp: 0.005,
                    ..SynthConfig::default()
                };
                let clean = generate_clean(&cfg).unwrap();
                let deg = degrade(&clean, &cfg).unwrap();
                (deg, clean)
            })
            .collect()
    }

    #[test]
    fn weights_are_normalized() {
        let params = ToyModelParams::init(3, 8, 11).unwrap();
        let (_, weights, _) = forward(&params, &tiny_window(1)).unwrap();
        for y in 0..weights.height {
            for x in 0..weights.width {
                let mut sum = 0.0;
                for f in 0..3 {
                    let v = weights.get(f, y, x);
                    assert!(v > 0.0 && v < 1.0);
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_heads_make_identity() {
        let params = ToyModelParams::init(3, 8, 13).unwrap();
        let window = tiny_window(5);
        let (outputs, _, _) = forward(&params, &window).unwrap();
        assert_eq!(outputs.s1.data(), window[1].data());
        let base2 = downsample_half(&window[1]).unwrap();
        assert_eq!(outputs.s2.data(), base2.data());
    }

    #[test]
    fn identical_frames_are_permutation_invariant() {
        let params = ToyModelParams::init(3, 8, 17).unwrap();
        let f = random_frame(9, 8, 8, 3);
        let (a, _, _) = forward(&params, &[f.clone(), f.clone(), f.clone()]).unwrap();
        let (b, _, _) = forward(&params, &[f.clone(), f.clone(), f]).unwrap();
        assert_eq!(a.s1.data(), b.s1.data());
    }

    #[test]
    fn identical_frames_zero_weight_head_gradient() {
        // With identical inputs the softmax gradient cancels, so the
        // weight-head weights receive exactly zero gradient.
        let params = ToyModelParams::init(3, 8, 19).unwrap();
        let f = random_frame(10, 8, 8, 3);
        let (outputs, _, cache) = forward(&params, &[f.clone(), f.clone(), f]).unwrap();
        let grads = ScaledGrads {
            s1: random_frame(11, 8, 8, 3),
            s2: random_frame(12, outputs.s2.height(), outputs.s2.width(), 3),
            s3: random_frame(13, outputs.s3.height(), outputs.s3.width(), 3),
        };
        let g = backward(&params, &cache, &grads).unwrap();
        // Block 4 is weight_head.weight.
        assert!(g.blocks()[4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_gradient_gives_zero_param_gradients() {
        let params = ToyModelParams::init(3, 8, 23).unwrap();
        let window = tiny_window(20);
        let (outputs, _, cache) = forward(&params, &window).unwrap();
        let grads = ScaledGrads {
            s1: Frame::zeros(8, 8, 3),
            s2: Frame::zeros(outputs.s2.height(), outputs.s2.width(), 3),
            s3: Frame::zeros(outputs.s3.height(), outputs.s3.width(), 3),
        };
        let g = backward(&params, &cache, &grads).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut params = ToyModelParams::init(3, 8, 29).unwrap();
        let window = tiny_window(30);
        let (outputs, _, cache) = forward(&params, &window).unwrap();
        let grads = ScaledGrads {
            s1: Frame::zeros(8, 8, 3),
            s2: Frame::zeros(outputs.s2.height(), outputs.s2.width(), 3),
            s3: Frame::zeros(outputs.s3.height(), outputs.s3.width(), 3),
        };
        let mut adam = AdamState::new(&params);
        let g = backward(&params, &cache, &grads).unwrap();
        adam.apply(&mut params, &g, 1e-3);
        assert!(matches!(
            backward(&params, &cache, &grads),
            Err(Error::StaleCache)
        ));
    }

    /// Weighted-sum loss over all pyramid levels keeps the check linear in
    /// the outputs (no L1 kinks), while exercising every backward path.
    fn weighted_loss(outputs: &ScaledOutputs, w: &ScaledGrads) -> f64 {
        let dot = |a: &Frame, b: &Frame| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        dot(&outputs.s1, &w.s1) + dot(&outputs.s2, &w.s2) + dot(&outputs.s3, &w.s3)
    }

    #[test]
    fn backward_matches_finite_differences_per_group() {
        // Find a seed whose pre-activations sit away from the relu kinks.
        let (params, window, w) = 'found: {
            for seed in 0..50u64 {
                let params = ToyModelParams::init(3, 6, 100 + seed).unwrap();
                let window = tiny_window(200 + seed);
                let (outputs, _, cache) = forward(&params, &window).unwrap();
                let margin_ok = cache
                    .enc_z1
                    .iter()
                    .chain(cache.enc_z2.iter())
                    .chain([&cache.fus_z1, &cache.fus_z2])
                    .all(|z| z.data.iter().all(|v| v.abs() > 1e-4));
                if margin_ok {
                    let w = ScaledGrads {
                        s1: random_frame(300 + seed, 8, 8, 3),
                        s2: random_frame(301 + seed, outputs.s2.height(), outputs.s2.width(), 3),
                        s3: random_frame(302 + seed, outputs.s3.height(), outputs.s3.width(), 3),
                    };
                    break 'found (params, window, w);
                }
            }
            panic!("no kink-free configuration found");
        };

        let (_, _, cache) = forward(&params, &window).unwrap();
        let analytic = backward(&params, &cache, &w).unwrap();
        let step = 1e-5;
        let block_names: Vec<String> = params.blocks().iter().map(|(n, _)| n.clone()).collect();
        for (bi, name) in block_names.iter().enumerate() {
            let len = params.blocks()[bi].1.len();
            // A handful of scattered coordinates per block.
            for i in (0..len).step_by((len / 5).max(1)) {
                let mut plus = params.clone();
                plus.blocks_mut()[bi][i] += step;
                let mut minus = params.clone();
                minus.blocks_mut()[bi][i] -= step;
                let (op, _, _) = forward(&plus, &window).unwrap();
                let (om, _, _) = forward(&minus, &window).unwrap();
                let fd = (weighted_loss(&op, &w) - weighted_loss(&om, &w)) / (2.0 * step);
                let an = analytic.blocks()[bi][i];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    ((fd - an) / denom).abs() < 1e-4,
                    "{name}[{i}]: fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let dataset = tiny_dataset(40, 1);
        let cfg = TrainConfig {
            epochs: 2,
            base_lr: 0.0,
            encoder_channels: 4,
            extractor: ExtractorConfig {
                stages: 2,
                filters: 4,
                seed: 5,
            },
            ..TrainConfig::default()
        };
        let fresh = ToyModelParams::init(3, 4, cfg.seed).unwrap();
        let result = train(&dataset, &cfg).unwrap();
        assert_eq!(result.log.epochs.len(), 2);
        for ((_, a), (_, b)) in fresh.blocks().iter().zip(result.checkpoint.params.blocks()) {
            assert_eq!(a, &b);
        }
    }

    #[test]
    fn training_reduces_frame_loss() {
        let dataset = tiny_dataset(50, 1);
        let cfg = TrainConfig {
            epochs: 12,
            base_lr: 2e-3,
            encoder_channels: 8,
            objective: ObjectiveConfig {
                lambda_temporal: 0.0,
                temporal_kind: TemporalLossKind::None,
                ..ObjectiveConfig::default()
            },
            extractor: ExtractorConfig {
                stages: 2,
                filters: 4,
                seed: 5,
            },
            ..TrainConfig::default()
        };
        let result = train(&dataset, &cfg).unwrap();
        let first = result.log.epochs.first().unwrap().frame_loss;
        let last = result.log.epochs.last().unwrap().frame_loss;
        assert!(last < first, "frame loss did not improve: {first} -> {last}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let dataset = tiny_dataset(60, 1);
        let cfg = TrainConfig {
            epochs: 2,
            base_lr: 1e-3,
            encoder_channels: 4,
            extractor: ExtractorConfig {
                stages: 2,
                filters: 4,
                seed: 5,
            },
            ..TrainConfig::default()
        };
        let a = train(&dataset, &cfg).unwrap();
        let b = train(&dataset, &cfg).unwrap();
        for ((_, x), (_, y)) in a
            .checkpoint
            .params
            .blocks()
            .iter()
            .zip(b.checkpoint.params.blocks())
        {
            for (p, q) in x.iter().zip(y) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(70, 1);
        let cfg = TrainConfig {
            epochs: 1,
            base_lr: 1e-3,
            encoder_channels: 4,
            extractor: ExtractorConfig {
                stages: 2,
                filters: 4,
                seed: 5,
            },
            ..TrainConfig::default()
        };
        let result = train(&dataset, &cfg).unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&result.checkpoint, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.params, result.checkpoint.params);
        assert_eq!(loaded.optimizer, result.checkpoint.optimizer);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(80, 1);
        let mk_cfg = |epochs: usize| TrainConfig {
            epochs,
            base_lr: 1e-3,
            encoder_channels: 4,
            extractor: ExtractorConfig {
                stages: 2,
                filters: 4,
                seed: 5,
            },
            ..TrainConfig::default()
        };
        // Uninterrupted 4-epoch run.
        let full = train(&dataset, &mk_cfg(4)).unwrap();
        // Same 4-epoch schedule paused after epoch 2, checkpointed to
        // disk, then resumed.
        let half_cfg = TrainConfig {
            stop_epoch: Some(2),
            ..mk_cfg(4)
        };
        let half = train(&dataset, &half_cfg).unwrap();
        let p = dir.path().join("half.ckpt");
        save_checkpoint(&half.checkpoint, &p).unwrap();
        let resumed = train_resumed(&dataset, &mk_cfg(4), load_checkpoint(&p).unwrap()).unwrap();
        for ((_, x), (_, y)) in full
            .checkpoint
            .params
            .blocks()
            .iter()
            .zip(resumed.checkpoint.params.blocks())
        {
            for (a, b) in x.iter().zip(y) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn evaluate_perfect_predictions() {
        // degraded == clean and zero heads: restored == clean.
        let dataset: Vec<(VideoClip, VideoClip)> = tiny_dataset(90, 1)
            .into_iter()
            .map(|(_, clean)| (clean.clone(), clean))
            .collect();
        let params = ToyModelParams::init(3, 4, 1).unwrap();
        let bundle = evaluate(
            &params,
            &dataset,
            false,
            &FlowSource::BlockMatchClean,
            &FlowParams::default(),
            None,
        )
        .unwrap();
        assert_eq!(bundle.mean_psnr, 100.0);
        assert!((bundle.mean_ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_is_deterministic() {
        let dataset = tiny_dataset(95, 1);
        let params = ToyModelParams::init(3, 4, 2).unwrap();
        let run = || {
            evaluate(
                &params,
                &dataset,
                false,
                &FlowSource::BlockMatchClean,
                &FlowParams::default(),
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.mean_psnr.to_bits(), b.mean_psnr.to_bits());
        assert_eq!(a.mean_warping.to_bits(), b.mean_warping.to_bits());
    }

    #[test]
    fn train_log_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = TrainLog {
            epochs: vec![EpochStats {
                epoch: 0,
                frame_loss: 0.5,
                temporal_loss: 0.1,
                total: 0.6,
                learning_rate: 1e-3,
            }],
        };
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,frame_loss,temporal_loss,total,learning_rate\n"));
    }
}
