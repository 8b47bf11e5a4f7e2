//! Frame-level reconstruction loss with deep supervision and the combined
//! training objective.
//!
//! The frame loss regresses a three-level output pyramid against
//! correspondingly downsampled ground truths, with an L1 term and a
//! perceptual term per level. The perceptual features come from a frozen
//! bank of seeded random convolutions with downsampling between stages; a
//! pretrained backbone can serve the same structural role, but a fixed
//! random pyramid keeps the loss self-contained, deterministic, and cheap
//! to differentiate.
//!
//! The training objective combines the frame losses of two consecutive
//! predictions with a weighted temporal consistency term (none, flow-based,
//! or relation-based) evaluated on the full-resolution outputs.

use crate::conv::{relu, relu_backward, Conv};
use crate::error::{Error, Result};
use crate::flow::{flow_consistency_loss, FlowField, OcclusionMask};
use crate::relation::{
    basic_relation_loss, multi_scale_relation_loss, sign, RelationLossReport, ScaleSet,
};
use crate::tensor::{downsample_half, Frame, GradientTensor, Tensor};

/// Configuration of the frozen perceptual feature bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorConfig {
    /// Convolution stages; stage outputs are the matched feature sets.
    pub stages: usize,
    /// Filters per stage.
    pub filters: usize,
    /// Seed for the fixed filter weights.
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            filters: 8,
            seed: 0xFEA7_BA5E,
        }
    }
}

/// Frozen, seeded convolution pyramid. Identical config and seed produce
/// bitwise-identical features; the bank never trains.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    convs: Vec<Conv>,
    config: ExtractorConfig,
    input_channels: usize,
}

impl FeatureExtractor {
    /// Build the bank for frames with `input_channels` channels. The first
    /// stage runs at stride 1; later stages downsample by stride 2.
    pub fn new(config: ExtractorConfig, input_channels: usize) -> Result<Self> {
        if config.stages == 0 || config.filters == 0 {
            return Err(Error::InvalidParameter(
                "extractor needs at least one stage and one filter".into(),
            ));
        }
        let mut convs = Vec::with_capacity(config.stages);
        for l in 0..config.stages {
            let in_ch = if l == 0 { input_channels } else { config.filters };
            let stride = if l == 0 { 1 } else { 2 };
            convs.push(Conv::seeded(
                config.filters,
                in_ch,
                3,
                stride,
                config.seed,
                l as u64,
            ));
        }
        Ok(Self {
            convs,
            config,
            input_channels,
        })
    }

    pub fn config(&self) -> ExtractorConfig {
        self.config
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Post-activation features of every stage.
    pub fn features(&self, frame: &Frame) -> Vec<Tensor> {
        self.forward_cached(frame).1
    }

    /// Returns (pre-activations, post-activations) per stage.
    fn forward_cached(&self, frame: &Frame) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut zs = Vec::with_capacity(self.convs.len());
        let mut xs = Vec::with_capacity(self.convs.len());
        let mut cur = Tensor::from_frame(frame);
        for conv in &self.convs {
            let z = conv.forward(&cur);
            let x = relu(&z);
            cur = x.clone();
            zs.push(z);
            xs.push(x);
        }
        (zs, xs)
    }

    /// Value and input gradient of
    /// `lambda * sum_l mean | phi_l(frame) - phi_l(reference) |`,
    /// where the reference features were computed beforehand.
    fn perceptual_term(
        &self,
        frame: &Frame,
        reference_feats: &[Tensor],
        lambda: f64,
    ) -> (f64, GradientTensor) {
        let (zs, xs) = self.forward_cached(frame);
        let mut value = 0.0;
        // Per-stage output-side gradients of the L1 terms.
        let mut stage_grads: Vec<Tensor> = Vec::with_capacity(xs.len());
        for (x, r) in xs.iter().zip(reference_feats) {
            let n = x.data.len() as f64;
            let mut g = Tensor::zeros(x.channels, x.height, x.width);
            let mut sum = 0.0;
            for i in 0..x.data.len() {
                let d = x.data[i] - r.data[i];
                sum += d.abs();
                g.data[i] = sign(d) * lambda / n;
            }
            value += lambda * sum / n;
            stage_grads.push(g);
        }
        // Reverse through the pyramid, accumulating each stage's L1 term.
        let mut acc = stage_grads.pop().expect("at least one stage");
        for l in (0..self.convs.len()).rev() {
            let gz = relu_backward(&zs[l], &acc);
            let (in_h, in_w) = if l == 0 {
                (frame.height(), frame.width())
            } else {
                (xs[l - 1].height, xs[l - 1].width)
            };
            let gin = self.convs[l].backward_input(&gz, in_h, in_w);
            if l == 0 {
                let grad = gin.to_frame().expect("input channels are frame-compatible");
                return (value, grad);
            }
            acc = stage_grads.pop().expect("stage grad");
            for (a, b) in acc.data.iter_mut().zip(&gin.data) {
                *a += b;
            }
        }
        unreachable!("loop returns at stage 0");
    }
}

/// Prediction pyramid: full, half, and quarter resolution. `s1` is the
/// final output frame.
#[derive(Debug, Clone)]
pub struct ScaledOutputs {
    pub s1: Frame,
    pub s2: Frame,
    pub s3: Frame,
}

impl ScaledOutputs {
    pub fn new(s1: Frame, s2: Frame, s3: Frame) -> Result<Self> {
        let want2 = (s1.height().div_ceil(2), s1.width().div_ceil(2), s1.channels());
        let want3 = (want2.0.div_ceil(2), want2.1.div_ceil(2), s1.channels());
        if s2.shape() != want2 || s3.shape() != want3 {
            return Err(Error::ShapeMismatch(format!(
                "scale pyramid {:?}/{:?}/{:?} does not halve",
                s1.shape(),
                s2.shape(),
                s3.shape()
            )));
        }
        Ok(Self { s1, s2, s3 })
    }

    pub fn scales(&self) -> [&Frame; 3] {
        [&self.s1, &self.s2, &self.s3]
    }
}

/// Gradients for each pyramid level of one prediction.
#[derive(Debug, Clone)]
pub struct ScaledGrads {
    pub s1: GradientTensor,
    pub s2: GradientTensor,
    pub s3: GradientTensor,
}

impl ScaledGrads {
    fn zeros_like(outputs: &ScaledOutputs) -> Self {
        let z = |f: &Frame| Frame::zeros(f.height(), f.width(), f.channels());
        Self {
            s1: z(&outputs.s1),
            s2: z(&outputs.s2),
            s3: z(&outputs.s3),
        }
    }
}

/// Which temporal consistency term the objective applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemporalLossKind {
    None,
    Flow,
    RelationBasic,
    #[default]
    RelationMultiscale,
}

impl TemporalLossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemporalLossKind::None => "none",
            TemporalLossKind::Flow => "flow",
            TemporalLossKind::RelationBasic => "relation_basic",
            TemporalLossKind::RelationMultiscale => "relation_multiscale",
        }
    }
}

/// Weights and choices of the combined objective.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    /// Perceptual weight (lambda).
    pub lambda_perceptual: f64,
    /// Temporal weight (lambda_t).
    pub lambda_temporal: f64,
    /// Patch sizes for the multi-scale relation loss.
    pub scales: ScaleSet,
    pub temporal_kind: TemporalLossKind,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_perceptual: 0.5,
            lambda_temporal: 50.0,
            scales: ScaleSet::default(),
            temporal_kind: TemporalLossKind::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_perceptual < 0.0 || self.lambda_temporal < 0.0 {
            return Err(Error::InvalidParameter(
                "objective weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Flow and mask feeding the flow-based temporal term; the flow relates
/// frame `t+1` to frame `t`.
#[derive(Debug, Clone)]
pub struct FlowInputs {
    pub flow_t1_to_t: FlowField,
    pub mask: OcclusionMask,
}

#[derive(Debug, Clone)]
pub struct FrameLossReport {
    pub value: f64,
    pub grads: ScaledGrads,
}

/// Deep-supervised frame loss: for each pyramid level,
/// `mean |O_si - G_si| + lambda * sum_l mean |phi_l(O_si) - phi_l(G_si)|`,
/// summed over the three levels. Ground truths below full resolution come
/// from repeated 2x2 mean pooling of `gt_full`.
pub fn frame_loss(
    outputs: &ScaledOutputs,
    gt_full: &Frame,
    extractor: &FeatureExtractor,
    lambda_perceptual: f64,
) -> Result<FrameLossReport> {
    outputs.s1.check_same_shape(gt_full, "frame loss vs ground truth")?;
    let g1 = gt_full.clone();
    let g2 = downsample_half(&g1)?;
    let g3 = downsample_half(&g2)?;
    let gts = [&g1, &g2, &g3];

    let mut value = 0.0;
    let mut grads = ScaledGrads::zeros_like(outputs);
    for (i, (o, g)) in outputs.scales().into_iter().zip(gts).enumerate() {
        let n = o.len() as f64;
        let grad = match i {
            0 => &mut grads.s1,
            1 => &mut grads.s2,
            _ => &mut grads.s3,
        };
        let mut l1 = 0.0;
        for j in 0..o.len() {
            let d = o.data()[j] - g.data()[j];
            l1 += d.abs();
            grad.data_mut()[j] = sign(d) / n;
        }
        value += l1 / n;
        if lambda_perceptual > 0.0 {
            let ref_feats = extractor.features(g);
            let (pv, pg) = extractor.perceptual_term(o, &ref_feats, lambda_perceptual);
            value += pv;
            for (a, b) in grad.data_mut().iter_mut().zip(pg.data()) {
                *a += b;
            }
        }
    }
    Ok(FrameLossReport { value, grads })
}

/// Value and component breakdown of the combined objective, with gradients
/// for every pyramid level of both predictions.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub value: f64,
    pub frame_t: f64,
    pub frame_t1: f64,
    pub temporal: f64,
    pub grads_t: ScaledGrads,
    pub grads_t1: ScaledGrads,
}

/// Combined training objective:
/// `L = L_d(t) + L_d(t+1) + lambda_t * L_temporal`, with the temporal term
/// chosen by `cfg.temporal_kind` and evaluated on the full-resolution
/// outputs. Temporal gradients accumulate into both `s1` levels.
pub fn training_objective(
    outputs_t: &ScaledOutputs,
    outputs_t1: &ScaledOutputs,
    gt_t: &Frame,
    gt_t1: &Frame,
    cfg: &ObjectiveConfig,
    extractor: &FeatureExtractor,
    flow_inputs: Option<&FlowInputs>,
) -> Result<ObjectiveReport> {
    cfg.validate()?;
    let ft = frame_loss(outputs_t, gt_t, extractor, cfg.lambda_perceptual)?;
    let ft1 = frame_loss(outputs_t1, gt_t1, extractor, cfg.lambda_perceptual)?;
    let mut grads_t = ft.grads;
    let mut grads_t1 = ft1.grads;

    let temporal: Option<RelationLossReport> = match cfg.temporal_kind {
        TemporalLossKind::None => None,
        TemporalLossKind::Flow => {
            let inputs = flow_inputs.ok_or(Error::MissingFlowInputs)?;
            Some(flow_consistency_loss(
                &outputs_t.s1,
                &outputs_t1.s1,
                &inputs.flow_t1_to_t,
                &inputs.mask,
            )?)
        }
        TemporalLossKind::RelationBasic => Some(basic_relation_loss(
            &outputs_t.s1,
            &outputs_t1.s1,
            gt_t,
            gt_t1,
        )?),
        TemporalLossKind::RelationMultiscale => Some(multi_scale_relation_loss(
            &outputs_t.s1,
            &outputs_t1.s1,
            gt_t,
            gt_t1,
            &cfg.scales,
        )?),
    };

    let temporal_value = match &temporal {
        Some(rep) => {
            let lt = cfg.lambda_temporal;
            for (a, b) in grads_t.s1.data_mut().iter_mut().zip(rep.grad_out_t.data()) {
                *a += lt * b;
            }
            for (a, b) in grads_t1.s1.data_mut().iter_mut().zip(rep.grad_out_t1.data()) {
                *a += lt * b;
            }
            rep.value
        }
        None => 0.0,
    };

    Ok(ObjectiveReport {
        value: ft.value + ft1.value + cfg.lambda_temporal * temporal_value,
        frame_t: ft.value,
        frame_t1: ft1.value,
        temporal: temporal_value,
        grads_t,
        grads_t1,
    })
}
