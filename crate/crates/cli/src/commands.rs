//! Subcommand implementations. Each command is an ordinary function so the
//! behaviour is testable without spawning the binary; the CLI wrapper in
//! `lib.rs` only parses flags and forwards here.

use std::path::{Path, PathBuf};

use demoire_core::align::{
    detect_and_match, detect_flag_frames, ransac_homography, read_match_file, reprojection_error,
    sample_intermediate, warp_homography,
};
use demoire_core::flow::{
    block_matching_flow, flow_file_name, occlusion_mask, write_flo, FlowField, OcclusionMask,
};
use demoire_core::metrics::{
    clip_psnr, clip_ssim, warping_error, write_frame_metrics_csv, write_warping_csv,
};
use demoire_core::net::{
    evaluate, load_checkpoint, save_checkpoint, train, train_resumed, FlowSource, TrainResult,
};
use demoire_core::recon::TemporalLossKind;
use demoire_core::relation::{basic_relation_loss, multi_scale_relation_loss};
use demoire_core::synth::{degrade, generate_clean, write_manifest};
use demoire_core::tensor::{load_clip_dir, save_clip_dir, save_png, Frame, VideoClip};
use demoire_core::Error as CoreError;

use crate::config::RunConfig;
use crate::CliError;

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generate a clean/degraded clip pair under `out/gt` and `out/input`,
/// plus the config manifest.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let clean = generate_clean(&cfg.synth)?;
    let degraded = degrade(&clean, &cfg.synth)?;
    std::fs::create_dir_all(out_dir)?;
    save_clip_dir(&clean, &out_dir.join("gt"))?;
    save_clip_dir(&degraded, &out_dir.join("input"))?;
    write_manifest(&cfg.synth, &out_dir.join("manifest.txt"))?;
    cfg.echo_to(out_dir)?;
    println!(
        "synth: {} frames of {}x{} written to {}",
        cfg.synth.frames,
        cfg.synth.height,
        cfg.synth.width,
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

pub struct LossOutcome {
    pub per_pair: Vec<f64>,
    pub mean: f64,
}

fn flow_inputs_for_pair(
    gt: &VideoClip,
    t: usize,
    cfg: &RunConfig,
) -> Result<(FlowField, OcclusionMask), CoreError> {
    let fp = &cfg.flow;
    let fwd = block_matching_flow(gt.frame(t), gt.frame(t + 1), fp.block, fp.radius)?;
    let bwd = block_matching_flow(gt.frame(t + 1), gt.frame(t), fp.block, fp.radius)?;
    let mask = occlusion_mask(&fwd, &bwd, fp.alpha, fp.beta)?;
    Ok((fwd, mask))
}

/// Evaluate a temporal loss over every consecutive pair of the prediction
/// clip against the ground-truth clip. For the flow kind, flows come from
/// block matching on the ground truth. `dump_scales` writes the selected
/// patch-size map of each pair as a grayscale PNG.
pub fn cmd_loss(
    cfg: &RunConfig,
    pred_dir: &Path,
    gt_dir: &Path,
    kind: TemporalLossKind,
    dump_scales: Option<&Path>,
) -> Result<LossOutcome, CliError> {
    let pred = load_clip_dir(pred_dir)?;
    let gt = load_clip_dir(gt_dir)?;
    if pred.len() != gt.len() || pred.shape() != gt.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "prediction clip ({} frames, {:?}) vs ground truth ({} frames, {:?})",
            pred.len(),
            pred.shape(),
            gt.len(),
            gt.shape()
        ))
        .into());
    }
    if pred.len() < 2 {
        return Err(CoreError::ClipTooShort {
            len: pred.len(),
            needed: 2,
        }
        .into());
    }
    if let Some(dir) = dump_scales {
        std::fs::create_dir_all(dir)?;
        cfg.echo_to(dir)?;
    }
    let max_scale = *cfg.objective.scales.sizes().last().unwrap() as f64;
    let mut per_pair = Vec::new();
    for t in 0..pred.len() - 1 {
        let report = match kind {
            TemporalLossKind::None => {
                return Err(CliError::Usage(
                    "loss kind 'none' has nothing to evaluate".into(),
                ))
            }
            TemporalLossKind::RelationBasic => {
                basic_relation_loss(pred.frame(t), pred.frame(t + 1), gt.frame(t), gt.frame(t + 1))?
            }
            TemporalLossKind::RelationMultiscale => multi_scale_relation_loss(
                pred.frame(t),
                pred.frame(t + 1),
                gt.frame(t),
                gt.frame(t + 1),
                &cfg.objective.scales,
            )?,
            TemporalLossKind::Flow => {
                let (flow, mask) = flow_inputs_for_pair(&gt, t, cfg)?;
                demoire_core::flow::flow_consistency_loss(
                    pred.frame(t),
                    pred.frame(t + 1),
                    &flow,
                    &mask,
                )?
            }
        };
        println!("pair {t}: {:.9}", report.value);
        if let Some(dir) = dump_scales {
            let (h, w, ch) = pred.shape();
            let map = Frame::from_fn(h, w, 1, |y, x, _| {
                // Channel 0's selection, normalized by the largest scale.
                report.selected_scale_map[(y * w + x) * ch] as f64 / max_scale
            });
            save_png(&map, &dir.join(format!("scales_{t:05}.png")))?;
        }
        per_pair.push(report.value);
    }
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    println!("mean: {mean:.9}");
    Ok(LossOutcome { per_pair, mean })
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

/// How the `metrics` and `eval` commands obtain flows.
#[derive(Debug, Clone)]
pub enum FlowSourceArg {
    BlockMatchPred,
    BlockMatchGt,
    Flo(PathBuf),
}

impl FlowSourceArg {
    pub fn parse(kind: &str, flow_dir: Option<&Path>) -> Result<Self, CliError> {
        match kind {
            "blockmatch" => Ok(Self::BlockMatchPred),
            "blockmatch_gt" => Ok(Self::BlockMatchGt),
            "flo" => {
                let dir = flow_dir.ok_or_else(|| {
                    CliError::Usage("--flow-dir is required with --flow-source flo".into())
                })?;
                Ok(Self::Flo(dir.to_path_buf()))
            }
            other => Err(CliError::Usage(format!(
                "unknown flow source '{other}' (expected blockmatch, blockmatch_gt, or flo)"
            ))),
        }
    }

    fn to_net(&self) -> FlowSource {
        match self {
            Self::BlockMatchPred => FlowSource::BlockMatchPred,
            Self::BlockMatchGt => FlowSource::BlockMatchClean,
            Self::Flo(dir) => FlowSource::FloDir(dir.clone()),
        }
    }
}

pub struct MetricsOutcome {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_warping: f64,
}

/// PSNR/SSIM per frame plus the warping error, written as CSV reports
/// under `out_dir`.
pub fn cmd_metrics(
    cfg: &RunConfig,
    pred_dir: &Path,
    gt_dir: &Path,
    flow_source: &FlowSourceArg,
    out_dir: &Path,
) -> Result<MetricsOutcome, CliError> {
    let pred = load_clip_dir(pred_dir)?;
    let gt = load_clip_dir(gt_dir)?;
    let psnr_report = clip_psnr(&pred, &gt)?;
    let ssim_report = clip_ssim(&pred, &gt)?;

    let pairs = pred.len() - 1;
    let mut flows = Vec::with_capacity(pairs);
    let mut masks = Vec::with_capacity(pairs);
    for t in 0..pairs {
        let (flow, mask) = match flow_source {
            FlowSourceArg::BlockMatchPred | FlowSourceArg::BlockMatchGt => {
                let basis = if matches!(flow_source, FlowSourceArg::BlockMatchPred) {
                    &pred
                } else {
                    &gt
                };
                let fp = &cfg.flow;
                let fwd = block_matching_flow(basis.frame(t), basis.frame(t + 1), fp.block, fp.radius)?;
                let bwd = block_matching_flow(basis.frame(t + 1), basis.frame(t), fp.block, fp.radius)?;
                let mask = occlusion_mask(&fwd, &bwd, fp.alpha, fp.beta)?;
                (fwd, mask)
            }
            FlowSourceArg::Flo(dir) => {
                let flow = demoire_core::flow::read_flo(&dir.join(flow_file_name(t)))?;
                let mask = OcclusionMask::full(flow.height(), flow.width());
                (flow, mask)
            }
        };
        flows.push(flow);
        masks.push(mask);
    }
    let warp_report = warping_error(&pred, &flows, &masks)?;

    std::fs::create_dir_all(out_dir)?;
    write_frame_metrics_csv(&out_dir.join("frame_metrics.csv"), &psnr_report, &ssim_report)?;
    write_warping_csv(&out_dir.join("warping_error.csv"), &warp_report)?;
    cfg.echo_to(out_dir)?;
    println!(
        "metrics: psnr {:.4} dB, ssim {:.6}, warping error {:.4}",
        psnr_report.mean, ssim_report.mean, warp_report.mean
    );
    Ok(MetricsOutcome {
        mean_psnr: psnr_report.mean,
        mean_ssim: ssim_report.mean,
        mean_warping: warp_report.mean,
    })
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

pub struct FrameAlignment {
    pub matches: usize,
    pub inliers: usize,
    pub mean_reprojection: f64,
}

pub struct AlignOutcome {
    pub frames: Vec<FrameAlignment>,
}

impl AlignOutcome {
    pub fn mean_reprojection(&self) -> f64 {
        self.frames.iter().map(|f| f.mean_reprojection).sum::<f64>() / self.frames.len() as f64
    }
}

/// Run the capture-alignment pipeline: trim the white flag frames from the
/// captured clip, keep the middle frame of each capture triplet, match
/// keypoints against the source frames, fit homographies with RANSAC, and
/// warp the captured frames into source geometry. Writes aligned pairs
/// (`input`/`gt`) and a per-frame report. External matches can be supplied
/// as `match_XXXXX.txt` files in `matches_dir`.
pub fn cmd_align(
    cfg: &RunConfig,
    captured_dir: &Path,
    source_dir: &Path,
    out_dir: &Path,
    matches_dir: Option<&Path>,
) -> Result<AlignOutcome, CliError> {
    let captured = load_clip_dir(captured_dir)?;
    let source = load_clip_dir(source_dir)?;
    let a = &cfg.alignment;

    let (start, end) = detect_flag_frames(&captured, a.white_threshold, a.run_length)?;
    let content = VideoClip::new(
        captured.frames()[start..=end].to_vec(),
        captured.frame_rate(),
    )?;
    let sampled = sample_intermediate(&content, a.sample_ratio)?;
    if sampled.len() != source.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} captured frames after trimming/sampling vs {} source frames",
            sampled.len(),
            source.len()
        ))
        .into());
    }

    std::fs::create_dir_all(out_dir)?;
    let gt_dir = out_dir.join("gt");
    let input_dir = out_dir.join("input");
    std::fs::create_dir_all(&gt_dir)?;
    std::fs::create_dir_all(&input_dir)?;
    let (sh, sw, _) = source.shape();
    let ransac_cfg = a.ransac();

    let mut report_lines = String::new();
    let mut frames = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let matches = match matches_dir {
            Some(dir) => read_match_file(&dir.join(format!("match_{i:05}.txt")))?,
            None => detect_and_match(source.frame(i), sampled.frame(i), a.max_matches)?,
        };
        let (h, inliers) = ransac_homography(&matches, &ransac_cfg)?;
        let mean_reproj = inliers
            .iter()
            .map(|&j| reprojection_error(&h, &matches[j]))
            .sum::<f64>()
            / inliers.len() as f64;
        // h maps source coords to captured coords; inverse-mapping with
        // h^{-1} pulls the captured frame into source geometry.
        let aligned = warp_homography(sampled.frame(i), &h.inverse()?, sh, sw)?;
        save_png(&aligned.map(|v| v.clamp(0.0, 1.0)), &input_dir.join(demoire_core::tensor::frame_file_name(i)))?;
        save_png(source.frame(i), &gt_dir.join(demoire_core::tensor::frame_file_name(i)))?;
        report_lines.push_str(&format!(
            "frame {i}: matches {} inliers {} mean_reprojection {:.6}\n",
            matches.len(),
            inliers.len(),
            mean_reproj
        ));
        frames.push(FrameAlignment {
            matches: matches.len(),
            inliers: inliers.len(),
            mean_reprojection: mean_reproj,
        });
    }
    std::fs::write(out_dir.join("report.txt"), &report_lines)?;
    cfg.echo_to(out_dir)?;
    let outcome = AlignOutcome { frames };
    println!(
        "align: {} pairs, mean reprojection {:.4} px",
        outcome.frames.len(),
        outcome.mean_reprojection()
    );
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

/// Load a dataset root: every subdirectory with `gt/` and `input/` clip
/// directories, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<(VideoClip, VideoClip)>, CliError> {
    if !root.is_dir() {
        return Err(CoreError::FileNotFound(root.to_path_buf()).into());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("gt").is_dir() && p.join("input").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CoreError::EmptyDataset.into());
    }
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let clean = load_clip_dir(&dir.join("gt"))?;
        let degraded = load_clip_dir(&dir.join("input"))?;
        out.push((degraded, clean));
    }
    Ok(out)
}

/// Train one model per temporal weight (the sweep defaults to just the
/// configured weight). Each run writes `checkpoint.ckpt` and
/// `train_log.csv`; sweeps go to `lt_<weight>` subdirectories.
pub fn cmd_train(
    cfg: &RunConfig,
    data_root: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = load_dataset(data_root)?;
    std::fs::create_dir_all(out_dir)?;
    cfg.echo_to(out_dir)?;

    let weights: Vec<f64> = cfg
        .sweep_lambda_t
        .clone()
        .unwrap_or_else(|| vec![cfg.objective.lambda_temporal]);
    let sweeping = weights.len() > 1;
    if sweeping && resume.is_some() {
        return Err(CliError::Usage("--resume cannot be combined with a sweep".into()));
    }

    for weight in weights {
        let mut train_cfg = cfg.train_config();
        train_cfg.objective.lambda_temporal = weight;
        if weight == 0.0 {
            train_cfg.objective.temporal_kind = TemporalLossKind::None;
        }
        let run_dir = if sweeping {
            out_dir.join(format!("lt_{weight}"))
        } else {
            out_dir.to_path_buf()
        };
        std::fs::create_dir_all(&run_dir)?;
        let result: TrainResult = match resume {
            Some(path) => train_resumed(&dataset, &train_cfg, load_checkpoint(path)?)?,
            None => train(&dataset, &train_cfg)?,
        };
        save_checkpoint(&result.checkpoint, &run_dir.join("checkpoint.ckpt"))?;
        result.log.write_csv(&run_dir.join("train_log.csv"))?;
        if let Some(last) = result.log.epochs.last() {
            println!(
                "train[lambda_t={weight}]: epoch {} total {:.6} (lr {:.2e})",
                last.epoch, last.total, last.learning_rate
            );
        }
    }
    Ok(())
}

pub struct EvalOutcome {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_warping: f64,
}

/// Restore a dataset with a trained checkpoint and write per-clip metric
/// CSVs, restored frames, and a summary.
pub fn cmd_eval(
    cfg: &RunConfig,
    data_root: &Path,
    checkpoint: &Path,
    out_dir: &Path,
    flow_source: &FlowSourceArg,
) -> Result<EvalOutcome, CliError> {
    let dataset = load_dataset(data_root)?;
    let ckpt = load_checkpoint(checkpoint)?;
    std::fs::create_dir_all(out_dir)?;
    let restored_dir = out_dir.join("restored");
    let bundle = evaluate(
        &ckpt.params,
        &dataset,
        cfg.single_frame,
        &flow_source.to_net(),
        &cfg.flow,
        Some(&restored_dir),
    )?;
    for (i, clip) in bundle.clips.iter().enumerate() {
        let dir = out_dir.join(format!("clip_{i:03}"));
        std::fs::create_dir_all(&dir)?;
        write_frame_metrics_csv(&dir.join("frame_metrics.csv"), &clip.psnr, &clip.ssim)?;
        write_warping_csv(&dir.join("warping_error.csv"), &clip.warping)?;
    }
    let summary = format!(
        "clips {}\nmean_psnr {:.6}\nmean_ssim {:.6}\nmean_warping_error {:.6}\n",
        bundle.clips.len(),
        bundle.mean_psnr,
        bundle.mean_ssim,
        bundle.mean_warping
    );
    std::fs::write(out_dir.join("summary.txt"), &summary)?;
    cfg.echo_to(out_dir)?;
    println!(
        "eval: psnr {:.4} dB, ssim {:.6}, warping error {:.4}",
        bundle.mean_psnr, bundle.mean_ssim, bundle.mean_warping
    );
    Ok(EvalOutcome {
        mean_psnr: bundle.mean_psnr,
        mean_ssim: bundle.mean_ssim,
        mean_warping: bundle.mean_warping,
    })
}

// ---------------------------------------------------------------------------
// flow
// ---------------------------------------------------------------------------

/// Block-matching flow for every consecutive pair of a clip, written as
/// `flow_XXXXX.flo` (pair `t` relates frame `t+1` to frame `t`).
pub fn cmd_flow(cfg: &RunConfig, clip_dir: &Path, out_dir: &Path) -> Result<(), CliError> {
    let clip = load_clip_dir(clip_dir)?;
    if clip.len() < 2 {
        return Err(CoreError::ClipTooShort {
            len: clip.len(),
            needed: 2,
        }
        .into());
    }
    std::fs::create_dir_all(out_dir)?;
    for t in 0..clip.len() - 1 {
        let flow = block_matching_flow(
            clip.frame(t),
            clip.frame(t + 1),
            cfg.flow.block,
            cfg.flow.radius,
        )?;
        write_flo(&flow, &out_dir.join(flow_file_name(t)))?;
    }
    cfg.echo_to(out_dir)?;
    println!("flow: {} fields written to {}", clip.len() - 1, out_dir.display());
    Ok(())
}
