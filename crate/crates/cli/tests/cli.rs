//! End-to-end checks of the command-line surface: every subcommand runs
//! through `demoire_cli::run` against real files in temp directories.

use std::path::Path;

use demoire_cli::{run_args, CliError};
use demoire_core::flow::read_flo;
use demoire_core::net::load_checkpoint;
use demoire_core::tensor::{load_clip_dir, save_clip_dir, save_png, Frame, VideoClip};

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

/// Small synth config: quick to generate, trainable at 16x16.
const SMALL_SYNTH: &str = "\
[synth]
seed = 11
frames = 5
height = 16
width = 16
motion_x = 0.5
motion_y = 0
moire_amplitude = 0.2
flicker_amplitude = 0.05
brightness_ramp = 0.005
";

#[test]
fn synth_is_deterministic_and_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_args(&["synth", "--config", &cfg, "--out", out_a.to_str().unwrap()]).unwrap();
    run_args(&["synth", "--config", &cfg, "--out", out_b.to_str().unwrap()]).unwrap();

    for sub in ["gt", "input"] {
        for i in 0..5 {
            let name = format!("{sub}/frame_{i:05}.png");
            let a = std::fs::read(out_a.join(&name)).unwrap();
            let b = std::fs::read(out_b.join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
    // Manifest parses back to the generating config.
    let manifest = demoire_core::synth::read_manifest(&out_a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.seed, 11);
    assert_eq!(manifest.frames, 5);
    assert_eq!(manifest.motion, (0.5, 0.0));
    // Resolved config is echoed beside the outputs.
    assert!(out_a.join("config_resolved.txt").exists());
}

#[test]
fn synth_zero_amplitudes_make_input_equal_gt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[synth]\nseed = 3\nframes = 3\nheight = 16\nwidth = 16\nmoire_amplitude = 0\nflicker_amplitude = 0\n",
    );
    let out = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]).unwrap();
    for i in 0..3 {
        let name = format!("frame_{i:05}.png");
        let gt = std::fs::read(out.join("gt").join(&name)).unwrap();
        let input = std::fs::read(out.join("input").join(&name)).unwrap();
        assert_eq!(gt, input);
    }
}

#[test]
fn loss_zero_for_identical_dirs_and_scale_one_matches_basic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let gt = clip.join("gt");
    let input = clip.join("input");

    // pred == gt -> exactly zero.
    let zero = demoire_cli::commands::cmd_loss(
        &demoire_cli::config::RunConfig::default(),
        &gt,
        &gt,
        demoire_core::recon::TemporalLossKind::RelationMultiscale,
        None,
    )
    .unwrap();
    assert_eq!(zero.mean, 0.0);

    // Multi-scale with scales = 1 equals the basic relation loss.
    let mut single = demoire_cli::config::RunConfig::default();
    single.objective.scales = demoire_core::relation::ScaleSet::pixel_only();
    let multi = demoire_cli::commands::cmd_loss(
        &single,
        &input,
        &gt,
        demoire_core::recon::TemporalLossKind::RelationMultiscale,
        None,
    )
    .unwrap();
    let basic = demoire_cli::commands::cmd_loss(
        &single,
        &input,
        &gt,
        demoire_core::recon::TemporalLossKind::RelationBasic,
        None,
    )
    .unwrap();
    for (a, b) in multi.per_pair.iter().zip(&basic.per_pair) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn loss_known_fixture_value() {
    // Two 1x1 frames on the 1/255 grid:
    // |(O1 - O0) - (G1 - G0)| = |(153-51)/255 - (51-0)/255| = 51/255 = 0.2.
    let dir = tempfile::tempdir().unwrap();
    let mk = |values: [f64; 2], name: &str| {
        let frames = values
            .iter()
            .map(|&v| Frame::constant(1, 1, 1, v))
            .collect::<Vec<_>>();
        let clip = VideoClip::new(frames, 30.0).unwrap();
        let path = dir.path().join(name);
        save_clip_dir(&clip, &path).unwrap();
        path
    };
    let pred = mk([51.0 / 255.0, 153.0 / 255.0], "pred");
    let gt = mk([0.0, 51.0 / 255.0], "gt");
    let outcome = demoire_cli::commands::cmd_loss(
        &demoire_cli::config::RunConfig::default(),
        &pred,
        &gt,
        demoire_core::recon::TemporalLossKind::RelationBasic,
        None,
    )
    .unwrap();
    assert!((outcome.mean - 0.2).abs() < 1e-12);
}

#[test]
fn loss_dumps_scale_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let dump = dir.path().join("scales");
    run_args(&[
        "loss",
        "--config",
        &cfg,
        "--pred",
        clip.join("input").to_str().unwrap(),
        "--gt",
        clip.join("gt").to_str().unwrap(),
        "--kind",
        "relation_multiscale",
        "--dump-scales",
        dump.to_str().unwrap(),
    ])
    .unwrap();
    assert!(dump.join("scales_00000.png").exists());
    assert!(dump.join("config_resolved.txt").exists());
}

#[test]
fn metrics_identical_dirs_give_capped_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let out = dir.path().join("metrics");
    run_args(&[
        "metrics",
        "--config",
        &cfg,
        "--pred",
        clip.join("gt").to_str().unwrap(),
        "--gt",
        clip.join("gt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let csv = std::fs::read_to_string(out.join("frame_metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let psnr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(psnr, 100.0);
    }
}

#[test]
fn metrics_static_clip_zero_warping() {
    let dir = tempfile::tempdir().unwrap();
    let frame = Frame::constant(16, 16, 3, 0.4);
    let clip = VideoClip::new(vec![frame; 4], 30.0).unwrap();
    let clip_dir = dir.path().join("static");
    save_clip_dir(&clip, &clip_dir).unwrap();
    let out = dir.path().join("m");
    run_args(&[
        "metrics",
        "--pred",
        clip_dir.to_str().unwrap(),
        "--gt",
        clip_dir.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let csv = std::fs::read_to_string(out.join("warping_error.csv")).unwrap();
    let mean_line = csv.lines().last().unwrap();
    assert_eq!(mean_line, "mean,0.000000");
}

#[test]
fn align_missing_flags_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let err = run_args(&[
        "align",
        "--captured",
        clip.join("gt").to_str().unwrap(),
        "--source",
        clip.join("gt").to_str().unwrap(),
        "--out",
        dir.path().join("aligned").to_str().unwrap(),
    ])
    .unwrap_err();
    match err {
        CliError::Core(demoire_core::Error::FlagFramesNotFound(which)) => {
            assert_eq!(which, "leading")
        }
        other => panic!("expected flag-frame error, got {other}"),
    }
}

const TRAIN_CFG: &str = "\
[synth]
seed = 11
frames = 5
height = 16
width = 16

[objective]
lambda_temporal = 0
temporal_loss = none

[training]
epochs = 2
base_lr = 0.001
encoder_channels = 4
extractor_stages = 2
extractor_filters = 4
";

fn make_dataset(dir: &Path, cfg_path: &str, clips: usize) {
    for i in 0..clips {
        let text = std::fs::read_to_string(cfg_path)
            .unwrap()
            .replace("seed = 11", &format!("seed = {}", 11 + i));
        let clip_cfg = dir.join(format!("cfg_{i}.cfg"));
        std::fs::write(&clip_cfg, text).unwrap();
        run_args(&[
            "synth",
            "--config",
            clip_cfg.to_str().unwrap(),
            "--out",
            dir.join(format!("data/clip_{i:03}")).to_str().unwrap(),
        ])
        .unwrap();
    }
}

#[test]
fn train_is_deterministic_and_eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRAIN_CFG);
    make_dataset(dir.path(), &cfg, 2);
    let data = dir.path().join("data");

    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    for out in [&out_a, &out_b] {
        run_args(&[
            "train",
            "--config",
            &cfg,
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
    }
    let ckpt_a = std::fs::read(out_a.join("checkpoint.ckpt")).unwrap();
    let ckpt_b = std::fs::read(out_b.join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "identical configs must train identically");
    assert!(out_a.join("train_log.csv").exists());

    let eval_out = dir.path().join("eval");
    run_args(&[
        "eval",
        "--config",
        &cfg,
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        out_a.join("checkpoint.ckpt").to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ])
    .unwrap();
    assert!(eval_out.join("summary.txt").exists());
    assert!(eval_out.join("clip_000/frame_metrics.csv").exists());
    assert!(eval_out.join("restored/clip_000/frame_00000.png").exists());
}

#[test]
fn train_sweep_emits_one_run_per_weight() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{TRAIN_CFG}sweep_lambda_t = 0, 10\n");
    let cfg = write_config(dir.path(), &text);
    make_dataset(dir.path(), &cfg, 1);
    let out = dir.path().join("sweep");
    run_args(&[
        "train",
        "--config",
        &cfg,
        "--data",
        dir.path().join("data").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    assert!(out.join("lt_0/checkpoint.ckpt").exists());
    assert!(out.join("lt_0/train_log.csv").exists());
    assert!(out.join("lt_10/checkpoint.ckpt").exists());
    assert!(out.join("lt_10/train_log.csv").exists());
}

#[test]
fn train_resume_reproduces_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let full_cfg = write_config(dir.path(), TRAIN_CFG);
    make_dataset(dir.path(), &full_cfg, 1);
    let data = dir.path().join("data");

    let full_out = dir.path().join("full");
    run_args(&[
        "train",
        "--config",
        &full_cfg,
        "--data",
        data.to_str().unwrap(),
        "--out",
        full_out.to_str().unwrap(),
    ])
    .unwrap();

    // Same schedule stopped after epoch 1, then resumed to completion.
    let stop_text = format!("{TRAIN_CFG}stop_epoch = 1\n");
    let stop_cfg = dir.path().join("stop.cfg");
    std::fs::write(&stop_cfg, stop_text).unwrap();
    let half_out = dir.path().join("half");
    run_args(&[
        "train",
        "--config",
        stop_cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        half_out.to_str().unwrap(),
    ])
    .unwrap();
    let resumed_out = dir.path().join("resumed");
    run_args(&[
        "train",
        "--config",
        &full_cfg,
        "--data",
        data.to_str().unwrap(),
        "--out",
        resumed_out.to_str().unwrap(),
        "--resume",
        half_out.join("checkpoint.ckpt").to_str().unwrap(),
    ])
    .unwrap();

    let full_ck = load_checkpoint(&full_out.join("checkpoint.ckpt")).unwrap();
    let res_ck = load_checkpoint(&resumed_out.join("checkpoint.ckpt")).unwrap();
    for ((_, a), (_, b)) in full_ck.params.blocks().iter().zip(res_ck.params.blocks()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn flow_command_writes_readable_flo_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let out = dir.path().join("flows");
    run_args(&[
        "flow",
        "--config",
        &cfg,
        "--clip",
        clip.join("gt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    for t in 0..4 {
        let flow = read_flo(&out.join(format!("flow_{t:05}.flo"))).unwrap();
        assert_eq!((flow.height(), flow.width()), (16, 16));
    }
    // The synthetic clip translates by (0.5, 0); integer block matching
    // must stay within the search radius.
    let f = read_flo(&out.join("flow_00000.flo")).unwrap();
    assert!(f.data().iter().all(|&v| v.abs() <= 3.0));
}

#[test]
fn metrics_accepts_flo_flow_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SYNTH);
    let clip = dir.path().join("clip");
    run_args(&["synth", "--config", &cfg, "--out", clip.to_str().unwrap()]).unwrap();
    let flows = dir.path().join("flows");
    run_args(&[
        "flow",
        "--config",
        &cfg,
        "--clip",
        clip.join("gt").to_str().unwrap(),
        "--out",
        flows.to_str().unwrap(),
    ])
    .unwrap();
    let out = dir.path().join("m");
    run_args(&[
        "metrics",
        "--config",
        &cfg,
        "--pred",
        clip.join("input").to_str().unwrap(),
        "--gt",
        clip.join("gt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--flow-source",
        "flo",
        "--flow-dir",
        flows.to_str().unwrap(),
    ])
    .unwrap();
    assert!(out.join("warping_error.csv").exists());
}

#[test]
fn usage_errors_are_reported() {
    assert!(matches!(run_args(&[]), Err(CliError::Usage(_))));
    assert!(matches!(run_args(&["norbert"]), Err(CliError::Usage(_))));
    assert!(matches!(
        run_args(&["synth"]),
        Err(CliError::Usage(_)) // missing --out
    ));
    assert!(matches!(
        run_args(&["synth", "--wat", "1", "--out", "/tmp/x"]),
        Err(CliError::Usage(_))
    ));
}

#[test]
fn binary_exit_codes_follow_errors() {
    let exe = env!("CARGO_BIN_EXE_demoire");
    let ok = std::process::Command::new(exe)
        .arg("help")
        .output()
        .unwrap();
    assert!(ok.status.success());
    let bad = std::process::Command::new(exe)
        .arg("loss")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
}

#[test]
fn config_errors_carry_line_numbers_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[objective]\nlambda_temporal = fifty\n");
    let err = run_args(&[
        "synth",
        "--config",
        &cfg,
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ])
    .unwrap_err();
    match err {
        CliError::Config { line, .. } => assert_eq!(line, 2),
        other => panic!("expected config error, got {other}"),
    }
}

#[test]
fn save_png_guard_means_loaded_frames_are_valid() {
    // Frames loaded from any clip dir always satisfy the [0,1] invariant.
    let dir = tempfile::tempdir().unwrap();
    let f = Frame::constant(4, 4, 3, 0.25);
    let clip = VideoClip::new(vec![f], 30.0).unwrap();
    let clip_dir = dir.path().join("c");
    save_clip_dir(&clip, &clip_dir).unwrap();
    let back = load_clip_dir(&clip_dir).unwrap();
    assert!(back
        .frame(0)
        .data()
        .iter()
        .all(|&v| (0.0..=1.0).contains(&v)));
    // And the writer rejects out-of-range values outright.
    let bad = Frame::constant(2, 2, 1, 1.25);
    assert!(save_png(&bad, &dir.path().join("bad.png")).is_err());
}
