use demoire_core::flow::FlowParams;
use demoire_core::net::{evaluate, train, FlowSource, TrainConfig};
use demoire_core::recon::{ExtractorConfig, ObjectiveConfig, TemporalLossKind};
use demoire_core::synth::{degrade, generate_clean, SynthConfig};
use demoire_core::tensor::VideoClip;
use std::time::Instant;

fn bench_clips(n: usize, seed0: u64) -> Vec<(VideoClip, VideoClip)> {
    (0..n)
        .map(|i| {
            let cfg = SynthConfig {
                seed: seed0 + i as u64,
                frames: 12,
                height: 64,
                width: 64,
                motion: (((i % 3) as f64 - 1.0) * 0.5, (((i / 3) % 3) as f64 - 1.0) * 0.5),
                moire_frequencies: vec![(0.23, 0.08), (0.06, 0.29)],
                moire_amplitude: 0.3,
                flicker_amplitude: 0.15,
                brightness_ramp: 0.012,
                moire_drift: 2.0,
                ..SynthConfig::default()
            };
            let clean = generate_clean(&cfg).unwrap();
            let deg = degrade(&clean, &cfg).unwrap();
            (deg, clean)
        })
        .collect()
}

fn run_one(train_set: &[(VideoClip, VideoClip)], held: &[(VideoClip, VideoClip)],
           kind: TemporalLossKind, lambda_t: f64, single: bool, label: &str) -> (f64, f64) {
    let epochs = 16;
    let cfg = TrainConfig {
        epochs,
        base_lr: 5e-3,
        encoder_channels: 8,
        temporal_activation_epoch: Some(12),
        single_frame: single,
        objective: ObjectiveConfig {
            lambda_temporal: lambda_t,
            temporal_kind: kind,
            ..ObjectiveConfig::default()
        },
        extractor: ExtractorConfig { stages: 2, filters: 4, seed: 77 },
        seed: 1234,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let r = train(train_set, &cfg).unwrap();
    let b = evaluate(&r.checkpoint.params, held, single,
                     &FlowSource::BlockMatchClean, &FlowParams::default(), None).unwrap();
    println!("{label}: psnr {:.4} ssim {:.4} warp {:.4}  ({:?})", b.mean_psnr, b.mean_ssim, b.mean_warping, t.elapsed());
    (b.mean_psnr, b.mean_warping)
}

#[test]
fn probe_trend() {
    let train_set = bench_clips(12, 9000);
    let held = bench_clips(4, 9500);

    let id = demoire_core::net::ToyModelParams::init(3, 8, 1).unwrap();
    let b0 = evaluate(&id, &held, false, &FlowSource::BlockMatchClean, &FlowParams::default(), None).unwrap();
    println!("identity: psnr {:.4} warp {:.4}", b0.mean_psnr, b0.mean_warping);

    let (p_base, w_base) = run_one(&train_set, &held, TemporalLossKind::None, 0.0, false, "baseline ");
    let (p_flow, w_flow) = run_one(&train_set, &held, TemporalLossKind::Flow, 50.0, false, "flow50   ");
    let (p_rel, w_rel) = run_one(&train_set, &held, TemporalLossKind::RelationBasic, 50.0, false, "basic50  ");
    let (p_multi, w_multi) = run_one(&train_set, &held, TemporalLossKind::RelationMultiscale, 50.0, false, "multi50  ");
    let (p_single, w_single) = run_one(&train_set, &held, TemporalLossKind::None, 0.0, true, "single   ");

    println!("\n(a) warp reduction: basic {:.1}%, multi {:.1}% (need >= 10%)",
             100.0 * (1.0 - w_rel / w_base), 100.0 * (1.0 - w_multi / w_base));
    println!("(b) multi psnr drop: {:.4} dB (need <= 0.3)", p_base - p_multi);
    println!("(c) flow drop {:.4} vs multi drop {:.4} (need flow > multi)", p_base - p_flow, p_base - p_multi);
    println!("(d) multi-frame {:.4} vs single {:.4} (need >= single-0.1); warp {:.4} vs {:.4} (need <=)",
             p_base, p_single, w_base, w_single);
}
