use demoire_core::net::{backward, forward, train, window_at, ToyModelParams, TrainConfig};
use demoire_core::recon::{frame_loss, ExtractorConfig, FeatureExtractor, ObjectiveConfig, TemporalLossKind};
use demoire_core::synth::{degrade, generate_clean, SynthConfig};
use demoire_core::tensor::VideoClip;

fn one_clip() -> (VideoClip, VideoClip) {
    let cfg = SynthConfig { seed: 9000, frames: 12, height: 64, width: 64,
        motion: (0.75, 0.0), moire_amplitude: 0.25, flicker_amplitude: 0.08,
        brightness_ramp: 0.01, moire_drift: 0.8, ..SynthConfig::default() };
    let clean = generate_clean(&cfg).unwrap();
    (degrade(&clean, &cfg).unwrap(), clean)
}

#[test]
fn probe() {
    let (deg, clean) = one_clip();
    let names = ["enc1.w","enc1.b","enc2.w","enc2.b","whead.w","whead.b","fus1.w","fus1.b","fus2.w","fus2.b","h1.w","h1.b","h2.w","h2.b","h3.w","h3.b"];

    // Gradient norms per block at init.
    let params = ToyModelParams::init(3, 8, 1234).unwrap();
    let ex = FeatureExtractor::new(ExtractorConfig { stages: 2, filters: 4, seed: 77 }, 3).unwrap();
    let w = window_at(&deg, 5, false);
    let (out, _, cache) = forward(&params, &w).unwrap();
    let fl = frame_loss(&out, clean.frame(5), &ex, 0.0).unwrap();
    let g = backward(&params, &cache, &fl.grads).unwrap();
    for (n, b) in names.iter().zip(g.blocks()) {
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        println!("init grad {n}: L1 {l1:.6}");
    }

    // After training 12 epochs, same report.
    let cfg = TrainConfig {
        epochs: 12, base_lr: 5e-3, encoder_channels: 8,
        temporal_activation_epoch: Some(12),
        objective: ObjectiveConfig { lambda_perceptual: 0.0, lambda_temporal: 0.0,
            temporal_kind: TemporalLossKind::None, ..ObjectiveConfig::default() },
        extractor: ExtractorConfig { stages: 2, filters: 4, seed: 77 }, seed: 1234,
        ..TrainConfig::default()
    };
    let r = train(&[(deg.clone(), clean.clone())], &cfg).unwrap();
    let tp = r.checkpoint.params;
    let (out2, weights, cache2) = forward(&tp, &w).unwrap();
    let fl2 = frame_loss(&out2, clean.frame(5), &ex, 0.0).unwrap();
    let g2 = backward(&tp, &cache2, &fl2.grads).unwrap();
    for (n, b) in names.iter().zip(g2.blocks()) {
        let l1: f64 = b.iter().map(|v| v.abs()).sum();
        println!("trained grad {n}: L1 {l1:.6}");
    }
    let res: f64 = out2.s1.data().iter().zip(w[1].data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / out2.s1.len() as f64;
    println!("trained mean|residual| per pixel: {res:.6}");
    let wmax = weights.data.iter().cloned().fold(0.0f64, f64::max);
    let wmin = weights.data.iter().cloned().fold(1.0f64, f64::min);
    println!("weight maps range: [{wmin:.4}, {wmax:.4}]");
    // Per-block parameter L1 after training.
    for (n, (_, b)) in names.iter().zip(tp.blocks()) {
        let l1: f64 = b.iter().map(|v| v.abs()).sum::<f64>() / b.len() as f64;
        println!("trained param {n}: mean|.| {l1:.6}");
    }
}
