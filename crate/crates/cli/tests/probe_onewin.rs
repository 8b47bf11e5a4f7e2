use demoire_core::net::{train, TrainConfig};
use demoire_core::recon::{ExtractorConfig, ObjectiveConfig, TemporalLossKind};
use demoire_core::synth::{degrade, generate_clean, SynthConfig};
use demoire_core::tensor::VideoClip;

#[test]
fn probe() {
    let cfg = SynthConfig { seed: 9000, frames: 3, height: 64, width: 64,
        motion: (0.75, 0.0), moire_amplitude: 0.25, flicker_amplitude: 0.08,
        brightness_ramp: 0.01, moire_drift: 0.8, ..SynthConfig::default() };
    let clean = generate_clean(&cfg).unwrap();
    let ds = vec![(degrade(&clean, &cfg).unwrap(), clean)];
    for (label, lr, epochs) in [("lr5e-3 x300", 5e-3, 300usize), ("lr2e-2 x300", 2e-2, 300)] {
        let tc = TrainConfig {
            epochs, base_lr: lr, encoder_channels: 8,
            temporal_activation_epoch: Some(epochs),
            objective: ObjectiveConfig { lambda_perceptual: 0.0, lambda_temporal: 0.0,
                temporal_kind: TemporalLossKind::None, ..ObjectiveConfig::default() },
            extractor: ExtractorConfig { stages: 2, filters: 4, seed: 77 }, seed: 1234,
            ..TrainConfig::default()
        };
        let r = train(&ds, &tc).unwrap();
        let l: Vec<f64> = r.log.epochs.iter().step_by(30).map(|e| (e.frame_loss * 1000.0).round() / 1000.0).collect();
        println!("{label}: every 30th epoch {l:?} final {:.4}", r.log.epochs.last().unwrap().frame_loss);
    }
}
