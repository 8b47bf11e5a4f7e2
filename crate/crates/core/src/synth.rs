//! Deterministic synthetic clips: a translating textured scene as ground
//! truth, and a degraded counterpart with drifting moiré gratings, global
//! flicker, and an optional brightness ramp.
//!
//! The degradations reproduce the qualitative behaviour of screen-captured
//! video: interference stripes whose position and strength change from
//! frame to frame, plus genuine photometric change (the ramp) that a
//! temporally consistent restoration must preserve. Everything derives from
//! the config seed via counter-based random numbers, so identical configs
//! give bitwise-identical clips on every platform.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::CounterRng;
use crate::tensor::{Frame, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Texture translation in pixels per frame.
    pub motion: (f64, f64),
    /// Grating frequencies in cycles per pixel; the moiré pattern is the
    /// product of these gratings.
    pub moire_frequencies: Vec<(f64, f64)>,
    /// Peak moiré amplitude added to the clean frame.
    pub moire_amplitude: f64,
    /// Grating phase change per frame, radians.
    pub moire_drift: f64,
    /// Per-frame global gain jitter, +- this amplitude.
    pub flicker_amplitude: f64,
    /// Per-frame global gain delta: frame k is scaled by (1 + ramp)^k.
    pub brightness_ramp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            frames: 12,
            height: 64,
            width: 64,
            motion: (1.0, 0.0),
            moire_frequencies: vec![(0.31, 0.11), (0.17, 0.41)],
            moire_amplitude: 0.2,
            moire_drift: 0.9,
            flicker_amplitude: 0.05,
            brightness_ramp: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidParameter("synth needs at least one frame".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidParameter("synth frame size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.moire_amplitude)
            || !(0.0..=1.0).contains(&self.flicker_amplitude)
        {
            return Err(Error::InvalidParameter(
                "moire and flicker amplitudes must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

// Texture bounds keep room for ramps and flicker before clamping bites.
const TEX_LO: f64 = 0.15;
const TEX_HI: f64 = 0.85;

/// Seeded continuous texture: multi-octave value noise plus a few shapes.
struct Scene {
    noise: CounterRng,
    shapes: Vec<Shape>,
}

enum Shape {
    Disk { cx: f64, cy: f64, r: f64, level: [f64; 3] },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64, level: [f64; 3] },
}

// (cell size, weight) of the value-noise octaves.
const OCTAVES: [(f64, f64); 4] = [(16.0, 0.4), (8.0, 0.3), (4.0, 0.2), (2.0, 0.1)];

impl Scene {
    fn new(seed: u64, height: usize, width: usize) -> Self {
        let shape_rng = CounterRng::new(seed, 1);
        let (h, w) = (height as f64, width as f64);
        let mut shapes = Vec::new();
        let mut ctr = 0u64;
        let mut next = |lo: f64, hi: f64| {
            ctr += 1;
            shape_rng.range_f64(ctr, lo, hi)
        };
        for _ in 0..2 {
            shapes.push(Shape::Disk {
                cx: next(0.0, w),
                cy: next(0.0, h),
                r: next(h / 8.0, h / 3.0),
                level: [next(0.0, 1.0), next(0.0, 1.0), next(0.0, 1.0)],
            });
        }
        for _ in 0..2 {
            let x0 = next(0.0, w * 0.8);
            let y0 = next(0.0, h * 0.8);
            shapes.push(Shape::Rect {
                x0,
                y0,
                x1: x0 + next(w / 8.0, w / 3.0),
                y1: y0 + next(h / 8.0, h / 3.0),
                level: [next(0.0, 1.0), next(0.0, 1.0), next(0.0, 1.0)],
            });
        }
        Self {
            noise: CounterRng::new(seed, 2),
            shapes,
        }
    }

    fn lattice(&self, octave: u64, c: usize, ix: i64, iy: i64) -> f64 {
        let key = octave
            .wrapping_mul(0x9E37_79B9)
            .wrapping_add(c as u64)
            .wrapping_mul(0x85EB_CA6B)
            .wrapping_add(ix as u64)
            .wrapping_mul(0xC2B2_AE35)
            .wrapping_add(iy as u64);
        self.noise.unit_f64(key)
    }

    fn value_noise(&self, x: f64, y: f64, c: usize) -> f64 {
        let mut acc = 0.0;
        for (o, (cell, weight)) in OCTAVES.iter().enumerate() {
            let u = x / cell;
            let v = y / cell;
            let iu = u.floor();
            let iv = v.floor();
            let fu = u - iu;
            let fv = v - iv;
            let (iu, iv) = (iu as i64, iv as i64);
            let v00 = self.lattice(o as u64, c, iu, iv);
            let v10 = self.lattice(o as u64, c, iu + 1, iv);
            let v01 = self.lattice(o as u64, c, iu, iv + 1);
            let v11 = self.lattice(o as u64, c, iu + 1, iv + 1);
            let top = v00 + (v10 - v00) * fu;
            let bot = v01 + (v11 - v01) * fu;
            acc += weight * (top + (bot - top) * fv);
        }
        acc
    }

    /// Texture value in [TEX_LO, TEX_HI] at continuous position `(x, y)`.
    fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let mut v = self.value_noise(x, y, c);
        for shape in &self.shapes {
            match shape {
                Shape::Disk { cx, cy, r, level } => {
                    let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                    if d < *r {
                        // One-pixel soft edge.
                        let t = ((r - d).min(1.0)).max(0.0);
                        v = v + (level[c] - v) * 0.8 * t;
                    }
                }
                Shape::Rect { x0, y0, x1, y1, level } => {
                    if x >= *x0 && x < *x1 && y >= *y0 && y < *y1 {
                        v = v + (level[c] - v) * 0.8;
                    }
                }
            }
        }
        TEX_LO + (TEX_HI - TEX_LO) * v.clamp(0.0, 1.0)
    }
}

/// Generate the clean (ground-truth) clip: the seeded texture translating
/// by `cfg.motion` per frame, scaled by the brightness ramp, clamped to
/// `[0, 1]`.
///
/// Frame `k` equals `clamp(scene(x - k*mx, y - k*my) * (1 + ramp)^k)`:
/// content moves by `+motion` from one frame to the next, and with texture
/// values inside the ramp's headroom the frame means follow the pure gain
/// law `mean_k = mean_0 * (1 + ramp)^k` exactly.
pub fn generate_clean(cfg: &SynthConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let scene = Scene::new(cfg.seed, cfg.height, cfg.width);
    let (h, w) = (cfg.height, cfg.width);
    let frames: Vec<Frame> = (0..cfg.frames)
        .map(|k| {
            let gain = (1.0 + cfg.brightness_ramp).powi(k as i32);
            let ox = k as f64 * cfg.motion.0;
            let oy = k as f64 * cfg.motion.1;
            let mut frame = Frame::zeros(h, w, 3);
            let row_len = w * 3;
            parallel::for_each_chunk(frame.data_mut(), row_len, |y, row| {
                for x in 0..w {
                    for c in 0..3 {
                        let v = scene.sample(x as f64 - ox, y as f64 - oy, c) * gain;
                        row[x * 3 + c] = v.clamp(0.0, 1.0);
                    }
                }
            });
            frame
        })
        .collect();
    VideoClip::new(frames, 30.0)
}

/// Degrade a clean clip with drifting moiré gratings and per-frame flicker:
/// `degraded_k = clamp(clean_k * (1 + flicker_k) + moire_k)` where
/// `moire_k(x, y, c) = a_k * prod_j cos(2 pi (fx_j x + fy_j y) + phi_j +
/// k * drift + c * 2 pi / 3)`. The per-frame amplitude `a_k` jitters in
/// `[amplitude/2, amplitude]`, and the channel phase offset gives the
/// stripes their colour.
pub fn degrade(clean: &VideoClip, cfg: &SynthConfig) -> Result<VideoClip> {
    cfg.validate()?;
    let (h, w, ch) = clean.shape();
    let phase_rng = CounterRng::new(cfg.seed, 3);
    let jitter_rng = CounterRng::new(cfg.seed, 4);
    let flicker_rng = CounterRng::new(cfg.seed, 5);
    let phases: Vec<f64> = (0..cfg.moire_frequencies.len())
        .map(|j| phase_rng.range_f64(j as u64, 0.0, TAU))
        .collect();

    let frames: Vec<Frame> = clean
        .frames()
        .iter()
        .enumerate()
        .map(|(k, src)| {
            let amp = cfg.moire_amplitude * jitter_rng.range_f64(k as u64, 0.5, 1.0);
            let flicker = if cfg.flicker_amplitude > 0.0 {
                flicker_rng.range_f64(k as u64, -cfg.flicker_amplitude, cfg.flicker_amplitude)
            } else {
                0.0
            };
            let mut frame = Frame::zeros(h, w, ch);
            let row_len = w * ch;
            parallel::for_each_chunk(frame.data_mut(), row_len, |y, row| {
                for x in 0..w {
                    for c in 0..ch {
                        let mut pattern = amp;
                        for (j, (fx, fy)) in cfg.moire_frequencies.iter().enumerate() {
                            let angle = TAU * (fx * x as f64 + fy * y as f64)
                                + phases[j]
                                + k as f64 * cfg.moire_drift
                                + c as f64 * TAU / 3.0;
                            pattern *= angle.cos();
                        }
                        let v = src.get(y, x, c) * (1.0 + flicker) + pattern;
                        row[x * ch + c] = v.clamp(0.0, 1.0);
                    }
                }
            });
            frame
        })
        .collect();
    VideoClip::new(frames, clean.frame_rate())
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

fn format_frequencies(freqs: &[(f64, f64)]) -> String {
    freqs
        .iter()
        .map(|(fx, fy)| format!("{fx},{fy}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_frequencies(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for part in text.split(';').filter(|p| !p.trim().is_empty()) {
        let mut nums = part.split(',').map(str::trim);
        let fx = nums
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidParameter(format!("bad frequency pair '{part}'")))?;
        let fy = nums
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::InvalidParameter(format!("bad frequency pair '{part}'")))?;
        if nums.next().is_some() {
            return Err(Error::InvalidParameter(format!("bad frequency pair '{part}'")));
        }
        out.push((fx, fy));
    }
    Ok(out)
}

impl SynthConfig {
    /// Key/value view used by the manifest and the CLI config.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("frames", self.frames.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("motion_x", self.motion.0.to_string()),
            ("motion_y", self.motion.1.to_string()),
            ("moire_frequencies", format_frequencies(&self.moire_frequencies)),
            ("moire_amplitude", self.moire_amplitude.to_string()),
            ("moire_drift", self.moire_drift.to_string()),
            ("flicker_amplitude", self.flicker_amplitude.to_string()),
            ("brightness_ramp", self.brightness_ramp.to_string()),
        ]
    }

    /// Apply one manifest/config key. Unknown keys are an error.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidParameter(format!("bad value '{v}' for {k}"));
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "frames" => self.frames = value.parse().map_err(|_| bad(key, value))?,
            "height" => self.height = value.parse().map_err(|_| bad(key, value))?,
            "width" => self.width = value.parse().map_err(|_| bad(key, value))?,
            "motion_x" => self.motion.0 = value.parse().map_err(|_| bad(key, value))?,
            "motion_y" => self.motion.1 = value.parse().map_err(|_| bad(key, value))?,
            "moire_frequencies" => self.moire_frequencies = parse_frequencies(value)?,
            "moire_amplitude" => self.moire_amplitude = value.parse().map_err(|_| bad(key, value))?,
            "moire_drift" => self.moire_drift = value.parse().map_err(|_| bad(key, value))?,
            "flicker_amplitude" => {
                self.flicker_amplitude = value.parse().map_err(|_| bad(key, value))?
            }
            "brightness_ramp" => {
                self.brightness_ramp = value.parse().map_err(|_| bad(key, value))?
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown synth key '{other}'")))
            }
        }
        Ok(())
    }
}

/// Write the config next to generated clips.
pub fn write_manifest(cfg: &SynthConfig, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (k, v) in cfg.to_key_values() {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse a manifest back into a config.
pub fn read_manifest(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut cfg = SynthConfig::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("manifest line without '=': {line}"))
        })?;
        cfg.set_key(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}
