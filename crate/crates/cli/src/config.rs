//! Line-oriented `key = value` run configuration with `[section]` headers.
//!
//! Sections: `[synth]`, `[objective]`, `[training]`, `[alignment]`,
//! `[metrics]`. Unknown sections or keys are rejected with their line
//! number, as are malformed values. Defaults follow the library defaults
//! (temporal weight 50, perceptual weight 0.5, patch scales 1,3,5,7, ...);
//! every run writes the fully resolved config beside its outputs.

use std::fmt::Write as _;
use std::path::Path;

use demoire_core::flow::FlowParams;
use demoire_core::net::TrainConfig;
use demoire_core::recon::{ExtractorConfig, ObjectiveConfig, TemporalLossKind};
use demoire_core::relation::ScaleSet;
use demoire_core::synth::SynthConfig;

use crate::CliError;

/// Alignment-pipeline settings.
#[derive(Debug, Clone)]
pub struct AlignmentSection {
    pub ransac_iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
    pub white_threshold: f64,
    pub run_length: usize,
    pub sample_ratio: usize,
    pub max_matches: usize,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        let r = demoire_core::align::RansacConfig::default();
        Self {
            ransac_iterations: r.iterations,
            inlier_threshold: r.inlier_threshold,
            min_inliers: r.min_inliers,
            seed: r.seed,
            white_threshold: 0.9,
            run_length: 2,
            sample_ratio: 3,
            max_matches: 256,
        }
    }
}

impl AlignmentSection {
    pub fn ransac(&self) -> demoire_core::align::RansacConfig {
        demoire_core::align::RansacConfig {
            iterations: self.ransac_iterations,
            inlier_threshold: self.inlier_threshold,
            min_inliers: self.min_inliers,
            seed: self.seed,
        }
    }
}

/// Everything the CLI can configure.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub objective: ObjectiveConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub activation_epoch: Option<usize>,
    pub stop_epoch: Option<usize>,
    pub single_frame: bool,
    pub encoder_channels: usize,
    pub extractor: ExtractorConfig,
    pub train_seed: u64,
    /// When set, `train` runs once per temporal weight.
    pub sweep_lambda_t: Option<Vec<f64>>,
    pub alignment: AlignmentSection,
    pub flow: FlowParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            synth: SynthConfig::default(),
            objective: t.objective.clone(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            min_lr: t.min_lr,
            activation_epoch: t.temporal_activation_epoch,
            stop_epoch: t.stop_epoch,
            single_frame: t.single_frame,
            encoder_channels: t.encoder_channels,
            extractor: t.extractor,
            train_seed: t.seed,
            sweep_lambda_t: None,
            alignment: AlignmentSection::default(),
            flow: t.flow,
        }
    }
}

fn config_err(line: usize, message: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        message: message.into(),
    }
}

fn parse_as<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| config_err(line, format!("bad value '{value}' for {key}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(config_err(line, format!("bad boolean '{value}' for {key}"))),
    }
}

impl RunConfig {
    /// Parse config text; errors carry the offending line number.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(lineno, "unterminated section header"))?
                    .trim();
                match name {
                    "synth" | "objective" | "training" | "alignment" | "metrics" => {
                        section = name.to_string();
                    }
                    other => return Err(config_err(lineno, format!("unknown section '[{other}]'"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(lineno, "expected 'key = value'"))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(lineno, &section, key, value)?;
        }
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn apply(&mut self, line: usize, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        match section {
            "synth" => self
                .synth
                .set_key(key, value)
                .map_err(|e| config_err(line, e.to_string())),
            "objective" => self.apply_objective(line, key, value),
            "training" => self.apply_training(line, key, value),
            "alignment" => self.apply_alignment(line, key, value),
            "metrics" => self.apply_metrics(line, key, value),
            "" => Err(config_err(line, "key outside any [section]")),
            _ => unreachable!("section names are validated at the header"),
        }
    }

    fn apply_objective(&mut self, line: usize, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "lambda_perceptual" => self.objective.lambda_perceptual = parse_as(line, key, value)?,
            "lambda_temporal" => self.objective.lambda_temporal = parse_as(line, key, value)?,
            "scales" => {
                let sizes: Result<Vec<usize>, _> = value
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect();
                let sizes =
                    sizes.map_err(|_| config_err(line, format!("bad scale list '{value}'")))?;
                self.objective.scales =
                    ScaleSet::new(sizes).map_err(|e| config_err(line, e.to_string()))?;
            }
            "temporal_loss" => {
                self.objective.temporal_kind = parse_temporal_kind(value)
                    .ok_or_else(|| config_err(line, format!("unknown temporal loss '{value}'")))?;
            }
            other => return Err(config_err(line, format!("unknown objective key '{other}'"))),
        }
        Ok(())
    }

    fn apply_training(&mut self, line: usize, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "epochs" => self.epochs = parse_as(line, key, value)?,
            "batch_size" => self.batch_size = parse_as(line, key, value)?,
            "base_lr" => self.base_lr = parse_as(line, key, value)?,
            "min_lr" => self.min_lr = parse_as(line, key, value)?,
            "activation_epoch" => {
                self.activation_epoch = if value == "auto" {
                    None
                } else {
                    Some(parse_as(line, key, value)?)
                };
            }
            "stop_epoch" => {
                self.stop_epoch = if value == "none" {
                    None
                } else {
                    Some(parse_as(line, key, value)?)
                };
            }
            "single_frame" => self.single_frame = parse_bool(line, key, value)?,
            "encoder_channels" => self.encoder_channels = parse_as(line, key, value)?,
            "extractor_stages" => self.extractor.stages = parse_as(line, key, value)?,
            "extractor_filters" => self.extractor.filters = parse_as(line, key, value)?,
            "extractor_seed" => self.extractor.seed = parse_as(line, key, value)?,
            "seed" => self.train_seed = parse_as(line, key, value)?,
            "sweep_lambda_t" => {
                let weights: Result<Vec<f64>, _> =
                    value.split(',').map(|t| t.trim().parse::<f64>()).collect();
                self.sweep_lambda_t = Some(
                    weights.map_err(|_| config_err(line, format!("bad weight list '{value}'")))?,
                );
            }
            other => return Err(config_err(line, format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    fn apply_alignment(&mut self, line: usize, key: &str, value: &str) -> Result<(), CliError> {
        let a = &mut self.alignment;
        match key {
            "ransac_iterations" => a.ransac_iterations = parse_as(line, key, value)?,
            "inlier_threshold" => a.inlier_threshold = parse_as(line, key, value)?,
            "min_inliers" => a.min_inliers = parse_as(line, key, value)?,
            "seed" => a.seed = parse_as(line, key, value)?,
            "white_threshold" => a.white_threshold = parse_as(line, key, value)?,
            "run_length" => a.run_length = parse_as(line, key, value)?,
            "sample_ratio" => a.sample_ratio = parse_as(line, key, value)?,
            "max_matches" => a.max_matches = parse_as(line, key, value)?,
            other => return Err(config_err(line, format!("unknown alignment key '{other}'"))),
        }
        Ok(())
    }

    fn apply_metrics(&mut self, line: usize, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "block_size" => self.flow.block = parse_as(line, key, value)?,
            "search_radius" => self.flow.radius = parse_as(line, key, value)?,
            "alpha" => self.flow.alpha = parse_as(line, key, value)?,
            "beta" => self.flow.beta = parse_as(line, key, value)?,
            other => return Err(config_err(line, format!("unknown metrics key '{other}'"))),
        }
        Ok(())
    }

    /// Assemble the training config the library expects.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            min_lr: self.min_lr,
            temporal_activation_epoch: self.activation_epoch,
            stop_epoch: self.stop_epoch,
            single_frame: self.single_frame,
            encoder_channels: self.encoder_channels,
            objective: self.objective.clone(),
            extractor: self.extractor,
            flow: self.flow,
            seed: self.train_seed,
        }
    }

    /// The fully resolved config (defaults filled in), in parseable form.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[synth]");
        for (k, v) in self.synth.to_key_values() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[objective]");
        let _ = writeln!(s, "lambda_perceptual = {}", self.objective.lambda_perceptual);
        let _ = writeln!(s, "lambda_temporal = {}", self.objective.lambda_temporal);
        let scales: Vec<String> = self
            .objective
            .scales
            .sizes()
            .iter()
            .map(|k| k.to_string())
            .collect();
        let _ = writeln!(s, "scales = {}", scales.join(","));
        let _ = writeln!(s, "temporal_loss = {}", self.objective.temporal_kind.as_str());
        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "min_lr = {}", self.min_lr);
        let _ = writeln!(
            s,
            "activation_epoch = {}",
            self.activation_epoch
                .map_or_else(|| "auto".to_string(), |e| e.to_string())
        );
        let _ = writeln!(
            s,
            "stop_epoch = {}",
            self.stop_epoch
                .map_or_else(|| "none".to_string(), |e| e.to_string())
        );
        let _ = writeln!(s, "single_frame = {}", self.single_frame);
        let _ = writeln!(s, "encoder_channels = {}", self.encoder_channels);
        let _ = writeln!(s, "extractor_stages = {}", self.extractor.stages);
        let _ = writeln!(s, "extractor_filters = {}", self.extractor.filters);
        let _ = writeln!(s, "extractor_seed = {}", self.extractor.seed);
        let _ = writeln!(s, "seed = {}", self.train_seed);
        if let Some(sweep) = &self.sweep_lambda_t {
            let weights: Vec<String> = sweep.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(s, "sweep_lambda_t = {}", weights.join(","));
        }
        let _ = writeln!(s, "\n[alignment]");
        let a = &self.alignment;
        let _ = writeln!(s, "ransac_iterations = {}", a.ransac_iterations);
        let _ = writeln!(s, "inlier_threshold = {}", a.inlier_threshold);
        let _ = writeln!(s, "min_inliers = {}", a.min_inliers);
        let _ = writeln!(s, "seed = {}", a.seed);
        let _ = writeln!(s, "white_threshold = {}", a.white_threshold);
        let _ = writeln!(s, "run_length = {}", a.run_length);
        let _ = writeln!(s, "sample_ratio = {}", a.sample_ratio);
        let _ = writeln!(s, "max_matches = {}", a.max_matches);
        let _ = writeln!(s, "\n[metrics]");
        let _ = writeln!(s, "block_size = {}", self.flow.block);
        let _ = writeln!(s, "search_radius = {}", self.flow.radius);
        let _ = writeln!(s, "alpha = {}", self.flow.alpha);
        let _ = writeln!(s, "beta = {}", self.flow.beta);
        s
    }

    /// Write the resolved config beside a command's outputs.
    pub fn echo_to(&self, out_dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("config_resolved.txt"), self.resolved_text())?;
        Ok(())
    }
}

pub fn parse_temporal_kind(value: &str) -> Option<TemporalLossKind> {
    match value {
        "none" => Some(TemporalLossKind::None),
        "flow" => Some(TemporalLossKind::Flow),
        "relation_basic" => Some(TemporalLossKind::RelationBasic),
        "relation_multiscale" => Some(TemporalLossKind::RelationMultiscale),
        _ => None,
    }
}
