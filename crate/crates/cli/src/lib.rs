//! Command-line frontend tying the demoiréing library into reproducible
//! experiments.
//!
//! All numeric settings live in a `key = value` config file (see
//! [`config::RunConfig`]); command-line flags only select the subcommand
//! and provide paths. Every command echoes its fully resolved config next
//! to its outputs, and all randomness flows from the seeds in the config.

pub mod commands;
pub mod config;

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::commands::FlowSourceArg;
use crate::config::{parse_temporal_kind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] demoire_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const USAGE: &str = "\
usage: demoire <command> [--config FILE] [flags]

commands:
  synth    --out DIR
           generate a clean/degraded clip pair from the [synth] config
  loss     --pred DIR --gt DIR --kind KIND [--dump-scales DIR]
           evaluate a temporal loss over consecutive frame pairs
           (KIND: relation_basic | relation_multiscale | flow)
  metrics  --pred DIR --gt DIR --out DIR [--flow-source S] [--flow-dir DIR]
           PSNR/SSIM per frame and warping error
           (S: blockmatch | blockmatch_gt | flo; default blockmatch)
  align    --captured DIR --source DIR --out DIR [--matches DIR]
           flag-frame trim, triplet sampling, RANSAC homography alignment
  train    --data DIR --out DIR [--resume CKPT]
           train the restoration model (one run per sweep weight)
  eval     --data DIR --checkpoint CKPT --out DIR [--flow-source S] [--flow-dir DIR]
           restore a dataset and report metrics
  flow     --clip DIR --out DIR
           block-matching flow fields as .flo files
";

struct Flags {
    values: HashMap<String, String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        let mut i = 0;
        while i < args.len() {
            let flag = &args[i];
            let name = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument '{flag}'")))?;
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("flag --{name} needs a value")))?;
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(CliError::Usage(format!("duplicate flag --{name}")));
            }
            i += 2;
        }
        Ok(Self { values })
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        self.values
            .get(name)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }

    fn opt_path(&self, name: &str) -> Option<PathBuf> {
        self.values.get(name).map(PathBuf::from)
    }

    fn opt_str(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    fn str_required(&self, name: &str) -> Result<&str, CliError> {
        self.opt_str(name)
            .ok_or_else(|| CliError::Usage(format!("missing required flag --{name}")))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<(), CliError> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig, CliError> {
    match flags.opt_path("config") {
        Some(path) => RunConfig::parse_file(&path),
        None => Ok(RunConfig::default()),
    }
}

/// Run one invocation. `args` excludes the program name.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let (command, rest) = args
        .split_first()
        .ok_or_else(|| CliError::Usage(USAGE.into()))?;
    let flags = Flags::parse(rest)?;
    match command.as_str() {
        "synth" => {
            flags.reject_unknown(&["config", "out"])?;
            let cfg = load_config(&flags)?;
            commands::cmd_synth(&cfg, &flags.path("out")?)
        }
        "loss" => {
            flags.reject_unknown(&["config", "pred", "gt", "kind", "dump-scales"])?;
            let cfg = load_config(&flags)?;
            let kind_str = flags.str_required("kind")?;
            let kind = parse_temporal_kind(kind_str)
                .ok_or_else(|| CliError::Usage(format!("unknown loss kind '{kind_str}'")))?;
            commands::cmd_loss(
                &cfg,
                &flags.path("pred")?,
                &flags.path("gt")?,
                kind,
                flags.opt_path("dump-scales").as_deref(),
            )
            .map(|_| ())
        }
        "metrics" => {
            flags.reject_unknown(&["config", "pred", "gt", "out", "flow-source", "flow-dir"])?;
            let cfg = load_config(&flags)?;
            let source = FlowSourceArg::parse(
                flags.opt_str("flow-source").unwrap_or("blockmatch"),
                flags.opt_path("flow-dir").as_deref(),
            )?;
            commands::cmd_metrics(
                &cfg,
                &flags.path("pred")?,
                &flags.path("gt")?,
                &source,
                &flags.path("out")?,
            )
            .map(|_| ())
        }
        "align" => {
            flags.reject_unknown(&["config", "captured", "source", "out", "matches"])?;
            let cfg = load_config(&flags)?;
            commands::cmd_align(
                &cfg,
                &flags.path("captured")?,
                &flags.path("source")?,
                &flags.path("out")?,
                flags.opt_path("matches").as_deref(),
            )
            .map(|_| ())
        }
        "train" => {
            flags.reject_unknown(&["config", "data", "out", "resume"])?;
            let cfg = load_config(&flags)?;
            commands::cmd_train(
                &cfg,
                &flags.path("data")?,
                &flags.path("out")?,
                flags.opt_path("resume").as_deref(),
            )
        }
        "eval" => {
            flags.reject_unknown(&["config", "data", "checkpoint", "out", "flow-source", "flow-dir"])?;
            let cfg = load_config(&flags)?;
            let source = FlowSourceArg::parse(
                flags.opt_str("flow-source").unwrap_or("blockmatch"),
                flags.opt_path("flow-dir").as_deref(),
            )?;
            commands::cmd_eval(
                &cfg,
                &flags.path("data")?,
                &flags.path("checkpoint")?,
                &flags.path("out")?,
                &source,
            )
            .map(|_| ())
        }
        "flow" => {
            flags.reject_unknown(&["config", "clip", "out"])?;
            let cfg = load_config(&flags)?;
            commands::cmd_flow(&cfg, &flags.path("clip")?, &flags.path("out")?)
        }
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!(
            "unknown command '{other}'\n\n{USAGE}"
        ))),
    }
}

/// Convenience for tests: run with string literals.
pub fn run_args(args: &[&str]) -> Result<(), CliError> {
    let owned: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    run(&owned)
}

/// Helper shared by `main` and tests that want the process exit semantics.
pub fn exit_code(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
