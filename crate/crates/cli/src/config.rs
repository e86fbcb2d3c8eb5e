//! `key = value` run configuration with a closed key schema.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use esrnn::clipping::ClipConfig;
use esrnn::primal_dual::{PdConfig, Variant};
use esrnn::tasks::{SynthSpec, TaskKind};
use esrnn::training::{DescentConfig, Schedule};
use esrnn::{ArmaConfig, Nonlin, OutputHead};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

pub const KEYS: &[&str] = &[
    "n_hidden",
    "n_out",
    "n_input",
    "delta1",
    "delta2",
    "nonlin",
    "head",
    "optimizer",
    "mu0",
    "schedule",
    "momentum",
    "dual_mu_scale",
    "variant",
    "epochs",
    "batch",
    "threshold",
    "manifest",
    "task",
    "t_len",
    "num_sequences",
    "context_span",
    "noise_std",
    "out_checkpoint",
    "out_report",
    "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    PrimalDual,
    Clipping,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "primal_dual" => Ok(Optimizer::PrimalDual),
            "clipping" => Ok(Optimizer::Clipping),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n_hidden: usize,
    /// `None` means "take it from the manifest" (or the synthetic default).
    pub n_out: Option<usize>,
    pub n_input: Option<usize>,
    pub delta1: usize,
    pub delta2: usize,
    pub nonlin: Nonlin,
    pub head: OutputHead,
    pub optimizer: Optimizer,
    pub mu0: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub dual_mu_scale: f64,
    pub variant: Variant,
    pub epochs: usize,
    pub batch: usize,
    pub threshold: f64,
    pub manifest: Option<PathBuf>,
    pub task: TaskKind,
    pub t_len: usize,
    pub num_sequences: usize,
    pub context_span: usize,
    pub noise_std: f64,
    pub out_checkpoint: PathBuf,
    pub out_report: PathBuf,
    pub seed: u64,
}

pub const DEFAULT_N_INPUT: usize = 4;
pub const DEFAULT_N_OUT: usize = 3;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_hidden: 32,
            n_out: None,
            n_input: None,
            delta1: 0,
            delta2: 0,
            nonlin: Nonlin::Sigmoid,
            head: OutputHead::Softmax,
            optimizer: Optimizer::PrimalDual,
            mu0: 0.1,
            schedule: Schedule::Constant,
            momentum: 0.0,
            dual_mu_scale: 1.0,
            variant: Variant::Shrinkage,
            epochs: 10,
            batch: 1,
            threshold: 1.0,
            manifest: None,
            task: TaskKind::ContextWindow,
            t_len: 100,
            num_sequences: 50,
            context_span: 2,
            noise_std: 0.1,
            out_checkpoint: PathBuf::from("model.ckpt"),
            out_report: PathBuf::from("report.csv"),
            seed: 0,
        }
    }
}

/// Seeds derived from the master `seed`: three successive `u64` draws of a
/// ChaCha8 stream, in the order init, shuffle, synth.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    pub init: u64,
    pub shuffle: u64,
    pub synth: u64,
}

impl SeedStreams {
    pub fn split(master: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        let init = rng.next_u64();
        let shuffle = rng.next_u64();
        let synth = rng.next_u64();
        Self {
            init,
            shuffle,
            synth,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value '{value}' for key '{key}': {e}"))
}

impl RunConfig {
    /// Sets one key; unknown keys and malformed values are errors naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "n_hidden" => self.n_hidden = parse_value(key, v)?,
            "n_out" => self.n_out = Some(parse_value(key, v)?),
            "n_input" => self.n_input = Some(parse_value(key, v)?),
            "delta1" => self.delta1 = parse_value(key, v)?,
            "delta2" => self.delta2 = parse_value(key, v)?,
            "nonlin" => self.nonlin = parse_value(key, v)?,
            "head" => self.head = parse_value(key, v)?,
            "optimizer" => self.optimizer = parse_value(key, v)?,
            "mu0" => self.mu0 = parse_value(key, v)?,
            "schedule" => self.schedule = parse_value(key, v)?,
            "momentum" => self.momentum = parse_value(key, v)?,
            "dual_mu_scale" => self.dual_mu_scale = parse_value(key, v)?,
            "variant" => self.variant = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch" => self.batch = parse_value(key, v)?,
            "threshold" => self.threshold = parse_value(key, v)?,
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "task" => self.task = parse_value(key, v)?,
            "t_len" => self.t_len = parse_value(key, v)?,
            "num_sequences" => self.num_sequences = parse_value(key, v)?,
            "context_span" => self.context_span = parse_value(key, v)?,
            "noise_std" => self.noise_std = parse_value(key, v)?,
            "out_checkpoint" => self.out_checkpoint = PathBuf::from(v),
            "out_report" => self.out_report = PathBuf::from(v),
            "seed" => self.seed = parse_value(key, v)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Parses a config file body. `#` starts a comment; each key may appear
    /// once.
    pub fn parse_file_text(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("{}:{}: {msg}", path.display(), i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected 'key = value', found '{line}'")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("duplicate key '{key}'")));
            }
            self.set(key, value).map_err(at)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` (`key=value`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            cfg.parse_file_text(&text, p)?;
            if let Some(m) = &cfg.manifest {
                if m.is_relative() {
                    cfg.manifest = Some(p.parent().unwrap_or(Path::new(".")).join(m));
                }
            }
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            cfg.set(key.trim(), value).map_err(CliError::Config)?;
        }
        Ok(cfg)
    }

    pub fn seeds(&self) -> SeedStreams {
        SeedStreams::split(self.seed)
    }

    pub fn arma(&self) -> ArmaConfig {
        ArmaConfig {
            delta1: self.delta1,
            delta2: self.delta2,
            nonlin: self.nonlin,
            head: self.head,
        }
    }

    pub fn descent(&self) -> DescentConfig {
        DescentConfig {
            mu0: self.mu0,
            schedule: self.schedule,
            momentum: self.momentum,
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seeds().shuffle,
        }
    }

    pub fn pd(&self) -> PdConfig {
        PdConfig {
            descent: self.descent(),
            dual_mu_scale: self.dual_mu_scale,
            variant: self.variant,
        }
    }

    pub fn clip(&self) -> ClipConfig {
        ClipConfig {
            threshold: self.threshold,
            descent: self.descent(),
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            task: self.task,
            t_len: self.t_len,
            num_sequences: self.num_sequences,
            n_input: self.n_input.unwrap_or(DEFAULT_N_INPUT),
            n_out: self.n_out.unwrap_or(DEFAULT_N_OUT),
            context_span: self.context_span,
            noise_std: self.noise_std,
            seed: self.seeds().synth,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_hidden == 0 {
            return Err(CliError::Config("n_hidden must be positive".into()));
        }
        match self.optimizer {
            Optimizer::PrimalDual => self.pd().validate()?,
            Optimizer::Clipping => self.clip().validate()?,
        }
        Ok(())
    }
}
