//! Training configuration and its `key=value` text form.
//!
//! The same text block is used for config files passed to the CLI and for the
//! configuration embedded in checkpoints. Blank lines and lines starting with
//! `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::adversarial::AdversarialConfig;
use crate::autodiff::NormKind;
use crate::error::{Error, Result};
use crate::gcn::PredictorConfig;
use crate::optim::AdamConfig;
use crate::refine::StageInput;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// History frames `N`.
    pub history: usize,
    /// Predicted frames `T`.
    pub future: usize,
    /// Retained DCT coefficients; `None` keeps all `N + T`.
    pub coeffs: Option<usize>,
    pub hidden: usize,
    pub blocks: usize,
    pub dropout: f64,
    /// Refinement stages after the coarse predictor; also the weight `s` of
    /// the refinement loss.
    pub stages: usize,
    pub stage_input: StageInput,
    pub adversarial: bool,
    pub gamma: f64,
    pub conditional: bool,
    pub noise_dim: usize,
    pub gen_hidden: usize,
    pub disc_hidden: usize,
    pub norm: NormKind,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            history: 10,
            future: 10,
            coeffs: None,
            hidden: 64,
            blocks: 4,
            dropout: 0.5,
            stages: 1,
            stage_input: StageInput::Fused,
            adversarial: true,
            gamma: 0.1,
            conditional: true,
            noise_dim: 16,
            gen_hidden: 64,
            disc_hidden: 64,
            norm: NormKind::Euclidean,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale overrides: batch 32, 30 epochs.
    pub fn desk() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn frames(&self) -> usize {
        self.history + self.future
    }

    pub fn retained(&self) -> usize {
        self.coeffs.unwrap_or_else(|| self.frames())
    }

    /// Weight of the refinement loss.
    pub fn refinement_weight(&self) -> f64 {
        self.stages as f64
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn predictor(&self, channels: usize) -> PredictorConfig {
        PredictorConfig {
            nodes: channels,
            coeffs: self.retained(),
            hidden: self.hidden,
            blocks: self.blocks,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn adversary(&self, channels: usize) -> AdversarialConfig {
        AdversarialConfig {
            nodes: channels,
            coeffs: self.retained(),
            noise_dim: self.noise_dim,
            gen_hidden: self.gen_hidden,
            disc_hidden: self.disc_hidden,
            gamma: self.gamma,
            conditional: self.conditional,
            seed: self.seed.wrapping_add(0xad5e),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("history", self.history),
            ("future", self.future),
            ("hidden", self.hidden),
            ("noise_dim", self.noise_dim),
            ("gen_hidden", self.gen_hidden),
            ("disc_hidden", self.disc_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam betas must lie in [0, 1), eps > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be non-negative", self.gamma)));
        }
        if let Some(l) = self.coeffs {
            if l == 0 || l > self.frames() {
                return Err(Error::Config(format!(
                    "coeffs {l} must lie in 1..={}",
                    self.frames()
                )));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("history", self.history.to_string()),
            ("future", self.future.to_string()),
            ("coeffs", self.coeffs.map(|l| l.to_string()).unwrap_or_else(|| "all".into())),
            ("hidden", self.hidden.to_string()),
            ("blocks", self.blocks.to_string()),
            ("dropout", self.dropout.to_string()),
            ("stages", self.stages.to_string()),
            ("plain_stack", (self.stage_input == StageInput::Plain).to_string()),
            ("adversarial", self.adversarial.to_string()),
            ("gamma", self.gamma.to_string()),
            ("conditional", self.conditional.to_string()),
            ("noise_dim", self.noise_dim.to_string()),
            ("gen_hidden", self.gen_hidden.to_string()),
            ("disc_hidden", self.disc_hidden.to_string()),
            ("squared_norm", (self.norm == NormKind::Squared).to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "history" => self.history = parse(key, value)?,
            "future" => self.future = parse(key, value)?,
            "coeffs" => {
                self.coeffs = if value == "all" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "hidden" => self.hidden = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "stages" => self.stages = parse(key, value)?,
            "plain_stack" => {
                self.stage_input = if parse::<bool>(key, value)? {
                    StageInput::Plain
                } else {
                    StageInput::Fused
                }
            }
            "adversarial" => self.adversarial = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "conditional" => self.conditional = parse(key, value)?,
            "noise_dim" => self.noise_dim = parse(key, value)?,
            "gen_hidden" => self.gen_hidden = parse(key, value)?,
            "disc_hidden" => self.disc_hidden = parse(key, value)?,
            "squared_norm" => {
                self.norm = if parse::<bool>(key, value)? {
                    NormKind::Squared
                } else {
                    NormKind::Euclidean
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a `key=value` block on top of the defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Splits a `key=value` block into ordered pairs; later keys win.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
