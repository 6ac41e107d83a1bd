//! Line-oriented `key = value` run configuration.
//!
//! ```text
//! # XOR
//! layers = 2,4,1
//! basis = fourier
//! M = 4
//! omega = 1
//! mode = layer
//! output = identity
//! loss = mse
//! lr_weights = 0.5
//! lr_alpha = 0.5
//! epochs = 5000
//! batch_size = 4
//! seed = 42
//! freeze_alpha = 1
//! ```
//!
//! `mode` takes one value for every hidden layer or a comma list with one
//! entry per hidden layer. `freeze_alpha` lists 1-based hidden layer indices,
//! `out` for the output activation, or `all`. `shuffle`, `log_every` and
//! `output_activation` (`none` | `variational`) are optional. Any other key is
//! an error.

use std::collections::HashSet;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::activation::ActivationMode;
use crate::basis::{BasisFamily, BasisKind};
use crate::loss::LossKind;
use crate::network::{Architecture, Network, Scaling};
use crate::optim::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

/// Which activation coefficients are excluded from training.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FreezeSpec {
    #[default]
    None,
    All,
    /// 0-based hidden layer indices, plus the output activation when `output` is set.
    Layers { hidden: Vec<usize>, output: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub layers: Vec<usize>,
    pub basis: BasisKind,
    pub m: usize,
    pub omega: f64,
    pub modes: Vec<ActivationMode>,
    pub output: Scaling,
    pub loss: LossKind,
    pub variational_output: bool,
    pub freeze: FreezeSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    /// The XOR setup: 2-4-1, fourier M = 4, ω = 1, mse.
    fn default() -> Self {
        RunConfig {
            layers: vec![2, 4, 1],
            basis: BasisKind::Fourier,
            m: 4,
            omega: 1.0,
            modes: vec![ActivationMode::Layer],
            output: Scaling::Identity,
            loss: LossKind::Mse,
            variational_output: false,
            freeze: FreezeSpec::None,
            train: TrainConfig {
                lr_weights: 0.5,
                lr_alpha: 0.5,
                epochs: 5000,
                batch_size: 4,
                seed: 42,
                shuffle: true,
                log_every: 500,
            },
        }
    }
}

const KEYS: &[&str] = &[
    "layers",
    "basis",
    "M",
    "omega",
    "mode",
    "output",
    "loss",
    "lr_weights",
    "lr_alpha",
    "epochs",
    "batch_size",
    "seed",
    "freeze_alpha",
    "shuffle",
    "log_every",
    "output_activation",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::Line {
        line,
        message: format!("invalid value `{value}` for `{key}`: {e}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|v| parse_value(line, key, v.trim()))
        .collect()
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len().saturating_sub(2)
    }

    pub fn family(&self) -> Result<BasisFamily, ConfigError> {
        BasisFamily::new(self.basis, self.m, self.omega).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn architecture(&self) -> Result<Architecture, ConfigError> {
        let arch = Architecture {
            widths: self.layers.clone(),
            family: self.family()?,
            modes: self.modes.clone(),
            scaling: self.output,
            variational_output: self.variational_output,
        };
        arch.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(arch)
    }

    /// Initializes a network from the seed (ChaCha8, stream 0) and applies
    /// the freeze list.
    pub fn build_network(&self) -> Result<Network, ConfigError> {
        let arch = self.architecture()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let mut net = Network::init(&arch, &mut rng).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match &self.freeze {
            FreezeSpec::None => {}
            FreezeSpec::All => net.freeze_all_alpha(),
            FreezeSpec::Layers { hidden, output } => {
                for &l in hidden {
                    net.set_trainable_alpha(l, false)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
                if *output {
                    net.output_mut().trainable_alpha = false;
                }
            }
        }
        Ok(net)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.architecture()?;
        self.loss
            .check_scaling(self.output)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let FreezeSpec::Layers { hidden, output } = &self.freeze {
            if let Some(&bad) = hidden.iter().find(|&&l| l >= self.hidden_count()) {
                return Err(ConfigError::Invalid(format!(
                    "freeze_alpha names hidden layer {} but there are only {}",
                    bad + 1,
                    self.hidden_count()
                )));
            }
            if *output && !self.variational_output {
                return Err(ConfigError::Invalid(
                    "freeze_alpha names `out` but output_activation is none".into(),
                ));
            }
        }
        Ok(())
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut modes: Option<(usize, Vec<ActivationMode>)> = None;
        let mut freeze: Option<(usize, String)> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Line {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::Line {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if !seen.insert(key.to_owned()) {
                return Err(ConfigError::Line {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            match key {
                "layers" => cfg.layers = parse_list(line, key, value)?,
                "basis" => cfg.basis = parse_value(line, key, value)?,
                "M" => cfg.m = parse_value(line, key, value)?,
                "omega" => cfg.omega = parse_value(line, key, value)?,
                "mode" => modes = Some((line, parse_list(line, key, value)?)),
                "output" => cfg.output = parse_value(line, key, value)?,
                "loss" => cfg.loss = parse_value(line, key, value)?,
                "lr_weights" => cfg.train.lr_weights = parse_value(line, key, value)?,
                "lr_alpha" => cfg.train.lr_alpha = parse_value(line, key, value)?,
                "epochs" => cfg.train.epochs = parse_value(line, key, value)?,
                "batch_size" => cfg.train.batch_size = parse_value(line, key, value)?,
                "seed" => cfg.train.seed = parse_value(line, key, value)?,
                "shuffle" => cfg.train.shuffle = parse_value(line, key, value)?,
                "log_every" => cfg.train.log_every = parse_value(line, key, value)?,
                "freeze_alpha" => freeze = Some((line, value.to_owned())),
                "output_activation" => {
                    cfg.variational_output = match value {
                        "none" => false,
                        "variational" => true,
                        other => {
                            return Err(ConfigError::Line {
                                line,
                                message: format!("output_activation must be none or variational, got `{other}`"),
                            })
                        }
                    }
                }
                _ => unreachable!("key list checked above"),
            }
        }

        let hidden = cfg.hidden_count();
        cfg.modes = match modes {
            None => vec![ActivationMode::Layer; hidden],
            Some((_, list)) if list.len() == 1 => vec![list[0]; hidden],
            Some((_, list)) if list.len() == hidden => list,
            Some((line, list)) => {
                return Err(ConfigError::Line {
                    line,
                    message: format!("mode lists {} entries for {hidden} hidden layers", list.len()),
                })
            }
        };
        if let Some((line, value)) = freeze {
            cfg.freeze = parse_freeze(line, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_freeze(line: usize, value: &str) -> Result<FreezeSpec, ConfigError> {
    match value {
        "" | "none" => return Ok(FreezeSpec::None),
        "all" => return Ok(FreezeSpec::All),
        _ => {}
    }
    let mut hidden = Vec::new();
    let mut output = false;
    for item in value.split(',').map(str::trim) {
        if item == "out" {
            output = true;
            continue;
        }
        let idx: usize = parse_value(line, "freeze_alpha", item)?;
        if idx == 0 {
            return Err(ConfigError::Line {
                line,
                message: "freeze_alpha layer indices start at 1".into(),
            });
        }
        hidden.push(idx - 1);
    }
    Ok(FreezeSpec::Layers { hidden, output })
}
