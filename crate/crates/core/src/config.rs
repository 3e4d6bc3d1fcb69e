//! Run configuration in a plain `key = value` text format.
//!
//! Grammar: one setting per line, `key = value`; `#` starts a comment;
//! blank lines are ignored; lists are comma-separated. Later lines override
//! earlier ones. Unknown keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::network::NetworkConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub precision: Precision,
    pub lr: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub denoiser_epochs: usize,
    pub denoiser_lr: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub image_size: usize,
    pub bench_lengths: Vec<usize>,
    pub bench_state_dim: usize,
    pub bench_reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let network = NetworkConfig::default();
        Self {
            weights: LossWeights::defaults(network.refine_iters),
            network,
            seed: 42,
            precision: Precision::F32,
            lr: 0.01,
            momentum: 0.9,
            clip_norm: 1.0,
            epochs: 30,
            batch_size: 8,
            denoiser_epochs: 10,
            denoiser_lr: 0.01,
            train_samples: 200,
            test_samples: 50,
            image_size: 64,
            bench_lengths: vec![64, 256, 1024, 4096, 16384],
            bench_state_dim: 16,
            bench_reps: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.weights.validate()?;
        if self.weights.omega.len() != self.network.refine_iters {
            return Err(Error::Config(format!(
                "omega has {} weights for {} refinement iterations",
                self.weights.omega.len(),
                self.network.refine_iters
            )));
        }
        if self.batch_size == 0 || self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("batch_size, train_samples and test_samples must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.clip_norm < 0.0 {
            return Err(Error::Config(format!(
                "need lr > 0, 0 <= momentum < 1, clip_norm >= 0; got {} / {} / {}",
                self.lr, self.momentum, self.clip_norm
            )));
        }
        self.network.check_input(self.image_size, self.image_size)
    }

    /// Applies one setting. Changing `refine_iters` resets `omega` to the
    /// default ramp unless `omega` is also given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {value:?}"));
        let v = value.trim();
        let int = || v.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let float = || v.parse::<f64>().map_err(|_| bad("a number"));
        match key {
            "seed" => self.seed = v.parse().map_err(|_| bad("an unsigned integer"))?,
            "precision" => self.precision = v.parse()?,
            "lr" => self.lr = float()?,
            "momentum" => self.momentum = float()?,
            "clip_norm" => self.clip_norm = float()?,
            "epochs" => self.epochs = int()?,
            "batch_size" => self.batch_size = int()?,
            "denoiser_epochs" => self.denoiser_epochs = int()?,
            "denoiser_lr" => self.denoiser_lr = float()?,
            "train_samples" => self.train_samples = int()?,
            "test_samples" => self.test_samples = int()?,
            "image_size" => self.image_size = int()?,
            "gamma" => self.weights.gamma = float()?,
            "delta" => self.weights.delta = float()?,
            "omega" => {
                self.weights.omega =
                    v.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad("a list of numbers"))).collect::<Result<_>>()?
            }
            "bench_lengths" => {
                self.bench_lengths =
                    v.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| bad("a list of integers"))).collect::<Result<_>>()?
            }
            "bench_state_dim" => self.bench_state_dim = int()?,
            "bench_reps" => self.bench_reps = int()?,
            _ => {
                let before = self.network.refine_iters;
                if !self.network.set(key, value)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
                if self.network.refine_iters != before {
                    self.weights.omega = LossWeights::ramp(self.network.refine_iters);
                }
            }
        }
        Ok(())
    }

    /// Parses a configuration on top of the defaults. Returns the config and
    /// whether it named a seed.
    pub fn parse(text: &str) -> Result<(Self, bool)> {
        let mut cfg = Self::default();
        let mut seeded = false;
        let mut omega = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            seeded |= k == "seed";
            if k == "omega" {
                omega = Some(cfg.weights.omega.clone());
            }
        }
        if let Some(o) = omega {
            cfg.weights.omega = o;
        }
        Ok((cfg, seeded))
    }

    pub fn load(path: &Path) -> Result<(Self, bool)> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every setting, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("seed", self.seed.to_string());
        put("precision", self.precision.to_string());
        put("lr", format!("{:e}", self.lr));
        put("momentum", format!("{:e}", self.momentum));
        put("clip_norm", format!("{:e}", self.clip_norm));
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("denoiser_epochs", self.denoiser_epochs.to_string());
        put("denoiser_lr", format!("{:e}", self.denoiser_lr));
        put("train_samples", self.train_samples.to_string());
        put("test_samples", self.test_samples.to_string());
        put("image_size", self.image_size.to_string());
        for (k, v) in self.network.to_pairs() {
            put(&k, v);
        }
        put("gamma", format!("{:e}", self.weights.gamma));
        put("delta", format!("{:e}", self.weights.delta));
        put("omega", list(&self.weights.omega));
        put("bench_lengths", self.bench_lengths.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
        put("bench_state_dim", self.bench_state_dim.to_string());
        put("bench_reps", self.bench_reps.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.precision = Precision::F64;
        cfg.network.flags.kd = false;
        cfg.network.refine_iters = 2;
        cfg.weights.omega = vec![0.1, 0.25];
        cfg.lr = 0.0125;
        let (back, seeded) = RunConfig::parse(&cfg.to_text()).unwrap();
        assert!(seeded);
        assert_eq!(back, cfg);
    }

    #[test]
    fn grammar() {
        let text = "# comment\n\nepochs = 3   # trailing\nimdr = off\nrefine_iters = 2\n";
        let (cfg, seeded) = RunConfig::parse(text).unwrap();
        assert!(!seeded);
        assert_eq!(cfg.epochs, 3);
        assert!(!cfg.network.flags.imdr);
        assert_eq!(cfg.weights.omega, LossWeights::ramp(2));
        assert!(RunConfig::parse("epochs 3").is_err());
        assert!(RunConfig::parse("nonsense = 1").is_err());
        assert!(RunConfig::parse("precision = f16").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let (cfg, _) = RunConfig::parse("omega = 0.1").unwrap();
        assert!(cfg.validate().is_err());
        let (cfg, _) = RunConfig::parse("image_size = 60").unwrap();
        assert!(cfg.validate().is_err());
    }
}
