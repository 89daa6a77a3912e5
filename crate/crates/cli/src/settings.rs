//! Flat `key = value` pipeline configuration with command-line overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be one
//! of [`KEYS`]; flags given on the command line replace file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use slicedp::divergence::KernelConfig;
use slicedp::generator::AdamConfig;
use slicedp::trainer::TrainConfig;
use slicedp::{Error, Result};

/// Recognized keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("k", "slice dimension (default 2)"),
    ("m", "number of slices (default 25)"),
    ("epsilon", "target epsilon; calibrates sigma"),
    ("delta", "target delta (default 1e-5)"),
    ("sigma", "noise scale; used instead of epsilon"),
    ("rate", "Poisson subsampling rate in (0, 1] (default 1)"),
    ("batch_size", "training batch size (default 128)"),
    ("steps", "training steps (default 2000)"),
    ("learning_rate", "Adam step size (default 2e-5)"),
    ("beta1", "Adam first-moment decay (default 0.9)"),
    ("beta2", "Adam second-moment decay (default 0.999)"),
    ("adam_epsilon", "Adam stabilizer (default 1e-8)"),
    ("lr_schedule", "constant | cosine (default constant)"),
    ("loss", "smoothed-sliced | sliced-wasserstein (default smoothed-sliced)"),
    ("f", "kl | chi2 | js (default kl)"),
    ("ridge", "kernel ridge (default 1e-3)"),
    ("bandwidth_multipliers", "comma list of median-bandwidth factors (default 0.5,1,2)"),
    ("noise", "synthetic noise redraw: step | epoch (default step)"),
    ("slices_per_step", "random slices used per step (default all)"),
    ("checkpoint_interval", "steps between checkpoints, 0 disables (default 0)"),
    ("latent_dim", "generator input width (default 16)"),
    ("hidden", "comma list of hidden widths (default 128,128)"),
    ("rows", "synthetic rows to generate"),
    ("target", "binary column for the logistic-regression F1"),
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("unknown configuration key `{key}`")))
    }
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`", no + 1))
            })?;
            let key = key.trim();
            check_key(key).map_err(|e| Error::InvalidConfig(format!("line {}: {e}", no + 1)))?;
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", p.display()))
            })?),
            None => Ok(Settings::default()),
        }
    }

    pub fn set<T: ToString>(&mut self, key: &str, value: Option<T>) {
        debug_assert!(check_key(key).is_ok(), "{key}");
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("`{key}` has invalid value `{raw}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("`{key}` has invalid list `{raw}`"))),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::default();
        let adam = AdamConfig::default();
        let kernel = KernelConfig::default();
        let cfg = TrainConfig {
            batch_size: self.get_or("batch_size", base.batch_size)?,
            max_steps: self.get_or("steps", base.max_steps)?,
            adam: AdamConfig {
                learning_rate: self.get_or("learning_rate", adam.learning_rate)?,
                beta1: self.get_or("beta1", adam.beta1)?,
                beta2: self.get_or("beta2", adam.beta2)?,
                epsilon: self.get_or("adam_epsilon", adam.epsilon)?,
            },
            lr_schedule: self.get_or("lr_schedule", base.lr_schedule)?,
            loss: self.get_or("loss", base.loss)?,
            f: self.get_or("f", base.f)?,
            kernel: KernelConfig {
                multipliers: self.list("bandwidth_multipliers")?.unwrap_or(kernel.multipliers),
                ridge: self.get_or("ridge", kernel.ridge)?,
                bandwidth_floor: kernel.bandwidth_floor,
            },
            seed,
            checkpoint_interval: self.get_or("checkpoint_interval", base.checkpoint_interval)?,
            noise: self.get_or("noise", base.noise)?,
            slices_per_step: self.get("slices_per_step")?,
            latent_dim: self.get_or("latent_dim", base.latent_dim)?,
            hidden: self.list("hidden")?.unwrap_or(base.hidden),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slicedp::trainer::LrSchedule;

    #[test]
    fn parses_and_overrides() {
        let mut s = Settings::parse("# comment\n\nsteps = 30\nhidden = 8, 4\nlr_schedule=cosine\n").unwrap();
        s.set("steps", Some(40));
        s.set::<u64>("batch_size", None);
        let cfg = s.train_config(5).unwrap();
        assert_eq!(cfg.max_steps, 40);
        assert_eq!(cfg.hidden, vec![8, 4]);
        assert_eq!(cfg.lr_schedule, LrSchedule::Cosine);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.seed, 5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Settings::parse("colour = red").is_err());
        assert!(Settings::parse("steps 30").is_err());
        let s = Settings::parse("steps = many").unwrap();
        assert!(s.train_config(0).is_err());
        let s = Settings::parse("batch_size = 1").unwrap();
        assert!(s.train_config(0).is_err());
    }
}
