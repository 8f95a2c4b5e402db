//! Training configuration and its `key = value` text form.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub threshold: f64,
    pub checkpoint_path: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            val_fraction: 0.2,
            threshold: 0.5,
            checkpoint_path: PathBuf::from("model.wunt"),
        }
    }
}

pub const KEYS: [&str; 7] = [
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "val_fraction",
    "threshold",
    "checkpoint_path",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and lines starting with `#`
    /// are ignored; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            let bad = |_| err(format!("invalid value {value:?} for {key}"));
            match key {
                "epochs" => cfg.epochs = value.parse().map_err(bad)?,
                "batch_size" => cfg.batch_size = value.parse().map_err(bad)?,
                "lr" => cfg.lr = value.parse().map_err(|_| err(format!("invalid lr {value:?}")))?,
                "seed" => cfg.seed = value.parse().map_err(bad)?,
                "val_fraction" => {
                    cfg.val_fraction = value
                        .parse()
                        .map_err(|_| err(format!("invalid val_fraction {value:?}")))?
                }
                "threshold" => {
                    cfg.threshold = value
                        .parse()
                        .map_err(|_| err(format!("invalid threshold {value:?}")))?
                }
                _ => cfg.checkpoint_path = PathBuf::from(value),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical text; [`TrainConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        format!(
            "epochs = {}\nbatch_size = {}\nlr = {:?}\nseed = {}\nval_fraction = {:?}\nthreshold = {:?}\ncheckpoint_path = {}\n",
            self.epochs,
            self.batch_size,
            self.lr,
            self.seed,
            self.val_fraction,
            self.threshold,
            self.checkpoint_path.display()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (500, 8));
        assert_eq!((c.lr, c.val_fraction, c.threshold), (1e-3, 0.2, 0.5));
        assert_eq!(TrainConfig::parse("").unwrap(), c);
    }

    #[test]
    fn parses_and_roundtrips() {
        let c = TrainConfig::parse(
            "# run\nepochs = 3\n batch_size=2\nlr = 0.0005\nseed = 42\nthreshold = 0.25\ncheckpoint_path = out/m.wunt\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.lr, 0.0005);
        assert_eq!(c.seed, 42);
        assert_eq!(c.checkpoint_path, PathBuf::from("out/m.wunt"));
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_duplicate_and_invalid() {
        for text in [
            "momentum = 0.9",
            "epochs = 2\nepochs = 3",
            "epochs = 0",
            "epochs = many",
            "threshold = 1.0",
            "batch_size = 0",
            "val_fraction = 0",
            "lr = -1",
            "just words",
        ] {
            assert!(matches!(TrainConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
