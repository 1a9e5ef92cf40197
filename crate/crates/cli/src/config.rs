//! Sectioned `key = value` run configuration.
//!
//! ```text
//! [model]
//! width_scale = 1/8        # (0, 1], default 1
//! gcm_gate = residual      # residual | literal
//! [loss]
//! sigma = 8
//! bg_margin_ratio = 0.15
//! lambda = 0.1
//! use_background = true
//! [train]
//! crop_size = 256
//! lr = 1e-5
//! epochs = 10
//! seed = 0
//! val_fraction = 0.1
//! max_steps = 500          # optional cap
//! [data]
//! max_shorter_side = 2048
//! ```
//!
//! `#` starts a comment. Every key is optional; unknown sections and keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pscnet_core::model::GateForm;
use pscnet_core::train::TrainConfig;
use pscnet_core::PscnetConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub width_scale: f64,
    pub gate: GateForm,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width_scale: 1.0,
            gate: GateForm::Residual,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn model(&self) -> PscnetConfig {
        let mut c = PscnetConfig::new(self.width_scale);
        c.gcm.gate = self.gate;
        c
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| ConfigError { line, msg };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header '{content}'")))?
                    .trim();
                if !matches!(name, "model" | "loss" | "train" | "data") {
                    return Err(err(format!("unknown section '{name}'")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let section = section
                .as_deref()
                .ok_or_else(|| err(format!("key '{key}' appears before any section")))?;
            cfg.set(section, key, value).map_err(err)?;
        }
        cfg.model_checked().map_err(|msg| ConfigError { line: 0, msg })?;
        cfg.train.validate().map_err(|e| ConfigError { line: 0, msg: e.to_string() })?;
        Ok(cfg)
    }

    fn model_checked(&self) -> Result<(), String> {
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(format!("width_scale must be in (0, 1], got {}", self.width_scale));
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        let s = &mut t.supervision;
        match (section, key) {
            ("model", "width_scale") => self.width_scale = parse_ratio(value)?,
            ("model", "gcm_gate") => {
                self.gate = match value {
                    "residual" => GateForm::Residual,
                    "literal" => GateForm::Literal,
                    _ => return Err(format!("gcm_gate must be residual or literal, got '{value}'")),
                }
            }
            ("loss", "sigma") => s.sigma = num(key, value)?,
            ("loss", "bg_margin_ratio") => s.bg_margin_ratio = num(key, value)?,
            ("loss", "lambda") => s.lambda = num(key, value)?,
            ("loss", "use_background") => s.use_background = num(key, value)?,
            ("train", "crop_size") => t.crop_size = num(key, value)?,
            ("train", "lr") => t.adam.lr = num(key, value)?,
            ("train", "epochs") => t.epochs = num(key, value)?,
            ("train", "seed") => t.seed = num(key, value)?,
            ("train", "val_fraction") => t.val_fraction = num(key, value)?,
            ("train", "max_steps") => t.max_steps = Some(num(key, value)?),
            ("data", "max_shorter_side") => t.max_shorter_side = num(key, value)?,
            _ => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value '{value}' for {key}"))
}

/// Accepts `0.125` or `1/8`.
fn parse_ratio(value: &str) -> Result<f64, String> {
    let bad = || format!("invalid value '{value}' for width_scale");
    match value.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0.0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        None => value.parse().map_err(|_| bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_only_is_valid() {
        let c = RunConfig::parse("[train]\nseed = 7\n").unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.width_scale, 1.0);
        assert_eq!(c.train.crop_size, TrainConfig::default().crop_size);
    }

    #[test]
    fn every_key_parses() {
        let text = "\
[model]
width_scale = 1/8
gcm_gate = literal
[loss]
sigma = 4   # comment
bg_margin_ratio = 0.2
lambda = 1
use_background = false
[train]
crop_size = 64
lr = 1e-3
epochs = 3
seed = 9
val_fraction = 0.25
max_steps = 12
[data]
max_shorter_side = 512
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.width_scale, 0.125);
        assert_eq!(c.gate, GateForm::Literal);
        let s = &c.train.supervision;
        assert_eq!((s.sigma, s.bg_margin_ratio, s.lambda, s.use_background), (4.0, 0.2, 1.0, false));
        assert_eq!((c.train.crop_size, c.train.epochs, c.train.seed), (64, 3, 9));
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.train.val_fraction, 0.25);
        assert_eq!(c.train.max_steps, Some(12));
        assert_eq!(c.train.max_shorter_side, 512);
        assert_eq!(c.model().gcm.gate, GateForm::Literal);
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let e = RunConfig::parse("[loss]\n\nlamda = 0.1\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.msg.contains("'lamda'"), "{e}");
    }

    #[test]
    fn malformed_lines() {
        assert_eq!(RunConfig::parse("seed = 1").unwrap_err().line, 1);
        assert_eq!(RunConfig::parse("[train]\nseed 1").unwrap_err().line, 2);
        assert_eq!(RunConfig::parse("[optim]").unwrap_err().line, 1);
        assert_eq!(RunConfig::parse("[train]\nepochs = many").unwrap_err().line, 2);
        assert!(RunConfig::parse("[model]\nwidth_scale = 2").is_err());
        assert!(RunConfig::parse("[train]\ncrop_size = 30").is_err());
    }
}
