//! `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::ensemble::TrainConfig;

/// Everything a `train` run needs; every field has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub repetitions: usize,
    pub track_epochs: bool,
    pub epoch_eval_limit: Option<usize>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cube: None,
            labels: None,
            out_dir: PathBuf::from("rsen-out"),
            repetitions: 1,
            track_epochs: false,
            epoch_eval_limit: None,
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Input(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>, CliError> {
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map(T::to_string).unwrap_or_else(|| none.to_string())
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 24] = [
        "cube",
        "labels",
        "out_dir",
        "repetitions",
        "track_epochs",
        "epoch_eval_limit",
        "learning_rate",
        "labeled_batch",
        "unlabeled_batch",
        "epochs",
        "alpha",
        "copies",
        "noise_std",
        "window",
        "components",
        "n_per_class",
        "n_unlabeled",
        "fixed_q",
        "filter",
        "steps_per_epoch",
        "spectral_width",
        "conv_channels",
        "hidden",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "cube" => self.cube = (!value.is_empty()).then(|| PathBuf::from(value)),
            "labels" => self.labels = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "repetitions" => self.repetitions = parse(key, value)?,
            "track_epochs" => self.track_epochs = parse(key, value)?,
            "epoch_eval_limit" => self.epoch_eval_limit = parse_opt(key, value, "all")?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "labeled_batch" => t.labeled_batch = parse(key, value)?,
            "unlabeled_batch" => t.unlabeled_batch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "copies" => t.copies = parse(key, value)?,
            "noise_std" => t.noise_std = parse(key, value)?,
            "window" => t.window = parse(key, value)?,
            "components" => t.components = parse(key, value)?,
            "n_per_class" => t.n_per_class = parse(key, value)?,
            "n_unlabeled" => t.n_unlabeled = parse(key, value)?,
            "fixed_q" => t.fixed_q = parse_opt(key, value, "none")?,
            "filter" => t.filter = value.to_string(),
            "steps_per_epoch" => t.steps_per_epoch = parse_opt(key, value, "auto")?,
            "spectral_width" => t.spectral_width = parse(key, value)?,
            "conv_channels" => t.conv_channels = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            _ => {
                return Err(CliError::Input(format!(
                    "unknown config key `{key}` (known keys: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Input(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// `key=value` override from the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "cube" => show_path(&self.cube),
            "labels" => show_path(&self.labels),
            "out_dir" => self.out_dir.display().to_string(),
            "repetitions" => self.repetitions.to_string(),
            "track_epochs" => self.track_epochs.to_string(),
            "epoch_eval_limit" => show_opt(&self.epoch_eval_limit, "all"),
            "learning_rate" => t.learning_rate.to_string(),
            "labeled_batch" => t.labeled_batch.to_string(),
            "unlabeled_batch" => t.unlabeled_batch.to_string(),
            "epochs" => t.epochs.to_string(),
            "alpha" => t.alpha.to_string(),
            "copies" => t.copies.to_string(),
            "noise_std" => t.noise_std.to_string(),
            "window" => t.window.to_string(),
            "components" => t.components.to_string(),
            "n_per_class" => t.n_per_class.to_string(),
            "n_unlabeled" => t.n_unlabeled.to_string(),
            "fixed_q" => show_opt(&t.fixed_q, "none"),
            "filter" => t.filter.clone(),
            "steps_per_epoch" => show_opt(&t.steps_per_epoch, "auto"),
            "spectral_width" => t.spectral_width.to_string(),
            "conv_channels" => t.conv_channels.to_string(),
            "hidden" => t.hidden.to_string(),
            "seed" => t.seed.to_string(),
            _ => return None,
        })
    }

    /// Every key with its effective value; loading it back reproduces `self`.
    pub fn resolved_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repetitions == 0 {
            return Err(CliError::Input("repetitions must be at least 1".into()));
        }
        self.train.validate().map_err(|e| CliError::Input(e.to_string()))
    }
}
