use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::collective::Layout;
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::tensor::Precision;

/// Training settings. Loaded from a flat `key = value` file where `#` starts
/// a comment; command-line flags are applied on top.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub epochs: usize,
    pub patience: usize,
    /// Samples per rank per step.
    pub batch: usize,
    pub lr: f64,
    pub window: usize,
    pub horizon: usize,
    pub seed: u64,
    pub layout: Layout,
    pub precision: Precision,
    /// Reshuffle every epoch. Off freezes the sample order (sanity mode).
    pub shuffle: bool,
    pub encoder_units: usize,
    pub decoder_units: usize,
    pub head_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("data.srt"),
            epochs: 20,
            patience: 10,
            batch: 14,
            lr: 0.00025,
            window: 3,
            horizon: 1,
            seed: 0,
            layout: Layout::single(),
            precision: Precision::Single,
            shuffle: true,
            encoder_units: 200,
            decoder_units: 200,
            head_units: 100,
        }
    }
}

pub const KEYS: [&str; 14] = [
    "dataset",
    "epochs",
    "patience",
    "batch",
    "lr",
    "window",
    "horizon",
    "seed",
    "layout",
    "precision",
    "shuffle",
    "encoder_units",
    "decoder_units",
    "head_units",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = PathBuf::from(v),
            "epochs" => self.epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "layout" => self.layout = v.parse()?,
            "precision" => self.precision = v.parse()?,
            "shuffle" => self.shuffle = parse(key, v)?,
            "encoder_units" => self.encoder_units = parse(key, v)?,
            "decoder_units" => self.decoder_units = parse(key, v)?,
            "head_units" => self.head_units = parse(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let precision = match self.precision {
            Precision::Single => "f32",
            Precision::Double => "f64",
        };
        let _ = writeln!(s, "dataset = {}", self.dataset.display());
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "layout = {}", self.layout);
        let _ = writeln!(s, "precision = {precision}");
        let _ = writeln!(s, "shuffle = {}", self.shuffle);
        let _ = writeln!(s, "encoder_units = {}", self.encoder_units);
        let _ = writeln!(s, "decoder_units = {}", self.decoder_units);
        let _ = writeln!(s, "head_units = {}", self.head_units);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("batch", self.batch),
            ("window", self.window),
            ("horizon", self.horizon),
            ("encoder_units", self.encoder_units),
            ("decoder_units", self.decoder_units),
            ("head_units", self.head_units),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if self.patience > self.epochs {
            return Err(Error::InvalidArgument(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn dims(&self, cells: usize) -> ModelDims {
        ModelDims {
            flat_dim: cells * 3,
            window: self.window,
            horizon: self.horizon,
            encoder_units: self.encoder_units,
            decoder_units: self.decoder_units,
            head_units: self.head_units,
        }
    }
}
