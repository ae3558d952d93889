//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Keys that are not given keep their defaults; the corpus paths
//! have none and are only required by training.

use std::fmt::Write as _;
use std::path::PathBuf;

use ctcnat_core::data::TokenMode;
use ctcnat_core::optim::Schedule;
use ctcnat_core::transformer::{ModelConfig, Variant};

use crate::train::TrainConfig;
use crate::{Error, Result};

pub const KEYS: [&str; 23] = [
    "variant",
    "d_model",
    "ff_dim",
    "heads",
    "enc_layers",
    "dec_layers",
    "k",
    "max_len",
    "dropout",
    "vocab_mode",
    "min_freq",
    "lr",
    "warmup",
    "batch_size",
    "max_steps",
    "valid_interval",
    "keep_top",
    "seed",
    "train_src",
    "train_tgt",
    "valid_src",
    "valid_tgt",
    "checkpoint_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Model settings; `vocab_size` is filled in from the built vocabulary.
    pub model: ModelConfig,
    pub vocab_mode: TokenMode,
    pub min_freq: usize,
    pub train: TrainConfig,
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub valid_src: Option<PathBuf>,
    pub valid_tgt: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_variant(Variant::EncoderDecoder)
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?} for key `{key}`: {e}")))
}

impl RunConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            model: ModelConfig::desk(variant, 0),
            vocab_mode: TokenMode::Word,
            min_freq: 1,
            train: TrainConfig::new("checkpoints"),
            train_src: None,
            train_tgt: None,
            valid_src: None,
            valid_tgt: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            if entries.iter().any(|e| e.1 == key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            entries.push((n + 1, key, value));
        }
        // the variant decides the default layer split
        let variant = match entries.iter().find(|e| e.1 == "variant") {
            Some(e) => parse_value("variant", e.2)?,
            None => Variant::EncoderDecoder,
        };
        let mut cfg = Self::for_variant(variant);
        for (_, key, value) in entries {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "variant" => m.variant = parse_value(key, value)?,
            "d_model" => m.d_model = parse_value(key, value)?,
            "ff_dim" => m.ff_dim = parse_value(key, value)?,
            "heads" => m.heads = parse_value(key, value)?,
            "enc_layers" => m.enc_layers = parse_value(key, value)?,
            "dec_layers" => m.dec_layers = parse_value(key, value)?,
            "k" => m.k = parse_value(key, value)?,
            "max_len" => m.max_len = parse_value(key, value)?,
            "dropout" => m.dropout = parse_value(key, value)?,
            "vocab_mode" => self.vocab_mode = parse_value(key, value)?,
            "min_freq" => self.min_freq = parse_value(key, value)?,
            "lr" => t.schedule.peak = parse_value(key, value)?,
            "warmup" => t.schedule.warmup = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "max_steps" => t.max_steps = parse_value(key, value)?,
            "valid_interval" => t.valid_interval = parse_value(key, value)?,
            "keep_top" => t.keep_top = parse_value(key, value)?,
            "seed" => t.seed = parse_value(key, value)?,
            "train_src" => self.train_src = path(),
            "train_tgt" => self.train_tgt = path(),
            "valid_src" => self.valid_src = path(),
            "valid_tgt" => self.valid_tgt = path(),
            "checkpoint_dir" => t.checkpoint_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// All keys in canonical order; unset paths are omitted.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values: [Option<String>; 23] = [
            Some(m.variant.to_string()),
            Some(m.d_model.to_string()),
            Some(m.ff_dim.to_string()),
            Some(m.heads.to_string()),
            Some(m.enc_layers.to_string()),
            Some(m.dec_layers.to_string()),
            Some(m.k.to_string()),
            Some(m.max_len.to_string()),
            Some(m.dropout.to_string()),
            Some(self.vocab_mode.to_string()),
            Some(self.min_freq.to_string()),
            Some(t.schedule.peak.to_string()),
            Some(t.schedule.warmup.to_string()),
            Some(t.batch_size.to_string()),
            Some(t.max_steps.to_string()),
            Some(t.valid_interval.to_string()),
            Some(t.keep_top.to_string()),
            Some(t.seed.to_string()),
            show(&self.train_src),
            show(&self.train_tgt),
            show(&self.valid_src),
            show(&self.valid_tgt),
            Some(t.checkpoint_dir.display().to_string()),
        ];
        let mut out = String::new();
        for (key, value) in KEYS.iter().zip(values) {
            if let Some(v) = value {
                writeln!(out, "{key}={v}").expect("writing to a String");
            }
        }
        out
    }

    /// Model config for a vocabulary of `vocab_size` ids.
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut m = self.model.clone();
        m.vocab_size = vocab_size;
        m.validate()?;
        Ok(m)
    }

    /// The four corpus paths, or a config error naming the first missing key.
    pub fn corpus_paths(&self) -> Result<[&PathBuf; 4]> {
        fn get<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
            p.as_ref().ok_or_else(|| Error::Config(format!("missing key `{key}`")))
        }
        Ok([
            get(&self.train_src, "train_src")?,
            get(&self.train_tgt, "train_tgt")?,
            get(&self.valid_src, "valid_src")?,
            get(&self.valid_tgt, "valid_tgt")?,
        ])
    }

    pub fn schedule(&self) -> Schedule {
        self.train.schedule
    }
}
