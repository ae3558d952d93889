//! Training loop with validation, top-k checkpoint retention and averaging.

use std::fs;
use std::path::{Path, PathBuf};

use ctcnat_core::data::{SentencePair, Vocabulary};
use ctcnat_core::objective::{batch_loss_and_grads, is_feasible};
use ctcnat_core::optim::{Adam, Schedule};
use ctcnat_core::transformer::{ModelConfig, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::evaluation::validation_bleu;
use crate::{Error, Result};

pub const LOG_HEADER: [&str; 3] = ["step", "train_loss", "valid_bleu"];
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_FILE: &str = "final.ckpt";
const TOP_PREFIX: &str = "top-";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub valid_interval: usize,
    pub keep_top: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            schedule: Schedule { peak: 1e-3, warmup: 200 },
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            batch_size: 32,
            max_steps: 3000,
            valid_interval: 100,
            keep_top: 5,
            seed: 1,
            checkpoint_dir: checkpoint_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("warmup", self.schedule.warmup),
            ("keep_top", self.keep_top),
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("valid_interval", self.valid_interval),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{key} must be at least 1")));
        }
        if !(self.schedule.peak > 0.0 && self.schedule.peak.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean batch loss since the previous row.
    pub train_loss: f64,
    pub valid_bleu: f64,
}

/// A checkpoint kept on disk by the retention policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Retained {
    pub path: PathBuf,
    pub step: usize,
    pub score: f64,
}

/// Keeps the `keep` best-scoring checkpoints in a directory. On ties the
/// earlier checkpoint wins.
#[derive(Debug)]
pub struct Retention {
    dir: PathBuf,
    keep: usize,
    kept: Vec<Retained>,
}

impl Retention {
    /// Removes stale `top-*.ckpt` files left in `dir` by an earlier run.
    pub fn new(dir: &Path, keep: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if is_retained_file(&path) {
                log::warn!("removing stale checkpoint {}", path.display());
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(Self { dir: dir.to_path_buf(), keep, kept: Vec::new() })
    }

    /// Best first.
    pub fn kept(&self) -> &[Retained] {
        &self.kept
    }

    /// Stores `ckpt` if it ranks among the best; returns whether it was kept.
    pub fn offer(&mut self, ckpt: &Checkpoint) -> Result<bool> {
        let score = ckpt.valid_score;
        if self.kept.len() == self.keep {
            let worst = self.kept.last().expect("keep >= 1");
            if !(score > worst.score) {
                return Ok(false);
            }
            let evicted = self.kept.pop().expect("non-empty");
            fs::remove_file(&evicted.path).map_err(|e| Error::io(&evicted.path, e))?;
        }
        let path = self.dir.join(format!("{TOP_PREFIX}{:07}.ckpt", ckpt.step));
        save_checkpoint(ckpt, &path)?;
        let at = self.kept.iter().position(|k| score > k.score).unwrap_or(self.kept.len());
        self.kept.insert(at, Retained { path, step: ckpt.step, score });
        Ok(true)
    }
}

pub fn is_retained_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.starts_with(TOP_PREFIX) && name.ends_with(".ckpt")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub log: Vec<LogRow>,
    pub retained: Vec<Retained>,
    /// Training pairs left out because their targets are infeasible.
    pub skipped: usize,
}

/// Trains from `params` with Adam on batch-mean losses. Every
/// `valid_interval` steps (and at the end) computes greedy validation BLEU,
/// offers the checkpoint for retention and appends a log row. Writes the log
/// CSV and the final checkpoint into the checkpoint directory.
pub fn train(
    config: &ModelConfig,
    mut params: ModelParams,
    vocab: &Vocabulary,
    train: &[SentencePair],
    valid: &[SentencePair],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    config.validate()?;
    params.validate(config)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but vocab_size is {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Corpus("training and validation corpora must be non-empty".into()));
    }
    let usable: Vec<&SentencePair> = train
        .iter()
        .filter(|p| is_feasible(config, p.source_ids.len(), &p.target_ids))
        .collect();
    let skipped = train.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::Config(format!(
            "all {} training pairs have targets longer than k·source allows; increase k (currently {})",
            train.len(),
            config.k
        )));
    }
    if skipped > 0 {
        log::info!("skipping {skipped} infeasible training pairs");
    }

    let mut retention = Retention::new(&tc.checkpoint_dir, tc.keep_top)?;
    let mut adam = Adam::new(tc.schedule);
    adam.beta1 = tc.beta1;
    adam.beta2 = tc.beta2;
    adam.eps = tc.eps;
    let mut data_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_d80b);
    let mut order: Vec<usize> = Vec::new();
    let mut log_rows = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    let mut last_score = f64::NAN;

    for step in 1..=tc.max_steps {
        let mut batch = Vec::with_capacity(tc.batch_size);
        while batch.len() < tc.batch_size.min(usable.len()) {
            if order.is_empty() {
                order = (0..usable.len()).collect();
                order.shuffle(&mut data_rng);
            }
            let p = usable[order.pop().expect("refilled")];
            batch.push((p.source_ids.as_slice(), p.target_ids.as_slice()));
        }
        let out = batch_loss_and_grads(config, &params, &batch, Some(&mut drop_rng))?;
        adam.step(&mut params, &out.grads)?;
        loss_sum += out.loss;
        loss_n += 1;

        if step % tc.valid_interval == 0 || step == tc.max_steps {
            let bleu = validation_bleu(config, &params, vocab, valid)?;
            let row = LogRow { step, train_loss: loss_sum / loss_n as f64, valid_bleu: bleu };
            log::info!("step {step}: train_loss {:.4} valid_bleu {bleu:.2}", row.train_loss);
            log_rows.push(row);
            (loss_sum, loss_n) = (0.0, 0);
            last_score = bleu;
            retention.offer(&Checkpoint {
                config: config.clone(),
                params: params.clone(),
                vocab: vocab.clone(),
                step,
                valid_score: bleu,
            })?;
        }
    }

    write_log(&tc.checkpoint_dir.join(LOG_FILE), &log_rows)?;
    let last = Checkpoint {
        config: config.clone(),
        params,
        vocab: vocab.clone(),
        step: tc.max_steps,
        valid_score: last_score,
    };
    save_checkpoint(&last, &tc.checkpoint_dir.join(FINAL_FILE))?;
    Ok(TrainOutcome { last, log: log_rows, retained: retention.kept().to_vec(), skipped })
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Corpus(format!("writing {}: {e}", path.display()));
    w.write_record(LOG_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.step.to_string(), r.train_loss.to_string(), r.valid_bleu.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Elementwise mean of the parameters of checkpoints sharing one config and
/// vocabulary. The result keeps the largest step; its validation score is
/// unknown (NaN) unless all inputs agree.
pub fn average_checkpoints(ckpts: &[&Checkpoint]) -> Result<Checkpoint> {
    let first = ckpts
        .first()
        .ok_or_else(|| ctcnat_core::Error::Checkpoint("no checkpoints to average".into()))?;
    if let Some(other) = ckpts.iter().find(|c| c.config != first.config || c.vocab != first.vocab) {
        return Err(ctcnat_core::Error::Checkpoint(format!(
            "cannot average a {} checkpoint with a {} checkpoint of a different configuration or vocabulary",
            first.config.variant, other.config.variant
        ))
        .into());
    }
    let params = ModelParams::average(&ckpts.iter().map(|c| &c.params).collect::<Vec<_>>())?;
    let same_score = ckpts.iter().all(|c| c.valid_score.to_bits() == first.valid_score.to_bits());
    Ok(Checkpoint {
        config: first.config.clone(),
        params,
        vocab: first.vocab.clone(),
        step: ckpts.iter().map(|c| c.step).max().unwrap_or(0),
        valid_score: if same_score { first.valid_score } else { f64::NAN },
    })
}
