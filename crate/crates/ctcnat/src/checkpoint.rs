//! Binary checkpoint files.
//!
//! Layout (little-endian): the magic `CTCNAT01`; a `u32` byte length and a
//! UTF-8 block of `key=value` lines (model config, step, validation score,
//! token mode and one `token=` line per vocabulary entry); a `u32` record
//! count; then per parameter a `u32`-prefixed name, `u32` rank, `u32` dims
//! and the `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ctcnat_core::data::{TokenMode, Vocabulary};
use ctcnat_core::transformer::{ModelConfig, ModelParams};
use ctcnat_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTCNAT01";

/// A trained model with its vocabulary and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub step: usize,
    /// Validation BLEU when saved; NaN if never validated.
    pub valid_score: f64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in self.config.to_pairs() {
            header.push_str(&format!("{k}={v}\n"));
        }
        header.push_str(&format!("step={}\n", self.step));
        header.push_str(&format!("valid_score={}\n", self.valid_score));
        header.push_str(&format!("vocab_mode={}\n", self.vocab.mode()));
        for tok in self.vocab.text_tokens() {
            header.push_str(&format!("token={tok}\n"));
        }
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, header.len());
        out.extend_from_slice(header.as_bytes());
        put_u32(&mut out, self.params.len());
        for (name, t) in self.params.iter() {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(r.error(0, "not a checkpoint (bad magic)"));
        }
        let header_at = r.pos;
        let len = r.u32("config length")?;
        let header = std::str::from_utf8(r.take(len, "config block")?)
            .map_err(|e| r.error(header_at + 4 + e.valid_up_to(), "config block is not UTF-8"))?;
        let meta = parse_header(header).map_err(|m| r.error(header_at, &m))?;
        let count = r.u32("record count")?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let n = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(n, "parameter name")?)
                .map_err(|_| r.error(at, "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")?;
            let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
            let size = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let size = size.filter(|&s| s <= r.remaining() / 8).ok_or_else(|| r.error(at, "tensor larger than file"))?;
            let data = r
                .take(size * 8, "values")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| r.error(at, &e.to_string()))?;
            if map.insert(name.clone(), tensor).is_some() {
                return Err(r.error(at, &format!("duplicate parameter {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(r.error(r.pos, "trailing bytes"));
        }
        let params = ModelParams::from_map(map);
        params.validate(&meta.config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            config: meta.config,
            params,
            vocab: meta.vocab,
            step: meta.step,
            valid_score: meta.valid_score,
        })
    }
}

struct Meta {
    config: ModelConfig,
    vocab: Vocabulary,
    step: usize,
    valid_score: f64,
}

fn parse_header(text: &str) -> std::result::Result<Meta, String> {
    let mut model = Vec::new();
    let mut tokens = Vec::new();
    let (mut step, mut score, mut mode) = (None, None, None);
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed config line {line:?}"))?;
        match k {
            "token" => tokens.push(v.to_string()),
            "step" => step = Some(v.parse::<usize>().map_err(|e| format!("step: {e}"))?),
            "valid_score" => score = Some(v.parse::<f64>().map_err(|e| format!("valid_score: {e}"))?),
            "vocab_mode" => mode = Some(v.parse::<TokenMode>().map_err(|e| e.to_string())?),
            _ => model.push((k, v)),
        }
    }
    let config = ModelConfig::from_pairs(model).map_err(|e| e.to_string())?;
    let vocab = Vocabulary::from_tokens(tokens, mode.ok_or("missing vocab_mode")?).map_err(|e| e.to_string())?;
    if vocab.len() != config.vocab_size {
        return Err(format!("vocabulary has {} entries, config says {}", vocab.len(), config.vocab_size));
    }
    Ok(Meta {
        config,
        vocab,
        step: step.ok_or("missing step")?,
        valid_score: score.ok_or("missing valid_score")?,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn error(&self, offset: usize, message: &str) -> Error {
        Error::Format { offset: offset as u64, message: message.to_string() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error(self.pos, &format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and checks it against the expected model config.
pub fn load_checkpoint_as(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        ckpt.params.validate(expected).map_err(|e| Error::Config(e.to_string()))?;
        return Err(Error::Config(format!(
            "checkpoint is a {} model, expected {}",
            ckpt.config.variant, expected.variant
        )));
    }
    Ok(ckpt)
}
