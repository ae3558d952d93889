use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder stack only; splitting and labeling on the last encoder layer.
    DeepEncoder,
    /// Encoder, splitting, unmasked decoder with encoder attention.
    EncoderDecoder,
    /// As [`Variant::EncoderDecoder`] with positional encodings added to the
    /// split states.
    EncoderDecoderPosEnc,
    /// Causally masked token-by-token decoder.
    Autoregressive,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DeepEncoder,
        Variant::EncoderDecoder,
        Variant::EncoderDecoderPosEnc,
        Variant::Autoregressive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::DeepEncoder => "deep-encoder",
            Variant::EncoderDecoder => "encoder-decoder",
            Variant::EncoderDecoderPosEnc => "encoder-decoder-posenc",
            Variant::Autoregressive => "autoregressive-baseline",
        }
    }

    pub fn is_autoregressive(self) -> bool {
        self == Variant::Autoregressive
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Split factor: every encoder state becomes `k` decoder inputs.
    pub k: usize,
    /// Including the reserved ids; column 0 of every NAR output is the blank.
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: d=64, ff=256, 4 heads, four layers in total, k=3.
    pub fn desk(variant: Variant, vocab_size: usize) -> Self {
        let (enc_layers, dec_layers) = match variant {
            Variant::DeepEncoder => (4, 0),
            _ => (2, 2),
        };
        Self {
            variant,
            d_model: 64,
            ff_dim: 256,
            heads: 4,
            enc_layers,
            dec_layers,
            k: 3,
            vocab_size,
            max_len: 64,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.ff_dim == 0 || self.max_len == 0 {
            return fail("ff_dim and max_len must be positive".into());
        }
        if self.k == 0 {
            return fail("split factor k must be at least 1".into());
        }
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} leaves no output tokens", self.vocab_size));
        }
        if self.variant == Variant::DeepEncoder && self.dec_layers != 0 {
            return fail("deep-encoder variant has no decoder layers".into());
        }
        if self.variant != Variant::DeepEncoder && self.dec_layers == 0 {
            return fail(format!("{} needs at least one decoder layer", self.variant));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Every parameter name and shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push((name, shape));
        push("embed".into(), vec![self.vocab_size, d]);
        let attn = |push: &mut dyn FnMut(String, Vec<usize>), p: &str| {
            for m in ["q", "k", "v", "o"] {
                push(format!("{p}.w{m}"), vec![d, d]);
                push(format!("{p}.b{m}"), vec![d]);
            }
        };
        let norm = |push: &mut dyn FnMut(String, Vec<usize>), p: &str| {
            push(format!("{p}.g"), vec![d]);
            push(format!("{p}.b"), vec![d]);
        };
        let ff = |push: &mut dyn FnMut(String, Vec<usize>), p: &str| {
            push(format!("{p}.w1"), vec![d, self.ff_dim]);
            push(format!("{p}.b1"), vec![self.ff_dim]);
            push(format!("{p}.w2"), vec![self.ff_dim, d]);
            push(format!("{p}.b2"), vec![d]);
        };
        for i in 0..self.enc_layers {
            norm(&mut push, &format!("enc.{i}.ln1"));
            attn(&mut push, &format!("enc.{i}.attn"));
            norm(&mut push, &format!("enc.{i}.ln2"));
            ff(&mut push, &format!("enc.{i}.ff"));
        }
        norm(&mut push, "enc.ln");
        if !self.variant.is_autoregressive() {
            push("split.w".into(), vec![d, self.k * d]);
            push("split.b".into(), vec![self.k * d]);
        }
        for i in 0..self.dec_layers {
            norm(&mut push, &format!("dec.{i}.ln1"));
            attn(&mut push, &format!("dec.{i}.self"));
            norm(&mut push, &format!("dec.{i}.ln2"));
            attn(&mut push, &format!("dec.{i}.cross"));
            norm(&mut push, &format!("dec.{i}.ln3"));
            ff(&mut push, &format!("dec.{i}.ff"));
        }
        if self.dec_layers > 0 {
            norm(&mut push, "dec.ln");
        }
        push("out.w".into(), vec![d, self.vocab_size]);
        push("out.b".into(), vec![self.vocab_size]);
        out
    }

    /// `key=value` pairs, in the order written to checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            ("d_model", self.d_model.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("heads", self.heads.to_string()),
            ("enc_layers", self.enc_layers.to_string()),
            ("dec_layers", self.dec_layers.to_string()),
            ("k", self.k.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("dropout", self.dropout.to_string()),
        ]
    }

    /// Inverse of [`ModelConfig::to_pairs`]; every key must be present.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::desk(Variant::EncoderDecoder, 2);
        let mut seen = [false; 10];
        for (key, value) in pairs {
            let idx = match key {
                "variant" => {
                    cfg.variant = value.parse()?;
                    0
                }
                "d_model" => set(&mut cfg.d_model, key, value, 1)?,
                "ff_dim" => set(&mut cfg.ff_dim, key, value, 2)?,
                "heads" => set(&mut cfg.heads, key, value, 3)?,
                "enc_layers" => set(&mut cfg.enc_layers, key, value, 4)?,
                "dec_layers" => set(&mut cfg.dec_layers, key, value, 5)?,
                "k" => set(&mut cfg.k, key, value, 6)?,
                "vocab_size" => set(&mut cfg.vocab_size, key, value, 7)?,
                "max_len" => set(&mut cfg.max_len, key, value, 8)?,
                "dropout" => set(&mut cfg.dropout, key, value, 9)?,
                _ => continue,
            };
            seen[idx] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("missing model key {:?}", cfg.to_pairs()[i].0)));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str, idx: usize) -> Result<usize> {
    *slot = value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))?;
    Ok(idx)
}
