use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelParams, Variant};
use crate::data::EOS;
use crate::math::{cos, powf, sin, sqrt};
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Encoder output: one `d`-vector per source token.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates {
    states: Tensor,
}

impl EncoderStates {
    pub fn new(states: Tensor) -> Result<Self> {
        states.as_matrix_dims("encoder states")?;
        Ok(Self { states })
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn source_len(&self) -> usize {
        self.states.rows()
    }
}

/// Decoder input of length `k · source_len`. Source position `c` contributes
/// rows `c·k .. c·k + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitStates {
    states: Tensor,
}

impl SplitStates {
    pub fn new(states: Tensor) -> Result<Self> {
        states.as_matrix_dims("split states")?;
        Ok(Self { states })
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Sinusoidal encodings for positions `0..len`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / powf(10_000.0, i as f64 / d as f64);
            t.data_mut()[pos * d + i] = sin(angle);
            if i + 1 < d {
                t.data_mut()[pos * d + i + 1] = cos(angle);
            }
        }
    }
    t
}

/// Training-time dropout source; [`Dropout::off`] at inference.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    g: Var,
    b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnVars {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FfVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

#[derive(Clone, Copy, Debug)]
struct EncLayer {
    ln1: NormVars,
    attn: AttnVars,
    ln2: NormVars,
    ff: FfVars,
}

#[derive(Clone, Copy, Debug)]
struct DecLayer {
    ln1: NormVars,
    self_attn: AttnVars,
    ln2: NormVars,
    cross: AttnVars,
    ln3: NormVars,
    ff: FfVars,
}

/// Model parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    embed: Var,
    enc: Vec<EncLayer>,
    enc_ln: NormVars,
    split: Option<(Var, Var)>,
    dec: Vec<DecLayer>,
    dec_ln: Option<NormVars>,
    out_w: Var,
    out_b: Var,
    named: Vec<(String, Var)>,
}

impl Bound {
    /// Every bound parameter with its name.
    pub fn named(&self) -> &[(String, Var)] {
        &self.named
    }
}

struct Binder<'g, 'p> {
    g: &'g mut Graph<'p>,
    params: &'p ModelParams,
    trainable: bool,
    named: Vec<(String, Var)>,
}

impl<'p> Binder<'_, 'p> {
    fn var(&mut self, name: String) -> Result<Var> {
        let t = self.params.get(&name)?;
        let v = if self.trainable {
            self.g.param(t)
        } else {
            self.g.frozen(t)
        };
        self.named.push((name, v));
        Ok(v)
    }

    fn norm(&mut self, p: &str) -> Result<NormVars> {
        Ok(NormVars {
            g: self.var(format!("{p}.g"))?,
            b: self.var(format!("{p}.b"))?,
        })
    }

    fn attn(&mut self, p: &str) -> Result<AttnVars> {
        Ok(AttnVars {
            wq: self.var(format!("{p}.wq"))?,
            bq: self.var(format!("{p}.bq"))?,
            wk: self.var(format!("{p}.wk"))?,
            bk: self.var(format!("{p}.bk"))?,
            wv: self.var(format!("{p}.wv"))?,
            bv: self.var(format!("{p}.bv"))?,
            wo: self.var(format!("{p}.wo"))?,
            bo: self.var(format!("{p}.bo"))?,
        })
    }

    fn ff(&mut self, p: &str) -> Result<FfVars> {
        Ok(FfVars {
            w1: self.var(format!("{p}.w1"))?,
            b1: self.var(format!("{p}.b1"))?,
            w2: self.var(format!("{p}.w2"))?,
            b2: self.var(format!("{p}.b2"))?,
        })
    }
}

/// Records every parameter on `g`. `trainable` decides whether gradients flow
/// into them.
pub fn bind<'p>(
    g: &mut Graph<'p>,
    config: &ModelConfig,
    params: &'p ModelParams,
    trainable: bool,
) -> Result<Bound> {
    params.validate(config)?;
    let mut b = Binder {
        g,
        params,
        trainable,
        named: Vec::with_capacity(params.len()),
    };
    let embed = b.var("embed".into())?;
    let mut enc = Vec::with_capacity(config.enc_layers);
    for i in 0..config.enc_layers {
        enc.push(EncLayer {
            ln1: b.norm(&format!("enc.{i}.ln1"))?,
            attn: b.attn(&format!("enc.{i}.attn"))?,
            ln2: b.norm(&format!("enc.{i}.ln2"))?,
            ff: b.ff(&format!("enc.{i}.ff"))?,
        });
    }
    let enc_ln = b.norm("enc.ln")?;
    let split = if config.variant.is_autoregressive() {
        None
    } else {
        Some((b.var("split.w".into())?, b.var("split.b".into())?))
    };
    let mut dec = Vec::with_capacity(config.dec_layers);
    for i in 0..config.dec_layers {
        dec.push(DecLayer {
            ln1: b.norm(&format!("dec.{i}.ln1"))?,
            self_attn: b.attn(&format!("dec.{i}.self"))?,
            ln2: b.norm(&format!("dec.{i}.ln2"))?,
            cross: b.attn(&format!("dec.{i}.cross"))?,
            ln3: b.norm(&format!("dec.{i}.ln3"))?,
            ff: b.ff(&format!("dec.{i}.ff"))?,
        });
    }
    let dec_ln = if config.dec_layers > 0 {
        Some(b.norm("dec.ln")?)
    } else {
        None
    };
    let out_w = b.var("out.w".into())?;
    let out_b = b.var("out.b".into())?;
    Ok(Bound {
        embed,
        enc,
        enc_ln,
        split,
        dec,
        dec_ln,
        out_w,
        out_b,
        named: b.named,
    })
}

/// Graph-level forward passes, shared by inference and training.
pub mod graph {
    use super::*;

    fn norm(g: &mut Graph<'_>, n: NormVars, x: Var) -> Result<Var> {
        g.layer_norm(x, n.g, n.b)
    }

    fn feed_forward(g: &mut Graph<'_>, f: FfVars, x: Var) -> Result<Var> {
        let h = g.linear(x, f.w1, f.b1)?;
        let h = g.relu(h)?;
        g.linear(h, f.w2, f.b2)
    }

    /// Multi-head attention of `queries` over `memory`.
    fn attention(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        a: AttnVars,
        queries: Var,
        memory: Var,
        causal: bool,
    ) -> Result<Var> {
        let dh = config.head_dim();
        let q = g.linear(queries, a.wq, a.bq)?;
        let q = g.scale(q, 1.0 / sqrt(dh as f64))?;
        let k = g.linear(memory, a.wk, a.bk)?;
        let v = g.linear(memory, a.wv, a.bv)?;
        let mut heads = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let (qh, kh, vh) = if config.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let weights = if causal {
                g.causal_softmax(scores)?
            } else {
                g.softmax(scores, 1)?
            };
            heads.push(g.matmul(weights, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        g.linear(joined, a.wo, a.bo)
    }

    fn residual(
        g: &mut Graph<'_>,
        drop: &mut Dropout<'_>,
        x: Var,
        sub: impl FnOnce(&mut Graph<'_>) -> Result<Var>,
    ) -> Result<Var> {
        let y = sub(g)?;
        let y = drop.apply(g, y)?;
        g.add(x, y)
    }

    pub fn check_ids(config: &ModelConfig, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if ids.len() > config.max_len {
            return Err(Error::Length {
                len: ids.len(),
                max: config.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                size: config.vocab_size,
            });
        }
        Ok(())
    }

    /// Scaled token embeddings plus sinusoidal positions.
    pub fn embed(g: &mut Graph<'_>, config: &ModelConfig, b: &Bound, ids: &[usize]) -> Result<Var> {
        let e = g.gather(b.embed, ids)?;
        let e = g.scale(e, sqrt(config.d_model as f64))?;
        let pe = g.constant(positional_encoding(ids.len(), config.d_model));
        g.add(e, pe)
    }

    /// Encoder stack over already embedded inputs.
    pub fn encoder(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        input: Var,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        let mut x = drop.apply(g, input)?;
        for layer in &b.enc {
            x = residual(g, drop, x, |g| {
                let n = norm(g, layer.ln1, x)?;
                attention(g, config, layer.attn, n, n, false)
            })?;
            x = residual(g, drop, x, |g| {
                let n = norm(g, layer.ln2, x)?;
                feed_forward(g, layer.ff, n)
            })?;
        }
        norm(g, b.enc_ln, x)
    }

    /// `(h·W + b)` reshaped so row `c·k + j` is slice `j` of source position `c`.
    pub fn split(g: &mut Graph<'_>, config: &ModelConfig, b: &Bound, states: Var) -> Result<Var> {
        let (w, bias) = b
            .split
            .ok_or_else(|| Error::Config("autoregressive model has no state splitter".into()))?;
        let projected = g.linear(states, w, bias)?;
        let rows = g.value(states).rows();
        g.reshape(projected, &[rows * config.k, config.d_model])
    }

    fn decoder(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        input: Var,
        memory: Var,
        causal: bool,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        let mut x = drop.apply(g, input)?;
        for layer in &b.dec {
            x = residual(g, drop, x, |g| {
                let n = norm(g, layer.ln1, x)?;
                attention(g, config, layer.self_attn, n, n, causal)
            })?;
            x = residual(g, drop, x, |g| {
                let n = norm(g, layer.ln2, x)?;
                attention(g, config, layer.cross, n, memory, false)
            })?;
            x = residual(g, drop, x, |g| {
                let n = norm(g, layer.ln3, x)?;
                feed_forward(g, layer.ff, n)
            })?;
        }
        match b.dec_ln {
            Some(n) => norm(g, n, x),
            None => Ok(x),
        }
    }

    fn label(g: &mut Graph<'_>, b: &Bound, x: Var) -> Result<Var> {
        let logits = g.linear(x, b.out_w, b.out_b)?;
        g.log_softmax(logits)
    }

    /// Per-position log-distributions over the vocabulary (column 0 = blank)
    /// for split states `split` attending to encoder `memory`.
    pub fn parallel_head(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        split: Var,
        memory: Var,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        match config.variant {
            Variant::Autoregressive => Err(Error::Config(
                "parallel decoding needs a non-autoregressive variant".into(),
            )),
            Variant::DeepEncoder => label(g, b, split),
            Variant::EncoderDecoder => {
                let x = decoder(g, config, b, split, memory, false, drop)?;
                label(g, b, x)
            }
            Variant::EncoderDecoderPosEnc => {
                let len = g.value(split).rows();
                let pe = g.constant(positional_encoding(len, config.d_model));
                let input = g.add(split, pe)?;
                let x = decoder(g, config, b, input, memory, false, drop)?;
                label(g, b, x)
            }
        }
    }

    /// Full non-autoregressive pass from source ids.
    pub fn parallel(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        source: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        check_ids(config, source)?;
        let x = embed(g, config, b, source)?;
        let h = encoder(g, config, b, x, drop)?;
        let s = split(g, config, b, h)?;
        parallel_head(g, config, b, s, h, drop)
    }

    /// Causally masked decoder over embedded inputs; row `t` predicts the
    /// token following input `t`.
    pub fn autoregressive_head(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        input: Var,
        memory: Var,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        if !config.variant.is_autoregressive() {
            return Err(Error::Config(format!(
                "{} has no autoregressive decoder",
                config.variant
            )));
        }
        let x = decoder(g, config, b, input, memory, true, drop)?;
        label(g, b, x)
    }

    /// Decoder inputs for a target prefix: end-of-sequence as the start
    /// symbol, then the prefix.
    pub fn shifted(prefix: &[usize]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(EOS);
        ids.extend_from_slice(prefix);
        ids
    }

    /// Teacher-forced autoregressive pass: rows predict `target[0..]` then EOS.
    pub fn teacher_forced(
        g: &mut Graph<'_>,
        config: &ModelConfig,
        b: &Bound,
        source: &[usize],
        target: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        check_ids(config, source)?;
        let inputs = shifted(target);
        check_target(config, &inputs)?;
        let x = embed(g, config, b, source)?;
        let h = encoder(g, config, b, x, drop)?;
        let y = embed(g, config, b, &inputs)?;
        autoregressive_head(g, config, b, y, h, drop)
    }

    pub(super) fn check_target(config: &ModelConfig, inputs: &[usize]) -> Result<()> {
        if let Some(&id) = inputs.iter().find(|&&id| id >= config.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                size: config.vocab_size,
            });
        }
        Ok(())
    }
}

/// Runs the encoder on token ids.
pub fn encode(config: &ModelConfig, params: &ModelParams, source: &[usize]) -> Result<EncoderStates> {
    graph::check_ids(config, source)?;
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let x = graph::embed(&mut g, config, &b, source)?;
    let h = graph::encoder(&mut g, config, &b, x, &mut Dropout::off())?;
    EncoderStates::new(g.value(h).clone())
}

/// Runs the encoder on caller-supplied input vectors (no embedding lookup, no
/// positional encoding).
pub fn encode_embedded(config: &ModelConfig, params: &ModelParams, input: &Tensor) -> Result<EncoderStates> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let x = g.constant(input.clone());
    let h = graph::encoder(&mut g, config, &b, x, &mut Dropout::off())?;
    EncoderStates::new(g.value(h).clone())
}

/// Projects each encoder state with `split.w`/`split.b` and slices it into
/// `k` consecutive decoder inputs.
pub fn split_states(params: &ModelParams, enc: &EncoderStates, k: usize) -> Result<SplitStates> {
    let w = params.get("split.w")?;
    let bias = params.get("split.b")?;
    let h = enc.states();
    let (_, d) = h.as_matrix_dims("split_states")?;
    if k == 0 || w.shape() != [d, k * d] || bias.len() != k * d {
        return Err(Error::Shape {
            op: "split_states",
            left: w.shape().to_vec(),
            right: vec![d, k * d],
        });
    }
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let wv = g.frozen(w);
    let bv = g.frozen(bias);
    let p = g.linear(hv, wv, bv)?;
    let s = g.reshape(p, &[h.rows() * k, d])?;
    SplitStates::new(g.value(s).clone())
}

/// Labels every split state at once: `(k·T_x) × vocab_size` log-probabilities,
/// column 0 being the blank.
pub fn decode_parallel(
    config: &ModelConfig,
    params: &ModelParams,
    split: &SplitStates,
    enc: &EncoderStates,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let s = g.constant(split.states().clone());
    let h = g.constant(enc.states().clone());
    let out = graph::parallel_head(&mut g, config, &b, s, h, &mut Dropout::off())?;
    Ok(g.value(out).clone())
}

/// Source ids to frame log-probabilities in one call.
pub fn nar_log_probs(config: &ModelConfig, params: &ModelParams, source: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let out = graph::parallel(&mut g, config, &b, source, &mut Dropout::off())?;
    Ok(g.value(out).clone())
}

/// Next-token log-distribution after `prefix` (EOS excluded from `prefix`).
pub fn decode_autoregressive_step(
    config: &ModelConfig,
    params: &ModelParams,
    enc: &EncoderStates,
    prefix: &[usize],
) -> Result<Tensor> {
    let all = teacher_forced(config, params, enc, prefix)?;
    let last = all.rows() - 1;
    Tensor::vector(all.row(last).to_vec())
}

/// Log-distributions after every prefix of `prefix`: row `t` follows
/// `prefix[..t]`, so there are `prefix.len() + 1` rows.
pub fn teacher_forced(
    config: &ModelConfig,
    params: &ModelParams,
    enc: &EncoderStates,
    prefix: &[usize],
) -> Result<Tensor> {
    if config.vocab_size == 0 {
        return Err(Error::Config("empty vocabulary".into()));
    }
    let inputs = graph::shifted(prefix);
    graph::check_target(config, &inputs)?;
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let h = g.constant(enc.states().clone());
    let y = graph::embed(&mut g, config, &b, &inputs)?;
    let out = graph::autoregressive_head(&mut g, config, &b, y, h, &mut Dropout::off())?;
    Ok(g.value(out).clone())
}

/// Causal decoder over caller-supplied input vectors.
pub fn teacher_forced_embedded(
    config: &ModelConfig,
    params: &ModelParams,
    enc: &EncoderStates,
    input: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let h = g.constant(enc.states().clone());
    let y = g.constant(input.clone());
    let out = graph::autoregressive_head(&mut g, config, &b, y, h, &mut Dropout::off())?;
    Ok(g.value(out).clone())
}
