//! Per-sentence and batch training losses.
//!
//! Non-autoregressive variants use the CTC loss over the frame
//! distributions; the autoregressive baseline uses teacher-forced token
//! cross-entropy. A batch loss is the mean of the per-sentence raw negative
//! log-likelihoods.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss, LabelSequence};
use crate::data::EOS;
use crate::tensor::{Graph, Var};
use crate::transformer::{bind, forward, Bound, Dropout, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Whether `target` can be emitted at all from `source_len` source tokens.
pub fn is_feasible(config: &ModelConfig, source_len: usize, target: &[usize]) -> bool {
    if config.variant.is_autoregressive() {
        return true;
    }
    let frames = config.k * source_len;
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    target.len() + repeats <= frames
}

/// Records the loss of one pair; `None` when the target is infeasible.
pub fn sentence_loss(
    g: &mut Graph<'_>,
    config: &ModelConfig,
    b: &Bound,
    source: &[usize],
    target: &[usize],
    drop: &mut Dropout<'_>,
) -> Result<Option<Var>> {
    if config.variant.is_autoregressive() {
        let lp = forward::teacher_forced(g, config, b, source, target, drop)?;
        let width = config.vocab_size;
        let values = g.value(lp).data();
        let mut grad = vec![0.0; values.len()];
        let mut nll = 0.0;
        for (t, &y) in target.iter().chain(core::iter::once(&EOS)).enumerate() {
            nll -= values[t * width + y];
            grad[t * width + y] = -1.0;
        }
        return g.loss(lp, nll, grad).map(Some);
    }
    if !is_feasible(config, source.len(), target) {
        return Ok(None);
    }
    let labels = LabelSequence::new(target.to_vec())?;
    let lp = forward::parallel(g, config, b, source, drop)?;
    let out = ctc_loss(g.value(lp), &labels)?;
    if !out.is_feasible() {
        return Ok(None);
    }
    g.loss(lp, out.loss, out.grad.into_data()).map(Some)
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    /// Mean loss over the feasible pairs.
    pub loss: f64,
    pub used: usize,
    pub skipped: usize,
    /// Gradient of the mean loss per parameter name.
    pub grads: BTreeMap<String, Vec<f64>>,
}

/// Mean loss and gradients over `pairs` on one tape.
pub fn batch_loss_and_grads(
    config: &ModelConfig,
    params: &ModelParams,
    pairs: &[(&[usize], &[usize])],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchLoss> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, true)?;
    let mut drop = match rng {
        Some(r) => Dropout::train(config.dropout, r),
        None => Dropout::off(),
    };
    let mut losses = Vec::with_capacity(pairs.len());
    for &(src, tgt) in pairs {
        if let Some(l) = sentence_loss(&mut g, config, &b, src, tgt, &mut drop)? {
            losses.push(l);
        }
    }
    let skipped = pairs.len() - losses.len();
    if losses.is_empty() {
        return Err(Error::Config(
            "every pair in the batch is infeasible; increase the split factor k".into(),
        ));
    }
    let w = 1.0 / losses.len() as f64;
    let terms: Vec<(Var, f64)> = losses.iter().map(|&l| (l, w)).collect();
    let total = g.weighted_sum(&terms)?;
    g.backward(total)?;
    let grads = b
        .named()
        .iter()
        .map(|(name, v)| {
            let grad = g
                .grad(*v)
                .map_or_else(|| vec![0.0; g.value(*v).len()], <[f64]>::to_vec);
            (name.clone(), grad)
        })
        .collect();
    Ok(BatchLoss {
        loss: g.value(total).data()[0],
        used: losses.len(),
        skipped,
        grads,
    })
}

/// Mean loss without gradients or dropout; infeasible pairs are left out.
pub fn batch_loss(config: &ModelConfig, params: &ModelParams, pairs: &[(&[usize], &[usize])]) -> Result<f64> {
    let mut g = Graph::new();
    let b = bind(&mut g, config, params, false)?;
    let mut sum = 0.0;
    let mut used = 0;
    for &(src, tgt) in pairs {
        if let Some(l) = sentence_loss(&mut g, config, &b, src, tgt, &mut Dropout::off())? {
            sum += g.value(l).data()[0];
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Config("no feasible pairs".into()));
    }
    Ok(sum / used as f64)
}
