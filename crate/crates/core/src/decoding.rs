//! Decoders.
//!
//! CTC outputs are decoded either greedily (per-frame argmax, fully parallel)
//! or with a left-to-right prefix beam search that merges every path
//! collapsing to the same prefix. The autoregressive baseline has greedy and
//! length-normalized beam search.
//!
//! Ties are broken toward the lower token id and, between hypotheses of equal
//! score, toward the lexicographically smaller prefix.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::ctc::{collapse, LabelSequence, BLANK};
use crate::data::{EOS, PAD};
use crate::math::{log_add, LOG_ZERO};
use crate::tensor::kernels::argmax;
use crate::tensor::Tensor;
use crate::transformer::{decode_autoregressive_step, encode, nar_log_probs, ModelConfig, ModelParams};
use crate::{Error, Result};

/// Prefix log-score hook, e.g. an external language model.
pub type PrefixScorer<'a> = &'a dyn Fn(&[usize]) -> f64;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOptions {
    pub beam_width: usize,
    /// Symbols tried per frame and hypothesis; `None` tries all.
    pub max_candidates: Option<usize>,
    /// Weight of the external scorer in the ranking; 0 disables it.
    pub external_scorer_weight: f64,
}

impl Default for DecodeOptions {
    /// Beam width 4, mirroring the autoregressive beam; the width used for the
    /// CTC beam rows in the original experiments is not known.
    fn default() -> Self {
        Self {
            beam_width: 4,
            max_candidates: None,
            external_scorer_weight: 0.0,
        }
    }
}

impl DecodeOptions {
    pub fn with_beam(beam_width: usize) -> Self {
        Self {
            beam_width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Options("beam width must be at least 1".into()));
        }
        if self.max_candidates == Some(0) {
            return Err(Error::Options("max_candidates must be at least 1".into()));
        }
        if !(self.external_scorer_weight >= 0.0) {
            return Err(Error::Options(format!(
                "external scorer weight {} must be non-negative",
                self.external_scorer_weight
            )));
        }
        Ok(())
    }
}

/// A collapsed prefix with the mass of the paths ending in blank and in its
/// last symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub prefix: LabelSequence,
    pub logp_blank: f64,
    pub logp_nonblank: f64,
    /// `log(exp(logp_blank) + exp(logp_nonblank))`.
    pub score: f64,
    /// Weighted external score; 0 without a scorer.
    pub external: f64,
}

impl Hypothesis {
    fn new(prefix: Vec<usize>, logp_blank: f64, logp_nonblank: f64, external: f64) -> Self {
        Self {
            prefix: LabelSequence::new(prefix).expect("prefixes never contain the blank"),
            logp_blank,
            logp_nonblank,
            score: log_add(logp_blank, logp_nonblank),
            external,
        }
    }

    /// Score used for pruning and ranking.
    pub fn ranking(&self) -> f64 {
        self.score + self.external
    }
}

fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.ranking()
        .partial_cmp(&a.ranking())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.prefix.cmp(&b.prefix))
}

/// Blank frames of a labeling.
pub fn null_count(frames: &[usize]) -> usize {
    frames.iter().filter(|&&f| f == BLANK).count()
}

/// Per-frame argmax, lowest id on ties.
pub fn greedy_frames(log_probs: &Tensor) -> Vec<usize> {
    (0..log_probs.rows()).map(|t| argmax(log_probs.row(t))).collect()
}

/// Per-frame argmax, then collapse.
pub fn greedy_ctc_decode(log_probs: &Tensor) -> LabelSequence {
    collapse(&greedy_frames(log_probs))
}

fn candidates(row: &[f64], limit: Option<usize>) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..row.len()).filter(|&c| c != BLANK).collect();
    if let Some(n) = limit {
        ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        ids.truncate(n);
    }
    ids
}

/// CTC prefix beam search. Returns the surviving hypotheses, best first.
///
/// Without pruning (`beam_width` at least the number of reachable prefixes)
/// each score is the exact log-probability of its prefix; with pruning it is a
/// lower bound.
pub fn ctc_beam_search(
    log_probs: &Tensor,
    opts: &DecodeOptions,
    scorer: Option<PrefixScorer<'_>>,
) -> Result<Vec<Hypothesis>> {
    opts.validate()?;
    let (frames, _) = log_probs.as_matrix_dims("ctc_beam_search")?;
    let external = |prefix: &[usize]| scorer.map_or(0.0, |f| opts.external_scorer_weight * f(prefix));
    let mut beam = alloc::vec![Hypothesis::new(Vec::new(), 0.0, LOG_ZERO, external(&[]))];
    for t in 0..frames {
        let row = log_probs.row(t);
        let cands = candidates(row, opts.max_candidates);
        let mut next: BTreeMap<Vec<usize>, (f64, f64)> = BTreeMap::new();
        for h in &beam {
            let prefix = h.prefix.ids();
            let entry = next.entry(prefix.to_vec()).or_insert((LOG_ZERO, LOG_ZERO));
            entry.0 = log_add(entry.0, h.score + row[BLANK]);
            let last = prefix.last().copied();
            if let Some(l) = last {
                entry.1 = log_add(entry.1, h.logp_nonblank + row[l]);
            }
            for &c in &cands {
                let mut extended = Vec::with_capacity(prefix.len() + 1);
                extended.extend_from_slice(prefix);
                extended.push(c);
                // a repeated symbol only starts a new token after a blank
                let from = if last == Some(c) { h.logp_blank } else { h.score };
                let e = next.entry(extended).or_insert((LOG_ZERO, LOG_ZERO));
                e.1 = log_add(e.1, from + row[c]);
            }
        }
        let mut merged: Vec<Hypothesis> = next
            .into_iter()
            .filter(|(_, (b, nb))| *b != LOG_ZERO || *nb != LOG_ZERO)
            .map(|(p, (b, nb))| {
                let ext = external(&p);
                Hypothesis::new(p, b, nb, ext)
            })
            .collect();
        merged.sort_by(rank_order);
        merged.truncate(opts.beam_width);
        beam = merged;
    }
    Ok(beam)
}

/// Tokens an autoregressive decoder may emit: everything but blank and pad.
fn ar_choices(dist: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    dist.iter().copied().enumerate().filter(|&(t, _)| t != BLANK && t != PAD)
}

/// Greedy autoregressive decoding until EOS or `max_steps` tokens.
pub fn ar_greedy_decode(
    config: &ModelConfig,
    params: &ModelParams,
    source: &[usize],
    max_steps: usize,
) -> Result<LabelSequence> {
    let enc = encode(config, params, source)?;
    let mut out = Vec::new();
    while out.len() < max_steps {
        let dist = decode_autoregressive_step(config, params, &enc, &out)?;
        let tok = ar_choices(dist.data())
            .fold((EOS, LOG_ZERO), |best, (t, lp)| if lp > best.1 { (t, lp) } else { best })
            .0;
        if tok == EOS {
            break;
        }
        out.push(tok);
    }
    LabelSequence::new(out)
}

/// Finished autoregressive hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct ArHypothesis {
    pub tokens: Vec<usize>,
    pub logp: f64,
    /// Scored length: emitted tokens plus EOS when it was emitted.
    pub length: usize,
}

impl ArHypothesis {
    pub fn normalized(&self) -> f64 {
        self.logp / self.length.max(1) as f64
    }
}

/// Length-normalized beam search: the active beam keeps the `beam_width`
/// best raw scores among all one-token extensions; finished hypotheses
/// (EOS, or `max_steps` tokens) compete on `logp / length`.
pub fn ar_beam_search(
    config: &ModelConfig,
    params: &ModelParams,
    source: &[usize],
    max_steps: usize,
    opts: &DecodeOptions,
) -> Result<Vec<ArHypothesis>> {
    opts.validate()?;
    let enc = encode(config, params, source)?;
    let mut active: Vec<(Vec<usize>, f64)> = alloc::vec![(Vec::new(), 0.0)];
    let mut finished = Vec::new();
    for _ in 0..max_steps {
        let mut cands: Vec<(Vec<usize>, f64)> = Vec::new();
        for (prefix, logp) in &active {
            let dist = decode_autoregressive_step(config, params, &enc, prefix)?;
            for (tok, lp) in ar_choices(dist.data()) {
                let mut seq = prefix.clone();
                seq.push(tok);
                cands.push((seq, logp + lp));
            }
        }
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        cands.truncate(opts.beam_width);
        active.clear();
        for (mut seq, logp) in cands {
            if seq.last() == Some(&EOS) {
                seq.pop();
                let length = seq.len() + 1;
                finished.push(ArHypothesis { tokens: seq, logp, length });
            } else {
                active.push((seq, logp));
            }
        }
        if active.is_empty() {
            break;
        }
    }
    for (tokens, logp) in active {
        let length = tokens.len();
        finished.push(ArHypothesis { tokens, logp, length });
    }
    finished.sort_by(|a, b| {
        b.normalized()
            .partial_cmp(&a.normalized())
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(finished)
}

/// Best hypothesis of [`ar_beam_search`].
pub fn ar_beam_decode(
    config: &ModelConfig,
    params: &ModelParams,
    source: &[usize],
    max_steps: usize,
    opts: &DecodeOptions,
) -> Result<LabelSequence> {
    let best = ar_beam_search(config, params, source, max_steps, opts)?
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default();
    LabelSequence::new(best)
}

/// Non-autoregressive translation of one source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct NarOutput {
    pub labels: LabelSequence,
    /// Greedy frame labeling before collapse.
    pub frames: Vec<usize>,
}

impl NarOutput {
    pub fn null_count(&self) -> usize {
        null_count(&self.frames)
    }
}

/// Frame distributions, then greedy (`beam = None`) or beam decoding.
pub fn nar_decode(
    config: &ModelConfig,
    params: &ModelParams,
    source: &[usize],
    beam: Option<&DecodeOptions>,
) -> Result<NarOutput> {
    let lp = nar_log_probs(config, params, source)?;
    let frames = greedy_frames(&lp);
    let labels = match beam {
        None => collapse(&frames),
        Some(opts) => ctc_beam_search(&lp, opts, None)?
            .into_iter()
            .next()
            .map(|h| h.prefix)
            .unwrap_or_default(),
    };
    Ok(NarOutput { labels, frames })
}
