//! BLEU and Pearson correlation.

use alloc::collections::BTreeMap;
use alloc::format;

use crate::math::{exp, ln, sqrt};
use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and hypothesis n-gram totals for orders 1..=4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl NgramStats {
    pub fn of<T: Ord>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = NgramStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    fn add(&mut self, o: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    fn brevity_log_penalty(&self) -> f64 {
        if self.hyp_len < self.ref_len {
            1.0 - self.ref_len as f64 / self.hyp_len as f64
        } else {
            0.0
        }
    }
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 on a 0–100 scale: clipped precisions pooled over the corpus,
/// geometric mean, brevity penalty `exp(1 − r/c)` when `c < r`. No smoothing;
/// orders with no hypothesis n-grams anywhere in the corpus are left out of the
/// mean.
pub fn corpus_bleu<T: Ord, H: AsRef<[T]>, R: AsRef<[T]>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::Input("empty corpus".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = NgramStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&NgramStats::of(h.as_ref(), r.as_ref()));
    }
    if total.hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if total.totals[n] == 0 {
            continue;
        }
        if total.matches[n] == 0 {
            return Ok(0.0);
        }
        log_sum += ln(total.matches[n] as f64 / total.totals[n] as f64);
        orders += 1;
    }
    Ok(100.0 * exp(total.brevity_log_penalty() + log_sum / orders as f64))
}

/// Sentence BLEU-4 with add-one smoothing of the order ≥ 2 precisions
/// (numerator and denominator). The unigram precision is not smoothed, so a
/// hypothesis without a single matching token scores 0.
pub fn sentence_bleu<T: Ord>(hyp: &[T], reference: &[T]) -> f64 {
    let s = NgramStats::of(hyp, reference);
    if s.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = ln(s.matches[0] as f64 / s.totals[0] as f64);
    for n in 1..MAX_ORDER {
        log_sum += ln((s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64);
    }
    100.0 * exp(s.brevity_log_penalty() + log_sum / MAX_ORDER as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Correlation(format!(
            "need two equal-length series of at least 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Correlation("zero variance".into()));
    }
    Ok((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}
