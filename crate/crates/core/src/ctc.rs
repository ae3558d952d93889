//! Connectionist temporal classification.
//!
//! Frames are labeled with a token id or the blank id [`BLANK`] (`0`). A frame
//! labeling collapses to an output sequence by merging adjacent repeats and
//! then dropping blanks. The loss marginalizes over every labeling that
//! collapses to the target, using the forward (prefix) and backward (suffix)
//! recursions over the blank-extended target `∅ y₁ ∅ y₂ … ∅`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, log_add, log_sum_exp, LOG_ZERO};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Column of the blank symbol in every frame distribution.
pub const BLANK: usize = 0;

/// Rows of a frame distribution must sum to one within this, in log space.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Largest instance [`oracle_loss`] accepts.
pub const ORACLE_MAX_FRAMES: usize = 10;
pub const ORACLE_MAX_LABELS: usize = 4;

/// A collapsed output sequence; never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.contains(&BLANK) {
            return Err(Error::Input("label sequence contains the blank id".into()));
        }
        Ok(Self(ids))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fewest frames that can produce this sequence: one per label plus a
    /// separating blank between equal neighbours.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Blank-extended form `∅ y₁ ∅ … y_n ∅`.
    pub fn extended(&self) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.0.len() + 1);
        ext.push(BLANK);
        for &id in &self.0 {
            ext.push(id);
            ext.push(BLANK);
        }
        ext
    }
}

impl TryFrom<Vec<usize>> for LabelSequence {
    type Error = Error;

    fn try_from(ids: Vec<usize>) -> Result<Self> {
        Self::new(ids)
    }
}

/// Merges adjacent repeats, then removes blanks.
pub fn collapse(frames: &[usize]) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &f in frames {
        if f != BLANK && prev != Some(f) {
            out.push(f);
        }
        prev = Some(f);
    }
    LabelSequence(out)
}

/// Forward and backward log-probability tables over the extended labels.
///
/// `beta[t][s]` includes the emission at frame `t`, so the occupancy of state
/// `s` at `t` is `alpha + beta - log p_t(ext[s])`.
#[derive(Clone, Debug)]
pub struct CtcLattice {
    frames: usize,
    extended: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_likelihood: f64,
}

fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

impl CtcLattice {
    pub fn new(log_probs: &Tensor, labels: &LabelSequence) -> Result<Self> {
        validate(log_probs, labels)?;
        let frames = log_probs.rows();
        let extended = labels.extended();
        let states = extended.len();
        let lp = |t: usize, s: usize| log_probs.at(t, extended[s]);

        let mut alpha = vec![LOG_ZERO; frames * states];
        alpha[0] = lp(0, 0);
        if states > 1 {
            alpha[1] = lp(0, 1);
        }
        for t in 1..frames {
            let (prev, cur) = alpha.split_at_mut(t * states);
            let prev = &prev[(t - 1) * states..];
            for s in 0..states {
                let mut acc = prev[s];
                if s >= 1 {
                    acc = log_add(acc, prev[s - 1]);
                }
                if can_skip(&extended, s) {
                    acc = log_add(acc, prev[s - 2]);
                }
                cur[s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, s) };
            }
        }

        let mut beta = vec![LOG_ZERO; frames * states];
        let last = (frames - 1) * states;
        beta[last + states - 1] = lp(frames - 1, states - 1);
        if states > 1 {
            beta[last + states - 2] = lp(frames - 1, states - 2);
        }
        for t in (0..frames - 1).rev() {
            let (cur, next) = beta.split_at_mut((t + 1) * states);
            let cur = &mut cur[t * states..];
            for s in 0..states {
                let mut acc = next[s];
                if s + 1 < states {
                    acc = log_add(acc, next[s + 1]);
                }
                if s + 2 < states && can_skip(&extended, s + 2) {
                    acc = log_add(acc, next[s + 2]);
                }
                cur[s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, s) };
            }
        }

        let end = &alpha[last..];
        let log_likelihood = if states > 1 {
            log_add(end[states - 1], end[states - 2])
        } else {
            end[0]
        };
        Ok(Self {
            frames,
            extended,
            alpha,
            beta,
            log_likelihood,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn extended_labels(&self) -> &[usize] {
        &self.extended
    }

    pub fn alpha(&self, t: usize, s: usize) -> f64 {
        self.alpha[t * self.extended.len() + s]
    }

    pub fn beta(&self, t: usize, s: usize) -> f64 {
        self.beta[t * self.extended.len() + s]
    }

    /// `log Σ_paths p(path)`; `-inf` when the target is unreachable.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Log posterior mass of state `s` at frame `t`, unnormalized by the
    /// likelihood.
    pub fn log_occupancy(&self, log_probs: &Tensor, t: usize, s: usize) -> f64 {
        let (a, b) = (self.alpha(t, s), self.beta(t, s));
        if a == LOG_ZERO || b == LOG_ZERO {
            return LOG_ZERO;
        }
        a + b - log_probs.at(t, self.extended[s])
    }

    /// `log Σ_s occupancy(t, s)`; equals the log-likelihood at every frame.
    pub fn slice_log_likelihood(&self, log_probs: &Tensor, t: usize) -> f64 {
        let occ: Vec<f64> = (0..self.extended.len())
            .map(|s| self.log_occupancy(log_probs, t, s))
            .collect();
        log_sum_exp(&occ)
    }
}

fn validate(log_probs: &Tensor, labels: &LabelSequence) -> Result<()> {
    let (frames, width) = log_probs.as_matrix_dims("ctc")?;
    if frames == 0 || width < 2 {
        return Err(Error::Input(format!(
            "frame distribution must be T×(V+1) with T ≥ 1 and V ≥ 1, got {frames}×{width}"
        )));
    }
    for &id in labels.ids() {
        if id >= width {
            return Err(Error::Vocabulary { id, size: width });
        }
    }
    for t in 0..frames {
        let row = log_probs.row(t);
        if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Input(format!("frame {t} has NaN or +inf log-probability")));
        }
        let total = log_sum_exp(row);
        if total.abs() > NORMALIZATION_TOL {
            return Err(Error::Input(format!(
                "frame {t} is not normalized (log mass {total:e})"
            )));
        }
    }
    Ok(())
}

/// Negative log-likelihood and its gradient w.r.t. the frame log-probabilities.
#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `+inf` when no path can produce the target.
    pub loss: f64,
    /// `T × (V+1)`, zero for infeasible targets.
    pub grad: Tensor,
}

impl CtcLoss {
    pub fn is_feasible(&self) -> bool {
        self.loss.is_finite()
    }
}

/// CTC negative log-likelihood of `labels` under per-frame log-distributions.
///
/// The gradient treats every entry of `log_probs` as an independent input:
/// `∂loss/∂log p_t(c) = -Σ_{s: ext[s]=c} occupancy(t, s) / likelihood`.
pub fn ctc_loss(log_probs: &Tensor, labels: &LabelSequence) -> Result<CtcLoss> {
    let (frames, width) = log_probs.as_matrix_dims("ctc_loss")?;
    if frames < labels.min_frames() {
        validate(log_probs, labels)?;
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: Tensor::zeros(&[frames, width]),
        });
    }
    let lattice = CtcLattice::new(log_probs, labels)?;
    let ll = lattice.log_likelihood();
    if ll == LOG_ZERO {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: Tensor::zeros(&[frames, width]),
        });
    }
    let mut grad = vec![0.0; frames * width];
    for t in 0..frames {
        for (s, &label) in lattice.extended_labels().iter().enumerate() {
            let occ = lattice.log_occupancy(log_probs, t, s);
            if occ != LOG_ZERO {
                grad[t * width + label] -= exp(occ - ll);
            }
        }
    }
    Ok(CtcLoss {
        loss: -ll,
        grad: Tensor::new(vec![frames, width], grad)?,
    })
}

/// Number of length-`frames` labelings that collapse to `labels`.
pub fn count_alignments(frames: usize, labels: &LabelSequence) -> u128 {
    if frames == 0 {
        return u128::from(labels.is_empty());
    }
    let ext = labels.extended();
    let states = ext.len();
    let mut cur = vec![0u128; states];
    cur[0] = 1;
    if states > 1 {
        cur[1] = 1;
    }
    for _ in 1..frames {
        let mut next = vec![0u128; states];
        for s in 0..states {
            let mut n = cur[s];
            if s >= 1 {
                n += cur[s - 1];
            }
            if can_skip(&ext, s) {
                n += cur[s - 2];
            }
            next[s] = n;
        }
        cur = next;
    }
    if states > 1 {
        cur[states - 1] + cur[states - 2]
    } else {
        cur[0]
    }
}

/// Brute-force CTC loss: sums every one of the `(V+1)^T` labelings whose
/// collapse is `labels`. Only for `T ≤ 10`, `V ≤ 4`.
pub fn oracle_loss(log_probs: &Tensor, labels: &LabelSequence) -> Result<f64> {
    let (frames, width) = log_probs.as_matrix_dims("oracle_loss")?;
    if frames > ORACLE_MAX_FRAMES || width > ORACLE_MAX_LABELS + 1 {
        return Err(Error::Bound(format!(
            "{frames} frames × {} labels exceeds {ORACLE_MAX_FRAMES} × {ORACLE_MAX_LABELS}",
            width - 1
        )));
    }
    validate(log_probs, labels)?;
    let mut path = vec![0usize; frames];
    let mut total = LOG_ZERO;
    loop {
        if collapse(&path) == *labels {
            let lp: f64 = path.iter().enumerate().map(|(t, &c)| log_probs.at(t, c)).sum();
            total = log_add(total, lp);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(-total);
            }
            path[pos] += 1;
            if path[pos] < width {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
