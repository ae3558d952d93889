//! Translation of token ids with any model variant.

use ctcnat_core::decoding::{ar_beam_decode, ar_greedy_decode, nar_decode, DecodeOptions};
use ctcnat_core::transformer::{ModelConfig, ModelParams};

use crate::Result;

/// Search strategy.
#[derive(Clone, Debug, PartialEq)]
pub enum Search {
    Greedy,
    Beam(DecodeOptions),
}

/// Output budget for autoregressive decoding: `ratio · source length + extra`
/// tokens before giving up on EOS.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthLimit {
    pub ratio: f64,
    pub extra: usize,
}

impl Default for LengthLimit {
    fn default() -> Self {
        Self { ratio: 2.0, extra: 10 }
    }
}

impl LengthLimit {
    pub fn steps(&self, source_len: usize) -> usize {
        (self.ratio * source_len as f64).ceil() as usize + self.extra
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub ids: Vec<usize>,
    /// Greedy frame labeling; only non-autoregressive models have one.
    pub frames: Option<Vec<usize>>,
}

impl Translation {
    pub fn null_count(&self) -> Option<usize> {
        self.frames.as_deref().map(ctcnat_core::decoding::null_count)
    }
}

pub fn translate(
    config: &ModelConfig,
    params: &ModelParams,
    source: &[usize],
    search: &Search,
    limit: LengthLimit,
) -> Result<Translation> {
    if config.variant.is_autoregressive() {
        let steps = limit.steps(source.len());
        let out = match search {
            Search::Greedy => ar_greedy_decode(config, params, source, steps)?,
            Search::Beam(opts) => ar_beam_decode(config, params, source, steps, opts)?,
        };
        return Ok(Translation { ids: out.into_ids(), frames: None });
    }
    let beam = match search {
        Search::Greedy => None,
        Search::Beam(opts) => Some(opts),
    };
    let out = nar_decode(config, params, source, beam)?;
    Ok(Translation { ids: out.labels.into_ids(), frames: Some(out.frames) })
}
