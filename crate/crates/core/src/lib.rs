//! Non-autoregressive sequence transduction trained with connectionist
//! temporal classification (CTC).
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, the training driver and the command line live in
//! the `ctcnat` companion crate.
//!
//! Module map:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode gradient tape.
//! - [`transformer`]: model configuration, parameters and forward passes for
//!   the deep-encoder, encoder-decoder, positional encoder-decoder and
//!   autoregressive baseline variants, including encoder-state splitting.
//! - [`ctc`]: collapse, forward-backward lattice, loss and gradient, and the
//!   enumeration oracles.
//! - [`decoding`]: greedy and prefix beam search for CTC outputs, greedy and
//!   length-normalized beam search for the autoregressive baseline.
//! - [`data`]: vocabulary, tokenization, batching and synthetic tasks.
//! - [`metrics`]: corpus and sentence BLEU, Pearson correlation.
//! - [`optim`], [`objective`]: Adam, the learning-rate schedule, batch losses
//!   and checkpoint averaging.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ctc;
pub mod data;
pub mod decoding;
mod error;
pub mod math;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
