//! File formats, training, evaluation and benchmarking on top of
//! [`ctcnat_core`].
//!
//! - [`corpus`]: parallel text files and vocabulary files
//! - [`checkpoint`]: binary checkpoint format
//! - [`decode`]: one entry point for every model variant
//! - [`train`]: optimization loop, checkpoint retention and averaging
//! - [`evaluation`]: BLEU reports and correlations
//! - [`bench`]: decoding latency
//! - [`config`]: `key=value` run configuration

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decode;
mod error;
pub mod evaluation;
pub mod train;

pub use error::{Error, Result};
