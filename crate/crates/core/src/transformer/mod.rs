//! Transformer blocks and the four model variants.
//!
//! Non-autoregressive variants project every encoder state to `k` decoder
//! inputs ([`split_states`]) and label all of them at once with a decoder that
//! has no temporal mask ([`decode_parallel`]). The autoregressive baseline
//! uses the same encoder with a causally masked decoder.
//!
//! Blocks are pre-norm residual: `x + sublayer(norm(x))`.

mod config;
mod model;
mod params;

pub use config::{ModelConfig, Variant};
pub use model::{
    bind, decode_autoregressive_step, decode_parallel, encode, encode_embedded, nar_log_probs,
    positional_encoding, split_states, teacher_forced, teacher_forced_embedded, Bound, Dropout,
    EncoderStates, SplitStates,
};
pub use model::graph as forward;
pub use params::ModelParams;
