#![allow(dead_code)]

use ctcnat::checkpoint::Checkpoint;
use ctcnat_core::data::{gen_synthetic, synthetic_vocabulary, SentencePair, SyntheticTask};
use ctcnat_core::transformer::{ModelConfig, ModelParams, Variant};

pub const VOCAB: usize = 8;

pub fn small_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::desk(variant, VOCAB + 4);
    c.d_model = 16;
    c.ff_dim = 32;
    c.heads = 2;
    if variant == Variant::DeepEncoder {
        c.enc_layers = 2;
    } else {
        c.enc_layers = 1;
        c.dec_layers = 1;
    }
    c.k = 2;
    c.max_len = 16;
    c
}

pub fn checkpoint(variant: Variant, seed: u64) -> Checkpoint {
    let config = small_config(variant);
    Checkpoint {
        params: ModelParams::init(&config, seed).unwrap(),
        config,
        vocab: synthetic_vocabulary(VOCAB),
        step: 7,
        valid_score: 12.5,
    }
}

pub fn copy_pairs(n: usize, seed: u64) -> Vec<SentencePair> {
    gen_synthetic(SyntheticTask::Copy, VOCAB, n, (2, 5), seed).unwrap()
}
