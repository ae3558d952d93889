#![allow(dead_code)]

use ctcnat_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks the tape gradient of `f` against central finite differences.
///
/// `f` maps leaf vars to an output; the scalar objective is a fixed random
/// projection of that output so every output element matters.
pub fn check_gradients(
    inputs: &[Tensor],
    seed: u64,
    tol: f64,
    f: impl Fn(&mut Graph<'_>, &[Var]) -> Var,
) -> f64 {
    let eval = |ins: &[Tensor], proj: Option<&[f64]>| -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars);
        let y = g.value(out).data().to_vec();
        let r: Vec<f64> = match proj {
            Some(p) => p.to_vec(),
            None => {
                let mut rr = rng(seed);
                (0..y.len()).map(|_| rr.gen_range(-1.0..1.0)).collect()
            }
        };
        let value: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let loss = g.loss(out, value, r.clone()).unwrap();
        g.backward(loss).unwrap();
        let grads = vars
            .iter()
            .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec))
            .collect();
        (value, r, grads)
    };
    let (_, proj, grads) = eval(inputs, None);
    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= FD_STEP;
            let fp = eval(&plus, Some(&proj)).0;
            let fm = eval(&minus, Some(&proj)).0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let e = rel_err(grads[ti][j], numeric);
            assert!(
                e <= tol,
                "input {ti} elem {j}: analytic {} numeric {numeric} (rel {e})",
                grads[ti][j]
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Random normalized `frames × width` log-distribution.
pub fn random_log_probs(rng: &mut ChaCha8Rng, frames: usize, width: usize) -> Tensor {
    let logits = random_tensor(rng, &[frames, width]);
    let scaled = Tensor::new(
        logits.shape().to_vec(),
        logits.data().iter().map(|v| 2.5 * v).collect(),
    )
    .unwrap();
    ctcnat_core::tensor::log_softmax(&scaled).unwrap()
}

/// Every labeling of `frames` frames over `width` symbols.
pub fn all_paths(frames: usize, width: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..frames {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..width).map(move |c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// Collapse written independently of the library: drop blanks from the
/// run-length-encoded path.
pub fn collapse_ref(path: &[usize]) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    for &c in path {
        if runs.last() != Some(&c) {
            runs.push(c);
        }
    }
    runs.into_iter().filter(|&c| c != 0).collect()
}

/// Probability of every collapsed output, by exhaustive enumeration.
pub fn grouped_path_mass(log_probs: &Tensor) -> std::collections::BTreeMap<Vec<usize>, f64> {
    let (frames, width) = (log_probs.rows(), log_probs.last_dim());
    let mut groups = std::collections::BTreeMap::new();
    for p in all_paths(frames, width) {
        let prob: f64 = p
            .iter()
            .enumerate()
            .map(|(t, &c)| log_probs.at(t, c).exp())
            .product();
        *groups.entry(collapse_ref(&p)).or_insert(0.0) += prob;
    }
    groups
}

use ctcnat_core::transformer::{ModelConfig, ModelParams, Variant};

/// Tiny model for structural tests.
pub fn tiny_config(variant: Variant, vocab_size: usize) -> ModelConfig {
    let mut c = ModelConfig::desk(variant, vocab_size);
    c.d_model = 8;
    c.ff_dim = 16;
    c.heads = 2;
    c.enc_layers = if variant == Variant::DeepEncoder { 2 } else { 1 };
    c.dec_layers = if variant == Variant::DeepEncoder { 0 } else { 1 };
    c.k = 2;
    c.max_len = 12;
    c.dropout = 0.0;
    c
}

pub fn tiny_model(variant: Variant, vocab_size: usize, seed: u64) -> (ModelConfig, ModelParams) {
    let c = tiny_config(variant, vocab_size);
    let p = ModelParams::init(&c, seed).unwrap();
    (c, p)
}
