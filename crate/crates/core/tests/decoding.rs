//! Decoders against exhaustive enumeration.

mod common;

use common::{grouped_path_mass, random_log_probs, rng, tiny_model};
use ctcnat_core::ctc::{ctc_loss, LabelSequence};
use ctcnat_core::data::EOS;
use ctcnat_core::decoding::{
    ar_beam_decode, ar_beam_search, ar_greedy_decode, ctc_beam_search, greedy_ctc_decode,
    greedy_frames, DecodeOptions,
};
use ctcnat_core::transformer::{encode, teacher_forced, ModelConfig, ModelParams, Variant};
use ctcnat_core::{Error, Tensor};
use rand::Rng;

fn greedy_oracle(lp: &Tensor) -> Vec<usize> {
    let frames: Vec<usize> = (0..lp.rows())
        .map(|t| {
            let row = lp.row(t);
            (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        })
        .collect();
    let mut runs = frames;
    runs.dedup();
    runs.into_iter().filter(|&c| c != 0).collect()
}

#[test]
fn greedy_matches_reference() {
    let mut r = rng(100);
    for _ in 0..100 {
        let frames = r.gen_range(1..12);
        let width = r.gen_range(2..6);
        let lp = random_log_probs(&mut r, frames, width);
        assert_eq!(greedy_ctc_decode(&lp).ids(), greedy_oracle(&lp).as_slice());
        assert_eq!(greedy_frames(&lp).len(), frames);
    }
}

#[test]
fn unpruned_beam_is_exact() {
    let mut r = rng(101);
    for _ in 0..60 {
        let frames = r.gen_range(1..=4);
        let width = r.gen_range(2..=3);
        let lp = random_log_probs(&mut r, frames, width);
        let opts = DecodeOptions::with_beam(width.pow(frames as u32));
        let beam = ctc_beam_search(&lp, &opts, None).unwrap();
        let groups = grouped_path_mass(&lp);
        assert_eq!(beam.len(), groups.len());
        for h in &beam {
            let exact = groups[h.prefix.ids()].ln();
            assert!((h.score - exact).abs() < 1e-9, "{:?}: {} vs {}", h.prefix, h.score, exact);
        }
        let (best, _) = groups
            .iter()
            .fold((None, f64::MIN), |(b, m), (k, v)| if *v > m { (Some(k), *v) } else { (b, m) });
        assert_eq!(beam[0].prefix.ids(), best.unwrap().as_slice());
    }
}

#[test]
fn pruned_scores_are_lower_bounds() {
    let mut r = rng(102);
    for _ in 0..100 {
        let frames = r.gen_range(2..10);
        let width = r.gen_range(2..5);
        let lp = random_log_probs(&mut r, frames, width);
        for beam_width in [1, 2, 3] {
            for h in ctc_beam_search(&lp, &DecodeOptions::with_beam(beam_width), None).unwrap() {
                let exact = -ctc_loss(&lp, &h.prefix).unwrap().loss;
                assert!(h.score <= exact + 1e-9);
            }
        }
    }
}

#[test]
fn wider_beam_never_scores_lower() {
    let mut r = rng(103);
    for _ in 0..300 {
        let lp = {
            let (t, v) = (r.gen_range(2..9), r.gen_range(2..5));
            random_log_probs(&mut r, t, v)
        };
        let narrow = ctc_beam_search(&lp, &DecodeOptions::with_beam(2), None).unwrap();
        let wide = ctc_beam_search(&lp, &DecodeOptions::with_beam(4), None).unwrap();
        assert!(wide[0].score >= narrow[0].score - 1e-12);
    }
}

#[test]
fn zero_scorer_is_neutral() {
    let mut r = rng(104);
    let zero = |_: &[usize]| 0.0;
    for _ in 0..50 {
        let lp = {
            let (t, v) = (r.gen_range(1..8), r.gen_range(2..5));
            random_log_probs(&mut r, t, v)
        };
        let mut opts = DecodeOptions::with_beam(3);
        opts.external_scorer_weight = 1.0;
        let a = ctc_beam_search(&lp, &opts, None).unwrap();
        let b = ctc_beam_search(&lp, &opts, Some(&zero)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn scorer_can_change_the_ranking() {
    // two-frame table preferring [4]; a scorer rewarding [5] flips the winner
    let lp = Tensor::from_rows(&[vec![0.1f64.ln(), 0.5f64.ln(), 0.4f64.ln()], vec![0.9f64.ln(), 0.05f64.ln(), 0.05f64.ln()]]).unwrap();
    let plain = ctc_beam_search(&lp, &DecodeOptions::with_beam(3), None).unwrap();
    assert_eq!(plain[0].prefix.ids(), &[1]);
    let favour = |p: &[usize]| if p == [2] { 0.0 } else { -10.0 };
    let mut opts = DecodeOptions::with_beam(3);
    opts.external_scorer_weight = 1.0;
    let scored = ctc_beam_search(&lp, &opts, Some(&favour)).unwrap();
    assert_eq!(scored[0].prefix.ids(), &[2]);
}

#[test]
fn greedy_output_survives_in_an_unpruned_beam() {
    let mut r = rng(105);
    for _ in 0..100 {
        let frames = r.gen_range(1..6);
        let width = r.gen_range(2..4);
        let lp = random_log_probs(&mut r, frames, width);
        let greedy = greedy_ctc_decode(&lp);
        let opts = DecodeOptions::with_beam(width.pow(frames as u32));
        let beam = ctc_beam_search(&lp, &opts, None).unwrap();
        assert!(beam.iter().any(|h| h.prefix == greedy));
    }
}

#[test]
fn greedy_output_can_be_pruned_at_prefix_count_width() {
    // Greedy frames are [0,1,0,1,0]: three distinct greedy prefixes, yet
    // [2,1] and [1,2] outscore [1,1] and push it out of a width-3 beam.
    let lp = Tensor::new(
        vec![5, 3],
        vec![
            -0.8966109918744372, -1.243434962837492, -1.1918524344408967,
            -2.2931230858794596, -0.5137241542697126, -1.2013565332521872,
            -0.5165925321227698, -0.9501347774634965, -4.088683575690261,
            -1.7086595786221588, -0.7681535322473239, -1.0355732334119667,
            -0.334177883312484, -2.069270587040737, -1.8464539708266314,
        ],
    )
    .unwrap();
    assert_eq!(greedy_frames(&lp), vec![0, 1, 0, 1, 0]);
    let greedy = greedy_ctc_decode(&lp);
    assert_eq!(greedy.ids(), &[1, 1]);
    let narrow = ctc_beam_search(&lp, &DecodeOptions::with_beam(3), None).unwrap();
    assert!(narrow.iter().all(|h| h.prefix != greedy));
    let full = ctc_beam_search(&lp, &DecodeOptions::with_beam(243), None).unwrap();
    assert!(full.iter().any(|h| h.prefix == greedy));
}

#[test]
fn beam_search_is_deterministic() {
    let lp = random_log_probs(&mut rng(106), 8, 4);
    let opts = DecodeOptions::with_beam(3);
    assert_eq!(ctc_beam_search(&lp, &opts, None).unwrap(), ctc_beam_search(&lp, &opts, None).unwrap());
}

#[test]
fn zero_beam_is_rejected() {
    let lp = random_log_probs(&mut rng(107), 3, 3);
    assert!(matches!(ctc_beam_search(&lp, &DecodeOptions::with_beam(0), None), Err(Error::Options(_))));
}

fn ar_model(seed: u64) -> (ModelConfig, ModelParams) {
    let (c, mut p) = tiny_model(Variant::Autoregressive, 6, seed);
    // sharper distributions so search choices matter
    for v in p.get_mut("out.w").unwrap().data_mut() {
        *v *= 4.0;
    }
    (c, p)
}

/// Model whose output ignores its input and always prefers `token`.
fn constant_model(token: usize) -> (ModelConfig, ModelParams) {
    let (c, mut p) = tiny_model(Variant::Autoregressive, 6, 7);
    p.get_mut("out.w").unwrap().data_mut().fill(0.0);
    let b = p.get_mut("out.b").unwrap().data_mut();
    b.fill(0.0);
    b[token] = 50.0;
    (c, p)
}

#[test]
fn ar_greedy_equals_unit_beam() {
    for seed in 0..20 {
        let (c, p) = ar_model(200 + seed);
        let src = [4, 5, 4 + (seed as usize % 2)];
        let greedy = ar_greedy_decode(&c, &p, &src, 6).unwrap();
        let beam = ar_beam_decode(&c, &p, &src, 6, &DecodeOptions::with_beam(1)).unwrap();
        assert_eq!(greedy, beam, "seed {seed}");
    }
}

fn sequence_logp(c: &ModelConfig, p: &ModelParams, src: &[usize], tokens: &[usize], eos: bool) -> f64 {
    let enc = encode(c, p, src).unwrap();
    let rows = teacher_forced(c, p, &enc, tokens).unwrap();
    let mut lp: f64 = tokens.iter().enumerate().map(|(t, &tok)| rows.at(t, tok)).sum();
    if eos {
        lp += rows.at(tokens.len(), EOS);
    }
    lp
}

#[test]
fn ar_unpruned_beam_matches_enumeration() {
    let emit = [3usize, 4, 5];
    let max_steps = 3;
    for seed in 0..4 {
        let (c, p) = ar_model(300 + seed);
        let src = [4, 5];
        let mut best = (f64::MIN, Vec::new());
        let mut seqs: Vec<Vec<usize>> = vec![vec![]];
        for len in 0..=max_steps {
            for s in &seqs {
                if len < max_steps {
                    let lp = sequence_logp(&c, &p, &src, s, true) / (len + 1) as f64;
                    if lp > best.0 {
                        best = (lp, s.clone());
                    }
                } else {
                    let lp = sequence_logp(&c, &p, &src, s, false) / len as f64;
                    if lp > best.0 {
                        best = (lp, s.clone());
                    }
                }
            }
            seqs = seqs.iter().flat_map(|s| emit.iter().map(move |&t| [s.clone(), vec![t]].concat())).collect();
        }
        let opts = DecodeOptions::with_beam(4usize.pow(max_steps as u32));
        let hyps = ar_beam_search(&c, &p, &src, max_steps, &opts).unwrap();
        assert_eq!(hyps[0].tokens, best.1, "seed {seed}");
        assert!((hyps[0].normalized() - best.0).abs() < 1e-9);
    }
}

#[test]
fn immediate_eos_gives_empty_output() {
    let (c, p) = constant_model(EOS);
    assert!(ar_greedy_decode(&c, &p, &[4, 5], 5).unwrap().is_empty());
    assert!(ar_beam_decode(&c, &p, &[4, 5], 5, &DecodeOptions::with_beam(3)).unwrap().is_empty());
}

#[test]
fn ar_output_is_bounded_by_max_steps() {
    let (c, p) = constant_model(4);
    for beam in [1, 2, 4] {
        let out = ar_beam_decode(&c, &p, &[4, 5], 4, &DecodeOptions::with_beam(beam)).unwrap();
        assert_eq!(out, LabelSequence::new(vec![4; 4]).unwrap());
    }
    assert_eq!(ar_greedy_decode(&c, &p, &[4], 7).unwrap().len(), 7);
    for seed in 0..5 {
        let (c, p) = ar_model(400 + seed);
        assert!(ar_greedy_decode(&c, &p, &[4, 5], 3).unwrap().len() <= 3);
    }
}

#[test]
fn ar_decoding_never_emits_blank_or_pad() {
    for token in [0, 1] {
        let (c, p) = constant_model(token);
        let out = ar_greedy_decode(&c, &p, &[4], 4).unwrap();
        assert!(out.ids().iter().all(|&t| t > 1));
    }
}
