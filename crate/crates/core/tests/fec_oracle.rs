//! BCJR decoder checked against a hand-written Viterbi decoder and
//! brute-force codeword enumeration.

use mfsic::airlink::seeded_rng;
use mfsic::fec::{conv_encode, map_decode, map_decode_with, ConvCode, MaxStar};
use rand::Rng;
use rand_distr::{Distribution, Normal};

mod common;
use common::{encode_ref, viterbi};

fn noisy_llrs(code_bits: &[u8], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = Normal::new(0.0, sigma).unwrap();
    code_bits
        .iter()
        .map(|&c| {
            let y = if c == 1 { 1.0 } else { -1.0 } + n.sample(rng);
            2.0 * y / (sigma * sigma)
        })
        .collect()
}

#[test]
fn encoder_matches_shift_register() {
    let code = ConvCode::default();
    let mut rng = seeded_rng(3, 0);
    for len in [1, 2, 7, 64, 497] {
        let msg: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
        assert_eq!(conv_encode(&msg, &code).unwrap(), encode_ref(&msg, 3));
    }
    let mut impulse = vec![0u8; 497];
    impulse[0] = 1;
    let c = conv_encode(&impulse, &code).unwrap();
    assert_eq!(c.len(), 1000);
    assert_eq!(&c[..6], &[1, 1, 1, 0, 1, 1]);
}

#[test]
fn bcjr_agrees_with_viterbi() {
    let code = ConvCode::default();
    let frames = 1000;
    let mut agree = 0;
    let mut rng = seeded_rng(11, 0);
    // Eb/N0 = 6 dB at rate ≈ 1/2
    let sigma = (1.0 / (2.0 * 0.497 * 10f64.powf(0.6))).sqrt();
    for _ in 0..frames {
        let msg: Vec<u8> = (0..497).map(|_| rng.random_range(0..2)).collect();
        let llr = noisy_llrs(&conv_encode(&msg, &code).unwrap(), sigma, &mut rng);
        let map = map_decode(&llr, &code).unwrap().message_decisions();
        let vit = viterbi(&llr);
        if map[..] == vit[..497] {
            agree += 1;
        }
    }
    assert!(agree * 100 >= 99 * frames, "agreement {agree}/{frames}");
}

#[test]
fn posterior_is_extrinsic_plus_prior() {
    let code = ConvCode::default();
    let mut rng = seeded_rng(12, 0);
    for _ in 0..20 {
        let msg: Vec<u8> = (0..497).map(|_| rng.random_range(0..2)).collect();
        let llr = noisy_llrs(&conv_encode(&msg, &code).unwrap(), 0.9, &mut rng);
        for kind in [MaxStar::Exact, MaxStar::MaxLog] {
            let out = map_decode_with(&llr, &code, kind).unwrap();
            for (i, l) in llr.iter().enumerate() {
                let want = out.extrinsic_coded[i] + l.clamp(-50.0, 50.0);
                assert!((out.posterior_coded[i] - want).abs() <= 1e-9, "bit {i}");
            }
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact bitwise posteriors by enumerating every terminated input sequence.
/// The pad step after the message is free; only the final two inputs are forced to zero.
fn brute_force(llr: &[f64], msg_len: usize) -> (Vec<f64>, Vec<f64>) {
    let steps = llr.len() / 2;
    let free = steps - 2;
    let mut coded_num = vec![Vec::new(); llr.len()];
    let mut coded_den = vec![Vec::new(); llr.len()];
    let mut msg_num = vec![Vec::new(); msg_len];
    let mut msg_den = vec![Vec::new(); msg_len];
    for word in 0..(1u32 << free) {
        let inputs: Vec<u8> = (0..free).map(|i| ((word >> i) & 1) as u8).collect();
        let c = encode_ref(&inputs, 2);
        let score: f64 = c.iter().zip(llr).map(|(&b, &l)| f64::from(b) * l).sum();
        for (i, &b) in c.iter().enumerate() {
            if b == 1 { &mut coded_num[i] } else { &mut coded_den[i] }.push(score);
        }
        for i in 0..msg_len {
            if inputs[i] == 1 { &mut msg_num[i] } else { &mut msg_den[i] }.push(score);
        }
    }
    let lr = |num: &[Vec<f64>], den: &[Vec<f64>]| -> Vec<f64> {
        num.iter().zip(den).map(|(n, d)| log_sum_exp(n) - log_sum_exp(d)).collect()
    };
    (lr(&coded_num, &coded_den), lr(&msg_num, &msg_den))
}

#[test]
fn bcjr_matches_codeword_enumeration() {
    let code = ConvCode::default();
    let mut rng = seeded_rng(13, 0);
    for msg_len in [1, 3, 6, 9] {
        let msg: Vec<u8> = (0..msg_len).map(|_| rng.random_range(0..2)).collect();
        let llr = noisy_llrs(&conv_encode(&msg, &code).unwrap(), 1.1, &mut rng);
        let out = map_decode(&llr, &code).unwrap();
        let (coded, message) = brute_force(&llr, msg_len);
        for (a, b) in out.posterior_coded.iter().zip(&coded) {
            assert!((a - b).abs() < 1e-9, "coded posterior {a} vs {b}");
        }
        for (a, b) in out.posterior_message.iter().zip(&message) {
            assert!((a - b).abs() < 1e-9, "message posterior {a} vs {b}");
        }
    }
}

#[test]
fn max_log_keeps_the_exact_sign() {
    let code = ConvCode::default();
    let mut rng = seeded_rng(14, 0);
    // Eb/N0 = 4 dB
    let sigma = (1.0 / (2.0 * 0.497 * 10f64.powf(0.4))).sqrt();
    let (mut flips, mut total) = (0usize, 0usize);
    for _ in 0..50 {
        let msg: Vec<u8> = (0..497).map(|_| rng.random_range(0..2)).collect();
        let llr = noisy_llrs(&conv_encode(&msg, &code).unwrap(), sigma, &mut rng);
        let exact = map_decode_with(&llr, &code, MaxStar::Exact).unwrap();
        let approx = map_decode_with(&llr, &code, MaxStar::MaxLog).unwrap();
        for (a, b) in exact.extrinsic_coded.iter().zip(&approx.extrinsic_coded) {
            total += 1;
            if (a > &0.0) != (b > &0.0) {
                flips += 1;
            }
        }
    }
    assert!(flips * 50 <= total, "{flips} sign changes in {total}");
}
