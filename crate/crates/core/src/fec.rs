//! Rate-1/2 (7,5) convolutional code, random interleavers and a log-MAP BCJR decoder.
//!
//! LLRs everywhere are `ln P(bit = 1) / P(bit = 0)`, so a positive value
//! favours a one.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::airlink::seeded_rng;
use crate::error::{contract, Result};

/// Clipping applied to LLRs entering the trellis.
pub const LLR_CLIP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxStar {
    /// `max(a, b) + ln(1 + e^−|a−b|)`
    Exact,
    MaxLog,
}

impl MaxStar {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        if a == f64::NEG_INFINITY {
            return b;
        }
        if b == f64::NEG_INFINITY {
            return a;
        }
        match self {
            Self::Exact => a.max(b) + (-(a - b).abs()).exp().ln_1p(),
            Self::MaxLog => a.max(b),
        }
    }
}

/// Feed-forward convolutional code with two generator polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCode {
    pub generators: [u8; 2],
    pub constraint_length: usize,
    /// Zero bits appended to every message: `memory` flush bits plus padding.
    pub tail_bits: usize,
}

impl Default for ConvCode {
    /// The (7, 5)₈ code, K = 3, with a three-bit tail (497 message bits fill 1000 coded bits).
    fn default() -> Self {
        Self {
            generators: [0o7, 0o5],
            constraint_length: 3,
            tail_bits: 3,
        }
    }
}

impl ConvCode {
    pub fn memory(&self) -> usize {
        self.constraint_length - 1
    }

    pub fn num_states(&self) -> usize {
        1 << self.memory()
    }

    pub fn coded_len(&self, message_len: usize) -> usize {
        2 * (message_len + self.tail_bits)
    }

    pub fn message_len(&self, coded_len: usize) -> Option<usize> {
        (coded_len.is_multiple_of(2) && coded_len / 2 > self.tail_bits).then(|| coded_len / 2 - self.tail_bits)
    }

    /// Output pair and next state for `input` entering `state`.
    ///
    /// The state holds the previous `memory` inputs, most recent in the high bit.
    #[inline]
    fn step(&self, state: usize, input: u8) -> ([u8; 2], usize) {
        let m = self.memory();
        let reg = (usize::from(input) << m) | state;
        let out = self.generators.map(|g| ((reg & usize::from(g)).count_ones() & 1) as u8);
        (out, reg >> 1)
    }
}

/// Encodes and terminates `message`; the encoder returns to the zero state.
pub fn conv_encode(message: &[u8], code: &ConvCode) -> Result<Vec<u8>> {
    if message.is_empty() {
        return Err(contract("cannot encode an empty message"));
    }
    let mut out = Vec::with_capacity(code.coded_len(message.len()));
    let mut state = 0;
    for &b in message.iter().chain(std::iter::repeat_n(&0, code.tail_bits)) {
        let (o, next) = code.step(state, b & 1);
        out.extend_from_slice(&o);
        state = next;
    }
    debug_assert_eq!(state, 0);
    Ok(out)
}

/// Encoder state after feeding `bits` from the zero state.
pub fn final_state(bits: &[u8], code: &ConvCode) -> usize {
    bits.iter().fold(0, |s, &b| code.step(s, b & 1).1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    seed: u64,
}

impl Interleaver {
    /// Uniform random permutation of `len` positions.
    pub fn random(len: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(&mut seeded_rng(seed, 0x1e7e));
        Self { perm, seed }
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
            seed: 0,
        }
    }

    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(contract("interleaver permutation is not a bijection"));
            }
        }
        Ok(Self { perm, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `out[i] = x[perm[i]]`
    pub fn interleave<T: Copy>(&self, x: &[T]) -> Result<Vec<T>> {
        self.check(x.len())?;
        Ok(self.perm.iter().map(|&p| x[p]).collect())
    }

    pub fn deinterleave<T: Copy + Default>(&self, y: &[T]) -> Result<Vec<T>> {
        self.check(y.len())?;
        let mut out = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = y[i];
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.perm.len() {
            return Err(contract(format!("{len} items for an interleaver of size {}", self.perm.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutput {
    /// λ₂: posterior minus prior, per coded bit.
    pub extrinsic_coded: Vec<f64>,
    /// Λ₂ per coded bit.
    pub posterior_coded: Vec<f64>,
    /// Posterior LLR of each message bit (tail excluded).
    pub posterior_message: Vec<f64>,
}

impl MapOutput {
    pub fn message_decisions(&self) -> Vec<u8> {
        self.posterior_message.iter().map(|&l| u8::from(l > 0.0)).collect()
    }
}

pub fn map_decode(prior_llr_coded: &[f64], code: &ConvCode) -> Result<MapOutput> {
    map_decode_with(prior_llr_coded, code, MaxStar::Exact)
}

/// Forward-backward decoding over the code trellis.
///
/// The trellis starts and ends in the zero state; the input of every other
/// step, including the padding bit that follows the message, is left free.
/// That keeps every coded bit equiprobable under uninformative priors.
pub fn map_decode_with(prior_llr_coded: &[f64], code: &ConvCode, kind: MaxStar) -> Result<MapOutput> {
    let msg_len = code
        .message_len(prior_llr_coded.len())
        .ok_or_else(|| contract(format!("{} coded LLRs do not form a codeword", prior_llr_coded.len())))?;
    let steps = prior_llr_coded.len() / 2;
    let ns = code.num_states();
    let prior: Vec<f64> = prior_llr_coded.iter().map(|l| l.clamp(-LLR_CLIP, LLR_CLIP)).collect();

    // transitions[state][input] = (outputs, next)
    let trans: Vec<[([u8; 2], usize); 2]> = (0..ns).map(|s| [code.step(s, 0), code.step(s, 1)]).collect();
    let gamma = |t: usize, out: [u8; 2]| f64::from(out[0]) * prior[2 * t] + f64::from(out[1]) * prior[2 * t + 1];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; (steps + 1) * ns];
    alpha[0] = 0.0;
    for t in 0..steps {
        for s in 0..ns {
            let a = alpha[t * ns + s];
            if a == ninf {
                continue;
            }
            for &(out, next) in &trans[s] {
                let cell = &mut alpha[(t + 1) * ns + next];
                *cell = kind.apply(*cell, a + gamma(t, out));
            }
        }
        normalize(&mut alpha[(t + 1) * ns..(t + 2) * ns]);
    }

    let mut beta = vec![ninf; (steps + 1) * ns];
    beta[steps * ns] = 0.0;
    for t in (0..steps).rev() {
        for s in 0..ns {
            let mut acc = ninf;
            for &(out, next) in &trans[s] {
                acc = kind.apply(acc, gamma(t, out) + beta[(t + 1) * ns + next]);
            }
            beta[t * ns + s] = acc;
        }
        normalize(&mut beta[t * ns..(t + 1) * ns]);
    }

    let mut posterior_coded = vec![0.0; 2 * steps];
    let mut posterior_message = Vec::with_capacity(msg_len);
    for t in 0..steps {
        // [bit position][value], plus input bit
        let mut acc = [[ninf; 2]; 2];
        let mut acc_in = [ninf; 2];
        for s in 0..ns {
            let a = alpha[t * ns + s];
            if a == ninf {
                continue;
            }
            for (input, &(out, next)) in trans[s].iter().enumerate() {
                let m = a + gamma(t, out) + beta[(t + 1) * ns + next];
                for j in 0..2 {
                    let v = usize::from(out[j]);
                    acc[j][v] = kind.apply(acc[j][v], m);
                }
                acc_in[input] = kind.apply(acc_in[input], m);
            }
        }
        for j in 0..2 {
            posterior_coded[2 * t + j] = llr_from(acc[j][1], acc[j][0]);
        }
        if t < msg_len {
            posterior_message.push(llr_from(acc_in[1], acc_in[0]));
        }
    }
    let extrinsic_coded = posterior_coded.iter().zip(&prior).map(|(p, a)| p - a).collect();
    Ok(MapOutput {
        extrinsic_coded,
        posterior_coded,
        posterior_message,
    })
}

#[inline]
fn llr_from(one: f64, zero: f64) -> f64 {
    match (one == f64::NEG_INFINITY, zero == f64::NEG_INFINITY) {
        (true, true) => 0.0,
        (true, false) => -f64::MAX,
        (false, true) => f64::MAX,
        _ => one - zero,
    }
}

fn normalize(metrics: &mut [f64]) {
    let m = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        metrics.iter_mut().for_each(|x| *x -= m);
    }
}
