//! Independent (7,5) encoder and Viterbi decoder shared by test targets.
#![allow(dead_code)]

/// g₁ = 1 + D + D², g₂ = 1 + D², written as a plain shift register.
pub fn encode_ref(msg: &[u8], tail: usize) -> Vec<u8> {
    let (mut d1, mut d2) = (0u8, 0u8);
    let mut out = Vec::new();
    for &b in msg.iter().chain(std::iter::repeat_n(&0, tail)) {
        out.push(b ^ d1 ^ d2);
        out.push(b ^ d2);
        d2 = d1;
        d1 = b;
    }
    out
}

/// Soft Viterbi over the 4-state trellis, zero start and zero end.
/// Returns every input decision including the tail steps.
pub fn viterbi(llr: &[f64]) -> Vec<u8> {
    let steps = llr.len() / 2;
    // state = (d1, d2) packed as d1*2 + d2
    let mut metric = [f64::NEG_INFINITY; 4];
    metric[0] = 0.0;
    let mut back: Vec<[(usize, u8); 4]> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut next = [f64::NEG_INFINITY; 4];
        let mut from = [(0usize, 0u8); 4];
        for (s, &m0) in metric.iter().enumerate() {
            if m0 == f64::NEG_INFINITY {
                continue;
            }
            let (d1, d2) = ((s >> 1) as u8, (s & 1) as u8);
            for b in 0..2u8 {
                let c1 = b ^ d1 ^ d2;
                let c2 = b ^ d2;
                let m = m0 + f64::from(c1) * llr[2 * t] + f64::from(c2) * llr[2 * t + 1];
                let ns = (usize::from(b) << 1) | usize::from(d1);
                if m > next[ns] {
                    next[ns] = m;
                    from[ns] = (s, b);
                }
            }
        }
        metric = next;
        back.push(from);
    }
    let mut s = 0;
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        let (prev, b) = back[t][s];
        bits[t] = b;
        s = prev;
    }
    bits
}
