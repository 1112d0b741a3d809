//! Flat-fading uplink: constellations, channel draws, noise and pilots.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::numerics::{mat_vec, Cholesky, ComplexMatrix, ComplexVector};

/// Deterministic generator for a `(seed, stream)` pair.
///
/// Streams give every Monte-Carlo trial its own independent sequence without
/// depending on which worker thread runs it.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstellationKind {
    QpskAntiGray,
    QpskGray,
    Qam16Gray,
}

impl fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::QpskAntiGray => "qpsk-antigray",
            Self::QpskGray => "qpsk-gray",
            Self::Qam16Gray => "16qam-gray",
        })
    }
}

impl FromStr for ConstellationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk-antigray" | "qpsk-anti-gray" => Ok(Self::QpskAntiGray),
            "qpsk-gray" | "qpsk" => Ok(Self::QpskGray),
            "16qam-gray" | "16qam" | "qam16" => Ok(Self::Qam16Gray),
            other => Err(format!("unknown constellation `{other}`")),
        }
    }
}

/// A labelled, unit-energy symbol alphabet.
///
/// Points are stored by label: `points()[l]` carries the bit string `l`
/// (most significant bit first), so the point index *is* the label.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Complex64>,
    bits_per_symbol: usize,
    max_magnitude: f64,
}

impl Constellation {
    pub fn new(kind: ConstellationKind) -> Self {
        let a = FRAC_1_SQRT_2;
        let points = match kind {
            // 00 -> 45°, 01 -> 225°, 10 -> 315°, 11 -> 135°
            ConstellationKind::QpskAntiGray => vec![
                Complex64::new(a, a),
                Complex64::new(-a, -a),
                Complex64::new(a, -a),
                Complex64::new(-a, a),
            ],
            // first bit picks the sign of I, second the sign of Q
            ConstellationKind::QpskGray => vec![
                Complex64::new(a, a),
                Complex64::new(a, -a),
                Complex64::new(-a, a),
                Complex64::new(-a, -a),
            ],
            ConstellationKind::Qam16Gray => {
                // Gray-coded PAM-4 per rail: 00 -3, 01 -1, 11 +1, 10 +3
                let level = |b: usize| match b {
                    0b00 => -3.0,
                    0b01 => -1.0,
                    0b11 => 1.0,
                    _ => 3.0,
                };
                let scale = 1.0 / 10f64.sqrt();
                (0..16)
                    .map(|l| Complex64::new(level(l >> 2) * scale, level(l & 3) * scale))
                    .collect()
            }
        };
        let bits_per_symbol = points.len().trailing_zeros() as usize;
        let max_magnitude = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        Self {
            kind,
            points,
            bits_per_symbol,
            max_magnitude,
        }
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn max_magnitude(&self) -> f64 {
        self.max_magnitude
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Bit `j` (0 = most significant) of the label of point `index`.
    #[inline]
    pub fn bit(&self, index: usize, j: usize) -> u8 {
        ((index >> (self.bits_per_symbol - 1 - j)) & 1) as u8
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    /// Index of the nearest point; ties go to the lowest index.
    pub fn nearest_index(&self, u: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (u - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Indices of the `m` nearest points, nearest first, ties by index.
    pub fn nearest_indices(&self, u: Complex64, m: usize) -> Vec<usize> {
        let mut idx: Vec<(f64, usize)> = self.points.iter().enumerate().map(|(i, p)| ((u - p).norm_sqr(), i)).collect();
        idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        idx.into_iter().take(m).map(|(_, i)| i).collect()
    }
}

pub fn quantize(u: Complex64, c: &Constellation) -> Complex64 {
    c.point(c.nearest_index(u))
}

/// Maps bits (MSB first per symbol) to constellation points.
pub fn modulate(bits: &[u8], c: &Constellation) -> Result<ComplexVector> {
    modulate_indices(bits, c).map(|idx| idx.into_iter().map(|i| c.point(i)).collect())
}

pub fn modulate_indices(bits: &[u8], c: &Constellation) -> Result<Vec<usize>> {
    let m = c.bits_per_symbol();
    if !bits.len().is_multiple_of(m) {
        return Err(contract(format!(
            "{} bits is not a multiple of {m} bits per symbol",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(m)
        .map(|g| g.iter().fold(0usize, |acc, &b| (acc << 1) | usize::from(b & 1)))
        .collect())
}

/// Hard demapping: nearest point, then its label.
pub fn demap_hard(symbols: &[Complex64], c: &Constellation) -> Vec<u8> {
    let mut out = Vec::with_capacity(symbols.len() * c.bits_per_symbol());
    for &s in symbols {
        push_label_bits(c.nearest_index(s), c, &mut out);
    }
    out
}

pub fn push_label_bits(index: usize, c: &Constellation, out: &mut Vec<u8>) {
    for j in 0..c.bits_per_symbol() {
        out.push(c.bit(index, j));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: ComplexMatrix,
    pub sigma_v2: f64,
}

impl ChannelRealization {
    pub fn new(h: ComplexMatrix, sigma_v2: f64) -> Result<Self> {
        if !(sigma_v2 > 0.0) {
            return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
        }
        Ok(Self { h, sigma_v2 })
    }

    pub fn users(&self) -> usize {
        self.h.cols()
    }

    pub fn rx_antennas(&self) -> usize {
        self.h.rows()
    }
}

/// `N_R × K` matrix of i.i.d. CN(0, 1) gains.
pub fn gen_channel(users: usize, rx: usize, seed: u64) -> Result<ComplexMatrix> {
    gen_channel_with(users, rx, &mut seeded_rng(seed, 0))
}

pub fn gen_channel_with<R: Rng + ?Sized>(users: usize, rx: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if users == 0 || rx == 0 {
        return Err(contract(format!("channel needs K ≥ 1 and N_R ≥ 1, got K={users}, N_R={rx}")));
    }
    Ok(ComplexMatrix::from_fn(rx, users, |_, _| complex_gaussian(rng, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub eb_n0_db: f64,
    pub bits_per_symbol: usize,
    pub code_rate: f64,
}

/// Per-antenna noise variance for unit-energy symbols at the given Eb/N0.
pub fn noise_variance(budget: &NoiseBudget) -> f64 {
    let ebn0 = 10f64.powf(budget.eb_n0_db / 10.0);
    1.0 / (budget.code_rate * budget.bits_per_symbol as f64 * ebn0)
}

/// `r = H s + v` with `v ~ CN(0, σ_v² I)`.
pub fn transmit(s: &[Complex64], ch: &ChannelRealization, seed: u64) -> Result<ComplexVector> {
    transmit_with(s, ch, &mut seeded_rng(seed, 0))
}

pub fn transmit_with<R: Rng + ?Sized>(s: &[Complex64], ch: &ChannelRealization, rng: &mut R) -> Result<ComplexVector> {
    if s.len() != ch.users() {
        return Err(contract(format!("{} symbols for {} users", s.len(), ch.users())));
    }
    let mut r = mat_vec(&ch.h, s)?;
    for x in r.iter_mut() {
        *x += complex_gaussian(rng, ch.sigma_v2);
    }
    Ok(r)
}

/// Exponentially weighted least-squares channel estimate from pilots.
///
/// The estimate minimizes `Σ_i λ^(n−i) ‖r[i] − Ĥ s[i]‖²`. The recursion is
/// seeded with the exact batch solution over the shortest full-rank prefix and
/// continues with rank-one RLS updates of the inverse correlation.
pub fn rls_channel_estimate(training: &[(ComplexVector, ComplexVector)], lambda: f64) -> Result<ComplexMatrix> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(contract(format!("forgetting factor must lie in (0, 1], got {lambda}")));
    }
    let Some((s0, r0)) = training.first() else {
        return Err(contract("no training pairs"));
    };
    let (k, nr) = (s0.len(), r0.len());
    if training.iter().any(|(s, r)| s.len() != k || r.len() != nr) {
        return Err(contract("training pairs have inconsistent dimensions"));
    }
    if training.len() < k {
        return Err(Error::Contract(format!(
            "{} training pairs cannot identify {k} users",
            training.len()
        )));
    }

    // batch phase
    let mut corr = ComplexMatrix::zeros(k, k); // Σ λ^(n-i) s sᴴ
    let mut cross = ComplexMatrix::zeros(nr, k); // Σ λ^(n-i) r sᴴ
    let mut used = 0;
    let mut p_inv = None;
    for (s, r) in training {
        accumulate(&mut corr, &mut cross, s, r, lambda);
        used += 1;
        if used >= k {
            if let Ok(ch) = Cholesky::factor(&corr) {
                p_inv = Some(ch.inverse());
                break;
            }
        }
    }
    let Some(mut p) = p_inv else {
        return Err(crate::error::LinalgError::NotPositiveDefinite {
            index: k.saturating_sub(1),
            pivot: 0.0,
        }
        .into());
    };
    let mut h = cross.matmul(&p)?;

    // recursive phase
    for (s, r) in &training[used..] {
        let ps = mat_vec(&p, s)?;
        let denom = lambda + s.iter().zip(&ps).map(|(a, b)| a.conj() * b).sum::<Complex64>().re;
        let gain: Vec<Complex64> = ps.iter().map(|x| x / denom).collect();
        let pred = mat_vec(&h, s)?;
        for i in 0..nr {
            let e = r[i] - pred[i];
            for j in 0..k {
                h[(i, j)] += e * gain[j].conj();
            }
        }
        // P <- (P - g (P s)ᴴ) / λ ; P is Hermitian so sᴴP = (Ps)ᴴ
        for i in 0..k {
            for j in 0..k {
                p[(i, j)] = (p[(i, j)] - gain[i] * ps[j].conj()) / lambda;
            }
        }
    }
    Ok(h)
}

fn accumulate(corr: &mut ComplexMatrix, cross: &mut ComplexMatrix, s: &[Complex64], r: &[Complex64], lambda: f64) {
    let (k, nr) = (s.len(), r.len());
    for i in 0..k {
        for j in 0..k {
            corr[(i, j)] = corr[(i, j)] * lambda + s[i] * s[j].conj();
        }
    }
    for i in 0..nr {
        for j in 0..k {
            cross[(i, j)] = cross[(i, j)] * lambda + r[i] * s[j].conj();
        }
    }
}

/// Random pilot block: `count` symbol vectors drawn from `c` and their noisy observations.
pub fn pilot_block<R: Rng + ?Sized>(
    ch: &ChannelRealization,
    c: &Constellation,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(ComplexVector, ComplexVector)>> {
    (0..count)
        .map(|_| {
            let s: ComplexVector = (0..ch.users()).map(|_| c.point(rng.random_range(0..c.len()))).collect();
            let r = transmit_with(&s, ch, rng)?;
            Ok((s, r))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> [Constellation; 3] {
        [
            Constellation::new(ConstellationKind::QpskAntiGray),
            Constellation::new(ConstellationKind::QpskGray),
            Constellation::new(ConstellationKind::Qam16Gray),
        ]
    }

    #[test]
    fn constellations_have_unit_energy_and_distinct_points() {
        for c in all() {
            assert!((c.mean_energy() - 1.0).abs() < 1e-12, "{}", c.kind());
            assert!(c.len().is_power_of_two());
            for i in 0..c.len() {
                for j in 0..i {
                    assert!((c.point(i) - c.point(j)).norm() > 1e-6);
                }
            }
        }
    }

    #[test]
    fn antigray_table() {
        let c = Constellation::new(ConstellationKind::QpskAntiGray);
        let phase = |bits: &[u8]| {
            let p = modulate(bits, &c).unwrap()[0];
            p.arg().to_degrees().rem_euclid(360.0).round()
        };
        assert_eq!(phase(&[0, 0]), 45.0);
        assert_eq!(phase(&[1, 1]), 135.0);
        assert_eq!(phase(&[0, 1]), 225.0);
        assert_eq!(phase(&[1, 0]), 315.0);
        let p = modulate(&[0, 0], &c).unwrap()[0];
        assert!((p - Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).norm() < 1e-15);
    }

    #[test]
    fn gray_labels_differ_by_one_bit_between_neighbours() {
        for c in [Constellation::new(ConstellationKind::QpskGray), Constellation::new(ConstellationKind::Qam16Gray)] {
            let dmin = (0..c.len())
                .flat_map(|i| (0..c.len()).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| (c.point(i) - c.point(j)).norm())
                .fold(f64::INFINITY, f64::min);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    if i != j && (c.point(i) - c.point(j)).norm() < dmin + 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{} {i} {j}", c.kind());
                    }
                }
            }
        }
    }

    #[test]
    fn modulate_demap_round_trip_all_12_bit_strings() {
        for c in all() {
            if 12 % c.bits_per_symbol() != 0 {
                continue;
            }
            for word in 0u32..(1 << 12) {
                let bits: Vec<u8> = (0..12).map(|i| ((word >> (11 - i)) & 1) as u8).collect();
                let s = modulate(&bits, &c).unwrap();
                assert_eq!(demap_hard(&s, &c), bits);
            }
        }
    }

    #[test]
    fn modulate_rejects_partial_symbols() {
        let c = Constellation::new(ConstellationKind::Qam16Gray);
        assert!(matches!(modulate(&[1, 0, 1], &c), Err(Error::Contract(_))));
    }

    #[test]
    fn quantize_cases() {
        let c = Constellation::new(ConstellationKind::QpskAntiGray);
        for &p in c.points() {
            assert_eq!(quantize(p, &c), p);
        }
        let q = quantize(Complex64::new(2.0, 3.0), &c);
        assert!((q.arg().to_degrees() - 45.0).abs() < 1e-9);
        assert_eq!(c.nearest_index(Complex64::new(0.0, 0.0)), 0);
    }

    #[test]
    fn nearest_indices_16qam_corner() {
        let c = Constellation::new(ConstellationKind::Qam16Gray);
        let s = 1.0 / 10f64.sqrt();
        // just inside the (+3, +3) corner, slightly closer to the I rail
        let u = Complex64::new(2.9 * s, 2.8 * s);
        let m = c.nearest_indices(u, 2);
        assert!((c.point(m[0]) - Complex64::new(3.0 * s, 3.0 * s)).norm() < 1e-12);
        assert!((c.point(m[1]) - Complex64::new(3.0 * s, 1.0 * s)).norm() < 1e-12);
    }

    #[test]
    fn noise_variance_examples() {
        let nv = |db, bps, rate| {
            noise_variance(&NoiseBudget {
                eb_n0_db: db,
                bits_per_symbol: bps,
                code_rate: rate,
            })
        };
        assert!((nv(0.0, 2, 1.0) - 0.5).abs() < 1e-15);
        assert!((nv(0.0, 2, 0.5) - 1.0).abs() < 1e-15);
        assert!(nv(300.0, 2, 1.0) < 1e-29);
    }

    #[test]
    fn channel_is_deterministic_and_shaped() {
        let a = gen_channel(6, 4, 11).unwrap();
        assert_eq!((a.rows(), a.cols()), (4, 6));
        assert_eq!(a, gen_channel(6, 4, 11).unwrap());
        assert_ne!(a, gen_channel(6, 4, 12).unwrap());
        assert!(gen_channel(0, 4, 1).is_err());
        assert!(gen_channel(2, 0, 1).is_err());
    }

    #[test]
    fn channel_entry_statistics() {
        let mut rng = seeded_rng(5, 0);
        let n = 100_000;
        let draws: Vec<Complex64> = (0..n).map(|_| gen_channel_with(1, 1, &mut rng).unwrap()[(0, 0)]).collect();
        let mean: Complex64 = draws.iter().sum::<Complex64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.02);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn transmit_noiseless_limit_and_noise_power() {
        let h = gen_channel(3, 4, 1).unwrap();
        let c = Constellation::new(ConstellationKind::QpskGray);
        let s = vec![c.point(0), c.point(3), c.point(1)];
        let ch = ChannelRealization::new(h.clone(), 1e-300).unwrap();
        let r = transmit(&s, &ch, 9).unwrap();
        let hs = mat_vec(&h, &s).unwrap();
        for (a, b) in r.iter().zip(&hs) {
            assert!((a - b).norm() < 1e-140);
        }

        let sigma = 0.3;
        let ch = ChannelRealization::new(h, sigma).unwrap();
        let mut rng = seeded_rng(2, 0);
        let zero = vec![Complex64::new(0.0, 0.0); 3];
        let n = 100_000;
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let r = transmit_with(&zero, &ch, &mut rng).unwrap();
            for (a, x) in acc.iter_mut().zip(&r) {
                *a += x.norm_sqr();
            }
        }
        for a in acc {
            assert!((a / n as f64 - sigma).abs() < 0.05 * sigma);
        }
    }

    #[test]
    fn transmit_scalar_noise_is_circular_gaussian() {
        let ch = ChannelRealization::new(ComplexMatrix::identity(1), 0.2).unwrap();
        let a = Constellation::new(ConstellationKind::QpskAntiGray).point(2);
        let mut rng = seeded_rng(3, 0);
        let n = 100_000;
        let e: Vec<Complex64> = (0..n).map(|_| transmit_with(&[a], &ch, &mut rng).unwrap()[0] - a).collect();
        let mean: Complex64 = e.iter().sum::<Complex64>() / n as f64;
        let var_re = e.iter().map(|z| z.re * z.re).sum::<f64>() / n as f64;
        let var_im = e.iter().map(|z| z.im * z.im).sum::<f64>() / n as f64;
        let cross = e.iter().map(|z| z.re * z.im).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.01);
        assert!((var_re - 0.1).abs() < 0.005 && (var_im - 0.1).abs() < 0.005);
        assert!(cross.abs() < 0.005);
        // pseudo-variance E[e²] vanishes for circular noise
        let pseudo: Complex64 = e.iter().map(|z| z * z).sum::<Complex64>() / n as f64;
        assert!(pseudo.norm() < 0.01);
    }

    #[test]
    fn transmit_rejects_wrong_length() {
        let ch = ChannelRealization::new(gen_channel(2, 2, 0).unwrap(), 0.1).unwrap();
        assert!(transmit(&[Complex64::new(1.0, 0.0)], &ch, 0).is_err());
        assert!(ChannelRealization::new(ComplexMatrix::identity(1), 0.0).is_err());
    }

    #[test]
    fn rls_noiseless_exact() {
        let k = 3;
        let h = gen_channel(k, 4, 21).unwrap();
        let ch = ChannelRealization::new(h.clone(), 1e-300).unwrap();
        let c = Constellation::new(ConstellationKind::QpskGray);
        let mut rng = seeded_rng(4, 0);
        let pilots = pilot_block(&ch, &c, 2 * k, &mut rng).unwrap();
        let est = rls_channel_estimate(&pilots, 1.0).unwrap();
        for (a, b) in est.as_slice().iter().zip(h.as_slice()) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn rls_error_level_at_12_db() {
        let c = Constellation::new(ConstellationKind::QpskGray);
        let sigma = noise_variance(&NoiseBudget {
            eb_n0_db: 12.0,
            bits_per_symbol: 2,
            code_rate: 0.5,
        });
        let mut rng = seeded_rng(8, 0);
        let mut total = 0.0;
        let runs = 200;
        for _ in 0..runs {
            let h = gen_channel_with(8, 8, &mut rng).unwrap();
            let ch = ChannelRealization::new(h.clone(), sigma).unwrap();
            let pilots = pilot_block(&ch, &c, 40, &mut rng).unwrap();
            let est = rls_channel_estimate(&pilots, 0.998).unwrap();
            let diff = ComplexMatrix::from_fn(8, 8, |i, j| est[(i, j)] - h[(i, j)]);
            total += diff.frobenius_norm() / h.frobenius_norm();
        }
        assert!(total / (runs as f64) < 0.2);
    }

    #[test]
    fn rls_rank_conditions() {
        let s = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let r = vec![Complex64::new(1.0, 0.0)];
        assert!(rls_channel_estimate(&[(s.clone(), r.clone())], 0.998).is_err());
        // enough pairs but all collinear
        let pairs = vec![(s.clone(), r.clone()); 5];
        assert!(rls_channel_estimate(&pairs, 0.998).is_err());
        assert!(rls_channel_estimate(&pairs, 1.5).is_err());
    }
}
