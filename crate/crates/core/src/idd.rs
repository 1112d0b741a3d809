//! Iterative detection and decoding.
//!
//! The first pass runs a hard-decision detector (MF-SIC by default) and turns
//! its filter outputs into extrinsic bit LLRs through a Gaussian output model.
//! Later passes cancel the decoder's soft symbol estimates and filter the
//! residual with an MMSE filter matched to the remaining uncertainty.

use num_complex::Complex64;

use crate::airlink::Constellation;
use crate::detect::{mb_mf_sic_detect, mf_sic_detect, sic_detect, DetectionResult, DetectorConfig};
use crate::error::{contract, Result};
use crate::fec::{map_decode_with, ConvCode, Interleaver, MaxStar, LLR_CLIP};
use crate::numerics::{inner, mat_vec, Cholesky, ComplexMatrix, ComplexVector};

pub const RESIDUAL_VAR_FLOOR: f64 = 1e-6;

/// Below this mean `|z|²` soft symbols carry too little information to
/// regress against, and hard decisions are used instead.
const SOFT_REF_MIN_ENERGY: f64 = 1e-3;

/// Gaussian model of a filter output: `u = V s + ε`, `ε ~ CN(0, σ_ε²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftStats {
    pub amplitude: Complex64,
    pub residual_var: f64,
}

/// Packet averages `V = ⟨s* u⟩`, `σ_ε² = ⟨|u − V s|²⟩` against reference symbols.
pub fn estimate_stats(u_samples: &[Complex64], s_refs: &[Complex64]) -> Result<SoftStats> {
    if u_samples.is_empty() || u_samples.len() != s_refs.len() {
        return Err(contract(format!(
            "statistics need equal non-empty sample sets, got {} and {}",
            u_samples.len(),
            s_refs.len()
        )));
    }
    let n = u_samples.len() as f64;
    let v = u_samples.iter().zip(s_refs).map(|(u, s)| s.conj() * u).sum::<Complex64>() / n;
    let var = u_samples.iter().zip(s_refs).map(|(u, s)| (u - v * s).norm_sqr()).sum::<f64>() / n;
    Ok(SoftStats {
        amplitude: v,
        residual_var: var.max(RESIDUAL_VAR_FLOOR),
    })
}

/// Statistics against soft references `z = E[s]` of a unit-energy alphabet.
///
/// `⟨z* u⟩ = V ⟨|z|²⟩` for conditional-mean references, so the amplitude is
/// the regression coefficient of `u` on `z`, and `σ_ε² = ⟨|u|²⟩ − |V|²`.
pub fn estimate_stats_soft(u_samples: &[Complex64], z_refs: &[Complex64]) -> Result<SoftStats> {
    if u_samples.is_empty() || u_samples.len() != z_refs.len() {
        return Err(contract("statistics need equal non-empty sample sets"));
    }
    let n = u_samples.len() as f64;
    let zz = z_refs.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if zz / n < SOFT_REF_MIN_ENERGY {
        return Err(contract("soft references carry no energy"));
    }
    let v = u_samples.iter().zip(z_refs).map(|(u, z)| z.conj() * u).sum::<Complex64>() / zz;
    let power = u_samples.iter().map(|u| u.norm_sqr()).sum::<f64>() / n;
    Ok(SoftStats {
        amplitude: v,
        residual_var: (power - v.norm_sqr()).max(RESIDUAL_VAR_FLOOR),
    })
}

/// `(ln P(x = 0), ln P(x = 1))` for an LLR `ln P(1)/P(0)`.
#[inline]
fn bit_log_probs(llr: f64) -> (f64, f64) {
    let l = llr.clamp(-LLR_CLIP, LLR_CLIP);
    // ln(1 + e^x) without overflow
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    (-softplus(l), -softplus(-l))
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

/// Extrinsic LLRs of the bits carried by one filter output.
pub fn detector_extrinsic_llr(u: Complex64, stats: &SoftStats, priors: &[f64], c: &Constellation) -> Vec<f64> {
    let m = c.bits_per_symbol();
    debug_assert_eq!(priors.len(), m);
    let logp: Vec<(f64, f64)> = priors.iter().map(|&l| bit_log_probs(l)).collect();
    let var = stats.residual_var.max(RESIDUAL_VAR_FLOOR);
    let likelihood: Vec<f64> = c
        .points()
        .iter()
        .map(|&a| -(u - stats.amplitude * a).norm_sqr() / var)
        .collect();
    (0..m)
        .map(|j| {
            let mut num = f64::NEG_INFINITY;
            let mut den = f64::NEG_INFINITY;
            for (idx, &ll) in likelihood.iter().enumerate() {
                let mut metric = ll;
                for (tau, &(p0, p1)) in logp.iter().enumerate() {
                    if tau != j {
                        metric += if c.bit(idx, tau) == 1 { p1 } else { p0 };
                    }
                }
                if c.bit(idx, j) == 1 {
                    num = log_sum_exp(num, metric);
                } else {
                    den = log_sum_exp(den, metric);
                }
            }
            (num - den).clamp(-LLR_CLIP, LLR_CLIP)
        })
        .collect()
}

fn symbol_probs(priors: &[f64], c: &Constellation) -> Vec<f64> {
    let logp: Vec<(f64, f64)> = priors.iter().map(|&l| bit_log_probs(l)).collect();
    (0..c.len())
        .map(|idx| {
            logp.iter()
                .enumerate()
                .map(|(j, &(p0, p1))| if c.bit(idx, j) == 1 { p1 } else { p0 })
                .sum::<f64>()
                .exp()
        })
        .collect()
}

/// Prior mean `E[s] = Σ a P(a)` under independent bit priors.
pub fn soft_symbol(priors: &[f64], c: &Constellation) -> Complex64 {
    symbol_probs(priors, c).iter().zip(c.points()).map(|(p, a)| a * p).sum()
}

/// `(E[s], E|s|² − |E[s]|²)` under independent bit priors.
pub fn soft_symbol_and_variance(priors: &[f64], c: &Constellation) -> (Complex64, f64) {
    let probs = symbol_probs(priors, c);
    let mean: Complex64 = probs.iter().zip(c.points()).map(|(p, a)| a * p).sum();
    let energy: f64 = probs.iter().zip(c.points()).map(|(p, a)| p * a.norm_sqr()).sum();
    (mean, (energy - mean.norm_sqr()).max(0.0))
}

/// `ř = r − H z₍ₖ₎` where `z₍ₖ₎` is `z` with entry `k` zeroed.
pub fn soft_cancel(r: &[Complex64], h: &ComplexMatrix, z: &[Complex64], k: usize) -> Result<ComplexVector> {
    if z.len() != h.cols() || r.len() != h.rows() || k >= z.len() {
        return Err(contract(format!(
            "soft cancellation for user {k}: r has {} entries, z {}, H is {}x{}",
            r.len(),
            z.len(),
            h.rows(),
            h.cols()
        )));
    }
    let mut zk = z.to_vec();
    zk[k] = Complex64::new(0.0, 0.0);
    let hz = mat_vec(h, &zk)?;
    Ok(r.iter().zip(&hz).map(|(a, b)| a - b).collect())
}

/// `w_k = (H Δ_k Hᴴ + σ² I)⁻¹ h_k` with `Δ_k = diag(1 − |z_j|²)`, `Δ_k[k,k] = 1`.
pub fn sc_mmse_filter(h: &ComplexMatrix, z: &[Complex64], k: usize, sigma_v2: f64) -> Result<ComplexVector> {
    if z.len() != h.cols() || k >= z.len() {
        return Err(contract(format!("{} soft symbols for {} users", z.len(), h.cols())));
    }
    if !(sigma_v2 > 0.0) {
        return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
    }
    let mut var: Vec<f64> = z.iter().map(|s| (1.0 - s.norm_sqr()).max(0.0)).collect();
    var[k] = 1.0;
    let cols: Vec<usize> = (0..h.cols()).collect();
    let a = h.weighted_gram(&cols, Some(&var), sigma_v2);
    Ok(Cholesky::factor(&a)?.solve(&h.column(k))?)
}

/// The SC/MMSE filters of every user at once from residual symbol variances.
///
/// One factorization of `H D Hᴴ + σ² I` serves all users: restoring user `k`'s
/// own unit variance is a rank-one update, so `w_k = x_k / (1 + (1 − d_k) h_kᴴ x_k)`
/// with `x_k = (H D Hᴴ + σ² I)⁻¹ h_k`.
pub fn sc_mmse_filters(h: &ComplexMatrix, variances: &[f64], sigma_v2: f64) -> Result<Vec<ComplexVector>> {
    if variances.len() != h.cols() {
        return Err(contract(format!("{} variances for {} users", variances.len(), h.cols())));
    }
    let cols: Vec<usize> = (0..h.cols()).collect();
    let chol = Cholesky::factor(&h.weighted_gram(&cols, Some(variances), sigma_v2))?;
    (0..h.cols())
        .map(|k| {
            let hk = h.column(k);
            let x = chol.solve(&hk)?;
            let scale = 1.0 + (1.0 - variances[k]) * inner(&hk, &x).re;
            Ok(x.into_iter().map(|v| v / scale).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FirstStage {
    MfSic,
    MbMfSic,
    Sic,
    /// Soft cancellation from the start (zero priors: plain linear MMSE).
    Sc,
}

/// What is subtracted as the interference replica in SC passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelSource {
    /// Prior means from the decoders' extrinsic LLRs.
    DecoderSoftSymbols,
    /// The previous pass's raw filter outputs.
    DetectorOutputs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IddConfig {
    pub detector: DetectorConfig,
    pub n_iters: usize,
    pub first_stage: FirstStage,
    pub cancel_source: CancelSource,
    /// One filter per user per pass from packet-averaged variances.
    pub averaged_filter: bool,
    pub max_star: MaxStar,
}

impl IddConfig {
    pub fn new(detector: DetectorConfig, n_iters: usize, first_stage: FirstStage) -> Self {
        Self {
            detector,
            n_iters,
            first_stage,
            cancel_source: CancelSource::DecoderSoftSymbols,
            averaged_filter: false,
            max_star: MaxStar::Exact,
        }
    }
}

/// Per-user coding chain shared by transmitter and receiver.
#[derive(Debug, Clone)]
pub struct CodedLink {
    pub code: ConvCode,
    pub interleavers: Vec<Interleaver>,
    pub constellation: Constellation,
}

impl CodedLink {
    pub fn users(&self) -> usize {
        self.interleavers.len()
    }

    pub fn coded_len(&self) -> usize {
        self.interleavers.first().map_or(0, Interleaver::len)
    }

    pub fn symbols_per_frame(&self) -> usize {
        self.coded_len() / self.constellation.bits_per_symbol()
    }
}

/// Priors and soft symbols handed from one pass to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TurboState {
    /// λ₂ᵖ per user, interleaved (transmission) order.
    pub priors: Vec<Vec<f64>>,
    /// Interference replica per user per symbol.
    pub soft_symbols: Vec<ComplexVector>,
    pub iteration: usize,
}

impl TurboState {
    pub fn initial(users: usize, coded_len: usize, symbols: usize) -> Self {
        Self {
            priors: vec![vec![0.0; coded_len]; users],
            soft_symbols: vec![vec![Complex64::new(0.0, 0.0); symbols]; users],
            iteration: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// Message decisions per user.
    pub decisions: Vec<Vec<u8>>,
    pub stats: Vec<SoftStats>,
    /// λ₁ per user, interleaved order.
    pub detector_extrinsic: Vec<Vec<f64>>,
    /// λ₂ᵖ that entered this pass, interleaved order.
    pub detector_prior: Vec<Vec<f64>>,
    /// Λ₁ = λ₁ + λ₂ᵖ
    pub detector_posterior: Vec<Vec<f64>>,
    /// Filter outputs `u_k[i]` per user.
    pub soft_outputs: Vec<ComplexVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IddOutput {
    pub iterations: Vec<IterationTrace>,
}

impl IddOutput {
    /// Decisions after the last pass.
    pub fn decisions(&self) -> &[Vec<u8>] {
        &self.iterations.last().expect("at least one pass").decisions
    }
}

fn first_stage_detect(
    stage: FirstStage,
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    match stage {
        FirstStage::MfSic => mf_sic_detect(r, h, sigma_v2, c, cfg),
        FirstStage::MbMfSic => mb_mf_sic_detect(r, h, sigma_v2, c, cfg),
        FirstStage::Sic => sic_detect(r, h, sigma_v2, c, cfg.ordering),
        FirstStage::Sc => unreachable!("soft cancellation has no hard first stage"),
    }
}

/// Runs `cfg.n_iters` detection/decoding passes over one frame.
///
/// `r_block[i]` is the received vector at symbol time `i`; the channel is
/// static over the frame.
pub fn idd_receive(
    r_block: &[ComplexVector],
    h: &ComplexMatrix,
    sigma_v2: f64,
    link: &CodedLink,
    cfg: &IddConfig,
) -> Result<IddOutput> {
    idd_receive_fading(r_block, std::slice::from_ref(h), sigma_v2, link, cfg)
}

/// [`idd_receive`] with one channel per symbol time, or a single channel for the frame.
pub fn idd_receive_fading(
    r_block: &[ComplexVector],
    channels: &[ComplexMatrix],
    sigma_v2: f64,
    link: &CodedLink,
    cfg: &IddConfig,
) -> Result<IddOutput> {
    let h = channels.first().ok_or_else(|| contract("no channel given"))?;
    let (nr, k) = (h.rows(), h.cols());
    let c = &link.constellation;
    let bps = c.bits_per_symbol();
    let n_sym = link.symbols_per_frame();
    if cfg.n_iters == 0 {
        return Err(contract("at least one iteration is required"));
    }
    if link.users() != k {
        return Err(contract(format!("{} interleavers for {k} users", link.users())));
    }
    if r_block.len() != n_sym || r_block.iter().any(|r| r.len() != nr) {
        return Err(contract(format!("frame needs {n_sym} received vectors of length {nr}")));
    }
    if !(channels.len() == 1 || channels.len() == n_sym) || channels.iter().any(|c| c.rows() != nr || c.cols() != k) {
        return Err(contract(format!("expected 1 or {n_sym} channels of size {nr}x{k}")));
    }
    let channel = |i: usize| if channels.len() == 1 { h } else { &channels[i] };
    if link.code.message_len(link.coded_len()).is_none() || !link.coded_len().is_multiple_of(bps) {
        return Err(contract("interleaver length does not match the code geometry"));
    }

    let mut state = TurboState::initial(k, link.coded_len(), n_sym);
    let mut prev_u: Vec<ComplexVector> = vec![vec![Complex64::new(0.0, 0.0); n_sym]; k];
    let mut iterations = Vec::with_capacity(cfg.n_iters);

    for iter in 1..=cfg.n_iters {
        state.iteration = iter;
        let hard_pass = iter == 1 && cfg.first_stage != FirstStage::Sc;
        let mut u = vec![vec![Complex64::new(0.0, 0.0); n_sym]; k];
        let mut hard = vec![vec![Complex64::new(0.0, 0.0); n_sym]; k];

        if hard_pass {
            for (i, r) in r_block.iter().enumerate() {
                let det = first_stage_detect(cfg.first_stage, r, channel(i), sigma_v2, c, &cfg.detector)?;
                for user in 0..k {
                    u[user][i] = det.soft_outputs[user];
                    hard[user][i] = det.symbols[user];
                }
            }
        } else {
            // interference replica and residual variance per user per symbol
            let mut z = vec![vec![Complex64::new(0.0, 0.0); n_sym]; k];
            let mut var = vec![vec![1.0; n_sym]; k];
            for user in 0..k {
                for i in 0..n_sym {
                    let (mean, v) = match cfg.cancel_source {
                        CancelSource::DecoderSoftSymbols => {
                            soft_symbol_and_variance(&state.priors[user][i * bps..(i + 1) * bps], c)
                        }
                        CancelSource::DetectorOutputs => {
                            let p = prev_u[user][i];
                            (p, (1.0 - p.norm_sqr()).max(0.0))
                        }
                    };
                    z[user][i] = mean;
                    var[user][i] = v;
                }
            }
            state.soft_symbols.clone_from(&z);
            let mean_var: Option<Vec<f64>> = cfg
                .averaged_filter
                .then(|| var.iter().map(|vs| vs.iter().sum::<f64>() / n_sym as f64).collect());
            // with a static channel the averaged filters are shared by the whole frame
            let shared = match (&mean_var, channels.len()) {
                (Some(v), 1) => Some(sc_mmse_filters(h, v, sigma_v2)?),
                _ => None,
            };
            let mut zi = vec![Complex64::new(0.0, 0.0); k];
            let mut vi = vec![0.0; k];
            for (i, r) in r_block.iter().enumerate() {
                for user in 0..k {
                    zi[user] = z[user][i];
                    vi[user] = var[user][i];
                }
                let hi = channel(i);
                let per_symbol;
                let filters = match &shared {
                    Some(f) => f,
                    None => {
                        per_symbol = sc_mmse_filters(hi, mean_var.as_deref().unwrap_or(&vi), sigma_v2)?;
                        &per_symbol
                    }
                };
                let hz = mat_vec(hi, &zi)?;
                let base: ComplexVector = r.iter().zip(&hz).map(|(a, b)| a - b).collect();
                for user in 0..k {
                    // add back the user's own replica: r − H z₍ₖ₎
                    let own = zi[user];
                    let rk: ComplexVector = base.iter().enumerate().map(|(row, b)| b + hi[(row, user)] * own).collect();
                    let out = inner(&filters[user], &rk);
                    u[user][i] = out;
                    hard[user][i] = c.point(c.nearest_index(out));
                }
            }
        }

        let mut trace = IterationTrace {
            decisions: Vec::with_capacity(k),
            stats: Vec::with_capacity(k),
            detector_extrinsic: Vec::with_capacity(k),
            detector_prior: state.priors.clone(),
            detector_posterior: Vec::with_capacity(k),
            soft_outputs: Vec::with_capacity(k),
        };
        for user in 0..k {
            let stats = if hard_pass || iter == 1 {
                estimate_stats(&u[user], &hard[user])?
            } else {
                match cfg.cancel_source {
                    CancelSource::DecoderSoftSymbols => estimate_stats_soft(&u[user], &state.soft_symbols[user])
                        .or_else(|_| estimate_stats(&u[user], &hard[user]))?,
                    CancelSource::DetectorOutputs => estimate_stats(&u[user], &hard[user])?,
                }
            };
            let prior = &state.priors[user];
            let mut ext = Vec::with_capacity(link.coded_len());
            for i in 0..n_sym {
                ext.extend(detector_extrinsic_llr(u[user][i], &stats, &prior[i * bps..(i + 1) * bps], c));
            }
            let post: Vec<f64> = ext.iter().zip(prior).map(|(e, p)| e + p).collect();

            let decoder_in = link.interleavers[user].deinterleave(&ext)?;
            let dec = map_decode_with(&decoder_in, &link.code, cfg.max_star)?;
            state.priors[user] = link.interleavers[user].interleave(&dec.extrinsic_coded)?;

            trace.decisions.push(dec.message_decisions());
            trace.stats.push(stats);
            trace.detector_extrinsic.push(ext);
            trace.detector_posterior.push(post);
        }
        trace.soft_outputs.clone_from(&u);
        prev_u = u;
        iterations.push(trace);
    }
    Ok(IddOutput { iterations })
}
