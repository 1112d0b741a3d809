//! Hard-decision MIMO detectors.
//!
//! All detectors take the received vector `r`, the channel `H` (`N_R × K`),
//! the noise variance and a constellation, and return symbols in the
//! original user order.
//!
//! Complexity accounting (`complex_mults`), one unit per complex multiply:
//! * regularized Gram `H̄ H̄ᴴ + σ²I` over `n` columns: `N_R(N_R+1)/2 · n`
//! * Hermitian solve of size `N`: `N³/3 + N²` (further right-hand sides `N²`)
//! * filter output `wᴴ r`, column cancellation `r − h s`: `N_R` each
//! * slicing or candidate ranking against the alphabet: `C`
//! * squared norm of a length-`n` vector: `n`; `H b`: `N_R · K`

mod sphere;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::airlink::Constellation;
use crate::error::{contract, Error, Result};
use crate::numerics::{
    inner, mat_vec, solve_cost, sq_norm, sub_scaled_column, Cholesky, ComplexMatrix, ComplexVector,
};

pub use sphere::sphere_decode;

pub const DEFAULT_ML_CAP: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ordering {
    /// Strongest user (largest `‖h_k‖²`) first.
    DescendingColumnNorm,
    None,
}

/// A detection order: `perm[i]` is the user detected at layer `i`.
///
/// Patterns stored in a [`DetectorConfig`] are relative to the base
/// ordering, i.e. `perm[i]` indexes into the ordered user list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderingPattern {
    pub perm: Vec<usize>,
}

impl OrderingPattern {
    pub fn identity(k: usize) -> Self {
        Self { perm: (0..k).collect() }
    }

    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let p = Self { perm };
        if !p.is_bijection() {
            return Err(contract(format!("{:?} is not a permutation", p.perm)));
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        self.perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
    }

    /// Applies the pattern on top of `base`: layer `i` detects `base[perm[i]]`.
    pub fn compose(&self, base: &[usize]) -> Vec<usize> {
        self.perm.iter().map(|&p| base[p]).collect()
    }

    /// The permutation matrix `T` with `(T x)_i = x_{perm[i]}`.
    pub fn matrix(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.len(), self.len(), |i, j| {
            Complex64::new(if self.perm[i] == j { 1.0 } else { 0.0 }, 0.0)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// SAC radius; decisions farther than this from the nearest point are unreliable.
    pub d_th: f64,
    /// Number of feedback candidates tried on an unreliable layer.
    pub m: usize,
    /// Optional `(min Eb/N0 dB, M)` schedule, consulted by [`DetectorConfig::at_snr`].
    pub adaptive_m: Vec<(f64, usize)>,
    pub patterns: Vec<OrderingPattern>,
    pub sd_radius_scale: f64,
    pub ordering: Ordering,
    pub ml_cap: u128,
}

impl DetectorConfig {
    pub fn new(k: usize) -> Self {
        Self {
            d_th: 0.5,
            m: 4,
            adaptive_m: Vec::new(),
            patterns: vec![OrderingPattern::identity(k)],
            sd_radius_scale: 2.0,
            ordering: Ordering::DescendingColumnNorm,
            ml_cap: DEFAULT_ML_CAP,
        }
    }

    /// Copy with `m` taken from the adaptive schedule, if there is one.
    pub fn at_snr(&self, eb_n0_db: f64) -> Self {
        let mut out = self.clone();
        if let Some(&(_, m)) = self
            .adaptive_m
            .iter()
            .filter(|(lo, _)| eb_n0_db >= *lo)
            .max_by(|a, b| a.0.total_cmp(&b.0))
        {
            out.m = m;
        }
        out
    }

    pub fn validate(&self, k: usize, c: &Constellation) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.d_th >= 0.0) {
            errs.push(format!("d_th must be ≥ 0, got {}", self.d_th));
        }
        if self.m == 0 || self.m > c.len() {
            errs.push(format!("M must lie in 1..={}, got {}", c.len(), self.m));
        }
        for &(_, m) in &self.adaptive_m {
            if m == 0 || m > c.len() {
                errs.push(format!("adaptive M must lie in 1..={}, got {m}", c.len()));
            }
        }
        if self.patterns.is_empty() {
            errs.push("at least one ordering pattern is required".into());
        }
        for p in &self.patterns {
            if p.len() != k || !p.is_bijection() {
                errs.push(format!("pattern {:?} is not a permutation of {k} users", p.perm));
            }
        }
        if !(self.sd_radius_scale > 0.0) {
            errs.push(format!("sd_radius_scale must be > 0, got {}", self.sd_radius_scale));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// Detected symbols, original user order.
    pub symbols: ComplexVector,
    /// Constellation index of each detected symbol.
    pub indices: Vec<usize>,
    /// Filter outputs `u_k`, original user order.
    pub soft_outputs: ComplexVector,
    /// `‖r − H ŝ‖²`
    pub residual_metric: f64,
    /// Per detection layer: whether the SAC flagged the decision.
    pub sac_triggers: Vec<bool>,
    pub complex_mults: u64,
}

fn check_dims(r: &[Complex64], h: &ComplexMatrix) -> Result<()> {
    if h.cols() == 0 || h.rows() == 0 {
        return Err(contract("empty channel matrix"));
    }
    if r.len() != h.rows() {
        return Err(contract(format!("received vector has {} entries for {} antennas", r.len(), h.rows())));
    }
    Ok(())
}

fn residual(r: &[Complex64], h: &ComplexMatrix, s: &[Complex64]) -> f64 {
    let hs = mat_vec(h, s).expect("dimensions checked");
    r.iter().zip(&hs).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Users sorted by descending `‖h_k‖²`, ties to the lower index.
pub fn order_by_snr(h: &ComplexMatrix) -> OrderingPattern {
    let norms: Vec<f64> = (0..h.cols()).map(|k| sq_norm(&h.column(k))).collect();
    let mut perm: Vec<usize> = (0..h.cols()).collect();
    perm.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    OrderingPattern { perm }
}

fn base_order(h: &ComplexMatrix, ordering: Ordering) -> Vec<usize> {
    match ordering {
        Ordering::DescendingColumnNorm => order_by_snr(h).perm,
        Ordering::None => (0..h.cols()).collect(),
    }
}

/// All permutations of `1..=k` in reverse lexicographic order (1-based entries).
pub fn perms_reverse_lex(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (1..=k).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out.reverse();
    out
}

/// Frequently-selected-branch ordering patterns.
///
/// For four users the codebook entries are 1-based indices into
/// [`perms_reverse_lex`]: `{1, 2}` for two branches and `{1, 2, 3, 5}` for
/// four. An enumerated permutation `p` builds `T = I(p, :)` and the branch
/// channel is `H_sorted T`, with `H_sorted` in descending SNR order, so layer
/// `i` detects sorted column `p⁻¹(i)`. Any other `(K, L)` uses the first `L`
/// cyclic shifts of the SNR order when `L ≤ K`, else the first `L`
/// enumerated permutations.
pub fn fsb_patterns(k: usize, l: usize) -> Result<Vec<OrderingPattern>> {
    let fact = (1..=k as u128).product::<u128>();
    if k == 0 || l == 0 || l as u128 > fact {
        return Err(contract(format!("cannot pick {l} branches out of {k}! orderings")));
    }
    let from_enum = |idx: &[usize]| -> Vec<OrderingPattern> {
        let all = perms_reverse_lex(k);
        idx.iter()
            .map(|&i| {
                let mut perm = vec![0; k];
                for (row, &v) in all[i - 1].iter().enumerate() {
                    perm[v - 1] = row;
                }
                OrderingPattern { perm }
            })
            .collect()
    };
    Ok(match (k, l) {
        (4, 2) => from_enum(&[1, 2]),
        (4, 4) => from_enum(&[1, 2, 3, 5]),
        _ if l <= k => (0..l)
            .map(|shift| OrderingPattern {
                perm: (0..k).map(|i| (i + shift) % k).collect(),
            })
            .collect(),
        _ => from_enum(&(1..=l).collect::<Vec<_>>()),
    })
}

/// `w_k = (H̄ H̄ᴴ + σ² I)⁻¹ h_k`.
pub fn mmse_weight(h_bar: &ComplexMatrix, h_k: &[Complex64], sigma_v2: f64) -> Result<ComplexVector> {
    if !(sigma_v2 > 0.0) {
        return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
    }
    let cols: Vec<usize> = (0..h_bar.cols()).collect();
    let a = h_bar.weighted_gram(&cols, None, sigma_v2);
    Ok(Cholesky::factor(&a)?.solve(h_k)?)
}

fn gram_cost(nr: usize, ncols: usize) -> u64 {
    (nr * (nr + 1) / 2 * ncols) as u64
}

/// Linear MMSE detection with the full channel for every user.
pub fn mmse_lin_detect(r: &[Complex64], h: &ComplexMatrix, sigma_v2: f64, c: &Constellation) -> Result<DetectionResult> {
    check_dims(r, h)?;
    if !(sigma_v2 > 0.0) {
        return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
    }
    let (nr, k) = (h.rows(), h.cols());
    let all: Vec<usize> = (0..k).collect();
    let chol = Cholesky::factor(&h.weighted_gram(&all, None, sigma_v2))?;
    let mut cost = gram_cost(nr, k) + solve_cost(nr) + (k as u64 - 1) * (nr * nr) as u64;
    let mut soft = Vec::with_capacity(k);
    let mut indices = Vec::with_capacity(k);
    for user in 0..k {
        let w = chol.solve(&h.column(user))?;
        let u = inner(&w, r);
        soft.push(u);
        indices.push(c.nearest_index(u));
        cost += (nr + c.len()) as u64;
    }
    let symbols: ComplexVector = indices.iter().map(|&i| c.point(i)).collect();
    Ok(DetectionResult {
        residual_metric: residual(r, h, &symbols),
        symbols,
        indices,
        soft_outputs: soft,
        sac_triggers: vec![false; k],
        complex_mults: cost,
    })
}

/// Per-layer MMSE filters for a detection order; layer `i` sees the
/// columns `order[i..]` as interference-plus-signal.
fn layer_filters(h: &ComplexMatrix, order: &[usize], sigma_v2: f64, cost: &mut u64) -> Result<Vec<ComplexVector>> {
    if !(sigma_v2 > 0.0) {
        return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
    }
    let nr = h.rows();
    let mut filters = Vec::with_capacity(order.len());
    for layer in 0..order.len() {
        let gram = h.weighted_gram(&order[layer..], None, sigma_v2);
        *cost += gram_cost(nr, order.len() - layer) + solve_cost(nr);
        filters.push(Cholesky::factor(&gram)?.solve(&h.column(order[layer]))?);
    }
    Ok(filters)
}

/// Per-candidate record of one MF selection, for instrumentation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    /// Detection layer at which the SAC fired.
    pub layer: usize,
    /// Candidate constellation indices, nearest first.
    pub candidates: Vec<usize>,
    /// Completed selection vectors `b^m` in detection order (constellation indices).
    pub completions: Vec<Vec<usize>>,
    /// `‖r − H b^m‖²` for each candidate.
    pub metrics: Vec<f64>,
    pub chosen: usize,
}

struct LayerRun {
    /// Constellation indices in detection order.
    indices: Vec<usize>,
    /// Filter outputs in detection order.
    soft: ComplexVector,
    triggers: Vec<bool>,
    /// `r − H ŝ` after all layers.
    residual: ComplexVector,
}

/// The MF-SIC recursion over a fixed detection order.
///
/// With `m == 1` or `d_th == ∞` this is plain ordered MMSE-SIC.
#[allow(clippy::too_many_arguments)]
fn run_layers(
    r: &[Complex64],
    h: &ComplexMatrix,
    order: &[usize],
    filters: &[ComplexVector],
    c: &Constellation,
    d_th: f64,
    m: usize,
    cost: &mut u64,
    mut trace: Option<&mut Vec<SelectionTrace>>,
) -> LayerRun {
    let k = order.len();
    let nr = h.rows() as u64;
    let cl = c.len() as u64;
    let mut r_check = r.to_vec();
    let mut indices = Vec::with_capacity(k);
    let mut soft = Vec::with_capacity(k);
    let mut triggers = Vec::with_capacity(k);
    let mut scratch = vec![Complex64::new(0.0, 0.0); r.len()];
    let mut completion = Vec::with_capacity(k);

    for layer in 0..k {
        let u = inner(&filters[layer], &r_check);
        let nearest = c.nearest_index(u);
        *cost += nr + cl;
        let unreliable = (u - c.point(nearest)).norm() > d_th;
        triggers.push(unreliable);
        let chosen = if unreliable && m > 1 {
            let cands = c.nearest_indices(u, m);
            *cost += cl;
            let mut best = (f64::INFINITY, cands[0]);
            let mut tr = trace.as_ref().map(|_| SelectionTrace {
                layer,
                candidates: cands.clone(),
                completions: Vec::new(),
                metrics: Vec::new(),
                chosen: 0,
            });
            for &cand in &cands {
                scratch.copy_from_slice(&r_check);
                sub_scaled_column(&mut scratch, h, order[layer], c.point(cand));
                *cost += nr;
                completion.clear();
                completion.extend_from_slice(&indices);
                completion.push(cand);
                for q in (layer + 1)..k {
                    let b = c.nearest_index(inner(&filters[q], &scratch));
                    sub_scaled_column(&mut scratch, h, order[q], c.point(b));
                    completion.push(b);
                    *cost += 2 * nr + cl;
                }
                // scratch now holds r − H bᵐ
                let metric = sq_norm(&scratch);
                *cost += nr;
                if metric < best.0 {
                    best = (metric, cand);
                }
                if let Some(t) = tr.as_mut() {
                    t.completions.push(completion.clone());
                    t.metrics.push(metric);
                }
            }
            if let (Some(t), Some(sink)) = (tr, trace.as_deref_mut()) {
                sink.push(SelectionTrace { chosen: best.1, ..t });
            }
            best.1
        } else {
            nearest
        };
        indices.push(chosen);
        soft.push(u);
        sub_scaled_column(&mut r_check, h, order[layer], c.point(chosen));
        *cost += nr;
    }
    LayerRun {
        indices,
        soft,
        triggers,
        residual: r_check,
    }
}

fn finish(run: LayerRun, order: &[usize], c: &Constellation, cost: u64) -> DetectionResult {
    let k = order.len();
    let mut indices = vec![0; k];
    let mut soft = vec![Complex64::new(0.0, 0.0); k];
    for (layer, &user) in order.iter().enumerate() {
        indices[user] = run.indices[layer];
        soft[user] = run.soft[layer];
    }
    DetectionResult {
        symbols: indices.iter().map(|&i| c.point(i)).collect(),
        indices,
        soft_outputs: soft,
        residual_metric: sq_norm(&run.residual),
        sac_triggers: run.triggers,
        complex_mults: cost,
    }
}

/// Ordered MMSE successive interference cancellation.
pub fn sic_detect(
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    ordering: Ordering,
) -> Result<DetectionResult> {
    check_dims(r, h)?;
    let order = base_order(h, ordering);
    let mut cost = 0;
    let filters = layer_filters(h, &order, sigma_v2, &mut cost)?;
    let run = run_layers(r, h, &order, &filters, c, f64::INFINITY, 1, &mut cost, None);
    Ok(finish(run, &order, c, cost))
}

/// Shadow-area check: `(|u − Q(u)| ≤ d_th, Q(u))`.
pub fn sac_check(u: Complex64, c: &Constellation, d_th: f64) -> (bool, Complex64) {
    let nearest = c.point(c.nearest_index(u));
    ((u - nearest).norm() <= d_th, nearest)
}

/// The `m` constellation points nearest to `u`, nearest first.
pub fn mf_candidates(u: Complex64, c: &Constellation, m: usize) -> Result<Vec<Complex64>> {
    if m == 0 || m > c.len() {
        return Err(contract(format!("M must lie in 1..={}, got {m}", c.len())));
    }
    Ok(c.nearest_indices(u, m).into_iter().map(|i| c.point(i)).collect())
}

/// Multi-feedback SIC with the shadow-area constraint.
pub fn mf_sic_detect(
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    mf_sic_detect_traced(r, h, sigma_v2, c, cfg).map(|(res, _)| res)
}

/// [`mf_sic_detect`] that also returns every candidate selection it made.
pub fn mf_sic_detect_traced(
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<(DetectionResult, Vec<SelectionTrace>)> {
    check_dims(r, h)?;
    check_m(cfg.m, c)?;
    let order = base_order(h, cfg.ordering);
    let mut cost = 0;
    let filters = layer_filters(h, &order, sigma_v2, &mut cost)?;
    let mut trace = Vec::new();
    let run = run_layers(r, h, &order, &filters, c, cfg.d_th, cfg.m, &mut cost, Some(&mut trace));
    Ok((finish(run, &order, c, cost), trace))
}

fn check_m(m: usize, c: &Constellation) -> Result<()> {
    if m == 0 || m > c.len() {
        return Err(contract(format!("M must lie in 1..={}, got {m}", c.len())));
    }
    Ok(())
}

/// One MF-SIC branch of the multi-branch detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Absolute detection order of this branch.
    pub order: Vec<usize>,
    pub result: DetectionResult,
}

/// Multi-branch MF-SIC: one MF-SIC pass per ordering pattern, keep the
/// branch with the smallest Euclidean residual.
pub fn mb_mf_sic_detect(
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    mb_mf_sic_branches(r, h, sigma_v2, c, cfg).map(|(res, _)| res)
}

/// [`mb_mf_sic_detect`] returning every branch alongside the selection.
pub fn mb_mf_sic_branches(
    r: &[Complex64],
    h: &ComplexMatrix,
    sigma_v2: f64,
    c: &Constellation,
    cfg: &DetectorConfig,
) -> Result<(DetectionResult, Vec<Branch>)> {
    check_dims(r, h)?;
    check_m(cfg.m, c)?;
    if cfg.patterns.is_empty() {
        return Err(contract("multi-branch detection needs at least one pattern"));
    }
    let base = base_order(h, cfg.ordering);
    let nr = h.rows() as u64;
    let mut total = 0u64;
    let mut branches = Vec::with_capacity(cfg.patterns.len());
    let mut best: Option<usize> = None;
    let mut best_metric = f64::INFINITY;
    for pattern in &cfg.patterns {
        if pattern.len() != base.len() || !pattern.is_bijection() {
            return Err(contract(format!("pattern {:?} is not a permutation of {} users", pattern.perm, base.len())));
        }
        let order = pattern.compose(&base);
        let mut cost = 0;
        let filters = layer_filters(h, &order, sigma_v2, &mut cost)?;
        let run = run_layers(r, h, &order, &filters, c, cfg.d_th, cfg.m, &mut cost, None);
        // J(l) = ‖r − H′ŝ_l‖²; the recursion leaves r − H′ŝ_l behind
        cost += nr;
        total += cost;
        let result = finish(run, &order, c, cost);
        if result.residual_metric < best_metric {
            best_metric = result.residual_metric;
            best = Some(branches.len());
        }
        branches.push(Branch { order, result });
    }
    let mut out = branches[best.expect("non-empty")].result.clone();
    out.complex_mults = total;
    Ok((out, branches))
}

pub fn ml_detect(r: &[Complex64], h: &ComplexMatrix, c: &Constellation) -> Result<DetectionResult> {
    ml_detect_capped(r, h, c, DEFAULT_ML_CAP)
}

/// Exhaustive search over `𝒜^K`; ties go to the lexicographically first index vector.
pub fn ml_detect_capped(r: &[Complex64], h: &ComplexMatrix, c: &Constellation, cap: u128) -> Result<DetectionResult> {
    check_dims(r, h)?;
    let k = h.cols();
    let size = (c.len() as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::SearchSpaceTooLarge { size, cap });
    }
    let nr = h.rows();
    struct Search<'a> {
        h: &'a ComplexMatrix,
        c: &'a Constellation,
        cur: Vec<usize>,
        best: Vec<usize>,
        best_metric: f64,
        nodes: u64,
    }
    fn descend(s: &mut Search<'_>, depth: usize, resid: &[Complex64]) {
        if depth == s.cur.len() {
            let m = sq_norm(resid);
            if m < s.best_metric {
                s.best_metric = m;
                s.best.copy_from_slice(&s.cur);
            }
            return;
        }
        let mut next = resid.to_vec();
        for idx in 0..s.c.len() {
            next.copy_from_slice(resid);
            sub_scaled_column(&mut next, s.h, depth, s.c.point(idx));
            s.nodes += 1;
            s.cur[depth] = idx;
            descend(s, depth + 1, &next);
        }
    }
    let mut s = Search {
        h,
        c,
        cur: vec![0; k],
        best: vec![0; k],
        best_metric: f64::INFINITY,
        nodes: 0,
    };
    descend(&mut s, 0, r);
    let leaves = size as u64;
    let symbols: ComplexVector = s.best.iter().map(|&i| c.point(i)).collect();
    Ok(DetectionResult {
        soft_outputs: symbols.clone(),
        residual_metric: residual(r, h, &symbols),
        symbols,
        indices: s.best,
        sac_triggers: vec![false; k],
        complex_mults: s.nodes * nr as u64 + leaves * nr as u64,
    })
}
