//! Depth-first sphere decoder with radius expansion.
//!
//! When `K > N_R` the channel is stacked with `α I` (`α² = σ_v²`) so that it
//! has full column rank. The stacked metric equals the true metric plus
//! `α²‖s‖²`; pruning subtracts the largest value that term can take on the
//! undecided layers, which keeps the search exact for any constellation.

use num_complex::Complex64;

use super::{check_dims, DetectionResult, DetectorConfig};
use crate::airlink::Constellation;
use crate::error::{contract, Result};
use crate::numerics::{sq_norm, sub_scaled_column, ComplexMatrix, ComplexVector};

const PRUNE_SLACK: f64 = 1e-12;

struct Qr {
    /// upper triangular `K × K`, row-major
    r: ComplexMatrix,
    /// `Qᴴ y`
    z: ComplexVector,
    /// `‖y‖² − ‖Qᴴ y‖²`
    offset: f64,
}

/// Thin QR of `[H; α I]` by modified Gram-Schmidt, applied to `[r; 0]`.
fn stacked_qr(h: &ComplexMatrix, r: &[Complex64], alpha: f64) -> Option<Qr> {
    let (nr, k) = (h.rows(), h.cols());
    let rows = if alpha > 0.0 { nr + k } else { nr };
    let mut cols: Vec<ComplexVector> = (0..k)
        .map(|j| {
            let mut v = h.column(j);
            if alpha > 0.0 {
                v.extend((0..k).map(|i| Complex64::new(if i == j { alpha } else { 0.0 }, 0.0)));
            }
            v
        })
        .collect();
    let mut y = r.to_vec();
    y.resize(rows, Complex64::new(0.0, 0.0));
    let scale = cols.iter().map(|c| sq_norm(c)).fold(0.0, f64::max).sqrt();

    let mut rm = ComplexMatrix::zeros(k, k);
    for j in 0..k {
        for i in 0..j {
            let (head, tail) = cols.split_at_mut(j);
            let (qi, vj) = (&head[i], &mut tail[0]);
            let rij: Complex64 = qi.iter().zip(vj.iter()).map(|(q, v)| q.conj() * v).sum();
            for (v, q) in vj.iter_mut().zip(qi) {
                *v -= rij * q;
            }
            rm[(i, j)] = rij;
        }
        let norm = sq_norm(&cols[j]).sqrt();
        if !(norm > 1e-10 * scale) {
            return None;
        }
        rm[(j, j)] = Complex64::new(norm, 0.0);
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    let z: ComplexVector = cols
        .iter()
        .map(|q| q.iter().zip(&y).map(|(a, b)| a.conj() * b).sum())
        .collect();
    let offset = (sq_norm(&y) - sq_norm(&z)).max(0.0);
    Some(Qr { r: rm, z, offset })
}

struct Search<'a> {
    qr: &'a Qr,
    h: &'a ComplexMatrix,
    rx: &'a [Complex64],
    c: &'a Constellation,
    alpha2: f64,
    max_energy: f64,
    radius2: f64,
    cur: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    nodes: u64,
    leaves: u64,
}

impl Search<'_> {
    fn bound(&self) -> f64 {
        let b = self.best.as_ref().map_or(f64::INFINITY, |(m, _)| *m);
        b.min(self.radius2)
    }

    /// `partial` is the triangular metric of layers `layer+1..K`, `energy` their `‖s‖²`.
    fn descend(&mut self, layer: usize, partial: f64, energy: f64) {
        let k = self.cur.len();
        let r = &self.qr.r;
        let mut centre = self.qr.z[layer];
        for l in (layer + 1)..k {
            centre -= r[(layer, l)] * self.c.point(self.cur[l]);
        }
        let diag = r[(layer, layer)].re;
        let est = centre / diag;
        self.nodes += 1;
        let mut order: Vec<(f64, usize)> = self
            .c
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| ((est - p).norm_sqr(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (d2, idx) in order {
            let metric = partial + diag * diag * d2;
            let e = energy + self.c.point(idx).norm_sqr();
            // lower bound on the true metric of any completion
            let lower = metric + self.qr.offset - self.alpha2 * (e + layer as f64 * self.max_energy);
            let bound = self.bound();
            if lower > bound + PRUNE_SLACK * bound.abs().max(1.0) {
                // candidates are visited by increasing distance
                if self.alpha2 == 0.0 {
                    break;
                }
                continue;
            }
            self.cur[layer] = idx;
            if layer == 0 {
                self.leaf();
            } else {
                self.descend(layer - 1, metric, e);
            }
        }
    }

    fn leaf(&mut self) {
        self.leaves += 1;
        let mut res = self.rx.to_vec();
        for (user, &idx) in self.cur.iter().enumerate() {
            sub_scaled_column(&mut res, self.h, user, self.c.point(idx));
        }
        let m = sq_norm(&res);
        if m > self.radius2 {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((bm, bv)) => m < *bm || (m == *bm && self.cur < *bv),
        };
        if better {
            self.best = Some((m, self.cur.clone()));
        }
    }
}

/// Exact maximum-likelihood detection by sphere search.
///
/// The initial squared radius is `sd_radius_scale · σ_v² · N_R`; it doubles
/// until the sphere contains at least one lattice point.
pub fn sphere_decode(
    r: &[Complex64],
    h: &ComplexMatrix,
    c: &Constellation,
    sigma_v2: f64,
    cfg: &DetectorConfig,
) -> Result<DetectionResult> {
    check_dims(r, h)?;
    if !(sigma_v2 > 0.0) {
        return Err(contract(format!("noise variance must be positive, got {sigma_v2}")));
    }
    let (nr, k) = (h.rows(), h.cols());
    let mut alpha2 = if k > nr { sigma_v2 } else { 0.0 };
    let qr = match stacked_qr(h, r, alpha2.sqrt()) {
        Some(qr) => qr,
        None => {
            alpha2 = sigma_v2;
            stacked_qr(h, r, alpha2.sqrt()).ok_or_else(|| contract("channel matrix is degenerate"))?
        }
    };
    let mut search = Search {
        qr: &qr,
        h,
        rx: r,
        c,
        alpha2,
        max_energy: c.points().iter().map(|p| p.norm_sqr()).fold(0.0, f64::max),
        radius2: cfg.sd_radius_scale * sigma_v2 * nr as f64,
        cur: vec![0; k],
        best: None,
        nodes: 0,
        leaves: 0,
    };
    loop {
        search.descend(k - 1, 0.0, 0.0);
        if search.best.is_some() {
            break;
        }
        search.radius2 *= 2.0;
    }
    let (metric, indices) = search.best.take().expect("found");
    let symbols: ComplexVector = indices.iter().map(|&i| c.point(i)).collect();
    // QR setup, per-node interference sums and alphabet ranking, leaf residuals
    let qr_cost = (nr * k * k) as u64;
    let per_node = (k + c.len()) as u64;
    let per_leaf = (nr * k + nr) as u64;
    Ok(DetectionResult {
        soft_outputs: symbols.clone(),
        symbols,
        indices,
        residual_metric: metric,
        sac_triggers: vec![false; k],
        complex_mults: qr_cost + search.nodes * per_node + search.leaves * per_leaf,
    })
}
