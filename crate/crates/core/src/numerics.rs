//! Small dense complex linear algebra.
//!
//! Everything the detectors need fits in a handful of routines: a row-major
//! complex matrix, matrix-vector products and a Cholesky solver for the
//! Hermitian positive-definite systems `H Hᴴ + σ² I` that every MMSE filter
//! reduces to.

use num_complex::Complex64;

use crate::error::LinalgError;

pub type ComplexVector = Vec<Complex64>;

/// Relative pivot threshold below which a factorization is declared singular.
const PIVOT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[ComplexVector]) -> Result<Self, LinalgError> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(LinalgError::DimensionMismatch {
                expected: rows,
                got: bad.len(),
            });
        }
        Ok(Self::from_fn(rows, cols, |r, c| columns[c][r]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn column(&self, c: usize) -> ComplexVector {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    /// Matrix made of the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self::from_fn(self.rows, cols.len(), |r, c| self[(r, cols[c])])
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `Σ_c w_c · a_c aᵀ_cᴴ` over the given columns, plus `diag_load · I`.
    ///
    /// This is the regularized correlation `H̄ W H̄ᴴ + σ² I` used by every
    /// MMSE-type filter; only the lower triangle is computed and mirrored.
    pub fn weighted_gram(&self, cols: &[usize], weights: Option<&[f64]>, diag_load: f64) -> Self {
        let n = self.rows;
        let mut g = Self::zeros(n, n);
        for (idx, &c) in cols.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[idx]);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let hi = self[(i, c)] * w;
                for j in 0..=i {
                    g[(i, j)] += hi * self[(j, c)].conj();
                }
            }
        }
        for i in 0..n {
            g[(i, i)] += diag_load;
            for j in 0..i {
                g[(j, i)] = g[(i, j)].conj();
            }
        }
        g
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn mat_vec(a: &ComplexMatrix, x: &[Complex64]) -> Result<ComplexVector, LinalgError> {
    if a.cols != x.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.cols,
            got: x.len(),
        });
    }
    Ok(a.data
        .chunks_exact(a.cols.max(1))
        .take(a.rows)
        .map(|row| row.iter().zip(x).map(|(h, s)| h * s).sum())
        .collect())
}

pub fn sq_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// `aᴴ b`.
#[inline]
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `y -= col(h, c) · s`
#[inline]
pub fn sub_scaled_column(y: &mut [Complex64], h: &ComplexMatrix, c: usize, s: Complex64) {
    for (r, yr) in y.iter_mut().enumerate() {
        *yr -= h[(r, c)] * s;
    }
}

/// Lower-triangular Cholesky factor `A = L Lᴴ` of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: ComplexMatrix,
}

impl Cholesky {
    pub fn factor(a: &ComplexMatrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::NotSquare {
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0, f64::max);
        let tol = PIVOT_RTOL * scale.max(f64::MIN_POSITIVE);
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > tol) {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
            }
            let d = d.sqrt();
            l[(j, j)] = Complex64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    pub fn solve(&self, b: &[Complex64]) -> Result<ComplexVector, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let l = &self.l;
        // forward: L y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        // backward: Lᴴ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        Ok(y)
    }

    pub fn inverse(&self) -> ComplexMatrix {
        let n = self.dim();
        let mut cols = Vec::with_capacity(n);
        for c in 0..n {
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            e[c] = Complex64::new(1.0, 0.0);
            cols.push(self.solve(&e).expect("dimension is n"));
        }
        ComplexMatrix::from_columns(&cols).expect("square")
    }
}

/// Solves `A x = b` for Hermitian positive-definite `A`.
pub fn hermitian_solve(a: &ComplexMatrix, b: &[Complex64]) -> Result<ComplexVector, LinalgError> {
    if a.rows != a.cols {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.len() != a.rows {
        return Err(LinalgError::DimensionMismatch {
            expected: a.rows,
            got: b.len(),
        });
    }
    Cholesky::factor(a)?.solve(b)
}

/// Complex-multiplication units charged for a Cholesky solve of size `n`.
pub fn solve_cost(n: usize) -> u64 {
    let n = n as u64;
    n * n * n / 3 + n * n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Gauss-Jordan inverse with partial pivoting; deliberately unrelated to Cholesky.
    fn dense_inverse(a: &ComplexMatrix) -> ComplexMatrix {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = ComplexMatrix::identity(n);
        for col in 0..n {
            let p = (col..n).max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm())).unwrap();
            for k in 0..n {
                let t = m[(col, k)];
                m[(col, k)] = m[(p, k)];
                m[(p, k)] = t;
                let t = inv[(col, k)];
                inv[(col, k)] = inv[(p, k)];
                inv[(p, k)] = t;
            }
            let d = m[(col, col)];
            for k in 0..n {
                m[(col, k)] /= d;
                inv[(col, k)] /= d;
            }
            for i in 0..n {
                if i != col {
                    let f = m[(i, col)];
                    for k in 0..n {
                        let mv = m[(col, k)];
                        let iv = inv[(col, k)];
                        m[(i, k)] -= f * mv;
                        inv[(i, k)] -= f * iv;
                    }
                }
            }
        }
        inv
    }

    fn lcg_matrix(n: usize, m: usize, seed: &mut u64) -> ComplexMatrix {
        let mut next = || {
            *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((*seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        ComplexMatrix::from_fn(n, m, |_, _| c(next(), next()))
    }

    #[test]
    fn solve_identity() {
        let b = vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)];
        let x = hermitian_solve(&ComplexMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn solve_diagonal() {
        let mut a = ComplexMatrix::zeros(2, 2);
        a[(0, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(4.0, 0.0);
        let x = hermitian_solve(&a, &[c(2.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_matches_dense_inverse() {
        let mut seed = 7;
        for _ in 0..50 {
            let g = lcg_matrix(4, 4, &mut seed);
            let mut a = g.matmul(&g.conj_transpose()).unwrap();
            for i in 0..4 {
                a[(i, i)] += 1.0;
            }
            let b = lcg_matrix(4, 1, &mut seed).column(0);
            let x = hermitian_solve(&a, &b).unwrap();
            let x_ref = mat_vec(&dense_inverse(&a), &b).unwrap();
            let ax = mat_vec(&a, &x).unwrap();
            let res: Vec<_> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(sq_norm(&res).sqrt() < 1e-8 * sq_norm(&b).sqrt());
            let diff: Vec<_> = x.iter().zip(&x_ref).map(|(p, q)| p - q).collect();
            assert!(sq_norm(&diff).sqrt() < 1e-10);
        }
    }

    #[test]
    fn solve_rejects_bad_shapes() {
        let a = ComplexMatrix::zeros(2, 3);
        assert!(matches!(hermitian_solve(&a, &[c(0.0, 0.0); 2]), Err(LinalgError::NotSquare { .. })));
        let a = ComplexMatrix::identity(2);
        assert!(matches!(
            hermitian_solve(&a, &[c(0.0, 0.0); 3]),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_rejects_indefinite() {
        let mut a = ComplexMatrix::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        assert!(matches!(
            hermitian_solve(&a, &[c(1.0, 0.0); 2]),
            Err(LinalgError::NotPositiveDefinite { index: 1, .. })
        ));
        // rank one
        let v = ComplexMatrix::from_fn(2, 1, |_, _| c(1.0, 0.0));
        let a = v.matmul(&v.conj_transpose()).unwrap();
        assert!(hermitian_solve(&a, &[c(1.0, 0.0); 2]).is_err());
    }

    #[test]
    fn mat_vec_cases() {
        let x = vec![c(1.5, -2.0), c(0.25, 3.0)];
        assert_eq!(mat_vec(&ComplexMatrix::identity(2), &x).unwrap(), x);
        assert_eq!(mat_vec(&ComplexMatrix::zeros(3, 2), &x).unwrap(), vec![c(0.0, 0.0); 3]);
        let a = ComplexMatrix::from_row_major(2, 2, vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]).unwrap();
        let y = mat_vec(&a, &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(y, vec![c(1.0, 1.0), c(2.0, -1.0)]);
        assert!(mat_vec(&a, &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn sq_norm_cases() {
        assert_eq!(sq_norm(&[c(0.0, 0.0), c(0.0, 0.0)]), 0.0);
        assert_eq!(sq_norm(&[c(3.0, 0.0), c(0.0, 4.0)]), 25.0);
        assert_eq!(sq_norm(&[c(1.0, 1.0), c(1.0, -1.0)]), 4.0);
    }

    #[test]
    fn weighted_gram_matches_matmul() {
        let mut seed = 3;
        let h = lcg_matrix(3, 4, &mut seed);
        let g = h.weighted_gram(&[0, 1, 2, 3], None, 0.5);
        let mut want = h.matmul(&h.conj_transpose()).unwrap();
        for i in 0..3 {
            want[(i, i)] += 0.5;
        }
        for (p, q) in g.as_slice().iter().zip(want.as_slice()) {
            assert!((p - q).norm() < 1e-14);
        }
    }
}
