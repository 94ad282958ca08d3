//! Small linear-algebra kernels shared by the model and sampler: symmetric
//! banded matrices with Cholesky factorization, and sparse row matrices for
//! design matrices whose rows touch few basis functions.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Symmetric banded matrix. Only the lower band is stored: row `i` holds
/// entries for columns `i-bw ..= i`, padded on the left for the first rows.
///
/// `data[i * (bw + 1) + (bw - (i - j))]` is entry `(i, j)`.
#[derive(Clone, Debug)]
pub struct SymBandMat {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymBandMat {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        SymBandMat {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw - (i - j))
    }

    /// Entry (i, j); symmetric access, zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[self.idx(hi, lo)]
        }
    }

    /// Add `v` to entry (i, j) (and by symmetry (j, i)).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            hi - lo <= self.bw,
            "entry ({i}, {j}) outside bandwidth {}",
            self.bw
        );
        let at = self.idx(hi, lo);
        self.data[at] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let at = self.idx(hi, lo);
        self.data[at] = v;
    }

    /// Widen the band to `bw` (no-op if already at least as wide).
    pub fn with_bandwidth(&self, bw: usize) -> SymBandMat {
        let bw = bw.min(self.n.saturating_sub(1));
        if bw <= self.bw {
            return self.clone();
        }
        let mut out = SymBandMat::zeros(self.n, bw);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                out.set(i, j, self.data[self.idx(i, j)]);
            }
        }
        out
    }

    /// self += c * other. Requires `other.bw <= self.bw`.
    pub fn add_scaled(&mut self, c: f64, other: &SymBandMat) {
        assert_eq!(self.n, other.n);
        assert!(other.bw <= self.bw, "operand band exceeds target band");
        if other.bw == self.bw {
            for (d, s) in self.data.iter_mut().zip(other.data.iter()) {
                *d += c * s;
            }
        } else {
            for i in 0..self.n {
                let j0 = i.saturating_sub(other.bw);
                for j in j0..=i {
                    let at = self.idx(i, j);
                    self.data[at] += c * other.data[other.idx(i, j)];
                }
            }
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|d| *d = 0.0);
    }

    /// y = A x (full symmetric product).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut acc = 0.0;
            for j in j0..=i {
                let a = self.data[self.idx(i, j)];
                acc += a * x[j];
                if j < i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
        y
    }

    /// xᵀ A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest absolute asymmetry under the banded representation is zero by
    /// construction; this checks the stored band for NaN/inf instead.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let v = self.data[self.idx(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Cholesky factorization A = L Lᵀ within the band.
    pub fn cholesky(&self) -> Result<BandCholesky, LinalgError> {
        let mut l = self.clone();
        let bw = l.bw;
        for j in 0..l.n {
            let mut d = l.data[l.idx(j, j)];
            let k0 = j.saturating_sub(bw);
            for k in k0..j {
                let v = l.data[l.idx(j, k)];
                d -= v * v;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: j, pivot: d });
            }
            let dj = d.sqrt();
            let at = l.idx(j, j);
            l.data[at] = dj;
            let i_hi = (j + bw).min(l.n - 1);
            for i in (j + 1)..=i_hi {
                let mut s = l.data[l.idx(i, j)];
                let k0 = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for k in k0..j {
                    if j - k <= bw && i - k <= bw {
                        s -= l.data[l.idx(i, k)] * l.data[l.idx(j, k)];
                    }
                }
                let at = l.idx(i, j);
                l.data[at] = s / dj;
            }
        }
        Ok(BandCholesky { l })
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    l: SymBandMat,
}

impl BandCholesky {
    pub fn n(&self) -> usize {
        self.l.n
    }

    /// Solve L y = b in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        let n = self.l.n;
        let bw = self.l.bw;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            let mut s = b[i];
            for j in j0..i {
                s -= self.l.data[self.l.idx(i, j)] * b[j];
            }
            b[i] = s / self.l.data[self.l.idx(i, i)];
        }
    }

    /// Solve Lᵀ x = b in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        let n = self.l.n;
        let bw = self.l.bw;
        for i in (0..n).rev() {
            let mut s = b[i];
            let j_hi = (i + bw).min(n - 1);
            for j in (i + 1)..=j_hi {
                s -= self.l.data[self.l.idx(j, i)] * b[j];
            }
            b[i] = s / self.l.data[self.l.idx(i, i)];
        }
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower(&mut x);
        self.solve_upper(&mut x);
        x
    }

    /// log det A = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.l.n)
            .map(|i| self.l.data[self.l.idx(i, i)].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Sparse matrix stored as compressed rows of (column, value) pairs.
/// Rows are short relative to the column count, which is the shape of
/// B-spline design matrices where each support touches few basis functions.
#[derive(Clone, Debug, Default)]
pub struct SparseRowMat {
    ncols: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseRowMat {
    pub fn new(ncols: usize) -> Self {
        SparseRowMat {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn with_rows(ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        SparseRowMat { ncols, rows }
    }

    pub fn push_row(&mut self, row: Vec<(u32, f64)>) {
        debug_assert!(row.iter().all(|&(c, _)| (c as usize) < self.ncols));
        self.rows.push(row);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i]
            .iter()
            .map(|&(c, v)| v * x[c as usize])
            .sum()
    }

    /// y = B x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.rows.len()).map(|i| self.row_dot(i, x)).collect()
    }

    /// y = Bᵀ w.
    pub fn t_matvec(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows.len());
        let mut y = vec![0.0; self.ncols];
        for (i, row) in self.rows.iter().enumerate() {
            let wi = w[i];
            for &(c, v) in row {
                y[c as usize] += v * wi;
            }
        }
        y
    }

    /// Maximum column spread of any row; the bandwidth that Bᵀ D B needs.
    pub fn gram_bandwidth(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let lo = r.iter().map(|&(c, _)| c).min().unwrap();
                let hi = r.iter().map(|&(c, _)| c).max().unwrap();
                (hi - lo) as usize
            })
            .max()
            .unwrap_or(0)
    }

    /// Accumulate Bᵀ diag(w) B into `out` (must have sufficient bandwidth).
    pub fn gram_into(&self, weights: &[f64], out: &mut SymBandMat) {
        assert_eq!(out.n(), self.ncols);
        assert_eq!(weights.len(), self.rows.len());
        for (row, &w) in self.rows.iter().zip(weights) {
            for (a, &(ca, va)) in row.iter().enumerate() {
                for &(cb, vb) in &row[a..] {
                    out.add(ca.max(cb) as usize, ca.min(cb) as usize, w * va * vb);
                }
            }
        }
    }

    /// Bᵀ diag(w) B as a fresh banded matrix.
    pub fn gram(&self, weights: &[f64]) -> SymBandMat {
        let mut out = SymBandMat::zeros(self.ncols, self.gram_bandwidth());
        self.gram_into(weights, &mut out);
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(i, c as usize)] += v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn random_banded(n: usize, bw: usize, seed: u64) -> SymBandMat {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut a = SymBandMat::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
            // diagonal dominance keeps it positive definite
            a.add(i, i, 2.0 + bw as f64);
        }
        a
    }

    #[test]
    fn cholesky_solve_matches_dense() {
        for (n, bw) in [(1usize, 0usize), (5, 1), (12, 3), (30, 7), (40, 39)] {
            let a = random_banded(n, bw, 42 + n as u64);
            let chol = a.cholesky().unwrap();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
            let x = chol.solve(&b);
            let dense = a.to_dense();
            let xd = dense
                .clone()
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&b))
                .unwrap();
            for i in 0..n {
                assert_abs_diff_eq!(x[i], xd[i], epsilon = 1e-10);
            }
            let ld = chol.log_det();
            let ld_dense = dense.determinant().ln();
            assert_abs_diff_eq!(ld, ld_dense, epsilon = 1e-8);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymBandMat::zeros(3, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, -1.0);
        a.set(2, 2, 1.0);
        assert!(matches!(
            a.cholesky(),
            Err(LinalgError::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn matvec_and_quad_form_agree_with_dense() {
        let a = random_banded(17, 4, 7);
        let x: Vec<f64> = (0..17).map(|i| (i as f64 * 0.3).cos()).collect();
        let y = a.matvec(&x);
        let yd = a.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..17 {
            assert_abs_diff_eq!(y[i], yd[i], epsilon = 1e-12);
        }
        let q = a.quad_form(&x);
        let qd = (nalgebra::DVector::from_column_slice(&x).transpose() * yd)[(0, 0)];
        assert_abs_diff_eq!(q, qd, epsilon = 1e-10);
    }

    #[test]
    fn gram_matches_dense_product() {
        let mut b = SparseRowMat::new(6);
        b.push_row(vec![(0, 1.0), (1, 2.0)]);
        b.push_row(vec![(1, -1.0), (2, 0.5), (3, 1.5)]);
        b.push_row(vec![(4, 2.0), (5, -0.5)]);
        b.push_row(vec![(0, 0.3), (2, 0.7)]);
        let w = vec![1.0, 2.0, 0.5, 3.0];
        let g = b.gram(&w);
        let bd = b.to_dense();
        let wd = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&w));
        let gd = bd.transpose() * wd * &bd;
        for i in 0..6 {
            for j in 0..6 {
                assert_abs_diff_eq!(g.get(i, j), gd[(i, j)], epsilon = 1e-12);
            }
        }
        let s = b.t_matvec(&w);
        let sd = bd.transpose() * nalgebra::DVector::from_column_slice(&w);
        for i in 0..6 {
            assert_abs_diff_eq!(s[i], sd[i], epsilon = 1e-12);
        }
    }
}
