//! Clamped 1D B-spline bases and their 2D tensor products: evaluation,
//! differentiation, exact integration, and sparse design matrices for sets
//! of point or rectangle supports.
//!
//! A basis of order `k` spans piecewise polynomials of degree `k - 1`. Knot
//! sequences are clamped (end knots repeated `k` times), so the basis sums
//! to one on the closed domain. Integrals over intervals are computed in
//! closed form through the order-`k+1` representation of the antiderivative,
//! which is what makes aggregation over rectangles exact rather than a
//! quadrature approximation.

use thiserror::Error;

use crate::linalg::SparseRowMat;

#[derive(Error, Debug)]
pub enum BasisError {
    #[error("order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("domain [{lo}, {hi}] is empty or not finite")]
    EmptyDomain { lo: f64, hi: f64 },
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("x = {x} outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid interval [{a}, {b}] within domain [{lo}, {hi}]")]
    InvalidInterval { a: f64, b: f64, lo: f64, hi: f64 },
    #[error("derivative of an order-1 basis is not defined")]
    DerivativeOfOrderOne,
    #[error("support {row} lies outside the basis domain: {detail}")]
    SupportOutOfDomain { row: usize, detail: String },
    #[error("degenerate rectangle: [{lo1}, {hi1}] x [{lo2}, {hi2}]")]
    DegenerateRect { lo1: f64, hi1: f64, lo2: f64, hi2: f64 },
}

/// A clamped, nondecreasing knot sequence together with the spline order.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    order: usize,
}

impl KnotVector {
    /// Validate an explicit knot sequence: nondecreasing, end knots repeated
    /// exactly `order` times, interior knots strictly inside the domain with
    /// multiplicity at most `order`.
    pub fn new(knots: Vec<f64>, order: usize) -> Result<Self, BasisError> {
        if order < 1 {
            return Err(BasisError::InvalidOrder(order));
        }
        if knots.len() < 2 * order {
            return Err(BasisError::InvalidKnots(format!(
                "need at least {} knots for order {}, got {}",
                2 * order,
                order,
                knots.len()
            )));
        }
        if knots.iter().any(|t| !t.is_finite()) {
            return Err(BasisError::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(BasisError::InvalidKnots("knots must be nondecreasing".into()));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if !(lo < hi) {
            return Err(BasisError::EmptyDomain { lo, hi });
        }
        let lo_mult = knots.iter().take_while(|&&t| t == lo).count();
        let hi_mult = knots.iter().rev().take_while(|&&t| t == hi).count();
        if lo_mult != order || hi_mult != order {
            return Err(BasisError::InvalidKnots(format!(
                "end knots must have multiplicity exactly {order} (got {lo_mult} at lo, {hi_mult} at hi)"
            )));
        }
        let mut run = 1usize;
        for w in knots[order..knots.len() - order].windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > order {
                return Err(BasisError::InvalidKnots(format!(
                    "interior knot {} has multiplicity greater than the order",
                    w[0]
                )));
            }
        }
        Ok(KnotVector { knots, order })
    }

    /// Uniformly spaced interior knots on `[lo, hi]` with clamped ends.
    /// Produces `n_interior + order` basis functions.
    pub fn make_clamped_knots(
        (lo, hi): (f64, f64),
        n_interior: usize,
        order: usize,
    ) -> Result<Self, BasisError> {
        if order < 1 {
            return Err(BasisError::InvalidOrder(order));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(BasisError::EmptyDomain { lo, hi });
        }
        let mut knots = Vec::with_capacity(2 * order + n_interior);
        knots.extend(std::iter::repeat(lo).take(order));
        let step = (hi - lo) / (n_interior as f64 + 1.0);
        for i in 1..=n_interior {
            knots.push(lo + step * i as f64);
        }
        knots.extend(std::iter::repeat(hi).take(order));
        Ok(KnotVector { knots, order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions q = len(knots) - order.
    pub fn len(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        x >= lo && x <= hi
    }

    /// Index i of the knot span with t_i <= x < t_{i+1}; x = hi maps to the
    /// last nonempty span so evaluation at the right boundary is defined.
    fn span(&self, x: f64) -> usize {
        let k = self.order;
        let q = self.len();
        if x >= self.knots[q] {
            // right boundary: the last span [t_{q-1}, t_q] is nonempty
            // because interior knots are strictly inside the domain
            return q - 1;
        }
        // binary search over spans [k-1, q-1]
        let (mut lo, mut hi) = (k - 1, q - 1);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// The at most `order` nonzero basis values at `x`, as
    /// `(first_index, values)` with `values[r] = B_{first_index + r, k}(x)`.
    pub fn eval_local(&self, x: f64) -> Result<(usize, Vec<f64>), BasisError> {
        let (lo, hi) = self.domain();
        if !(self.contains(x) && x.is_finite()) {
            return Err(BasisError::OutOfDomain { x, lo, hi });
        }
        let i = self.span(x);
        Ok((i + 1 - self.order, self.de_boor(&self.knots, i, self.order, x)))
    }

    /// Cox-de Boor triangle at span `i`: values of B_{i-k+1 .. i, k}(x).
    fn de_boor(&self, knots: &[f64], i: usize, k: usize, x: f64) -> Vec<f64> {
        let mut vals = vec![0.0; k];
        vals[0] = 1.0;
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        for d in 1..k {
            left[d] = x - knots[i + 1 - d];
            right[d] = knots[i + d] - x;
            let mut saved = 0.0;
            for r in 0..d {
                let tmp = vals[r] / (right[r + 1] + left[d - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            vals[d] = saved;
        }
        vals
    }

    /// All q basis values at `x` (dense; zero outside the local support).
    pub fn eval_all(&self, x: f64) -> Result<Vec<f64>, BasisError> {
        let (first, vals) = self.eval_local(x)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// Local first derivatives: DB_{j,k}(x) from the order-(k-1) values,
    /// with terms over zero-width knot intervals defined as zero.
    pub fn eval_derivative_local(&self, x: f64) -> Result<(usize, Vec<f64>), BasisError> {
        let k = self.order;
        if k < 2 {
            return Err(BasisError::DerivativeOfOrderOne);
        }
        let (lo, hi) = self.domain();
        if !(self.contains(x) && x.is_finite()) {
            return Err(BasisError::OutOfDomain { x, lo, hi });
        }
        let i = self.span(x);
        let lower = self.de_boor(&self.knots, i, k - 1, x); // B_{i-k+2 .. i, k-1}
        let first = i + 1 - k;
        let t = &self.knots;
        let km1 = (k - 1) as f64;
        let mut out = vec![0.0; k];
        for (r, slot) in out.iter_mut().enumerate() {
            let j = first + r;
            // B_{j,k-1} is lower[j - (i-k+2)] when in range, else zero
            let b_j = if j >= i + 2 - k && j <= i {
                lower[j + k - 2 - i]
            } else {
                0.0
            };
            let b_j1 = if j + 1 >= i + 2 - k && j + 1 <= i {
                lower[j + k - 1 - i]
            } else {
                0.0
            };
            let d1 = t[j + k - 1] - t[j];
            let d2 = t[j + k] - t[j + 1];
            let term1 = if d1 > 0.0 { b_j / d1 } else { 0.0 };
            let term2 = if d2 > 0.0 { b_j1 / d2 } else { 0.0 };
            *slot = km1 * (term1 - term2);
        }
        Ok((first, out))
    }

    pub fn eval_derivative_all(&self, x: f64) -> Result<Vec<f64>, BasisError> {
        let (first, vals) = self.eval_derivative_local(x)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// Order-(k+1) basis values at `x` on the knot sequence extended by one
    /// copy of the last knot, which is what the antiderivative identity
    /// needs near the right boundary. Returns (first_index, k+1 values);
    /// at the leftmost span the first index is -1, a phantom entry the
    /// integral formula never reads.
    fn antiderivative_terms(&self, x: f64) -> (isize, Vec<f64>) {
        let k = self.order;
        let mut ext = Vec::with_capacity(self.knots.len() + 1);
        ext.extend_from_slice(&self.knots);
        ext.push(*self.knots.last().unwrap());
        let i = self.span(x);
        let vals = self.de_boor(&ext, i, k + 1, x);
        (i as isize - k as isize, vals)
    }

    /// Exact integrals of each basis function over `[a, b]`, via the
    /// order-(k+1) partial-sum representation of the antiderivative. The
    /// bounds are clipped to each basis function's support `[t_j, t_{j+k}]`
    /// before the representation is applied.
    pub fn integral_all(&self, a: f64, b: f64) -> Result<Vec<f64>, BasisError> {
        let (first, vals) = self.integral_local(a, b)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }

    /// Integrals of the basis functions whose support intersects `[a, b]`,
    /// as `(first_index, values)`.
    pub fn integral_local(&self, a: f64, b: f64) -> Result<(usize, Vec<f64>), BasisError> {
        let (lo, hi) = self.domain();
        if !(a.is_finite() && b.is_finite() && lo <= a && a <= b && b <= hi) {
            return Err(BasisError::InvalidInterval { a, b, lo, hi });
        }
        let k = self.order;
        let t = &self.knots;
        let q = self.len();
        if a == b {
            return Ok((0, vec![0.0; 0]));
        }
        // order-(k+1) values and suffix sums at both endpoints
        let (fa, va) = self.antiderivative_terms(a);
        let (fb, vb) = self.antiderivative_terms(b);
        let suffix = |vals: &[f64]| -> Vec<f64> {
            let mut s = vec![0.0; vals.len() + 1];
            for r in (0..vals.len()).rev() {
                s[r] = s[r + 1] + vals[r];
            }
            s
        };
        let sa = suffix(&va);
        let sb = suffix(&vb);
        // contiguous range of basis functions overlapping (a, b)
        let j_lo = (0..q).find(|&j| t[j + k] > a).unwrap_or(q);
        let j_hi = (0..q).rev().find(|&j| t[j] < b).map(|j| j + 1).unwrap_or(0);
        if j_lo >= j_hi {
            return Ok((0, vec![0.0; 0]));
        }
        let mut out = vec![0.0; j_hi - j_lo];
        for (slot, j) in out.iter_mut().zip(j_lo..j_hi) {
            let c = (t[j + k] - t[j]) / k as f64;
            // partial antiderivative F_j at an endpoint inside (t_j, t_{j+k})
            let f_at = |f0: isize, s: &[f64]| -> f64 {
                let r = j as isize - f0;
                if r < 0 {
                    c
                } else if r > k as isize {
                    0.0
                } else {
                    c * s[r as usize]
                }
            };
            let upper = if b >= t[j + k] { c } else { f_at(fb, &sb) };
            let lower = if a <= t[j] { 0.0 } else { f_at(fa, &sa) };
            *slot = (upper - lower).max(0.0);
        }
        Ok((j_lo, out))
    }
}

/// Whether an aggregated quantity is the integral over the region (`Total`)
/// or the integral divided by the region's area (`Average`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Average,
    Total,
}

/// A point or axis-aligned rectangle support, with the aggregation weight
/// convention used when the support is a rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupportGeometry {
    Point { s1: f64, s2: f64 },
    Rect { lo1: f64, hi1: f64, lo2: f64, hi2: f64, weight: Weighting },
}

impl SupportGeometry {
    pub fn point(s1: f64, s2: f64) -> Self {
        SupportGeometry::Point { s1, s2 }
    }

    pub fn rect(lo1: f64, hi1: f64, lo2: f64, hi2: f64, weight: Weighting) -> Result<Self, BasisError> {
        if !(hi1 > lo1 && hi2 > lo2)
            || ![lo1, hi1, lo2, hi2].iter().all(|v| v.is_finite())
        {
            return Err(BasisError::DegenerateRect { lo1, hi1, lo2, hi2 });
        }
        Ok(SupportGeometry::Rect { lo1, hi1, lo2, hi2, weight })
    }

    /// Area of a rectangle; zero for a point.
    pub fn area(&self) -> f64 {
        match self {
            SupportGeometry::Point { .. } => 0.0,
            SupportGeometry::Rect { lo1, hi1, lo2, hi2, .. } => (hi1 - lo1) * (hi2 - lo2),
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        match self {
            SupportGeometry::Point { s1, s2 } => (*s1, *s2),
            SupportGeometry::Rect { lo1, hi1, lo2, hi2, .. } => {
                (0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2))
            }
        }
    }

    /// Replace a rectangle by the point at its centroid (the construction
    /// behind centroid-based model variants).
    pub fn to_centroid_point(&self) -> SupportGeometry {
        let (s1, s2) = self.centroid();
        SupportGeometry::Point { s1, s2 }
    }

    pub fn weight(&self) -> Option<Weighting> {
        match self {
            SupportGeometry::Point { .. } => None,
            SupportGeometry::Rect { weight, .. } => Some(*weight),
        }
    }
}

/// Tensor product of two 1D bases. Basis index (j, l) maps to the flat
/// index `j * q2 + l`; every consumer relies on that layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorBasis {
    pub basis1: KnotVector,
    pub basis2: KnotVector,
}

impl TensorBasis {
    pub fn new(basis1: KnotVector, basis2: KnotVector) -> Self {
        TensorBasis { basis1, basis2 }
    }

    pub fn len(&self) -> usize {
        self.basis1.len() * self.basis2.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.basis1.len(), self.basis2.len())
    }

    pub fn domain(&self) -> ((f64, f64), (f64, f64)) {
        (self.basis1.domain(), self.basis2.domain())
    }

    pub fn flat_index(&self, j: usize, l: usize) -> usize {
        j * self.basis2.len() + l
    }

    fn check_support(&self, row: usize, s: &SupportGeometry) -> Result<(), BasisError> {
        let ((lo1, hi1), (lo2, hi2)) = self.domain();
        let ok = match s {
            SupportGeometry::Point { s1, s2 } => {
                self.basis1.contains(*s1) && self.basis2.contains(*s2)
            }
            SupportGeometry::Rect { lo1: a1, hi1: b1, lo2: a2, hi2: b2, .. } => {
                *a1 >= lo1 && *b1 <= hi1 && *a2 >= lo2 && *b2 <= hi2 && b1 > a1 && b2 > a2
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BasisError::SupportOutOfDomain {
                row,
                detail: format!(
                    "{s:?} vs domain [{lo1}, {hi1}] x [{lo2}, {hi2}]"
                ),
            })
        }
    }

    /// One sparse design row: point rows are products of 1D evaluations,
    /// rectangle rows are the outer product of 1D integral vectors, divided
    /// by the area when the weighting is `Average`.
    pub fn design_row(&self, s: &SupportGeometry) -> Result<Vec<(u32, f64)>, BasisError> {
        self.check_support(0, s)?;
        let q2 = self.basis2.len();
        let (f1, v1, f2, v2, scale) = match s {
            SupportGeometry::Point { s1, s2 } => {
                let (f1, v1) = self.basis1.eval_local(*s1)?;
                let (f2, v2) = self.basis2.eval_local(*s2)?;
                (f1, v1, f2, v2, 1.0)
            }
            SupportGeometry::Rect { lo1, hi1, lo2, hi2, weight } => {
                let (f1, v1) = self.basis1.integral_local(*lo1, *hi1)?;
                let (f2, v2) = self.basis2.integral_local(*lo2, *hi2)?;
                let scale = match weight {
                    Weighting::Average => 1.0 / ((hi1 - lo1) * (hi2 - lo2)),
                    Weighting::Total => 1.0,
                };
                (f1, v1, f2, v2, scale)
            }
        };
        let mut row = Vec::with_capacity(v1.len() * v2.len());
        for (a, &x1) in v1.iter().enumerate() {
            if x1 == 0.0 {
                continue;
            }
            for (b, &x2) in v2.iter().enumerate() {
                if x2 == 0.0 {
                    continue;
                }
                row.push((((f1 + a) * q2 + (f2 + b)) as u32, scale * x1 * x2));
            }
        }
        Ok(row)
    }

    /// Design matrix for a set of supports; errors identify the offending
    /// row when a support is outside the domain.
    pub fn design_matrix(&self, supports: &[SupportGeometry]) -> Result<SparseRowMat, BasisError> {
        let mut m = SparseRowMat::new(self.len());
        for (i, s) in supports.iter().enumerate() {
            self.check_support(i, s)?;
            let row = self.design_row(s).map_err(|e| match e {
                BasisError::SupportOutOfDomain { detail, .. } => {
                    BasisError::SupportOutOfDomain { row: i, detail }
                }
                other => other,
            })?;
            m.push_row(row);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kv(domain: (f64, f64), n_interior: usize, k: usize) -> KnotVector {
        KnotVector::make_clamped_knots(domain, n_interior, k).unwrap()
    }

    #[test]
    fn clamped_knots_examples() {
        let a = kv((0.0, 1.0), 0, 1);
        assert_eq!(a.knots(), &[0.0, 1.0]);
        assert_eq!(a.len(), 1);

        let b = kv((0.0, 10.0), 3, 3);
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 2.5, 5.0, 7.5, 10.0, 10.0, 10.0]);
        assert_eq!(b.len(), 6);

        // 20 basis functions of order 3 per coordinate -> tensor q = 400
        let c = kv((0.0, 100.0), 17, 3);
        assert_eq!(c.len(), 20);
        let tb = TensorBasis::new(c.clone(), c);
        assert_eq!(tb.len(), 400);
    }

    #[test]
    fn clamped_knots_rejects_bad_input() {
        assert!(KnotVector::make_clamped_knots((0.0, 0.0), 2, 3).is_err());
        assert!(KnotVector::make_clamped_knots((1.0, 0.0), 2, 3).is_err());
        assert!(KnotVector::make_clamped_knots((0.0, 1.0), 2, 0).is_err());
        assert!(KnotVector::new(vec![0.0, 0.5, 0.2, 1.0], 1).is_err());
        assert!(KnotVector::new(vec![0.0, 0.0, 1.0], 1).is_err());
    }

    #[test]
    fn order_one_is_an_indicator() {
        let a = KnotVector::new(vec![0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(a.eval_all(0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(a.eval_all(1.5).unwrap(), vec![0.0, 1.0]);
        // right boundary belongs to the last basis
        assert_eq!(a.eval_all(2.0).unwrap(), vec![0.0, 1.0]);
        assert!(a.eval_all(2.1).is_err());
        assert!(a.eval_all(-0.1).is_err());
    }

    #[test]
    fn partition_of_unity() {
        for k in 1..=4 {
            let b = kv((-3.0, 7.0), 9, k);
            for i in 0..=200 {
                let x = -3.0 + 10.0 * i as f64 / 200.0;
                let s: f64 = b.eval_all(x).unwrap().iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "k={k} x={x} sum={s}");
                let vals = b.eval_all(x).unwrap();
                assert!(vals.iter().all(|&v| v >= 0.0));
                assert!(vals.iter().filter(|&&v| v != 0.0).count() <= k);
            }
        }
    }

    #[test]
    fn eval_matches_divided_difference_definition() {
        // frozen from the divided-difference definition evaluated exactly
        // (rationals: [0, 2/25, 37/50, 9/50, 0, 0])
        let b = kv((0.0, 10.0), 3, 3);
        let vals = b.eval_all(4.0).unwrap();
        let expect = [0.0, 0.08, 0.74, 0.18, 0.0, 0.0];
        for (v, e) in vals.iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn local_support() {
        let b = kv((0.0, 10.0), 3, 3);
        let t = b.knots();
        for j in 0..b.len() {
            for i in 0..=100 {
                let x = 10.0 * i as f64 / 100.0;
                let v = b.eval_all(x).unwrap()[j];
                let inside = x >= t[j] && x <= t[j + 3];
                if !inside {
                    assert_eq!(v, 0.0, "j={j} x={x}");
                }
            }
        }
    }

    #[test]
    fn derivative_examples() {
        let b = kv((0.0, 10.0), 3, 3);
        // frozen exact rationals: [0, -4/25, -2/25, 6/25, 0, 0]
        let d = b.eval_derivative_all(4.0).unwrap();
        let expect = [0.0, -0.16, -0.08, 0.24, 0.0, 0.0];
        for (v, e) in d.iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
        // derivative of the partition of unity is zero
        for i in 1..40 {
            let x = 10.0 * i as f64 / 40.0;
            let s: f64 = b.eval_derivative_all(x).unwrap().iter().sum();
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }
        // central finite differences
        let h = 1e-6;
        for &x in &[1.1, 4.0, 6.2, 8.9] {
            let d = b.eval_derivative_all(x).unwrap();
            let up = b.eval_all(x + h).unwrap();
            let dn = b.eval_all(x - h).unwrap();
            for j in 0..b.len() {
                let fd = (up[j] - dn[j]) / (2.0 * h);
                if d[j].abs() > 1e-8 {
                    assert!(
                        ((d[j] - fd) / d[j]).abs() <= 1e-6,
                        "j={j} x={x} d={} fd={fd}",
                        d[j]
                    );
                } else {
                    assert_abs_diff_eq!(d[j], fd, epsilon = 1e-6);
                }
            }
        }
        // C^{k-2} continuity at a simple knot for k = 3
        let eps = 1e-9;
        let left = b.eval_derivative_all(5.0 - eps).unwrap();
        let right = b.eval_derivative_all(5.0 + eps).unwrap();
        for j in 0..b.len() {
            assert_abs_diff_eq!(left[j], right[j], epsilon = 1e-6);
        }
        assert!(kv((0.0, 1.0), 2, 1).eval_derivative_all(0.5).is_err());
    }

    #[test]
    fn integral_examples() {
        let a = KnotVector::new(vec![0.0, 1.0, 2.0], 1).unwrap();
        let i = a.integral_all(0.0, 1.5).unwrap();
        assert_abs_diff_eq!(i[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(i[1], 0.5, epsilon = 1e-15);

        // frozen exact rationals for order 3 on [0, 10] with 3 interior knots:
        // [288/3125, 43741/37500, 91553/37500, 81583/37500, 19651/37500, 4/9375]
        let b = kv((0.0, 10.0), 3, 3);
        let i = b.integral_all(1.3, 7.7).unwrap();
        let expect = [
            288.0 / 3125.0,
            43741.0 / 37500.0,
            91553.0 / 37500.0,
            81583.0 / 37500.0,
            19651.0 / 37500.0,
            4.0 / 9375.0,
        ];
        for (v, e) in i.iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-12);
        }

        // integral of the partition of unity over the whole domain
        for k in 1..=4 {
            let b = kv((-2.0, 9.0), 6, k);
            let total: f64 = b.integral_all(-2.0, 9.0).unwrap().iter().sum();
            assert_abs_diff_eq!(total, 11.0, epsilon = 1e-11);
            assert!(b.integral_all(-3.0, 1.0).is_err());
            assert!(b.integral_all(2.0, 1.0).is_err());
            assert!(b
                .integral_all(0.5, 0.5)
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn integral_additivity_is_exact() {
        let b = kv((0.0, 10.0), 7, 4);
        let (a, m, c) = (0.7, 4.3, 9.1);
        let i_ac = b.integral_all(a, c).unwrap();
        let i_am = b.integral_all(a, m).unwrap();
        let i_mc = b.integral_all(m, c).unwrap();
        for j in 0..b.len() {
            assert_abs_diff_eq!(i_ac[j], i_am[j] + i_mc[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn design_matrix_full_domain_rect_order_one() {
        // order-1 uniform basis: every Average row entry is cell/domain area
        let b1 = kv((0.0, 8.0), 3, 1);
        let b2 = kv((0.0, 4.0), 1, 1);
        let tb = TensorBasis::new(b1, b2);
        let full = SupportGeometry::rect(0.0, 8.0, 0.0, 4.0, Weighting::Average).unwrap();
        let m = tb.design_matrix(&[full]).unwrap();
        let row = m.row(0);
        assert_eq!(row.len(), 8);
        for &(_, v) in row {
            assert_abs_diff_eq!(v, (2.0 * 2.0) / 32.0, epsilon = 1e-14);
        }
        let sum: f64 = row.iter().map(|&(_, v)| v).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn average_rows_sum_to_one() {
        let b1 = kv((0.0, 100.0), 17, 3);
        let b2 = kv((0.0, 100.0), 17, 3);
        let tb = TensorBasis::new(b1, b2);
        let supports = [
            SupportGeometry::rect(3.0, 19.0, 42.0, 58.5, Weighting::Average).unwrap(),
            SupportGeometry::rect(0.0, 100.0, 0.0, 100.0, Weighting::Average).unwrap(),
            SupportGeometry::rect(97.0, 100.0, 0.0, 2.0, Weighting::Average).unwrap(),
            SupportGeometry::point(31.7, 88.8),
        ];
        let m = tb.design_matrix(&supports).unwrap();
        for i in 0..m.nrows() {
            let sum: f64 = m.row(i).iter().map(|&(_, v)| v).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
        // point rows touch at most k^2 columns
        assert!(m.row(3).len() <= 9);
    }

    #[test]
    fn design_matrix_rejects_out_of_domain() {
        let b = kv((0.0, 10.0), 3, 3);
        let tb = TensorBasis::new(b.clone(), b);
        let bad = SupportGeometry::rect(8.0, 12.0, 0.0, 1.0, Weighting::Average).unwrap();
        let ok = SupportGeometry::point(1.0, 1.0);
        match tb.design_matrix(&[ok, bad]) {
            Err(BasisError::SupportOutOfDomain { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected SupportOutOfDomain, got {other:?}"),
        }
    }

    #[test]
    fn nesting_reproduces_parent_row() {
        // splitting a rect into 4 equal sub-rects and averaging the
        // Average-weighted rows reproduces the parent row
        let b = kv((0.0, 10.0), 5, 3);
        let tb = TensorBasis::new(b.clone(), b);
        let (lo1, hi1, lo2, hi2) = (1.2, 6.0, 3.4, 8.2);
        let (m1, m2) = (0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2));
        let parent = SupportGeometry::rect(lo1, hi1, lo2, hi2, Weighting::Average).unwrap();
        let quads = [
            SupportGeometry::rect(lo1, m1, lo2, m2, Weighting::Average).unwrap(),
            SupportGeometry::rect(m1, hi1, lo2, m2, Weighting::Average).unwrap(),
            SupportGeometry::rect(lo1, m1, m2, hi2, Weighting::Average).unwrap(),
            SupportGeometry::rect(m1, hi1, m2, hi2, Weighting::Average).unwrap(),
        ];
        let mut dense_parent = vec![0.0; tb.len()];
        for (c, v) in tb.design_row(&parent).unwrap() {
            dense_parent[c as usize] = v;
        }
        let mut dense_avg = vec![0.0; tb.len()];
        for sub in &quads {
            for (c, v) in tb.design_row(sub).unwrap() {
                dense_avg[c as usize] += 0.25 * v;
            }
        }
        for j in 0..tb.len() {
            assert_abs_diff_eq!(dense_parent[j], dense_avg[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn integral_derivative_consistency() {
        // d/db integral_all(a, b) = eval_all(b)
        let b = kv((0.0, 10.0), 6, 3);
        let a = 0.9;
        let h = 1e-6;
        for &x in &[2.3, 5.0, 7.7] {
            let up = b.integral_all(a, x + h).unwrap();
            let dn = b.integral_all(a, x - h).unwrap();
            let v = b.eval_all(x).unwrap();
            for j in 0..b.len() {
                let fd = (up[j] - dn[j]) / (2.0 * h);
                if v[j].abs() > 1e-8 {
                    assert!(((v[j] - fd) / v[j]).abs() <= 1e-6);
                } else {
                    assert_abs_diff_eq!(v[j], fd, epsilon = 1e-6);
                }
            }
        }
    }
}
