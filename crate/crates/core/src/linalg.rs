//! Dense and banded linear algebra helpers.
//!
//! Operator norms are spectral norms (largest singular value). The banded
//! LU is a partial-pivoting factorization in the style of LAPACK `gbtrf`,
//! with solves against both `A` and `A^T`.

// Index loops mirror the LAPACK formulation.
#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest singular value.
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].magnitude();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// Smallest singular value of a (possibly rectangular) matrix, taken over
/// `min(nrows, ncols)` singular values.
pub fn smallest_singular_value<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(T::infinity(), |a, b| if b < a { b } else { a })
}

pub fn vector_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.norm()
}

/// Orthonormal basis of the column space of `m`, keeping singular directions
/// with `sigma > rel_tol * max(1, sigma_max)`.
pub fn orthonormal_range<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let n = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    let cut = rel_tol * if smax > T::one() { smax } else { T::one() };
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    let mut out = DMatrix::zeros(n, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Numerical rank with the same thresholding as [`orthonormal_range`].
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> usize {
    orthonormal_range(m, rel_tol).ncols()
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns in `basis`.
pub fn orthogonal_complement<T: Scalar>(basis: &DMatrix<T>) -> DMatrix<T> {
    let n = basis.nrows();
    let k = basis.ncols();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    if k >= n {
        return DMatrix::zeros(n, 0);
    }
    let proj = DMatrix::identity(n, n) - basis * basis.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = DMatrix::zeros(n, n - k);
    for (c, &i) in idx.iter().take(n - k).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Minimizes `|map * basis * c - target|` and returns `basis * c` together
/// with the smallest singular value of `map * basis`.
pub fn restricted_solve<T: Scalar>(map: &DMatrix<T>, basis: &DMatrix<T>, target: &DVector<T>) -> (DVector<T>, T) {
    let n = map.nrows();
    if basis.ncols() == 0 {
        return (DVector::zeros(n), T::infinity());
    }
    let restricted = map * basis;
    let svd = restricted.svd(true, true);
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .fold(T::infinity(), |a, b| if b < a { b } else { a });
    let coeffs = svd
        .solve(target, T::zero())
        .unwrap_or_else(|_| DVector::zeros(basis.ncols()));
    (basis * coeffs, smin)
}

/// Inverse through LU; fails on exactly singular input.
pub fn inverse<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit<T: Scalar>(xs: &[T], ys: &[T]) -> Result<(T, T)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidInput("linear fit needs matching nonempty samples".into()));
    }
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let my = ys.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > T::zero() { sxy / sxx } else { T::zero() };
    Ok((my - slope * mx, slope))
}

/// General band matrix: row `i` holds columns `i - kl ..= i + ku`.
#[derive(Clone, Debug)]
pub struct BandMatrix<T: Scalar> {
    nrows: usize,
    ncols: usize,
    kl: usize,
    ku: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize, kl: usize, ku: usize) -> Self {
        Self {
            nrows,
            ncols,
            kl,
            ku,
            data: vec![T::zero(); nrows * (kl + ku + 1)],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku && j < self.ncols && i < self.nrows
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Adds a dense block with top-left corner at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &DMatrix<T>) {
        for i in 0..block.nrows() {
            for j in 0..block.ncols() {
                let v = block[(i, j)];
                if v != T::zero() {
                    self.add(r0 + i, c0 + j, v);
                }
            }
        }
    }

    fn col_range(&self, i: usize) -> std::ops::Range<usize> {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku + 1).min(self.ncols);
        lo..hi
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                self.col_range(i)
                    .fold(T::zero(), |acc, j| acc + self.data[self.idx(i, j)] * x[j])
            })
            .collect()
    }

    pub fn matvec_transpose(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![T::zero(); self.ncols];
        for i in 0..self.nrows {
            for j in self.col_range(i) {
                out[j] += self.data[self.idx(i, j)] * y[i];
            }
        }
        out
    }

    /// `A^T A`, banded with bandwidth `kl + ku` on both sides.
    pub fn normal_product(&self) -> BandMatrix<T> {
        let bw = self.kl + self.ku;
        let mut out = BandMatrix::zeros(self.ncols, self.ncols, bw, bw);
        for i in 0..self.nrows {
            let cols = self.col_range(i);
            for j in cols.clone() {
                let aij = self.data[self.idx(i, j)];
                if aij == T::zero() {
                    continue;
                }
                for k in cols.clone() {
                    let aik = self.data[self.idx(i, k)];
                    out.add(j, k, aij * aik);
                }
            }
        }
        out
    }

    /// `A A^T`, banded with bandwidth `kl + ku` on both sides.
    pub fn gram_product(&self) -> BandMatrix<T> {
        let bw = self.kl + self.ku;
        let mut out = BandMatrix::zeros(self.nrows, self.nrows, bw, bw);
        for i in 0..self.nrows {
            let ci = self.col_range(i);
            let lo = i.saturating_sub(bw);
            let hi = (i + bw + 1).min(self.nrows);
            for k in lo..hi {
                let ck = self.col_range(k);
                let start = ci.start.max(ck.start);
                let end = ci.end.min(ck.end);
                let mut s = T::zero();
                for j in start..end {
                    s += self.data[self.idx(i, j)] * self.data[self.idx(k, j)];
                }
                if s != T::zero() {
                    out.add(i, k, s);
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for j in self.col_range(i) {
                m[(i, j)] = self.data[self.idx(i, j)];
            }
        }
        m
    }

    /// Infinity-norm (max absolute row sum); a cheap upper bound used for
    /// relative thresholds.
    pub fn norm_inf(&self) -> T {
        (0..self.nrows)
            .map(|i| {
                self.col_range(i)
                    .fold(T::zero(), |a, j| a + self.data[self.idx(i, j)].magnitude())
            })
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

/// LU factorization of a square band matrix with partial pivoting.
#[derive(Clone, Debug)]
pub struct BandedLu<T: Scalar> {
    n: usize,
    kl: usize,
    /// Upper factor, bandwidth `kl + ku`.
    upper: BandMatrix<T>,
    /// Multipliers: `mult[k * kl + (i - 1)]` for row `k + i`.
    mult: Vec<T>,
    pivots: Vec<usize>,
    min_pivot: T,
    max_pivot: T,
}

impl<T: Scalar> BandedLu<T> {
    pub fn factor(a: &BandMatrix<T>) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidInput("banded LU needs a square matrix".into()));
        }
        let n = a.nrows;
        let kl = a.kl;
        let ku = a.ku;
        let uw = kl + ku;
        // Working copy with room for pivoting fill-in.
        let mut w = BandMatrix::zeros(n, n, kl, uw);
        for i in 0..n {
            for j in a.col_range(i) {
                w.set(i, j, a.get(i, j));
            }
        }
        let mut mult = vec![T::zero(); n * kl.max(1)];
        let mut pivots = vec![0usize; n];
        let mut min_pivot = T::infinity();
        let mut max_pivot = T::zero();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = w.get(k, k).magnitude();
            for i in (k + 1)..=last {
                let v = w.get(i, k).magnitude();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if best == T::zero() || !best.finite() {
                return Err(Error::Singular(format!("zero pivot in banded LU at column {k}")));
            }
            if best < min_pivot {
                min_pivot = best;
            }
            if best > max_pivot {
                max_pivot = best;
            }
            let cend = (k + uw + 1).min(n);
            if p != k {
                for j in k..cend {
                    let a = w.get(k, j);
                    let b = w.get(p, j);
                    w.set(k, j, b);
                    w.set(p, j, a);
                }
            }
            let piv = w.get(k, k);
            for i in (k + 1)..=last {
                let lik = w.get(i, k) / piv;
                if kl > 0 {
                    mult[k * kl + (i - k - 1)] = lik;
                }
                w.set(i, k, T::zero());
                if lik != T::zero() {
                    for j in (k + 1)..cend {
                        let v = w.get(i, j) - lik * w.get(k, j);
                        w.set(i, j, v);
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            upper: w,
            mult,
            pivots,
            min_pivot,
            max_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of smallest to largest pivot magnitude; a crude conditioning
    /// indicator.
    pub fn pivot_ratio(&self) -> T {
        if self.max_pivot == T::zero() {
            T::zero()
        } else {
            self.min_pivot / self.max_pivot
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in (k + 1)..=last {
                let l = self.mult[k * kl + (i - k - 1)];
                if l != T::zero() {
                    let xk = x[k];
                    x[i] -= l * xk;
                }
            }
        }
        let uw = self.upper.ku;
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in (k + 1)..(k + uw + 1).min(n) {
                s -= self.upper.get(k, j) * x[j];
            }
            x[k] = s / self.upper.get(k, k);
        }
        x
    }

    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let kl = self.kl;
        let uw = self.upper.ku;
        let mut z = b.to_vec();
        // U^T z = b (forward substitution).
        for k in 0..n {
            let mut s = z[k];
            let lo = k.saturating_sub(uw);
            for j in lo..k {
                s -= self.upper.get(j, k) * z[j];
            }
            z[k] = s / self.upper.get(k, k);
        }
        for k in (0..n).rev() {
            let last = (k + kl).min(n - 1);
            let mut s = z[k];
            for i in (k + 1)..=last {
                s -= self.mult[k * kl + (i - k - 1)] * z[i];
            }
            z[k] = s;
            let p = self.pivots[k];
            if p != k {
                z.swap(k, p);
            }
        }
        z
    }
}

/// Smallest eigenvalue of a symmetric positive semidefinite band matrix via
/// shifted inverse iteration. Returns the eigenvalue and a unit eigenvector.
pub fn smallest_eigenpair_spd<T: Scalar>(a: &BandMatrix<T>, max_iter: usize, rel_tol: T) -> Result<(T, Vec<T>)> {
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    // Tiny shift keeps the factorization regular when the matrix is
    // numerically singular.
    let scale = a.norm_inf();
    let shift = scale * T::lit(1e-14);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted.add(i, i, shift);
    }
    let lu = BandedLu::factor(&shifted)?;
    // Deterministic start vector with components along every mode.
    let mut v: Vec<T> = (0..n)
        .map(|i| T::one() + T::lit(0.5) * (T::lit(0.7) * T::from_usize_lossy(i)).sin())
        .collect();
    normalize(&mut v);
    let mut lambda = rayleigh(a, &v);
    for _ in 0..max_iter {
        let mut w = lu.solve(&v);
        normalize(&mut w);
        let next = rayleigh(a, &w);
        v = w;
        let change = (next - lambda).magnitude();
        lambda = next;
        if change <= rel_tol * lambda.magnitude().max(T::lit(1e-300)) {
            break;
        }
    }
    Ok((lambda, v))
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = v.iter().fold(T::zero(), |a, &b| a + b * b).sqrt();
    if n > T::zero() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

fn rayleigh<T: Scalar>(a: &BandMatrix<T>, v: &[T]) -> T {
    let av = a.matvec(v);
    av.iter().zip(v).fold(T::zero(), |s, (&x, &y)| s + x * y)
}
