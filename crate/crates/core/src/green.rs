//! Dichotomy certificates and the Green-type bounded solution
//! `x = x1 - x2` with
//! `x1(t) = int_{-T_w}^t T(t,s) P(s) y(s) ds` and
//! `x2(t) = int_t^{T_w} T(t,s)|_Q Q(s) y(s) ds`.
//!
//! Norm-subscript convention for the dichotomy bounds:
//! `||T(t,s)P(s)x||_t <= D e^{-alpha(t-s)} ||x||_s` and
//! `||T(s,t)|_Q Q(t)x||_s <= D e^{-beta(t-s)} ||x||_t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::evolution::EvolutionFamily;
use crate::function_space::{validate_pair, Exponent, Grid, GridFunction};
use crate::linalg::{self, numerical_rank, restricted_solve, spectral_norm};
use crate::norm_family::NormFamily;
use crate::scalar::Scalar;

/// Relative singular-value threshold used for projection ranks.
pub const RANK_TOL: f64 = 1e-6;

/// Projections `P(t_i)` on a grid with rates and constant of a dichotomy.
/// A rate is `None` when its bundle is trivial (rank `0` or `n`), which makes
/// the matching bound vacuous.
#[derive(Clone, Debug)]
pub struct DichotomyCertificate<T: Scalar> {
    grid: Grid<T>,
    projections: Vec<DMatrix<T>>,
    alpha: Option<T>,
    beta: Option<T>,
    d: T,
    rank: usize,
    family: EvolutionFamily<T>,
    notes: Vec<String>,
}

impl<T: Scalar> DichotomyCertificate<T> {
    pub fn new(
        family: EvolutionFamily<T>,
        grid: Grid<T>,
        projections: Vec<DMatrix<T>>,
        alpha: Option<T>,
        beta: Option<T>,
        d: T,
    ) -> Result<Self> {
        let n = family.dim();
        if projections.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} projections for {} nodes",
                projections.len(),
                grid.len()
            )));
        }
        if !(d >= T::one()) || !d.finite() {
            return Err(Error::InvalidInput(format!("dichotomy constant D = {d} must be >= 1")));
        }
        let mut rank = None;
        for (i, p) in projections.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n || p.iter().any(|v| !v.finite()) {
                return Err(Error::InvalidInput(format!(
                    "projection {i} is not a finite {n}x{n} matrix"
                )));
            }
            let idem = spectral_norm(&(p * p - p));
            if idem > T::lit(1e-6) * T::one().max(spectral_norm(p)) {
                return Err(Error::InvalidInput(format!(
                    "projection at t = {} is not idempotent (residual {idem:e})",
                    grid.node(i)
                )));
            }
            let r = numerical_rank(p, T::lit(RANK_TOL));
            match rank {
                None => rank = Some(r),
                Some(r0) if r0 != r => {
                    return Err(Error::InvalidInput(format!(
                        "projection rank changes from {r0} to {r} at t = {}",
                        grid.node(i)
                    )))
                }
                _ => {}
            }
        }
        let rank = rank.unwrap_or(0);
        let alpha = if rank == 0 { None } else { alpha };
        let beta = if rank == n { None } else { beta };
        for (name, rate, needed) in [("alpha", alpha, rank > 0), ("beta", beta, rank < n)] {
            match rate {
                Some(r) if !(r > T::zero()) || !r.finite() => {
                    return Err(Error::InvalidInput(format!("rate {name} = {r} must be positive")))
                }
                None if needed => {
                    return Err(Error::InvalidInput(format!(
                        "rate {name} required for a nontrivial bundle"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self {
            grid,
            projections,
            alpha,
            beta,
            d,
            rank,
            family,
            notes: Vec::new(),
        })
    }

    /// Certificate from a known projection-valued function sampled on `grid`.
    pub fn analytic(
        family: EvolutionFamily<T>,
        grid: Grid<T>,
        projection: impl Fn(T) -> DMatrix<T>,
        alpha: Option<T>,
        beta: Option<T>,
        d: T,
    ) -> Result<Self> {
        let projections = grid.nodes().map(projection).collect();
        Self::new(family, grid, projections, alpha, beta, d)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn projections(&self) -> &[DMatrix<T>] {
        &self.projections
    }

    pub fn alpha(&self) -> Option<T> {
        self.alpha
    }

    pub fn beta(&self) -> Option<T> {
        self.beta
    }

    pub fn d(&self) -> T {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn family(&self) -> &EvolutionFamily<T> {
        &self.family
    }

    pub fn norms(&self) -> &NormFamily<T> {
        self.family.norms()
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// `P(t)`; off the grid the nearest node projection is transported by
    /// invariance, `P(t) = T(t,t_i) P(t_i) T(t_i,t)`.
    pub fn projection(&self, t: T) -> Result<DMatrix<T>> {
        if !t.finite() {
            return Err(Error::InvalidInput("non-finite time".into()));
        }
        let g = &self.grid;
        let x = ((t - g.t0()) / g.step()).round();
        let i = if x < T::zero() {
            0
        } else {
            (x.to_f64_lossy() as usize).min(g.len() - 1)
        };
        let ti = g.node(i);
        if (t - ti).magnitude() <= T::lit(1e-9) * g.step() {
            return Ok(self.projections[i].clone());
        }
        let fwd = self.family.transition(t, ti)?;
        let back = self.family.transition(ti, t)?;
        Ok(fwd * &self.projections[i] * back)
    }

    /// Checks the certificate invariants on sampled pairs `(t, tau)`, `t >= tau`.
    pub fn verify(&self, pairs: &[(T, T)]) -> Result<CertificateCheck<T>> {
        let idempotency = self
            .projections
            .iter()
            .map(|p| spectral_norm(&(p * p - p)))
            .fold(T::zero(), |a, b| a.max(b));
        let norms = self.norms();
        let mut check = CertificateCheck {
            idempotency,
            invariance: T::zero(),
            stable_excess: T::zero(),
            unstable_excess: T::zero(),
            worst_pair: None,
        };
        for &(t, tau) in pairs {
            let phi = self.family.propagator(t, tau)?;
            let pt = self.projection(t)?;
            let ptau = self.projection(tau)?;
            let inv = spectral_norm(&(&pt * &phi - &phi * &ptau));
            if inv > check.invariance {
                check.invariance = inv;
                check.worst_pair = Some((t, tau));
            }
            if let Some(a) = self.alpha {
                let lhs = norms.operator_norm(t, tau, &(&phi * &ptau))?;
                let bound = self.d * (-(a * (t - tau))).exp();
                check.stable_excess = check.stable_excess.max(lhs / bound - T::one());
            }
            if let Some(b) = self.beta {
                let (back, _) = unstable_inverse(&phi, &ptau, &pt, self.rank)?;
                let lhs = norms.operator_norm(tau, t, &back)?;
                let bound = self.d * (-(b * (t - tau))).exp();
                check.unstable_excess = check.unstable_excess.max(lhs / bound - T::one());
            }
        }
        Ok(check)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "dim": self.dim(),
            "rank": self.rank,
            "alpha": self.alpha.map(|a| a.to_f64_lossy()),
            "beta": self.beta.map(|b| b.to_f64_lossy()),
            "d": self.d.to_f64_lossy(),
            "grid": {
                "t0": self.grid.t0().to_f64_lossy(),
                "h": self.grid.step().to_f64_lossy(),
                "len": self.grid.len(),
            },
            "notes": self.notes,
        })
    }

    /// `t, p11, p12, .., pnn` (row-major) per node.
    pub fn projections_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::from("t");
        for i in 1..=n {
            for j in 1..=n {
                out.push_str(&format!(",p{i}{j}"));
            }
        }
        out.push('\n');
        for (k, p) in self.projections.iter().enumerate() {
            out.push_str(&format!("{:.16e}", self.grid.node(k)));
            for i in 0..n {
                for j in 0..n {
                    out.push_str(&format!(",{:.16e}", p[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of [`DichotomyCertificate::verify`]. Excess values are relative:
/// `lhs / bound - 1`, so nonpositive means the bound holds.
#[derive(Clone, Copy, Debug)]
pub struct CertificateCheck<T: Scalar> {
    pub idempotency: T,
    pub invariance: T,
    pub stable_excess: T,
    pub unstable_excess: T,
    pub worst_pair: Option<(T, T)>,
}

impl<T: Scalar> CertificateCheck<T> {
    pub fn holds(&self, invariance_tol: T, bound_tol: T) -> bool {
        self.invariance <= invariance_tol && self.stable_excess <= bound_tol && self.unstable_excess <= bound_tol
    }
}

/// Orthonormal basis of the dominant `k`-dimensional column space.
pub(crate) fn dominant_basis<T: Scalar>(m: &DMatrix<T>, k: usize) -> DMatrix<T> {
    let n = m.nrows();
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = DMatrix::zeros(n, k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// `T(tau,t)|_Q Q(t)` from `phi = T(t,tau)`, realized by least squares on an
/// orthonormal basis of `range Q(tau)`. Returns the matrix and the smallest
/// singular value of the restricted map.
pub(crate) fn unstable_inverse<T: Scalar>(
    phi: &DMatrix<T>,
    p_tau: &DMatrix<T>,
    p_t: &DMatrix<T>,
    rank: usize,
) -> Result<(DMatrix<T>, T)> {
    let n = phi.nrows();
    let id = DMatrix::identity(n, n);
    let basis = dominant_basis(&(&id - p_tau), n - rank);
    if basis.ncols() == 0 {
        return Ok((DMatrix::zeros(n, n), T::infinity()));
    }
    let restricted = phi * &basis;
    let smin = linalg::smallest_singular_value(&restricted);
    let pinv = restricted
        .pseudo_inverse(T::zero())
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok((basis * pinv * (id - p_t), smin))
}

/// Green-type solution with its stable and unstable parts.
#[derive(Clone, Debug)]
pub struct GreenSolution<T: Scalar> {
    pub x: GridFunction<T>,
    /// `x1`, the forward integral over the stable bundle.
    pub stable: GridFunction<T>,
    /// `x2`, the backward integral over the unstable bundle (`x = x1 - x2`).
    pub unstable: GridFunction<T>,
    /// `D e^{-r m}` with `r` the smallest rate and `m` the distance from the
    /// support of `y` to the window ends.
    pub tail_factor: T,
    pub warning: Option<String>,
}

/// Solves for the bounded solution with the certificate's projections by
/// trapezoid recursions:
/// `x1_{j+1} = T_j x1_j + h/2 (T_j P_j y_j+ + P_{j+1} y_{j+1}-)`, `x1_0 = 0`;
/// `x2_j = S_j x2_{j+1} + h/2 (Q_j y_j+ + S_j Q_{j+1} y_{j+1}-)`, `x2_N = 0`,
/// where `S_j` inverts `T_j` on the unstable bundle.
pub fn green_solve<T: Scalar>(cert: &DichotomyCertificate<T>, y: &GridFunction<T>) -> Result<GreenSolution<T>> {
    let n = cert.dim();
    if y.dim() != n {
        return Err(Error::GridMismatch(format!("input dimension {} != {n}", y.dim())));
    }
    let grid = *y.grid();
    let family = cert.family();
    let cells = family.cell_propagators(&grid)?;
    let proj: Vec<DMatrix<T>> = (0..grid.len())
        .into_par_iter()
        .map(|i| cert.projection(grid.node(i)))
        .collect::<Result<_>>()?;
    let id = DMatrix::identity(n, n);
    let qs: Vec<DMatrix<T>> = proj.iter().map(|p| &id - p).collect();
    let half = grid.step() * T::lit(0.5);

    let mut x1 = vec![DVector::zeros(n); grid.len()];
    for j in 0..grid.cells() {
        let phi = &cells[j];
        x1[j + 1] = phi * &x1[j] + (phi * (&proj[j] * y.right_value(j)) + &proj[j + 1] * y.value(j + 1)) * half;
    }

    let mut x2 = vec![DVector::zeros(n); grid.len()];
    let unstable_dim = n - cert.rank();
    if unstable_dim > 0 {
        let bases: Vec<DMatrix<T>> = qs.iter().map(|q| dominant_basis(q, unstable_dim)).collect();
        for j in (0..grid.cells()).rev() {
            let phi = &cells[j];
            let target = &x2[j + 1] + &qs[j + 1] * y.value(j + 1) * half;
            let (back, smin) = restricted_solve(phi, &bases[j], &target);
            if smin < T::lit(1e-10) * T::one().max(spectral_norm(phi)) {
                return Err(Error::SingularBundle {
                    t: grid.node(j).to_f64_lossy(),
                    sigma_min: smin.to_f64_lossy(),
                });
            }
            x2[j] = back + &qs[j] * y.right_value(j) * half;
        }
    }

    let x: Vec<DVector<T>> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
    let (tail_factor, warning) = truncation(cert, y);
    Ok(GreenSolution {
        x: GridFunction::new(grid, x)?,
        stable: GridFunction::new(grid, x1)?,
        unstable: GridFunction::new(grid, x2)?,
        tail_factor,
        warning,
    })
}

fn truncation<T: Scalar>(cert: &DichotomyCertificate<T>, y: &GridFunction<T>) -> (T, Option<String>) {
    let grid = y.grid();
    let nonzero = |i: usize| y.value(i).norm() > T::zero() || y.right_value(i).norm() > T::zero();
    let first = (0..grid.len()).find(|&i| nonzero(i));
    let last = (0..grid.len()).rev().find(|&i| nonzero(i));
    let (Some(first), Some(last)) = (first, last) else {
        return (T::zero(), None);
    };
    let margin = (grid.node(first) - grid.t0()).min(grid.end() - grid.node(last));
    let rate = [cert.alpha(), cert.beta()]
        .into_iter()
        .flatten()
        .fold(T::infinity(), |a, b| a.min(b));
    if !rate.finite() {
        return (T::zero(), None);
    }
    let tail = cert.d() * (-(rate * margin)).exp();
    let needed = T::lit(10.0) / rate;
    let warning = (margin < needed)
        .then(|| format!("input support reaches within {margin} of the window edge; decay margin needs {needed}"));
    (tail, warning)
}

/// `B_inf` and `B_p` from the forward theorem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolutionBounds<T: Scalar> {
    pub b_inf: T,
    pub b_p: T,
    /// Young exponent `r` with `1/r = 1 + 1/p - 1/q`; `None` when `r = inf`.
    pub r: Option<T>,
}

/// `B_inf = D/(1-e^{-alpha}) + D/(1-e^{-beta})` and
/// `B_p = D/(alpha r)^{1/r} + D/(beta r)^{1/r}`; vacuous bundles contribute 0.
pub fn dichotomy_solution_bounds<T: Scalar>(
    cert: &DichotomyCertificate<T>,
    p: Exponent<T>,
    q: Exponent<T>,
) -> Result<SolutionBounds<T>> {
    bounds_from_rates(cert.d(), cert.alpha(), cert.beta(), p, q)
}

pub fn bounds_from_rates<T: Scalar>(
    d: T,
    alpha: Option<T>,
    beta: Option<T>,
    p: Exponent<T>,
    q: Exponent<T>,
) -> Result<SolutionBounds<T>> {
    validate_pair(p, q)?;
    let rates: Vec<T> = [alpha, beta].into_iter().flatten().collect();
    let b_inf = rates
        .iter()
        .fold(T::zero(), |acc, &a| acc + d / (T::one() - (-a).exp()));
    let inv_r = T::one() + p.reciprocal() - q.reciprocal();
    if inv_r <= T::zero() {
        return Ok(SolutionBounds {
            b_inf,
            b_p: b_inf,
            r: None,
        });
    }
    let r = T::one() / inv_r;
    let b_p = rates.iter().fold(T::zero(), |acc, &a| acc + young_term(d, a, r));
    Ok(SolutionBounds { b_inf, b_p, r: Some(r) })
}

/// `D / (rate r)^{1/r}`, the `L^r` norm of `D e^{-rate s}` on `s >= 0`.
pub fn young_term<T: Scalar>(d: T, rate: T, r: T) -> T {
    d / (rate * r).powf(T::one() / r)
}
