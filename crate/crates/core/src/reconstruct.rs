//! Converse direction: from a bounded-solution operator to projections,
//! rates and a dichotomy certificate.
//!
//! `P(tau)x = v(tau) + x` where `v` is the bounded solution for the input
//! `g = 1_[tau, tau+1] T(., tau)x`. Conservative constants follow the doubling
//! argument; the rates installed in certificates are fitted.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use crate::admissibility::{
    check_admissibility, AdmissibilityConfig, AdmissibilityReport, Boundary, BoundedSolver, Verdict,
};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionFamily, GrowthBound, GrowthSampling, PropagatorCache};
use crate::function_space::{Exponent, Grid, GridFunction};
use crate::green::{unstable_inverse, DichotomyCertificate, RANK_TOL};
use crate::linalg::{linear_fit, numerical_rank, orthonormal_range, spectral_norm};
use crate::scalar::Scalar;

/// Note attached to every reconstructed certificate.
pub const SURROGATE_NOTE: &str =
    "unstable bundle is the finite-window surrogate: backward extensions exist only inside the window";

/// Stable and unstable subspaces at one time.
#[derive(Clone, Debug)]
pub struct SubspacePair<T: Scalar> {
    pub tau: T,
    /// Orthonormal basis of `range P(tau)`.
    pub stable: DMatrix<T>,
    /// Orthonormal basis of `ker P(tau)`.
    pub unstable: DMatrix<T>,
    /// Smallest principal angle between the two subspaces, radians.
    pub min_angle: T,
}

impl<T: Scalar> SubspacePair<T> {
    pub fn from_projection(tau: T, p: &DMatrix<T>) -> Self {
        let n = p.nrows();
        let stable = orthonormal_range(p, T::lit(RANK_TOL));
        let unstable = orthonormal_range(&(DMatrix::identity(n, n) - p), T::lit(RANK_TOL));
        let min_angle = if stable.ncols() == 0 || unstable.ncols() == 0 {
            T::FRAC_PI_2()
        } else {
            let cos = spectral_norm(&(stable.transpose() * &unstable)).min(T::one());
            cos.acos()
        };
        Self {
            tau,
            stable,
            unstable,
            min_angle,
        }
    }

    /// The two bases together span the whole space.
    pub fn is_complementary(&self, min_angle: T) -> bool {
        self.stable.ncols() + self.unstable.ncols() == self.stable.nrows() && self.min_angle > min_angle
    }
}

/// Outcome of [`stable_membership`].
#[derive(Clone, Copy, Debug)]
pub struct Membership<T: Scalar> {
    pub member: bool,
    /// `sup ||T(t,tau)x||_t` over `[tau, tau + horizon]`.
    pub sup: T,
    /// Same over `[tau, tau + 2 horizon]`.
    pub sup_doubled: T,
    /// `L^p` norm of the forward orbit over `[tau, tau + horizon]`.
    pub tail_norm: T,
    pub overflow: bool,
}

/// Forward-boundedness test for `x` at `tau`: member when the orbit supremum
/// does not grow as the horizon doubles (relative slack `1e-3`).
pub fn stable_membership<T: Scalar>(
    family: &EvolutionFamily<T>,
    tau: T,
    x: &DVector<T>,
    horizon: T,
    p: Exponent<T>,
) -> Result<Membership<T>> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidInput("membership horizon must be positive".into()));
    }
    let steps = 400;
    let h = horizon / T::from_usize_lossy(steps);
    let grid = Grid::new(tau, h, 2 * steps + 1)?;
    let overflow = |sup| Membership {
        member: false,
        sup,
        sup_doubled: T::infinity(),
        tail_norm: T::infinity(),
        overflow: true,
    };
    let cells = match family.cell_propagators(&grid) {
        Ok(c) => c,
        Err(Error::WindowTooLarge(_)) => return Ok(overflow(T::infinity())),
        Err(e) => return Err(e),
    };
    let norms = family.norms();
    let mut orbit = Vec::with_capacity(grid.len());
    orbit.push(x.clone());
    for c in &cells {
        let next = c * orbit.last().expect("nonempty orbit");
        if next.iter().any(|v| !v.finite()) {
            return Ok(overflow(T::infinity()));
        }
        orbit.push(next);
    }
    let mut sup = T::zero();
    let mut sup_doubled = T::zero();
    for (i, v) in orbit.iter().enumerate() {
        let nv = norms.norm_at(grid.node(i), v)?;
        if !nv.finite() {
            return Ok(overflow(sup));
        }
        if i <= steps {
            sup = sup.max(nv);
        }
        sup_doubled = sup_doubled.max(nv);
    }
    let first = Grid::new(tau, h, steps + 1)?;
    let tail = GridFunction::new(first, orbit[..=steps].to_vec())?;
    Ok(Membership {
        member: sup_doubled <= sup * T::lit(1.0 + 1e-3),
        sup,
        sup_doubled,
        tail_norm: tail.lp_norm(norms, p)?,
        overflow: false,
    })
}

/// `P(tau)` from `n` bounded solves with inputs `1_[tau,tau+1] T(.,tau)e_j`.
/// `tau` and `tau + 1` must be grid nodes.
pub fn projection_at<T: Scalar>(solver: &BoundedSolver<T>, tau: T) -> Result<DMatrix<T>> {
    let grid = *solver.grid();
    let m = (T::one() / grid.step()).round();
    if (m * grid.step() - T::one()).magnitude() > T::lit(1e-9) {
        return Err(Error::InvalidGrid("grid step must divide 1".into()));
    }
    let m = m.to_f64_lossy() as usize;
    let i = grid
        .index_of(tau)
        .ok_or_else(|| Error::InvalidInput(format!("tau = {tau} is not a grid node")))?;
    if i + m >= grid.len() {
        return Err(Error::InvalidInput(format!(
            "tau + 1 = {} leaves the window",
            tau + T::one()
        )));
    }
    let cells = solver.operator().cells();
    let n = solver.operator().dim();
    let mut p = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = T::one();
        let mut values = vec![DVector::zeros(n); grid.len()];
        let mut cur = e.clone();
        for k in i..i + m {
            cur = &cells[k] * cur;
            values[k + 1] = cur.clone();
        }
        let mut g = GridFunction::new(grid, values)?;
        g.set_right_limit(i, e.clone())?;
        g.set_right_limit(i + m, DVector::zeros(n))?;
        let v = solver.solve(&g)?;
        p.set_column(j, &(v.value(i) + e));
    }
    Ok(p)
}

/// `M = K^2 e^{2c} ||G|| + 1`.
pub fn projection_bound<T: Scalar>(g_norm: T, k: T, c: T) -> T {
    k * k * (T::lit(2.0) * c).exp() * g_norm + T::one()
}

/// Constants of the doubling argument.
#[derive(Clone, Copy, Debug)]
pub struct ConservativeRates<T: Scalar> {
    /// `theta = 1 - 1/q + 1/p`.
    pub theta: T,
    /// `C = 2K e^c ||G||`.
    pub c_const: T,
    /// `T = (4K e^c ||G||^2)^{1/theta}`.
    pub doubling_time: T,
    /// `lambda = ln 2 / T`.
    pub lambda: T,
    /// `D = 2C`.
    pub d: T,
}

pub fn doubling_time_and_rates<T: Scalar>(
    g_norm: T,
    k: T,
    c: T,
    p: Exponent<T>,
    q: Exponent<T>,
) -> Result<ConservativeRates<T>> {
    let theta = T::one() - q.reciprocal() + p.reciprocal();
    if !(theta > T::zero()) {
        return Err(Error::ExcludedPair);
    }
    let kc = k * c.exp();
    let c_const = T::lit(2.0) * kc * g_norm;
    let doubling_time = (T::lit(4.0) * kc * g_norm * g_norm).powf(T::one() / theta);
    Ok(ConservativeRates {
        theta,
        c_const,
        doubling_time,
        lambda: T::LN_2() / doubling_time,
        d: T::lit(2.0) * c_const,
    })
}

/// Rates from log-linear fits of the sampled bundle propagators.
#[derive(Clone, Copy, Debug)]
pub struct FittedRates<T: Scalar> {
    pub alpha_hat: Option<T>,
    pub beta_hat: Option<T>,
    /// Worst observed ratio against the fitted exponentials, at least 1.
    pub d_hat: T,
}

/// `(lag, log stable, log unstable)` for one sample.
type LagSample<T> = (usize, Option<T>, Option<T>);

/// Fitted rate with every `(lag, log norm)` sample behind it.
type RateFit<T> = (T, Vec<(T, T)>);

/// Fits `alpha` from `max_tau log ||T(tau+l,tau)P(tau)||` and `beta` from
/// `max_tau log ||T(tau,tau+l)|_Q Q(tau+l)||` against the lag `l`.
///
/// `nodes` are indices into the cache grid carrying `projections`, and
/// `lag_steps` the lags in cache cells.
pub fn fit_rates<T: Scalar>(
    family: &EvolutionFamily<T>,
    cache: &PropagatorCache<T>,
    nodes: &[usize],
    projections: &[DMatrix<T>],
    rank: usize,
    lag_steps: &[usize],
) -> Result<FittedRates<T>> {
    let n = family.dim();
    let norms = family.norms();
    let grid = *cache.grid();
    let h = grid.step();
    let slot = |idx: usize| nodes.binary_search(&idx).ok();
    let max_lag = lag_steps.iter().copied().max().unwrap_or(0);
    let samples: Vec<Vec<LagSample<T>>> = nodes
        .par_iter()
        .enumerate()
        .filter(|(_, &i)| i + max_lag <= *nodes.last().expect("nonempty nodes"))
        .map(|(a, &i)| {
            let mut out = Vec::new();
            let mut phi = DMatrix::identity(n, n);
            let mut at = i;
            let ptau = &projections[a];
            for &lag in lag_steps {
                phi = cache.between(i + lag, at)? * phi;
                at = i + lag;
                let Some(b) = slot(i + lag) else { continue };
                let (t, tau) = (grid.node(i + lag), grid.node(i));
                let stable = if rank > 0 {
                    Some(norms.operator_norm(t, tau, &(&phi * ptau))?.ln())
                } else {
                    None
                };
                let unstable = if rank < n {
                    let (back, _) = unstable_inverse(&phi, ptau, &projections[b], rank)?;
                    Some(norms.operator_norm(tau, t, &back)?.ln())
                } else {
                    None
                };
                out.push((lag, stable, unstable));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<LagSample<T>> = samples.into_iter().flatten().collect();
    if flat.is_empty() {
        return Err(Error::Certification("window too short for rate fits".into()));
    }
    let fit = |pick: &dyn Fn(&LagSample<T>) -> Option<T>| -> Result<Option<RateFit<T>>> {
        let mut by_lag: Vec<(T, T)> = Vec::new();
        let mut all = Vec::new();
        for &lag in lag_steps {
            let vals: Vec<T> = flat.iter().filter(|s| s.0 == lag).filter_map(pick).collect();
            if vals.is_empty() {
                continue;
            }
            let l = T::from_usize_lossy(lag) * h;
            by_lag.push((l, vals.iter().copied().fold(-T::infinity(), |a, b| a.max(b))));
            all.extend(vals.into_iter().map(|v| (l, v)));
        }
        if by_lag.is_empty() {
            return Ok(None);
        }
        let xs: Vec<T> = by_lag.iter().map(|s| s.0).collect();
        let ys: Vec<T> = by_lag.iter().map(|s| s.1).collect();
        let (_, slope) = linear_fit(&xs, &ys)?;
        Ok(Some((-slope, all)))
    };
    let mut d_hat = T::one();
    let mut rate = |r: Option<RateFit<T>>, name: &str| -> Result<Option<T>> {
        let Some((rate, all)) = r else { return Ok(None) };
        if !(rate > T::zero()) {
            return Err(Error::Certification(format!(
                "no exponential {name} on sampled lags (fit {rate})"
            )));
        }
        for (l, v) in all {
            d_hat = d_hat.max((v + rate * l).exp());
        }
        Ok(Some(rate))
    };
    let alpha_hat = rate(fit(&|s| s.1)?, "decay")?;
    let beta_hat = rate(fit(&|s| s.2)?, "expansion")?;
    Ok(FittedRates {
        alpha_hat,
        beta_hat,
        d_hat,
    })
}

/// Tuning for [`certify_dichotomy`].
#[derive(Clone, Debug)]
pub struct ReconstructConfig<T: Scalar> {
    pub admissibility: AdmissibilityConfig<T>,
    /// Certificate node spacing in grid cells.
    pub stride: usize,
    /// Distance kept from both window edges (beyond the unit test interval).
    pub margin: T,
    /// Invariance tolerance; `None` selects `1e-6` for closed-form families
    /// and `10 h^2` for integrated ones.
    pub invariance_tol: Option<T>,
    /// Largest lag of the rate fits.
    pub fit_horizon: T,
    pub fit_lags: usize,
    /// Slack for the projection bound and growth lemma checks.
    pub bound_tol: T,
}

impl<T: Scalar> Default for ReconstructConfig<T> {
    fn default() -> Self {
        Self {
            admissibility: AdmissibilityConfig::default(),
            stride: 10,
            margin: T::lit(2.0),
            invariance_tol: None,
            fit_horizon: T::lit(4.0),
            fit_lags: 8,
            bound_tol: T::lit(1e-6),
        }
    }
}

/// Certificate together with the diagnostics of its construction.
#[derive(Clone, Debug)]
pub struct Reconstruction<T: Scalar> {
    pub certificate: DichotomyCertificate<T>,
    pub admissibility: AdmissibilityReport<T>,
    pub growth: GrowthBound<T>,
    pub g_norm: T,
    pub conservative: ConservativeRates<T>,
    pub fitted: FittedRates<T>,
    /// `M = K^2 e^{2c} ||G|| + 1`.
    pub projection_bound: T,
    pub max_projection_norm: T,
    pub projection_bound_holds: bool,
    pub idempotency: T,
    /// Largest `||P(t)T(t,tau) - T(t,tau)P(tau)|| / ||T(t,tau)||`.
    pub invariance: T,
    pub invariance_tol: T,
    /// Largest `||P(t) T(t,tau) B|| / ||T(t,tau) B||` over unstable bases `B`.
    pub unstable_roundtrip: T,
    pub min_angle: T,
    /// Worst `D e^{-lambda l} ||T Q x||_t / ||Q x||_tau`; at least 1 when the
    /// growth conclusion holds.
    pub growth_lemma_margin: Option<T>,
    pub growth_lemma_holds: bool,
}

impl<T: Scalar> Reconstruction<T> {
    pub fn to_json(&self) -> serde_json::Value {
        let f = |x: T| x.to_f64_lossy();
        json!({
            "certificate": self.certificate.to_json(),
            "growth": { "k": f(self.growth.k), "c": f(self.growth.c) },
            "g_norm": f(self.g_norm),
            "conservative": {
                "theta": f(self.conservative.theta),
                "C": f(self.conservative.c_const),
                "T": f(self.conservative.doubling_time),
                "lambda": f(self.conservative.lambda),
                "D": f(self.conservative.d),
            },
            "fitted": {
                "alpha_hat": self.fitted.alpha_hat.map(f),
                "beta_hat": self.fitted.beta_hat.map(f),
                "D_hat": f(self.fitted.d_hat),
            },
            "projection_bound": f(self.projection_bound),
            "max_projection_norm": f(self.max_projection_norm),
            "projection_bound_holds": self.projection_bound_holds,
            "idempotency": f(self.idempotency),
            "invariance": f(self.invariance),
            "invariance_tol": f(self.invariance_tol),
            "unstable_roundtrip": f(self.unstable_roundtrip),
            "min_angle": f(self.min_angle),
            "growth_lemma_margin": self.growth_lemma_margin.map(f),
            "growth_lemma_holds": self.growth_lemma_holds,
            "unstable_checks_vacuous": self.certificate.rank() == self.certificate.dim(),
            "stable_checks_vacuous": self.certificate.rank() == 0,
        })
    }
}

/// Admissibility check, projections on interior nodes, invariance and rank
/// checks, fitted rates and conservative constants.
pub fn certify_dichotomy<T: Scalar>(
    family: &EvolutionFamily<T>,
    p: Exponent<T>,
    q: Exponent<T>,
    config: &ReconstructConfig<T>,
) -> Result<Reconstruction<T>> {
    if p.is_infinite() && q.reciprocal() == T::one() {
        return Err(Error::ExcludedPair);
    }
    let report = check_admissibility(family, p, q, &config.admissibility)?;
    certify_from_report(family, report, config)
}

/// [`certify_dichotomy`] for an already computed admissibility report.
pub fn certify_from_report<T: Scalar>(
    family: &EvolutionFamily<T>,
    report: AdmissibilityReport<T>,
    config: &ReconstructConfig<T>,
) -> Result<Reconstruction<T>> {
    let (p, q) = (report.p, report.q);
    if p.is_infinite() && q.reciprocal() == T::one() {
        return Err(Error::ExcludedPair);
    }
    let acfg = &config.admissibility;
    if report.verdict != Verdict::Admissible {
        return Err(Error::Precondition(format!(
            "admissibility verdict is {}",
            report.verdict.as_str()
        )));
    }
    let g_norm = report.g_norm_estimate().expect("admissible reports carry ||G||");
    let grid = Grid::window(acfg.half_width, acfg.h)?;
    let solver = BoundedSolver::new(family, grid, Boundary::Projected, acfg.horizon)?;
    let cache = family.cache(&grid)?;
    let h = grid.step();
    let n = family.dim();

    let stride = config.stride.max(1);
    let first = ((config.margin / h).ceil().to_f64_lossy() as usize).min(grid.len() - 1);
    let unit = (T::one() / h).round().to_f64_lossy() as usize;
    let last = (grid.len() - 1).saturating_sub(first + unit);
    if last <= first {
        return Err(Error::InvalidInput("window too small for the requested margin".into()));
    }
    let nodes: Vec<usize> = (first..=last).step_by(stride).collect();
    let projections: Vec<DMatrix<T>> = nodes
        .par_iter()
        .map(|&i| projection_at(&solver, grid.node(i)))
        .collect::<Result<_>>()?;

    let ranks: Vec<usize> = projections
        .iter()
        .map(|p| numerical_rank(p, T::lit(RANK_TOL)))
        .collect();
    let rank = ranks[0];
    if let Some(k) = ranks.iter().position(|&r| r != rank) {
        return Err(Error::Certification(format!(
            "projection rank changes from {rank} to {} at t = {}",
            ranks[k],
            grid.node(nodes[k])
        )));
    }
    let idempotency = projections
        .iter()
        .map(|p| spectral_norm(&(p * p - p)))
        .fold(T::zero(), |a, b| a.max(b));

    let invariance_tol = config.invariance_tol.unwrap_or(if family.system().is_closed_form() {
        T::lit(1e-6)
    } else {
        T::lit(10.0) * h * h
    });
    let long = (unit / stride).max(1);
    let mut pairs: Vec<(usize, usize)> = (0..nodes.len() - 1).map(|a| (a, a + 1)).collect();
    pairs.extend(
        (0..nodes.len().saturating_sub(long))
            .step_by(long)
            .map(|a| (a, a + long)),
    );
    let checks: Vec<(T, T, usize, usize)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let phi = cache.between(nodes[b], nodes[a])?;
            let scale = spectral_norm(&phi).max(T::lit(1e-300));
            let inv = spectral_norm(&(&projections[b] * &phi - &phi * &projections[a])) / scale;
            let basis = orthonormal_range(&(DMatrix::identity(n, n) - &projections[a]), T::lit(RANK_TOL));
            let round = if basis.ncols() == 0 {
                T::zero()
            } else {
                let image = &phi * basis;
                spectral_norm(&(&projections[b] * &image)) / spectral_norm(&image).max(T::lit(1e-300))
            };
            Ok((inv, round, a, b))
        })
        .collect::<Result<_>>()?;
    let mut invariance = T::zero();
    let mut unstable_roundtrip = T::zero();
    for &(inv, round, a, b) in &checks {
        if inv > invariance_tol {
            return Err(Error::Certification(format!(
                "invariance residual {inv:e} at (t, tau) = ({}, {})",
                grid.node(nodes[b]),
                grid.node(nodes[a])
            )));
        }
        invariance = invariance.max(inv);
        unstable_roundtrip = unstable_roundtrip.max(round);
    }
    let min_angle = nodes
        .iter()
        .zip(&projections)
        .map(|(&i, p)| SubspacePair::from_projection(grid.node(i), p).min_angle)
        .fold(T::FRAC_PI_2(), |a, b| a.min(b));

    let lag_total = ((config.fit_horizon / h).round().to_f64_lossy() as usize).min(nodes[nodes.len() - 1] - nodes[0]);
    let per = (lag_total / config.fit_lags.max(1) / stride).max(1) * stride;
    let lag_steps: Vec<usize> = (1..=config.fit_lags)
        .map(|k| k * per)
        .filter(|&l| l <= lag_total)
        .collect();
    let fitted = fit_rates(family, &cache, &nodes, &projections, rank, &lag_steps)?;

    let growth = match family.growth() {
        Some(g) => g,
        None => family.estimate_growth_bound(&GrowthSampling::uniform(
            grid.t0(),
            grid.end(),
            9,
            T::lit(3.0).min(grid.end() - grid.t0()),
            7,
        ))?,
    };
    let conservative = doubling_time_and_rates(g_norm, growth.k, growth.c, p, q)?;
    let bound = projection_bound(g_norm, growth.k, growth.c);
    let norms = family.norms();
    let mut max_projection_norm = T::zero();
    for (&i, pr) in nodes.iter().zip(&projections) {
        let t = grid.node(i);
        max_projection_norm = max_projection_norm.max(norms.operator_norm(t, t, pr)?);
    }

    let mut growth_lemma_margin: Option<T> = None;
    if rank < n {
        for (a, &i) in nodes.iter().enumerate() {
            let basis = orthonormal_range(&(DMatrix::identity(n, n) - &projections[a]), T::lit(RANK_TOL));
            for &lag in &lag_steps {
                if i + lag >= grid.len() {
                    continue;
                }
                let phi = cache.between(i + lag, i)?;
                let (t, tau) = (grid.node(i + lag), grid.node(i));
                for col in basis.column_iter() {
                    let x = col.into_owned();
                    let ratio = norms.norm_at(t, &(&phi * &x))? / norms.norm_at(tau, &x)?;
                    let m = conservative.d * ratio * (-(conservative.lambda * (t - tau))).exp();
                    growth_lemma_margin = Some(growth_lemma_margin.map_or(m, |g| g.min(m)));
                }
            }
        }
    }
    let growth_lemma_holds = growth_lemma_margin.is_none_or(|m| m >= T::one() - config.bound_tol);

    let cert_grid = Grid::new(grid.node(nodes[0]), h * T::from_usize_lossy(stride), nodes.len())?;
    let certificate = DichotomyCertificate::new(
        family.clone(),
        cert_grid,
        projections,
        fitted.alpha_hat,
        fitted.beta_hat,
        fitted.d_hat,
    )?
    .with_note(SURROGATE_NOTE);
    Ok(Reconstruction {
        certificate,
        admissibility: report,
        growth,
        g_norm,
        conservative,
        fitted,
        projection_bound: bound,
        max_projection_norm,
        projection_bound_holds: max_projection_norm <= bound * (T::one() + config.bound_tol),
        idempotency,
        invariance,
        invariance_tol,
        unstable_roundtrip,
        min_angle,
        growth_lemma_margin,
        growth_lemma_holds,
    })
}

/// Largest `||P_a(t) - P_b(t)||` over the nodes of `a`.
pub fn projection_discrepancy<T: Scalar>(a: &DichotomyCertificate<T>, b: &DichotomyCertificate<T>) -> Result<T> {
    let mut worst = T::zero();
    for (i, pa) in a.projections().iter().enumerate() {
        let pb = b.projection(a.grid().node(i))?;
        worst = worst.max(spectral_norm(&(pa - pb)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::System;
    use approx::assert_relative_eq;

    fn fam(system: System<f64>) -> EvolutionFamily<f64> {
        EvolutionFamily::new(system, 1e-3).unwrap()
    }

    fn small_config() -> ReconstructConfig<f64> {
        ReconstructConfig {
            admissibility: AdmissibilityConfig {
                half_width: 10.0,
                h: 0.02,
                probes: 6,
                ..Default::default()
            },
            stride: 25,
            ..Default::default()
        }
    }

    #[test]
    fn membership_examples() {
        let two = Exponent::finite(2.0).unwrap();
        let m = stable_membership(
            &fam(System::Scalar { rate: -1.0 }),
            0.0,
            &DVector::from_element(1, 3.0),
            5.0,
            two,
        )
        .unwrap();
        assert!(m.member);
        assert_relative_eq!(m.sup, 3.0, epsilon = 1e-12);
        let saddle = fam(System::Diagonal { rates: vec![-1.0, 1.0] });
        let m = stable_membership(&saddle, 0.0, &DVector::from_vec(vec![0.0, 1.0]), 5.0, two).unwrap();
        assert!(!m.member);
        let m = stable_membership(&saddle, 0.0, &DVector::zeros(2), 5.0, two).unwrap();
        assert!(m.member && m.sup == 0.0);
        let m = stable_membership(
            &fam(System::Scalar { rate: 5.0 }),
            0.0,
            &DVector::from_element(1, 1.0),
            100.0,
            two,
        )
        .unwrap();
        assert!(!m.member && m.overflow);
    }

    #[test]
    fn projection_examples() {
        let grid = Grid::window(10.0, 0.01).unwrap();
        for (rate, expected) in [(-1.0, 1.0), (1.0, 0.0)] {
            let s = BoundedSolver::new(&fam(System::Scalar { rate }), grid, Boundary::Projected, 10.0).unwrap();
            let p = projection_at(&s, 0.0).unwrap();
            assert!((p[(0, 0)] - expected).abs() < 1e-4, "rate {rate}: {p}");
        }
        let s = BoundedSolver::new(
            &fam(System::Diagonal { rates: vec![-1.0, 1.0] }),
            grid,
            Boundary::Projected,
            10.0,
        )
        .unwrap();
        let p = projection_at(&s, 2.0).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(spectral_norm(&(p - expected)) < 1e-4);
        assert!(projection_at(&s, 9.5).is_err());
    }

    #[test]
    fn constant_formulas() {
        assert_relative_eq!(projection_bound(1.0, 1.0, 0.0), 2.0);
        assert_relative_eq!(
            projection_bound(1.0, 1.0, 1.0),
            1f64.exp().powi(2) + 1.0,
            epsilon = 1e-12
        );
        let two = Exponent::finite(2.0).unwrap();
        let r = doubling_time_and_rates(1.0, 1.0, 1.0, two, two).unwrap();
        assert_relative_eq!(r.doubling_time, 10.873127, epsilon = 1e-6);
        assert_relative_eq!(r.lambda, std::f64::consts::LN_2 / r.doubling_time, epsilon = 1e-15);
        assert_relative_eq!(r.lambda, 0.063752, epsilon = 1e-5);
        assert_relative_eq!(r.c_const, 5.436564, epsilon = 1e-6);
        assert_relative_eq!(r.d, 10.873127, epsilon = 1e-6);
        let half = doubling_time_and_rates(1.0, 1.0, 1.0, Exponent::Infinite, two).unwrap();
        assert!(half.doubling_time > r.doubling_time);
        let one = Exponent::finite(1.0).unwrap();
        assert!(matches!(
            doubling_time_and_rates(1.0, 1.0, 1.0, Exponent::Infinite, one),
            Err(Error::ExcludedPair)
        ));
    }

    #[test]
    fn certify_saddle() {
        let two = Exponent::finite(2.0).unwrap();
        let r = certify_dichotomy(
            &fam(System::Diagonal { rates: vec![-1.0, 1.0] }),
            two,
            two,
            &small_config(),
        )
        .unwrap();
        let c = &r.certificate;
        assert_eq!(c.rank(), 1);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(c.projections().iter().all(|p| spectral_norm(&(p - &expected)) < 1e-3));
        assert!(r.invariance <= 1e-6);
        assert!((r.fitted.alpha_hat.unwrap() - 1.0).abs() < 0.05);
        assert!((r.fitted.beta_hat.unwrap() - 1.0).abs() < 0.05);
        assert!(r.projection_bound_holds && r.growth_lemma_holds);
        assert!(c.notes().iter().any(|n| n == SURROGATE_NOTE));
    }

    #[test]
    fn certify_stable_scalar_and_gate() {
        let two = Exponent::finite(2.0).unwrap();
        let r = certify_dichotomy(&fam(System::Scalar { rate: -1.0 }), two, two, &small_config()).unwrap();
        assert_eq!(r.certificate.rank(), 1);
        assert!(r.certificate.beta().is_none());
        assert!(r.growth_lemma_margin.is_none());
        assert!(matches!(
            certify_dichotomy(&fam(System::Scalar { rate: 0.0 }), two, two, &small_config()),
            Err(Error::Precondition(_))
        ));
        let one = Exponent::finite(1.0).unwrap();
        assert!(matches!(
            certify_dichotomy(
                &fam(System::Scalar { rate: -1.0 }),
                Exponent::Infinite,
                one,
                &small_config()
            ),
            Err(Error::ExcludedPair)
        ));
    }

    #[test]
    fn subspace_pair_angles() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let s = SubspacePair::from_projection(0.0, &p);
        assert_eq!((s.stable.ncols(), s.unstable.ncols()), (1, 1));
        assert_relative_eq!(s.min_angle, std::f64::consts::FRAC_PI_4, epsilon = 1e-10);
        assert!(s.is_complementary(0.1));
    }
}
