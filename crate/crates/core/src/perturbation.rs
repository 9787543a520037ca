//! Robustness under perturbations `B(t) = M e^{-eps|t|} phi(t) S` with
//! `||S|| <= 1`, so `||B(t)|| <= M e^{-eps|t|} |phi(t)|`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use crate::admissibility::{check_admissibility, DiscreteH, Verdict};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionFamily, GrowthBound, GrowthSampling, System};
use crate::function_space::{Exponent, Grid, GridFunction, Profile, Signal};
use crate::linalg::spectral_norm;
use crate::norm_family::NormFamily;
use crate::reconstruct::{certify_from_report, ReconstructConfig};
use crate::scalar::Scalar;

/// Perturbation `B(t) = M e^{-eps|t|} phi(t) S`.
#[derive(Clone, Debug)]
pub struct PerturbationSpec<T: Scalar> {
    pub magnitude: T,
    /// Envelope constant `C` of the norm family.
    pub envelope_c: T,
    /// Envelope exponent `eps` of the norm family.
    pub eps: T,
    pub profile: Profile<T>,
    pub structure: DMatrix<T>,
}

impl<T: Scalar> PerturbationSpec<T> {
    /// Takes `C` and `eps` from the norm family.
    pub fn new(magnitude: T, profile: Profile<T>, structure: DMatrix<T>, norms: &NormFamily<T>) -> Result<Self> {
        Self::with_envelope(magnitude, norms.envelope_c(), norms.envelope_eps(), profile, structure)
    }

    pub fn with_envelope(
        magnitude: T,
        envelope_c: T,
        eps: T,
        profile: Profile<T>,
        structure: DMatrix<T>,
    ) -> Result<Self> {
        if !(magnitude >= T::zero()) || !magnitude.finite() {
            return Err(Error::InvalidInput(format!(
                "perturbation magnitude {magnitude} must be >= 0"
            )));
        }
        if !(envelope_c >= T::one()) || !(eps >= T::zero()) {
            return Err(Error::InvalidInput("envelope needs C >= 1 and eps >= 0".into()));
        }
        if structure.nrows() != structure.ncols() || structure.nrows() == 0 {
            return Err(Error::InvalidInput(
                "perturbation structure must be a square matrix".into(),
            ));
        }
        let s = spectral_norm(&structure);
        if s > T::one() + T::lit(1e-12) {
            return Err(Error::InvalidInput(format!("structure norm {s} exceeds 1")));
        }
        Ok(Self {
            magnitude,
            envelope_c,
            eps,
            profile,
            structure,
        })
    }

    pub fn with_magnitude(&self, magnitude: T) -> Result<Self> {
        Self::with_envelope(
            magnitude,
            self.envelope_c,
            self.eps,
            self.profile.clone(),
            self.structure.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.structure.nrows()
    }

    fn factor(&self, t: T) -> T {
        self.magnitude * (-(self.eps * t.magnitude())).exp()
    }

    /// Declared bound `M e^{-eps|t|} |phi(t)|`, larger one-sided limit.
    pub fn envelope(&self, t: T) -> T {
        let (l, r) = self.profile.limits(t);
        self.factor(t) * l.magnitude().max(r.magnitude())
    }

    /// `(B(t-), B(t+))`.
    pub fn limits(&self, t: T) -> (DMatrix<T>, DMatrix<T>) {
        let (l, r) = self.profile.limits(t);
        let f = self.factor(t);
        (&self.structure * (f * l), &self.structure * (f * r))
    }

    /// `B(t)`, left limit at jumps.
    pub fn sample(&self, t: T) -> DMatrix<T> {
        self.limits(t).0
    }

    /// Largest `||B(t)|| - envelope(t)` over the given times.
    pub fn envelope_excess(&self, times: &[T]) -> T {
        times
            .iter()
            .map(|&t| {
                let (l, r) = self.limits(t);
                spectral_norm(&l).max(spectral_norm(&r)) - self.envelope(t)
            })
            .fold(-T::infinity(), |a, b| a.max(b))
    }
}

/// Family of `x' = (A(t) + B(t))x`. With a generator the system is integrated
/// by RK4; otherwise the Volterra equation is solved by Picard iteration.
pub fn perturbed_family<T: Scalar>(
    base: &EvolutionFamily<T>,
    spec: &PerturbationSpec<T>,
) -> Result<EvolutionFamily<T>> {
    if spec.dim() != base.dim() {
        return Err(Error::InvalidInput("perturbation and family dimensions differ".into()));
    }
    if spec.magnitude == T::zero() {
        return Ok(base.clone());
    }
    let dim = base.dim();
    let system = base.system().clone();
    let label = format!("{:?} + B", system);
    let perturbed = if system.generator(T::zero()).is_some() {
        let s = spec.clone();
        System::TimeVarying {
            dim,
            label,
            generator: Arc::new(move |t: T| system.generator(t).expect("generator checked") + s.sample(t)),
        }
    } else {
        let b = base.clone();
        let s = spec.clone();
        let h = base.h_int();
        System::ClosedForm {
            dim,
            label,
            propagator: Arc::new(move |t: T, tau: T| {
                picard_propagator(&b, &s, t, tau, h)
                    .unwrap_or_else(|_| DMatrix::from_element(dim, dim, T::lit(f64::NAN)))
            }),
            generator: None,
        }
    };
    EvolutionFamily::new(perturbed, base.h_int())?.with_norms(base.norms().clone())
}

/// `U(t, tau)` of the perturbed family.
pub fn perturbed_propagator<T: Scalar>(
    base: &EvolutionFamily<T>,
    spec: &PerturbationSpec<T>,
    t: T,
    tau: T,
) -> Result<DMatrix<T>> {
    perturbed_family(base, spec)?.propagator(t, tau)
}

/// `U(t, tau)` by Picard iteration on
/// `U(t,tau) = T(t,tau) + int_tau^t T(t,s)B(s)U(s,tau) ds`, in the interaction
/// form `U(s,a) = T(s,a)V(s)` on pieces of length at most 1, composed.
/// A piece whose iteration fails to reach relative change `1e-10` is halved.
pub fn picard_propagator<T: Scalar>(
    base: &EvolutionFamily<T>,
    spec: &PerturbationSpec<T>,
    t: T,
    tau: T,
    h: T,
) -> Result<DMatrix<T>> {
    if t < tau {
        let forward = picard_propagator(base, spec, tau, t, h)?;
        return forward
            .try_inverse()
            .ok_or_else(|| Error::Singular("perturbed propagator is not invertible".into()));
    }
    if !(h > T::zero()) {
        return Err(Error::InvalidInput("Picard step must be positive".into()));
    }
    let n = base.dim();
    let h_min = T::lit(1e-3);
    let mut u = DMatrix::identity(n, n);
    let mut a = tau;
    let mut piece = T::one();
    while a < t {
        let b = (a + piece).min(t);
        match picard_piece(base, spec, a, b, h)? {
            Some(step) => {
                u = step * u;
                a = b;
                piece = T::one();
            }
            None => {
                piece *= T::lit(0.5);
                if piece < h_min {
                    return Err(Error::Convergence(format!(
                        "Picard iteration does not contract near t = {a}"
                    )));
                }
            }
        }
    }
    Ok(u)
}

fn picard_piece<T: Scalar>(
    base: &EvolutionFamily<T>,
    spec: &PerturbationSpec<T>,
    a: T,
    b: T,
    h: T,
) -> Result<Option<DMatrix<T>>> {
    let n = base.dim();
    let m = ((b - a) / h).ceil().to_f64_lossy().max(1.0) as usize;
    let hq = (b - a) / T::from_usize_lossy(m);
    // kernel T(a,r) B(r) T(r,a) with one-sided limits inside each cell
    let mut right = Vec::with_capacity(m);
    let mut left = Vec::with_capacity(m);
    for l in 0..=m {
        let r = a + hq * T::from_usize_lossy(l);
        let fwd = base.transition(r, a)?;
        let back = base.transition(a, r)?;
        let (bl, br) = spec.limits(r);
        if l < m {
            right.push(&back * br * &fwd);
        }
        if l > 0 {
            left.push(&back * bl * &fwd);
        }
    }
    let id = DMatrix::<T>::identity(n, n);
    let mut v = vec![id.clone(); m + 1];
    let half = hq * T::lit(0.5);
    for _ in 0..80 {
        let mut next = Vec::with_capacity(m + 1);
        next.push(id.clone());
        let mut acc = id.clone();
        for l in 0..m {
            acc += (&right[l] * &v[l] + &left[l] * &v[l + 1]) * half;
            next.push(acc.clone());
        }
        let change = next
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y).amax() / x.amax().max(T::one()))
            .fold(T::zero(), |p, q| p.max(q));
        v = next;
        if !change.finite() {
            return Ok(None);
        }
        if change < T::lit(1e-10) {
            return Ok(Some(base.transition(b, a)? * &v[m]));
        }
    }
    Ok(None)
}

/// Windowed `||phi||_q` and the increase of the norm when the window
/// doubles, which stands in for the tail beyond `T_w`.
#[derive(Clone, Copy, Debug)]
pub struct PhiNorm<T: Scalar> {
    pub value: T,
    pub tail: T,
}

impl<T: Scalar> PhiNorm<T> {
    pub fn tail_ok(&self) -> bool {
        self.tail < T::lit(1e-8)
    }
}

pub fn phi_norm<T: Scalar>(profile: &Profile<T>, q: Exponent<T>, half_width: T, h: T) -> Result<PhiNorm<T>> {
    let one = NormFamily::constant(1);
    let signal = Signal::single(profile.clone(), DVector::from_element(1, T::one()));
    let inner = GridFunction::from_signal(Grid::window(half_width, h)?, &signal, 1)?;
    let outer = GridFunction::from_signal(Grid::window(half_width * T::lit(2.0), h)?, &signal, 1)?;
    let value = inner.lp_norm(&one, q)?;
    let tail = (outer.lp_norm(&one, q)? - value).max(T::zero());
    Ok(PhiNorm { value, tail })
}

/// `lhs = M C ||phi||_q ||H^{-1}||` and whether `lhs < 1`.
pub fn smallness_condition<T: Scalar>(magnitude: T, envelope_c: T, phi_q: T, h_inverse_norm: T) -> (T, bool) {
    let lhs = magnitude * envelope_c * phi_q * h_inverse_norm;
    (lhs, lhs < T::one())
}

/// `(K e^{MCK||phi||_q}, c + MCK||phi||_q)`.
pub fn perturbed_growth_bound<T: Scalar>(
    magnitude: T,
    envelope_c: T,
    phi_q: T,
    growth: GrowthBound<T>,
) -> GrowthBound<T> {
    let s = magnitude * envelope_c * growth.k * phi_q;
    GrowthBound {
        k: growth.k * s.exp(),
        c: growth.c + s,
    }
}

/// `int_tau^t |phi|` by trapezoid and the bound `||phi||_q (t - tau + 1)`.
pub fn gronwall_integral_check<T: Scalar>(profile: &Profile<T>, phi_q: T, tau: T, t: T, h: T) -> Result<(T, T)> {
    if t < tau {
        return Err(Error::Order(format!("t = {t} precedes tau = {tau}")));
    }
    let signal = Signal::single(profile.clone(), DVector::from_element(1, T::one()));
    let cells = ((t - tau) / h).ceil().to_f64_lossy().max(1.0) as usize;
    let grid = Grid::new(tau, (t - tau) / T::from_usize_lossy(cells), cells + 1)?;
    let f = GridFunction::from_signal(grid, &signal, 1)?;
    let integral = f.lp_norm(&NormFamily::constant(1), Exponent::finite(T::one())?)?;
    Ok((integral, phi_q * (t - tau + T::one())))
}

/// Discrete check of the feedback identity: the perturbed assembly applied
/// to `(x, y)` minus the base assembly applied to `(x, y + Bx)`, relative to
/// the latter. `x` must not carry jumps.
pub fn feedback_identity_residual<T: Scalar>(
    op: &DiscreteH<T>,
    spec: &PerturbationSpec<T>,
    x: &GridFunction<T>,
    y: &GridFunction<T>,
) -> Result<T> {
    if x.has_jumps() {
        return Err(Error::InvalidInput("feedback identity needs a continuous x".into()));
    }
    let grid = *op.grid();
    let b: Vec<DMatrix<T>> = grid.nodes().map(|t| spec.sample(t)).collect();
    let band = op.feedback_band(&b)?;
    let flat: Vec<T> = x.values().iter().flat_map(|v| v.iter().copied()).collect();
    let mut lhs = band.matvec(&flat);
    for (i, r) in op.rhs(y)?.iter().enumerate() {
        for (k, v) in r.iter().enumerate() {
            lhs[i * op.dim() + k] -= *v;
        }
    }
    let bx = x.map_values(|i, v| &b[i] * v);
    let rhs = op.apply(x, &y.combine(T::one(), &bx, T::one())?)?;
    let mut diff = T::zero();
    let mut scale = T::one();
    for (i, r) in rhs.iter().enumerate() {
        for (k, v) in r.iter().enumerate() {
            diff = diff.max((lhs[i * op.dim() + k] - *v).magnitude());
            scale = scale.max(v.magnitude());
        }
    }
    Ok(diff / scale)
}

/// Largest `||U(t,tau)||_{t,tau} / (K e^{c(t-tau)})` over the sampling.
pub fn growth_bound_ratio<T: Scalar>(
    family: &EvolutionFamily<T>,
    bound: GrowthBound<T>,
    sampling: &GrowthSampling<T>,
) -> Result<T> {
    let pairs: Vec<(T, T)> = sampling.pairs().collect();
    let ratios: Vec<T> = pairs
        .par_iter()
        .map(|&(t, s)| Ok(family.family_norm(t, s)? / (bound.k * (bound.c * (t - s)).exp())))
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(T::zero(), |a, b| a.max(b)))
}

/// One magnitude of a robustness sweep.
#[derive(Clone, Debug)]
pub struct SweepRow<T: Scalar> {
    pub magnitude: T,
    pub lhs: T,
    pub satisfied: bool,
    pub verdict: Option<Verdict>,
    pub certified: bool,
    pub alpha_hat: Option<T>,
    pub beta_hat: Option<T>,
    pub d_hat: Option<T>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepReport<T: Scalar> {
    pub rows: Vec<SweepRow<T>>,
    pub h_inverse_norm: T,
    pub phi_norm: PhiNorm<T>,
    /// `1 / (C ||phi||_q ||H^{-1}||)`.
    pub theoretical_threshold: T,
    /// Smallest swept magnitude that failed certification.
    pub empirical_threshold: Option<T>,
}

impl<T: Scalar> SweepReport<T> {
    /// Every magnitude with `lhs < 1` produced a certificate.
    pub fn small_all_certified(&self) -> bool {
        self.rows.iter().filter(|r| r.satisfied).all(|r| r.certified)
    }

    /// `M,lhs,verdict,alpha_hat,beta_hat,D_hat`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<T>| v.map_or(String::new(), |x| format!("{:.12e}", x.to_f64_lossy()));
        let mut out = String::from("M,lhs,verdict,alpha_hat,beta_hat,D_hat\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.12e},{:.12e},{},{},{},{}\n",
                r.magnitude.to_f64_lossy(),
                r.lhs.to_f64_lossy(),
                r.verdict.map_or("error", |v| v.as_str()),
                opt(r.alpha_hat),
                opt(r.beta_hat),
                opt(r.d_hat)
            ));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f = |x: T| x.to_f64_lossy();
        json!({
            "h_inverse_norm": f(self.h_inverse_norm),
            "phi_norm": f(self.phi_norm.value),
            "phi_tail": f(self.phi_norm.tail),
            "phi_tail_ok": self.phi_norm.tail_ok(),
            "theoretical_threshold": f(self.theoretical_threshold),
            "empirical_threshold": self.empirical_threshold.map(f),
            "small_all_certified": self.small_all_certified(),
            "rows": self.rows.iter().map(|r| json!({
                "M": f(r.magnitude),
                "lhs": f(r.lhs),
                "satisfied": r.satisfied,
                "verdict": r.verdict.map(|v| v.as_str()),
                "certified": r.certified,
                "alpha_hat": r.alpha_hat.map(f),
                "beta_hat": r.beta_hat.map(f),
                "D_hat": r.d_hat.map(f),
                "error": r.error,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Runs admissibility and certification on the perturbed family for every
/// magnitude. Failures are recorded per row and never abort the sweep.
pub fn robustness_experiment<T: Scalar>(
    base: &EvolutionFamily<T>,
    template: &PerturbationSpec<T>,
    magnitudes: &[T],
    p: Exponent<T>,
    q: Exponent<T>,
    config: &ReconstructConfig<T>,
) -> Result<SweepReport<T>> {
    let acfg = &config.admissibility;
    let base_report = check_admissibility(base, p, q, acfg)?;
    if base_report.verdict != Verdict::Admissible {
        return Err(Error::Precondition(format!(
            "base family is {}",
            base_report.verdict.as_str()
        )));
    }
    let h_inverse_norm = base_report.g_norm_estimate().expect("admissible reports carry ||G||");
    let phi = phi_norm(&template.profile, q, acfg.half_width, acfg.h)?;
    let rows: Vec<SweepRow<T>> = magnitudes
        .par_iter()
        .map(|&m| {
            let (lhs, satisfied) = smallness_condition(m, template.envelope_c, phi.value, h_inverse_norm);
            let mut row = SweepRow {
                magnitude: m,
                lhs,
                satisfied,
                verdict: None,
                certified: false,
                alpha_hat: None,
                beta_hat: None,
                d_hat: None,
                error: None,
            };
            let mut run = || -> Result<()> {
                let family = perturbed_family(base, &template.with_magnitude(m)?)?;
                let report = check_admissibility(&family, p, q, acfg)?;
                row.verdict = Some(report.verdict);
                let rec = certify_from_report(&family, report, config)?;
                row.certified = true;
                row.alpha_hat = rec.fitted.alpha_hat;
                row.beta_hat = rec.fitted.beta_hat;
                row.d_hat = Some(rec.fitted.d_hat);
                Ok(())
            };
            if let Err(e) = run() {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect();
    let empirical_threshold = rows
        .iter()
        .filter(|r| !r.certified)
        .map(|r| r.magnitude)
        .fold(None, |a: Option<T>, m| Some(a.map_or(m, |x| x.min(m))));
    let denom = template.envelope_c * phi.value * h_inverse_norm;
    Ok(SweepReport {
        rows,
        h_inverse_norm,
        phi_norm: phi,
        theoretical_threshold: if denom > T::zero() {
            T::one() / denom
        } else {
            T::infinity()
        },
        empirical_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissibility::{assemble_h, AdmissibilityConfig};
    use approx::assert_relative_eq;

    fn scalar(rate: f64) -> EvolutionFamily<f64> {
        EvolutionFamily::new(System::Scalar { rate }, 1e-3).unwrap()
    }

    fn bump() -> Profile<f64> {
        Profile::TwoSidedExp { center: 0.0, rate: 1.0 }
    }

    fn spec(m: f64, sign: f64) -> PerturbationSpec<f64> {
        PerturbationSpec::with_envelope(m, 1.0, 0.0, bump(), DMatrix::from_element(1, 1, sign)).unwrap()
    }

    /// `int_tau^t e^{-|s|} ds`.
    fn bump_integral(tau: f64, t: f64) -> f64 {
        let prim = |s: f64| if s >= 0.0 { 1.0 - (-s).exp() } else { s.exp() - 1.0 };
        prim(t) - prim(tau)
    }

    #[test]
    fn closed_form_scalar_oracle() {
        let base = scalar(-1.0);
        let s = spec(0.1, -1.0);
        for (t, tau) in [(1.0, -1.0), (3.0, 0.5), (-0.5, -2.0)] {
            let exact = (-(t - tau) - 0.1 * bump_integral(tau, t)).exp();
            let rk = perturbed_propagator(&base, &s, t, tau).unwrap()[(0, 0)];
            let pic = picard_propagator(&base, &s, t, tau, 1e-3).unwrap()[(0, 0)];
            assert!((rk - exact).abs() < 1e-6 * exact, "rk {rk} vs {exact}");
            assert!((pic - exact).abs() < 1e-6 * exact, "picard {pic} vs {exact}");
        }
        let id = perturbed_propagator(&base, &s, 0.7, 0.7).unwrap();
        assert_eq!(id[(0, 0)], 1.0);
    }

    #[test]
    fn zero_perturbation_is_identity_map() {
        let base = scalar(-1.0);
        let u = perturbed_family(&base, &spec(0.0, 1.0)).unwrap();
        assert_eq!(u.propagator(2.0, 0.0).unwrap(), base.propagator(2.0, 0.0).unwrap());
    }

    #[test]
    fn picard_without_generator_matches_integration() {
        let closed = EvolutionFamily::new(
            System::ClosedForm {
                dim: 1,
                label: "decay".into(),
                propagator: Arc::new(|t: f64, s: f64| DMatrix::from_element(1, 1, (-(t - s)).exp())),
                generator: None,
            },
            1e-3,
        )
        .unwrap();
        let s = spec(0.3, 1.0);
        let a = perturbed_propagator(&closed, &s, 2.0, -1.0).unwrap()[(0, 0)];
        let b = perturbed_propagator(&scalar(-1.0), &s, 2.0, -1.0).unwrap()[(0, 0)];
        assert!((a - b).abs() < 1e-6 * b.abs());
    }

    #[test]
    fn smallness_and_growth_examples() {
        let p = phi_norm(&bump(), Exponent::finite(2.0).unwrap(), 15.0, 1e-3).unwrap();
        assert!((p.value - 1.0).abs() < 1e-6);
        assert!(p.tail_ok());
        assert_relative_eq!(smallness_condition(0.1, 1.0, 1.0, 1.0).0, 0.1);
        assert!(smallness_condition(0.1, 1.0, 1.0, 1.0).1);
        assert_eq!(smallness_condition(0.0, 1.0, 1.0, 1.0), (0.0, true));
        let (lhs, ok) = smallness_condition(20.0, 1.0, 1.0, 0.1);
        assert_relative_eq!(lhs, 2.0);
        assert!(!ok);

        let g = perturbed_growth_bound(0.1, 1.0, 1.0, GrowthBound { k: 1.0, c: 1.0 });
        assert_relative_eq!(g.k, 1.105171, epsilon = 1e-6);
        assert_relative_eq!(g.c, 1.1, epsilon = 1e-12);
        let g0 = perturbed_growth_bound(0.0, 1.0, 1.0, GrowthBound { k: 2.0, c: -1.0 });
        assert_eq!((g0.k, g0.c), (2.0, -1.0));
        let g = perturbed_growth_bound(0.1, 1.0, 1.0, GrowthBound { k: 1.0, c: -1.0 });
        assert_relative_eq!(g.c, -0.9, epsilon = 1e-12);
        let u = perturbed_family(&scalar(-1.0), &spec(0.1, 1.0)).unwrap();
        let ratio = growth_bound_ratio(&u, g, &GrowthSampling::uniform(-5.0, 5.0, 6, 4.0, 5)).unwrap();
        assert!(ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn envelope_and_integral() {
        let s = spec(0.5, -1.0);
        let times: Vec<f64> = (-50..=50).map(|k| k as f64 * 0.1).collect();
        assert!(s.envelope_excess(&times) <= 1e-12);
        let (i, b) = gronwall_integral_check(&bump(), 1.0, -1.0, 2.0, 1e-3).unwrap();
        assert!((i - bump_integral(-1.0, 2.0)).abs() < 1e-6);
        assert!(i <= b);
        assert!(PerturbationSpec::with_envelope(1.0, 1.0, 0.0, bump(), DMatrix::from_element(1, 1, 2.0)).is_err());
    }

    #[test]
    fn discrete_feedback_identity() {
        let base = EvolutionFamily::new(System::Diagonal { rates: vec![-1.0, 1.0] }, 1e-3).unwrap();
        let s = PerturbationSpec::with_envelope(
            0.3,
            1.0,
            0.0,
            bump(),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        )
        .unwrap();
        let grid = Grid::window(3.0, 0.05).unwrap();
        let op = assemble_h(&base, grid).unwrap();
        let x = GridFunction::from_fn(grid, |t: f64| DVector::from_vec(vec![t.sin(), (0.5 * t).cos()])).unwrap();
        let y = GridFunction::from_signal(
            grid,
            &Signal::indicator(-1.0, 1.0, DVector::from_vec(vec![1.0, -2.0])),
            2,
        )
        .unwrap();
        assert!(feedback_identity_residual(&op, &s, &x, &y).unwrap() <= 1e-10);
    }

    #[test]
    fn sweep_scalar() {
        let config = ReconstructConfig {
            admissibility: AdmissibilityConfig {
                half_width: 10.0,
                h: 0.02,
                probes: 4,
                ..Default::default()
            },
            stride: 25,
            ..Default::default()
        };
        let two = Exponent::finite(2.0).unwrap();
        let r = robustness_experiment(&scalar(-1.0), &spec(0.0, 1.0), &[0.0, 0.1, 0.2], two, two, &config).unwrap();
        assert!(r.small_all_certified(), "{:?}", r.rows);
        for row in &r.rows {
            let a = row.alpha_hat.unwrap();
            assert!(a <= 1.0 + 1e-6 && a >= 1.0 - 2.0 * row.magnitude, "{row:?}");
        }
        assert!(r.to_csv().starts_with("M,lhs,verdict,alpha_hat,beta_hat,D_hat\n"));
    }
}
