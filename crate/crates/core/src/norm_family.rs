//! Families of norms `||.||_t` on `R^n` satisfying the envelope
//! `|x| <= ||x||_t <= C e^{eps |t|} |x|`.
//!
//! The base norm is Euclidean. Weighted kinds are Euclidean norms of
//! `W(t) x`; adapted (Lyapunov) norms are built from the flow itself and
//! turn a nonuniform contraction into a uniform one.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evolution::EvolutionFamily;
use crate::green::DichotomyCertificate;
use crate::linalg::{self, spectral_norm};
use crate::scalar::Scalar;

pub type WeightFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Piecewise-continuous scalar weight `w(t)`.
#[derive(Clone)]
pub enum Weight<T: Scalar> {
    Constant(T),
    /// `scale * e^{rate |t|}`.
    ExpAbs {
        scale: T,
        rate: T,
    },
    Custom(WeightFn<T>),
}

impl<T: Scalar> Weight<T> {
    pub fn eval(&self, t: T) -> T {
        match self {
            Weight::Constant(c) => *c,
            Weight::ExpAbs { scale, rate } => *scale * (*rate * t.magnitude()).exp(),
            Weight::Custom(f) => f(t),
        }
    }

    /// Natural envelope `(C, eps)` for closed-form weights.
    fn envelope(&self) -> Option<(T, T)> {
        match self {
            Weight::Constant(c) => Some((*c, T::zero())),
            Weight::ExpAbs { scale, rate } => Some((*scale, rate.max(T::zero()))),
            Weight::Custom(_) => None,
        }
    }
}

impl<T: Scalar> fmt::Debug for Weight<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weight::Constant(c) => write!(f, "Constant({c})"),
            Weight::ExpAbs { scale, rate } => write!(f, "ExpAbs({scale}, {rate})"),
            Weight::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone)]
pub enum NormKind<T: Scalar> {
    Constant,
    ScalarWeighted(Weight<T>),
    DiagonalWeighted(Vec<Weight<T>>),
    Adapted(Arc<AdaptedNorm<T>>),
}

impl<T: Scalar> fmt::Debug for NormKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::Constant => write!(f, "Constant"),
            NormKind::ScalarWeighted(w) => write!(f, "ScalarWeighted({w:?})"),
            NormKind::DiagonalWeighted(ws) => write!(f, "DiagonalWeighted({ws:?})"),
            NormKind::Adapted(a) => write!(
                f,
                "Adapted(stable_rate={:?}, unstable_rate={:?}, horizon={})",
                a.stable_rate, a.unstable_rate, a.horizon
            ),
        }
    }
}

/// A family of norms with declared envelope constants.
#[derive(Clone, Debug)]
pub struct NormFamily<T: Scalar> {
    kind: NormKind<T>,
    envelope_c: T,
    envelope_eps: T,
    dim: usize,
}

impl<T: Scalar> NormFamily<T> {
    pub fn constant(dim: usize) -> Self {
        Self {
            kind: NormKind::Constant,
            envelope_c: T::one(),
            envelope_eps: T::zero(),
            dim,
        }
    }

    /// `||x||_t = w(t) |x|`. Closed-form weights declare their own envelope;
    /// custom weights must use [`NormFamily::with_envelope`].
    pub fn scalar_weighted(dim: usize, weight: Weight<T>) -> Result<Self> {
        let (c, eps) = weight
            .envelope()
            .ok_or_else(|| Error::InvalidInput("custom weights need an explicit envelope".into()))?;
        Self::with_envelope(NormKind::ScalarWeighted(weight), dim, c.max(T::one()), eps)
    }

    /// `||x||_t = |(w_1(t) x_1, .., w_n(t) x_n)|`.
    pub fn diagonal_weighted(weights: Vec<Weight<T>>) -> Result<Self> {
        let mut c = T::one();
        let mut eps = T::zero();
        for w in &weights {
            let (wc, we) = w
                .envelope()
                .ok_or_else(|| Error::InvalidInput("custom weights need an explicit envelope".into()))?;
            c = c.max(wc);
            eps = eps.max(we);
        }
        let dim = weights.len();
        Self::with_envelope(NormKind::DiagonalWeighted(weights), dim, c, eps)
    }

    pub fn with_envelope(kind: NormKind<T>, dim: usize, envelope_c: T, envelope_eps: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("norm family dimension must be positive".into()));
        }
        if !(envelope_c >= T::one()) || !envelope_c.finite() {
            return Err(Error::InvalidInput(format!(
                "envelope constant C = {envelope_c} must be >= 1"
            )));
        }
        if !(envelope_eps >= T::zero()) || !envelope_eps.finite() {
            return Err(Error::InvalidInput(format!(
                "envelope rate eps = {envelope_eps} must be >= 0"
            )));
        }
        if let NormKind::DiagonalWeighted(ws) = &kind {
            if ws.len() != dim {
                return Err(Error::InvalidInput("one weight per coordinate required".into()));
            }
        }
        Ok(Self {
            kind,
            envelope_c,
            envelope_eps,
            dim,
        })
    }

    pub fn kind(&self) -> &NormKind<T> {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn envelope_c(&self) -> T {
        self.envelope_c
    }

    pub fn envelope_eps(&self) -> T {
        self.envelope_eps
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, NormKind::Constant)
    }

    /// `||x||_t`.
    pub fn norm_at(&self, t: T, x: &DVector<T>) -> Result<T> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} for a family on R^{}",
                x.len(),
                self.dim
            )));
        }
        if !t.finite() || x.iter().any(|v| !v.finite()) {
            return Err(Error::InvalidInput("non-finite input to norm_at".into()));
        }
        Ok(match &self.kind {
            NormKind::Constant => x.norm(),
            NormKind::ScalarWeighted(w) => w.eval(t) * x.norm(),
            NormKind::DiagonalWeighted(ws) => ws
                .iter()
                .zip(x.iter())
                .fold(T::zero(), |acc, (w, &v)| {
                    let s = w.eval(t) * v;
                    acc + s * s
                })
                .sqrt(),
            NormKind::Adapted(a) => a.eval(t, x)?,
        })
    }

    /// Matrix `W(t)` with `||x||_t = |W(t) x|` for the weighted kinds. For
    /// adapted norms this is the diagonal of basis-vector norms, an
    /// approximation used only to weight least-squares problems.
    pub fn weight_matrix(&self, t: T) -> Result<DMatrix<T>> {
        let n = self.dim;
        Ok(match &self.kind {
            NormKind::Constant => DMatrix::identity(n, n),
            NormKind::ScalarWeighted(w) => DMatrix::identity(n, n) * w.eval(t),
            NormKind::DiagonalWeighted(ws) => {
                DMatrix::from_diagonal(&DVector::from_iterator(n, ws.iter().map(|w| w.eval(t))))
            }
            NormKind::Adapted(a) => DMatrix::from_diagonal(&a.basis_norms(t)?),
        })
    }

    /// Whether `||x||_t = |W(t) x|` holds exactly.
    pub fn is_euclidean_weighted(&self) -> bool {
        !matches!(self.kind, NormKind::Adapted(_)) || self.dim == 1
    }

    /// `sup_x ||M x||_{t_out} / ||x||_{t_in}`. Exact for weighted kinds and for
    /// scalar adapted norms; a sampled lower estimate for adapted norms on
    /// `R^n`, `n > 1`.
    pub fn operator_norm(&self, t_out: T, t_in: T, m: &DMatrix<T>) -> Result<T> {
        if self.is_euclidean_weighted() {
            let wo = self.weight_matrix(t_out)?;
            let wi = self.weight_matrix(t_in)?;
            let wi_inv = linalg::inverse(&wi)?;
            return Ok(spectral_norm(&(wo * m * wi_inv)));
        }
        let n = self.dim;
        let mut best = T::zero();
        for x in probe_directions::<T>(n) {
            let den = self.norm_at(t_in, &x)?;
            if den > T::zero() {
                best = best.max(self.norm_at(t_out, &(m * &x))? / den);
            }
        }
        Ok(best)
    }

    /// Checks the envelope axiom on samples and fits the least `(C, eps)`.
    pub fn verify_envelope(&self, times: &[T], vectors: &[DVector<T>]) -> Result<EnvelopeReport<T>> {
        if times.is_empty() || vectors.is_empty() {
            return Err(Error::InvalidInput("envelope check needs nonempty samples".into()));
        }
        if vectors.iter().any(|v| v.norm() == T::zero()) {
            return Err(Error::InvalidInput("zero sample vector in envelope check".into()));
        }
        let mut lower = -T::infinity();
        let mut upper = -T::infinity();
        let mut abs_t = Vec::with_capacity(times.len());
        let mut log_ratio = Vec::with_capacity(times.len());
        for &t in times {
            let bound = self.envelope_c * (self.envelope_eps * t.magnitude()).exp();
            let mut sup_ratio = T::zero();
            for v in vectors {
                let r = self.norm_at(t, v)? / v.norm();
                lower = lower.max(T::one() - r);
                upper = upper.max(r - bound);
                sup_ratio = sup_ratio.max(r);
            }
            abs_t.push(t.magnitude());
            log_ratio.push(sup_ratio.ln());
        }
        let (_, slope) = linalg::linear_fit(&abs_t, &log_ratio)?;
        let eps = slope.max(T::zero());
        let log_c = abs_t
            .iter()
            .zip(&log_ratio)
            .map(|(&a, &l)| l - eps * a)
            .fold(-T::infinity(), |a, b| a.max(b));
        Ok(EnvelopeReport {
            max_lower_violation: lower,
            max_upper_violation: upper,
            fitted_c: log_c.exp(),
            fitted_eps: eps,
        })
    }
}

/// Result of [`NormFamily::verify_envelope`]. Violations are relative to the
/// base norm: `1 - ||x||_t/|x|` and `||x||_t/|x| - C e^{eps|t|}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopeReport<T: Scalar> {
    pub max_lower_violation: T,
    pub max_upper_violation: T,
    pub fitted_c: T,
    pub fitted_eps: T,
}

impl<T: Scalar> EnvelopeReport<T> {
    pub fn holds(&self, tol: T) -> bool {
        self.max_lower_violation <= tol && self.max_upper_violation <= tol
    }
}

fn unit<T: Scalar>(n: usize, i: usize) -> DVector<T> {
    let mut e = DVector::zeros(n);
    e[i] = T::one();
    e
}

/// Basis vectors, pairwise sums/differences and a deterministic spread of
/// further directions.
fn probe_directions<T: Scalar>(n: usize) -> Vec<DVector<T>> {
    let mut out: Vec<DVector<T>> = (0..n).map(|i| unit(n, i)).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(unit::<T>(n, i) + unit::<T>(n, j));
            out.push(unit::<T>(n, i) - unit::<T>(n, j));
        }
    }
    for k in 0..64usize {
        let v = DVector::from_iterator(
            n,
            (0..n).map(|i| (T::lit(0.618_034) * T::from_usize_lossy((k + 1) * (i + 3) * (i + 1))).sin()),
        );
        if v.norm() > T::lit(1e-6) {
            out.push(v);
        }
    }
    out
}

/// Lyapunov norm
/// `||x||_t = sup_{0<=s<=L} e^{a s}|T(t+s,t)P(t)x| + sup_{0<=s<=L} e^{b s}|T(t-s,t)Q(t)x|`
/// with `a = alpha - margin`, `b = beta - margin`, discretized in `s`.
pub struct AdaptedNorm<T: Scalar> {
    evolution: EvolutionFamily<T>,
    certificate: DichotomyCertificate<T>,
    stable_rate: Option<T>,
    unstable_rate: Option<T>,
    horizon: T,
    ds: T,
    /// Basis-vector norms by time, since solvers revisit the same nodes.
    basis_cache: Mutex<HashMap<u64, DVector<T>>>,
}

impl<T: Scalar> AdaptedNorm<T> {
    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn stable_rate(&self) -> Option<T> {
        self.stable_rate
    }

    fn steps(&self, horizon: T) -> usize {
        (horizon / self.ds).round().to_f64_lossy().max(1.0) as usize
    }

    fn eval(&self, t: T, x: &DVector<T>) -> Result<T> {
        // On R^1 the norm is a multiple of |x|.
        if x.len() == 1 {
            return Ok(self.basis_norms(t)?[0] * x[0].magnitude());
        }
        self.eval_with_horizon(t, x, self.horizon)
    }

    fn basis_norms(&self, t: T) -> Result<DVector<T>> {
        let key = t.to_f64_lossy().to_bits();
        if let Some(d) = self.basis_cache.lock().expect("cache lock").get(&key) {
            return Ok(d.clone());
        }
        let n = self.certificate.dim();
        let mut d = DVector::zeros(n);
        for i in 0..n {
            d[i] = self.eval_with_horizon(t, &unit(n, i), self.horizon)?;
        }
        self.basis_cache.lock().expect("cache lock").insert(key, d.clone());
        Ok(d)
    }

    fn eval_with_horizon(&self, t: T, x: &DVector<T>, horizon: T) -> Result<T> {
        if x.iter().all(|v| *v == T::zero()) {
            return Ok(T::zero());
        }
        let p = self.certificate.projection(t)?;
        let n = x.len();
        let q = DMatrix::identity(n, n) - &p;
        let steps = self.steps(horizon);
        let stable = match self.stable_rate {
            Some(a) => self.orbit_sup(t, &p * x, a, steps, T::one())?,
            None => T::zero(),
        };
        let unstable = match self.unstable_rate {
            Some(b) => self.orbit_sup(t, &q * x, b, steps, -T::one())?,
            None => T::zero(),
        };
        Ok(stable + unstable)
    }

    /// `sup_k e^{rate s_k} |T(t + dir s_k, t) v|`.
    fn orbit_sup(&self, t: T, v: DVector<T>, rate: T, steps: usize, dir: T) -> Result<T> {
        let mut best = v.norm();
        if best == T::zero() {
            return Ok(best);
        }
        let closed = self.evolution.system().is_closed_form();
        let mut cur = v.clone();
        for k in 1..=steps {
            let s = self.ds * T::from_usize_lossy(k);
            if closed {
                cur = self.evolution.transition(t + dir * s, t)? * &v;
            } else {
                let prev = t + dir * (s - self.ds);
                cur = self.evolution.transition(t + dir * s, prev)? * cur;
            }
            best = best.max((rate * s).exp() * cur.norm());
        }
        Ok(best)
    }
}

/// Output of [`build_lyapunov_norms`].
#[derive(Clone, Debug)]
pub struct LyapunovNorms<T: Scalar> {
    pub family: NormFamily<T>,
    /// Largest relative change of sampled norms when the horizon doubles.
    pub stabilization: T,
    /// Set when `stabilization` exceeds the tolerance.
    pub warning: Option<String>,
}

/// Builds the adapted norm family of a certified evolution family.
///
/// `sample_times` fixes where the envelope constants are fitted and where
/// the horizon stabilization is checked.
pub fn build_lyapunov_norms<T: Scalar>(
    family: &EvolutionFamily<T>,
    cert: &DichotomyCertificate<T>,
    rate_margin: T,
    horizon: T,
    ds: T,
    sample_times: &[T],
) -> Result<LyapunovNorms<T>> {
    if !(horizon > T::zero()) || !(ds > T::zero()) || ds > horizon {
        return Err(Error::InvalidInput(
            "horizon and step must be positive with step <= horizon".into(),
        ));
    }
    let rates: Vec<T> = [cert.alpha(), cert.beta()].into_iter().flatten().collect();
    let min_rate = rates.iter().copied().fold(T::infinity(), |a, b| a.min(b));
    if !(rate_margin > T::zero()) || !(rate_margin < min_rate) {
        return Err(Error::InvalidInput(format!(
            "rate margin {rate_margin} must lie strictly inside (0, {min_rate})"
        )));
    }
    let n = family.dim();
    let base = family.clone().with_norms(NormFamily::constant(n))?;
    let adapted = AdaptedNorm {
        evolution: base,
        certificate: cert.clone(),
        stable_rate: cert.alpha().map(|a| a - rate_margin),
        unstable_rate: cert.beta().map(|b| b - rate_margin),
        horizon,
        ds,
        basis_cache: Mutex::new(HashMap::new()),
    };
    let basis: Vec<DVector<T>> = (0..n).map(|i| unit(n, i)).collect();
    let mut stabilization = T::zero();
    let mut abs_t = Vec::new();
    let mut log_ratio = Vec::new();
    for &t in sample_times {
        let mut sup = T::zero();
        for e in &basis {
            let a = adapted.eval_with_horizon(t, e, horizon)?;
            let b = adapted.eval_with_horizon(t, e, horizon * T::lit(2.0))?;
            stabilization = stabilization.max((b - a).magnitude() / a.max(T::lit(1e-300)));
            sup = sup.max(a);
        }
        abs_t.push(t.magnitude());
        log_ratio.push(sup.ln());
    }
    let (c, eps) = if abs_t.is_empty() {
        (T::one(), T::zero())
    } else {
        let (_, slope) = linalg::linear_fit(&abs_t, &log_ratio)?;
        let eps = slope.max(T::zero());
        let log_c = abs_t
            .iter()
            .zip(&log_ratio)
            .map(|(&a, &l)| l - eps * a)
            .fold(T::zero(), |a, b| a.max(b));
        // Non-basis directions can exceed the basis suprema by at most sqrt(n).
        (log_c.exp() * T::from_usize_lossy(n).sqrt(), eps)
    };
    let warning = (stabilization > T::lit(1e-6)).then(|| {
        format!("adapted-norm suprema not stabilized at horizon {horizon}: relative change {stabilization:e}")
    });
    let family = NormFamily::with_envelope(NormKind::Adapted(Arc::new(adapted)), n, c, eps)?;
    Ok(LyapunovNorms {
        family,
        stabilization,
        warning,
    })
}

/// Serializes `t, ||e_1||_t, .., ||e_n||_t` for inspection.
pub fn scaling_table_csv<T: Scalar>(norms: &NormFamily<T>, times: &[T]) -> Result<String> {
    let n = norms.dim();
    let mut out = String::from("t");
    for k in 1..=n {
        out.push_str(&format!(",e{k}"));
    }
    out.push('\n');
    for &t in times {
        out.push_str(&format!("{:.16e}", t));
        for i in 0..n {
            out.push_str(&format!(",{:.16e}", norms.norm_at(t, &unit(n, i))?));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn norm_at_examples() {
        let c = NormFamily::constant(2);
        assert_eq!(c.norm_at(7.0, &v(&[3.0, 4.0])).unwrap(), 5.0);
        let w = NormFamily::scalar_weighted(1, Weight::ExpAbs { scale: 1.0, rate: 0.1 }).unwrap();
        assert_relative_eq!(
            w.norm_at(2.0, &v(&[1.0])).unwrap(),
            1.221_402_758_160_17,
            epsilon = 1e-12
        );
        assert_eq!(w.norm_at(-3.0, &v(&[0.0])).unwrap(), 0.0);
        assert!(matches!(
            c.norm_at(0.0, &v(&[f64::NAN, 1.0])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn envelope_examples() {
        let times: Vec<f64> = (-5..=5).map(f64::from).collect();
        let vecs = vec![v(&[1.0, 0.0]), v(&[0.3, -2.0])];
        let r = NormFamily::constant(2).verify_envelope(&times, &vecs).unwrap();
        assert!(r.holds(0.0));
        assert_relative_eq!(r.fitted_c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.fitted_eps, 0.0, epsilon = 1e-12);

        let w = NormFamily::scalar_weighted(2, Weight::ExpAbs { scale: 1.0, rate: 0.1 }).unwrap();
        let r = w.verify_envelope(&times, &vecs).unwrap();
        assert!(r.holds(1e-12));
        assert!((r.fitted_eps - 0.1).abs() <= 0.01);
        assert_relative_eq!(r.fitted_c, 1.0, epsilon = 1e-6);

        let bad = NormFamily::scalar_weighted(2, Weight::Constant(0.5)).unwrap();
        let r = bad.verify_envelope(&times, &vecs).unwrap();
        assert_relative_eq!(r.max_lower_violation, 0.5, epsilon = 1e-12);
        assert!(!r.holds(0.0));

        assert!(matches!(
            NormFamily::constant(2).verify_envelope(&times, &[v(&[0.0, 0.0])]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn envelope_constants_validated() {
        assert!(NormFamily::<f64>::with_envelope(NormKind::Constant, 1, 0.5, 0.0).is_err());
        assert!(NormFamily::<f64>::with_envelope(NormKind::Constant, 1, 1.0, -0.1).is_err());
        assert!(NormFamily::scalar_weighted(1, Weight::Custom(Arc::new(|_t: f64| 1.0))).is_err());
    }

    #[test]
    fn diagonal_operator_norm_is_exact() {
        let n = NormFamily::diagonal_weighted(vec![Weight::ExpAbs { scale: 1.0, rate: 0.2 }, Weight::Constant(2.0)])
            .unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        // W(1) W(0)^{-1} = diag(e^{0.2}, 1).
        assert_relative_eq!(n.operator_norm(1.0, 0.0, &m).unwrap(), 0.2f64.exp(), epsilon = 1e-12);
    }

    fn weighted_families() -> Vec<NormFamily<f64>> {
        vec![
            NormFamily::constant(2),
            NormFamily::scalar_weighted(2, Weight::ExpAbs { scale: 1.5, rate: 0.3 }).unwrap(),
            NormFamily::diagonal_weighted(vec![
                Weight::ExpAbs { scale: 1.0, rate: 0.1 },
                Weight::ExpAbs { scale: 2.0, rate: 0.0 },
            ])
            .unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn homogeneity_and_triangle(
            t in -10.0f64..10.0,
            x in prop::array::uniform2(-5.0f64..5.0),
            y in prop::array::uniform2(-5.0f64..5.0),
            lam in -4.0f64..4.0,
        ) {
            let x = v(&x);
            let y = v(&y);
            for fam in weighted_families() {
                let nx = fam.norm_at(t, &x).unwrap();
                let ny = fam.norm_at(t, &y).unwrap();
                let nlx = fam.norm_at(t, &(&x * lam)).unwrap();
                prop_assert!((nlx - lam.abs() * nx).abs() <= 1e-12 * (1.0 + nlx));
                prop_assert!(fam.norm_at(t, &(&x + &y)).unwrap() <= nx + ny + 1e-12);
            }
        }

        #[test]
        fn builtin_envelopes_hold(t in -20.0f64..20.0, x in prop::array::uniform2(-5.0f64..5.0)) {
            let x = v(&x);
            prop_assume!(x.norm() > 1e-6);
            for fam in weighted_families() {
                let r = fam.verify_envelope(&[t], std::slice::from_ref(&x)).unwrap();
                prop_assert!(r.holds(1e-12), "{r:?}");
            }
        }
    }
}
