//! Evolution families `T(t, s)`: closed-form scalar, diagonal and autonomous
//! propagators, plus RK4 integration of `M' = A(t) M` for time-dependent
//! coefficients.
//!
//! The growth exponent is called `c` throughout (it is the same constant as
//! the `a` of the growth axiom `||T(t,s)x||_t <= K e^{a(t-s)} ||x||_s`) and
//! is allowed to be negative.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function_space::Grid;
use crate::linalg::{self, spectral_norm};
use crate::norm_family::NormFamily;
use crate::scalar::Scalar;

pub type MatrixFn<T> = Arc<dyn Fn(T) -> DMatrix<T> + Send + Sync>;
pub type PropagatorFn<T> = Arc<dyn Fn(T, T) -> DMatrix<T> + Send + Sync>;

/// System definition.
#[derive(Clone)]
pub enum System<T: Scalar> {
    /// `x' = rate x`.
    Scalar { rate: T },
    /// `x' = diag(rates) x`.
    Diagonal { rates: Vec<T> },
    /// Constant coefficient `x' = A x`, propagated by the matrix exponential.
    Autonomous { generator: DMatrix<T> },
    /// Propagator given in closed form; the formula must be valid for both
    /// time orders. The generator is optional and only used to build
    /// perturbed systems by integration.
    ClosedForm {
        dim: usize,
        label: String,
        propagator: PropagatorFn<T>,
        generator: Option<MatrixFn<T>>,
    },
    /// `x' = A(t) x` integrated with classical RK4.
    TimeVarying {
        dim: usize,
        label: String,
        generator: MatrixFn<T>,
    },
}

impl<T: Scalar> fmt::Debug for System<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Scalar { rate } => write!(f, "Scalar({rate})"),
            System::Diagonal { rates } => write!(f, "Diagonal({rates:?})"),
            System::Autonomous { generator } => write!(f, "Autonomous({generator:?})"),
            System::ClosedForm { label, dim, .. } => write!(f, "ClosedForm({label}, n={dim})"),
            System::TimeVarying { label, dim, .. } => write!(f, "TimeVarying({label}, n={dim})"),
        }
    }
}

impl<T: Scalar> System<T> {
    pub fn dim(&self) -> usize {
        match self {
            System::Scalar { .. } => 1,
            System::Diagonal { rates } => rates.len(),
            System::Autonomous { generator } => generator.nrows(),
            System::ClosedForm { dim, .. } | System::TimeVarying { dim, .. } => *dim,
        }
    }

    /// Whether propagators are evaluated by formula rather than integration.
    pub fn is_closed_form(&self) -> bool {
        !matches!(self, System::TimeVarying { .. })
    }

    /// `A(t)` when known.
    pub fn generator(&self, t: T) -> Option<DMatrix<T>> {
        match self {
            System::Scalar { rate } => Some(DMatrix::from_element(1, 1, *rate)),
            System::Diagonal { rates } => Some(DMatrix::from_diagonal(&DVector::from_vec(rates.clone()))),
            System::Autonomous { generator } => Some(generator.clone()),
            System::ClosedForm { generator, .. } => generator.as_ref().map(|g| g(t)),
            System::TimeVarying { generator, .. } => Some(generator(t)),
        }
    }

    /// Scalar family `exp(-3(t-s) + t cos t - s cos s - sin t + sin s)`, the
    /// classical example of a nonuniform exponential contraction.
    pub fn nonuniform_scalar() -> Self {
        let three = T::lit(3.0);
        let phase = move |t: T| t * t.cos() - t.sin();
        System::ClosedForm {
            dim: 1,
            label: "nonuniform_scalar".into(),
            propagator: Arc::new(move |t: T, s: T| {
                DMatrix::from_element(1, 1, (-(three * (t - s)) + phase(t) - phase(s)).exp())
            }),
            generator: Some(Arc::new(move |t: T| DMatrix::from_element(1, 1, -three - t * t.sin()))),
        }
    }
}

/// Growth constants `(K, c)` with `||T(t,s)x||_t <= K e^{c(t-s)} ||x||_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthBound<T: Scalar> {
    pub k: T,
    pub c: T,
}

/// Sample pairs `(t, s)` with `t >= s` used for growth fits.
#[derive(Clone, Debug)]
pub struct GrowthSampling<T: Scalar> {
    pub starts: Vec<T>,
    pub lags: Vec<T>,
}

impl<T: Scalar> GrowthSampling<T> {
    /// Start times spread over `[a, b - max_lag]`, lags `0, dl, .., max_lag`.
    pub fn uniform(a: T, b: T, n_starts: usize, max_lag: T, n_lags: usize) -> Self {
        let last = if b - max_lag > a { b - max_lag } else { a };
        let starts = spread(a, last, n_starts);
        let lags = spread(T::zero(), max_lag, n_lags);
        Self { starts, lags }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.starts
            .iter()
            .flat_map(move |&s| self.lags.iter().map(move |&l| (s + l, s)))
    }
}

pub(crate) fn spread<T: Scalar>(a: T, b: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1))
            .collect(),
    }
}

/// An evolution family together with the norm family it is measured in.
#[derive(Clone)]
pub struct EvolutionFamily<T: Scalar> {
    system: System<T>,
    h_int: T,
    growth: Option<GrowthBound<T>>,
    norms: NormFamily<T>,
}

impl<T: Scalar> fmt::Debug for EvolutionFamily<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionFamily")
            .field("system", &self.system)
            .field("h_int", &self.h_int)
            .field("growth", &self.growth)
            .field("norms", &self.norms)
            .finish()
    }
}

impl<T: Scalar> EvolutionFamily<T> {
    /// Family measured in constant (Euclidean) norms.
    pub fn new(system: System<T>, h_int: T) -> Result<Self> {
        if !(h_int > T::zero()) || !h_int.finite() {
            return Err(Error::InvalidInput(format!("integrator step {h_int} must be positive")));
        }
        let n = system.dim();
        if n == 0 {
            return Err(Error::InvalidInput("system dimension must be positive".into()));
        }
        if let System::Autonomous { generator } = &system {
            if !generator.is_square() {
                return Err(Error::InvalidInput("generator must be square".into()));
            }
        }
        Ok(Self {
            system,
            h_int,
            growth: None,
            norms: NormFamily::constant(n),
        })
    }

    pub fn with_norms(mut self, norms: NormFamily<T>) -> Result<Self> {
        if norms.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "norm family dimension {} != system dimension {}",
                norms.dim(),
                self.dim()
            )));
        }
        self.norms = norms;
        self.growth = None;
        Ok(self)
    }

    pub fn with_growth(mut self, growth: GrowthBound<T>) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn system(&self) -> &System<T> {
        &self.system
    }

    pub fn norms(&self) -> &NormFamily<T> {
        &self.norms
    }

    pub fn h_int(&self) -> T {
        self.h_int
    }

    pub fn growth(&self) -> Option<GrowthBound<T>> {
        self.growth
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Forward propagator `T(t, tau)`, `t >= tau`.
    pub fn propagator(&self, t: T, tau: T) -> Result<DMatrix<T>> {
        if !t.finite() || !tau.finite() {
            return Err(Error::InvalidInput("non-finite time".into()));
        }
        if t < tau {
            return Err(Error::Order(format!(
                "propagator needs t >= tau, got t = {t}, tau = {tau}"
            )));
        }
        self.transition(t, tau)
    }

    /// Flow map between any two times. Backward use is internal: it realizes
    /// inverses on invariant subbundles.
    pub(crate) fn transition(&self, t: T, s: T) -> Result<DMatrix<T>> {
        let n = self.dim();
        if t == s {
            return Ok(DMatrix::identity(n, n));
        }
        let m = match &self.system {
            System::Scalar { rate } => DMatrix::from_element(1, 1, (*rate * (t - s)).exp()),
            System::Diagonal { rates } => {
                DMatrix::from_diagonal(&DVector::from_iterator(n, rates.iter().map(|&r| (r * (t - s)).exp())))
            }
            System::Autonomous { generator } => (generator * (t - s)).exp(),
            System::ClosedForm { propagator, .. } => propagator(t, s),
            System::TimeVarying { generator, .. } => rk4(generator, s, t, self.h_int),
        };
        if m.iter().any(|x| !x.finite()) {
            return Err(Error::WindowTooLarge(format!("T({t}, {s}) is not finite")));
        }
        Ok(m)
    }

    /// `||T(t,s)T(s,tau) - T(t,tau)||` in the spectral norm.
    pub fn cocycle_residual(&self, tau: T, s: T, t: T) -> Result<T> {
        if !(tau <= s && s <= t) {
            return Err(Error::Order(format!("need tau <= s <= t, got ({tau}, {s}, {t})")));
        }
        let lhs = self.propagator(t, s)? * self.propagator(s, tau)?;
        let rhs = self.propagator(t, tau)?;
        Ok(spectral_norm(&(lhs - rhs)))
    }

    /// Operator norm of `T(t, tau)` from `||.||_tau` to `||.||_t`.
    pub fn family_norm(&self, t: T, tau: T) -> Result<T> {
        let m = self.propagator(t, tau)?;
        self.norms.operator_norm(t, tau, &m)
    }

    /// Least-squares fit of `log ||T(t,s)||` against `t - s`; the intercept is
    /// then raised so the bound covers every sample.
    pub fn estimate_growth_bound(&self, sampling: &GrowthSampling<T>) -> Result<GrowthBound<T>> {
        let pairs: Vec<(T, T)> = sampling.pairs().collect();
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty growth sampling grid".into()));
        }
        let logs: Vec<(T, T)> = pairs
            .par_iter()
            .map(|&(t, s)| Ok((t - s, self.family_norm(t, s)?.ln())))
            .collect::<Result<_>>()?;
        let xs: Vec<T> = logs.iter().map(|p| p.0).collect();
        let ys: Vec<T> = logs.iter().map(|p| p.1).collect();
        let (_, c) = linalg::linear_fit(&xs, &ys)?;
        let log_k = logs.iter().map(|&(d, l)| l - c * d).fold(T::zero(), |a, b| a.max(b));
        Ok(GrowthBound { k: log_k.exp(), c })
    }

    /// Propagators over the cells of a grid, `T(t_{i+1}, t_i)`.
    pub fn cell_propagators(&self, grid: &Grid<T>) -> Result<Vec<DMatrix<T>>> {
        (0..grid.cells())
            .into_par_iter()
            .map(|i| self.propagator(grid.node(i + 1), grid.node(i)))
            .collect()
    }

    /// Cached cell propagators for repeated compositions on one grid.
    pub fn cache(&self, grid: &Grid<T>) -> Result<PropagatorCache<T>> {
        Ok(PropagatorCache {
            grid: *grid,
            cells: self.cell_propagators(grid)?,
        })
    }
}

/// Cell propagators of a grid, composed on demand by the cocycle identity.
#[derive(Clone, Debug)]
pub struct PropagatorCache<T: Scalar> {
    grid: Grid<T>,
    cells: Vec<DMatrix<T>>,
}

impl<T: Scalar> PropagatorCache<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn cell(&self, i: usize) -> &DMatrix<T> {
        &self.cells[i]
    }

    pub fn cells(&self) -> &[DMatrix<T>] {
        &self.cells
    }

    /// `T(t_j, t_i)` for `j >= i`.
    pub fn between(&self, j: usize, i: usize) -> Result<DMatrix<T>> {
        if j < i {
            return Err(Error::Order(format!("node {j} precedes node {i}")));
        }
        let n = self.cells.first().map_or(1, |c| c.nrows());
        let mut m = DMatrix::identity(n, n);
        for k in i..j {
            m = &self.cells[k] * m;
        }
        Ok(m)
    }
}

fn rk4<T: Scalar>(a: &MatrixFn<T>, t0: T, t1: T, h_max: T) -> DMatrix<T> {
    let span = t1 - t0;
    let steps = (span.magnitude() / h_max - T::lit(1e-9)).ceil().to_f64_lossy().max(1.0) as usize;
    let h = span / T::from_usize_lossy(steps);
    let half = h * T::lit(0.5);
    let sixth = h / T::lit(6.0);
    let n = a(t0).nrows();
    let mut m = DMatrix::identity(n, n);
    let mut t = t0;
    for k in 0..steps {
        let a0 = a(t);
        let am = a(t + half);
        let a1 = a(t + h);
        let k1 = &a0 * &m;
        let k2 = &am * (&m + &k1 * half);
        let k3 = &am * (&m + &k2 * half);
        let k4 = &a1 * (&m + &k3 * h);
        m += (k1 + (k2 + k3) * T::lit(2.0) + k4) * sixth;
        t = t0 + h * T::from_usize_lossy(k + 1);
    }
    m
}
