//! Grid-sampled functions `R -> R^n`, their `L^p` / sup norms measured in a
//! family of norms, and the one-step residual of the variation-of-constants
//! identity `x(t) = T(t,s) x(s) + int_s^t T(t,r) y(r) dr`.
//!
//! Piecewise-continuous inputs keep both one-sided limits at jump nodes: the
//! stored node value is the left limit and an optional override holds the
//! right limit. Every cell quadrature uses `f(t_i+)` and `f(t_{i+1}-)`, so a
//! jump placed on a node costs no accuracy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::evolution::EvolutionFamily;
use crate::norm_family::NormFamily;
use crate::scalar::Scalar;

/// Uniform time grid `t_i = t0 + i h`, `i = 0..len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T: Scalar> {
    t0: T,
    h: T,
    len: usize,
}

impl<T: Scalar> Grid<T> {
    pub fn new(t0: T, h: T, len: usize) -> Result<Self> {
        if !(h > T::zero()) || !h.finite() || !t0.finite() {
            return Err(Error::InvalidGrid(format!(
                "step {h} and origin {t0} must be finite, step positive"
            )));
        }
        if len == 0 {
            return Err(Error::InvalidGrid("grid needs at least one node".into()));
        }
        Ok(Self { t0, h, len })
    }

    /// Grid covering `[a, b]` with step as close to `h` as keeps `b` on a node.
    pub fn spanning(a: T, b: T, h: T) -> Result<Self> {
        if !(b > a) {
            return Err(Error::InvalidGrid(format!("empty interval [{a}, {b}]")));
        }
        if !(h > T::zero()) {
            return Err(Error::InvalidGrid(format!("step {h} must be positive")));
        }
        let cells = ((b - a) / h - T::lit(1e-9)).ceil();
        let cells = cells.to_f64_lossy().max(1.0) as usize;
        Self::new(a, (b - a) / T::from_usize_lossy(cells), cells + 1)
    }

    /// Symmetric window `[-half_width, half_width]`.
    pub fn window(half_width: T, h: T) -> Result<Self> {
        Self::spanning(-half_width, half_width, h)
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn step(&self) -> T {
        self.h
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cells(&self) -> usize {
        self.len.saturating_sub(1)
    }

    pub fn end(&self) -> T {
        self.node(self.len - 1)
    }

    #[inline]
    pub fn node(&self, i: usize) -> T {
        self.t0 + self.h * T::from_usize_lossy(i)
    }

    pub fn nodes(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len).map(move |i| self.node(i))
    }

    /// Index of the node equal to `t` (within `1e-9 h`), if any.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let x = (t - self.t0) / self.h;
        let r = x.round();
        if (x - r).magnitude() > T::lit(1e-9) || r < T::zero() {
            return None;
        }
        let i = r.to_f64_lossy() as usize;
        (i < self.len).then_some(i)
    }

    /// Index of the last node `<= t`, clamped to the grid.
    pub fn floor_index(&self, t: T) -> usize {
        let x = ((t - self.t0) / self.h + T::lit(1e-9)).floor();
        if x < T::zero() {
            0
        } else {
            (x.to_f64_lossy() as usize).min(self.len - 1)
        }
    }

    pub fn same_as(&self, other: &Self) -> bool {
        self.len == other.len
            && (self.t0 - other.t0).magnitude() <= T::lit(1e-12) * (T::one() + self.t0.magnitude())
            && (self.h - other.h).magnitude() <= T::lit(1e-12) * self.h
    }

    pub fn contains(&self, t: T) -> bool {
        let tol = self.h * T::lit(1e-9);
        t >= self.t0 - tol && t <= self.end() + tol
    }
}

/// Integrability exponent `p` in `[1, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent<T: Scalar> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Exponent<T> {
    pub fn finite(p: T) -> Result<Self> {
        if !(p >= T::one()) || !p.finite() {
            return Err(Error::InvalidExponent(format!("{p}")));
        }
        Ok(Self::Finite(p))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinite)
    }

    /// `1/p`, with `1/inf = 0`.
    pub fn reciprocal(&self) -> T {
        match *self {
            Self::Finite(p) => T::one() / p,
            Self::Infinite => T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Finite(p) if !(p >= T::one()) || !p.finite() => Err(Error::InvalidExponent(format!("{p}"))),
            _ => Ok(()),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match *self {
            Self::Finite(p) => p.to_f64_lossy(),
            Self::Infinite => f64::INFINITY,
        }
    }
}

impl<T: Scalar> fmt::Display for Exponent<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(p) => write!(f, "{p}"),
            Self::Infinite => write!(f, "inf"),
        }
    }
}

impl<T: Scalar> FromStr for Exponent<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "∞") {
            return Ok(Self::Infinite);
        }
        let v: f64 = s.parse().map_err(|_| Error::InvalidExponent(s.to_string()))?;
        if v.is_infinite() && v > 0.0 {
            return Ok(Self::Infinite);
        }
        Self::finite(T::lit(v))
    }
}

/// Checks `p >= q` with both exponents valid.
pub fn validate_pair<T: Scalar>(p: Exponent<T>, q: Exponent<T>) -> Result<()> {
    p.validate()?;
    q.validate()?;
    if p.reciprocal() > q.reciprocal() {
        return Err(Error::InvalidPair {
            p: p.to_string(),
            q: q.to_string(),
            reason: "admissibility pairs require p >= q".into(),
        });
    }
    Ok(())
}

/// Scalar time profile of an input term.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile<T: Scalar> {
    /// `1` on the closed interval `[a, b]`.
    Indicator {
        a: T,
        b: T,
    },
    /// `exp(-rate (t - start))` for `t >= start`, zero before.
    ExpDecay {
        start: T,
        rate: T,
    },
    /// `exp(-rate |t - center|)`.
    TwoSidedExp {
        center: T,
        rate: T,
    },
    /// `sin(freq t + phase)` on `[a, b]`.
    Sine {
        freq: T,
        phase: T,
        a: T,
        b: T,
    },
    Constant,
}

impl<T: Scalar> Profile<T> {
    /// `(f(t-), f(t+))`.
    pub fn limits(&self, t: T) -> (T, T) {
        let one = T::one();
        let zero = T::zero();
        match *self {
            Profile::Indicator { a, b } => {
                let left = if t > a && t <= b { one } else { zero };
                let right = if t >= a && t < b { one } else { zero };
                (left, right)
            }
            Profile::ExpDecay { start, rate } => {
                let v = (-(rate * (t - start))).exp();
                let left = if t > start { v } else { zero };
                let right = if t >= start { v } else { zero };
                (left, right)
            }
            Profile::TwoSidedExp { center, rate } => {
                let v = (-(rate * (t - center).magnitude())).exp();
                (v, v)
            }
            Profile::Sine { freq, phase, a, b } => {
                let v = (freq * t + phase).sin();
                let left = if t > a && t <= b { v } else { zero };
                let right = if t >= a && t < b { v } else { zero };
                (left, right)
            }
            Profile::Constant => (one, one),
        }
    }

    /// Support as an interval, `None` when unbounded.
    pub fn support(&self) -> Option<(T, T)> {
        match *self {
            Profile::Indicator { a, b } | Profile::Sine { a, b, .. } => Some((a, b)),
            _ => None,
        }
    }
}

/// `y(t) = sum_k profile_k(t) * coeffs_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal<T: Scalar> {
    pub terms: Vec<(Profile<T>, DVector<T>)>,
}

impl<T: Scalar> Signal<T> {
    pub fn new(terms: Vec<(Profile<T>, DVector<T>)>) -> Self {
        Self { terms }
    }

    pub fn single(profile: Profile<T>, coeffs: DVector<T>) -> Self {
        Self {
            terms: vec![(profile, coeffs)],
        }
    }

    pub fn indicator(a: T, b: T, coeffs: DVector<T>) -> Self {
        Self::single(Profile::Indicator { a, b }, coeffs)
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|(_, c)| c.len())
    }

    pub fn limits(&self, t: T, dim: usize) -> (DVector<T>, DVector<T>) {
        let mut l = DVector::zeros(dim);
        let mut r = DVector::zeros(dim);
        for (p, c) in &self.terms {
            let (a, b) = p.limits(t);
            l.axpy(a, c, T::one());
            r.axpy(b, c, T::one());
        }
        (l, r)
    }

    /// Smallest interval containing every bounded support, `None` if some term
    /// is unbounded.
    pub fn support(&self) -> Option<(T, T)> {
        let mut lo = T::infinity();
        let mut hi = -T::infinity();
        for (p, _) in &self.terms {
            let (a, b) = p.support()?;
            if a < lo {
                lo = a;
            }
            if b > hi {
                hi = b;
            }
        }
        Some((lo, hi))
    }
}

/// Samples of a function on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction<T: Scalar> {
    grid: Grid<T>,
    values: Vec<DVector<T>>,
    right: BTreeMap<usize, DVector<T>>,
}

impl<T: Scalar> GridFunction<T> {
    pub fn new(grid: Grid<T>, values: Vec<DVector<T>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let dim = values[0].len();
        for (i, v) in values.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "sample {i} has dimension {} != {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.finite()) {
                return Err(Error::InvalidInput(format!("sample {i} is not finite")));
            }
        }
        Ok(Self {
            grid,
            values,
            right: BTreeMap::new(),
        })
    }

    pub fn zeros(grid: Grid<T>, dim: usize) -> Self {
        Self {
            grid,
            values: vec![DVector::zeros(dim); grid.len()],
            right: BTreeMap::new(),
        }
    }

    pub fn from_fn(grid: Grid<T>, f: impl Fn(T) -> DVector<T>) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    /// Samples a signal, keeping one-sided limits where they differ.
    pub fn from_signal(grid: Grid<T>, signal: &Signal<T>, dim: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        let mut right = BTreeMap::new();
        for (i, t) in grid.nodes().enumerate() {
            let (l, r) = signal.limits(t, dim);
            if l != r {
                right.insert(i, r);
            }
            values.push(l);
        }
        let mut f = Self::new(grid, values)?;
        f.right = right;
        Ok(f)
    }

    /// Overrides the right limit at node `i`.
    pub fn set_right_limit(&mut self, i: usize, v: DVector<T>) -> Result<()> {
        if i >= self.grid.len() || v.len() != self.dim() {
            return Err(Error::InvalidInput(format!("right limit at node {i} out of range")));
        }
        if self.values[i] == v {
            self.right.remove(&i);
        } else {
            self.right.insert(i, v);
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Node value (left limit at jump nodes).
    pub fn value(&self, i: usize) -> &DVector<T> {
        &self.values[i]
    }

    pub fn right_value(&self, i: usize) -> &DVector<T> {
        self.right.get(&i).unwrap_or(&self.values[i])
    }

    pub fn values(&self) -> &[DVector<T>] {
        &self.values
    }

    pub fn jump_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.right.keys().copied()
    }

    pub fn has_jumps(&self) -> bool {
        !self.right.is_empty()
    }

    /// Value at a node time; `None` if `t` is not a node.
    pub fn at(&self, t: T) -> Option<&DVector<T>> {
        self.grid.index_of(t).map(|i| &self.values[i])
    }

    pub fn map_values(&self, f: impl Fn(usize, &DVector<T>) -> DVector<T>) -> Self {
        let values = self.values.iter().enumerate().map(|(i, v)| f(i, v)).collect();
        let right = self.right.iter().map(|(&i, v)| (i, f(i, v))).collect();
        Self {
            grid: self.grid,
            values,
            right,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map_values(|_, v| v * s)
    }

    /// `a * self + b * other` on a shared grid.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if !self.grid.same_as(&other.grid) || self.dim() != other.dim() {
            return Err(Error::GridMismatch("combining functions on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * a + y * b)
            .collect();
        let mut right = BTreeMap::new();
        for &i in self.right.keys().chain(other.right.keys()) {
            right.insert(i, self.right_value(i) * a + other.right_value(i) * b);
        }
        Ok(Self {
            grid: self.grid,
            values,
            right,
        })
    }

    /// Largest nodewise Euclidean distance (both one-sided limits).
    pub fn max_distance(&self, other: &Self) -> Result<T> {
        let d = self.combine(T::one(), other, -T::one())?;
        let mut m = T::zero();
        for i in 0..d.len() {
            let a = d.value(i).norm();
            let b = d.right_value(i).norm();
            m = m.max(a).max(b);
        }
        Ok(m)
    }

    /// Largest nodewise distance measured in the family norms.
    pub fn max_distance_in(&self, other: &Self, norms: &NormFamily<T>) -> Result<T> {
        let d = self.combine(T::one(), other, -T::one())?;
        d.sup_norm(norms)
    }

    /// `ess sup ||f(t)||_t`, realized as the max over node values and right limits.
    pub fn sup_norm(&self, norms: &NormFamily<T>) -> Result<T> {
        let mut m = T::zero();
        for (i, v) in self.values.iter().enumerate() {
            m = m.max(norms.norm_at(self.grid.node(i), v)?);
        }
        for (&i, v) in &self.right {
            m = m.max(norms.norm_at(self.grid.node(i), v)?);
        }
        Ok(m)
    }

    /// `(int ||f(t)||_t^p dt)^{1/p}` by composite trapezoid with one-sided
    /// cell endpoints; `p = inf` is the sup norm.
    pub fn lp_norm(&self, norms: &NormFamily<T>, p: Exponent<T>) -> Result<T> {
        p.validate()?;
        let p = match p {
            Exponent::Infinite => return self.sup_norm(norms),
            Exponent::Finite(p) => p,
        };
        let h = self.grid.step();
        let mut left_pow = Vec::with_capacity(self.len());
        let mut right_pow = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let t = self.grid.node(i);
            let l = norms.norm_at(t, &self.values[i])?;
            left_pow.push(l.powf(p));
            right_pow.push(match self.right.get(&i) {
                Some(r) => norms.norm_at(t, r)?.powf(p),
                None => l.powf(p),
            });
        }
        let mut acc = T::zero();
        for i in 0..self.grid.cells() {
            acc += h * T::lit(0.5) * (right_pow[i] + left_pow[i + 1]);
        }
        Ok(acc.powf(T::one() / p))
    }

    /// Norm on `L^p ∩ C_b`: `max(||f||_p, ||f||_inf)`.
    pub fn y1_norm(&self, norms: &NormFamily<T>, p: Exponent<T>) -> Result<T> {
        let lp = self.lp_norm(norms, p)?;
        let sup = self.sup_norm(norms)?;
        Ok(lp.max(sup))
    }

    /// Largest consecutive jump `||x_{i+1} - x_i||` in the base norm.
    pub fn max_consecutive_jump(&self) -> T {
        (0..self.grid.cells())
            .map(|i| (&self.values[i + 1] - self.right_value(i)).norm())
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Writes `t,x1,..,xn` rows with 17 significant digits; a jump node is
    /// written twice, left limit first.
    pub fn to_csv(&self) -> String {
        let n = self.dim();
        let mut out = String::from("t");
        for k in 1..=n {
            out.push_str(&format!(",x{k}"));
        }
        out.push('\n');
        let row = |out: &mut String, t: T, v: &DVector<T>| {
            out.push_str(&format!("{:.16e}", t));
            for x in v.iter() {
                out.push_str(&format!(",{:.16e}", x));
            }
            out.push('\n');
        };
        for i in 0..self.len() {
            let t = self.grid.node(i);
            row(&mut out, t, &self.values[i]);
            if let Some(r) = self.right.get(&i) {
                row(&mut out, t, r);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let n = cols.len() - 1;
        let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
        for (ln, line) in lines.enumerate() {
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?;
            if fields.len() != n + 1 {
                return Err(Error::Parse(format!("line {}: expected {} fields", ln + 2, n + 1)));
            }
            rows.push((fields[0], fields[1..].to_vec()));
        }
        let mut times: Vec<f64> = Vec::new();
        let mut values: Vec<DVector<T>> = Vec::new();
        let mut right = BTreeMap::new();
        for (t, v) in rows {
            let v = DVector::from_iterator(n, v.into_iter().map(T::lit));
            if times.last() == Some(&t) {
                right.insert(times.len() - 1, v);
            } else {
                times.push(t);
                values.push(v);
            }
        }
        if times.is_empty() {
            return Err(Error::Parse("CSV has no rows".into()));
        }
        let grid = if times.len() == 1 {
            Grid::new(T::lit(times[0]), T::one(), 1)?
        } else {
            let h = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
            for w in times.windows(2) {
                if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
                    return Err(Error::InvalidGrid("CSV times are not uniform".into()));
                }
            }
            Grid::new(T::lit(times[0]), T::lit(h), times.len())?
        };
        let mut f = Self::new(grid, values)?;
        f.right = right;
        Ok(f)
    }
}

/// Max over cells of `||x_{i+1} - T_i x_i - (h/2)(T_i y_i + y_{i+1})||_{t_{i+1}}`
/// with `T_i = T(t_{i+1}, t_i)`.
pub fn mild_residual<T: Scalar>(x: &GridFunction<T>, y: &GridFunction<T>, family: &EvolutionFamily<T>) -> Result<T> {
    if !x.grid().same_as(y.grid()) {
        return Err(Error::GridMismatch("x and y must share a grid".into()));
    }
    if x.dim() != family.dim() || y.dim() != family.dim() {
        return Err(Error::GridMismatch(
            "dimension differs from the evolution family".into(),
        ));
    }
    let cells = family.cell_propagators(x.grid())?;
    let h = x.grid().step();
    let half = h * T::lit(0.5);
    let norms = family.norms();
    let mut worst = T::zero();
    for (i, phi) in cells.iter().enumerate() {
        let quad = (phi * y.right_value(i) + y.value(i + 1)) * half;
        let r = x.value(i + 1) - phi * x.right_value(i) - quad;
        worst = worst.max(norms.norm_at(x.grid().node(i + 1), &r)?);
    }
    Ok(worst)
}
