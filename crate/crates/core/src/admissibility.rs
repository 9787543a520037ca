//! Discrete admissibility test.
//!
//! On a grid `t_0 < .. < t_N` the mild equation becomes the block system
//! `x_{i+1} - T_i x_i = (h/2)(T_i y_i+ + y_{i+1}-)`, `T_i = T(t_{i+1}, t_i)`.
//! Unknowns are scaled by the norm weights, `z_i = W(t_i) x_i`, so Euclidean
//! quantities of `z` approximate family norms of `x`.
//!
//! A bounded solution on the truncated window is selected either by
//! projected boundary conditions (left end in the unstable subspace, right end
//! in the stable subspace, both bootstrapped from singular-subspace splitting
//! of long propagators taken outside the window) or as the least-norm solution
//! of the underdetermined system.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::evolution::EvolutionFamily;
use crate::function_space::{mild_residual, validate_pair, Exponent, Grid, GridFunction, Signal};
use crate::linalg::{self, orthogonal_complement, smallest_eigenpair_spd, BandMatrix, BandedLu};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Projected,
    LeastNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Admissible,
    NotAdmissible,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Admissible => "admissible",
            Verdict::NotAdmissible => "not-admissible",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Natural log of the largest finite value of `T`.
fn log_max<T: Scalar>() -> T {
    if T::lit(1e300).finite() {
        T::lit(709.0)
    } else {
        T::lit(88.0)
    }
}

/// Assembled discrete operator on one grid.
#[derive(Clone, Debug)]
pub struct DiscreteH<T: Scalar> {
    family: EvolutionFamily<T>,
    grid: Grid<T>,
    cells: Vec<DMatrix<T>>,
    weights: Vec<DMatrix<T>>,
    weights_inv: Vec<DMatrix<T>>,
    scaled: Vec<DMatrix<T>>,
}

/// Builds the discrete operator. Fails with [`Error::WindowTooLarge`] when
/// the accumulated propagator growth across the window leaves float range.
pub fn assemble_h<T: Scalar>(family: &EvolutionFamily<T>, grid: Grid<T>) -> Result<DiscreteH<T>> {
    if grid.len() < 2 {
        return Err(Error::InvalidGrid(
            "the discrete operator needs at least two nodes".into(),
        ));
    }
    let cells = family.cell_propagators(&grid)?;
    let log_growth = cells.iter().fold(T::zero(), |acc, c| {
        acc + linalg::spectral_norm(c).max(T::lit(1e-300)).ln().max(T::zero())
    });
    if log_growth > log_max::<T>() * T::lit(0.9) {
        return Err(Error::WindowTooLarge(format!(
            "propagator growth e^{log_growth} over [{}, {}]",
            grid.t0(),
            grid.end()
        )));
    }
    let norms = family.norms();
    let weights: Vec<DMatrix<T>> = (0..grid.len())
        .into_par_iter()
        .map(|i| norms.weight_matrix(grid.node(i)))
        .collect::<Result<_>>()?;
    let weights_inv: Vec<DMatrix<T>> = weights.iter().map(linalg::inverse).collect::<Result<_>>()?;
    let scaled = (0..grid.cells())
        .map(|i| &weights[i + 1] * &cells[i] * &weights_inv[i])
        .collect();
    Ok(DiscreteH {
        family: family.clone(),
        grid,
        cells,
        weights,
        weights_inv,
        scaled,
    })
}

impl<T: Scalar> DiscreteH<T> {
    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn family(&self) -> &EvolutionFamily<T> {
        &self.family
    }

    pub fn cell(&self, i: usize) -> &DMatrix<T> {
        &self.cells[i]
    }

    pub fn cells(&self) -> &[DMatrix<T>] {
        &self.cells
    }

    /// Row blocks `x_{i+1} - T_i x_i+ - (h/2)(T_i y_i+ + y_{i+1}-)`.
    pub fn apply(&self, x: &GridFunction<T>, y: &GridFunction<T>) -> Result<Vec<DVector<T>>> {
        self.check(x)?;
        self.check(y)?;
        let half = self.grid.step() * T::lit(0.5);
        Ok((0..self.grid.cells())
            .map(|i| {
                let phi = &self.cells[i];
                x.value(i + 1) - phi * x.right_value(i) - (phi * y.right_value(i) + y.value(i + 1)) * half
            })
            .collect())
    }

    /// Homogeneous part `x -> (x_{i+1} - T_i x_i)_i` on node vectors.
    pub fn apply_homogeneous(&self, x: &[DVector<T>]) -> Vec<DVector<T>> {
        (0..self.grid.cells())
            .map(|i| &x[i + 1] - &self.cells[i] * &x[i])
            .collect()
    }

    /// Adjoint of [`DiscreteH::apply_homogeneous`]:
    /// `(A^T r)_i = r_{i-1} - T_i^T r_i`.
    pub fn apply_homogeneous_adjoint(&self, r: &[DVector<T>]) -> Vec<DVector<T>> {
        let n = self.dim();
        let mut out = vec![DVector::zeros(n); self.grid.len()];
        for (i, ri) in r.iter().enumerate() {
            out[i + 1] += ri;
            out[i] -= self.cells[i].transpose() * ri;
        }
        out
    }

    /// Matrix route for the feedback form: rows of
    /// `x_{i+1} - T_i x_i - (h/2)(T_i B_i x_i + B_{i+1} x_{i+1})`, unscaled.
    pub fn feedback_band(&self, b: &[DMatrix<T>]) -> Result<BandMatrix<T>> {
        let n = self.dim();
        if b.len() != self.grid.len() {
            return Err(Error::GridMismatch("one feedback matrix per node required".into()));
        }
        let half = self.grid.step() * T::lit(0.5);
        let id = DMatrix::identity(n, n);
        let mut band = BandMatrix::zeros(n * self.grid.cells(), n * self.grid.len(), n - 1, 2 * n - 1);
        for i in 0..self.grid.cells() {
            let phi = &self.cells[i];
            band.add_block(n * i, n * i, &(-(phi + phi * &b[i] * half)));
            band.add_block(n * i, n * (i + 1), &(&id - &b[i + 1] * half));
        }
        Ok(band)
    }

    /// `(h/2)(T_i y_i+ + y_{i+1}-)` per cell.
    pub fn rhs(&self, y: &GridFunction<T>) -> Result<Vec<DVector<T>>> {
        self.check(y)?;
        let half = self.grid.step() * T::lit(0.5);
        Ok((0..self.grid.cells())
            .map(|i| (&self.cells[i] * y.right_value(i) + y.value(i + 1)) * half)
            .collect())
    }

    /// Cell rows in scaled variables: block `-W_{i+1} T_i W_i^{-1}` then `I`.
    pub fn scaled_band(&self) -> BandMatrix<T> {
        let n = self.dim();
        let id = DMatrix::identity(n, n);
        let mut band = BandMatrix::zeros(n * self.grid.cells(), n * self.grid.len(), n - 1, 2 * n - 1);
        for i in 0..self.grid.cells() {
            band.add_block(n * i, n * i, &(-&self.scaled[i]));
            band.add_block(n * i, n * (i + 1), &id);
        }
        band
    }

    /// Size of the discrete operator, `||A||_inf / h` in scaled variables.
    pub fn operator_norm(&self) -> T {
        self.scaled_band().norm_inf() / self.grid.step()
    }

    /// Smallest singular value of the homogeneous map restricted to
    /// `x_0 = x_N = 0`, divided by `h`, with the matching unit singular
    /// vector (scaled variables, interior nodes `1..N-1`).
    pub fn interior_sigma_min(&self) -> Result<(T, Vec<T>)> {
        let n = self.dim();
        let cells = self.grid.cells();
        if cells < 2 {
            return Err(Error::InvalidGrid("interior map needs at least three nodes".into()));
        }
        let id = DMatrix::identity(n, n);
        let mut band = BandMatrix::zeros(n * cells, n * (cells - 1), 2 * n - 1, n - 1);
        for i in 0..cells {
            if i >= 1 {
                band.add_block(n * i, n * (i - 1), &(-&self.scaled[i]));
            }
            if i + 1 < cells {
                band.add_block(n * i, n * i, &id);
            }
        }
        let normal = band.normal_product();
        let (lambda, v) = smallest_eigenpair_spd(&normal, 400, T::lit(1e-10))?;
        Ok((lambda.max(T::zero()).sqrt() / self.grid.step(), v))
    }

    fn check(&self, f: &GridFunction<T>) -> Result<()> {
        if !f.grid().same_as(&self.grid) || f.dim() != self.dim() {
            return Err(Error::GridMismatch(
                "function does not live on the operator grid".into(),
            ));
        }
        Ok(())
    }

    fn scaled_rhs(&self, y: &GridFunction<T>) -> Result<Vec<T>> {
        let r = self.rhs(y)?;
        let mut out = Vec::with_capacity(r.len() * self.dim());
        for (i, ri) in r.iter().enumerate() {
            out.extend((&self.weights[i + 1] * ri).iter().copied());
        }
        Ok(out)
    }

    /// Cell right-hand sides from scaled input node values (no jumps).
    fn rhs_from_scaled(&self, yz: &[T]) -> Vec<T> {
        let n = self.dim();
        let half = self.grid.step() * T::lit(0.5);
        let mut out = vec![T::zero(); n * self.grid.cells()];
        for i in 0..self.grid.cells() {
            let yi = DVector::from_column_slice(&yz[n * i..n * (i + 1)]);
            let r = &self.scaled[i] * yi * half;
            for k in 0..n {
                out[n * i + k] = r[k] + yz[n * (i + 1) + k] * half;
            }
        }
        out
    }

    fn rhs_from_scaled_adjoint(&self, c: &[T]) -> Vec<T> {
        let n = self.dim();
        let half = self.grid.step() * T::lit(0.5);
        let mut out = vec![T::zero(); n * self.grid.len()];
        for i in 0..self.grid.cells() {
            let ci = DVector::from_column_slice(&c[n * i..n * (i + 1)]);
            let r = self.scaled[i].transpose() * ci * half;
            for k in 0..n {
                out[n * i + k] += r[k];
                out[n * (i + 1) + k] += c[n * i + k] * half;
            }
        }
        out
    }

    fn unscale(&self, z: &[T]) -> Result<GridFunction<T>> {
        let n = self.dim();
        let values = (0..self.grid.len())
            .map(|i| &self.weights_inv[i] * DVector::from_column_slice(&z[n * i..n * (i + 1)]))
            .collect();
        GridFunction::new(self.grid, values)
    }
}

/// Stable and unstable subspaces at the window ends.
#[derive(Clone, Debug)]
pub struct BoundarySplit<T: Scalar> {
    /// Orthonormal basis of the unstable subspace at the left end.
    pub unstable_left: DMatrix<T>,
    /// Orthonormal basis of the stable subspace at the right end.
    pub stable_right: DMatrix<T>,
    pub horizon: T,
    /// Singular values of `T(t_0, t_0 - L)` and `T(t_N + L, t_N)`.
    pub left_singular_values: Vec<T>,
    pub right_singular_values: Vec<T>,
}

impl<T: Scalar> BoundarySplit<T> {
    pub fn is_complementary(&self) -> bool {
        self.unstable_left.ncols() + self.stable_right.ncols() == self.unstable_left.nrows()
    }
}

/// Unstable directions at `t_left`: left singular vectors of
/// `T(t_left, t_left - L)` with `sigma > 1`. Stable directions at `t_right`:
/// right singular vectors of `T(t_right + L, t_right)` with `sigma < 1`.
pub fn bootstrap_split<T: Scalar>(
    family: &EvolutionFamily<T>,
    t_left: T,
    t_right: T,
    horizon: T,
) -> Result<BoundarySplit<T>> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidInput("bootstrap horizon must be positive".into()));
    }
    let n = family.dim();
    let tol = T::lit(1e-8);
    let back = family.propagator(t_left, t_left - horizon)?;
    let svd = back.svd(true, false);
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] > T::one() + tol).collect();
    let mut unstable_left = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        unstable_left.set_column(c, &u.column(i));
    }
    let fwd = family.propagator(t_right + horizon, t_right)?;
    let svd_r = fwd.svd(false, true);
    let vt = svd_r.v_t.expect("requested V^T");
    let keep_r: Vec<usize> = (0..n).filter(|&i| svd_r.singular_values[i] < T::one() - tol).collect();
    let mut stable_right = DMatrix::zeros(n, keep_r.len());
    for (c, &i) in keep_r.iter().enumerate() {
        stable_right.set_column(c, &vt.row(i).transpose());
    }
    Ok(BoundarySplit {
        unstable_left,
        stable_right,
        horizon,
        left_singular_values: svd.singular_values.iter().copied().collect(),
        right_singular_values: svd_r.singular_values.iter().copied().collect(),
    })
}

/// Factorized bounded-solution operator on one window.
#[derive(Clone, Debug)]
pub struct BoundedSolver<T: Scalar> {
    op: DiscreteH<T>,
    mode: Boundary,
    lu: BandedLu<T>,
    cell_band: BandMatrix<T>,
    left_rows: usize,
    split: Option<BoundarySplit<T>>,
}

impl<T: Scalar> BoundedSolver<T> {
    /// Factorizes the closed system. In projected mode a split whose
    /// dimensions do not add up to `n`, or a singular closure, is reported as
    /// [`Error::Precondition`] so callers can mark the run inconclusive.
    pub fn new(family: &EvolutionFamily<T>, grid: Grid<T>, mode: Boundary, horizon: T) -> Result<Self> {
        let op = assemble_h(family, grid)?;
        Self::from_operator(op, mode, horizon)
    }

    pub fn from_operator(op: DiscreteH<T>, mode: Boundary, horizon: T) -> Result<Self> {
        let n = op.dim();
        let cell_band = op.scaled_band();
        match mode {
            Boundary::LeastNorm => {
                let gram = cell_band.gram_product();
                let lu = BandedLu::factor(&gram)?;
                Ok(Self {
                    op,
                    mode,
                    lu,
                    cell_band,
                    left_rows: 0,
                    split: None,
                })
            }
            Boundary::Projected => {
                let grid = op.grid;
                let split = bootstrap_split(&op.family, grid.t0(), grid.end(), horizon)?;
                if !split.is_complementary() {
                    return Err(Error::Precondition(format!(
                        "boundary split has dim U + dim S = {} + {} != {n}",
                        split.unstable_left.ncols(),
                        split.stable_right.ncols()
                    )));
                }
                let left = orthogonal_complement(&split.unstable_left);
                let right = orthogonal_complement(&split.stable_right);
                let a = left.ncols();
                let cells = grid.cells();
                let size = n * grid.len();
                let mut band = BandMatrix::zeros(size, size, 2 * n - 1, 2 * n - 1);
                let last = grid.len() - 1;
                for r in 0..a {
                    let row = left.column(r).transpose() * &op.weights_inv[0];
                    for k in 0..n {
                        band.set(r, k, row[k]);
                    }
                }
                for i in 0..cells {
                    band.add_block(a + n * i, n * i, &(-&op.scaled[i]));
                    band.add_block(a + n * i, n * (i + 1), &DMatrix::identity(n, n));
                }
                for r in 0..right.ncols() {
                    let row = right.column(r).transpose() * &op.weights_inv[last];
                    for k in 0..n {
                        band.set(a + n * cells + r, n * last + k, row[k]);
                    }
                }
                let lu = BandedLu::factor(&band).map_err(|e| Error::Precondition(format!("singular closure: {e}")))?;
                if lu.pivot_ratio() < T::lit(1e-13) {
                    return Err(Error::Precondition(format!(
                        "ill-conditioned closure, pivot ratio {:e}",
                        lu.pivot_ratio()
                    )));
                }
                Ok(Self {
                    op,
                    mode,
                    lu,
                    cell_band,
                    left_rows: a,
                    split: Some(split),
                })
            }
        }
    }

    pub fn operator(&self) -> &DiscreteH<T> {
        &self.op
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.op.grid
    }

    pub fn mode(&self) -> Boundary {
        self.mode
    }

    pub fn split(&self) -> Option<&BoundarySplit<T>> {
        self.split.as_ref()
    }

    pub fn pivot_ratio(&self) -> T {
        self.lu.pivot_ratio()
    }

    /// Bounded solution of the discrete mild equation for input `y`.
    pub fn solve(&self, y: &GridFunction<T>) -> Result<GridFunction<T>> {
        let rz = self.op.scaled_rhs(y)?;
        let z = self.solve_cells(&rz);
        self.op.unscale(&z)
    }

    fn solve_cells(&self, rz: &[T]) -> Vec<T> {
        match self.mode {
            Boundary::LeastNorm => {
                let u = self.lu.solve(rz);
                self.cell_band.matvec_transpose(&u)
            }
            Boundary::Projected => {
                let mut b = vec![T::zero(); self.lu.dim()];
                b[self.left_rows..self.left_rows + rz.len()].copy_from_slice(rz);
                self.lu.solve(&b)
            }
        }
    }

    fn solve_cells_adjoint(&self, z: &[T]) -> Vec<T> {
        match self.mode {
            Boundary::LeastNorm => {
                let u = self.cell_band.matvec(z);
                self.lu.solve(&u)
            }
            Boundary::Projected => {
                let c = self.lu.solve_transpose(z);
                let m = self.cell_band.nrows();
                c[self.left_rows..self.left_rows + m].to_vec()
            }
        }
    }

    /// Scaled solution operator `yz -> z` on node values.
    fn apply_g(&self, yz: &[T]) -> Vec<T> {
        self.solve_cells(&self.op.rhs_from_scaled(yz))
    }

    fn apply_g_adjoint(&self, z: &[T]) -> Vec<T> {
        self.op.rhs_from_scaled_adjoint(&self.solve_cells_adjoint(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelTrend {
    /// `sigma_min` stays bounded away from zero as the window grows.
    Bounded,
    /// `sigma_min` decays toward zero.
    Decaying,
    /// Neither pattern within noise.
    Irregular,
}

impl KernelTrend {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelTrend::Bounded => "bounded",
            KernelTrend::Decaying => "decaying",
            KernelTrend::Irregular => "irregular",
        }
    }
}

/// Outcome of [`kernel_check`].
#[derive(Clone, Debug)]
pub struct KernelCheck<T: Scalar> {
    /// `(T_w, sigma_min)` per window, increasing `T_w`.
    pub sweep: Vec<(T, T)>,
    pub trend: KernelTrend,
    /// Bounded homogeneous solution on the largest window, normalized to unit
    /// sup norm.
    pub witness: Option<GridFunction<T>>,
    /// `sup / inf` of the witness family norms over the grid.
    pub witness_growth: Option<T>,
}

impl<T: Scalar> KernelCheck<T> {
    /// `sigma_min` on the largest window.
    pub fn sigma_min(&self) -> T {
        self.sweep.last().map_or(T::zero(), |s| s.1)
    }
}

/// Classifies the window sweep: bounded when
/// `sigma(T_max)/sigma(T_min) >= (T_min/T_max)^{1/2}`, decaying when below
/// that and non-increasing within 5% noise, irregular otherwise.
pub fn classify_trend<T: Scalar>(sweep: &[(T, T)]) -> KernelTrend {
    let (Some(first), Some(last)) = (sweep.first(), sweep.last()) else {
        return KernelTrend::Irregular;
    };
    if first.1 <= T::zero() {
        return KernelTrend::Decaying;
    }
    let ratio = last.1 / first.1;
    if ratio >= (first.0 / last.0).sqrt() {
        return KernelTrend::Bounded;
    }
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1 * T::lit(1.05));
    if monotone {
        KernelTrend::Decaying
    } else {
        KernelTrend::Irregular
    }
}

/// Smallest singular values of the Dirichlet-restricted homogeneous map over
/// symmetric windows `[-T_w, T_w]`, and a bounded witness when they decay.
pub fn kernel_check<T: Scalar>(
    family: &EvolutionFamily<T>,
    h: T,
    sweep: &[T],
    witness_growth_max: T,
) -> Result<KernelCheck<T>> {
    if sweep.len() < 2 {
        return Err(Error::InvalidInput(
            "kernel check needs at least two window lengths".into(),
        ));
    }
    let mut windows: Vec<T> = sweep.to_vec();
    windows.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let results: Vec<(T, T, Vec<T>, DiscreteH<T>)> = windows
        .iter()
        .map(|&tw| {
            let op = assemble_h(family, Grid::window(tw, h)?)?;
            let (s, v) = op.interior_sigma_min()?;
            Ok((tw, s, v, op))
        })
        .collect::<Result<_>>()?;
    let sweep: Vec<(T, T)> = results.iter().map(|r| (r.0, r.1)).collect();
    let trend = classify_trend(&sweep);
    let (_, _, v, op) = results.last().expect("nonempty sweep");
    let (witness, witness_growth) = match build_witness(op, v)? {
        Some((w, g)) if g <= witness_growth_max => (Some(w), Some(g)),
        Some((_, g)) => (None, Some(g)),
        None => (None, None),
    };
    Ok(KernelCheck {
        sweep,
        trend,
        witness,
        witness_growth,
    })
}

/// Homogeneous solution through the largest entry of the near-kernel vector.
fn build_witness<T: Scalar>(op: &DiscreteH<T>, v: &[T]) -> Result<Option<(GridFunction<T>, T)>> {
    let n = op.dim();
    let interior = v.len() / n;
    let Some(j) = (0..interior).max_by(|&a, &b| {
        let na = DVector::from_column_slice(&v[n * a..n * (a + 1)]).norm();
        let nb = DVector::from_column_slice(&v[n * b..n * (b + 1)]).norm();
        na.partial_cmp(&nb).unwrap_or(std::cmp::Ordering::Equal)
    }) else {
        return Ok(None);
    };
    let node = j + 1;
    let start = &op.weights_inv[node] * DVector::from_column_slice(&v[n * j..n * (j + 1)]);
    if start.norm() == T::zero() {
        return Ok(None);
    }
    let len = op.grid.len();
    let mut values = vec![DVector::zeros(n); len];
    values[node] = start;
    for i in node..len - 1 {
        values[i + 1] = &op.cells[i] * &values[i];
    }
    for i in (0..node).rev() {
        let Some(prev) = op.cells[i].clone().lu().solve(&values[i + 1]) else {
            return Ok(None);
        };
        values[i] = prev;
    }
    if values.iter().any(|x| x.iter().any(|c| !c.finite())) {
        return Ok(None);
    }
    let norms = op.family.norms();
    let mut sup = T::zero();
    let mut inf = T::infinity();
    for (i, x) in values.iter().enumerate() {
        let nx = norms.norm_at(op.grid.node(i), x)?;
        sup = sup.max(nx);
        inf = inf.min(nx);
    }
    if !(inf > T::zero()) {
        return Ok(None);
    }
    let w = GridFunction::new(op.grid, values)?.scaled(T::one() / sup);
    Ok(Some((w, sup / inf)))
}

/// Lower estimate of the solution-operator norm `||x||_{Y1} / ||y||_q`.
#[derive(Clone, Debug)]
pub struct GNormEstimate<T: Scalar> {
    pub estimate: T,
    pub probe_max: T,
    pub power_max: T,
    pub probes: usize,
    pub power_iterations: usize,
    /// Power iteration stopped without reaching relative change `< 1e-3`.
    pub unconverged: bool,
    /// Largest mild residual over the probe solves.
    pub residual: T,
}

/// Probe inputs: one constant input per coordinate plus `count` random
/// indicators with node-aligned jumps.
pub fn probe_suite<T: Scalar>(grid: &Grid<T>, dim: usize, count: usize, seed: u64) -> Result<Vec<GridFunction<T>>> {
    let mut out = Vec::with_capacity(count + dim);
    for k in 0..dim {
        let mut c = DVector::zeros(dim);
        c[k] = T::one();
        out.push(GridFunction::from_fn(*grid, |_| c.clone())?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = grid.cells();
    for _ in 0..count {
        let max_len = cells.min((T::lit(4.0) / grid.step()).to_f64_lossy() as usize).max(1);
        let min_len = ((T::lit(0.5) / grid.step()).to_f64_lossy() as usize).clamp(1, max_len);
        let len = rng.gen_range(min_len..=max_len);
        let start = rng.gen_range(0..=cells - len);
        let mut c = DVector::from_iterator(dim, (0..dim).map(|_| T::lit(rng.gen_range(-1.0..1.0))));
        if c.norm() == T::zero() {
            c[0] = T::one();
        }
        let c = c.normalize();
        let signal = Signal::indicator(grid.node(start), grid.node(start + len), c);
        out.push(GridFunction::from_signal(*grid, &signal, dim)?);
    }
    Ok(out)
}

/// `max ||G y||_{Y1} / ||y||_q` over the probe suite and a power iteration
/// on `G^T G` in the scaled variables.
pub fn estimate_g_norm<T: Scalar>(
    solver: &BoundedSolver<T>,
    p: Exponent<T>,
    q: Exponent<T>,
    probes: &[GridFunction<T>],
    max_power_iter: usize,
) -> Result<GNormEstimate<T>> {
    let family = solver.op.family.clone();
    let norms = family.norms().clone();
    let ratios: Vec<(T, T)> = probes
        .par_iter()
        .map(|y| {
            let den = y.lp_norm(&norms, q)?;
            if den <= T::zero() {
                return Ok(None);
            }
            let x = solver.solve(y)?;
            let res = mild_residual(&x, y, &family)?;
            Ok(Some((x.y1_norm(&norms, p)? / den, res)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let probe_max = ratios.iter().map(|r| r.0).fold(T::zero(), |a, b| a.max(b));
    let residual = ratios.iter().map(|r| r.1).fold(T::zero(), |a, b| a.max(b));

    let n = solver.op.dim();
    let len = solver.op.grid.len();
    let mut yz: Vec<T> = (0..n * len)
        .map(|i| T::one() + T::lit(0.25) * (T::lit(0.37) * T::from_usize_lossy(i)).sin())
        .collect();
    let mut power_max = T::zero();
    let mut last = T::zero();
    let mut iterations = 0;
    let mut unconverged = true;
    for it in 0..max_power_iter {
        iterations = it + 1;
        let z = solver.apply_g(&yz);
        let y = solver.op.unscale(&yz)?;
        let x = solver.op.unscale(&z)?;
        let den = y.lp_norm(&norms, q)?;
        if den <= T::zero() {
            break;
        }
        let ratio = x.y1_norm(&norms, p)? / den;
        power_max = power_max.max(ratio);
        if it > 0 && (ratio - last).magnitude() < T::lit(1e-3) * ratio {
            unconverged = false;
            break;
        }
        last = ratio;
        let next = solver.apply_g_adjoint(&z);
        let norm = next.iter().fold(T::zero(), |a, &b| a + b * b).sqrt();
        if !(norm > T::zero()) || !norm.finite() {
            break;
        }
        yz = next.into_iter().map(|v| v / norm).collect();
    }
    Ok(GNormEstimate {
        estimate: probe_max.max(power_max),
        probe_max,
        power_max,
        probes: ratios.len(),
        power_iterations: iterations,
        unconverged,
        residual,
    })
}

/// Tuning for [`check_admissibility`].
#[derive(Clone, Debug)]
pub struct AdmissibilityConfig<T: Scalar> {
    /// Main window `[-T_w, T_w]`.
    pub half_width: T,
    pub h: T,
    /// Window half-widths of the kernel sweep.
    pub sweep: Vec<T>,
    /// Bootstrap horizon `L` for the boundary split.
    pub horizon: T,
    pub probes: usize,
    pub seed: u64,
    pub max_power_iter: usize,
    pub residual_tol: T,
    /// Kernel threshold relative to the discrete operator norm.
    pub kernel_rel_tol: T,
    /// Largest `sup/inf` accepted for a bounded witness.
    pub witness_growth_max: T,
}

impl<T: Scalar> Default for AdmissibilityConfig<T> {
    fn default() -> Self {
        Self {
            half_width: T::lit(15.0),
            h: T::lit(0.01),
            sweep: vec![T::lit(5.0), T::lit(10.0), T::lit(20.0)],
            horizon: T::lit(10.0),
            probes: 20,
            seed: 0,
            max_power_iter: 60,
            residual_tol: T::lit(1e-6),
            kernel_rel_tol: T::lit(1e-6),
            witness_growth_max: T::lit(10.0),
        }
    }
}

/// Result of [`check_admissibility`].
#[derive(Clone, Debug)]
pub struct AdmissibilityReport<T: Scalar> {
    pub verdict: Verdict,
    pub p: Exponent<T>,
    pub q: Exponent<T>,
    pub half_width: T,
    pub h: T,
    pub g_norm: Option<GNormEstimate<T>>,
    pub kernel: KernelCheck<T>,
    pub h_norm: T,
    pub kernel_threshold: T,
    pub residual: T,
    /// `max |x_proj - x_leastnorm|` over the probe suite, in family norms,
    /// relative to the largest projected solution.
    pub mode_discrepancy: Option<T>,
    /// `dim U` at the left end and `dim S` at the right end.
    pub split_dims: Option<(usize, usize)>,
    pub pivot_ratio: Option<T>,
    /// Largest window-edge value of probe solutions relative to their sup.
    pub edge_ratio: Option<T>,
    pub reconstruction_available: bool,
    pub notes: Vec<String>,
}

impl<T: Scalar> AdmissibilityReport<T> {
    pub fn g_norm_estimate(&self) -> Option<T> {
        self.g_norm.as_ref().map(|g| g.estimate)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f = |x: T| x.to_f64_lossy();
        json!({
            "verdict": self.verdict.as_str(),
            "p": self.p.to_string(),
            "q": self.q.to_string(),
            "half_width": f(self.half_width),
            "h": f(self.h),
            "g_norm_estimate": self.g_norm.as_ref().map(|g| f(g.estimate)),
            "g_norm": self.g_norm.as_ref().map(|g| json!({
                "probe_max": f(g.probe_max),
                "power_max": f(g.power_max),
                "probes": g.probes,
                "power_iterations": g.power_iterations,
                "unconverged": g.unconverged,
            })),
            "kernel_sigma_min": f(self.kernel.sigma_min()),
            "kernel_sweep": self.kernel.sweep.iter().map(|&(w, s)| json!([f(w), f(s)])).collect::<Vec<_>>(),
            "kernel_trend": self.kernel.trend.as_str(),
            "kernel_threshold": f(self.kernel_threshold),
            "h_norm": f(self.h_norm),
            "witness": self.kernel.witness.is_some(),
            "witness_growth": self.kernel.witness_growth.map(f),
            "residual": f(self.residual),
            "mode_discrepancy": self.mode_discrepancy.map(f),
            "split_dims": self.split_dims.map(|(u, s)| json!([u, s])),
            "pivot_ratio": self.pivot_ratio.map(f),
            "edge_ratio": self.edge_ratio.map(f),
            "reconstruction_available": self.reconstruction_available,
            "notes": self.notes,
        })
    }
}

/// Kernel sweep, projected solves on a probe suite, residual checks and the
/// `||G||` estimate, combined into a verdict.
pub fn check_admissibility<T: Scalar>(
    family: &EvolutionFamily<T>,
    p: Exponent<T>,
    q: Exponent<T>,
    config: &AdmissibilityConfig<T>,
) -> Result<AdmissibilityReport<T>> {
    validate_pair(p, q)?;
    let grid = Grid::window(config.half_width, config.h)?;
    let op = assemble_h(family, grid)?;
    let h_norm = op.operator_norm();
    let kernel_threshold = config.kernel_rel_tol * h_norm;
    let kernel = kernel_check(family, config.h, &config.sweep, config.witness_growth_max)?;
    let reconstruction_available = !(p.is_infinite() && q.reciprocal() == T::one());
    let mut notes = Vec::new();
    if !reconstruction_available {
        notes.push("reconstruction unavailable for (p, q) = (inf, 1)".to_string());
    }
    notes.push("uniqueness on the truncated window is judged by the kernel sweep trend".to_string());

    let mut report = AdmissibilityReport {
        verdict: Verdict::Inconclusive,
        p,
        q,
        half_width: config.half_width,
        h: config.h,
        g_norm: None,
        kernel,
        h_norm,
        kernel_threshold,
        residual: T::zero(),
        mode_discrepancy: None,
        split_dims: None,
        pivot_ratio: None,
        edge_ratio: None,
        reconstruction_available,
        notes,
    };

    let below = report.kernel.sweep.iter().any(|s| s.1 < kernel_threshold);
    let has_witness = report.kernel.witness.is_some();
    if has_witness && (report.kernel.trend == KernelTrend::Decaying || below) {
        report.verdict = Verdict::NotAdmissible;
        return Ok(report);
    }
    if report.kernel.trend != KernelTrend::Bounded || below {
        report.notes.push(format!(
            "kernel trend {} without a bounded witness",
            report.kernel.trend.as_str()
        ));
        return Ok(report);
    }

    let solver = match BoundedSolver::from_operator(op.clone(), Boundary::Projected, config.horizon) {
        Ok(s) => s,
        Err(Error::Precondition(msg)) => {
            report.notes.push(msg);
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    let split = solver.split().expect("projected solver has a split");
    report.split_dims = Some((split.unstable_left.ncols(), split.stable_right.ncols()));
    report.pivot_ratio = Some(solver.pivot_ratio());

    let probes = probe_suite(&grid, family.dim(), config.probes, config.seed)?;
    let g = estimate_g_norm(&solver, p, q, &probes, config.max_power_iter)?;
    report.residual = g.residual;

    let norms = family.norms();
    let least = BoundedSolver::from_operator(op, Boundary::LeastNorm, config.horizon)?;
    let mut discrepancy = T::zero();
    let mut scale = T::zero();
    let mut edge = T::zero();
    for y in probes.iter().skip(family.dim()) {
        let xp = solver.solve(y)?;
        let xl = least.solve(y)?;
        let sup = xp.sup_norm(norms)?;
        discrepancy = discrepancy.max(xp.max_distance_in(&xl, norms)?);
        scale = scale.max(sup);
        if sup > T::zero() {
            let ends = norms
                .norm_at(grid.t0(), xp.value(0))?
                .max(norms.norm_at(grid.end(), xp.value(grid.len() - 1))?);
            edge = edge.max(ends / sup);
        }
    }
    if scale > T::zero() {
        report.mode_discrepancy = Some(discrepancy / scale);
        report.edge_ratio = Some(edge);
    }
    if g.unconverged {
        report
            .notes
            .push("power iteration for ||G|| stopped before stabilizing".to_string());
    }
    report.verdict = if report.residual <= config.residual_tol {
        Verdict::Admissible
    } else {
        report
            .notes
            .push(format!("probe residual {:e} above tolerance", report.residual));
        Verdict::Inconclusive
    };
    report.g_norm = Some(g);
    Ok(report)
}
