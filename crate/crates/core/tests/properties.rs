//! Property tests across modules.

use dichotomy::admissibility::{Boundary, BoundedSolver};
use dichotomy::evolution::{EvolutionFamily, System};
use dichotomy::function_space::{mild_residual, Exponent, Grid, GridFunction, Profile, Signal};
use dichotomy::green::{dichotomy_solution_bounds, green_solve, DichotomyCertificate};
use dichotomy::linalg::spectral_norm;
use dichotomy::norm_family::{build_lyapunov_norms, NormFamily};
use dichotomy::perturbation::smallness_condition;
use dichotomy::reconstruct::{certify_dichotomy, ReconstructConfig};
use dichotomy::AdmissibilityConfig;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn saddle() -> EvolutionFamily<f64> {
    EvolutionFamily::new(System::Diagonal { rates: vec![-1.0, 1.0] }, 1e-3).unwrap()
}

fn saddle_cert(grid: Grid<f64>) -> DichotomyCertificate<f64> {
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    DichotomyCertificate::analytic(saddle(), grid, |_| p.clone(), Some(1.0), Some(1.0), 1.0).unwrap()
}

fn exponent(k: usize) -> Exponent<f64> {
    match k {
        0 => Exponent::finite(1.0).unwrap(),
        1 => Exponent::finite(1.5).unwrap(),
        2 => Exponent::finite(2.0).unwrap(),
        3 => Exponent::finite(3.0).unwrap(),
        _ => Exponent::Infinite,
    }
}

/// Indicator input `c 1_[a, a + len]` on a grid of step 0.05.
fn bump(a: i32, len: i32, c: [f64; 2]) -> Signal<f64> {
    Signal::indicator(a as f64 * 0.05, (a + len) as f64 * 0.05, DVector::from_column_slice(&c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn holder_consistency(
        coeffs in prop::collection::vec(-3.0f64..3.0, 3),
        freq in 0.1f64..3.0,
        pk in 0usize..5,
        qk in 0usize..5,
    ) {
        let (p, q) = if exponent(pk).reciprocal() <= exponent(qk).reciprocal() {
            (exponent(pk), exponent(qk))
        } else {
            (exponent(qk), exponent(pk))
        };
        let grid = Grid::window(3.0, 0.01).unwrap();
        let f = GridFunction::from_fn(grid, |t: f64| {
            DVector::from_element(1, coeffs[0] + coeffs[1] * (freq * t).sin() + coeffs[2] * (-t * t).exp())
        })
        .unwrap();
        let one = NormFamily::constant(1);
        let len: f64 = 6.0;
        let lhs = f.lp_norm(&one, q).unwrap();
        let rhs = len.powf(q.reciprocal() - p.reciprocal()) * f.lp_norm(&one, p).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
    }

    #[test]
    fn green_solve_is_linear(
        a1 in -100i32..100, l1 in 1i32..40, c1 in prop::array::uniform2(-2.0f64..2.0),
        a2 in -100i32..100, l2 in 1i32..40, c2 in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let grid = Grid::window(8.0, 0.05).unwrap();
        let cert = saddle_cert(grid);
        let y1 = GridFunction::from_signal(grid, &bump(a1, l1, c1), 2).unwrap();
        let y2 = GridFunction::from_signal(grid, &bump(a2, l2, c2), 2).unwrap();
        let sum = y1.combine(1.0, &y2, 1.0).unwrap();
        let x1 = green_solve(&cert, &y1).unwrap().x;
        let x2 = green_solve(&cert, &y2).unwrap().x;
        let xs = green_solve(&cert, &sum).unwrap().x;
        let gap = xs.max_distance(&x1.combine(1.0, &x2, 1.0).unwrap()).unwrap();
        prop_assert!(gap <= 1e-12, "gap {gap}");
    }

    #[test]
    fn green_bounds_hold(
        a in -100i32..100, len in 1i32..60, c in prop::array::uniform2(-2.0f64..2.0),
        pk in 0usize..5, qk in 0usize..5,
    ) {
        prop_assume!(exponent(pk).reciprocal() <= exponent(qk).reciprocal());
        let (p, q) = (exponent(pk), exponent(qk));
        prop_assume!(c[0] != 0.0 || c[1] != 0.0);
        let grid = Grid::window(10.0, 0.05).unwrap();
        let cert = saddle_cert(grid);
        let y = GridFunction::from_signal(grid, &bump(a, len, c), 2).unwrap();
        let x = green_solve(&cert, &y).unwrap().x;
        let b = dichotomy_solution_bounds(&cert, p, q).unwrap();
        let norms = cert.norms();
        let yq = y.lp_norm(norms, q).unwrap();
        prop_assert!(x.sup_norm(norms).unwrap() <= b.b_inf * yq * (1.0 + 1e-3));
        prop_assert!(x.lp_norm(norms, p).unwrap() <= b.b_p * yq * (1.0 + 1e-3));
    }

    #[test]
    fn solver_outputs_respect_jump_bound(
        a in -60i32..60, len in 1i32..40, c in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let grid = Grid::window(6.0, 0.05).unwrap();
        let fam = saddle();
        let solver = BoundedSolver::new(&fam, grid, Boundary::Projected, 10.0).unwrap();
        let y = GridFunction::from_signal(grid, &bump(a, len, c), 2).unwrap();
        let x = solver.solve(&y).unwrap();
        let delta = mild_residual(&x, &y, &fam).unwrap();
        let cells = fam.cell_propagators(&grid).unwrap();
        let id = DMatrix::identity(2, 2);
        let drift = cells.iter().map(|m| spectral_norm(&(m - &id))).fold(0.0, f64::max);
        let xmax = x.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        let ymax = y.values().iter().chain((0..y.len()).map(|i| y.right_value(i))).map(|v| v.norm()).fold(0.0, f64::max);
        let bound = delta + drift * xmax + grid.step() * ymax;
        prop_assert!(x.max_consecutive_jump() <= bound * (1.0 + 1e-12), "{} > {bound}", x.max_consecutive_jump());
    }

    #[test]
    fn smallness_lhs_is_linear_with_interval_support(
        m in prop::collection::vec(0.0f64..5.0, 1..8),
        c in 0.5f64..3.0, phi in 0.1f64..2.0, g in 0.1f64..2.0,
    ) {
        let unit = smallness_condition(1.0, c, phi, g).0;
        let mut m = m;
        m.sort_by(f64::total_cmp);
        let mut seen_failure = false;
        for &mi in &m {
            let (lhs, ok) = smallness_condition(mi, c, phi, g);
            prop_assert!((lhs - mi * unit).abs() <= 1e-12 * lhs.max(1.0));
            prop_assert_eq!(ok, lhs < 1.0);
            prop_assert!(!(ok && seen_failure), "satisfied set is not an interval");
            seen_failure |= !ok;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adapted_norm_contraction(tau_k in -800i32..800, lag_k in 0i32..600, x in -5.0f64..5.0) {
        prop_assume!(x != 0.0);
        // The orbit supremum is sampled with step 0.01, so (t, tau) stay on that lattice.
        let (tau, lag) = (tau_k as f64 * 0.01, lag_k as f64 * 0.01);
        let base = EvolutionFamily::new(System::nonuniform_scalar(), 1e-3).unwrap();
        let grid = Grid::window(10.0, 0.5).unwrap();
        let cert = DichotomyCertificate::analytic(base.clone(), grid, |_| DMatrix::from_element(1, 1, 1.0), Some(1.0), None, 1.0)
            .unwrap();
        let ly = build_lyapunov_norms(&base, &cert, 0.5, 30.0, 0.01, &[0.0]).unwrap();
        let norms = ly.family;
        let v = DVector::from_element(1, x);
        let moved = base.propagator(tau + lag, tau).unwrap() * &v;
        let lhs = norms.norm_at(tau + lag, &moved).unwrap();
        let rhs = (-0.5 * lag).exp() * norms.norm_at(tau, &v).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-9), "{lhs} > {rhs}");
    }
}

#[test]
fn lp_norm_converges_under_refinement() {
    let profile = |t: f64| DVector::from_element(1, (-t * t).exp() * (2.0 * t).cos());
    let one = NormFamily::constant(1);
    let p = Exponent::finite(2.0).unwrap();
    let norms: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| {
            GridFunction::from_fn(Grid::window(5.0, h).unwrap(), profile)
                .unwrap()
                .lp_norm(&one, p)
                .unwrap()
        })
        .collect();
    let (d1, d2) = ((norms[0] - norms[1]).abs(), (norms[1] - norms[2]).abs());
    assert!(d2 <= d1 / 3.0 || d2 < 1e-13, "differences {d1:e}, {d2:e}");
}

#[test]
fn boundary_modes_agree_on_saddle() {
    let grid = Grid::window(15.0, 0.02).unwrap();
    let fam = saddle();
    let y = GridFunction::from_signal(grid, &bump(-20, 40, [1.0, -1.0]), 2).unwrap();
    let a = BoundedSolver::new(&fam, grid, Boundary::Projected, 10.0)
        .unwrap()
        .solve(&y)
        .unwrap();
    let b = BoundedSolver::new(&fam, grid, Boundary::LeastNorm, 10.0)
        .unwrap()
        .solve(&y)
        .unwrap();
    let gap = a.max_distance_in(&b, fam.norms()).unwrap();
    assert!(gap <= 1e-3, "mode gap {gap}");
}

#[test]
fn reconstructed_saddle_satisfies_decay_and_growth_lemma() {
    let two = Exponent::finite(2.0).unwrap();
    let config = ReconstructConfig {
        admissibility: AdmissibilityConfig {
            half_width: 10.0,
            h: 0.02,
            probes: 6,
            ..Default::default()
        },
        stride: 25,
        ..Default::default()
    };
    let rec = certify_dichotomy(&saddle(), two, two, &config).unwrap();
    assert!(rec.idempotency <= 1e-8);
    assert!(rec.invariance <= 1e-6);
    assert!(rec.growth_lemma_holds, "margin {:?}", rec.growth_lemma_margin);
    let grid = *rec.certificate.grid();
    let pairs: Vec<(f64, f64)> = (0..grid.len())
        .step_by(10)
        .flat_map(|i| {
            [
                (grid.node(i), grid.node(i)),
                ((grid.node(i) + 2.0).min(grid.end()), grid.node(i)),
            ]
        })
        .map(|(t, s)| (t.max(s), s))
        .collect();
    let check = rec.certificate.verify(&pairs).unwrap();
    assert!(check.holds(1e-6, 1e-9), "{check:?}");
}

#[test]
fn integrated_propagator_has_order_four() {
    let gen = std::sync::Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-1.0, t.sin(), 0.0, -2.0]));
    let reference = EvolutionFamily::new(
        System::TimeVarying {
            dim: 2,
            label: "ref".into(),
            generator: gen.clone(),
        },
        1e-4,
    )
    .unwrap()
    .propagator(3.0, -1.0)
    .unwrap();
    let errors: Vec<f64> = [0.2, 0.1]
        .iter()
        .map(|&h| {
            let fam = EvolutionFamily::new(
                System::TimeVarying {
                    dim: 2,
                    label: "h".into(),
                    generator: gen.clone(),
                },
                h,
            )
            .unwrap();
            spectral_norm(&(fam.propagator(3.0, -1.0).unwrap() - &reference))
        })
        .collect();
    let ratio = errors[0] / errors[1];
    assert!((10.0..24.0).contains(&ratio), "error ratio {ratio}");
}

#[test]
fn solve_bounded_scales() {
    let grid = Grid::window(6.0, 0.05).unwrap();
    let fam = saddle();
    let solver = BoundedSolver::new(&fam, grid, Boundary::Projected, 10.0).unwrap();
    let y = GridFunction::from_signal(
        grid,
        &Signal::new(vec![(
            Profile::TwoSidedExp { center: 0.5, rate: 2.0 },
            DVector::from_vec(vec![1.0, 2.0]),
        )]),
        2,
    )
    .unwrap();
    let x = solver.solve(&y).unwrap();
    let lambda = -3.7;
    let xs = solver.solve(&y.scaled(lambda)).unwrap();
    let gap = xs.max_distance(&x.scaled(lambda)).unwrap();
    assert!(gap <= 1e-10 * x.values().iter().map(|v| v.norm()).fold(0.0, f64::max) * lambda.abs());
}

#[test]
fn single_precision_matches_double() {
    let grid32 = Grid::<f32>::window(8.0, 0.05).unwrap();
    let fam32 = dichotomy::EvolutionFamilyF32::new(System::Scalar { rate: -1.0 }, 1e-3).unwrap();
    let cert32 = DichotomyCertificate::analytic(
        fam32,
        grid32,
        |_| DMatrix::from_element(1, 1, 1.0f32),
        Some(1.0),
        None,
        1.0,
    )
    .unwrap();
    let y32 = GridFunction::from_signal(
        grid32,
        &Signal::indicator(0.0f32, 1.0, DVector::from_element(1, 1.0)),
        1,
    )
    .unwrap();
    let sup32 = green_solve(&cert32, &y32).unwrap().x.sup_norm(cert32.norms()).unwrap();
    let verdict = dichotomy::check_admissibility(
        cert32.family(),
        Exponent::finite(2.0f32).unwrap(),
        Exponent::finite(2.0f32).unwrap(),
        &AdmissibilityConfig {
            half_width: 8.0f32,
            h: 0.05,
            probes: 4,
            ..Default::default()
        },
    )
    .unwrap()
    .verdict;
    assert!((sup32 - (1.0 - (-1.0f32).exp())).abs() < 1e-3, "{sup32}");
    assert_eq!(verdict, dichotomy::Verdict::Admissible);
}
