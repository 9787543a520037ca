//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dichotomy::admissibility::{assemble_h, check_admissibility, probe_suite, AdmissibilityConfig, Verdict};
use dichotomy::evolution::{EvolutionFamily, GrowthBound, GrowthSampling, System};
use dichotomy::function_space::{mild_residual, Exponent, Grid, GridFunction, Profile, Signal};
use dichotomy::green::{bounds_from_rates, green_solve, young_term, DichotomyCertificate};
use dichotomy::norm_family::build_lyapunov_norms;
use dichotomy::perturbation::{
    feedback_identity_residual, gronwall_integral_check, growth_bound_ratio, perturbed_family, perturbed_growth_bound,
    phi_norm, robustness_experiment, PerturbationSpec,
};
use dichotomy::reconstruct::{certify_dichotomy, ReconstructConfig};
use dichotomy::scenario::{load_scenario, run_scenario, Task};
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn two() -> Exponent<f64> {
    Exponent::finite(2.0).unwrap()
}

fn exponent(p: f64) -> Exponent<f64> {
    if p.is_infinite() {
        Exponent::Infinite
    } else {
        Exponent::finite(p).unwrap()
    }
}

fn saddle() -> EvolutionFamily<f64> {
    EvolutionFamily::new(System::Diagonal { rates: vec![-1.0, 1.0] }, 1e-3).unwrap()
}

fn cocycle_fidelity() -> Outcome {
    let start = Instant::now();
    let a = Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-1.0, t.sin(), 0.0, -2.0]));
    let fam = EvolutionFamily::new(
        System::TimeVarying {
            dim: 2,
            label: "triangular-sine".into(),
            generator: a,
        },
        1e-3,
    )
    .map_err(err)?;
    let times: Vec<f64> = (0..=8).map(|k| -4.0 + k as f64).collect();
    let mut worst: f64 = 0.0;
    for (i, &tau) in times.iter().enumerate() {
        for (j, &s) in times.iter().enumerate().skip(i) {
            for &t in &times[j..] {
                worst = worst.max(fam.cocycle_residual(tau, s, t).map_err(err)?);
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-7 && elapsed < Duration::from_secs(10),
        format!("max residual {worst:.3e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn forward_bound() -> Outcome {
    let grid = Grid::window(15.0, 1e-2).map_err(err)?;
    let fam = EvolutionFamily::new(System::Scalar { rate: -1.0 }, 1e-3).map_err(err)?;
    let cert = DichotomyCertificate::analytic(fam, grid, |_| DMatrix::from_element(1, 1, 1.0), Some(1.0), None, 1.0)
        .map_err(err)?;
    let y =
        GridFunction::from_signal(grid, &Signal::indicator(0.0, 1.0, DVector::from_element(1, 1.0)), 1).map_err(err)?;
    let sol = green_solve(&cert, &y).map_err(err)?;
    let norms = cert.norms();
    let sup = sol.x.sup_norm(norms).map_err(err)?;
    let yq = y.lp_norm(norms, two()).map_err(err)?;
    let b_inf = bounds_from_rates(1.0, Some(1.0), Some(1.0), Exponent::Infinite, two())
        .map_err(err)?
        .b_inf;
    let residual = mild_residual(&sol.x, &y, cert.family()).map_err(err)?;
    check(
        (sup - 0.632121).abs() <= 1e-3 && (b_inf - 3.163953).abs() <= 1e-6 && sup <= b_inf * yq && residual <= 1e-6,
        format!("sup {sup:.6}, B_inf {b_inf:.6}, |y|_2 {yq:.4}, residual {residual:.2e}"),
    )
}

fn young_bound() -> Outcome {
    let grid = Grid::window(15.0, 1e-2).map_err(err)?;
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let cert = DichotomyCertificate::analytic(saddle(), grid, |_| p.clone(), Some(1.0), Some(1.0), 1.0).map_err(err)?;
    let probes = probe_suite(&grid, 2, 20, 0).map_err(err)?;
    let norms = cert.norms();
    let mut worst: f64 = 0.0;
    for (pp, qq) in [
        (2.0, 2.0),
        (f64::INFINITY, 2.0),
        (2.0, 1.0),
        (f64::INFINITY, f64::INFINITY),
    ] {
        let (pe, qe) = (exponent(pp), exponent(qq));
        let r = 1.0 / (1.0 + pe.reciprocal() - qe.reciprocal());
        let bound = young_term(1.0, 1.0, r);
        for y in &probes {
            let sol = green_solve(&cert, y).map_err(err)?;
            let lhs = sol.unstable.lp_norm(norms, pe).map_err(err)?;
            let rhs = bound * y.lp_norm(norms, qe).map_err(err)?;
            worst = worst.max(lhs / rhs);
        }
    }
    check(
        worst <= 1.0 + 1e-3,
        format!("worst |x2|_p / bound {worst:.4} over 4 pairs x 20 probes"),
    )
}

fn analytic_scenarios() -> Result<Vec<PathBuf>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(scenarios_dir()).map_err(err)? {
        let path = entry.map_err(err)?.path();
        if path.extension().is_some_and(|e| e == "json")
            && path.file_stem().is_some_and(|s| s != "schema")
            && load_scenario(&path).map_err(err)?.analytic.is_some()
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().unwrap().to_string_lossy().into_owned()
}

fn oracle_equivalence() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for path in analytic_scenarios()? {
        let s = load_scenario(&path).map_err(err)?;
        let out = run_scenario(&s, Some(Task::Solve), None).map_err(err)?;
        let gap = out.report["solve"]["green"]["analytic"]["discrepancy"]
            .as_f64()
            .unwrap_or(f64::INFINITY);
        let tol = 1e-3f64.max(10.0 * s.h * s.h);
        ok &= gap <= tol;
        details.push(format!("{} {gap:.1e}", stem(&path)));
    }
    check(ok && !details.is_empty(), details.join(", "))
}

fn converse_reconstruction() -> Outcome {
    let rec = certify_dichotomy(&saddle(), two(), two(), &ReconstructConfig::default()).map_err(err)?;
    let target = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let proj_err = rec
        .certificate
        .projections()
        .iter()
        .map(|p| dichotomy::linalg::spectral_norm(&(p - &target)))
        .fold(0.0, f64::max);
    let (a, b) = (
        rec.fitted.alpha_hat.unwrap_or(f64::NAN),
        rec.fitted.beta_hat.unwrap_or(f64::NAN),
    );
    let c = rec.conservative;
    let kc = rec.growth.k * rec.growth.c.exp();
    let t_formula = (4.0 * kc * rec.g_norm * rec.g_norm).powf(1.0 / c.theta);
    let formulas = (c.doubling_time - t_formula).abs() <= 1e-12 * t_formula
        && (c.lambda - std::f64::consts::LN_2 / c.doubling_time).abs() <= 1e-15;
    check(
        proj_err <= 1e-3 && rec.invariance <= 1e-6 && (a - 1.0).abs() <= 0.05 && (b - 1.0).abs() <= 0.05 && formulas,
        format!(
            "projection error {proj_err:.1e}, invariance {:.1e}, alpha_hat {a:.4}, beta_hat {b:.4}, T {:.4}, lambda {:.5}",
            rec.invariance, c.doubling_time, c.lambda
        ),
    )
}

fn negative_detection() -> Outcome {
    let config = AdmissibilityConfig::default();
    let rotation = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let families = [
        (
            "zero",
            EvolutionFamily::new(System::Scalar { rate: 0.0 }, 1e-3).map_err(err)?,
        ),
        (
            "rotation",
            EvolutionFamily::new(System::Autonomous { generator: rotation }, 1e-3).map_err(err)?,
        ),
    ];
    let mut ok = true;
    let mut details = Vec::new();
    for (name, fam) in &families {
        let r = check_admissibility(fam, two(), two(), &config).map_err(err)?;
        let sigmas: Vec<f64> = r.kernel.sweep.iter().map(|s| s.1).collect();
        let decreasing = sigmas.windows(2).all(|w| w[1] < w[0]);
        let witness = r.kernel.witness.is_some() && r.kernel.witness_growth.is_some_and(|g| g <= 10.0);
        ok &= r.verdict == Verdict::NotAdmissible && witness && decreasing;
        details.push(format!(
            "{name}: {} sigma {:?}",
            r.verdict.as_str(),
            sigmas.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>()
        ));
    }
    check(ok, details.join("; "))
}

fn projection_uniqueness() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for path in analytic_scenarios()? {
        let s = load_scenario(&path).map_err(err)?;
        let out = run_scenario(&s, Some(Task::Reconstruct), None).map_err(err)?;
        let gap = out.report["reconstruct"]["analytic_match"]["discrepancy"]
            .as_f64()
            .unwrap_or(f64::INFINITY);
        ok &= gap <= 1e-3;
        details.push(format!("{} {gap:.1e}", stem(&path)));
    }
    check(ok && !details.is_empty(), details.join(", "))
}

fn nonuniform_showcase() -> Outcome {
    let base = EvolutionFamily::new(System::nonuniform_scalar(), 1e-3).map_err(err)?;
    // Uniform fit in constant norms: log K(tau) = max_s log|T(tau+s,tau)| + alpha s.
    let log_k = |tau: f64| -> Result<f64, String> {
        let mut best = f64::NEG_INFINITY;
        for k in 0..=400 {
            let s = k as f64 * 0.025;
            best = best.max(base.family_norm(tau + s, tau).map_err(err)?.ln() + s);
        }
        Ok(best)
    };
    let mut band_max = Vec::new();
    for r in [5.0, 10.0, 15.0, 20.0] {
        let mut m = f64::NEG_INFINITY;
        for k in -80..=80 {
            let tau = k as f64 * 0.25;
            if tau.abs() <= r {
                m = m.max(log_k(tau)?);
            }
        }
        band_max.push(m);
    }
    let grows = band_max.windows(2).all(|w| w[1] > w[0] + 1.0);

    let grid = Grid::window(20.0, 0.1).map_err(err)?;
    let cert = DichotomyCertificate::analytic(
        base.clone(),
        grid,
        |_| DMatrix::from_element(1, 1, 1.0),
        Some(1.0),
        None,
        1.0,
    )
    .map_err(err)?;
    let times: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.5).collect();
    let ly = build_lyapunov_norms(&base, &cert, 0.5, 30.0, 0.01, &times).map_err(err)?;
    let adapted = base.clone().with_norms(ly.family).map_err(err)?;
    let mut contraction: f64 = 0.0;
    for &tau in times.iter().step_by(2) {
        for lag in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let ratio = adapted.family_norm(tau + lag, tau).map_err(err)? / (-0.5 * lag).exp();
            contraction = contraction.max(ratio);
        }
    }
    let envelope = adapted
        .norms()
        .verify_envelope(&times, &[DVector::from_element(1, 1.0)])
        .map_err(err)?;
    check(
        grows && contraction <= 1.0 + 1e-9 && envelope.fitted_eps <= 2.2,
        format!(
            "log K over |tau| <= 5,10,15,20: {:?}; adapted contraction ratio {contraction:.6}; fitted eps {:.3}",
            band_max.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>(),
            envelope.fitted_eps
        ),
    )
}

fn perturbation_robustness() -> Outcome {
    let base = EvolutionFamily::new(System::Scalar { rate: -1.0 }, 1e-3).map_err(err)?;
    let bump = Profile::TwoSidedExp { center: 0.0, rate: 1.0 };
    let template =
        PerturbationSpec::new(0.0, bump.clone(), DMatrix::from_element(1, 1, 1.0), base.norms()).map_err(err)?;
    let magnitudes = [0.0, 0.05, 0.1, 0.2];
    let sweep = robustness_experiment(
        &base,
        &template,
        &magnitudes,
        two(),
        two(),
        &ReconstructConfig::default(),
    )
    .map_err(err)?;
    let certified = sweep.rows.iter().all(|r| !r.satisfied || r.certified);

    let grid = Grid::window(5.0, 0.05).map_err(err)?;
    let op = assemble_h(&base, grid).map_err(err)?;
    let x = GridFunction::from_fn(grid, |t: f64| DVector::from_element(1, (0.7 * t).sin())).map_err(err)?;
    let y = GridFunction::from_signal(grid, &Signal::indicator(-1.0, 1.0, DVector::from_element(1, 1.0)), 1)
        .map_err(err)?;
    let phi = phi_norm(&bump, two(), 15.0, 1e-3).map_err(err)?;
    let growth = GrowthBound { k: 1.0, c: -1.0 };
    let sampling = GrowthSampling::uniform(-6.0, 6.0, 7, 6.0, 7);
    let mut identity: f64 = 0.0;
    let mut gronwall: f64 = 0.0;
    for &m in &magnitudes {
        let spec = template.with_magnitude(m).map_err(err)?;
        identity = identity.max(feedback_identity_residual(&op, &spec, &x, &y).map_err(err)?);
        let u = perturbed_family(&base, &spec).map_err(err)?;
        let bound = perturbed_growth_bound(m, spec.envelope_c, phi.value, growth);
        gronwall = gronwall.max(growth_bound_ratio(&u, bound, &sampling).map_err(err)?);
    }
    let (integral, int_bound) = gronwall_integral_check(&bump, phi.value, -3.0, 4.0, 1e-3).map_err(err)?;
    check(
        certified && identity <= 1e-10 && gronwall <= 1.0 + 1e-9 && integral <= int_bound,
        format!(
            "certified {}/{}, identity residual {identity:.1e}, growth ratio {gronwall:.4}, threshold M* {:.3}",
            sweep.rows.iter().filter(|r| r.certified).count(),
            sweep.rows.len(),
            sweep.theoretical_threshold
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["scalar_stable", "saddle"] {
        let s = load_scenario(&scenarios_dir().join(format!("{name}.json"))).map_err(err)?;
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out_dir = dir.path().join(format!("{name}-{run}"));
            run_scenario(&s, Some(Task::Full), Some(5))
                .map_err(err)?
                .write_to(&out_dir)
                .map_err(err)?;
            bytes.push(std::fs::read(out_dir.join("report.json")).map_err(err)?);
        }
        ok &= bytes[0] == bytes[1];
        details.push(format!("{name} {} bytes", bytes[0].len()));
    }
    check(ok, details.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("cocycle fidelity", cocycle_fidelity),
        ("forward bound", forward_bound),
        ("Young bound", young_bound),
        ("oracle equivalence", oracle_equivalence),
        ("converse reconstruction", converse_reconstruction),
        ("negative detection", negative_detection),
        ("projection uniqueness", projection_uniqueness),
        ("nonuniform showcase", nonuniform_showcase),
        ("perturbation robustness", perturbation_robustness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {name}: {status} ({detail}) [{:.1} s]",
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
