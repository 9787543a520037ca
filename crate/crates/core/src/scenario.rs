//! Declarative scenarios: JSON config, validation, task execution and
//! artifact assembly. Runs in `f64`.
//!
//! Artifacts are returned as `(relative path, contents)` pairs and written by
//! a single writer, so repeated runs with the same seed produce identical
//! `report.json` files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::admissibility::{check_admissibility, AdmissibilityConfig, Boundary, BoundedSolver, Verdict};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionFamily, GrowthSampling, System};
use crate::function_space::{mild_residual, validate_pair, Exponent, Grid, GridFunction, Profile, Signal};
use crate::green::{dichotomy_solution_bounds, green_solve, DichotomyCertificate};
use crate::norm_family::{build_lyapunov_norms, scaling_table_csv, NormFamily, Weight};
use crate::perturbation::{robustness_experiment, PerturbationSpec};
use crate::reconstruct::{certify_from_report, projection_discrepancy, ReconstructConfig, Reconstruction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Axioms,
    Evolve,
    Solve,
    Check,
    Reconstruct,
    Perturb,
    Full,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Axioms => "axioms",
            Task::Evolve => "evolve",
            Task::Solve => "solve",
            Task::Check => "check",
            Task::Reconstruct => "reconstruct",
            Task::Perturb => "perturb",
            Task::Full => "full",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| Error::Parse(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Scalar {
        rate: f64,
    },
    Diagonal {
        rates: Vec<f64>,
    },
    Autonomous {
        matrix: Vec<Vec<f64>>,
    },
    /// `x' = -(3 + t sin t) x`.
    NonuniformScalar,
    /// `A(t) = [[-1, sin t], [0, -2]]`.
    TriangularSine,
}

#[derive(Clone, Debug, Deserialize, Serialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Constant { value: f64 },
    ExpAbs { scale: f64, rate: f64 },
}

impl WeightSpec {
    fn build(&self) -> Weight<f64> {
        match *self {
            WeightSpec::Constant { value } => Weight::Constant(value),
            WeightSpec::ExpAbs { scale, rate } => Weight::ExpAbs { scale, rate },
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSpec {
    #[default]
    Constant,
    ScalarWeighted {
        weight: WeightSpec,
    },
    DiagonalWeighted {
        weights: Vec<WeightSpec>,
    },
    /// Adapted norms of the scenario's analytic certificate.
    Lyapunov {
        margin: f64,
        #[serde(default = "default_lyapunov_horizon")]
        horizon: f64,
        #[serde(default = "default_lyapunov_ds")]
        ds: f64,
    },
}

fn default_lyapunov_horizon() -> f64 {
    30.0
}

fn default_lyapunov_ds() -> f64 {
    0.01
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Indicator { a: f64, b: f64 },
    ExpDecay { start: f64, rate: f64 },
    TwoSidedExp { center: f64, rate: f64 },
    Sine { freq: f64, phase: f64, a: f64, b: f64 },
    Constant,
}

impl ProfileSpec {
    fn build(&self) -> Profile<f64> {
        match *self {
            ProfileSpec::Indicator { a, b } => Profile::Indicator { a, b },
            ProfileSpec::ExpDecay { start, rate } => Profile::ExpDecay { start, rate },
            ProfileSpec::TwoSidedExp { center, rate } => Profile::TwoSidedExp { center, rate },
            ProfileSpec::Sine { freq, phase, a, b } => Profile::Sine { freq, phase, a, b },
            ProfileSpec::Constant => Profile::Constant,
        }
    }

    fn jumps(&self) -> Vec<f64> {
        match *self {
            ProfileSpec::Indicator { a, b } | ProfileSpec::Sine { a, b, .. } => vec![a, b],
            ProfileSpec::ExpDecay { start, .. } => vec![start],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InputTerm {
    pub profile: ProfileSpec,
    pub coeffs: Vec<f64>,
}

/// Constant projection with its rates, shipped as an analytic certificate.
#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSpec {
    pub projection: Vec<Vec<f64>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub d: f64,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub profile: ProfileSpec,
    pub structure: Vec<Vec<f64>>,
    pub magnitudes: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub cocycle: f64,
    pub residual: f64,
    /// Kernel threshold relative to the discrete operator norm.
    pub kernel: f64,
    pub projection_match: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cocycle: 1e-8,
            residual: 1e-6,
            kernel: 1e-6,
            projection_match: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Admissible,
    NotAdmissible,
}

#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum ExponentSpec {
    Number(f64),
    Text(String),
}

impl ExponentSpec {
    fn build(&self) -> Result<Exponent<f64>> {
        match self {
            ExponentSpec::Number(p) => Exponent::finite(*p),
            ExponentSpec::Text(s) => s.parse(),
        }
    }
}

/// Scenario config.
#[derive(Clone, Debug, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub task: Task,
    pub system: SystemSpec,
    #[serde(default)]
    pub norms: NormSpec,
    /// Half-width `T_w` of the window `[-T_w, T_w]`.
    pub window: f64,
    pub h: f64,
    #[serde(default = "default_h_int")]
    pub h_int: f64,
    pub p: ExponentSpec,
    pub q: ExponentSpec,
    #[serde(default)]
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
    /// Bootstrap horizon of the boundary split.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Certificate node spacing in grid cells.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub input: Option<Vec<InputTerm>>,
    #[serde(default)]
    pub analytic: Option<AnalyticSpec>,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    /// Output directory, used when none is given on the command line.
    #[serde(default)]
    pub output: Option<String>,
}

fn default_h_int() -> f64 {
    1e-3
}

fn default_probes() -> usize {
    20
}

fn default_sweep() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}

fn default_horizon() -> f64 {
    10.0
}

fn default_stride() -> usize {
    10
}

/// JSON Schema of the scenario config.
pub fn scenario_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(Scenario)).expect("schema serializes")
}

/// Parses a config, reporting the line, column and field path on failure.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        // serde_json's message already ends with the line and column.
        Error::Parse(format!("field `{path}`: {}", e.into_inner()))
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn config_error(field: &str, msg: impl fmt::Display) -> Error {
    Error::Parse(format!("field `{field}`: {msg}"))
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(config_error(field, "expected a nonempty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Scenario {
    pub fn exponents(&self) -> Result<(Exponent<f64>, Exponent<f64>)> {
        Ok((self.p.build()?, self.q.build()?))
    }

    pub fn dim(&self) -> usize {
        match &self.system {
            SystemSpec::Scalar { .. } | SystemSpec::NonuniformScalar => 1,
            SystemSpec::Diagonal { rates } => rates.len(),
            SystemSpec::Autonomous { matrix } => matrix.len(),
            SystemSpec::TriangularSine => 2,
        }
    }

    /// Checks the config invariants that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        let (p, q) = self.exponents()?;
        validate_pair(p, q)?;
        if self.task == Task::Reconstruct && p.is_infinite() && q.reciprocal() == 1.0 {
            return Err(Error::ExcludedPair);
        }
        if !(self.window > 0.0) || !(self.h > 0.0) || !(self.h_int > 0.0) {
            return Err(config_error("window/h/h_int", "must be positive"));
        }
        let on_grid = |x: f64| ((x / self.h).round() * self.h - x).abs() <= 1e-9 * self.h.max(x.abs());
        if !on_grid(self.window) {
            return Err(config_error("h", "must divide the window half-width"));
        }
        let n = self.dim();
        if n == 0 {
            return Err(config_error("system", "dimension must be positive"));
        }
        if let SystemSpec::Autonomous { matrix: m } = &self.system {
            matrix(m, "system.matrix")?;
        }
        match &self.norms {
            NormSpec::DiagonalWeighted { weights } if weights.len() != n => {
                return Err(config_error("norms.weights", format!("expected {n} weights")));
            }
            NormSpec::Lyapunov { .. } if self.analytic.is_none() => {
                return Err(config_error("norms", "lyapunov norms need an analytic certificate"));
            }
            _ => {}
        }
        for (k, term) in self.input.iter().flatten().enumerate() {
            if term.coeffs.len() != n {
                return Err(config_error(
                    &format!("input[{k}].coeffs"),
                    format!("expected {n} entries"),
                ));
            }
            if let Some(x) = term.profile.jumps().into_iter().find(|&x| !on_grid(x)) {
                return Err(config_error(
                    &format!("input[{k}].profile"),
                    format!("jump at {x} is not a grid node"),
                ));
            }
        }
        if let Some(a) = &self.analytic {
            if matrix(&a.projection, "analytic.projection")?.nrows() != n {
                return Err(config_error("analytic.projection", format!("expected {n}x{n}")));
            }
        }
        if let Some(pc) = &self.perturbation {
            if matrix(&pc.structure, "perturbation.structure")?.nrows() != n {
                return Err(config_error("perturbation.structure", format!("expected {n}x{n}")));
            }
            if let Some(x) = pc.profile.jumps().into_iter().find(|&x| !on_grid(x)) {
                return Err(config_error(
                    "perturbation.profile",
                    format!("jump at {x} is not a grid node"),
                ));
            }
            if pc.magnitudes.iter().any(|&m| !(m >= 0.0)) {
                return Err(config_error("perturbation.magnitudes", "must be nonnegative"));
            }
        }
        if self.sweep.len() < 2 {
            return Err(config_error("sweep", "needs at least two window lengths"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::window(self.window, self.h)
    }

    fn system(&self) -> Result<System<f64>> {
        Ok(match &self.system {
            SystemSpec::Scalar { rate } => System::Scalar { rate: *rate },
            SystemSpec::Diagonal { rates } => System::Diagonal { rates: rates.clone() },
            SystemSpec::Autonomous { matrix: m } => System::Autonomous {
                generator: matrix(m, "system.matrix")?,
            },
            SystemSpec::NonuniformScalar => System::nonuniform_scalar(),
            SystemSpec::TriangularSine => System::TimeVarying {
                dim: 2,
                label: "triangular-sine".into(),
                generator: Arc::new(|t: f64| DMatrix::from_row_slice(2, 2, &[-1.0, t.sin(), 0.0, -2.0])),
            },
        })
    }

    /// Family with constant norms.
    pub fn base_family(&self) -> Result<EvolutionFamily<f64>> {
        EvolutionFamily::new(self.system()?, self.h_int)
    }

    /// Analytic certificate on the scenario grid, if one is shipped.
    pub fn analytic_certificate(&self, family: &EvolutionFamily<f64>) -> Result<Option<DichotomyCertificate<f64>>> {
        let Some(a) = &self.analytic else { return Ok(None) };
        let p = matrix(&a.projection, "analytic.projection")?;
        let cert = DichotomyCertificate::analytic(family.clone(), self.grid()?, |_| p.clone(), a.alpha, a.beta, a.d)?
            .with_note("analytic");
        Ok(Some(cert))
    }

    /// Family with the configured norms; also returns a Lyapunov warning.
    pub fn family(&self) -> Result<(EvolutionFamily<f64>, Option<String>)> {
        let base = self.base_family()?;
        let n = self.dim();
        let norms = match &self.norms {
            NormSpec::Constant => return Ok((base, None)),
            NormSpec::ScalarWeighted { weight } => NormFamily::scalar_weighted(n, weight.build())?,
            NormSpec::DiagonalWeighted { weights } => {
                NormFamily::diagonal_weighted(weights.iter().map(WeightSpec::build).collect())?
            }
            NormSpec::Lyapunov { margin, horizon, ds } => {
                let cert = self.analytic_certificate(&base)?.expect("validated");
                let times = spread_f64(-self.window, self.window, 41);
                let ly = build_lyapunov_norms(&base, &cert, *margin, *horizon, *ds, &times)?;
                return Ok((base.with_norms(ly.family)?, ly.warning));
            }
        };
        Ok((base.with_norms(norms)?, None))
    }

    fn admissibility_config(&self, seed: u64) -> AdmissibilityConfig<f64> {
        AdmissibilityConfig {
            half_width: self.window,
            h: self.h,
            sweep: self.sweep.clone(),
            horizon: self.horizon,
            probes: self.probes,
            seed,
            residual_tol: self.tolerances.residual,
            kernel_rel_tol: self.tolerances.kernel,
            ..Default::default()
        }
    }

    fn reconstruct_config(&self, seed: u64) -> ReconstructConfig<f64> {
        ReconstructConfig {
            admissibility: self.admissibility_config(seed),
            stride: self.stride,
            ..Default::default()
        }
    }

    fn input_signal(&self) -> Signal<f64> {
        match &self.input {
            Some(terms) => Signal::new(
                terms
                    .iter()
                    .map(|t| (t.profile.build(), DVector::from_column_slice(&t.coeffs)))
                    .collect(),
            ),
            None => Signal::indicator(0.0, 1.0, DVector::from_element(self.dim(), 1.0)),
        }
    }
}

fn spread_f64(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Report, artifacts and exit status of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// 0 success, 2 verdict contradicts the expectation, 3 inconclusive.
    pub exit_code: i32,
    pub report: Value,
    /// `(relative path, contents)`.
    pub files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn report_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json` and every artifact under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report_json())?;
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, contents)?;
        }
        Ok(())
    }
}

/// Maps errors to exit codes: configuration problems give 1, numerical
/// failures give 3.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parse(_)
        | Error::InvalidInput(_)
        | Error::InvalidExponent(_)
        | Error::InvalidPair { .. }
        | Error::InvalidGrid(_)
        | Error::ExcludedPair
        | Error::Io(_) => 1,
        _ => 3,
    }
}

struct Ctx<'a> {
    scenario: &'a Scenario,
    family: EvolutionFamily<f64>,
    p: Exponent<f64>,
    q: Exponent<f64>,
    seed: u64,
    files: Vec<(String, String)>,
    exit: i32,
}

impl Ctx<'_> {
    fn raise(&mut self, code: i32) {
        self.exit = self.exit.max(code);
    }

    fn file(&mut self, rel: &str, contents: String) {
        self.files.push((rel.to_string(), contents));
    }
}

/// Runs `task` (the config's task when `None`) with `seed` (the config's
/// seed when `None`).
pub fn run_scenario(scenario: &Scenario, task: Option<Task>, seed: Option<u64>) -> Result<RunOutput> {
    scenario.validate()?;
    let task = task.unwrap_or(scenario.task);
    let seed = seed.unwrap_or(scenario.seed);
    let (p, q) = scenario.exponents()?;
    if task == Task::Reconstruct && p.is_infinite() && q.reciprocal() == 1.0 {
        return Err(Error::ExcludedPair);
    }
    let (family, norm_warning) = scenario.family()?;
    let mut ctx = Ctx {
        scenario,
        family,
        p,
        q,
        seed,
        files: Vec::new(),
        exit: 0,
    };
    let mut report = json!({
        "scenario": scenario.name,
        "task": task.as_str(),
        "seed": seed,
        "p": p.to_string(),
        "q": q.to_string(),
        "window": scenario.window,
        "h": scenario.h,
        "dim": scenario.dim(),
        "system": serde_json::to_value(&scenario.system).expect("spec serializes"),
        "norms": serde_json::to_value(&scenario.norms).expect("spec serializes"),
    });
    if let Some(w) = norm_warning {
        report["norm_warning"] = json!(w);
    }
    match task {
        Task::Axioms => report["axioms"] = axioms(&mut ctx)?,
        Task::Evolve => report["evolve"] = evolve(&mut ctx)?,
        Task::Solve => report["solve"] = solve(&mut ctx, None)?,
        Task::Check => report["check"] = check(&mut ctx)?.0,
        Task::Reconstruct => {
            let (section, _) = reconstruct(&mut ctx)?;
            report["reconstruct"] = section;
        }
        Task::Perturb => report["perturb"] = perturb(&mut ctx)?,
        Task::Full => {
            report["axioms"] = axioms(&mut ctx)?;
            let (section, rec) = reconstruct(&mut ctx)?;
            report["reconstruct"] = section;
            if let Some(rec) = rec {
                report["solve"] = solve(&mut ctx, Some(&rec.certificate))?;
                if scenario.perturbation.is_some() {
                    report["perturb"] = perturb(&mut ctx)?;
                }
            }
        }
    }
    report["exit_code"] = json!(ctx.exit);
    Ok(RunOutput {
        exit_code: ctx.exit,
        report,
        files: ctx.files,
    })
}

fn csv_row(t: f64, values: impl IntoIterator<Item = f64>) -> String {
    let mut s = format!("{t:.10e}");
    for v in values {
        s.push_str(&format!(",{v:.12e}"));
    }
    s.push('\n');
    s
}

fn header(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

fn axioms(ctx: &mut Ctx) -> Result<Value> {
    let s = ctx.scenario;
    let fam = &ctx.family.clone();
    let w = s.window;
    let times = spread_f64(-w, w, 9);
    // Roundoff in T(t,s)T(s,tau) scales with |T(t,tau)|, so the check is
    // relative on expanding bundles.
    let mut cocycle: f64 = 0.0;
    let mut cocycle_rel: f64 = 0.0;
    for (i, &tau) in times.iter().enumerate() {
        for (j, &mid) in times.iter().enumerate().skip(i) {
            for &t in times.iter().skip(j) {
                let r = fam.cocycle_residual(tau, mid, t)?;
                let scale = crate::linalg::spectral_norm(&fam.propagator(t, tau)?).max(1.0);
                cocycle = cocycle.max(r);
                cocycle_rel = cocycle_rel.max(r / scale);
            }
        }
    }
    let max_lag = 4.0f64.min(2.0 * w);
    let sampling = GrowthSampling::uniform(-w, w, 9, max_lag, 9);
    let growth = fam.estimate_growth_bound(&sampling)?;
    let n = fam.dim();
    let mut vectors: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    vectors.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    let norm_times = spread_f64(-w, w, 41);
    let envelope = fam.norms().verify_envelope(&norm_times, &vectors)?;

    let mut growth_csv = String::from("lag,log_norm_max\n");
    for &lag in &sampling.lags {
        let worst = sampling
            .starts
            .iter()
            .map(|&st| fam.family_norm(st + lag, st).map(f64::ln))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        growth_csv.push_str(&csv_row(lag, [worst]));
    }
    ctx.file("traces/growth.csv", growth_csv);
    if !fam.norms().is_constant() {
        ctx.file("traces/norm_scaling.csv", scaling_table_csv(fam.norms(), &norm_times)?);
    }

    if cocycle_rel > s.tolerances.cocycle {
        ctx.raise(3);
    }
    let mut section = json!({
        "cocycle_residual": cocycle,
        "cocycle_tol": s.tolerances.cocycle,
        "cocycle_relative": cocycle_rel,
        "cocycle_ok": cocycle_rel <= s.tolerances.cocycle,
        "growth": { "k": growth.k, "c": growth.c },
        "envelope": {
            "c": fam.norms().envelope_c(),
            "eps": fam.norms().envelope_eps(),
            "max_lower_violation": envelope.max_lower_violation,
            "max_upper_violation": envelope.max_upper_violation,
            "fitted_c": envelope.fitted_c,
            "fitted_eps": envelope.fitted_eps,
            "holds": envelope.holds(1e-12),
        },
    });
    if let (NormSpec::Lyapunov { margin, .. }, Some(a)) = (&s.norms, &s.analytic) {
        if let Some(alpha) = a.alpha {
            let rate = alpha - margin;
            let mut worst: f64 = 0.0;
            for (t, tau) in sampling.pairs() {
                let ratio = fam.family_norm(t, tau)? / (-(rate * (t - tau))).exp();
                worst = worst.max(ratio);
            }
            section["contraction"] = json!({ "rate": rate, "worst_ratio": worst, "holds": worst <= 1.0 + 1e-9 });
        }
    }
    Ok(section)
}

fn evolve(ctx: &mut Ctx) -> Result<Value> {
    let grid = ctx.scenario.grid()?;
    let fam = &ctx.family.clone();
    let n = fam.dim();
    let cache = fam.cache(&grid)?;
    let mut x = DVector::from_element(n, 1.0);
    let mut csv = format!("t{},norm\n", header("x", n));
    let mut sup: f64 = 0.0;
    for i in 0..grid.len() {
        if i > 0 {
            x = cache.cell(i - 1) * x;
        }
        let t = grid.node(i);
        let nx = fam.norms().norm_at(t, &x)?;
        sup = sup.max(nx);
        csv.push_str(&csv_row(t, x.iter().copied().chain([nx])));
    }
    ctx.file("traces/orbit.csv", csv);
    Ok(json!({
        "initial": vec![1.0; n],
        "sup_norm": sup,
        "final_norm": fam.norms().norm_at(grid.end(), &x)?,
    }))
}

fn solve(ctx: &mut Ctx, reconstructed: Option<&DichotomyCertificate<f64>>) -> Result<Value> {
    let s = ctx.scenario;
    let grid = s.grid()?;
    let fam = ctx.family.clone();
    let norms = fam.norms();
    let n = fam.dim();
    let y = GridFunction::from_signal(grid, &s.input_signal(), n)?;
    let solver = BoundedSolver::new(&fam, grid, Boundary::Projected, s.horizon)?;
    let x = solver.solve(&y)?;
    let residual = mild_residual(&x, &y, &fam)?;
    let mut section = json!({
        "sup_norm": x.sup_norm(norms)?,
        "lp_norm": x.lp_norm(norms, ctx.p)?,
        "input_lq_norm": y.lp_norm(norms, ctx.q)?,
        "mild_residual": residual,
        "residual_ok": residual <= s.tolerances.residual,
    });
    let mut csv = format!("t{}{}\n", header("x", n), header("y", n));
    for i in 0..grid.len() {
        csv.push_str(&csv_row(
            grid.node(i),
            x.value(i).iter().chain(y.value(i).iter()).copied(),
        ));
    }
    ctx.file("traces/solution.csv", csv);

    let analytic = s.analytic_certificate(&fam)?;
    let mut oracles = serde_json::Map::new();
    for (label, cert) in [("analytic", analytic.as_ref()), ("reconstructed", reconstructed)] {
        let Some(cert) = cert else { continue };
        let g = green_solve(cert, &y)?;
        let gap = x.max_distance_in(&g.x, norms)?;
        let tol = s.tolerances.projection_match.max(10.0 * s.h * s.h);
        let bounds = dichotomy_solution_bounds(cert, ctx.p, ctx.q)?;
        let yq = y.lp_norm(norms, ctx.q)?;
        let sup = g.x.sup_norm(norms)?;
        oracles.insert(
            label.to_string(),
            json!({
                "discrepancy": gap,
                "tolerance": tol,
                "agrees": gap <= tol,
                "green_sup_norm": sup,
                "b_inf": bounds.b_inf,
                "b_p": bounds.b_p,
                "sup_bound_holds": sup <= bounds.b_inf * yq * (1.0 + 1e-3),
                "truncation_warning": g.warning,
            }),
        );
    }
    if !oracles.is_empty() {
        section["green"] = Value::Object(oracles);
    }
    if residual > s.tolerances.residual {
        ctx.raise(3);
    }
    Ok(section)
}

fn verdict_code(verdict: Verdict, expect: Expectation) -> i32 {
    match (verdict, expect) {
        (Verdict::Inconclusive, _) => 3,
        (Verdict::Admissible, Expectation::Admissible) | (Verdict::NotAdmissible, Expectation::NotAdmissible) => 0,
        _ => 2,
    }
}

fn check(ctx: &mut Ctx) -> Result<(Value, crate::admissibility::AdmissibilityReport<f64>)> {
    let cfg = ctx.scenario.admissibility_config(ctx.seed);
    let report = check_admissibility(&ctx.family, ctx.p, ctx.q, &cfg)?;
    let expect = ctx.scenario.expect.unwrap_or(Expectation::Admissible);
    ctx.raise(verdict_code(report.verdict, expect));
    if let Some(w) = &report.kernel.witness {
        let n = w.dim();
        let mut csv = format!("t{}\n", header("x", n));
        for i in 0..w.len() {
            csv.push_str(&csv_row(w.grid().node(i), w.value(i).iter().copied()));
        }
        ctx.file("traces/witness.csv", csv);
    }
    let mut csv = String::from("half_width,sigma_min\n");
    for &(tw, s) in &report.kernel.sweep {
        csv.push_str(&csv_row(tw, [s]));
    }
    ctx.file("traces/kernel_sweep.csv", csv);
    let mut section = report.to_json();
    section["expected"] = json!(match expect {
        Expectation::Admissible => "admissible",
        Expectation::NotAdmissible => "not-admissible",
    });
    Ok((section, report))
}

fn reconstruct(ctx: &mut Ctx) -> Result<(Value, Option<Reconstruction<f64>>)> {
    let (check_section, report) = check(ctx)?;
    let mut section = json!({ "check": check_section });
    let excluded = ctx.p.is_infinite() && ctx.q.reciprocal() == 1.0;
    if report.verdict != Verdict::Admissible || excluded {
        section["certified"] = json!(false);
        if excluded {
            section["note"] = json!("reconstruction unavailable for (p, q) = (inf, 1)");
        }
        return Ok((section, None));
    }
    let cfg = ctx.scenario.reconstruct_config(ctx.seed);
    let rec = match certify_from_report(&ctx.family, report, &cfg) {
        Ok(r) => r,
        Err(e @ (Error::Certification(_) | Error::Precondition(_) | Error::Convergence(_))) => {
            section["certified"] = json!(false);
            section["error"] = json!(e.to_string());
            ctx.raise(3);
            return Ok((section, None));
        }
        Err(e) => return Err(e),
    };
    section["certified"] = json!(true);
    section["reconstruction"] = rec.to_json();
    if let Some(analytic) = ctx.scenario.analytic_certificate(&ctx.family)? {
        let gap = projection_discrepancy(&rec.certificate, &analytic)?;
        let tol = ctx.scenario.tolerances.projection_match;
        section["analytic_match"] = json!({ "discrepancy": gap, "tolerance": tol, "agrees": gap <= tol });
        if gap > tol {
            ctx.raise(3);
        }
    }
    let mut cert_json = rec.certificate.to_json();
    cert_json["fitted"] = rec.to_json()["fitted"].clone();
    ctx.file(
        "certificate.json",
        serde_json::to_string_pretty(&cert_json).expect("certificate serializes") + "\n",
    );
    ctx.file("projections.csv", rec.certificate.projections_csv());
    Ok((section, Some(rec)))
}

fn perturb(ctx: &mut Ctx) -> Result<Value> {
    let s = ctx.scenario;
    let Some(pc) = &s.perturbation else {
        return Err(config_error("perturbation", "task perturb needs a perturbation spec"));
    };
    let structure = matrix(&pc.structure, "perturbation.structure")?;
    let template = PerturbationSpec::new(0.0, pc.profile.build(), structure, ctx.family.norms())?;
    let cfg = s.reconstruct_config(ctx.seed);
    let sweep = robustness_experiment(&ctx.family, &template, &pc.magnitudes, ctx.p, ctx.q, &cfg)?;
    ctx.file("sweep.csv", sweep.to_csv());
    if !sweep.small_all_certified() {
        ctx.raise(2);
    }
    Ok(sweep.to_json())
}
