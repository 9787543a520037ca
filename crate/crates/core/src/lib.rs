//! Exponential dichotomies on the whole line through admissibility of
//! `L^p`/`L^q` pairs, with respect to a time-dependent family of norms.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! scenario runner and CLI work in `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admissibility;
pub mod error;
pub mod evolution;
pub mod function_space;
pub mod green;
pub mod linalg;
pub mod norm_family;
pub mod perturbation;
pub mod reconstruct;
pub mod scalar;
pub mod scenario;

pub use admissibility::{
    check_admissibility, AdmissibilityConfig, AdmissibilityReport, Boundary, BoundedSolver, Verdict,
};
pub use error::{Error, Result};
pub use evolution::{EvolutionFamily, GrowthBound, GrowthSampling, System};
pub use function_space::{Exponent, Grid, GridFunction, Profile, Signal};
pub use green::{green_solve, DichotomyCertificate};
pub use norm_family::{NormFamily, Weight};
pub use perturbation::{robustness_experiment, PerturbationSpec};
pub use reconstruct::{certify_dichotomy, ReconstructConfig, Reconstruction};
pub use scalar::Scalar;
pub use scenario::{load_scenario, parse_scenario, run_scenario, RunOutput, Scenario, Task};

pub type NormFamilyF64 = NormFamily<f64>;
pub type EvolutionFamilyF64 = EvolutionFamily<f64>;
pub type GridFunctionF64 = GridFunction<f64>;
pub type DichotomyCertificateF64 = DichotomyCertificate<f64>;

pub type NormFamilyF32 = NormFamily<f32>;
pub type EvolutionFamilyF32 = EvolutionFamily<f32>;
pub type GridFunctionF32 = GridFunction<f32>;
pub type DichotomyCertificateF32 = DichotomyCertificate<f32>;
