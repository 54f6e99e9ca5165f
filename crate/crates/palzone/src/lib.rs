//! Sound zone control with parametric array loudspeaker (PAL) arrays.
//!
//! A PAL element radiates two intense ultrasonic carriers whose nonlinear
//! interaction in air demodulates audible sound. Under the quasilinear
//! approximation the audio pressure generated by an N-element array at a
//! field point is the sesquilinear form s1^H H s2 of the two carrier
//! drive vectors, where H collects the coupled contributions of every
//! element pair through a distributed virtual-source integral. This
//! crate assembles those transfer tensors, maximizes the bright/dark
//! acoustic contrast by an alternating generalized-eigenvalue iteration,
//! compares against a conventional (EDL) array driven by the classic
//! one-shot contrast eigensolution, and measures robustness under seeded
//! amplitude/phase perturbations of the transfer functions.
//!
//! Modules:
//! - [`model`]: medium, geometry, zones, frequency plans, config validation
//! - [`absorption`]: ISO 9613-1 atmospheric absorption
//! - [`special`]: Bessel J0/Y0 and Hankel H0(1) for complex arguments
//! - [`linalg`]: dense complex matrices, Cholesky, Jacobi eigensolver
//! - [`field`]: Rayleigh integrals, virtual sources, transfer tensors, SPL maps
//! - [`optimizer`]: acoustic contrast cost and the ACC iterations
//! - [`robustness`]: perturbation model and Monte-Carlo sweeps
//! - [`cache`]: on-disk tensor/table cache
//! - [`plot`]: CSV-sibling SVG line charts and heatmaps
//! - [`cli`]: the `palzone` command-line experiments

pub mod absorption;
pub mod cache;
pub mod cli;
pub mod field;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod plot;
pub mod robustness;
pub mod special;

pub use absorption::absorption_coefficient;
pub use field::{
    assemble_edl_vector, assemble_pal_tensor, audio_pressure, render_field, ultrasound_field,
    virtual_source_density, ArrayKind, SourcePair, TransferTensor, UltrasoundFieldTable,
};
pub use model::{validate_config, ExperimentConfig, Model};
pub use optimizer::{
    acc_edl, acc_pal, acc_pal_multi, acoustic_contrast, build_g_matrices,
    max_generalized_eigenpair, ContrastResult, EigenPairResult,
};
pub use robustness::{perturb_tensor, run_robustness_sweep, PerturbationSpec, RobustnessSummary};
pub use special::{bessel_j0, bessel_y0, hankel1_0};
