//! Adaptive identification with general loss functions and forgetting:
//! losses and comparison functions, synthetic data, the online identifier,
//! persistence-of-excitation certificates, ISS error bounds and a seeded
//! experiment harness.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod identifier;
pub mod iss;
pub mod kinf;
pub mod loss;
pub mod pe;
pub mod signal;
pub mod sphere;
mod svg;

pub use error::{Error, Result};
pub use experiment::{
    emit_plot_data, run_experiment, verify, ExperimentConfig, IdentifierSpec, PeChoice, RunReport, Theta0Spec,
    TrialReport, VerifyReport,
};
pub use identifier::{
    run_identifier, IdentifierConfig, IdentifierState, Snapshot, SolverFlag, SolverMode, SolverSettings,
};
pub use iss::{
    asymptotic_bound, bound_rhs, build_g2, build_xi_general, check_iss, invert_xi, BoundRow, BoundTrajectory,
    ConstantsLabel, XiConstruction,
};
pub use kinf::XiFunction;
pub use loss::{sandwich_bounds, verify_properties, LossSpec, NormTag, PropertyReport, SandwichBounds};
pub use pe::{certify_pe, certify_pe_with, window_gamma, KInfinityPair, PECertificate, PeSettings};
pub use signal::{generate_trajectory, ingest_trajectory, NoiseModel, RegressorGen, SystemConfig, Trajectory};
pub use sphere::SphereSettings;
