//! Decentralized convex optimization over time-varying networks.
//!
//! The crate simulates primarily-averaged network dual ascent (PANDA), an
//! accelerated variant, the gradient-tracking DIGing baseline and two
//! idealized dual-ascent references, together with the certification
//! machinery (admissible step sizes, geometric rate certificates and
//! small-gain arrow verification) and an experiment harness.

pub mod harness;
pub mod model;
pub mod network;
pub mod seed;
pub mod solvers;
pub mod theory;

pub use model::{
    generate_least_squares_instance, instance_from_text, instance_to_text, LocalObjective,
    ModelError, ProblemInstance,
};
pub use network::{
    estimate_delta, iid_link_failure_sequence, metropolis_weights, verify_mixing_assumptions,
    GraphSequence, MixingRule, MixingSequence, SpectrumEstimate,
};
pub use solvers::{run, Algorithm, RoundMatrices, RunStatus, RunTrace, SolverError, SolverState};
pub use theory::{
    alpha_threshold, feasible_region_check, max_step_size, rate_bound, residual_sequences,
    small_gain_gains, verify_arrows, RateCertificate, TheoryError,
};
