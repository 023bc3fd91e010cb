//! Generalized hepatitis-B epidemic model with a general incidence function.
//!
//! The crate is split along the lines of the model's theory:
//!
//! - [`incidence`]: the incidence families `f(S, I)`, their analytic partials,
//!   the per-susceptible rate `f*` and a sampled hypothesis checker.
//! - [`model`]: the continuous SIR-type vector field, feasible bounds,
//!   equilibria, the basic reproduction number and local stability.
//! - [`solvers`]: the nonstandard finite difference (NSFD) scheme together
//!   with reference Euler and RK2 schemes, and trajectory recording.
//! - [`analysis`]: dynamic-consistency diagnostics (discrete R0, fixed-point
//!   stability of the NSFD map, Lyapunov and Dulac evaluators, convergence
//!   order and error-bound estimation).
//! - [`cli`]: scenario files and the command implementations behind the
//!   `hbv` binary.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod incidence;
pub mod model;
pub mod solvers;

pub use error::{Error, Result};
pub use incidence::{Family, HypothesisReport, Incidence, IncidenceSpec};
pub use model::{EquilibriumReport, FeasibleBounds, ModelParams, State, Verdict};
pub use solvers::{DenominatorFunction, Scheme, SchemeConfig, Trajectory};
