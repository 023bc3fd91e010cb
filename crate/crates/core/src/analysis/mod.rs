//! Dynamic-consistency diagnostics for the NSFD scheme.

mod convergence;
mod lyapunov;
mod quadrature;
mod stability;

pub use convergence::{
    error_bound, error_history, estimate_bound_constants, estimate_convergence_order, fit_order,
    BoundConstants, BoundRegion, ConvergenceStudy,
};
pub use lyapunov::{
    dulac_expression, lyapunov_descent_check, lyapunov_g, lyapunov_v, lyapunov_value,
    LyapunovDescent, QUADRATURE_TOL,
};
pub use quadrature::adaptive_simpson;
pub use stability::{
    discrete_next_generation, discrete_r0, nsfd_dee_stability, nsfd_map_jacobian,
    NextGenerationBlocks, StabilityTestResult,
};
