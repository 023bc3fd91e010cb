use serde::{Deserialize, Serialize};

use super::quadrature::adaptive_simpson;
use crate::error::{Error, Result};
use crate::incidence::Incidence;
use crate::model::ModelParams;
use crate::solvers::Trajectory;

/// Absolute tolerance of the `V(S)` quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;
const QUADRATURE_DEPTH: u32 = 40;

/// `f(S0, I) / f(t, I)`, replaced for `I = 0` by its limit
/// `df/dI(S0, 0) / df/dI(t, 0)`. The limit is also used when either rate
/// is subnormal, where the quotient would lose all precision.
fn ratio(params: &ModelParams, s0: f64, i: f64, t: f64) -> f64 {
    let f = params.incidence();
    if i > 0.0 {
        let (num, den) = (f.rate(s0, i), f.rate(t, i));
        if num.is_normal() && den.is_normal() {
            return num / den;
        }
    }
    f.rate_partials(s0, 0.0).1 / f.rate_partials(t, 0.0).1
}

/// `V(S) = S - S0 - int_{S0}^{S} f(S0, I)/f(t, I) dt` at the current `I`.
///
/// Integrated as `int (1 - ratio)`, which has the sign of `S - S0` on the
/// whole interval.
pub fn lyapunov_v(params: &ModelParams, s: f64, i: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) || !(i >= 0.0 && i.is_finite()) {
        return Err(Error::Domain(format!(
            "Lyapunov function needs S > 0 and I >= 0, got ({s}, {i})"
        )));
    }
    let s0 = params.dfe().s;
    let integrand = |t: f64| 1.0 - ratio(params, s0, i, t);
    let v = adaptive_simpson(&integrand, s0, s, QUADRATURE_TOL, QUADRATURE_DEPTH);
    if !v.is_finite() {
        return Err(Error::Domain(format!("V({s}, {i}) is not finite")));
    }
    // Quadrature noise near S0 may dip just below zero.
    Ok(if v < 0.0 && v > -QUADRATURE_TOL {
        0.0
    } else {
        v
    })
}

/// `L(S, I) = V(S) + I`.
pub fn lyapunov_value(params: &ModelParams, s: f64, i: f64) -> Result<f64> {
    Ok(lyapunov_v(params, s, i)? + i)
}

/// `g(I) = f(S0, I)/I - (mu0 + mu1 + beta)`; negative for `I > 0` when
/// `R0 <= 1`.
pub fn lyapunov_g(params: &ModelParams, i: f64) -> Result<f64> {
    if !(i > 0.0 && i.is_finite()) {
        return Err(Error::Domain(format!("g(I) needs I > 0, got {i}")));
    }
    let s0 = params.dfe().s;
    Ok(params.incidence().rate(s0, i) / i - params.infected_outflow())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovDescent {
    pub passes: bool,
    /// Largest `L(n+1) - L(n)` over the checked steps (negative when
    /// strictly decreasing).
    pub max_increase: f64,
    /// Index of the first state where `L` is undefined (`S <= 0`, `I < 0` or
    /// non-finite).
    pub invalid_state: Option<usize>,
    pub values: Vec<f64>,
}

/// Evaluates `L` along `(S_n, I_n)` and checks that it never increases by
/// more than `max(1e-9 L(start), 2 QUADRATURE_TOL)` from the first step
/// onwards.
pub fn lyapunov_descent_check(
    params: &ModelParams,
    trajectory: &Trajectory,
) -> Result<LyapunovDescent> {
    let r0 = params.basic_reproduction_number();
    if r0 > 1.0 {
        return Err(Error::Precondition(format!(
            "Lyapunov descent applies to R0 <= 1, got R0 = {r0}"
        )));
    }
    let mut values = Vec::with_capacity(trajectory.len());
    let mut invalid_state = None;
    for (n, x) in trajectory.states.iter().enumerate() {
        match lyapunov_value(params, x.s, x.i) {
            Ok(v) => values.push(v),
            Err(_) => {
                invalid_state = Some(n);
                break;
            }
        }
    }
    let tol = values
        .first()
        .map_or(0.0, |l0| (1e-9 * l0.abs()).max(2.0 * QUADRATURE_TOL));
    let max_increase = values
        .windows(2)
        .skip(1)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let passes = invalid_state.is_none() && (values.len() < 3 || max_increase <= tol);
    Ok(LyapunovDescent {
        passes,
        max_increase: if max_increase.is_finite() {
            max_increase
        } else {
            0.0
        },
        invalid_state,
        values,
    })
}

/// Divergence of `(F, G)/I` for the `(S, I)` sub-system:
/// `-(1/I) df/dS - (mu0 + nu)/I + d(f/I)/dI`.
pub fn dulac_expression(params: &ModelParams, s: f64, i: f64) -> Result<f64> {
    if !(i > 0.0 && i.is_finite()) || !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Domain(format!(
            "Dulac expression needs S >= 0 and I > 0, got ({s}, {i})"
        )));
    }
    let f = params.incidence();
    let val = f.rate(s, i);
    let (fs, fi) = f.rate_partials(s, i);
    let d_f_over_i = (i * fi - val) / (i * i);
    Ok(-fs / i - params.susceptible_outflow() / i + d_f_over_i)
}
