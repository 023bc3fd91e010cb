use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incidence::Incidence;
use crate::model::{quadratic_eigenvalues, ModelParams, State};
use crate::solvers::DenominatorFunction;

/// Scalar blocks of the linearised NSFD sub-map at the disease-free
/// equilibrium, variables ordered `(I, S)`:
///
/// ```text
/// J0 = [ F + T   0 ]
///      [   A     C ]
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NextGenerationBlocks {
    pub f: f64,
    pub t: f64,
    pub c: f64,
    pub a: f64,
    /// `1 - T`, kept in the closed form `phi A / (1 + phi A)` so that small
    /// `phi` does not cancel.
    pub one_minus_t: f64,
}

pub fn discrete_next_generation(
    params: &ModelParams,
    phi: DenominatorFunction,
    dt: f64,
) -> NextGenerationBlocks {
    let ph = phi.eval(dt);
    let s0 = params.dfe().s;
    let (_, di) = params.incidence().rate_partials(s0, 0.0);
    let inf = 1.0 + ph * params.infected_outflow();
    let sus = 1.0 + ph * params.susceptible_outflow();
    NextGenerationBlocks {
        f: ph * di / inf,
        t: 1.0 / inf,
        c: 1.0 / sus,
        a: -ph * di / sus,
        one_minus_t: ph * params.infected_outflow() / inf,
    }
}

/// Spectral radius of `F (1 - T)^{-1}` for the NSFD map. All blocks are
/// scalars, so the spectral radius is `|F / (1 - T)|`.
pub fn discrete_r0(params: &ModelParams, phi: DenominatorFunction, dt: f64) -> f64 {
    let blocks = discrete_next_generation(params, phi, dt);
    (blocks.f / blocks.one_minus_t).abs()
}

/// Jacobian of the `(S, I)` part of the explicit NSFD map at `x`, with
/// denominator value `phi`. Requires `S > 0`.
pub fn nsfd_map_jacobian(params: &ModelParams, x: &State, phi: f64) -> [[f64; 2]; 2] {
    let f = params.incidence();
    let rate = f.rate(x.s, x.i);
    let (fs, fi) = f.rate_partials(x.s, x.i);
    let g = rate / x.s;
    let g_s = (fs - g) / x.s;
    let g_i = fi / x.s;
    let d = 1.0 + phi * (g + params.susceptible_outflow());
    let p = 1.0 + phi * params.infected_outflow();
    let s_new = (x.s + phi * params.lambda()) / d;
    let j00 = (1.0 - phi * s_new * g_s) / d;
    let j01 = -phi * s_new * g_i / d;
    let j10 = phi * (j00 * g + s_new * g_s) / p;
    let j11 = (1.0 + phi * (j01 * g + s_new * g_i)) / p;
    [[j00, j01], [j10, j11]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTestResult {
    pub dt: f64,
    pub jacobian: [[f64; 2]; 2],
    pub trace: f64,
    pub det: f64,
    /// `|Tr| < 1 + det < 2`
    pub condition_holds: bool,
    pub eigen_moduli: [f64; 2],
    /// `1 / (1 + phi mu0)`, the decoupled R-eigenvalue.
    pub third_eigen: f64,
}

/// Linear stability of the endemic fixed point of the NSFD map: evaluates
/// the Jury conditions `|Tr J| < 1 + det J < 2` on the exact `(S, I)`
/// Jacobian at the endemic equilibrium.
pub fn nsfd_dee_stability(
    params: &ModelParams,
    phi: DenominatorFunction,
    dt: f64,
) -> Result<StabilityTestResult> {
    let dee = params.endemic_equilibrium()?.ok_or_else(|| {
        Error::Precondition(format!(
            "NSFD endemic stability needs R0 > 1, got R0 = {}",
            params.basic_reproduction_number()
        ))
    })?;
    let ph = phi.eval(dt);
    let j = nsfd_map_jacobian(params, &dee, ph);
    let trace = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let [l1, l2] = quadratic_eigenvalues(trace, det);
    Ok(StabilityTestResult {
        dt,
        jacobian: j,
        trace,
        det,
        condition_holds: trace.abs() < 1.0 + det && 1.0 + det < 2.0,
        eigen_moduli: [l1.modulus(), l2.modulus()],
        third_eigen: 1.0 / (1.0 + ph * params.mu0()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incidence::IncidenceSpec;
    use crate::model::tests::{bilinear, example1, example2};
    use crate::solvers::nsfd_step_with;

    fn phis() -> [DenominatorFunction; 2] {
        [
            DenominatorFunction::Identity,
            DenominatorFunction::exp_relaxation(0.4).unwrap(),
        ]
    }

    #[test]
    fn discrete_r0_equals_continuous() {
        for p in [example1(), example2(), bilinear(0.1)] {
            let r0 = p.basic_reproduction_number();
            for phi in phis() {
                for dt in [1e-3, 1.0, 2.5, 1e3] {
                    let d = discrete_r0(&p, phi, dt);
                    assert!((d - r0).abs() <= 1e-12 * r0, "{d} vs {r0}");
                }
            }
        }
        let t1 = discrete_r0(&example1(), DenominatorFunction::Identity, 2.5);
        assert!((t1 - 0.7795).abs() < 1e-4);
        let zero = example1().with_incidence(IncidenceSpec::bilinear(0.0).unwrap());
        assert_eq!(discrete_r0(&zero, DenominatorFunction::Identity, 1.0), 0.0);
    }

    #[test]
    fn next_generation_blocks_are_consistent() {
        let b = discrete_next_generation(&example1(), DenominatorFunction::Identity, 2.5);
        assert!(b.f >= 0.0 && b.t > 0.0 && b.t < 1.0 && b.c < 1.0);
        assert!((b.one_minus_t - (1.0 - b.t)).abs() < 1e-15);
        assert!(b.a <= 0.0);
    }

    #[test]
    fn map_jacobian_matches_finite_differences() {
        let f = IncidenceSpec::crowley_martin(0.5, 0.1, 0.2, 0.3).unwrap();
        let p = ModelParams::new(2.0, 0.01, 0.01, 0.1, 0.05, f).unwrap();
        let dee = p.endemic_equilibrium().unwrap().unwrap();
        for ph in [0.1, 3.0, 50.0] {
            let j = nsfd_map_jacobian(&p, &dee, ph);
            let h = 1e-6;
            let step = |s: f64, i: f64| nsfd_step_with(&p, &State::raw(s, i, dee.r), ph);
            let ds_p = step(dee.s + h, dee.i);
            let ds_m = step(dee.s - h, dee.i);
            let di_p = step(dee.s, dee.i + h);
            let di_m = step(dee.s, dee.i - h);
            let fd = [
                [(ds_p.s - ds_m.s) / (2.0 * h), (di_p.s - di_m.s) / (2.0 * h)],
                [(ds_p.i - ds_m.i) / (2.0 * h), (di_p.i - di_m.i) / (2.0 * h)],
            ];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((j[r][c] - fd[r][c]).abs() < 1e-7, "phi={ph} {j:?} {fd:?}");
                }
            }
        }
    }

    #[test]
    fn bilinear_condition_holds_for_all_steps() {
        let p = bilinear(0.1);
        for dt in [0.1, 1.0, 10.0, 100.0] {
            let r = nsfd_dee_stability(&p, DenominatorFunction::Identity, dt).unwrap();
            assert!(r.condition_holds, "{r:?}");
            assert!(r.det < 1.0);
            assert!(r.eigen_moduli.iter().all(|&m| m < 1.0));
            assert!(r.third_eigen < 1.0);
        }
    }

    #[test]
    fn small_step_moduli_approach_one() {
        let p = bilinear(0.1);
        let r = nsfd_dee_stability(&p, DenominatorFunction::Identity, 1e-6).unwrap();
        for m in r.eigen_moduli {
            assert!(m < 1.0 && m > 1.0 - 1e-5, "{m}");
        }
    }

    #[test]
    fn requires_endemic_point() {
        assert!(matches!(
            nsfd_dee_stability(&example1(), DenominatorFunction::Identity, 1.0),
            Err(Error::Precondition(_))
        ));
    }
}
