use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incidence::log_axis;
use crate::model::{ModelParams, State};
use crate::solvers::{
    nsfd_step_with, simulate, DenominatorFunction, Scheme, SchemeConfig, Trajectory,
};

/// Relative slack when checking that a step size divides the horizon.
const DIVIDES_TOL: f64 = 1e-9;

/// Ratio between the smallest studied step and the reference step.
pub const REFERENCE_REFINEMENT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub scheme: Scheme,
    pub t_end: f64,
    pub dt_ref: f64,
    /// Strictly decreasing step sizes that completed.
    pub dt_list: Vec<f64>,
    /// `|dS| + |dI| + |dR|` against the reference at `t_end`, one per step size.
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln(error)` against `ln(dt)`.
    pub fitted_order: f64,
    /// Step sizes whose run became non-finite.
    pub excluded: Vec<f64>,
}

impl ConvergenceStudy {
    pub fn errors_decreasing(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

fn steps_for(t_end: f64, dt: f64) -> Result<usize> {
    let n = (t_end / dt).round();
    if n < 1.0 || (n * dt - t_end).abs() > DIVIDES_TOL * t_end {
        return Err(Error::Precondition(format!(
            "step size {dt} does not divide the horizon {t_end}"
        )));
    }
    Ok(n as usize)
}

/// Least-squares slope of `ln(err)` on `ln(dt)`.
pub fn fit_order(dts: &[f64], errors: &[f64]) -> Result<f64> {
    if dts.len() != errors.len() || dts.len() < 2 {
        return Err(Error::Precondition(
            "order fit needs at least two (dt, error) pairs".into(),
        ));
    }
    if errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::Precondition(format!(
            "order fit needs positive finite errors, got {errors:?}"
        )));
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Measures the global error at `t_end` for each step size against an RK2
/// reference run at `min(dt_list) / 100`, and fits the convergence order.
/// The per-step-size runs execute concurrently.
pub fn estimate_convergence_order(
    params: &ModelParams,
    x0: &State,
    scheme: Scheme,
    phi: DenominatorFunction,
    dt_list: &[f64],
    t_end: f64,
) -> Result<ConvergenceStudy> {
    if dt_list.len() < 4 {
        return Err(Error::Precondition(format!(
            "convergence study needs at least 4 step sizes, got {}",
            dt_list.len()
        )));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Precondition(format!(
            "horizon {t_end} must be positive"
        )));
    }
    if dt_list.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::Precondition("step sizes must be positive".into()));
    }
    if dt_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition(
            "step sizes must be strictly decreasing".into(),
        ));
    }
    let configs = dt_list
        .iter()
        .map(|&dt| {
            let steps = steps_for(t_end, dt)?;
            let mut cfg = SchemeConfig::for_scheme(scheme, dt, steps);
            if scheme == Scheme::Nsfd {
                cfg.phi = Some(phi);
            }
            Ok(cfg.with_stride(steps))
        })
        .collect::<Result<Vec<_>>>()?;
    let dt_ref = dt_list[dt_list.len() - 1] / REFERENCE_REFINEMENT;
    let ref_steps = steps_for(t_end, dt_ref)?;
    let ref_cfg = SchemeConfig::rk2(dt_ref, ref_steps).with_stride(ref_steps);

    let (reference, runs) = thread::scope(|scope| {
        let reference = scope.spawn(|| simulate(params, x0, &ref_cfg));
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || simulate(params, x0, cfg)))
            .collect();
        let runs: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect();
        (reference.join().expect("reference thread panicked"), runs)
    });
    let reference = reference?;
    if reference.is_truncated() {
        return Err(Error::Precondition(format!(
            "reference RK2 run at dt = {dt_ref} became non-finite"
        )));
    }
    let y_ref = *reference.last().expect("reference has a final state");

    let mut kept_dt = Vec::new();
    let mut errors = Vec::new();
    let mut excluded = Vec::new();
    for (cfg, run) in configs.iter().zip(runs) {
        let run = run?;
        match (run.is_truncated(), run.last()) {
            (false, Some(y)) => {
                kept_dt.push(cfg.dt);
                errors.push(y.l1_distance(&y_ref));
            }
            _ => excluded.push(cfg.dt),
        }
    }
    let fitted_order = fit_order(&kept_dt, &errors)?;
    Ok(ConvergenceStudy {
        scheme,
        t_end,
        dt_ref,
        dt_list: kept_dt,
        errors,
        fitted_order,
        excluded,
    })
}

/// Global error `e_n = |dS| + |dI| + |dR|` of `run` at each of its recorded
/// times, against a dense `reference` whose step divides the run's step.
pub fn error_history(run: &Trajectory, reference: &Trajectory) -> Result<Vec<(f64, f64)>> {
    let ref_dt = reference.config.dt * reference.config.stride as f64;
    let run_dt = run.config.dt * run.config.stride as f64;
    let ratio = (run_dt / ref_dt).round();
    if ratio < 1.0 || (ratio * ref_dt - run_dt).abs() > DIVIDES_TOL * run_dt {
        return Err(Error::Precondition(format!(
            "reference spacing {ref_dt} does not divide run spacing {run_dt}"
        )));
    }
    let k = ratio as usize;
    run.t
        .iter()
        .zip(&run.states)
        .enumerate()
        .map(|(n, (&t, x))| {
            let y = reference
                .states
                .get(n * k)
                .ok_or_else(|| Error::Precondition(format!("reference run ends before t = {t}")))?;
            Ok((t, x.l1_distance(y)))
        })
        .collect()
}

/// Box `[0, s_max] x [0, i_max] x [0, r_max]` over which the error-bound
/// constants are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRegion {
    pub s_max: f64,
    pub i_max: f64,
    pub r_max: f64,
}

impl BoundRegion {
    /// Box hull of the given trajectories and of the feasible bounds.
    pub fn hull(params: &ModelParams, trajectories: &[&Trajectory]) -> Self {
        let fb = params.feasible_bounds();
        let mut region = BoundRegion {
            s_max: fb.s_max,
            i_max: fb.si_max,
            r_max: fb.r_max,
        };
        for traj in trajectories {
            for x in &traj.states {
                region.s_max = region.s_max.max(x.s);
                region.i_max = region.i_max.max(x.i);
                region.r_max = region.r_max.max(x.r);
            }
        }
        region
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Largest column sum of `|dF_j/dx|` over the region.
    pub m: f64,
    /// `L + M`.
    pub tau: f64,
    /// Sum of the sup-norms of `S''`, `I''`, `R''` along the reference.
    pub l: f64,
    /// Sum of the sup-norms of the second step-size derivatives of the
    /// NSFD update maps.
    pub big_m: f64,
    pub region: BoundRegion,
}

/// Axis made of `n` evenly spaced points on `[0, max]` merged with the
/// log-spaced hypothesis axis.
fn mixed_axis(max: f64, n: usize) -> Vec<f64> {
    let mut axis: Vec<f64> = (0..n)
        .map(|k| max * k as f64 / (n - 1) as f64)
        .chain(log_axis(max, n))
        .collect();
    axis.sort_by(f64::total_cmp);
    axis.dedup();
    axis
}

fn second_derivatives(params: &ModelParams, x: &State) -> [f64; 3] {
    let j = params.jacobian_unchecked(x);
    let v = params.rhs(x);
    let mut out = [0.0; 3];
    for (row, o) in j.iter().zip(out.iter_mut()) {
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

/// Estimates `m` and `tau = L + M` for the first-order error bound.
///
/// `m` scans the Jacobian on an `(S, I)` grid (it does not depend on `R`);
/// `L` uses the exact second time derivative `J(x) F(x)` along `reference`;
/// `M` uses central differences in the step size for `dt` in `(0, dt_max]`
/// at states of a `grid_n^3` grid.
pub fn estimate_bound_constants(
    params: &ModelParams,
    region: &BoundRegion,
    reference: &Trajectory,
    phi: DenominatorFunction,
    dt_max: f64,
    grid_n: usize,
) -> Result<BoundConstants> {
    if grid_n < 32 {
        return Err(Error::Precondition(format!(
            "bound constants need grid_n >= 32, got {grid_n}"
        )));
    }
    if !(region.s_max > 0.0 && region.i_max > 0.0 && region.r_max >= 0.0) {
        return Err(Error::Precondition(format!("degenerate region {region:?}")));
    }
    if !(dt_max > 0.0 && dt_max.is_finite()) {
        return Err(Error::Precondition(format!(
            "dt_max = {dt_max} must be positive"
        )));
    }

    let s_axis = mixed_axis(region.s_max, grid_n);
    let i_axis = mixed_axis(region.i_max, grid_n);

    let mut m = 0.0_f64;
    for &s in &s_axis {
        for &i in &i_axis {
            let j = params.jacobian_unchecked(&State::raw(s, i, 0.0));
            for col in 0..3 {
                let sum: f64 = j.iter().map(|row| row[col].abs()).sum();
                m = m.max(sum);
            }
        }
    }

    let mut l_parts = [0.0_f64; 3];
    for x in &reference.states {
        for (acc, d) in l_parts.iter_mut().zip(second_derivatives(params, x)) {
            *acc = acc.max(d.abs());
        }
    }
    let l = l_parts.iter().sum();

    let h = 1e-4 * dt_max;
    let n_dt = 8;
    let dts: Vec<f64> = std::iter::once(h)
        .chain((1..=n_dt).map(|k| dt_max * k as f64 / n_dt as f64))
        .collect();
    let r_axis: Vec<f64> = (0..grid_n)
        .map(|k| region.r_max * k as f64 / (grid_n - 1) as f64)
        .collect();
    let coarse = |axis: &[f64]| -> Vec<f64> {
        let stride = (axis.len() / grid_n).max(1);
        axis.iter().copied().step_by(stride).collect()
    };
    let (s_grid, i_grid) = (coarse(&s_axis), coarse(&i_axis));
    let mut m_parts = [0.0_f64; 3];
    for &s in &s_grid {
        for &i in &i_grid {
            for &r in &r_axis {
                let x = State::raw(s, i, r);
                for &dt in &dts {
                    let lo = nsfd_step_with(params, &x, phi.eval(dt - h)).to_array();
                    let mid = nsfd_step_with(params, &x, phi.eval(dt)).to_array();
                    let hi = nsfd_step_with(params, &x, phi.eval(dt + h)).to_array();
                    for k in 0..3 {
                        let d2 = (hi[k] - 2.0 * mid[k] + lo[k]) / (h * h);
                        m_parts[k] = m_parts[k].max(d2.abs());
                    }
                }
            }
        }
    }
    let big_m = m_parts.iter().sum();

    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Precondition(format!(
            "estimated m = {m} is not positive"
        )));
    }
    Ok(BoundConstants {
        m,
        tau: l + big_m,
        l,
        big_m,
        region: *region,
    })
}

/// `tau dt / (2 m) (exp(m t) - 1)`
pub fn error_bound(constants: &BoundConstants, dt: f64, t: f64) -> f64 {
    constants.tau * dt / (2.0 * constants.m) * (constants.m * t).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incidence::IncidenceSpec;
    use crate::model::tests::example2;

    #[test]
    fn fit_recovers_slopes() {
        let dts = [0.4, 0.2, 0.1, 0.05];
        let e1: Vec<f64> = dts.iter().map(|d| 3.0 * d).collect();
        let e2: Vec<f64> = dts.iter().map(|d| 0.5 * d * d).collect();
        assert!((fit_order(&dts, &e1).unwrap() - 1.0).abs() < 1e-12);
        assert!((fit_order(&dts, &e2).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_order(&dts[..1], &e1[..1]).is_err());
        assert!(fit_order(&dts, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn study_preconditions() {
        let p = example2();
        let x0 = State::raw(100.0, 5.0, 500.0);
        let phi = DenominatorFunction::Identity;
        assert!(estimate_convergence_order(&p, &x0, Scheme::Nsfd, phi, &[0.1], 1.0).is_err());
        assert!(estimate_convergence_order(
            &p,
            &x0,
            Scheme::Nsfd,
            phi,
            &[0.4, 0.2, 0.3, 0.05],
            1.2
        )
        .is_err());
        assert!(
            estimate_convergence_order(&p, &x0, Scheme::Nsfd, phi, &[0.4, 0.3, 0.2, 0.1], 1.0)
                .is_err()
        );
    }

    #[test]
    fn linear_subsystem_nsfd_is_first_order() {
        // alpha = 0: S' = Lambda - B S has the exact solution
        // S(t) = Sbar + (S0 - Sbar) exp(-B t).
        let f = IncidenceSpec::bilinear(0.0).unwrap();
        let p = ModelParams::new(2.0, 0.3, 0.0, 0.0, 0.2, f).unwrap();
        let b = p.susceptible_outflow();
        let sbar = p.lambda() / b;
        let s0 = 10.0;
        let t_end = 4.0;
        let exact = sbar + (s0 - sbar) * (-b * t_end).exp();
        let dts = [0.4, 0.2, 0.1, 0.05];
        let errors: Vec<f64> = dts
            .iter()
            .map(|&dt| {
                let steps = (t_end / dt).round() as usize;
                let cfg = SchemeConfig::nsfd(dt, steps, DenominatorFunction::Identity);
                let traj = simulate(&p, &State::raw(s0, 0.0, 0.0), &cfg).unwrap();
                (traj.last().unwrap().s - exact).abs()
            })
            .collect();
        let order = fit_order(&dts, &errors).unwrap();
        assert!((order - 1.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn linear_constants() {
        // alpha = nu = mu1 = beta = 0: J = -mu0 I, so every column sum is mu0.
        let f = IncidenceSpec::bilinear(0.0).unwrap();
        let p = ModelParams::new(1.0, 0.2, 0.0, 0.0, 0.0, f).unwrap();
        let x0 = State::raw(1.0, 2.0, 3.0);
        let reference = simulate(&p, &x0, &SchemeConfig::rk2(0.01, 100)).unwrap();
        let region = BoundRegion::hull(&p, &[&reference]);
        let c = estimate_bound_constants(
            &p,
            &region,
            &reference,
            DenominatorFunction::Identity,
            0.5,
            32,
        )
        .unwrap();
        assert!((c.m - 0.2).abs() < 1e-15);
        assert!(c.tau >= 0.0 && c.tau.is_finite());
        // S'' = mu0^2 (S - Sbar) is largest at t = 0: 0.04 * |1 - 5| = 0.16.
        // I'' = mu0^2 I, R'' = mu0^2 R.
        assert!(
            (c.l - (0.16 + 0.04 * 2.0 + 0.04 * 3.0)).abs() < 1e-12,
            "{}",
            c.l
        );
    }

    #[test]
    fn bound_shape() {
        let c = BoundConstants {
            m: 0.5,
            tau: 2.0,
            l: 1.0,
            big_m: 1.0,
            region: BoundRegion {
                s_max: 1.0,
                i_max: 1.0,
                r_max: 1.0,
            },
        };
        assert_eq!(error_bound(&c, 0.1, 0.0), 0.0);
        assert!(error_bound(&c, 0.1, 1e-12) < 1e-12);
        let b1 = error_bound(&c, 0.1, 3.0);
        let b2 = error_bound(&c, 0.2, 3.0);
        assert!((b2 - 2.0 * b1).abs() < 1e-14);
        assert!((b1 - 2.0 * 0.1 / 1.0 * (1.5f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn error_history_alignment() {
        let p = example2();
        let x0 = State::raw(100.0, 5.0, 500.0);
        let reference = simulate(&p, &x0, &SchemeConfig::rk2(0.01, 100)).unwrap();
        let run = simulate(
            &p,
            &x0,
            &SchemeConfig::nsfd(0.1, 10, DenominatorFunction::Identity),
        )
        .unwrap();
        let hist = error_history(&run, &reference).unwrap();
        assert_eq!(hist.len(), 11);
        assert_eq!(hist[0], (0.0, 0.0));
        assert!(hist.iter().skip(1).all(|&(_, e)| e > 0.0));

        let coarse_ref = simulate(&p, &x0, &SchemeConfig::rk2(0.3, 10)).unwrap();
        assert!(error_history(&run, &coarse_ref).is_err());
    }
}
