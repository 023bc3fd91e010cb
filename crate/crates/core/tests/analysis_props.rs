mod common;

use hbv::analysis::{
    discrete_r0, dulac_expression, estimate_convergence_order, lyapunov_descent_check, lyapunov_g,
    lyapunov_v, nsfd_dee_stability, nsfd_map_jacobian, QUADRATURE_TOL,
};
use hbv::incidence::log_axis;
use hbv::solvers::{nsfd_step_with, simulate};
use hbv::{DenominatorFunction, Family, Scheme, SchemeConfig, State};
use rand::Rng;

fn phis() -> [DenominatorFunction; 2] {
    [
        DenominatorFunction::Identity,
        DenominatorFunction::exp_relaxation(0.7).unwrap(),
    ]
}

#[test]
fn discrete_r0_equals_continuous_r0() {
    let mut rng = common::rng(30);
    for _ in 0..500 {
        let p = common::random_params(&mut rng);
        let r0 = p.basic_reproduction_number();
        for phi in phis() {
            for dt in [1e-3, 1.0, 1e3] {
                let d = discrete_r0(&p, phi, dt);
                assert!(
                    (d - r0).abs() <= 1e-12 * r0,
                    "{p:?} {phi:?} dt = {dt}: {d} vs {r0}"
                );
            }
        }
    }
}

#[test]
fn fixed_point_condition_holds_for_all_steps() {
    let mut rng = common::rng(31);
    for _ in 0..200 {
        let p = common::random_endemic_params(&mut rng);
        for phi in phis() {
            for k in -3..=3 {
                for m in [1.0, 2.5, 5.0] {
                    let dt = m * 10f64.powi(k);
                    let r = nsfd_dee_stability(&p, phi, dt).unwrap();
                    assert!(r.condition_holds, "{p:?} {phi:?} dt = {dt}: {r:?}");
                    assert!(r.det < 1.0);
                    assert!(r.eigen_moduli.iter().all(|&v| v < 1.0), "{r:?}");
                    assert!(r.third_eigen < 1.0);
                }
            }
        }
    }
}

#[test]
fn map_jacobian_matches_finite_differences_at_random_states() {
    let mut rng = common::rng(32);
    for _ in 0..300 {
        let p = common::random_params(&mut rng);
        let b = p.feasible_bounds();
        let x = State::raw(
            rng.gen_range(0.05..1.0) * b.s_max,
            rng.gen_range(0.05..1.0) * b.si_max,
            0.0,
        );
        let ph = common::log_uniform(&mut rng, 1e-3, 1e3);
        let j = nsfd_map_jacobian(&p, &x, ph);
        let hs = 1e-6 * x.s;
        let hi = 1e-6 * x.i;
        let step = |s: f64, i: f64| nsfd_step_with(&p, &State::raw(s, i, 0.0), ph);
        let (sp, sm) = (step(x.s + hs, x.i), step(x.s - hs, x.i));
        let (ip, im) = (step(x.s, x.i + hi), step(x.s, x.i - hi));
        let fd = [
            [(sp.s - sm.s) / (2.0 * hs), (ip.s - im.s) / (2.0 * hi)],
            [(sp.i - sm.i) / (2.0 * hs), (ip.i - im.i) / (2.0 * hi)],
        ];
        // Scale each entry by the matching map magnitudes.
        let y = step(x.s, x.i);
        for r in 0..2 {
            for c in 0..2 {
                let out = if r == 0 { y.s } else { y.i };
                let inp = if c == 0 { x.s } else { x.i };
                let tol = 1e-6 * (out / inp + j[r][c].abs());
                assert!(
                    (j[r][c] - fd[r][c]).abs() <= tol,
                    "{p:?} phi = {ph}: {j:?} vs {fd:?}"
                );
            }
        }
    }
}

#[test]
fn lyapunov_v_nonnegative_and_vanishes_only_at_s0() {
    let mut rng = common::rng(33);
    for _ in 0..100 {
        let p = common::random_params(&mut rng);
        let s0 = p.dfe().s;
        let i_max = p.feasible_bounds().si_max;
        for _ in 0..10 {
            let s = rng.gen_range(1e-3..2.0) * s0;
            let i = if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0..i_max)
            };
            let v = lyapunov_v(&p, s, i).unwrap();
            assert!(v >= 0.0, "V({s}, {i}) = {v}");
            if v == 0.0 {
                // Zero only within quadrature tolerance of S0.
                assert!(
                    (s - s0).abs() <= 1e-4 * s0,
                    "V({s}, {i}) = 0 with S0 = {s0}"
                );
            }
        }
        assert_eq!(lyapunov_v(&p, s0, 0.0).unwrap(), 0.0);
        assert!(lyapunov_v(&p, s0 * (1.0 + 1e-9), 1.0).unwrap().abs() <= QUADRATURE_TOL);
    }
}

#[test]
fn g_negative_below_threshold() {
    let mut rng = common::rng(34);
    let mut checked = 0;
    while checked < 200 {
        let p = common::random_params(&mut rng);
        if p.basic_reproduction_number() > 1.0 {
            continue;
        }
        checked += 1;
        for i in log_axis(p.feasible_bounds().si_max, 32).into_iter().skip(1) {
            assert!(lyapunov_g(&p, i).unwrap() < 0.0, "{p:?} at I = {i}");
        }
    }
}

#[test]
fn lyapunov_descends_along_nsfd_example2_trajectory() {
    let p = common::example2();
    let cfg = SchemeConfig::nsfd(0.5, 2000, DenominatorFunction::Identity);
    let traj = simulate(&p, &State::raw(100.0, 50.0, 500.0), &cfg).unwrap();
    let d = lyapunov_descent_check(&p, &traj).unwrap();
    assert!(d.invalid_state.is_none());
    assert!(d.passes, "max increase {}", d.max_increase);
}

#[test]
fn lyapunov_descends_along_nsfd_for_random_subthreshold_params() {
    let mut rng = common::rng(35);
    let mut checked = 0;
    while checked < 30 {
        let p = common::random_params(&mut rng);
        if p.basic_reproduction_number() > 0.99 {
            continue;
        }
        checked += 1;
        let mut x0 = common::random_state(&mut rng, &p);
        x0.s = x0.s.max(1e-3 * p.dfe().s);
        for dt in [0.1, 1.0, 10.0] {
            let traj = simulate(
                &p,
                &x0,
                &SchemeConfig::nsfd(dt, 300, DenominatorFunction::Identity),
            )
            .unwrap();
            let d = lyapunov_descent_check(&p, &traj).unwrap();
            assert!(d.passes, "{p:?} dt = {dt}: {}", d.max_increase);
        }
    }
}

#[test]
fn dulac_negative_for_every_family() {
    let mut rng = common::rng(36);
    for family in Family::ALL {
        for _ in 0..20 {
            let p = common::random_params(&mut rng);
            let alpha = common::log_uniform(&mut rng, 1e-3, 10.0);
            let p = p.with_incidence(common::random_incidence(&mut rng, family, alpha));
            let b = p.feasible_bounds();
            for s in log_axis(b.s_max, 32) {
                for i in log_axis(b.si_max, 32).into_iter().skip(1) {
                    let d = dulac_expression(&p, s, i).unwrap();
                    assert!(d < 0.0, "{p:?} at ({s}, {i}): {d}");
                }
            }
        }
    }
}

#[test]
fn nsfd_order_below_rk2_order() {
    let p = common::example2();
    let x0 = State::raw(100.0, 5.0, 500.0);
    let dts = [0.4, 0.2, 0.1, 0.05];
    let nsfd = estimate_convergence_order(
        &p,
        &x0,
        Scheme::Nsfd,
        DenominatorFunction::Identity,
        &dts,
        20.0,
    )
    .unwrap();
    let rk2 = estimate_convergence_order(
        &p,
        &x0,
        Scheme::Rk2,
        DenominatorFunction::Identity,
        &dts,
        20.0,
    )
    .unwrap();
    assert!(nsfd.errors_decreasing() && rk2.errors_decreasing());
    assert!(nsfd.fitted_order < rk2.fitted_order);
    assert!(
        (nsfd.fitted_order - 1.0).abs() < 0.2,
        "{}",
        nsfd.fitted_order
    );
    assert!((rk2.fitted_order - 2.0).abs() < 0.2, "{}", rk2.fitted_order);
}
