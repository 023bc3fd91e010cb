#![allow(dead_code)]

use hbv::{Family, IncidenceSpec, ModelParams, State};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SEED: u64 = 0x5eed_2024;

pub fn rng(stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    r.set_stream(stream);
    r
}

pub fn example1() -> ModelParams {
    let f = IncidenceSpec::crowley_martin(0.5, 0.8, 0.9, 0.95).unwrap();
    ModelParams::new(0.8, 0.000232, 0.0000547, 0.8, 0.001, f).unwrap()
}

pub fn example2() -> ModelParams {
    let f = IncidenceSpec::crowley_martin(0.0009, 0.25, 0.50, 0.75).unwrap();
    ModelParams::new(0.232, 0.000232, 0.0000547, 0.25, 0.0016, f).unwrap()
}

pub fn example3() -> ModelParams {
    let f = IncidenceSpec::crowley_martin(0.005, 0.5, 0.1, 0.2).unwrap();
    ModelParams::new(0.2, 0.000232, 0.0000547, 0.025, 0.0016, f).unwrap()
}

/// Bilinear incidence with `Lambda = 1, mu0 = 0.1, mu1 = 0, beta = 0.1,
/// nu = 0.1`; closed-form endemic point `(2, 3, 5)` at `alpha = 0.1`.
pub fn bilinear(alpha: f64) -> ModelParams {
    ModelParams::new(
        1.0,
        0.1,
        0.0,
        0.1,
        0.1,
        IncidenceSpec::bilinear(alpha).unwrap(),
    )
    .unwrap()
}

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

pub fn random_incidence(rng: &mut ChaCha8Rng, family: Family, alpha: f64) -> IncidenceSpec {
    let mut coef = || log_uniform(rng, 1e-3, 10.0);
    match family {
        Family::Bilinear => IncidenceSpec::bilinear(alpha),
        Family::SaturatedI => IncidenceSpec::saturated_i(alpha, coef()),
        Family::SaturatedSI => IncidenceSpec::saturated_si(alpha, coef(), coef()),
        Family::CrowleyMartin => IncidenceSpec::crowley_martin(alpha, coef(), coef(), coef()),
        Family::HillGamma => IncidenceSpec::hill_gamma(alpha, coef()),
    }
    .unwrap()
}

/// Parameter set with log-uniform coefficients. `mu0_min` bounds the slowest
/// relaxation rate from below.
pub fn random_params_with(rng: &mut ChaCha8Rng, mu0_min: f64) -> ModelParams {
    let family = Family::ALL[rng.gen_range(0..Family::ALL.len())];
    let alpha = log_uniform(rng, 1e-4, 10.0);
    let f = random_incidence(rng, family, alpha);
    let lambda = log_uniform(rng, 1e-2, 1e2);
    let mu0 = log_uniform(rng, mu0_min, 1.0);
    let rate = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.1) {
            0.0
        } else {
            log_uniform(rng, 1e-4, 1.0)
        }
    };
    let mu1 = rate(rng);
    let beta = rate(rng);
    let nu = rate(rng);
    ModelParams::new(lambda, mu0, mu1, beta, nu, f).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    random_params_with(rng, 1e-4)
}

/// Draws until `R0 > 1`.
pub fn random_endemic_params(rng: &mut ChaCha8Rng) -> ModelParams {
    loop {
        let p = random_params(rng);
        let r0 = p.basic_reproduction_number();
        if r0 > 1.0 + 1e-6 && r0 < 1e6 {
            return p;
        }
    }
}

/// Non-negative state within a few multiples of the feasible bounds.
pub fn random_state(rng: &mut ChaCha8Rng, p: &ModelParams) -> State {
    let b = p.feasible_bounds();
    State::raw(
        rng.gen_range(0.0..3.0 * b.s_max),
        rng.gen_range(0.0..3.0 * b.si_max),
        rng.gen_range(0.0..3.0 * b.r_max.max(1.0)),
    )
}

pub const GOLDEN_EXAMPLE3: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/tests/golden/example3_audit.txt"
);

/// Printed equilibrium for parameter set 3, kept for the audit.
pub const PRINTED_EXAMPLE3_DEE: [f64; 3] = [19.60, 6.95, 1004.80];
pub const PRINTED_EXAMPLE3_R0: f64 = 0.0139;

/// Audit of parameter set 3: equilibria recomputed from the parameters, and
/// the residual of the printed endemic point.
pub fn example3_audit() -> String {
    use std::fmt::Write;
    let p = example3();
    let report = p.equilibrium_report().unwrap();
    let printed = State::raw(
        PRINTED_EXAMPLE3_DEE[0],
        PRINTED_EXAMPLE3_DEE[1],
        PRINTED_EXAMPLE3_DEE[2],
    );
    let dfe_res = p.rhs(&report.dfe);
    let printed_res = p.rhs(&printed);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Parameter set 3 audit. Values recomputed from the printed parameters."
    );
    let _ = writeln!(
        out,
        "params = lambda {:?}, mu0 {:?}, mu1 {:?}, beta {:?}, nu {:?}, crowley_martin alpha {:?} a {:?} b {:?} c {:?}",
        p.lambda(),
        p.mu0(),
        p.mu1(),
        p.beta(),
        p.nu(),
        p.incidence().alpha(),
        p.incidence().a(),
        p.incidence().b(),
        p.incidence().c()
    );
    let _ = writeln!(out, "R0 = {:?}", report.r0);
    let _ = writeln!(
        out,
        "DFE = {:?} {:?} {:?}",
        report.dfe.s, report.dfe.i, report.dfe.r
    );
    let _ = writeln!(
        out,
        "DFE_residual = {:e} {:e} {:e}",
        dfe_res[0], dfe_res[1], dfe_res[2]
    );
    match report.dee {
        Some(x) => {
            let _ = writeln!(out, "DEE = {:?} {:?} {:?}", x.s, x.i, x.r);
        }
        None => {
            let _ = writeln!(out, "DEE = none");
        }
    }
    let _ = writeln!(out, "attractor = {}", report.gas_point().0);
    let _ = writeln!(
        out,
        "printed_DEE = {:?} {:?} {:?}",
        printed.s, printed.i, printed.r
    );
    let _ = writeln!(out, "printed_R0 = {:?}", PRINTED_EXAMPLE3_R0);
    let _ = writeln!(
        out,
        "printed_DEE_residual = {:.6e} {:.6e} {:.6e}",
        printed_res[0], printed_res[1], printed_res[2]
    );
    let _ = writeln!(
        out,
        "discrepancy = the printed endemic point is not an equilibrium of the printed parameters \
         (residual far above 1e-9 lambda); the parameters give R0 < 1, so no endemic point exists \
         and the disease-free point attracts every trajectory; the printed R0 repeats the value of \
         parameter set 2"
    );
    out
}

/// `key = value` lines of an audit file.
pub fn audit_fields(text: &str) -> std::collections::BTreeMap<String, String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn parse_triple(v: &str) -> [f64; 3] {
    let xs: Vec<f64> = v.split_whitespace().map(|t| t.parse().unwrap()).collect();
    [xs[0], xs[1], xs[2]]
}
