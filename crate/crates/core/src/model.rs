//! The continuous model
//!
//! ```text
//! S' = Lambda - f(S, I) - (mu0 + nu) S
//! I' = f(S, I) - (mu0 + mu1 + beta) I
//! R' = beta I + nu S - mu0 R
//! ```
//!
//! together with its equilibria, threshold quantity and linearisation.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incidence::{Incidence, IncidenceSpec};

/// 3x3 matrix in row-major order.
pub type Matrix3 = [[f64; 3]; 3];

/// Tolerance on `|R0 - 1|` below which the disease-free equilibrium is
/// classified as marginal.
pub const MARGINAL_R0_TOL: f64 = 1e-10;

const BISECTION_MAX_ITER: usize = 200;

/// One point `(S, I, R)` in population units.
///
/// The fields are public because reference schemes are allowed to leave the
/// positive cone; use [`State::new`] where non-negativity is required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl State {
    pub fn new(s: f64, i: f64, r: f64) -> Result<Self> {
        let x = Self { s, i, r };
        if x.is_nonnegative() {
            Ok(x)
        } else {
            Err(Error::Domain(format!(
                "state ({s}, {i}, {r}) must have finite non-negative components"
            )))
        }
    }

    /// Unchecked constructor.
    pub const fn raw(s: f64, i: f64, r: f64) -> Self {
        Self { s, i, r }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.i.is_finite() && self.r.is_finite()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.is_finite() && self.s >= 0.0 && self.i >= 0.0 && self.r >= 0.0
    }

    pub fn min_component(&self) -> f64 {
        self.s.min(self.i).min(self.r)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.i, self.r]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::raw(v[0], v[1], v[2])
    }

    /// `|dS| + |dI| + |dR|`
    pub fn l1_distance(&self, other: &State) -> f64 {
        (self.s - other.s).abs() + (self.i - other.i).abs() + (self.r - other.r).abs()
    }

    pub fn l1_norm(&self) -> f64 {
        self.s.abs() + self.i.abs() + self.r.abs()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?}, {:?})", self.s, self.i, self.r)
    }
}

/// Epidemiological rates plus the incidence function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    lambda: f64,
    mu0: f64,
    mu1: f64,
    beta: f64,
    nu: f64,
    incidence: IncidenceSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    lambda: f64,
    mu0: f64,
    mu1: f64,
    beta: f64,
    nu: f64,
    incidence: IncidenceSpec,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(
            raw.lambda,
            raw.mu0,
            raw.mu1,
            raw.beta,
            raw.nu,
            raw.incidence,
        )
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            lambda: p.lambda,
            mu0: p.mu0,
            mu1: p.mu1,
            beta: p.beta,
            nu: p.nu,
            incidence: p.incidence,
        }
    }
}

impl ModelParams {
    pub fn new(
        lambda: f64,
        mu0: f64,
        mu1: f64,
        beta: f64,
        nu: f64,
        incidence: IncidenceSpec,
    ) -> Result<Self> {
        let positive = [("lambda", lambda), ("mu0", mu0)];
        let nonneg = [("mu1", mu1), ("beta", beta), ("nu", nu)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {v} must be finite and positive"
                )));
            }
        }
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(Self {
            lambda,
            mu0,
            mu1,
            beta,
            nu,
            incidence,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn mu0(&self) -> f64 {
        self.mu0
    }
    pub fn mu1(&self) -> f64 {
        self.mu1
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn incidence(&self) -> &IncidenceSpec {
        &self.incidence
    }

    pub fn with_incidence(&self, incidence: IncidenceSpec) -> Self {
        Self { incidence, ..*self }
    }

    /// Per-capita outflow from S: `mu0 + nu`.
    #[inline]
    pub fn susceptible_outflow(&self) -> f64 {
        self.mu0 + self.nu
    }

    /// Per-capita outflow from I: `mu0 + mu1 + beta`.
    #[inline]
    pub fn infected_outflow(&self) -> f64 {
        self.mu0 + self.mu1 + self.beta
    }

    pub fn p(&self) -> f64 {
        self.susceptible_outflow().max(self.infected_outflow())
    }
    pub fn q(&self) -> f64 {
        self.susceptible_outflow().min(self.infected_outflow())
    }
    pub fn r1(&self) -> f64 {
        self.beta.min(self.nu)
    }
    pub fn r2(&self) -> f64 {
        self.beta.max(self.nu)
    }

    /// Right-hand side without domain checks; reference schemes call this on
    /// states that may have left the positive cone.
    #[inline]
    pub fn rhs(&self, x: &State) -> [f64; 3] {
        let f = self.incidence.rate(x.s, x.i);
        [
            self.lambda - f - self.susceptible_outflow() * x.s,
            f - self.infected_outflow() * x.i,
            self.beta * x.i + self.nu * x.s - self.mu0 * x.r,
        ]
    }

    /// `(dS/dt, dI/dt, dR/dt)` at a non-negative state.
    pub fn vector_field(&self, x: &State) -> Result<[f64; 3]> {
        if !x.is_nonnegative() {
            return Err(Error::Domain(format!(
                "vector field evaluated at {x}; components must be finite and non-negative"
            )));
        }
        Ok(self.rhs(x))
    }

    /// Disease-free equilibrium `(Lambda/(mu0+nu), 0, nu Lambda/(mu0 (mu0+nu)))`.
    pub fn dfe(&self) -> State {
        let b = self.susceptible_outflow();
        State::raw(self.lambda / b, 0.0, self.nu * self.lambda / (self.mu0 * b))
    }

    /// `R0 = df/dI(S0, 0) / (mu0 + mu1 + beta)`.
    pub fn basic_reproduction_number(&self) -> f64 {
        let s0 = self.lambda / self.susceptible_outflow();
        let (_, di) = self.incidence.rate_partials(s0, 0.0);
        di / self.infected_outflow()
    }

    /// Residual of the endemic-equilibrium equation after eliminating S:
    /// `h(I) = f((Lambda - A I)/B, I) - A I`.
    pub fn endemic_residual(&self, i: f64) -> f64 {
        let a = self.infected_outflow();
        let s = ((self.lambda - a * i) / self.susceptible_outflow()).max(0.0);
        self.incidence.rate(s, i) - a * i
    }

    /// The unique endemic equilibrium, present iff `R0 > 1`.
    ///
    /// `I*` is located by bisection on `(eps, Lambda/A - eps)`; the bracket is
    /// valid because `h(I)/I` is strictly decreasing under H5.
    pub fn endemic_equilibrium(&self) -> Result<Option<State>> {
        if self.basic_reproduction_number() <= 1.0 {
            return Ok(None);
        }
        let a = self.infected_outflow();
        let b = self.susceptible_outflow();
        let upper = self.lambda / a;
        let eps = 1e-14 * upper;
        let (mut lo, mut hi) = (eps, upper - eps);
        let (h_lo, h_hi) = (self.endemic_residual(lo), self.endemic_residual(hi));
        if !(h_lo > 0.0 && h_hi < 0.0) {
            return Err(Error::Bracketing { lo, hi, h_lo, h_hi });
        }

        // Compare candidates on h(I)/I: h itself vanishes as I -> 0.
        let score = |i: f64, h: f64| (h / i).abs();
        let mut best = (lo, score(lo, h_lo));
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let h = self.endemic_residual(mid);
            if score(mid, h) < best.1 {
                best = (mid, score(mid, h));
            }
            if h == 0.0 {
                break;
            }
            if h > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        for x in [lo, hi] {
            let sc = score(x, self.endemic_residual(x));
            if sc < best.1 {
                best = (x, sc);
            }
        }
        let i_star = best.0;
        let s_eq = (self.lambda - a * i_star) / b;
        let state = |s: f64| State::raw(s, i_star, (self.beta * i_star + self.nu * s) / self.mu0);
        let worst = |x: &State| self.rhs(x).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let direct = state(s_eq);
        let refined = state(self.refine_susceptible(i_star, s_eq));
        Ok(Some(if worst(&refined) < worst(&direct) {
            refined
        } else {
            direct
        }))
    }

    /// Solves `f(S, I*) = A I*` for `S` by bisection on `[0, S0]`.
    ///
    /// `S = (Lambda - A I*)/B` cancels badly when `S* << S0`, whereas the
    /// infection balance loses precision when `f` is flat in `S`; the caller
    /// keeps whichever candidate has the smaller vector-field residual.
    /// Falls back to `s_eq` if the bracket fails through rounding.
    fn refine_susceptible(&self, i_star: f64, s_eq: f64) -> f64 {
        let target = self.infected_outflow() * i_star;
        let g = |s: f64| self.incidence.rate(s, i_star) - target;
        let (mut lo, mut hi) = (0.0, self.lambda / self.susceptible_outflow());
        if !(g(hi) > 0.0) {
            return s_eq;
        }
        for _ in 0..BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if g(lo).abs() <= g(hi).abs() {
            lo
        } else {
            hi
        }
    }

    /// Jacobian of the vector field at `x`.
    pub fn jacobian(&self, x: &State) -> Result<Matrix3> {
        if !x.is_nonnegative() {
            return Err(Error::Domain(format!("jacobian evaluated at {x}")));
        }
        Ok(self.jacobian_unchecked(x))
    }

    pub(crate) fn jacobian_unchecked(&self, x: &State) -> Matrix3 {
        let (ds, di) = self.incidence.rate_partials(x.s, x.i);
        [
            [-ds - self.susceptible_outflow(), -di, 0.0],
            [ds, di - self.infected_outflow(), 0.0],
            [self.nu, self.beta, -self.mu0],
        ]
    }

    /// Eigenvalues of the Jacobian at `x`: `-mu0` plus the two eigenvalues
    /// of the leading 2x2 block.
    pub fn jacobian_eigenvalues(&self, x: &State) -> Result<[Eigenvalue; 3]> {
        let j = self.jacobian(x)?;
        let tr = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let [l1, l2] = quadratic_eigenvalues(tr, det);
        Ok([l1, l2, Eigenvalue::real(-self.mu0)])
    }

    /// Closed-form eigenvalues at the disease-free equilibrium.
    pub fn dfe_eigenvalues(&self) -> [Eigenvalue; 3] {
        let s0 = self.dfe().s;
        let (_, di) = self.incidence.rate_partials(s0, 0.0);
        [
            Eigenvalue::real(-self.susceptible_outflow()),
            Eigenvalue::real(di - self.infected_outflow()),
            Eigenvalue::real(-self.mu0),
        ]
    }

    /// `f(S*, I*)/I* - df/dI(S*, I*)`, strictly positive at an endemic
    /// equilibrium under H5.
    pub fn endemic_margin(&self, dee: &State) -> f64 {
        let f = self.incidence.rate(dee.s, dee.i);
        let (_, di) = self.incidence.rate_partials(dee.s, dee.i);
        f / dee.i - di
    }

    pub fn classify_local_stability(&self, which: Equilibrium) -> Result<StabilityVerdict> {
        match which {
            Equilibrium::Dfe => {
                let r0 = self.basic_reproduction_number();
                let verdict = if (r0 - 1.0).abs() <= MARGINAL_R0_TOL {
                    Verdict::Marginal
                } else if r0 < 1.0 {
                    Verdict::LocallyStable
                } else {
                    Verdict::Unstable
                };
                Ok(StabilityVerdict {
                    verdict,
                    trace: None,
                    det: None,
                    eigenvalues: self.dfe_eigenvalues().to_vec(),
                })
            }
            Equilibrium::Dee => {
                let dee = self.endemic_equilibrium()?.ok_or_else(|| {
                    Error::Precondition(format!(
                        "endemic equilibrium requested but R0 = {} <= 1",
                        self.basic_reproduction_number()
                    ))
                })?;
                Ok(self.classify_at(&dee))
            }
        }
    }

    /// Trace/determinant test on the leading 2x2 block, cross-checked
    /// against the real parts of its eigenvalues. Disagreement between the
    /// two (only possible on the boundary) is reported as marginal.
    pub fn classify_at(&self, x: &State) -> StabilityVerdict {
        let j = self.jacobian_unchecked(x);
        let tr = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let [l1, l2] = quadratic_eigenvalues(tr, det);
        let by_trace_det = tr < 0.0 && det > 0.0;
        let by_eigen = l1.re < 0.0 && l2.re < 0.0;
        let verdict = match (by_trace_det, by_eigen) {
            (true, true) => Verdict::LocallyStable,
            (false, false) => Verdict::Unstable,
            _ => Verdict::Marginal,
        };
        StabilityVerdict {
            verdict,
            trace: Some(tr),
            det: Some(det),
            eigenvalues: vec![l1, l2, Eigenvalue::real(-self.mu0)],
        }
    }

    pub fn feasible_bounds(&self) -> FeasibleBounds {
        let (p, q) = (self.p(), self.q());
        FeasibleBounds {
            s_max: self.lambda / self.susceptible_outflow(),
            si_min: self.lambda / p,
            si_max: self.lambda / q,
            r_min: self.r1() * self.lambda / (p * self.mu0),
            r_max: self.r2() * self.lambda / (q * self.mu0),
        }
    }

    pub fn equilibrium_report(&self) -> Result<EquilibriumReport> {
        let dfe = self.dfe();
        let r0 = self.basic_reproduction_number();
        let dee = self.endemic_equilibrium()?;
        let dfe_stability = self.classify_local_stability(Equilibrium::Dfe)?;
        let dee_stability = dee.as_ref().map(|x| self.classify_at(x));
        Ok(EquilibriumReport {
            dfe,
            r0,
            dee,
            dfe_stability,
            dee_stability,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equilibrium {
    Dfe,
    Dee,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    LocallyStable,
    Unstable,
    Marginal,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub const fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl fmt::Display for Eigenvalue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im == 0.0 {
            write!(f, "{}", self.re)
        } else {
            write!(f, "{}{:+}i", self.re, self.im)
        }
    }
}

/// Roots of `x^2 - tr x + det = 0`.
pub fn quadratic_eigenvalues(tr: f64, det: f64) -> [Eigenvalue; 2] {
    let half = 0.5 * tr;
    let disc = half * half - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // Larger-magnitude root first, the other from the product to avoid
        // cancellation.
        let big = if half >= 0.0 {
            half + root
        } else {
            half - root
        };
        let small = if big != 0.0 { det / big } else { 0.0 };
        [Eigenvalue::real(big), Eigenvalue::real(small)]
    } else {
        let im = (-disc).sqrt();
        [
            Eigenvalue { re: half, im },
            Eigenvalue { re: half, im: -im },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub det: Option<f64>,
    pub eigenvalues: Vec<Eigenvalue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBounds {
    pub s_max: f64,
    pub si_min: f64,
    pub si_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl FeasibleBounds {
    /// Membership in the closed feasible box, with an absolute slack.
    pub fn contains(&self, x: &State, tol: f64) -> bool {
        let si = x.s + x.i;
        x.s >= -tol
            && x.i >= -tol
            && x.s <= self.s_max + tol
            && si >= self.si_min - tol
            && si <= self.si_max + tol
            && x.r >= self.r_min - tol
            && x.r <= self.r_max + tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub dfe: State,
    pub r0: f64,
    pub dee: Option<State>,
    pub dfe_stability: StabilityVerdict,
    pub dee_stability: Option<StabilityVerdict>,
}

impl EquilibriumReport {
    /// The equilibrium that attracts every trajectory with `I(0) > 0`.
    pub fn gas_point(&self) -> (&'static str, State) {
        match self.dee {
            Some(dee) => ("E*", dee),
            None => ("E0", self.dfe),
        }
    }

    /// Flat `key = value` rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let eig = |v: &[Eigenvalue]| {
            v.iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(out, "R0 = {:.4}", self.r0);
        let _ = writeln!(out, "R0_full = {:e}", self.r0);
        let _ = writeln!(out, "DFE = ({:.2}, 0, {:.2})", self.dfe.s, self.dfe.r);
        let _ = writeln!(out, "DFE_S = {}", self.dfe.s);
        let _ = writeln!(out, "DFE_I = {}", self.dfe.i);
        let _ = writeln!(out, "DFE_R = {}", self.dfe.r);
        let _ = writeln!(out, "DFE_stability = {}", self.dfe_stability.verdict);
        let _ = writeln!(
            out,
            "DFE_eigenvalues = {}",
            eig(&self.dfe_stability.eigenvalues)
        );
        match (&self.dee, &self.dee_stability) {
            (Some(dee), Some(stab)) => {
                let _ = writeln!(out, "DEE = ({:.2}, {:.2}, {:.2})", dee.s, dee.i, dee.r);
                let _ = writeln!(out, "DEE_S = {}", dee.s);
                let _ = writeln!(out, "DEE_I = {}", dee.i);
                let _ = writeln!(out, "DEE_R = {}", dee.r);
                let _ = writeln!(out, "DEE_stability = {}", stab.verdict);
                if let (Some(tr), Some(det)) = (stab.trace, stab.det) {
                    let _ = writeln!(out, "DEE_trace = {tr:e}");
                    let _ = writeln!(out, "DEE_det = {det:e}");
                }
                let _ = writeln!(out, "DEE_eigenvalues = {}", eig(&stab.eigenvalues));
            }
            _ => {
                let _ = writeln!(out, "DEE = none");
            }
        }
        let (name, x) = self.gas_point();
        let _ = writeln!(
            out,
            "GAS = {name} = ({:.2}, {}, {:.2})",
            x.s,
            if x.i == 0.0 {
                "0".to_string()
            } else {
                format!("{:.2}", x.i)
            },
            x.r
        );
        out
    }
}
