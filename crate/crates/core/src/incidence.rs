//! Incidence functions `f(S, I)` and the hypotheses they must satisfy.
//!
//! Every built-in family is a special case of
//!
//! ```text
//! f(S, I) = alpha * S * I / (1 + a*S + (b + gamma)*I + c*S*I)
//! ```
//!
//! with the unused coefficients stored as zero, so a single closed form
//! covers values, partials and the per-susceptible rate `f* = f / S`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behaviour shared by anything that can serve as an incidence function.
///
/// The methods are unchecked: callers that accept user input should go
/// through the validating methods on [`IncidenceSpec`].
pub trait Incidence {
    /// `f(S, I)`.
    fn rate(&self, s: f64, i: f64) -> f64;

    /// `(df/dS, df/dI)`.
    fn rate_partials(&self, s: f64, i: f64) -> (f64, f64);

    /// Smallest `eta` with `f(S, I) <= eta * S` for `S >= 0`,
    /// `0 <= I <= i_max`. May be infinite when `i_max` is.
    fn eta_bound(&self, i_max: f64) -> f64;

    /// `f(S, I) / S`, continuously extended by 0 at `S = 0`.
    fn rate_per_susceptible(&self, s: f64, i: f64) -> f64 {
        if s > 0.0 {
            self.rate(s, i) / s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `alpha S I`
    Bilinear,
    /// `alpha S I / (1 + b I)`
    SaturatedI,
    /// `alpha S I / (1 + a S + b I)`
    SaturatedSI,
    /// `alpha S I / (1 + a S + b I + c S I)`
    CrowleyMartin,
    /// `alpha S I / (1 + gamma I)`
    HillGamma,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Bilinear,
        Family::SaturatedI,
        Family::SaturatedSI,
        Family::CrowleyMartin,
        Family::HillGamma,
    ];

    fn uses(self, key: Coefficient) -> bool {
        use Coefficient::*;
        match self {
            Family::Bilinear => false,
            Family::SaturatedI => key == B,
            Family::SaturatedSI => matches!(key, A | B),
            Family::CrowleyMartin => matches!(key, A | B | C),
            Family::HillGamma => key == Gamma,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Family::Bilinear => "bilinear",
            Family::SaturatedI => "saturated_i",
            Family::SaturatedSI => "saturated_si",
            Family::CrowleyMartin => "crowley_martin",
            Family::HillGamma => "hill_gamma",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coefficient {
    A,
    B,
    C,
    Gamma,
}

impl Coefficient {
    fn key(self) -> &'static str {
        match self {
            Coefficient::A => "a",
            Coefficient::B => "b",
            Coefficient::C => "c",
            Coefficient::Gamma => "gamma",
        }
    }
}

/// A built-in incidence family together with its coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIncidence", into = "RawIncidence")]
pub struct IncidenceSpec {
    family: Family,
    alpha: f64,
    a: f64,
    b: f64,
    c: f64,
    gamma: f64,
}

impl IncidenceSpec {
    /// Builds a spec, rejecting negative or non-finite coefficients and any
    /// nonzero coefficient the family does not read.
    pub fn new(family: Family, alpha: f64, a: f64, b: f64, c: f64, gamma: f64) -> Result<Self> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!(
                    "incidence coefficient {name} = {v} must be finite and non-negative"
                )))
            }
        };
        check("alpha", alpha)?;
        for (key, v) in [
            (Coefficient::A, a),
            (Coefficient::B, b),
            (Coefficient::C, c),
            (Coefficient::Gamma, gamma),
        ] {
            check(key.key(), v)?;
            if !family.uses(key) && v != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "coefficient {} is not used by the {family} family and must be 0",
                    key.key()
                )));
            }
        }
        Ok(Self {
            family,
            alpha,
            a,
            b,
            c,
            gamma,
        })
    }

    pub fn bilinear(alpha: f64) -> Result<Self> {
        Self::new(Family::Bilinear, alpha, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn saturated_i(alpha: f64, b: f64) -> Result<Self> {
        Self::new(Family::SaturatedI, alpha, 0.0, b, 0.0, 0.0)
    }

    pub fn saturated_si(alpha: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(Family::SaturatedSI, alpha, a, b, 0.0, 0.0)
    }

    pub fn crowley_martin(alpha: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(Family::CrowleyMartin, alpha, a, b, c, 0.0)
    }

    pub fn hill_gamma(alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(Family::HillGamma, alpha, 0.0, 0.0, 0.0, gamma)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same family and saturation coefficients with a different `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.family, alpha, self.a, self.b, self.c, self.gamma)
    }

    /// `1 + a S + (b + gamma) I + c S I`
    #[inline]
    fn denominator(&self, s: f64, i: f64) -> f64 {
        1.0 + self.a * s + (self.b + self.gamma) * i + self.c * s * i
    }

    /// Checked `f(S, I)`.
    pub fn f(&self, s: f64, i: f64) -> Result<f64> {
        check_point(s, i)?;
        Ok(self.rate(s, i))
    }

    /// Checked `(df/dS, df/dI)`.
    pub fn partials(&self, s: f64, i: f64) -> Result<(f64, f64)> {
        check_point(s, i)?;
        Ok(self.rate_partials(s, i))
    }

    /// Checked `f*(S, I)`.
    pub fn fstar(&self, s: f64, i: f64) -> Result<f64> {
        check_point(s, i)?;
        Ok(self.rate_per_susceptible(s, i))
    }

    /// `lim_{S -> 0+} f*(S, I) = alpha I / (1 + (b + gamma) I)`.
    pub fn fstar_limit_at_zero(&self, i: f64) -> f64 {
        self.alpha * i / self.denominator(0.0, i)
    }
}

impl Incidence for IncidenceSpec {
    #[inline]
    fn rate(&self, s: f64, i: f64) -> f64 {
        if s == 0.0 || i == 0.0 {
            return 0.0;
        }
        self.alpha * s * i / self.denominator(s, i)
    }

    #[inline]
    fn rate_partials(&self, s: f64, i: f64) -> (f64, f64) {
        let d = self.denominator(s, i);
        let d2 = d * d;
        let bi = self.b + self.gamma;
        let ds = self.alpha * i * (1.0 + bi * i) / d2;
        let di = self.alpha * s * (1.0 + self.a * s) / d2;
        (ds, di)
    }

    fn eta_bound(&self, i_max: f64) -> f64 {
        // f/S is largest as S -> 0 and grows with I.
        let b = self.b + self.gamma;
        if i_max.is_infinite() {
            return if b > 0.0 {
                self.alpha / b
            } else if self.alpha > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
        }
        self.alpha * i_max / (1.0 + b * i_max)
    }
}

impl fmt::Display for IncidenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(alpha={}", self.family, self.alpha)?;
        for (key, v) in [
            (Coefficient::A, self.a),
            (Coefficient::B, self.b),
            (Coefficient::C, self.c),
            (Coefficient::Gamma, self.gamma),
        ] {
            if self.family.uses(key) {
                write!(f, ", {}={}", key.key(), v)?;
            }
        }
        f.write_str(")")
    }
}

fn check_point(s: f64, i: f64) -> Result<()> {
    if s.is_finite() && i.is_finite() && s >= 0.0 && i >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "incidence evaluated at (S, I) = ({s}, {i}); both must be finite and non-negative"
        )))
    }
}

/// Canonical textual form: only the keys the family reads may appear.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIncidence {
    family: Family,
    alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

impl TryFrom<RawIncidence> for IncidenceSpec {
    type Error = Error;

    fn try_from(raw: RawIncidence) -> Result<Self> {
        let family = raw.family;
        let pick = |key: Coefficient, v: Option<f64>| -> Result<f64> {
            match (family.uses(key), v) {
                (true, Some(v)) => Ok(v),
                (true, None) => Err(Error::Config(format!(
                    "incidence family {family} requires key \"{}\"",
                    key.key()
                ))),
                (false, Some(_)) => Err(Error::Config(format!(
                    "incidence family {family} does not use key \"{}\"",
                    key.key()
                ))),
                (false, None) => Ok(0.0),
            }
        };
        let a = pick(Coefficient::A, raw.a)?;
        let b = pick(Coefficient::B, raw.b)?;
        let c = pick(Coefficient::C, raw.c)?;
        let gamma = pick(Coefficient::Gamma, raw.gamma)?;
        IncidenceSpec::new(family, raw.alpha, a, b, c, gamma)
    }
}

impl From<IncidenceSpec> for RawIncidence {
    fn from(spec: IncidenceSpec) -> Self {
        let keep = |key: Coefficient, v: f64| spec.family.uses(key).then_some(v);
        RawIncidence {
            family: spec.family,
            alpha: spec.alpha,
            a: keep(Coefficient::A, spec.a),
            b: keep(Coefficient::B, spec.b),
            c: keep(Coefficient::C, spec.c),
            gamma: keep(Coefficient::Gamma, spec.gamma),
        }
    }
}

// ---------------------------------------------------------------------------
// Hypothesis checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2,
    H3,
    H4,
    H5,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] = [
        Hypothesis::H1,
        Hypothesis::H2,
        Hypothesis::H3,
        Hypothesis::H4,
        Hypothesis::H5,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Hypothesis::H1 => "f(S,0) = f(0,I) = 0 and f > 0 inside the quadrant",
            Hypothesis::H2 => "f(S,I) <= eta S",
            Hypothesis::H3 => "df/dS > 0 and bounded for I > 0",
            Hypothesis::H4 => "df/dI >= 0",
            Hypothesis::H5 => "I df/dI - f <= 0",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub hypothesis: Hypothesis,
    pub s: f64,
    pub i: f64,
    /// The offending quantity (f, f/S, df/dS, df/dI or I df/dI - f).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub verdicts: BTreeMap<Hypothesis, bool>,
    /// Scanned supremum of `f/S` over points with `S > 0`.
    pub eta_estimate: f64,
    /// Analytic bound the scanned supremum is compared against.
    pub eta_bound: f64,
    /// Largest `df/dS` observed on the H3 scan.
    pub sup_partial_s: f64,
    pub violation_witnesses: Vec<Witness>,
    pub points_scanned: usize,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }

    pub fn passes(&self, h: Hypothesis) -> bool {
        self.verdicts.get(&h).copied().unwrap_or(false)
    }

    pub fn witness(&self, h: Hypothesis) -> Option<&Witness> {
        self.violation_witnesses.iter().find(|w| w.hypothesis == h)
    }
}

/// Axis used by the hypothesis grid: `0` followed by `n` log-spaced values
/// ending at `max`, starting six decades below it.
pub fn log_axis(max: f64, n: usize) -> Vec<f64> {
    let lo = max * 1e-6;
    let ratio = (max / lo).ln();
    let mut axis = Vec::with_capacity(n + 1);
    axis.push(0.0);
    for k in 0..n {
        let frac = if n == 1 {
            1.0
        } else {
            k as f64 / (n - 1) as f64
        };
        axis.push(lo * (ratio * frac).exp());
    }
    if let Some(last) = axis.last_mut() {
        *last = max;
    }
    axis
}

/// Samples H1..H5 on a `grid_n x grid_n` log grid over `[0, s_max] x [0, i_max]`
/// plus the two boundary lines `S = 0` and `I = 0`.
pub fn check_hypotheses<F: Incidence + ?Sized>(
    f: &F,
    s_max: f64,
    i_max: f64,
    grid_n: usize,
) -> Result<HypothesisReport> {
    if !(s_max > 0.0 && i_max > 0.0 && s_max.is_finite() && i_max.is_finite()) {
        return Err(Error::Precondition(format!(
            "hypothesis box must be positive and finite, got S_max = {s_max}, I_max = {i_max}"
        )));
    }
    if grid_n < 16 {
        return Err(Error::Precondition(format!(
            "hypothesis grid needs at least 16 points per axis, got {grid_n}"
        )));
    }
    let s_axis = log_axis(s_max, grid_n);
    let i_axis = log_axis(i_max, grid_n);
    let points = s_axis
        .iter()
        .flat_map(|&s| i_axis.iter().map(move |&i| (s, i)));
    Ok(check_hypotheses_at(f, points))
}

/// Runs the hypothesis scan over an arbitrary point set. Each hypothesis
/// keeps its first counterexample and is not re-checked afterwards.
pub fn check_hypotheses_at<F, P>(f: &F, points: P) -> HypothesisReport
where
    F: Incidence + ?Sized,
    P: IntoIterator<Item = (f64, f64)>,
{
    let mut verdicts: BTreeMap<Hypothesis, bool> =
        Hypothesis::ALL.iter().map(|&h| (h, true)).collect();
    let mut witnesses = Vec::new();
    let mut eta_estimate = 0.0_f64;
    let mut sup_partial_s = 0.0_f64;
    let mut eta_witness: Option<(f64, f64, f64)> = None;
    let mut i_max = 0.0_f64;
    let mut scanned = 0usize;

    let mut fail = |verdicts: &mut BTreeMap<Hypothesis, bool>, h, s, i, value| {
        if verdicts[&h] {
            verdicts.insert(h, false);
            witnesses.push(Witness {
                hypothesis: h,
                s,
                i,
                value,
            });
        }
    };

    for (s, i) in points {
        scanned += 1;
        i_max = i_max.max(i);
        let val = f.rate(s, i);
        let (ds, di) = f.rate_partials(s, i);

        let h1_ok = if s == 0.0 || i == 0.0 {
            val == 0.0
        } else {
            val > 0.0 && val.is_finite()
        };
        if !h1_ok {
            fail(&mut verdicts, Hypothesis::H1, s, i, val);
        }

        if s > 0.0 {
            let ratio = val / s;
            if ratio.is_nan() {
                eta_witness.get_or_insert((s, i, ratio));
            } else if ratio > eta_estimate {
                eta_estimate = ratio;
                if eta_witness.is_none_or(|w| !w.2.is_nan()) {
                    eta_witness = Some((s, i, ratio));
                }
            }
        }

        // df/dS vanishes identically on I = 0, so the I = 0 line is skipped.
        if i > 0.0 {
            if ds.is_finite() {
                sup_partial_s = sup_partial_s.max(ds);
            }
            if !(ds > 0.0 && ds.is_finite()) {
                fail(&mut verdicts, Hypothesis::H3, s, i, ds);
            }
        }

        if !(di >= 0.0) {
            fail(&mut verdicts, Hypothesis::H4, s, i, di);
        }

        let h5 = i * di - val;
        if !(h5 <= 1e-12 * val.abs().max(1.0)) {
            fail(&mut verdicts, Hypothesis::H5, s, i, h5);
        }
    }

    let eta_bound = f.eta_bound(i_max);
    if let Some((s, i, ratio)) = eta_witness {
        if ratio.is_nan() || ratio > eta_bound * (1.0 + 1e-12) {
            fail(&mut verdicts, Hypothesis::H2, s, i, ratio);
        }
    }

    HypothesisReport {
        verdicts,
        eta_estimate,
        eta_bound,
        sup_partial_s,
        violation_witnesses: witnesses,
        points_scanned: scanned,
    }
}
