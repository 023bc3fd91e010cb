//! Time stepping: the NSFD scheme and the Euler/RK2 reference schemes.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::incidence::Incidence;
use crate::model::{ModelParams, State};

/// Denominator function `phi(dt)` replacing `dt` in the NSFD difference
/// quotients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhi", into = "RawPhi")]
pub enum DenominatorFunction {
    /// `phi(dt) = dt`
    #[default]
    Identity,
    /// `phi(dt) = (1 - exp(-rate dt)) / rate`
    ExpRelaxation { rate: f64 },
}

impl DenominatorFunction {
    pub fn exp_relaxation(rate: f64) -> Result<Self> {
        if rate.is_finite() && rate > 0.0 {
            Ok(Self::ExpRelaxation { rate })
        } else {
            Err(Error::InvalidParams(format!(
                "relaxation rate {rate} must be finite and positive"
            )))
        }
    }

    #[inline]
    pub fn eval(&self, dt: f64) -> f64 {
        match *self {
            Self::Identity => dt,
            Self::ExpRelaxation { rate } => -(-rate * dt).exp_m1() / rate,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawPhi {
    Identity {},
    ExpRelaxation { rate: f64 },
}

impl TryFrom<RawPhi> for DenominatorFunction {
    type Error = Error;

    fn try_from(raw: RawPhi) -> Result<Self> {
        match raw {
            RawPhi::Identity {} => Ok(Self::Identity),
            RawPhi::ExpRelaxation { rate } => Self::exp_relaxation(rate),
        }
    }
}

impl From<DenominatorFunction> for RawPhi {
    fn from(phi: DenominatorFunction) -> Self {
        match phi {
            DenominatorFunction::Identity => RawPhi::Identity {},
            DenominatorFunction::ExpRelaxation { rate } => RawPhi::ExpRelaxation { rate },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Nsfd,
    Euler,
    /// Two-stage explicit scheme: `k1 = F(x)`, `k2 = F(x + dt k1)`,
    /// `x + dt/2 (k1 + k2)`.
    Rk2,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Nsfd, Scheme::Euler, Scheme::Rk2];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Nsfd => "nsfd",
            Scheme::Euler => "euler",
            Scheme::Rk2 => "rk2",
        }
    }

    /// Tableau identifier written into run metadata.
    pub fn tableau(self) -> &'static str {
        match self {
            Scheme::Nsfd => "nsfd-explicit-gauss-seidel",
            Scheme::Euler => "forward-euler",
            Scheme::Rk2 => "rk2-two-stage-trapezoidal",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchemeConfig", into = "RawSchemeConfig")]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: usize,
    /// Present iff `scheme == Nsfd`.
    pub phi: Option<DenominatorFunction>,
    /// Record every `stride`-th state (1 = dense).
    pub stride: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchemeConfig {
    scheme: Scheme,
    dt: f64,
    steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phi: Option<DenominatorFunction>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    stride: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

impl TryFrom<RawSchemeConfig> for SchemeConfig {
    type Error = Error;

    fn try_from(raw: RawSchemeConfig) -> Result<Self> {
        let phi = match (raw.scheme, raw.phi) {
            (Scheme::Nsfd, phi) => Some(phi.unwrap_or_default()),
            (_, None) => None,
            (scheme, Some(_)) => {
                return Err(Error::Config(format!(
                    "\"phi\" is only valid for the nsfd scheme, not {scheme}"
                )))
            }
        };
        let cfg = SchemeConfig {
            scheme: raw.scheme,
            dt: raw.dt,
            steps: raw.steps,
            phi,
            stride: raw.stride,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<SchemeConfig> for RawSchemeConfig {
    fn from(c: SchemeConfig) -> Self {
        RawSchemeConfig {
            scheme: c.scheme,
            dt: c.dt,
            steps: c.steps,
            phi: c.phi,
            stride: c.stride,
        }
    }
}

impl SchemeConfig {
    pub fn nsfd(dt: f64, steps: usize, phi: DenominatorFunction) -> Self {
        Self {
            scheme: Scheme::Nsfd,
            dt,
            steps,
            phi: Some(phi),
            stride: 1,
        }
    }

    pub fn euler(dt: f64, steps: usize) -> Self {
        Self {
            scheme: Scheme::Euler,
            dt,
            steps,
            phi: None,
            stride: 1,
        }
    }

    pub fn rk2(dt: f64, steps: usize) -> Self {
        Self {
            scheme: Scheme::Rk2,
            dt,
            steps,
            phi: None,
            stride: 1,
        }
    }

    /// Default configuration for `scheme` (identity `phi` for NSFD).
    pub fn for_scheme(scheme: Scheme, dt: f64, steps: usize) -> Self {
        match scheme {
            Scheme::Nsfd => Self::nsfd(dt, steps, DenominatorFunction::Identity),
            Scheme::Euler => Self::euler(dt, steps),
            Scheme::Rk2 => Self::rk2(dt, steps),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!(
                "dt = {} must be finite and positive",
                self.dt
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if (self.scheme == Scheme::Nsfd) != self.phi.is_some() {
            return Err(Error::Config(
                "a denominator function is required for nsfd and forbidden otherwise".into(),
            ));
        }
        Ok(())
    }

    /// Advances one step with the configured scheme.
    #[inline]
    pub fn step(&self, params: &ModelParams, x: &State) -> State {
        match self.scheme {
            Scheme::Nsfd => nsfd_step_with(params, x, self.phi.unwrap_or_default().eval(self.dt)),
            Scheme::Euler => euler_step(params, x, self.dt),
            Scheme::Rk2 => rk2_step(params, x, self.dt),
        }
    }
}

/// One step of the explicit NSFD map with denominator `phi(dt)`.
///
/// The updates run in the order S, I, R: the I-update consumes the new S and
/// the R-update consumes both. `f*` is frozen at the old state.
pub fn nsfd_step(params: &ModelParams, x: &State, dt: f64, phi: DenominatorFunction) -> State {
    nsfd_step_with(params, x, phi.eval(dt))
}

/// [`nsfd_step`] with an already evaluated denominator value.
#[inline]
pub fn nsfd_step_with(params: &ModelParams, x: &State, phi: f64) -> State {
    let g = params.incidence().rate_per_susceptible(x.s, x.i);
    let s = (x.s + phi * params.lambda()) / (1.0 + phi * g + phi * params.susceptible_outflow());
    let i = (x.i + phi * s * g) / (1.0 + phi * params.infected_outflow());
    let r = (x.r + phi * params.beta() * i + phi * params.nu() * s) / (1.0 + phi * params.mu0());
    State::raw(s, i, r)
}

/// Forward Euler. Defined for states outside the positive cone.
#[inline]
pub fn euler_step(params: &ModelParams, x: &State, dt: f64) -> State {
    let k = params.rhs(x);
    State::raw(x.s + dt * k[0], x.i + dt * k[1], x.r + dt * k[2])
}

#[inline]
pub fn rk2_step(params: &ModelParams, x: &State, dt: f64) -> State {
    let k1 = params.rhs(x);
    let y = State::raw(x.s + dt * k1[0], x.i + dt * k1[1], x.r + dt * k1[2]);
    let k2 = params.rhs(&y);
    let h = 0.5 * dt;
    State::raw(
        x.s + h * (k1[0] + k2[0]),
        x.i + h * (k1[1] + k2[1]),
        x.r + h * (k1[2] + k2[2]),
    )
}

/// Recorded run of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<State>,
    pub config: SchemeConfig,
    pub params_fingerprint: String,
    /// Step index at which a non-finite state appeared; the run stops there
    /// and that state is not recorded.
    pub blow_up: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&State> {
        self.states.last()
    }

    pub fn is_truncated(&self) -> bool {
        self.blow_up.is_some()
    }

    /// Smallest component over all recorded states.
    pub fn min_component(&self) -> f64 {
        self.states
            .iter()
            .map(State::min_component)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn all_nonnegative(&self) -> bool {
        self.states.iter().all(State::is_nonnegative)
    }

    /// Writes `t,S,I,R` rows with round-trip-exact decimals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["t", "S", "I", "R"])?;
        for (t, x) in self.t.iter().zip(&self.states) {
            w.write_record([
                t.to_string(),
                x.s.to_string(),
                x.i.to_string(),
                x.r.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `t,S,I,R` CSV back into `(t, state)` rows.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<(f64, State)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "S", "I", "R"] {
        return Err(Error::Config(format!(
            "unexpected trajectory header {headers:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number {:?}: {e}", &rec[k])))
        };
        rows.push((parse(0)?, State::raw(parse(1)?, parse(2)?, parse(3)?)));
    }
    Ok(rows)
}

/// Short content hash of the parameters' canonical JSON form.
pub fn params_fingerprint(params: &ModelParams) -> String {
    let json = serde_json::to_vec(params).expect("parameters always serialize");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Iterates the configured scheme from `x0`, recording every `stride`-th
/// state. Stops early, flagging the step, if a component becomes non-finite.
pub fn simulate(params: &ModelParams, x0: &State, config: &SchemeConfig) -> Result<Trajectory> {
    config.validate()?;
    if !x0.is_nonnegative() {
        return Err(Error::Domain(format!(
            "initial state {x0} must be finite and non-negative"
        )));
    }
    let capacity = config.steps / config.stride + 1;
    let mut t = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    t.push(0.0);
    states.push(*x0);

    let mut x = *x0;
    let mut blow_up = None;
    for n in 1..=config.steps {
        x = config.step(params, &x);
        if !x.is_finite() {
            blow_up = Some(n);
            break;
        }
        if n % config.stride == 0 {
            t.push(n as f64 * config.dt);
            states.push(x);
        }
    }

    Ok(Trajectory {
        t,
        states,
        config: *config,
        params_fingerprint: params_fingerprint(params),
        blow_up,
    })
}
