//! Scenario files and the commands behind the `hbv` binary.
//!
//! A scenario is one JSON document holding the model parameters, initial
//! states, scheme configurations and the artifacts to produce. Unknown keys
//! are rejected everywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    error_bound, error_history, estimate_bound_constants, estimate_convergence_order,
    BoundConstants, BoundRegion, ConvergenceStudy,
};
use crate::error::{Error, Result};
use crate::incidence::{check_hypotheses, check_hypotheses_at, log_axis, HypothesisReport};
use crate::model::{EquilibriumReport, ModelParams, State};
use crate::solvers::{simulate, DenominatorFunction, Scheme, SchemeConfig, Trajectory};

/// Accepted fitted-order window per scheme.
pub fn order_window(scheme: Scheme) -> (f64, f64) {
    match scheme {
        Scheme::Nsfd | Scheme::Euler => (0.8, 1.2),
        Scheme::Rk2 => (1.8, 2.2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    ConfigError = 2,
    BlowUp = 3,
    GateFailure = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn worst(self, other: ExitStatus) -> ExitStatus {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

impl From<&Error> for ExitStatus {
    fn from(err: &Error) -> Self {
        match err {
            Error::Io(_) | Error::Csv(_) => ExitStatus::Failure,
            Error::Bracketing { .. } => ExitStatus::BlowUp,
            _ => ExitStatus::ConfigError,
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    TrajectoryCsv,
    EquilibriumReport,
    ComparisonTable,
    ConvergenceStudy,
    HypothesisReport,
    PhasePortrait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStates {
    One(State),
    Many(Vec<State>),
}

impl InitialStates {
    pub fn to_vec(&self) -> Vec<State> {
        match self {
            InitialStates::One(x) => vec![*x],
            InitialStates::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub t_end: f64,
    pub dt_list: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub phi: DenominatorFunction,
    /// Defaults to the scenario's first initial state.
    #[serde(default)]
    pub x0: Option<State>,
    #[serde(default = "default_bound_grid")]
    pub bound_grid_n: usize,
}

fn default_scheme() -> Scheme {
    Scheme::Nsfd
}

fn default_bound_grid() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSettings {
    pub s_max: f64,
    pub i_max: f64,
    #[serde(default = "default_hypothesis_grid")]
    pub grid_n: usize,
    /// Extra uniformly drawn points, seeded by `--seed`.
    #[serde(default)]
    pub random_samples: usize,
}

fn default_hypothesis_grid() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePortraitSettings {
    /// `[lo, hi]` bounds of the box whose boundary carries the initial states.
    pub s_range: [f64; 2],
    pub i_range: [f64; 2],
    /// R component shared by all initial states.
    pub r_initial: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_ring_points")]
    pub points: usize,
    #[serde(default)]
    pub phi: DenominatorFunction,
    #[serde(default = "one")]
    pub stride: usize,
}

fn default_ring_points() -> usize {
    8
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Free-form note; not interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub params: ModelParams,
    pub initial: InitialStates,
    pub schemes: Vec<SchemeConfig>,
    #[serde(default)]
    pub outputs: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesisSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_portrait: Option<PhasePortraitSettings>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::Config(format!(
                "scenario name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config(
                "\"schemes\" must list at least one scheme".into(),
            ));
        }
        for (k, cfg) in self.schemes.iter().enumerate() {
            cfg.validate()?;
            if self.schemes[..k]
                .iter()
                .any(|c| c.scheme == cfg.scheme && c.dt == cfg.dt)
            {
                return Err(Error::Config(format!(
                    "scheme {} with dt = {} is listed twice",
                    cfg.scheme, cfg.dt
                )));
            }
        }
        let initial = self.initial.to_vec();
        if initial.is_empty() {
            return Err(Error::Config(
                "\"initial\" must hold at least one state".into(),
            ));
        }
        if let Some(bad) = initial.iter().find(|x| !x.is_nonnegative()) {
            return Err(Error::Config(format!(
                "initial state {bad} must be finite and non-negative"
            )));
        }
        if let Some(c) = &self.convergence {
            if c.dt_list.len() < 4 {
                return Err(Error::Config(format!(
                    "convergence dt_list needs at least 4 entries, got {}",
                    c.dt_list.len()
                )));
            }
        }
        if let Some(pp) = &self.phase_portrait {
            if pp.points < 4 || pp.s_range[0] > pp.s_range[1] || pp.i_range[0] > pp.i_range[1] {
                return Err(Error::Config(
                    "phase_portrait box or point count is invalid".into(),
                ));
            }
        }
        for artifact in &self.outputs {
            let missing = match artifact {
                Artifact::ConvergenceStudy => self.convergence.is_none().then_some("convergence"),
                Artifact::HypothesisReport => self.hypotheses.is_none().then_some("hypotheses"),
                Artifact::PhasePortrait => {
                    self.phase_portrait.is_none().then_some("phase_portrait")
                }
                _ => None,
            };
            if let Some(key) = missing {
                return Err(Error::Config(format!(
                    "output {artifact:?} requested without a \"{key}\" block"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_states(&self) -> Vec<State> {
        self.initial.to_vec()
    }
}

// ---------------------------------------------------------------------------
// Computations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scheme: Scheme,
    pub min_component: f64,
    pub finite: bool,
    pub nonnegative: bool,
    pub terminal_distance: f64,
    pub terminal_relative_distance: f64,
    pub final_state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dt: f64,
    pub steps: usize,
    pub target_name: String,
    pub target: State,
    pub rows: Vec<ComparisonRow>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

/// Runs NSFD, Euler and RK2 side by side and measures each against the
/// globally attracting equilibrium.
pub fn compare_schemes(
    params: &ModelParams,
    x0: &State,
    dt: f64,
    steps: usize,
    phi: DenominatorFunction,
) -> Result<Comparison> {
    let report = params.equilibrium_report()?;
    let (target_name, target) = if x0.i > 0.0 {
        report.gas_point()
    } else {
        ("E0", report.dfe)
    };
    let configs: Vec<SchemeConfig> = Scheme::ALL
        .iter()
        .map(|&s| {
            let mut cfg = SchemeConfig::for_scheme(s, dt, steps);
            if s == Scheme::Nsfd {
                cfg.phi = Some(phi);
            }
            cfg
        })
        .collect();
    let trajectories = run_all(
        params,
        &configs.iter().map(|c| (*x0, *c)).collect::<Vec<_>>(),
    )?;
    let scale = target.l1_norm().max(f64::MIN_POSITIVE);
    let rows = trajectories
        .iter()
        .map(|traj| {
            let last = *traj.last().expect("trajectory holds x0");
            let d = last.l1_distance(&target);
            ComparisonRow {
                scheme: traj.config.scheme,
                min_component: traj.min_component(),
                finite: !traj.is_truncated(),
                nonnegative: traj.all_nonnegative(),
                terminal_distance: d,
                terminal_relative_distance: d / scale,
                final_state: last,
            }
        })
        .collect();
    Ok(Comparison {
        dt,
        steps,
        target_name: target_name.to_string(),
        target,
        rows,
        trajectories,
    })
}

/// Runs independent simulations concurrently; results keep input order.
pub fn run_all(params: &ModelParams, jobs: &[(State, SchemeConfig)]) -> Result<Vec<Trajectory>> {
    thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(x0, cfg)| scope.spawn(move || simulate(params, x0, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub study: ConvergenceStudy,
    pub constants: BoundConstants,
    /// Error bound at `t_end` per step size.
    pub bounds: Vec<f64>,
    /// Whether every recorded `e_n` stayed below the bound at `t_n`.
    pub bound_respected: Vec<bool>,
    pub order_window: (f64, f64),
    pub order_ok: bool,
}

/// Convergence study plus error-bound constants and the bound check along
/// every recorded time of each run.
pub fn convergence_run(
    params: &ModelParams,
    x0: &State,
    settings: &ConvergenceSettings,
) -> Result<ConvergenceRun> {
    let study = estimate_convergence_order(
        params,
        x0,
        settings.scheme,
        settings.phi,
        &settings.dt_list,
        settings.t_end,
    )?;
    let ref_steps = (settings.t_end / study.dt_ref).round() as usize;
    let reference = simulate(params, x0, &SchemeConfig::rk2(study.dt_ref, ref_steps))?;

    let runs = run_all(
        params,
        &study
            .dt_list
            .iter()
            .map(|&dt| {
                let steps = (settings.t_end / dt).round() as usize;
                let mut cfg = SchemeConfig::for_scheme(settings.scheme, dt, steps);
                if settings.scheme == Scheme::Nsfd {
                    cfg.phi = Some(settings.phi);
                }
                (*x0, cfg)
            })
            .collect::<Vec<_>>(),
    )?;
    let mut hull: Vec<&Trajectory> = runs.iter().collect();
    hull.push(&reference);
    let region = BoundRegion::hull(params, &hull);
    let dt_max = study.dt_list.iter().copied().fold(0.0, f64::max);
    let constants = estimate_bound_constants(
        params,
        &region,
        &reference,
        settings.phi,
        dt_max,
        settings.bound_grid_n,
    )?;

    let bounds = study
        .dt_list
        .iter()
        .map(|&dt| error_bound(&constants, dt, settings.t_end))
        .collect();
    let bound_respected = runs
        .iter()
        .map(|run| {
            Ok(error_history(run, &reference)?
                .into_iter()
                .all(|(t, e)| e <= error_bound(&constants, run.config.dt, t)))
        })
        .collect::<Result<Vec<_>>>()?;
    let window = order_window(settings.scheme);
    let order_ok = study.fitted_order >= window.0 && study.fitted_order <= window.1;
    Ok(ConvergenceRun {
        study,
        constants,
        bounds,
        bound_respected,
        order_window: window,
        order_ok,
    })
}

/// Hypothesis scan on the configured grid plus optional seeded random points.
pub fn hypothesis_run(
    params: &ModelParams,
    settings: &HypothesisSettings,
    seed: u64,
) -> Result<HypothesisReport> {
    let f = params.incidence();
    if settings.random_samples == 0 {
        return check_hypotheses(f, settings.s_max, settings.i_max, settings.grid_n);
    }
    // Validate the box and grid through the regular entry point first.
    check_hypotheses(f, settings.s_max, settings.i_max, settings.grid_n)?;
    let s_axis = log_axis(settings.s_max, settings.grid_n);
    let i_axis = log_axis(settings.i_max, settings.grid_n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra: Vec<(f64, f64)> = (0..settings.random_samples)
        .map(|_| {
            (
                rng.gen_range(0.0..=settings.s_max),
                rng.gen_range(0.0..=settings.i_max),
            )
        })
        .collect();
    let grid = s_axis
        .iter()
        .flat_map(|&s| i_axis.iter().map(move |&i| (s, i)));
    Ok(check_hypotheses_at(f, grid.chain(extra)))
}

/// `points` initial states spread along the boundary of the configured box:
/// the four corners first, then edge points.
pub fn ring_states(settings: &PhasePortraitSettings) -> Vec<State> {
    let [s_lo, s_hi] = settings.s_range;
    let [i_lo, i_hi] = settings.i_range;
    let r = settings.r_initial;
    // Walk the perimeter (counter-clockwise from the lower-left corner) at
    // equal arc-length spacing.
    let w = s_hi - s_lo;
    let h = i_hi - i_lo;
    let perimeter = 2.0 * (w + h);
    (0..settings.points)
        .map(|k| {
            let mut d = perimeter * k as f64 / settings.points as f64;
            if d < w {
                return State::raw(s_lo + d, i_lo, r);
            }
            d -= w;
            if d < h {
                return State::raw(s_hi, i_lo + d, r);
            }
            d -= h;
            if d < w {
                return State::raw(s_hi - d, i_hi, r);
            }
            d -= w;
            State::raw(s_lo, i_hi - d, r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortraitSummary {
    pub initial: State,
    pub final_state: State,
    pub target: State,
    pub relative_distance: f64,
}

pub fn phase_portrait(
    params: &ModelParams,
    settings: &PhasePortraitSettings,
) -> Result<(Vec<Trajectory>, Vec<PortraitSummary>)> {
    let report = params.equilibrium_report()?;
    let cfg =
        SchemeConfig::nsfd(settings.dt, settings.steps, settings.phi).with_stride(settings.stride);
    let starts = ring_states(settings);
    let trajs = run_all(
        params,
        &starts.iter().map(|x| (*x, cfg)).collect::<Vec<_>>(),
    )?;
    let summaries = starts
        .iter()
        .zip(&trajs)
        .map(|(x0, traj)| {
            let target = if x0.i > 0.0 {
                report.gas_point().1
            } else {
                report.dfe
            };
            let last = *traj.last().expect("non-empty");
            PortraitSummary {
                initial: *x0,
                final_state: last,
                target,
                relative_distance: last.l1_distance(&target) / target.l1_norm(),
            }
        })
        .collect();
    Ok((trajs, summaries))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt_dt(dt: f64) -> String {
    dt.to_string().replace('.', "p")
}

pub fn render_comparison(cmp: &Comparison, format: Format) -> Result<String> {
    Ok(match format {
        Format::Machine => serde_json::to_string_pretty(cmp)? + "\n",
        Format::Csv => {
            let mut out = String::from(
                "scheme,min_component,finite,nonnegative,terminal_distance,terminal_relative_distance\n",
            );
            for r in &cmp.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.scheme,
                    r.min_component,
                    r.finite,
                    r.nonnegative,
                    r.terminal_distance,
                    r.terminal_relative_distance
                );
            }
            out
        }
        Format::Report => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "dt = {}, steps = {}, target {} = {}",
                cmp.dt, cmp.steps, cmp.target_name, cmp.target
            );
            let _ = writeln!(
                out,
                "{:<6} {:>14} {:>7} {:>12} {:>14} {:>12}",
                "scheme", "min", "finite", "nonnegative", "distance", "relative"
            );
            for r in &cmp.rows {
                let _ = writeln!(
                    out,
                    "{:<6} {:>14.6e} {:>7} {:>12} {:>14.6e} {:>12.4e}",
                    r.scheme.name(),
                    r.min_component,
                    r.finite,
                    r.nonnegative,
                    r.terminal_distance,
                    r.terminal_relative_distance
                );
            }
            out
        }
    })
}

pub fn render_convergence(run: &ConvergenceRun, format: Format) -> Result<String> {
    let s = &run.study;
    Ok(match format {
        Format::Machine => serde_json::to_string_pretty(run)? + "\n",
        Format::Csv => {
            let mut out = String::from("dt,error,bound,bound_respected\n");
            for k in 0..s.dt_list.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    s.dt_list[k], s.errors[k], run.bounds[k], run.bound_respected[k]
                );
            }
            out
        }
        Format::Report => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "scheme = {}, T = {}, reference = rk2 at dt = {}",
                s.scheme, s.t_end, s.dt_ref
            );
            let _ = writeln!(
                out,
                "{:>10} {:>16} {:>16} {:>8}",
                "dt", "error", "bound", "within"
            );
            for k in 0..s.dt_list.len() {
                let _ = writeln!(
                    out,
                    "{:>10} {:>16.6e} {:>16.6e} {:>8}",
                    s.dt_list[k], s.errors[k], run.bounds[k], run.bound_respected[k]
                );
            }
            if !s.excluded.is_empty() {
                let _ = writeln!(out, "excluded (non-finite): {:?}", s.excluded);
            }
            let _ = writeln!(
                out,
                "m = {:.6e}, tau = {:.6e} (L = {:.6e}, M = {:.6e})",
                run.constants.m, run.constants.tau, run.constants.l, run.constants.big_m
            );
            let _ = writeln!(
                out,
                "fitted order = {:.4} (accepted range [{}, {}]: {})",
                s.fitted_order,
                run.order_window.0,
                run.order_window.1,
                if run.order_ok { "ok" } else { "OUT OF RANGE" }
            );
            out
        }
    })
}

pub fn render_equilibria(report: &EquilibriumReport, format: Format) -> Result<String> {
    Ok(match format {
        Format::Machine => serde_json::to_string_pretty(report)? + "\n",
        Format::Report => report.to_text(),
        Format::Csv => {
            let mut out = String::from("key,value\n");
            for line in report.to_text().lines() {
                if let Some((k, v)) = line.split_once(" = ") {
                    let _ = writeln!(out, "{},\"{}\"", k, v.replace('"', "\"\""));
                }
            }
            out
        }
    })
}

pub fn render_hypotheses(report: &HypothesisReport, format: Format) -> Result<String> {
    Ok(match format {
        Format::Machine => serde_json::to_string_pretty(report)? + "\n",
        Format::Csv => {
            let mut out = String::from("hypothesis,pass,witness_S,witness_I,witness_value\n");
            for (h, ok) in &report.verdicts {
                match report.witness(*h) {
                    Some(w) => {
                        let _ = writeln!(out, "{h},{ok},{},{},{}", w.s, w.i, w.value);
                    }
                    None => {
                        let _ = writeln!(out, "{h},{ok},,,");
                    }
                }
            }
            out
        }
        Format::Report => {
            let mut out = String::new();
            for (h, ok) in &report.verdicts {
                let _ = writeln!(
                    out,
                    "{h}: {:<4} {}",
                    if *ok { "pass" } else { "FAIL" },
                    h.describe()
                );
                if let Some(w) = report.witness(*h) {
                    let _ = writeln!(
                        out,
                        "    witness S = {}, I = {}, value = {:e}",
                        w.s, w.i, w.value
                    );
                }
            }
            let _ = writeln!(
                out,
                "eta estimate = {:e} (bound {:e}), sup df/dS = {:e}, points = {}",
                report.eta_estimate, report.eta_bound, report.sup_partial_s, report.points_scanned
            );
            out
        }
    })
}

fn render_portrait(summaries: &[PortraitSummary], format: Format) -> Result<String> {
    Ok(match format {
        Format::Machine => serde_json::to_string_pretty(summaries)? + "\n",
        Format::Csv => {
            let mut out = String::from("k,S0,I0,R0,S_final,I_final,R_final,relative_distance\n");
            for (k, s) in summaries.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{k},{},{},{},{},{},{},{}",
                    s.initial.s,
                    s.initial.i,
                    s.initial.r,
                    s.final_state.s,
                    s.final_state.i,
                    s.final_state.r,
                    s.relative_distance
                );
            }
            out
        }
        Format::Report => {
            let mut out = String::new();
            let _ = writeln!(out, "{:>3} {:>30} {:>14}", "k", "initial", "rel. distance");
            for (k, s) in summaries.iter().enumerate() {
                let init = format!("({}, {}, {})", s.initial.s, s.initial.i, s.initial.r);
                let _ = writeln!(out, "{k:>3} {init:>30} {:>14.4e}", s.relative_distance);
            }
            out
        }
    })
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Report,
    Machine,
}

#[derive(Debug, Parser)]
#[command(
    name = "hbv",
    version,
    about = "Generalized HBV model: equilibria, NSFD simulation and diagnostics"
)]
pub struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifact files.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Report)]
    pub format: Format,
    /// Seed for randomized sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every scheme and artifact requested by the scenario.
    Simulate,
    /// Print equilibria, R0 and stability verdicts.
    Equilibria,
    /// Compare NSFD, Euler and RK2 from one initial state.
    Compare {
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Convergence-order study with error-bound check.
    Convergence {
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        dt_list: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Sampled check of the incidence hypotheses H1-H5.
    CheckHypotheses {
        #[arg(long)]
        s_max: Option<f64>,
        #[arg(long)]
        i_max: Option<f64>,
        #[arg(long)]
        grid_n: Option<usize>,
    },
    /// NSFD runs from a ring of initial states around the equilibrium.
    PhasePortrait,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Nsfd,
    Euler,
    Rk2,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Nsfd => Scheme::Nsfd,
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Rk2 => Scheme::Rk2,
        }
    }
}

/// What a command produced: text for stdout, files for the output
/// directory, and the exit status.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: BTreeMap<PathBuf, Vec<u8>>,
    pub status: Option<ExitStatus>,
}

impl Outcome {
    fn status(&self) -> ExitStatus {
        self.status.unwrap_or(ExitStatus::Success)
    }

    fn flag(&mut self, status: ExitStatus) {
        self.status = Some(self.status().worst(status));
    }

    fn add_trajectory(&mut self, name: String, traj: &Trajectory) -> Result<()> {
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        self.files.insert(PathBuf::from(name), buf);
        if traj.is_truncated() {
            self.flag(ExitStatus::BlowUp);
        }
        Ok(())
    }

    fn add_text(&mut self, name: &str, text: String) {
        self.files.insert(PathBuf::from(name), text.into_bytes());
    }
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    scheme: Scheme,
    tableau: &'static str,
    dt: f64,
    steps: usize,
    stride: usize,
    phi: Option<DenominatorFunction>,
    initial: State,
    params_fingerprint: String,
    blow_up_step: Option<usize>,
}

fn manifest_entry(file: &str, x0: &State, traj: &Trajectory) -> ManifestEntry {
    ManifestEntry {
        file: file.to_string(),
        scheme: traj.config.scheme,
        tableau: traj.config.scheme.tableau(),
        dt: traj.config.dt,
        steps: traj.config.steps,
        stride: traj.config.stride,
        phi: traj.config.phi,
        initial: *x0,
        params_fingerprint: traj.params_fingerprint.clone(),
        blow_up_step: traj.blow_up,
    }
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Report => "txt",
        Format::Machine => "json",
    }
}

/// Runs the scenario: every scheme from every initial state, then the
/// requested artifacts. Nothing is written here; see [`write_outcome`].
pub fn run_scenario(scenario: &Scenario, format: Format, seed: u64) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    let params = &scenario.params;
    let initial = scenario.initial_states();
    let jobs: Vec<(State, SchemeConfig)> = initial
        .iter()
        .flat_map(|x0| scenario.schemes.iter().map(move |cfg| (*x0, *cfg)))
        .collect();
    let trajectories = run_all(params, &jobs)?;

    let wants = |a: Artifact| {
        scenario.outputs.is_empty() && a == Artifact::TrajectoryCsv || scenario.outputs.contains(&a)
    };
    let mut manifest = Vec::new();
    if wants(Artifact::TrajectoryCsv) {
        for (k, ((x0, cfg), traj)) in jobs.iter().zip(&trajectories).enumerate() {
            let x_index = k / scenario.schemes.len();
            let suffix = if initial.len() > 1 {
                format!("_x{x_index}")
            } else {
                String::new()
            };
            let name = format!(
                "{}_{}_dt{}{}.csv",
                scenario.name,
                cfg.scheme,
                fmt_dt(cfg.dt),
                suffix
            );
            outcome.add_trajectory(name.clone(), traj)?;
            manifest.push(manifest_entry(&name, x0, traj));
        }
    }

    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "scenario {}: {} run(s)",
        scenario.name,
        trajectories.len()
    );
    for ((x0, cfg), traj) in jobs.iter().zip(&trajectories) {
        let _ = writeln!(
            summary,
            "  {:<5} dt = {:<8} x0 = {}  min = {:.6e}  final = {}{}",
            cfg.scheme.name(),
            cfg.dt,
            x0,
            traj.min_component(),
            traj.last().expect("non-empty"),
            match traj.blow_up {
                Some(n) => format!("  BLOW-UP at step {n}"),
                None => String::new(),
            }
        );
    }

    if wants(Artifact::EquilibriumReport) {
        let report = params.equilibrium_report()?;
        outcome.add_text(
            &format!("{}_equilibria.{}", scenario.name, ext(format)),
            render_equilibria(&report, format)?,
        );
    }
    if wants(Artifact::ComparisonTable) {
        let first = scenario.schemes[0];
        let cmp = compare_schemes(
            params,
            &initial[0],
            first.dt,
            first.steps,
            first.phi.unwrap_or_default(),
        )?;
        outcome.add_text(
            &format!("{}_comparison.{}", scenario.name, ext(format)),
            render_comparison(&cmp, format)?,
        );
    }
    if wants(Artifact::ConvergenceStudy) {
        let settings = scenario.convergence.as_ref().expect("validated");
        let x0 = settings.x0.unwrap_or(initial[0]);
        let run = convergence_run(params, &x0, settings)?;
        if !run.order_ok {
            outcome.flag(ExitStatus::GateFailure);
        }
        let _ = writeln!(
            summary,
            "  convergence: fitted order {:.4}",
            run.study.fitted_order
        );
        outcome.add_text(
            &format!("{}_convergence.{}", scenario.name, ext(format)),
            render_convergence(&run, format)?,
        );
    }
    if wants(Artifact::HypothesisReport) {
        let settings = scenario.hypotheses.as_ref().expect("validated");
        let report = hypothesis_run(params, settings, seed)?;
        outcome.add_text(
            &format!("{}_hypotheses.{}", scenario.name, ext(format)),
            render_hypotheses(&report, format)?,
        );
    }
    if wants(Artifact::PhasePortrait) {
        let settings = scenario.phase_portrait.as_ref().expect("validated");
        let (trajs, summaries) = phase_portrait(params, settings)?;
        for (k, (traj, s)) in trajs.iter().zip(&summaries).enumerate() {
            let name = format!("{}_portrait_{k}.csv", scenario.name);
            outcome.add_trajectory(name.clone(), traj)?;
            manifest.push(manifest_entry(&name, &s.initial, traj));
        }
        outcome.add_text(
            &format!("{}_portrait_summary.{}", scenario.name, ext(format)),
            render_portrait(&summaries, format)?,
        );
    }
    if !manifest.is_empty() {
        outcome.add_text(
            &format!("{}_manifest.json", scenario.name),
            serde_json::to_string_pretty(&manifest)? + "\n",
        );
    }
    outcome.stdout = summary;
    Ok(outcome)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let scenario = Scenario::load(path)?;
    let params = &scenario.params;
    let initial = scenario.initial_states();
    let mut outcome = Outcome::default();
    match &cli.command {
        Command::Simulate => return run_scenario(&scenario, cli.format, cli.seed),
        Command::Equilibria => {
            outcome.stdout = render_equilibria(&params.equilibrium_report()?, cli.format)?;
        }
        Command::Compare { dt, steps } => {
            let first = scenario.schemes[0];
            let dt = dt.unwrap_or(first.dt);
            let steps = steps.unwrap_or(first.steps);
            let cmp = compare_schemes(
                params,
                &initial[0],
                dt,
                steps,
                first.phi.unwrap_or_default(),
            )?;
            for traj in &cmp.trajectories {
                outcome.add_trajectory(
                    format!(
                        "{}_compare_{}_dt{}.csv",
                        scenario.name,
                        traj.config.scheme,
                        fmt_dt(dt)
                    ),
                    traj,
                )?;
            }
            outcome.stdout = render_comparison(&cmp, cli.format)?;
        }
        Command::Convergence {
            t_end,
            dt_list,
            scheme,
        } => {
            let mut settings = scenario.convergence.clone().unwrap_or(ConvergenceSettings {
                t_end: 0.0,
                dt_list: Vec::new(),
                scheme: Scheme::Nsfd,
                phi: DenominatorFunction::Identity,
                x0: None,
                bound_grid_n: default_bound_grid(),
            });
            if let Some(t) = t_end {
                settings.t_end = *t;
            }
            if let Some(list) = dt_list {
                settings.dt_list = list.clone();
            }
            if let Some(s) = scheme {
                settings.scheme = (*s).into();
            }
            if settings.dt_list.len() < 4 {
                return Err(Error::Config(format!(
                    "convergence needs at least 4 step sizes, got {}",
                    settings.dt_list.len()
                )));
            }
            let x0 = settings.x0.unwrap_or(initial[0]);
            let run = convergence_run(params, &x0, &settings)?;
            if !run.order_ok {
                outcome.flag(ExitStatus::GateFailure);
            }
            outcome.stdout = render_convergence(&run, cli.format)?;
        }
        Command::CheckHypotheses {
            s_max,
            i_max,
            grid_n,
        } => {
            let fb = params.feasible_bounds();
            let mut settings = scenario.hypotheses.clone().unwrap_or(HypothesisSettings {
                s_max: fb.s_max,
                i_max: fb.si_max,
                grid_n: default_hypothesis_grid(),
                random_samples: 0,
            });
            if let Some(v) = s_max {
                settings.s_max = *v;
            }
            if let Some(v) = i_max {
                settings.i_max = *v;
            }
            if let Some(v) = grid_n {
                settings.grid_n = *v;
            }
            let report = hypothesis_run(params, &settings, cli.seed)?;
            outcome.stdout = render_hypotheses(&report, cli.format)?;
        }
        Command::PhasePortrait => {
            let settings = scenario
                .phase_portrait
                .as_ref()
                .ok_or_else(|| Error::Config("scenario has no \"phase_portrait\" block".into()))?;
            let (trajs, summaries) = phase_portrait(params, settings)?;
            for (k, traj) in trajs.iter().enumerate() {
                outcome.add_trajectory(format!("{}_portrait_{k}.csv", scenario.name), traj)?;
            }
            outcome.stdout = render_portrait(&summaries, cli.format)?;
        }
    }
    Ok(outcome)
}

/// Writes every artifact file under `dir`, creating it if needed.
pub fn write_outcome(outcome: &Outcome, dir: &Path) -> Result<()> {
    if outcome.files.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir)?;
    for (name, bytes) in &outcome.files {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitStatus::ConfigError.code()
            } else {
                ExitStatus::Success.code()
            };
        }
    };
    match execute(&cli).and_then(|outcome| {
        write_outcome(&outcome, &cli.out)?;
        Ok(outcome)
    }) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            let status = outcome.status();
            if status != ExitStatus::Success {
                eprintln!("hbv: finished with status {status:?}");
            }
            status.code()
        }
        Err(err) => {
            eprintln!("hbv: {err}");
            ExitStatus::from(&err).code()
        }
    }
}
