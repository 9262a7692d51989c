//! Desk-scale experiment harness.
//!
//! Four experiments, each driven by an [`ExperimentSpec`] and emitting CSV:
//!
//! * `anytime`: best objective over time per method,
//! * `bound`: `P_c` and `F` at the exact optimum over an `(N, L)` grid,
//! * `vs-L`: `P_c` per method as the channel count grows,
//! * `vs-lambda`: `P_c` per method as the activation decay length grows.
//!
//! Trial `t` of a spec seeded with `s` uses seed `s + t` for both the layout and
//! the alarm simulation, so every grid point of a trial sees the same layout
//! and, for the `lambda` sweep, the same alarm draws. Output is deterministic
//! apart from the `elapsed_s` column of the anytime experiment.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::coordinate_descent;
use crate::error::{Error, Result};
use crate::heuristics::{kmedoids, kmedoids_pp, DEFAULT_MAX_ITER};
use crate::io::format_f64;
use crate::model::{Assignment, JointActivationMatrix};
use crate::objective::{assignment_report, hard_objective};
use crate::sim::{estimate_joint_activation, generate_layout, ActivationModel, SimulationSpec};
use crate::solver::{heuristic_then_exact, solve_exact, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    #[serde(alias = "N")]
    N,
    #[serde(alias = "L")]
    L,
    Lambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Kmedoids,
    KmedoidsPp,
    DescentPolished,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Kmedoids => "kmedoids",
            Method::KmedoidsPp => "kmedoids-pp",
            Method::DescentPolished => "descent-polished",
        }
    }

    pub fn is_heuristic(self) -> bool {
        self != Method::Exact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Anytime,
    Bound,
    VsL,
    VsLambda,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anytime" => Ok(Experiment::Anytime),
            "bound" => Ok(Experiment::Bound),
            "vs-L" | "vs-l" => Ok(Experiment::VsL),
            "vs-lambda" => Ok(Experiment::VsLambda),
            other => Err(Error::InvalidParameter(format!(
                "unknown experiment `{other}` (expected anytime, bound, vs-L, vs-lambda)"
            ))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Anytime => "anytime",
            Experiment::Bound => "bound",
            Experiment::VsL => "vs-L",
            Experiment::VsLambda => "vs-lambda",
        })
    }
}

impl Experiment {
    fn sweep(self) -> SweepVariable {
        match self {
            Experiment::Anytime | Experiment::Bound => SweepVariable::N,
            Experiment::VsL => SweepVariable::L,
            Experiment::VsLambda => SweepVariable::Lambda,
        }
    }
}

fn default_n_devices() -> usize {
    12
}
fn default_n_channels() -> usize {
    3
}
fn default_density() -> f64 {
    crate::sim::DEFAULT_DENSITY
}
fn default_lambda() -> f64 {
    crate::sim::DEFAULT_LAMBDA
}
fn default_steps() -> u64 {
    100_000
}
fn default_gap() -> f64 {
    0.0
}
fn default_methods() -> Vec<Method> {
    vec![Method::Exact, Method::KmedoidsPp]
}
fn default_trials() -> usize {
    5
}

/// Experiment description; the JSON form mirrors these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub sweep: SweepVariable,
    pub values: Vec<f64>,
    /// Channel counts of the `bound` grid; defaults to `[n_channels]`.
    #[serde(default)]
    pub channel_values: Vec<usize>,
    #[serde(default = "default_n_devices")]
    pub n_devices: usize,
    #[serde(default = "default_n_channels")]
    pub n_channels: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub time_limit_s: Option<f64>,
}

impl ExperimentSpec {
    pub fn new(sweep: SweepVariable, values: Vec<f64>) -> Self {
        Self {
            sweep,
            values,
            channel_values: Vec::new(),
            n_devices: default_n_devices(),
            n_channels: default_n_channels(),
            density: default_density(),
            lambda: default_lambda(),
            steps: default_steps(),
            seed: 0,
            gap: default_gap(),
            methods: default_methods(),
            trials: default_trials(),
            time_limit_s: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(format!("line {}, column {}", e.line(), e.column()), e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.values.is_empty() {
            return bad("`values` must not be empty".into());
        }
        if self.trials == 0 {
            return bad("`trials` must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("`methods` must not be empty".into());
        }
        if self.steps == 0 {
            return bad("`steps` must be at least 1".into());
        }
        if !(self.gap >= 0.0) {
            return bad(format!("`gap` must be >= 0, got {}", self.gap));
        }
        if self.n_devices == 0 || self.n_channels == 0 || self.channel_values.contains(&0) {
            return bad("device and channel counts must be at least 1".into());
        }
        match self.sweep {
            SweepVariable::N | SweepVariable::L => {
                if let Some(v) = self.values.iter().find(|v| !(v.fract() == 0.0 && **v >= 1.0)) {
                    return bad(format!("sweep value {v} is not a positive integer"));
                }
            }
            SweepVariable::Lambda => {
                if let Some(v) = self.values.iter().find(|v| !(**v > 0.0)) {
                    return bad(format!("lambda value {v} must be positive"));
                }
            }
        }
        Ok(())
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            gap_tolerance: self.gap,
            time_limit: self.time_limit_s.map(Duration::from_secs_f64),
            ..SolverOptions::default()
        }
    }

    fn instance(&self, n: usize, lambda: f64, trial: usize) -> Result<JointActivationMatrix> {
        let seed = self.trial_seed(trial);
        let layout = generate_layout(n, self.density, seed)?;
        let model = ActivationModel::new(lambda)?;
        Ok(estimate_joint_activation(&layout, &model, &SimulationSpec::new(self.steps, seed)?))
    }

    fn int_values(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }
}

fn require_sweep(spec: &ExperimentSpec, experiment: Experiment) -> Result<()> {
    spec.validate()?;
    if spec.sweep != experiment.sweep() {
        return Err(Error::InvalidParameter(format!(
            "{experiment:?} sweeps {:?}, but the spec sweeps {:?}",
            experiment.sweep(),
            spec.sweep
        )));
    }
    Ok(())
}

/// One assignment per method, with its wall time and incumbent trail.
struct MethodRun {
    assignment: Assignment,
    trail: Vec<(f64, f64)>,
}

fn run_method(
    method: Method,
    a: &JointActivationMatrix,
    l: usize,
    spec: &ExperimentSpec,
    seed: u64,
    warm_exact: bool,
) -> Result<MethodRun> {
    let n = a.dim();
    let start = Instant::now();
    let singletons = || Assignment::new((0..n).collect());
    let assignment = match method {
        Method::Exact => {
            let r = if warm_exact {
                heuristic_then_exact(a, l, &spec.solver_options(), seed)?
            } else {
                solve_exact(a, l, &spec.solver_options())?
            };
            let trail = r.incumbent_log.iter().map(|e| (e.elapsed_s, e.objective)).collect();
            return Ok(MethodRun { assignment: r.assignment, trail });
        }
        _ if l >= n => singletons(),
        Method::Kmedoids => kmedoids(a, l, seed, DEFAULT_MAX_ITER)?.0,
        Method::KmedoidsPp => kmedoids_pp(a, l, seed, DEFAULT_MAX_ITER)?.0,
        Method::DescentPolished => coordinate_descent(a, &kmedoids_pp(a, l, seed, DEFAULT_MAX_ITER)?.0, l, 100)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let f = hard_objective(a, &assignment, l);
    Ok(MethodRun { assignment, trail: vec![(elapsed, f)] })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnytimeRow {
    pub n: usize,
    pub l: usize,
    pub trial: usize,
    pub method: Method,
    pub elapsed_s: f64,
    pub objective: f64,
}

/// Incumbent trails of every method; the exact solver starts cold.
pub fn run_anytime(spec: &ExperimentSpec) -> Result<Vec<AnytimeRow>> {
    require_sweep(spec, Experiment::Anytime)?;
    let l = spec.n_channels;
    let jobs: Vec<(usize, usize)> =
        spec.int_values().into_iter().flat_map(|n| (0..spec.trials).map(move |t| (n, t))).collect();
    let per_job = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let a = spec.instance(n, spec.lambda, trial)?;
            let mut rows = Vec::new();
            for &method in &spec.methods {
                let run = run_method(method, &a, l, spec, spec.trial_seed(trial), false)?;
                rows.extend(run.trail.into_iter().map(|(elapsed_s, objective)| AnytimeRow {
                    n,
                    l,
                    trial,
                    method,
                    elapsed_s,
                    objective,
                }));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_job.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub n: usize,
    pub l: usize,
    /// Mean over trials of `P_c` at the exact optimum.
    pub p_c: f64,
    /// Mean over trials of `F` at the exact optimum.
    pub f: f64,
}

impl BoundRow {
    /// `(F - P_c) / F`, zero when `F = 0`.
    pub fn relative_gap(&self) -> f64 {
        if self.f > 0.0 {
            (self.f - self.p_c) / self.f
        } else {
            0.0
        }
    }
}

fn channel_grid(spec: &ExperimentSpec) -> Vec<usize> {
    if spec.channel_values.is_empty() {
        vec![spec.n_channels]
    } else {
        spec.channel_values.clone()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `P_c` and `F` at the exact optimum for every `(N, L)` of the grid.
pub fn run_bound_tightness(spec: &ExperimentSpec) -> Result<Vec<BoundRow>> {
    require_sweep(spec, Experiment::Bound)?;
    let grid: Vec<(usize, usize)> =
        spec.int_values().into_iter().flat_map(|n| channel_grid(spec).into_iter().map(move |l| (n, l))).collect();
    let jobs: Vec<(usize, usize, usize)> =
        grid.iter().flat_map(|&(n, l)| (0..spec.trials).map(move |t| (n, l, t))).collect();
    let results = jobs
        .par_iter()
        .map(|&(n, l, trial)| {
            let a = spec.instance(n, spec.lambda, trial)?;
            let run = run_method(Method::Exact, &a, l, spec, spec.trial_seed(trial), true)?;
            let report = assignment_report(&a, &run.assignment, l)?;
            Ok((report.network_average, report.pairwise_bound))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .zip(results.chunks(spec.trials))
        .map(|(&(n, l), chunk)| {
            let p: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let f: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            BoundRow { n, l, p_c: mean(&p), f: mean(&f) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    /// Sweep value: the channel count or `lambda`.
    pub x: f64,
    pub method: Method,
    /// Mean `P_c` over trials.
    pub p_c: f64,
    /// Mean `F` over trials.
    pub f: f64,
}

fn run_curve(spec: &ExperimentSpec, point: impl Fn(f64) -> (usize, f64) + Sync) -> Result<Vec<CurveRow>> {
    let jobs: Vec<(usize, usize)> =
        (0..spec.values.len()).flat_map(|v| (0..spec.trials).map(move |t| (v, t))).collect();
    let results = jobs
        .par_iter()
        .map(|&(v, trial)| {
            let (l, lambda) = point(spec.values[v]);
            let a = spec.instance(spec.n_devices, lambda, trial)?;
            spec.methods
                .iter()
                .map(|&m| {
                    let run = run_method(m, &a, l, spec, spec.trial_seed(trial), true)?;
                    let r = assignment_report(&a, &run.assignment, l)?;
                    Ok((r.network_average, r.pairwise_bound))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (v, chunk) in results.chunks(spec.trials).enumerate() {
        for (k, &method) in spec.methods.iter().enumerate() {
            let p: Vec<f64> = chunk.iter().map(|r| r[k].0).collect();
            let f: Vec<f64> = chunk.iter().map(|r| r[k].1).collect();
            rows.push(CurveRow { x: spec.values[v], method, p_c: mean(&p), f: mean(&f) });
        }
    }
    Ok(rows)
}

/// Mean `P_c` per method for each channel count in `values`.
pub fn run_pc_vs_l(spec: &ExperimentSpec) -> Result<Vec<CurveRow>> {
    require_sweep(spec, Experiment::VsL)?;
    run_curve(spec, |l| (l as usize, spec.lambda))
}

/// Mean `P_c` per method for each `lambda` in `values`, layout fixed per trial.
pub fn run_pc_vs_lambda(spec: &ExperimentSpec) -> Result<Vec<CurveRow>> {
    require_sweep(spec, Experiment::VsLambda)?;
    run_curve(spec, |lambda| (spec.n_channels, lambda))
}

pub fn anytime_csv(rows: &[AnytimeRow]) -> String {
    let mut out = String::from("n,l,trial,method,elapsed_s,objective\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n,
            r.l,
            r.trial,
            r.method.label(),
            format_f64(r.elapsed_s),
            format_f64(r.objective)
        );
    }
    out
}

pub fn bound_csv(rows: &[BoundRow]) -> String {
    let mut out = String::from("n,l,p_c,f,relative_gap\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.n,
            r.l,
            format_f64(r.p_c),
            format_f64(r.f),
            format_f64(r.relative_gap())
        );
    }
    out
}

pub fn curve_csv(sweep_name: &str, rows: &[CurveRow]) -> String {
    let mut out = format!("{sweep_name},method,p_c,f\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", format_f64(r.x), r.method.label(), format_f64(r.p_c), format_f64(r.f));
    }
    out
}

/// CSV text plus human-readable warnings about the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub csv: String,
    pub warnings: Vec<String>,
}

fn warnings(spec: &ExperimentSpec, experiment: Experiment) -> Vec<String> {
    let pairs: Vec<(usize, usize)> = match experiment {
        Experiment::Anytime => spec.int_values().into_iter().map(|n| (n, spec.n_channels)).collect(),
        Experiment::Bound => spec
            .int_values()
            .into_iter()
            .flat_map(|n| channel_grid(spec).into_iter().map(move |l| (n, l)))
            .collect(),
        Experiment::VsL => spec.int_values().into_iter().map(|l| (spec.n_devices, l)).collect(),
        Experiment::VsLambda => vec![(spec.n_devices, spec.n_channels)],
    };
    pairs
        .into_iter()
        .filter(|&(n, l)| l >= n)
        .map(|(n, l)| format!("L = {l} >= N = {n}: every device can have its own channel, optimum is 0"))
        .collect()
}

pub fn run_experiment(experiment: Experiment, spec: &ExperimentSpec) -> Result<BenchOutput> {
    let csv = match experiment {
        Experiment::Anytime => anytime_csv(&run_anytime(spec)?),
        Experiment::Bound => bound_csv(&run_bound_tightness(spec)?),
        Experiment::VsL => curve_csv("l", &run_pc_vs_l(spec)?),
        Experiment::VsLambda => curve_csv("lambda", &run_pc_vs_lambda(spec)?),
    };
    Ok(BenchOutput { csv, warnings: warnings(spec, experiment) })
}
