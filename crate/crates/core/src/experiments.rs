//! Experiment registry: declared parameters, batch execution, checks and
//! artifacts (CSV logs, `metrics.json`, optional SVG plots).
//!
//! Every experiment writes into `<output_dir>/<name>/`. Runs inside one
//! experiment are independent and execute on the rayon pool; files are
//! written after all runs return.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscreteDynamics, PlanarArm, State};
use crate::ocp::{ConstraintSpec, InputBound, OcpSpec, StageCostSpec};
use crate::plot::{line_chart, Series};
use crate::simloop::{
    decay_envelope_check, metrics, run_closed_loop, ClosedLoopConfig, Metrics, PlantModel, RunLog, RunOutcome,
};
use crate::surface::{run_scenario, GroundTruthProfile, ScenarioConfig, ScenarioMetrics, SurfaceTick};
use crate::task::{GainMatrix, Inequality, JointLimits, SinusoidTracking, Task};

pub const NAMES: [&str; 8] = [
    "figA_perfect",
    "figA_mismatch",
    "figB_horizons",
    "figC_horizons",
    "figC_mu_sweep",
    "figC_constraints",
    "surface_sweep",
    "solver_bench",
];

/// Bit-exact header of planar run logs.
pub const CSV_HEADER: [&str; 15] = [
    "t", "q1", "q2", "q3", "qd1", "qd2", "qd3", "u1", "u2", "u3", "e1", "e2", "kkt", "solve_ms", "violation_max",
];

/// Columns appended for surface runs.
pub const SURFACE_COLUMNS: [&str; 8] = ["surf_err", "vel_err", "a1", "a2", "a3", "a4", "a5", "a6"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Value stated with the method.
    Published,
    /// Value picked for this artifact.
    Chosen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    List(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub key: String,
    pub value: Value,
    pub origin: Origin,
    pub note: String,
}

/// Declared parameters of one experiment, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Params(Vec<Param>);

impl Params {
    fn with(mut self, key: &str, value: Value, origin: Origin, note: &str) -> Self {
        self.0.push(Param {
            key: key.into(),
            value,
            origin,
            note: note.into(),
        });
        self
    }

    fn num(self, key: &str, v: f64, origin: Origin, note: &str) -> Self {
        self.with(key, Value::Num(v), origin, note)
    }

    fn list(self, key: &str, v: &[f64], origin: Origin, note: &str) -> Self {
        self.with(key, Value::List(v.to_vec()), origin, note)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.0.iter()
    }

    pub fn get(&self, key: &str) -> Option<&Param> {
        self.0.iter().find(|p| p.key == key)
    }

    pub fn number(&self, key: &str) -> f64 {
        match self.get(key).map(|p| &p.value) {
            Some(Value::Num(v)) => *v,
            _ => panic!("parameter {key} is not a declared scalar"),
        }
    }

    pub fn values(&self, key: &str) -> Vec<f64> {
        match self.get(key).map(|p| &p.value) {
            Some(Value::List(v)) => v.clone(),
            _ => panic!("parameter {key} is not a declared list"),
        }
    }

    fn horizons(&self, key: &str) -> Result<Vec<usize>> {
        self.values(key)
            .into_iter()
            .map(|v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidOverride {
                        key: key.into(),
                        reason: format!("horizon {v} is not a positive integer"),
                    })
                }
            })
            .collect()
    }

    /// Replaces a declared value; the new value keeps the declared shape and
    /// is marked as chosen.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let bad = |reason: String| Error::InvalidOverride { key: key.into(), reason };
        let p = self
            .0
            .iter_mut()
            .find(|p| p.key == key)
            .ok_or_else(|| bad("not a declared parameter of this experiment".into()))?;
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| bad(format!("{s:?} is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad("must be finite".into()))
            }
        };
        p.value = match p.value {
            Value::Num(_) => Value::Num(parse(raw)?),
            Value::List(_) => {
                let items: Result<Vec<f64>> = raw.split(',').map(parse).collect();
                let items = items?;
                if items.is_empty() {
                    return Err(bad("empty list".into()));
                }
                Value::List(items)
            }
        };
        p.origin = Origin::Chosen;
        p.note = "overridden".into();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub overrides: Vec<(String, String)>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub plots: bool,
}

impl ExperimentSpec {
    pub fn new(name: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            name: name.into(),
            overrides: Vec::new(),
            output_dir: output_dir.into(),
            seed: 0,
            plots: false,
        }
    }

    pub fn with_override(mut self, key: &str, value: &str) -> Self {
        self.overrides.push((key.into(), value.into()));
        self
    }

    /// Declared parameters with overrides applied.
    pub fn params(&self) -> Result<Params> {
        let mut p = declared(&self.name)?;
        for (k, v) in &self.overrides {
            p.set(k, v)?;
        }
        Ok(p)
    }
}

/// One-line description of a registered experiment.
pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "figA_perfect" => "regulator cost, perfect plant: settling slows as μ grows",
        "figA_mismatch" => "regulator cost, lagged plant: the fastest μ destabilises",
        "figB_horizons" => "damped cost over horizons: short horizons fail to converge",
        "figC_horizons" => "decay cost, lagged plant: the exponential envelope holds for every N",
        "figC_mu_sweep" => "decay cost at N=40: response insensitive to small μ",
        "figC_constraints" => "decay cost with hard joint limits: longer horizons anticipate",
        "surface_sweep" => "surface following over a sine bump for several horizons",
        "solver_bench" => "warm-started solve times of the planar problem per horizon",
        _ => return None,
    })
}

use Origin::{Chosen, Published};

fn common(p: Params) -> Params {
    p.num("dt", 0.01, Published, "prediction and control step, s")
        .list("q0", &[-1.0, PI / 4.0, PI / 2.0], Chosen, "initial joint configuration; start at rest")
        .num("timing", 0.0, Chosen, "1 writes measured solve times into the CSV; 0 writes zeros so logs are reproducible")
}

fn decay_common(p: Params) -> Params {
    p.num("k_e", 2.0, Published, "decay rate of both task channels, 1/s")
        .num("alpha_internal", 15.0, Published, "actuator lag of the simulated plant, 1/s")
}

fn declared(name: &str) -> Result<Params> {
    let p = Params::default();
    Ok(match name {
        "figA_perfect" | "figA_mismatch" => {
            let p = common(p)
                .list("mu", &[1e-5, 1e-3, 1e-1], Published, "input regularisation sweep, s⁴")
                .num("horizon", 40.0, Published, "prediction horizon")
                .num("duration", 4.0, Chosen, "simulated time, s");
            if name == "figA_mismatch" {
                p.num("alpha_internal", 15.0, Published, "actuator lag of the simulated plant, 1/s")
                    .num("diverge_by", 3.0, Chosen, "the smallest μ must trip the guard before this time, s")
            } else {
                p
            }
        }
        "figB_horizons" => common(p)
            .list("horizons", &[2.0, 10.0, 30.0], Published, "horizon lengths")
            .num("mu", 1e-4, Published, "input regularisation, s⁴")
            .num("lambda", 1e-1, Published, "task-velocity weight, s²")
            .num("duration", 4.0, Chosen, "simulated time, s"),
        "figC_horizons" => decay_common(common(p))
            .list("horizons", &[2.0, 10.0, 30.0, 40.0], Published, "horizon lengths")
            .num("mu", 1e-5, Published, "input regularisation, s⁴")
            .num("duration", 3.0, Chosen, "simulated time, s")
            .num("envelope_tol", 0.1, Chosen, "allowed deviation from e(0)e^{-k_e t}, fraction of ‖e(0)‖∞"),
        "figC_mu_sweep" => decay_common(common(p))
            .list("mu", &[1e-5, 1e-4, 1e-3, 1e-2], Published, "input regularisation sweep, s⁴")
            .num("horizon", 40.0, Published, "prediction horizon")
            .num("duration", 3.0, Chosen, "simulated time, s")
            .num("pair_tol", 0.05, Chosen, "allowed pairwise e1 deviation, fraction of |e1(0)|"),
        "figC_constraints" => decay_common(common(p))
            .list("horizons", &[2.0, 10.0, 30.0, 40.0], Published, "horizon lengths")
            .num("mu", 1e-5, Published, "input regularisation, s⁴")
            .num("barrier_alpha", 2.0, Published, "barrier rate of every limit row, 1/s")
            .list("q_lower", &[-2.0, -3.2, -3.2], Chosen, "joint position lower limits")
            .list("q_upper", &[0.5, 3.2, 3.2], Chosen, "joint position upper limits")
            .num("qdot_limit", 0.5, Chosen, "symmetric joint velocity limit, rad/s")
            .num("qddot_limit", 0.5, Chosen, "symmetric acceleration bound, rad/s²")
            .num("constraint_tol", 1e-8, Chosen, "solver feasibility tolerance")
            .num("duration", 10.0, Chosen, "simulated time, s"),
        "surface_sweep" => {
            let d = ScenarioConfig::default();
            p.num("dt", d.control_dt, Published, "control step, s")
                .num("timing", 0.0, Chosen, "1 writes measured solve times into the CSV; 0 writes zeros")
                .list("horizons", &[2.0, 5.0, 10.0, 20.0, 30.0], Chosen, "horizon lengths; 2 and 30 are the published pair")
                .num("alpha", d.alpha, Published, "task and barrier rate, 1/s")
                .num("w_surface", d.w_surface, Published, "on-surface weight")
                .num("w_orientation", d.w_orientation, Published, "orientation weight")
                .num("w_velocity", d.w_velocity, Published, "velocity weight")
                .num("w_range", d.w_range, Published, "range slack weight")
                .num("mu", d.mu, Published, "input regularisation, s⁴")
                .num("v_des", d.v_des, Published, "travel speed, m/s")
                .num("x_start", d.x_start, Published, "tool tip x at start, m")
                .num("l_range", d.l_range, Published, "sensor range half-width, m")
                .num("qdot_limit", d.qdot_limit, Published, "joint velocity limit, rad/s")
                .num("qddot_limit", d.qddot_limit, Published, "acceleration bound, rad/s²")
                .num("x_end", d.x_end, Chosen, "traverse ends when the tip passes this x, m")
                .num("probe_offset", d.probe_offset, Chosen, "tf2/tf3 offset along the tool tangent, m")
                .num("look_ahead", d.look_ahead, Chosen, "sensor sample distance ahead of the tip, m")
                .num("noise_sigma", d.noise_sigma, Chosen, "sensor noise standard deviation, m")
                .num("buffer_len", d.buffer_len as f64, Chosen, "estimator buffer length")
                .num("warmup", d.warmup, Chosen, "hold phase before the traverse, s")
                .num("alpha_internal", 20.0, Chosen, "actuator lag of the simulated arm, 1/s")
                .num("bump_start", 1.05, Chosen, "sine bump start, m")
                .num("bump_width", 0.55, Chosen, "sine bump width, m")
                .num("bump_amplitude", 0.05, Chosen, "sine bump height, m")
                .num("budget_ms", 10.0, Published, "control period the median solve must fit, ms")
        }
        "solver_bench" => decay_common(common(p))
            .list("horizons", &[2.0, 10.0, 20.0, 30.0, 40.0], Chosen, "horizon lengths")
            .num("mu", 1e-5, Published, "input regularisation, s⁴")
            .num("duration", 3.0, Chosen, "simulated time, s")
            .num("budget_ms", 10.0, Published, "control period the median solve must fit, ms"),
        other => return Err(Error::UnknownExperiment(other.into())),
    })
}

/// Acceptance check attached to an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            pass,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub csv: String,
    pub horizon: usize,
    pub mu: Option<f64>,
    pub outcome: RunOutcome,
    pub metrics: Metrics,
    pub surface: Option<ScenarioMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub parameters: Params,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<Check>,
    /// No run failed at runtime and every check passed.
    pub pass: bool,
}

/// Logs of one run, kept in memory for checks and plots.
#[derive(Clone, Debug)]
pub struct RunData {
    pub summary: RunSummary,
    pub log: RunLog,
    pub surface: Option<Vec<SurfaceTick>>,
}

enum Job {
    Planar {
        label: String,
        horizon: usize,
        mu: Option<f64>,
        cfg: Box<ClosedLoopConfig>,
    },
    Surface {
        label: String,
        horizon: usize,
        cfg: Box<ScenarioConfig>,
        profile: GroundTruthProfile,
    },
}

fn planar_spec(p: &Params, horizon: usize, cost: StageCostSpec) -> Result<OcpSpec> {
    let dynamics = DiscreteDynamics::euler(3, p.number("dt"))?;
    Ok(OcpSpec::new(horizon, dynamics, vec![Task::new("track", SinusoidTracking)], cost))
}

fn planar_job(p: &Params, label: String, horizon: usize, mu: Option<f64>, spec: OcpSpec, plant: PlantModel) -> Result<Job> {
    let q0 = p.values("q0");
    if q0.len() != 3 {
        return Err(Error::InvalidOverride {
            key: "q0".into(),
            reason: "needs three joint values".into(),
        });
    }
    let mut cfg = ClosedLoopConfig::new(spec, State::at_rest(&q0, 0.0), p.number("duration"));
    cfg.plant = plant;
    cfg.validate()?;
    Ok(Job::Planar {
        label,
        horizon,
        mu,
        cfg: Box::new(cfg),
    })
}

fn lagged(p: &Params) -> PlantModel {
    PlantModel::Lagged {
        alpha_internal: p.number("alpha_internal"),
    }
}

fn decay_cost(p: &Params, mu: f64) -> Result<StageCostSpec> {
    Ok(StageCostSpec::Decay {
        w_s: DMatrix::identity(2, 2),
        k_e: GainMatrix::uniform(p.number("k_e"), 2)?,
        mu,
        w_r: DMatrix::identity(3, 3),
    })
}

fn surface_config(p: &Params, seed: u64) -> Result<ScenarioConfig> {
    let mut c = ScenarioConfig {
        control_dt: p.number("dt"),
        alpha: p.number("alpha"),
        w_surface: p.number("w_surface"),
        w_orientation: p.number("w_orientation"),
        w_velocity: p.number("w_velocity"),
        w_range: p.number("w_range"),
        mu: p.number("mu"),
        v_des: p.number("v_des"),
        x_start: p.number("x_start"),
        x_end: p.number("x_end"),
        l_range: p.number("l_range"),
        qdot_limit: p.number("qdot_limit"),
        qddot_limit: p.number("qddot_limit"),
        probe_offset: p.number("probe_offset"),
        look_ahead: p.number("look_ahead"),
        noise_sigma: p.number("noise_sigma"),
        warmup: p.number("warmup"),
        plant: lagged(p),
        seed,
        ..ScenarioConfig::default()
    };
    let len = p.number("buffer_len");
    if !(len >= 1.0 && len.fract() == 0.0) {
        return Err(Error::InvalidOverride {
            key: "buffer_len".into(),
            reason: "must be a positive integer".into(),
        });
    }
    c.buffer_len = len as usize;
    c.validate()?;
    Ok(c)
}

fn jobs(name: &str, p: &Params, seed: u64) -> Result<Vec<Job>> {
    let i3 = || DMatrix::<f64>::identity(3, 3);
    let mut out = Vec::new();
    match name {
        "figA_perfect" | "figA_mismatch" => {
            let plant = if name == "figA_mismatch" { lagged(p) } else { PlantModel::Nominal };
            let n = p.number("horizon") as usize;
            for mu in p.values("mu") {
                let cost = StageCostSpec::Regulator {
                    q: DMatrix::identity(2, 2),
                    mu,
                    w_r: i3(),
                };
                out.push(planar_job(p, format!("mu_{mu:e}"), n, Some(mu), planar_spec(p, n, cost)?, plant)?);
            }
        }
        "figB_horizons" => {
            for n in p.horizons("horizons")? {
                let cost = StageCostSpec::damped_diag(2, p.number("lambda"), p.number("mu"), i3());
                out.push(planar_job(p, format!("N_{n}"), n, Some(p.number("mu")), planar_spec(p, n, cost)?, PlantModel::Nominal)?);
            }
        }
        "figC_horizons" | "solver_bench" => {
            let mu = p.number("mu");
            for n in p.horizons("horizons")? {
                out.push(planar_job(p, format!("N_{n}"), n, Some(mu), planar_spec(p, n, decay_cost(p, mu)?)?, lagged(p))?);
            }
        }
        "figC_mu_sweep" => {
            let n = p.number("horizon") as usize;
            for mu in p.values("mu") {
                out.push(planar_job(p, format!("mu_{mu:e}"), n, Some(mu), planar_spec(p, n, decay_cost(p, mu)?)?, lagged(p))?);
            }
        }
        "figC_constraints" => {
            let mu = p.number("mu");
            let (lo, hi) = (p.values("q_lower"), p.values("q_upper"));
            let v = p.number("qdot_limit");
            let limits = JointLimits::new(3, Some((lo, hi)), Some((vec![-v; 3], vec![v; 3])))?;
            for n in p.horizons("horizons")? {
                let spec = planar_spec(p, n, decay_cost(p, mu)?)?
                    .with_constraint(ConstraintSpec::hard(
                        Inequality::new("joint limits", limits.clone()),
                        Some(GainMatrix::uniform(p.number("barrier_alpha"), 12)?),
                    ))
                    .with_input_bounds(InputBound::symmetric(p.number("qddot_limit"), 3)?);
                let mut job = planar_job(p, format!("N_{n}"), n, Some(mu), spec, lagged(p))?;
                if let Job::Planar { cfg, .. } = &mut job {
                    cfg.solver.constraint_tol = p.number("constraint_tol");
                }
                out.push(job);
            }
        }
        "surface_sweep" => {
            let cfg = surface_config(p, seed)?;
            let profile = GroundTruthProfile::SineBump {
                z0: -0.3,
                start: p.number("bump_start"),
                width: p.number("bump_width"),
                amplitude: p.number("bump_amplitude"),
            };
            for n in p.horizons("horizons")? {
                if n < 2 {
                    return Err(Error::InvalidOverride {
                        key: "horizons".into(),
                        reason: "surface runs need N ≥ 2".into(),
                    });
                }
                out.push(Job::Surface {
                    label: format!("N_{n}"),
                    horizon: n,
                    cfg: Box::new(cfg.clone()),
                    profile: profile.clone(),
                });
            }
        }
        other => return Err(Error::UnknownExperiment(other.into())),
    }
    Ok(out)
}

fn execute(job: &Job) -> Result<RunData> {
    match job {
        Job::Planar { label, horizon, mu, cfg } => {
            let log = run_closed_loop(cfg)?;
            let m = metrics(&log)?;
            Ok(RunData {
                summary: RunSummary {
                    label: label.clone(),
                    csv: format!("{label}.csv"),
                    horizon: *horizon,
                    mu: *mu,
                    outcome: log.outcome.clone().unwrap_or(RunOutcome::Completed),
                    metrics: m,
                    surface: None,
                },
                log,
                surface: None,
            })
        }
        Job::Surface {
            label,
            horizon,
            cfg,
            profile,
        } => {
            let run = run_scenario(cfg, profile, *horizon)?;
            let m = metrics(&run.log)?;
            Ok(RunData {
                summary: RunSummary {
                    label: label.clone(),
                    csv: format!("{label}.csv"),
                    horizon: *horizon,
                    mu: Some(cfg.mu),
                    outcome: run.log.outcome.clone().unwrap_or(RunOutcome::Completed),
                    metrics: m,
                    surface: Some(run.metrics),
                },
                log: run.log,
                surface: Some(run.surface),
            })
        }
    }
}

/// Executes every run of `spec` without touching the filesystem.
pub fn execute_experiment(spec: &ExperimentSpec) -> Result<(ExperimentReport, Vec<RunData>)> {
    let params = spec.params()?;
    let jobs = jobs(&spec.name, &params, spec.seed)?;
    let runs: Vec<RunData> = jobs.par_iter().map(execute).collect::<Result<_>>()?;
    let checks = checks(&spec.name, &params, &runs);
    let runtime_ok = runs.iter().all(|r| !matches!(r.summary.outcome, RunOutcome::SolverFailed { .. }));
    let pass = runtime_ok && checks.iter().all(|c| c.pass);
    let report = ExperimentReport {
        experiment: spec.name.clone(),
        seed: spec.seed,
        parameters: params,
        runs: runs.iter().map(|r| r.summary.clone()).collect(),
        checks,
        pass,
    };
    Ok((report, runs))
}

/// Executes `spec` and writes its artifacts; returns the report.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let (report, runs) = execute_experiment(spec)?;
    let dir = spec.output_dir.join(&spec.name);
    fs::create_dir_all(&dir)?;
    let timing = report.parameters.number("timing") != 0.0;
    for r in &runs {
        write_csv(&dir.join(&r.summary.csv), &r.log, r.surface.as_deref(), timing)?;
    }
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if spec.plots {
        write_plots(&dir, &runs)?;
    }
    Ok(report)
}

/// Writes one run log; with `timing` false the `solve_ms` column is zero.
pub fn write_csv(path: &Path, log: &RunLog, surface: Option<&[SurfaceTick]>, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if surface.is_some() {
        header.extend(SURFACE_COLUMNS);
    }
    w.write_record(&header)?;
    for (i, r) in log.ticks.iter().enumerate() {
        let mut row: Vec<f64> = vec![r.t];
        row.extend(r.state.q.iter());
        row.extend(r.state.qdot.iter());
        row.extend(r.input.iter());
        row.push(r.errors[0]);
        row.push(r.errors.get(1).copied().unwrap_or(0.0));
        row.push(r.solve.kkt);
        row.push(if timing { r.solve.solve_ms } else { 0.0 });
        row.push(r.violation);
        if let Some(s) = surface {
            let s = &s[i];
            row.push(s.surf_err);
            row.push(s.vel_err);
            row.extend(s.coeffs);
        }
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip text; scientific notation outside [1e-4, 1e15).
fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn write_plots(dir: &Path, runs: &[RunData]) -> Result<()> {
    let series = |f: &dyn Fn(&RunData) -> Vec<(f64, f64)>| -> Vec<Series> {
        runs.iter()
            .map(|r| Series {
                label: r.summary.label.clone(),
                points: f(r),
            })
            .collect()
    };
    let e1 = series(&|r| r.log.ticks.iter().map(|t| (t.t, t.errors[0])).collect());
    fs::write(dir.join("e1.svg"), line_chart("task error e1", "t [s]", "e1", &e1))?;
    if runs.iter().any(|r| r.surface.is_some()) {
        let along = |f: fn(&SurfaceTick) -> f64| {
            series(&|r| {
                r.surface
                    .iter()
                    .flatten()
                    .zip(&r.log.ticks)
                    .map(|(s, t)| (PlanarArm::forward_kinematics(t.state.q.as_slice())[0], f(s)))
                    .collect()
            })
        };
        fs::write(
            dir.join("surf_err.svg"),
            line_chart("surface error", "tool x [m]", "g(x) - z [m]", &along(|s| s.surf_err)),
        )?;
        fs::write(
            dir.join("vel_err.svg"),
            line_chart("velocity error", "tool x [m]", "v - v_des [m/s]", &along(|s| s.vel_err)),
        )?;
        let u1 = series(&|r| r.log.ticks.iter().map(|t| (t.t, t.input[0])).collect());
        fs::write(dir.join("u1.svg"), line_chart("commanded acceleration u1", "t [s]", "u1", &u1))?;
    }
    Ok(())
}

fn outcome_text(o: &RunOutcome) -> String {
    match o {
        RunOutcome::Completed => "completed".into(),
        RunOutcome::Diverged { t, .. } => format!("diverged at {t:.2} s"),
        RunOutcome::SolverFailed { t, .. } => format!("solver failed at {t:.2} s"),
    }
}

/// Largest `|e1|` at or after `t_from`.
pub fn peak_after(log: &RunLog, t_from: f64) -> f64 {
    log.ticks
        .iter()
        .filter(|r| r.t >= t_from - 1e-9)
        .map(|r| r.errors[0].abs())
        .fold(0.0, f64::max)
}

/// `e1` at the tick closest to `t`.
pub fn e1_at(log: &RunLog, t: f64) -> Option<f64> {
    log.ticks
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .map(|r| r.errors[0])
}

/// Largest pairwise `max_t |e1ᵃ(t) − e1ᵇ(t)|` over `|e1(0)|` of the first run.
pub fn max_pairwise_deviation(logs: &[&RunLog]) -> f64 {
    let Some(e0) = logs.first().and_then(|l| l.ticks.first()).map(|r| r.errors[0].abs()) else {
        return 0.0;
    };
    let mut worst: f64 = 0.0;
    for (i, a) in logs.iter().enumerate() {
        for b in &logs[i + 1..] {
            let (ca, cb) = (a.channel(0), b.channel(0));
            if ca.len() != cb.len() {
                return f64::INFINITY;
            }
            let d = ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(d);
        }
    }
    worst / e0
}

fn checks(name: &str, p: &Params, runs: &[RunData]) -> Vec<Check> {
    let mut out = Vec::new();
    let e0 = |r: &RunData| r.log.ticks.first().map_or(0.0, |t| t.errors[0].abs());
    match name {
        "figA_perfect" => {
            let th: Vec<Option<f64>> = runs.iter().map(|r| r.summary.metrics.time_to_half[0]).collect();
            let ok = th.iter().all(|t| t.is_some()) && th.windows(2).all(|w| w[0] < w[1]);
            out.push(Check::new(
                "time to half error strictly increasing in mu",
                ok,
                format!("t_half = {th:?}"),
            ));
        }
        "figA_mismatch" => {
            let by = p.number("diverge_by");
            let first = &runs[0].summary;
            let last = &runs[runs.len() - 1].summary;
            let fast_diverges = matches!(first.outcome, RunOutcome::Diverged { t, .. } if t <= by);
            out.push(Check::new(
                "smallest mu trips the divergence guard",
                fast_diverges,
                format!("{}: {}", first.label, outcome_text(&first.outcome)),
            ));
            out.push(Check::new(
                "largest mu completes",
                last.outcome == RunOutcome::Completed,
                format!("{}: {}", last.label, outcome_text(&last.outcome)),
            ));
        }
        "figB_horizons" => {
            let find = |n: usize| runs.iter().find(|r| r.summary.horizon == n);
            if let Some(r) = find(2) {
                let f = r.summary.metrics.final_abs[0];
                out.push(Check::new(
                    "N=2 final |e1| above half of |e1(0)|",
                    f > 0.5 * e0(r),
                    format!("final {f:.4} vs |e1(0)| {:.4}", e0(r)),
                ));
            }
            if let Some(r) = find(30) {
                let f = r.summary.metrics.final_abs[0];
                out.push(Check::new(
                    "N=30 final |e1| below a tenth of |e1(0)|",
                    f < 0.1 * e0(r),
                    format!("final {f:.4} vs |e1(0)| {:.4}", e0(r)),
                ));
            }
        }
        "figC_horizons" => {
            let k = p.number("k_e");
            let tol = p.number("envelope_tol");
            let mut env_ok = true;
            let mut ratio_ok = true;
            let mut env = Vec::new();
            let mut ratio = Vec::new();
            for r in runs {
                let c = decay_envelope_check(&r.log, k, tol);
                env_ok &= c.pass && r.summary.outcome == RunOutcome::Completed;
                env.push(format!("{}: {:.3}", r.summary.label, c.max_deviation));
                let q = e1_at(&r.log, 1.0 / k).zip(r.log.ticks.first()).map(|(a, t0)| a / t0.errors[0]);
                ratio_ok &= q.is_some_and(|q| (q - (-1.0f64).exp()).abs() <= 0.05);
                ratio.push(format!("{}: {:.3}", r.summary.label, q.unwrap_or(f64::NAN)));
            }
            out.push(Check::new("decay envelope within tolerance for every N", env_ok, env.join(", ")));
            out.push(Check::new(
                "e1 at one time constant is 37% ± 5% of e1(0)",
                ratio_ok,
                ratio.join(", "),
            ));
        }
        "figC_mu_sweep" => {
            let logs: Vec<&RunLog> = runs.iter().map(|r| &r.log).collect();
            let d = max_pairwise_deviation(&logs);
            out.push(Check::new(
                "pairwise e1 deviation across mu within tolerance",
                d <= p.number("pair_tol"),
                format!("max deviation {d:.4} of |e1(0)|"),
            ));
        }
        "figC_constraints" => {
            let v = runs.iter().map(|r| r.summary.metrics.max_violation).fold(0.0, f64::max);
            out.push(Check::new("hard limits violated by at most 1e-6", v <= 1e-6, format!("max violation {v:.2e}")));
            let from = p.number("duration") - 2.0 * PI;
            let peaks: Vec<f64> = runs.iter().map(|r| peak_after(&r.log, from)).collect();
            let ok = peaks.windows(2).all(|w| w[1] <= w[0]) && runs.iter().all(|r| r.summary.outcome == RunOutcome::Completed);
            out.push(Check::new(
                "peak |e1| over the final reference period non-increasing in N",
                ok,
                format!("peaks {}", fmt_list(&peaks)),
            ));
        }
        "surface_sweep" => {
            let s: Vec<&ScenarioMetrics> = runs.iter().filter_map(|r| r.summary.surface.as_ref()).collect();
            let find = |n: usize| s.iter().find(|m| m.horizon == n);
            if let (Some(a), Some(b)) = (find(2), find(30)) {
                out.push(Check::new(
                    "RMSE lower at N=30 than N=2",
                    b.surface_rmse < a.surface_rmse,
                    format!("{:.3e} vs {:.3e}", b.surface_rmse, a.surface_rmse),
                ));
                out.push(Check::new(
                    "traverse time lower at N=30 than N=2",
                    b.traverse_time < a.traverse_time,
                    format!("{:.2} s vs {:.2} s", b.traverse_time, a.traverse_time),
                ));
                out.push(Check::new(
                    "input smoothness lower at N=30 than N=2",
                    b.smoothness < a.smoothness,
                    format!("{:.3} vs {:.3}", b.smoothness, a.smoothness),
                ));
            }
            let done = s.iter().all(|m| m.completed);
            out.push(Check::new("every traverse completes", done, format!("{} runs", s.len())));
            let v = s.iter().map(|m| m.max_violation).fold(0.0, f64::max);
            out.push(Check::new("hard limits violated by at most 1e-6", v <= 1e-6, format!("max violation {v:.2e}")));
            out.push(budget_check(p, runs));
        }
        "solver_bench" => out.push(budget_check(p, runs)),
        _ => {}
    }
    out
}

fn budget_check(p: &Params, runs: &[RunData]) -> Check {
    let budget = p.number("budget_ms");
    let med: Vec<f64> = runs.iter().map(|r| r.summary.metrics.solve_time.median_ms).collect();
    Check::new(
        "median warm-started solve time within the control period",
        med.iter().all(|&m| m < budget),
        format!("median ms {}", fmt_list(&med)),
    )
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

/// Reads every `metrics.json` below `dir`, sorted by experiment name.
pub fn collect_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "metrics.json") {
                found.push(serde_json::from_str::<ExperimentReport>(&fs::read_to_string(&path)?)?);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Empty("metrics directory"));
    }
    found.sort_by(|a, b| a.experiment.cmp(&b.experiment));
    Ok(found)
}

/// Consolidated tables across experiments, grouped by experiment name.
/// Writes `report.csv` and `report.txt` into `dir` and returns the text.
pub fn report(dir: &Path) -> Result<String> {
    let reports = collect_reports(dir)?;
    let mut text = String::new();
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record([
        "experiment", "run", "horizon", "mu", "outcome", "rmse_e1", "peak_e1", "final_e1", "t_half_e1", "max_violation",
        "median_solve_ms", "surface_rmse", "traverse_time", "smoothness",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut groups: BTreeMap<&str, Vec<&ExperimentReport>> = BTreeMap::new();
    for r in &reports {
        groups.entry(&r.experiment).or_default().push(r);
    }
    for (name, group) in groups {
        for rep in group {
            let _ = writeln!(text, "== {name} (seed {}) {}", rep.seed, if rep.pass { "PASS" } else { "FAIL" });
            let surface = rep.runs.iter().any(|r| r.surface.is_some());
            if surface {
                let _ = writeln!(
                    text,
                    "{:>4} {:>12} {:>10} {:>12} {:>11} {:>10}",
                    "N", "rmse [m]", "time [s]", "smoothness", "violation", "median ms"
                );
            } else {
                let _ = writeln!(
                    text,
                    "{:<12} {:>4} {:>9} {:>9} {:>9} {:>8} {:>10} {:>10}  outcome",
                    "run", "N", "rmse e1", "peak e1", "final e1", "t_half", "violation", "median ms"
                );
            }
            for r in &rep.runs {
                let m = &r.metrics;
                let s = r.surface.as_ref();
                w.write_record([
                    name.to_string(),
                    r.label.clone(),
                    r.horizon.to_string(),
                    opt(r.mu),
                    outcome_text(&r.outcome),
                    m.rmse[0].to_string(),
                    m.peak[0].to_string(),
                    m.final_abs[0].to_string(),
                    opt(m.time_to_half[0]),
                    m.max_violation.to_string(),
                    m.solve_time.median_ms.to_string(),
                    opt(s.map(|s| s.surface_rmse)),
                    opt(s.map(|s| s.traverse_time)),
                    opt(s.map(|s| s.smoothness)),
                ])?;
                if let Some(s) = s {
                    let _ = writeln!(
                        text,
                        "{:>4} {:>12.4e} {:>10.2} {:>12.4} {:>11.2e} {:>10.3}",
                        r.horizon, s.surface_rmse, s.traverse_time, s.smoothness, s.max_violation, s.solve_time.median_ms
                    );
                } else {
                    let th = m.time_to_half[0].map_or("-".to_string(), |t| format!("{t:.2}"));
                    let _ = writeln!(
                        text,
                        "{:<12} {:>4} {:>9.4} {:>9.4} {:>9.4} {:>8} {:>10.2e} {:>10.3}  {}",
                        r.label,
                        r.horizon,
                        m.rmse[0],
                        m.peak[0],
                        m.final_abs[0],
                        th,
                        m.max_violation,
                        m.solve_time.median_ms,
                        outcome_text(&r.outcome)
                    );
                }
            }
            for c in &rep.checks {
                let _ = writeln!(text, "  [{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            text.push('\n');
        }
    }
    w.flush()?;
    fs::write(dir.join("report.txt"), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_is_declared() {
        for n in NAMES {
            assert!(declared(n).is_ok(), "{n}");
            assert!(describe(n).is_some(), "{n}");
        }
        assert!(matches!(declared("nope"), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn overrides_keep_shape() {
        let mut p = declared("figB_horizons").unwrap();
        p.set("mu", "2e-4").unwrap();
        assert_eq!(p.number("mu"), 2e-4);
        assert_eq!(p.get("mu").unwrap().origin, Origin::Chosen);
        p.set("horizons", "2,5").unwrap();
        assert_eq!(p.values("horizons"), vec![2.0, 5.0]);
        assert!(matches!(p.set("bogus", "1"), Err(Error::InvalidOverride { .. })));
        assert!(matches!(p.set("mu", "abc"), Err(Error::InvalidOverride { .. })));
        assert!(matches!(p.set("mu", "inf"), Err(Error::InvalidOverride { .. })));
    }

    #[test]
    fn fractional_horizon_rejected() {
        let spec = ExperimentSpec::new("figB_horizons", "unused").with_override("horizons", "2.5");
        assert!(matches!(execute_experiment(&spec), Err(Error::InvalidOverride { .. })));
    }
}
