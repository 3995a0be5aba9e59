//! Planar surface following over an unknown height profile.
//!
//! The arm traverses along world `x` while a look-ahead range sensor samples
//! the hidden profile `z = g(x)`. Each tick the samples feed the quadratic
//! surface estimator, the task functions are rebuilt from the fitted model,
//! and one MPC step is taken. Only [`SensorRig`] and the logging side of the
//! loop ever evaluate the profile; [`build_tasks`] sees the fitted model.
//!
//! Task rows, in stacking order:
//!
//! | row | error                                   | weight        |
//! |-----|-----------------------------------------|---------------|
//! | 0   | `s_a(p_x) − p_z` at the tool tip         | `w_surface`   |
//! | 1   | `θ_tool − θ_des`                         | `w_orientation` |
//! | 2   | tip velocity along the tool tangent − `v_des` | `w_velocity` |
//!
//! The out-of-plane fixed-reference task is satisfied identically in the
//! plane, and sensor-facing orientation reduces to row 1.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::estimator::{MeasurementBuffer, SurfaceModel, N_COEFFS};
use crate::model::{DiscreteDynamics, PlanarArm, State};
use crate::ocp::{ConstraintSpec, InputBound, OcpSpec, StageCostSpec};
use crate::simloop::{solve_time_stats, MpcController, Plant, PlantModel, RunLog, RunOutcome, SolveTimeStats, TickRecord};
use crate::solver::SolverConfig;
use crate::task::{GainMatrix, Inequality, JointHold, JointLimits, SmoothFn, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Decay rate shared by every task and barrier row, 1/s.
    pub alpha: f64,
    pub w_surface: f64,
    /// Fixed-reference weight; the task is identically zero in the plane.
    pub w_reference: f64,
    pub w_orientation: f64,
    pub w_velocity: f64,
    pub w_range: f64,
    pub mu: f64,
    pub w_r: f64,
    pub v_des: f64,
    /// Tool-tip `x` at the start of the traverse.
    pub x_start: f64,
    /// Traverse ends when the tool tip passes this `x`.
    pub x_end: f64,
    pub l_range: f64,
    /// Offset of the two probe frames along the tool tangent.
    pub probe_offset: f64,
    pub look_ahead: f64,
    pub noise_sigma: f64,
    pub buffer_len: usize,
    pub warmup: f64,
    pub tool_angle: f64,
    pub q_lower: [f64; 3],
    pub q_upper: [f64; 3],
    pub qdot_limit: f64,
    pub qddot_limit: f64,
    pub control_dt: f64,
    /// Simulated-time cap on a single run.
    pub max_duration: f64,
    /// Simulated robot; the default lag stands in for the drive dynamics a
    /// real arm adds between commanded and actual acceleration.
    pub plant: PlantModel,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            alpha: 20.0,
            w_surface: 1e2,
            w_reference: 1e2,
            w_orientation: 1e2,
            w_velocity: 1e-2,
            w_range: 1e2,
            mu: 1e-6,
            w_r: 1.0,
            v_des: 0.15,
            x_start: 0.7,
            x_end: 1.9,
            l_range: 0.015,
            probe_offset: 0.05,
            look_ahead: 0.15,
            noise_sigma: 0.0,
            buffer_len: 100,
            warmup: 0.3,
            tool_angle: -FRAC_PI_2,
            q_lower: [-1.0, 0.0, -3.0],
            q_upper: [2.5, 1.5, -0.5],
            qdot_limit: 1.0,
            qddot_limit: 6.0,
            control_dt: 0.01,
            max_duration: 30.0,
            plant: PlantModel::Lagged { alpha_internal: 20.0 },
            solver: SolverConfig {
                constraint_tol: 1e-8,
                ..SolverConfig::default()
            },
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("w_surface", self.w_surface),
            ("w_reference", self.w_reference),
            ("w_orientation", self.w_orientation),
            ("w_velocity", self.w_velocity),
            ("w_range", self.w_range),
            ("mu", self.mu),
            ("w_r", self.w_r),
            ("v_des", self.v_des),
            ("l_range", self.l_range),
            ("probe_offset", self.probe_offset),
            ("look_ahead", self.look_ahead),
            ("qdot_limit", self.qdot_limit),
            ("qddot_limit", self.qddot_limit),
            ("control_dt", self.control_dt),
            ("max_duration", self.max_duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be non-negative"));
        }
        if !(self.warmup >= 0.0) {
            return Err(Error::invalid("warmup", "must be non-negative"));
        }
        if self.x_end <= self.x_start {
            return Err(Error::invalid("x_end", "must exceed x_start"));
        }
        if self.buffer_len < N_COEFFS {
            return Err(Error::invalid("buffer_len", format!("must hold at least {N_COEFFS} samples")));
        }
        for i in 0..3 {
            if !(self.q_lower[i] < self.q_upper[i]) {
                return Err(Error::invalid("q_lower", format!("joint {} limits out of order", i + 1)));
            }
        }
        self.solver.validate()
    }

    pub fn warmup_ticks(&self) -> usize {
        (self.warmup / self.control_dt).round() as usize
    }
}

/// Source of ground-truth heights. Only the simulator side of the loop holds
/// one.
pub trait Terrain: Send + Sync {
    fn height(&self, x: f64) -> f64;
}

/// Built-in continuously differentiable profiles. Every profile is flat
/// outside its feature region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GroundTruthProfile {
    Flat { z0: f64 },
    /// `z0 + A sin²(π(x − start)/width)` on `[start, start + width]`.
    SineBump { z0: f64, start: f64, width: f64, amplitude: f64 },
    /// Smoothstep rise of `rise` over `[ramp_start, ramp_start + ramp_width]`,
    /// followed by a sine bump on the raised level.
    RampBump {
        z0: f64,
        ramp_start: f64,
        ramp_width: f64,
        rise: f64,
        bump_start: f64,
        bump_width: f64,
        amplitude: f64,
    },
    /// Cubic Hermite interpolation through `(x, z, dz/dx)` knots with
    /// strictly increasing `x`; constant beyond the end knots.
    Hermite { knots: Vec<[f64; 3]> },
}

fn sine_bump(x: f64, start: f64, width: f64, amplitude: f64) -> f64 {
    if x <= start || x >= start + width {
        return 0.0;
    }
    let s = (std::f64::consts::PI * (x - start) / width).sin();
    amplitude * s * s
}

fn smoothstep(x: f64, start: f64, width: f64) -> f64 {
    let s = ((x - start) / width).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl GroundTruthProfile {
    pub fn sine_bump() -> Self {
        GroundTruthProfile::SineBump {
            z0: -0.3,
            start: 1.05,
            width: 0.55,
            amplitude: 0.05,
        }
    }

    pub fn ramp_bump() -> Self {
        GroundTruthProfile::RampBump {
            z0: -0.3,
            ramp_start: 1.0,
            ramp_width: 0.3,
            rise: 0.04,
            bump_start: 1.45,
            bump_width: 0.25,
            amplitude: 0.02,
        }
    }

    pub fn piecewise_smooth() -> Self {
        let z0 = -0.3;
        GroundTruthProfile::Hermite {
            knots: vec![
                [1.0, z0, 0.0],
                [1.2, z0 + 0.03, 0.0],
                [1.45, z0 - 0.01, 0.0],
                [1.7, z0 + 0.02, 0.0],
                [1.9, z0, 0.0],
            ],
        }
    }

    pub fn flat() -> Self {
        GroundTruthProfile::Flat { z0: -0.3 }
    }

    /// Built-in profile by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "flat" => Some(Self::flat()),
            "sine_bump" => Some(Self::sine_bump()),
            "ramp_bump" => Some(Self::ramp_bump()),
            "piecewise_smooth" => Some(Self::piecewise_smooth()),
            _ => None,
        }
    }

    /// Hermite profile through `(x, z)` samples with monotone `x`; knot
    /// slopes are centred differences (one-sided at the ends).
    pub fn from_samples(samples: &[[f64; 2]]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("profile samples", "need at least two"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("profile samples", "must be finite"));
        }
        if samples.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::invalid("profile samples", "x must be strictly increasing"));
        }
        let n = samples.len();
        let knots = (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let slope = (samples[b][1] - samples[a][1]) / (samples[b][0] - samples[a][0]);
                [samples[i][0], samples[i][1], slope]
            })
            .collect();
        Ok(GroundTruthProfile::Hermite { knots })
    }

    /// Reads `x,z` rows (with header) from a CSV file.
    pub fn from_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: f64,
            z: f64,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut samples = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            samples.push([row.x, row.z]);
        }
        Self::from_samples(&samples)
    }

    pub fn name(&self) -> &'static str {
        match self {
            GroundTruthProfile::Flat { .. } => "flat",
            GroundTruthProfile::SineBump { .. } => "sine_bump",
            GroundTruthProfile::RampBump { .. } => "ramp_bump",
            GroundTruthProfile::Hermite { .. } => "hermite",
        }
    }

    /// Height at the traverse start, which every built-in keeps flat.
    pub fn base_height(&self, x: f64) -> f64 {
        self.height(x)
    }
}

impl Terrain for GroundTruthProfile {
    fn height(&self, x: f64) -> f64 {
        match self {
            GroundTruthProfile::Flat { z0 } => *z0,
            GroundTruthProfile::SineBump {
                z0,
                start,
                width,
                amplitude,
            } => z0 + sine_bump(x, *start, *width, *amplitude),
            GroundTruthProfile::RampBump {
                z0,
                ramp_start,
                ramp_width,
                rise,
                bump_start,
                bump_width,
                amplitude,
            } => z0 + rise * smoothstep(x, *ramp_start, *ramp_width) + sine_bump(x, *bump_start, *bump_width, *amplitude),
            GroundTruthProfile::Hermite { knots } => hermite(knots, x),
        }
    }
}

fn hermite(knots: &[[f64; 3]], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first[0] {
        return first[1];
    }
    if x >= last[0] {
        return last[1];
    }
    let i = knots.partition_point(|k| k[0] <= x) - 1;
    let [x0, z0, m0] = knots[i];
    let [x1, z1, m1] = knots[i + 1];
    let h = x1 - x0;
    let s = (x - x0) / h;
    let (s2, s3) = (s * s, s * s * s);
    (2.0 * s3 - 3.0 * s2 + 1.0) * z0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * z1 + (s3 - s2) * h * m1
}

/// Frames on the end effector and the look-ahead range sensor.
///
/// `tf1` is the tool tip (the end effector); `tf2` and `tf3` sit at
/// `±probe_offset` along the tool tangent `(−sin θ, cos θ)`.
#[derive(Clone, Debug)]
pub struct SensorRig {
    pub probe_offset: f64,
    pub look_ahead: f64,
    pub noise_sigma: f64,
    rng: ChaCha8Rng,
}

impl SensorRig {
    pub fn new(probe_offset: f64, look_ahead: f64, noise_sigma: f64, seed: u64) -> Self {
        SensorRig {
            probe_offset,
            look_ahead,
            noise_sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// World positions of `tf1`, `tf2`, `tf3`.
    pub fn frames<S: Real>(&self, q: &[S]) -> [[S; 2]; 3] {
        tool_frames(q, self.probe_offset)
    }

    /// One range sample `(x, 0, z)` at the look-ahead point.
    pub fn sample(&mut self, terrain: &dyn Terrain, q: &[f64]) -> [f64; 3] {
        self.sample_at(terrain, q, self.look_ahead)
    }

    /// One range sample at `reach` along the tool tangent from the tip.
    pub fn sample_at(&mut self, terrain: &dyn Terrain, q: &[f64], reach: f64) -> [f64; 3] {
        let theta = PlanarArm::tool_angle(q);
        let tip = PlanarArm::forward_kinematics(q);
        let x = tip[0] - theta.sin() * reach;
        let mut z = terrain.height(x);
        if self.noise_sigma > 0.0 {
            z += Normal::new(0.0, self.noise_sigma).expect("sigma is finite and positive").sample(&mut self.rng);
        }
        [x, 0.0, z]
    }
}

fn tool_frames<S: Real>(q: &[S], d: f64) -> [[S; 2]; 3] {
    let tip = PlanarArm::forward_kinematics(q);
    let theta = PlanarArm::tool_angle(q);
    let (tx, tz) = (-theta.sin(), theta.cos());
    [
        tip,
        [tip[0] + tx * d, tip[1] + tz * d],
        [tip[0] - tx * d, tip[1] - tz * d],
    ]
}

/// Task rows of the scenario against a fitted surface.
#[derive(Clone, Debug)]
pub struct SurfaceTasks {
    pub model: SurfaceModel,
    pub tool_angle: f64,
    pub v_des: f64,
}

impl SmoothFn for SurfaceTasks {
    fn dim(&self) -> usize {
        3
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        let q = &x[..3];
        let tip = PlanarArm::forward_kinematics(q);
        let theta = PlanarArm::tool_angle(q);
        let (a, b) = (x[1], x[1] + x[2]);
        let (qd1, qd2, qd3) = (x[3], x[4], x[4] + x[5]);
        let vx = qd1 - a.sin() * qd2 - b.sin() * qd3;
        let vz = a.cos() * qd2 + b.cos() * qd3;
        let v_t = vz * theta.cos() - vx * theta.sin();
        out[0] = self.model.predict(tip[0], S::zero()) - tip[1];
        out[1] = theta - self.tool_angle;
        out[2] = v_t - self.v_des;
    }
}

/// Range rows `l ∓ (s_a − p_z) ≥ 0` at `tf2` and `tf3`.
#[derive(Clone, Debug)]
pub struct RangeRows {
    pub model: SurfaceModel,
    pub probe_offset: f64,
    pub l_range: f64,
}

impl SmoothFn for RangeRows {
    fn dim(&self) -> usize {
        4
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        let f = tool_frames(&x[..3], self.probe_offset);
        for (i, p) in f[1..].iter().enumerate() {
            let gap = self.model.predict(p[0], S::zero()) - p[1];
            out[2 * i] = (-gap) + self.l_range;
            out[2 * i + 1] = gap + self.l_range;
        }
    }
}

/// Task, constraint and bound set for one tick, built from the fitted model
/// only.
pub fn build_tasks(cfg: &ScenarioConfig, model: &SurfaceModel) -> Result<(Vec<Task>, Vec<ConstraintSpec>, InputBound)> {
    let tasks = vec![Task::new(
        "surface",
        SurfaceTasks {
            model: *model,
            tool_angle: cfg.tool_angle,
            v_des: cfg.v_des,
        },
    )];
    let range = ConstraintSpec::soft(
        Inequality::new(
            "range",
            RangeRows {
                model: *model,
                probe_offset: cfg.probe_offset,
                l_range: cfg.l_range,
            },
        ),
        Some(GainMatrix::uniform(cfg.alpha, 4)?),
        vec![cfg.w_range; 4],
    );
    let constraints = vec![range, joint_limits(cfg)?];
    Ok((tasks, constraints, InputBound::symmetric(cfg.qddot_limit, 3)?))
}

fn joint_limits(cfg: &ScenarioConfig) -> Result<ConstraintSpec> {
    let lim = JointLimits::new(
        3,
        Some((cfg.q_lower.to_vec(), cfg.q_upper.to_vec())),
        Some((vec![-cfg.qdot_limit; 3], vec![cfg.qdot_limit; 3])),
    )?;
    Ok(ConstraintSpec::hard(
        Inequality::new("joint limits", lim),
        Some(GainMatrix::uniform(cfg.alpha, 12)?),
    ))
}

fn cost(cfg: &ScenarioConfig) -> Result<StageCostSpec> {
    Ok(StageCostSpec::Decay {
        w_s: DMatrix::from_diagonal(&DVector::from_vec(vec![cfg.w_surface, cfg.w_orientation, cfg.w_velocity])),
        k_e: GainMatrix::uniform(cfg.alpha, 3)?,
        mu: cfg.mu,
        w_r: DMatrix::identity(3, 3) * cfg.w_r,
    })
}

/// OCP for one tick of the traverse.
pub fn scenario_ocp(cfg: &ScenarioConfig, model: &SurfaceModel, horizon: usize) -> Result<OcpSpec> {
    let (tasks, constraints, bounds) = build_tasks(cfg, model)?;
    let dynamics = DiscreteDynamics::euler(3, cfg.control_dt)?;
    let mut spec = OcpSpec::new(horizon, dynamics, tasks, cost(cfg)?).with_input_bounds(bounds);
    for c in constraints {
        spec = spec.with_constraint(c);
    }
    Ok(spec)
}

fn hold_ocp(cfg: &ScenarioConfig, q: &[f64], horizon: usize) -> Result<OcpSpec> {
    let dynamics = DiscreteDynamics::euler(3, cfg.control_dt)?;
    let cost = StageCostSpec::Decay {
        w_s: DMatrix::identity(3, 3),
        k_e: GainMatrix::uniform(cfg.alpha, 3)?,
        mu: cfg.mu,
        w_r: DMatrix::identity(3, 3) * cfg.w_r,
    };
    let hold = Task::new("hold", JointHold { q_ref: q.to_vec() });
    Ok(OcpSpec::new(horizon, dynamics, vec![hold], cost)
        .with_input_bounds(InputBound::symmetric(cfg.qddot_limit, 3)?)
        .with_constraint(joint_limits(cfg)?))
}

/// Joint configuration with the tool tip at `(x, z)` and tool angle `θ`,
/// elbow up.
pub fn initial_configuration(x: f64, z: f64, theta: f64) -> Result<[f64; 3]> {
    let s = z - theta.sin();
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::invalid("start height", "out of reach"));
    }
    let q2 = s.asin();
    let q3 = theta - q2;
    let q1 = x - q2.cos() - theta.cos();
    Ok([q1, q2, q3])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Warmup,
    Traverse,
}

/// Per-tick quantities only the simulator side can know.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTick {
    pub phase: Phase,
    /// `g(p_x) − p_z` at the tool tip against ground truth.
    pub surf_err: f64,
    pub vel_err: f64,
    pub coeffs: [f64; N_COEFFS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub horizon: usize,
    pub completed: bool,
    pub surface_rmse: f64,
    pub velocity_rmse: f64,
    pub traverse_time: f64,
    /// `Σ‖u_{k+1} − u_k‖²` over the traverse.
    pub smoothness: f64,
    pub max_violation: f64,
    pub solve_time: SolveTimeStats,
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub log: RunLog,
    pub surface: Vec<SurfaceTick>,
    pub metrics: ScenarioMetrics,
}

/// Counts height queries; lets tests confirm who reads the ground truth.
pub struct CountingTerrain<T> {
    pub inner: T,
    calls: AtomicUsize,
}

impl<T> CountingTerrain<T> {
    pub fn new(inner: T) -> Self {
        CountingTerrain {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Terrain> Terrain for CountingTerrain<T> {
    fn height(&self, x: f64) -> f64 {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.height(x)
    }
}

/// Sensor reach during warm-up tick `k` of `ticks`: a sweep from the rear
/// probe to the look-ahead point, so the first fit spans the ground under the
/// tool.
fn warmup_reach(cfg: &ScenarioConfig, k: usize, ticks: usize) -> f64 {
    let s = if ticks > 1 { k as f64 / (ticks - 1) as f64 } else { 1.0 };
    -cfg.probe_offset + s * (cfg.look_ahead + cfg.probe_offset)
}

/// One traverse at horizon `n`: sense, fit, build tasks, solve, act.
///
/// The terrain is read once to place the tool at the start, then exactly
/// twice per tick: once for the sensor sample and once for the logged
/// ground-truth error. The controller never reads it.
pub fn run_scenario(cfg: &ScenarioConfig, terrain: &dyn Terrain, n: usize) -> Result<ScenarioRun> {
    cfg.validate()?;
    if n < 2 {
        return Err(Error::invalid("horizon", "surface runs need N ≥ 2"));
    }
    let z_start = terrain.height(cfg.x_start);
    let q0 = initial_configuration(cfg.x_start, z_start, cfg.tool_angle)?;
    let mut plant = Plant::new(cfg.plant, State::at_rest(&q0, 0.0), cfg.control_dt)?;
    let mut sensor = SensorRig::new(cfg.probe_offset, cfg.look_ahead, cfg.noise_sigma, cfg.seed);
    let mut buffer = MeasurementBuffer::new(cfg.buffer_len)?;
    let mut ctrl = MpcController::new(cfg.solver.clone())?;
    let hold = hold_ocp(cfg, &q0, n)?;
    let warmup = cfg.warmup_ticks();
    let max_ticks = (cfg.max_duration / cfg.control_dt).ceil() as usize;

    let mut log = RunLog::default();
    let mut surface = Vec::new();
    let mut model = SurfaceModel::new([z_start, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let mut traverse_start = None;
    let mut traverse_end = None;

    for k in 0..max_ticks {
        let state = plant.state().clone();
        let t = k as f64 * cfg.control_dt;
        let q = state.q.as_slice().to_vec();
        let phase = if k < warmup { Phase::Warmup } else { Phase::Traverse };
        let sample = match phase {
            Phase::Warmup => sensor.sample_at(terrain, &q, warmup_reach(cfg, k, warmup)),
            Phase::Traverse => sensor.sample(terrain, &q),
        };
        buffer.push(&[sample])?;
        if buffer.len() >= N_COEFFS {
            model = buffer.fit()?.model;
        }
        let spec = match phase {
            Phase::Warmup => hold.clone(),
            Phase::Traverse => {
                traverse_start.get_or_insert(t);
                scenario_ocp(cfg, &model, n)?
            }
        };
        let step = match ctrl.control(&spec, &state) {
            Ok(s) => s,
            Err(e) => {
                log.outcome = Some(RunOutcome::SolverFailed { t, reason: e.to_string() });
                break;
            }
        };
        let x = state.to_flat();
        let probe = SurfaceTasks {
            model,
            tool_angle: cfg.tool_angle,
            v_des: cfg.v_des,
        };
        let mut errors = [0.0; 3];
        probe.eval(x.as_slice(), &mut errors);
        let tip = PlanarArm::forward_kinematics(&q);
        surface.push(SurfaceTick {
            phase,
            surf_err: terrain.height(tip[0]) - tip[1],
            vel_err: errors[2],
            coeffs: model.a,
        });
        let scenario = scenario_ocp(cfg, &model, n)?;
        log.ticks.push(TickRecord {
            t,
            errors: DVector::from_row_slice(&errors),
            constraints: scenario.constraint_values(x.as_slice()),
            violation: scenario.hard_violation(x.as_slice(), step.input.qddot_cmd.as_slice()),
            input: step.input.qddot_cmd.clone(),
            solve: step.info,
            plan: None,
            state,
        });
        if phase == Phase::Traverse && tip[0] >= cfg.x_end {
            traverse_end = Some(t);
            log.outcome = Some(RunOutcome::Completed);
            break;
        }
        let next = plant.apply(&step.input)?;
        if !next.is_finite() {
            log.outcome = Some(RunOutcome::Diverged {
                t: next.t,
                reason: "non-finite plant state".into(),
            });
            break;
        }
    }
    if log.outcome.is_none() {
        let t = log.ticks.last().map_or(0.0, |r| r.t);
        log.outcome = Some(RunOutcome::Diverged {
            t,
            reason: format!("traverse unfinished after {} s", cfg.max_duration),
        });
    }
    let metrics = scenario_metrics(n, &log, &surface, traverse_start, traverse_end)?;
    Ok(ScenarioRun { log, surface, metrics })
}

fn scenario_metrics(
    n: usize,
    log: &RunLog,
    surface: &[SurfaceTick],
    start: Option<f64>,
    end: Option<f64>,
) -> Result<ScenarioMetrics> {
    let idx: Vec<usize> = (0..surface.len()).filter(|&i| surface[i].phase == Phase::Traverse).collect();
    if idx.is_empty() {
        return Err(Error::Empty("traverse ticks"));
    }
    let rms = |f: &dyn Fn(usize) -> f64| (idx.iter().map(|&i| f(i).powi(2)).sum::<f64>() / idx.len() as f64).sqrt();
    let smoothness = idx
        .windows(2)
        .map(|w| (&log.ticks[w[1]].input - &log.ticks[w[0]].input).norm_squared())
        .sum();
    let ms: Vec<f64> = idx.iter().map(|&i| log.ticks[i].solve.solve_ms).collect();
    Ok(ScenarioMetrics {
        horizon: n,
        completed: matches!(log.outcome, Some(RunOutcome::Completed)),
        surface_rmse: rms(&|i| surface[i].surf_err),
        velocity_rmse: rms(&|i| surface[i].vel_err),
        traverse_time: match (start, end) {
            (Some(s), Some(e)) => e - s,
            _ => f64::INFINITY,
        },
        smoothness,
        max_violation: log.ticks.iter().map(|r| r.violation).fold(0.0, f64::max),
        solve_time: solve_time_stats(&ms)?,
    })
}

/// One [`run_scenario`] per horizon, run concurrently; rows follow `ns`.
pub fn horizon_sweep(cfg: &ScenarioConfig, terrain: &dyn Terrain, ns: &[usize]) -> Result<Vec<ScenarioRun>> {
    if ns.is_empty() {
        return Err(Error::Empty("horizon list"));
    }
    if let Some(&bad) = ns.iter().find(|&&n| n < 2) {
        return Err(Error::invalid("horizon", format!("surface runs need N ≥ 2, got {bad}")));
    }
    ns.par_iter().map(|&n| run_scenario(cfg, terrain, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn on_surface_state(cfg: &ScenarioConfig, z: f64, v: f64) -> (State, SurfaceModel) {
        let q = initial_configuration(cfg.x_start, z, cfg.tool_angle).unwrap();
        // prismatic joint alone moves the tip along x at speed v
        let s = State::new(DVector::from_row_slice(&q), DVector::from_row_slice(&[v, 0.0, 0.0]), 0.0).unwrap();
        (s, SurfaceModel::new([z, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
    }

    #[test]
    fn residuals_vanish_on_surface_at_speed() {
        let cfg = ScenarioConfig::default();
        let (s, m) = on_surface_state(&cfg, -0.3, cfg.v_des);
        let (tasks, _, _) = build_tasks(&cfg, &m).unwrap();
        let e = tasks[0].eval(&s);
        assert!(e.amax() < 1e-12, "{e}");
    }

    #[test]
    fn tool_above_surface_gives_negative_error() {
        let cfg = ScenarioConfig::default();
        let (s, _) = on_surface_state(&cfg, -0.29, cfg.v_des);
        let m = SurfaceModel::new([-0.3, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (tasks, _, _) = build_tasks(&cfg, &m).unwrap();
        assert_abs_diff_eq!(tasks[0].eval(&s)[0], -0.01, epsilon = 1e-12);
    }

    #[test]
    fn range_row_violated_by_excess_gap() {
        let cfg = ScenarioConfig::default();
        let (s, _) = on_surface_state(&cfg, -0.3, 0.0);
        // surface 0.02 above tf2 and tf3 (tool vertical, probes level with the tip)
        let m = SurfaceModel::new([-0.28, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (_, cons, _) = build_tasks(&cfg, &m).unwrap();
        let h = cons[0].h.eval(&s);
        assert_abs_diff_eq!(h[0], -0.005, epsilon = 1e-12);
        assert_abs_diff_eq!(h[1], 0.035, epsilon = 1e-12);
    }

    #[test]
    fn profiles_are_c1() {
        let profiles = [
            GroundTruthProfile::sine_bump(),
            GroundTruthProfile::ramp_bump(),
            GroundTruthProfile::piecewise_smooth(),
        ];
        for p in profiles {
            let mut prev_slope = None;
            let h = 1e-6;
            let mut x = 0.5;
            while x < 2.2 {
                let slope = (p.height(x + h) - p.height(x - h)) / (2.0 * h);
                if let Some(s0) = prev_slope {
                    let ds: f64 = slope - s0;
                    assert!(ds.abs() < 0.05, "{} slope jump at {x}", p.name());
                }
                assert!(slope.abs() < 1.0);
                prev_slope = Some(slope);
                x += 1e-3;
            }
        }
    }

    #[test]
    fn hermite_from_samples_interpolates() {
        let p = GroundTruthProfile::from_samples(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(p.height(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.height(-3.0), 0.0, epsilon = 1e-15);
        assert!(GroundTruthProfile::from_samples(&[[0.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn sensor_looks_ahead_of_the_tip() {
        let cfg = ScenarioConfig::default();
        let q = initial_configuration(0.7, -0.3, cfg.tool_angle).unwrap();
        let mut rig = SensorRig::new(0.05, 0.15, 0.0, 1);
        let p = rig.sample(&GroundTruthProfile::flat(), &q);
        assert_abs_diff_eq!(p[0], 0.85, epsilon = 1e-12);
        assert_eq!(p[2], -0.3);
        let f = rig.frames(&q);
        assert_abs_diff_eq!(f[1][0] - f[0][0], 0.05, epsilon = 1e-12);
    }
}
