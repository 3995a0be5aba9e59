//! Receding-horizon closed loop: solve, apply the first input, step the plant.
//!
//! The controller always plans with the nominal model. A lagged plant adds
//! the first-order actuator filter of [`crate::model::step_plant`], which the
//! controller never observes.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{step_nominal, step_plant, ActuatorLag, ControlInput, State};
use crate::ocp::{assemble, DecisionTrajectory, OcpSpec};
use crate::solver::{warm_start_shift, SolveResult, SolveStatus, Solver, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlantModel {
    Nominal,
    Lagged { alpha_internal: f64 },
}

/// Aborts a run when `‖e‖∞ > error_factor · max(‖e(0)‖∞, error_floor)`, when
/// any state entry leaves `[-state_limit, state_limit]` or becomes
/// non-finite, or when the optional oscillation criterion fires.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceGuard {
    pub error_factor: f64,
    pub error_floor: f64,
    pub state_limit: f64,
    pub oscillation: Option<OscillationGuard>,
}

/// Sustained large-amplitude oscillation: within any trailing `window`, some
/// error channel flips sign at least `min_flips` times, counting only samples
/// with `|e_i| > amplitude_fraction · max(‖e(0)‖∞, error_floor)`.
///
/// A kinematically bounded limit cycle never reaches the growth threshold, so
/// this is what catches a loop that has lost asymptotic stability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillationGuard {
    pub window: f64,
    pub min_flips: usize,
    pub amplitude_fraction: f64,
}

impl Default for OscillationGuard {
    fn default() -> Self {
        OscillationGuard {
            window: 1.0,
            min_flips: 4,
            amplitude_fraction: 0.1,
        }
    }
}

impl Default for DivergenceGuard {
    fn default() -> Self {
        DivergenceGuard {
            error_factor: 10.0,
            error_floor: 1e-2,
            state_limit: 1e6,
            oscillation: Some(OscillationGuard::default()),
        }
    }
}

/// Running state of the oscillation criterion.
#[derive(Clone, Debug)]
pub struct OscillationMonitor {
    cfg: OscillationGuard,
    threshold: f64,
    last_sign: Vec<f64>,
    flips: Vec<std::collections::VecDeque<f64>>,
}

impl OscillationMonitor {
    pub fn new(cfg: OscillationGuard, channels: usize, scale: f64) -> Self {
        OscillationMonitor {
            cfg,
            threshold: cfg.amplitude_fraction * scale,
            last_sign: vec![0.0; channels],
            flips: vec![Default::default(); channels],
        }
    }

    /// Feeds one sample; returns a reason when the criterion fires.
    pub fn observe(&mut self, t: f64, e: &[f64]) -> Option<String> {
        for (i, &v) in e.iter().enumerate() {
            let q = &mut self.flips[i];
            while q.front().is_some_and(|&t0| t0 < t - self.cfg.window) {
                q.pop_front();
            }
            if v.abs() <= self.threshold {
                continue;
            }
            let s = v.signum();
            if self.last_sign[i] != 0.0 && s != self.last_sign[i] {
                q.push_back(t);
            }
            self.last_sign[i] = s;
            if q.len() >= self.cfg.min_flips {
                return Some(format!(
                    "task error {i} flipped sign {} times within {:.2} s above {:.3e}",
                    q.len(),
                    self.cfg.window,
                    self.threshold
                ));
            }
        }
        None
    }
}

impl DivergenceGuard {
    fn threshold(&self, e0: f64) -> f64 {
        self.error_factor * e0.max(self.error_floor)
    }

    pub fn monitor(&self, channels: usize, e0: f64) -> Option<OscillationMonitor> {
        self.oscillation
            .map(|o| OscillationMonitor::new(o, channels, e0.max(self.error_floor)))
    }

    /// Reason for tripping, if any.
    pub fn check(&self, x: &DVector<f64>, err_norm: f64, e0: f64) -> Option<String> {
        if x.iter().any(|v| !v.is_finite()) {
            return Some("non-finite state".into());
        }
        if let Some(v) = x.iter().find(|v| v.abs() > self.state_limit) {
            return Some(format!("state entry {v:.3e} beyond limit"));
        }
        if !err_norm.is_finite() || err_norm > self.threshold(e0) {
            return Some(format!("task error {err_norm:.3e} exceeds {:.3e}", self.threshold(e0)));
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopConfig {
    pub duration: f64,
    pub control_dt: f64,
    pub plant: PlantModel,
    pub ocp: OcpSpec,
    pub solver: SolverConfig,
    pub initial: State,
    pub guard: DivergenceGuard,
    /// Keep every tick's optimal trajectory in the log.
    pub record_plans: bool,
}

impl ClosedLoopConfig {
    pub fn new(ocp: OcpSpec, initial: State, duration: f64) -> Self {
        ClosedLoopConfig {
            duration,
            control_dt: ocp.dynamics.dt,
            plant: PlantModel::Nominal,
            ocp,
            solver: SolverConfig::default(),
            initial,
            guard: DivergenceGuard::default(),
            record_plans: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid("duration", format!("must be finite and ≥ 0, got {}", self.duration)));
        }
        if !(self.control_dt > 0.0) {
            return Err(Error::invalid("control_dt", "must be positive"));
        }
        if (self.control_dt - self.ocp.dynamics.dt).abs() > 1e-12 {
            return Err(Error::invalid("control_dt", "must equal the prediction model step"));
        }
        if self.initial.n_q() != self.ocp.dynamics.n_q {
            return Err(Error::dims("initial state", self.ocp.dynamics.n_q, self.initial.n_q()));
        }
        self.ocp.validate()?;
        self.solver.validate()
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.control_dt + 1e-9).floor() as usize
    }
}

/// Simulated plant: the nominal integrator, optionally behind an actuator lag.
#[derive(Clone, Debug)]
pub struct Plant {
    state: State,
    lag: Option<ActuatorLag>,
    dt: f64,
}

impl Plant {
    pub fn new(model: PlantModel, initial: State, dt: f64) -> Result<Self> {
        let lag = match model {
            PlantModel::Nominal => None,
            PlantModel::Lagged { alpha_internal } => {
                let lag = ActuatorLag::new(alpha_internal, initial.n_q())?;
                if alpha_internal * dt >= 2.0 {
                    return Err(Error::invalid("alpha_internal", "lag filter unstable at this dt"));
                }
                Some(lag)
            }
        };
        Ok(Plant { state: initial, lag, dt })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Holds `input` for one control interval.
    pub fn apply(&mut self, input: &ControlInput) -> Result<&State> {
        match &self.lag {
            None => self.state = step_nominal(&self.state, input, self.dt)?,
            Some(lag) => {
                let (s, l) = step_plant(&self.state, lag, input, self.dt)?;
                self.state = s;
                self.lag = Some(l);
            }
        }
        Ok(&self.state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TickStatus {
    Converged,
    MaxIterations,
    Stalled,
    /// Hard rows could not be met; the partial solution was applied.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub status: TickStatus,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    pub cost: f64,
    pub solve_ms: f64,
}

/// Output of one controller evaluation.
#[derive(Clone, Debug)]
pub struct ControlStep {
    pub input: ControlInput,
    pub info: SolveInfo,
    pub plan: DecisionTrajectory,
}

/// MPC policy with warm starting across ticks.
pub struct MpcController {
    solver: Solver,
    prev: Option<DecisionTrajectory>,
}

impl MpcController {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        Ok(MpcController {
            solver: Solver::new(cfg)?,
            prev: None,
        })
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn control(&mut self, spec: &OcpSpec, state: &State) -> Result<ControlStep> {
        let program = assemble(spec, state)?;
        let guess = match &self.prev {
            Some(p) if self.solver.config().warm_start => {
                let g = warm_start_shift(p, &spec.dynamics);
                program.check_shape(&g).is_ok().then_some(g)
            }
            _ => None,
        };
        let t0 = Instant::now();
        let outcome = self.solver.solve(&program, guess.as_ref());
        let solve_ms = t0.elapsed().as_secs_f64() * 1e3;
        let (res, status): (SolveResult, TickStatus) = match outcome {
            Ok(r) => {
                let s = match r.status {
                    SolveStatus::Converged => TickStatus::Converged,
                    SolveStatus::MaxIterations => TickStatus::MaxIterations,
                    SolveStatus::Stalled => TickStatus::Stalled,
                };
                (r, s)
            }
            Err(Error::InfeasibleHardConstraints { partial, .. }) => (*partial, TickStatus::Infeasible),
            Err(e) => return Err(e),
        };
        // the applied input saturates at the bounds even when the solve did not converge
        let mut u0 = res.trajectory.inputs[0].clone();
        if let Some(b) = &spec.input_bounds {
            for i in 0..u0.len() {
                u0[i] = u0[i].clamp(b.lower[i], b.upper[i]);
            }
        }
        let input = ControlInput::new(u0);
        let info = SolveInfo {
            status,
            kkt: res.kkt_residual,
            violation: res.constraint_violation,
            iterations: res.iterations,
            cost: res.cost,
            solve_ms,
        };
        self.prev = Some(res.trajectory.clone());
        Ok(ControlStep {
            input,
            info,
            plan: res.trajectory,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub state: State,
    pub input: DVector<f64>,
    /// Stacked task errors at `state`.
    pub errors: DVector<f64>,
    /// All inequality values `h(x)` at `state`.
    pub constraints: Vec<f64>,
    /// Largest violation of the hard inequalities and input bounds.
    pub violation: f64,
    pub solve: SolveInfo,
    #[serde(skip)]
    pub plan: Option<DecisionTrajectory>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Completed,
    /// Divergence guard tripped at time `t`.
    Diverged { t: f64, reason: String },
    /// The solver failed outright at time `t`.
    SolverFailed { t: f64, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub ticks: Vec<TickRecord>,
    pub outcome: Option<RunOutcome>,
}

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.outcome, Some(RunOutcome::Diverged { .. }) | Some(RunOutcome::SolverFailed { .. }))
    }

    pub fn times(&self) -> Vec<f64> {
        self.ticks.iter().map(|r| r.t).collect()
    }

    /// One task-error component over the run.
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.ticks.iter().map(|r| r.errors[i]).collect()
    }
}

/// Runs the loop for `cfg.duration`, or until the guard trips or the solver
/// fails. Both are reported in the returned log's outcome; only invalid
/// configurations are errors.
pub fn run_closed_loop(cfg: &ClosedLoopConfig) -> Result<RunLog> {
    cfg.validate()?;
    let mut plant = Plant::new(cfg.plant, cfg.initial.clone(), cfg.control_dt)?;
    let mut ctrl = MpcController::new(cfg.solver.clone())?;
    let mut log = RunLog::default();
    let n = cfg.ticks();
    let errors_at = |s: &State| -> DVector<f64> {
        let x = s.to_flat();
        let parts: Vec<f64> = cfg.ocp.tasks.iter().flat_map(|t| t.eval_flat(x.as_slice()).iter().copied().collect::<Vec<_>>()).collect();
        DVector::from_vec(parts)
    };
    let first = errors_at(plant.state());
    let e0 = first.amax();
    let mut monitor = cfg.guard.monitor(first.len(), e0);
    for k in 0..n {
        let state = plant.state().clone();
        let t = k as f64 * cfg.control_dt;
        let step = match ctrl.control(&cfg.ocp, &state) {
            Ok(s) => s,
            Err(e) => {
                log.outcome = Some(RunOutcome::SolverFailed { t, reason: e.to_string() });
                return Ok(log);
            }
        };
        let x = state.to_flat();
        log.ticks.push(TickRecord {
            t,
            errors: errors_at(&state),
            constraints: cfg.ocp.constraint_values(x.as_slice()),
            violation: cfg.ocp.hard_violation(x.as_slice(), step.input.qddot_cmd.as_slice()),
            input: step.input.qddot_cmd.clone(),
            solve: step.info,
            plan: cfg.record_plans.then_some(step.plan),
            state,
        });
        let next = plant.apply(&step.input)?.clone();
        let en = errors_at(&next);
        let tripped = cfg
            .guard
            .check(&next.to_flat(), en.amax(), e0)
            .or_else(|| monitor.as_mut().and_then(|m| m.observe(next.t, en.as_slice())));
        if let Some(reason) = tripped {
            log.outcome = Some(RunOutcome::Diverged { t: next.t, reason });
            return Ok(log);
        }
    }
    log.outcome = Some(RunOutcome::Completed);
    Ok(log)
}

/// `sqrt(mean(x²))`.
pub fn rmse(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    Ok((samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt())
}

/// First time at which `|e(t)| ≤ fraction·|e(0)|`.
pub fn time_to_fraction(times: &[f64], values: &[f64], fraction: f64) -> Option<f64> {
    let e0 = values.first()?.abs();
    times
        .iter()
        .zip(values)
        .find(|(_, v)| v.abs() <= fraction * e0)
        .map(|(t, _)| *t)
}

/// Exponential rate `λ` from a least-squares fit of `ln|e| = a − λt`.
/// Samples with `e = 0` are skipped.
pub fn decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(t, v)| (*t, v.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Empty("nonzero samples for decay fit"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("times", "need at least two distinct sample times"));
    }
    Ok(-sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
    pub total_ms: f64,
}

pub fn solve_time_stats(ms: &[f64]) -> Result<SolveTimeStats> {
    if ms.is_empty() {
        return Err(Error::Empty("solve times"));
    }
    let mut sorted = ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let total: f64 = sorted.iter().sum();
    Ok(SolveTimeStats {
        mean_ms: total / n as f64,
        median_ms: median,
        max_ms: sorted[n - 1],
        total_ms: total,
    })
}

/// `Σ_k ‖u_{k+1} − u_k‖²` over the applied inputs.
pub fn smoothness(inputs: &[DVector<f64>]) -> f64 {
    inputs.windows(2).map(|w| (&w[1] - &w[0]).norm_squared()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub completed: bool,
    pub rmse: Vec<f64>,
    pub peak: Vec<f64>,
    pub final_abs: Vec<f64>,
    /// Time to reach half of each channel's initial magnitude.
    pub time_to_half: Vec<Option<f64>>,
    pub max_violation: f64,
    pub smoothness: f64,
    pub solve_time: SolveTimeStats,
    pub max_iterations: usize,
    pub unconverged_ticks: usize,
}

pub fn metrics(log: &RunLog) -> Result<Metrics> {
    if log.is_empty() {
        return Err(Error::Empty("run log"));
    }
    let m = log.ticks[0].errors.len();
    let times = log.times();
    let mut out = Metrics {
        ticks: log.len(),
        completed: matches!(log.outcome, Some(RunOutcome::Completed)),
        rmse: Vec::with_capacity(m),
        peak: Vec::with_capacity(m),
        final_abs: Vec::with_capacity(m),
        time_to_half: Vec::with_capacity(m),
        max_violation: log.ticks.iter().map(|r| r.violation).fold(0.0, f64::max),
        smoothness: smoothness(&log.ticks.iter().map(|r| r.input.clone()).collect::<Vec<_>>()),
        solve_time: solve_time_stats(&log.ticks.iter().map(|r| r.solve.solve_ms).collect::<Vec<_>>())?,
        max_iterations: log.ticks.iter().map(|r| r.solve.iterations).max().unwrap_or(0),
        unconverged_ticks: log.ticks.iter().filter(|r| r.solve.status != TickStatus::Converged).count(),
    };
    for i in 0..m {
        let c = log.channel(i);
        out.rmse.push(rmse(&c)?);
        out.peak.push(c.iter().map(|v| v.abs()).fold(0.0, f64::max));
        out.final_abs.push(c[c.len() - 1].abs());
        out.time_to_half.push(time_to_fraction(&times, &c, 0.5));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub pass: bool,
    /// `max_t |e(t) − e(0)e^{−αt}|` over the scale `|e(0)|`.
    pub max_deviation: f64,
}

/// Compares every error channel against its ideal exponential
/// `eᵢ(0)e^{−αt}`, with deviations measured against `‖e(0)‖∞`.
pub fn decay_envelope_check(log: &RunLog, alpha: f64, tol_fraction: f64) -> EnvelopeCheck {
    let Some(first) = log.ticks.first() else {
        return EnvelopeCheck {
            pass: true,
            max_deviation: 0.0,
        };
    };
    let scale = first.errors.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
    let times = log.times();
    let mut dev: f64 = 0.0;
    for ch in 0..first.errors.len() {
        let values = log.channel(ch);
        let e0 = values[0];
        for (t, v) in times.iter().zip(&values) {
            dev = dev.max((v - e0 * (-alpha * (t - times[0])).exp()).abs());
        }
    }
    let rel = relative(dev, scale);
    EnvelopeCheck {
        pass: rel <= tol_fraction,
        max_deviation: rel,
    }
}

fn relative(dev: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        dev / scale
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Trace-level form of [`decay_envelope_check`].
pub fn envelope_deviation(times: &[f64], values: &[f64], alpha: f64, tol_fraction: f64) -> EnvelopeCheck {
    let Some(&e0) = values.first() else {
        return EnvelopeCheck {
            pass: true,
            max_deviation: 0.0,
        };
    };
    let t0 = times[0];
    let scale = e0.abs();
    let dev = times
        .iter()
        .zip(values)
        .map(|(t, v)| (v - e0 * (-alpha * (t - t0)).exp()).abs())
        .fold(0.0, f64::max);
    let rel = relative(dev, scale);
    EnvelopeCheck {
        pass: rel <= tol_fraction,
        max_deviation: rel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.0; 10]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[-0.3; 7]).unwrap(), 0.3, max_relative = 1e-15);
        assert!(rmse(&[]).is_err());
    }

    #[test]
    fn decay_rate_of_exponential() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|t| 0.8 * (-2.0 * t).exp()).collect();
        let rate = decay_rate(&t, &e).unwrap();
        assert!((rate - 2.0).abs() < 0.02);
    }

    #[test]
    fn envelope_examples() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let exact: Vec<f64> = t.iter().map(|t| -1.3 * (-2.0 * t).exp()).collect();
        let c = envelope_deviation(&t, &exact, 2.0, 0.05);
        assert!(c.pass);
        assert_eq!(c.max_deviation, 0.0);

        // e(0.5)/e(0) = e^{-1} ≈ 0.37
        assert!((exact[50] / exact[0] - 0.37).abs() < 0.005);

        let flat = vec![1.0; 100];
        assert!(!envelope_deviation(&t, &flat, 2.0, 0.05).pass);
    }

    #[test]
    fn time_to_fraction_and_stats() {
        let t = [0.0, 0.1, 0.2, 0.3];
        let e = [2.0, 1.5, 0.9, 0.1];
        assert_eq!(time_to_fraction(&t, &e, 0.5), Some(0.2));
        assert_eq!(time_to_fraction(&t, &e, 0.01), None);
        let s = solve_time_stats(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.max_ms, 10.0);
    }

    #[test]
    fn smoothness_sums_squared_increments() {
        let u = vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![1.0, 3.0])];
        assert_eq!(smoothness(&u), 1.0 + 4.0);
    }

    #[test]
    fn guard_trips_on_growth_and_nonfinite() {
        let g = DivergenceGuard::default();
        let x = DVector::from_vec(vec![0.0; 7]);
        assert!(g.check(&x, 1.0, 1.0).is_none());
        assert!(g.check(&x, 10.5, 1.0).is_some());
        assert!(g.check(&DVector::from_vec(vec![f64::NAN]), 0.0, 1.0).is_some());
        assert!(g.check(&DVector::from_vec(vec![2e6]), 0.0, 1.0).is_some());
    }

    #[test]
    fn oscillation_monitor_counts_large_flips_only() {
        let mut m = OscillationMonitor::new(OscillationGuard::default(), 1, 1.0);
        // small chatter around zero never counts
        for k in 0..200 {
            let v = if k % 2 == 0 { 0.05 } else { -0.05 };
            assert!(m.observe(k as f64 * 0.01, &[v]).is_none());
        }
        let mut m = OscillationMonitor::new(OscillationGuard::default(), 1, 1.0);
        let mut fired = None;
        for k in 0..200 {
            let t = k as f64 * 0.01;
            if let Some(r) = m.observe(t, &[(2.0 * std::f64::consts::PI * 3.0 * t).sin()]) {
                fired = Some((t, r));
                break;
            }
        }
        let (t, _) = fired.expect("3 Hz oscillation should trip");
        assert!(t < 1.0);

        // slow oscillation: one flip per second stays below 4 per window
        let mut m = OscillationMonitor::new(OscillationGuard::default(), 1, 1.0);
        for k in 0..1000 {
            let t = k as f64 * 0.01;
            assert!(m.observe(t, &[(std::f64::consts::PI * t).cos()]).is_none());
        }
    }
}
