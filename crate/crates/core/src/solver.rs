//! Gauss-Newton SQP for the stage-wise programs built by [`crate::ocp`].
//!
//! Each iteration linearizes the residuals and inequality rows, solves the
//! equality-constrained quadratic subproblem with a Riccati backward sweep,
//! and takes a closed-loop forward rollout with Armijo backtracking on the
//! augmented-Lagrangian merit. The forward rollout integrates the dynamics
//! exactly, so iterates are always dynamically feasible.
//!
//! Inequalities `c(x, v) ≥ 0` use the Powell-Hestenes-Rockafellar augmented
//! Lagrangian
//!
//! ```text
//! ψ(c; λ, ρ) = (max(0, λ − ρc)² − λ²) / (2ρ)
//! ```
//!
//! with first-order multiplier updates `λ ← max(0, λ − ρc)` between inner
//! solves and penalty growth while the violation stays above tolerance.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DiscreteDynamics;
use crate::ocp::{DecisionTrajectory, Program, StageLinearization};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Gauss-Newton iterations summed over all augmented-Lagrangian rounds.
    pub max_sqp_iters: usize,
    pub kkt_tol: f64,
    pub constraint_tol: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub warm_start: bool,
    /// Input-block damping applied after a step cut short by the model line
    /// search; grows tenfold on short steps and decays on full ones.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_sqp_iters: 50,
            kkt_tol: 1e-6,
            constraint_tol: 1e-6,
            backtrack: 0.5,
            armijo: 1e-4,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_outer: 8,
            warm_start: true,
            damping: 1e-2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        pos("kkt_tol", self.kkt_tol)?;
        pos("constraint_tol", self.constraint_tol)?;
        pos("initial_penalty", self.initial_penalty)?;
        pos("armijo", self.armijo)?;
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("damping", "must be non-negative"));
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::invalid("penalty_growth", "must exceed 1"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid("backtrack", "must lie in (0, 1)"));
        }
        if self.armijo >= 1.0 {
            return Err(Error::invalid("armijo", "must be below 1"));
        }
        if self.max_sqp_iters == 0 {
            return Err(Error::invalid("max_sqp_iters", "must be at least 1"));
        }
        Ok(())
    }

    /// Largest penalty the outer loop may reach.
    pub fn penalty_cap(&self) -> f64 {
        self.initial_penalty * self.penalty_growth.powi(self.max_outer as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// No descent direction or line-search failure before reaching tolerance.
    Stalled,
}

/// One accepted Gauss-Newton step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub outer: usize,
    pub merit_before: f64,
    /// `merit_before + merit_change`.
    pub merit_after: f64,
    /// Accurately summed merit difference; never positive.
    pub merit_change: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub trajectory: DecisionTrajectory,
    pub converged: bool,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub constraint_violation: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    /// `Σ_k ‖r_k‖²`, the stage costs summed over the horizon.
    pub cost: f64,
    pub wall_time: f64,
    pub steps: Vec<StepRecord>,
}

/// Shifts a solution by one stage for the next control tick. The last input
/// and slack are duplicated, the last state is integrated once with the
/// nominal model.
pub fn warm_start_shift(prev: &DecisionTrajectory, dynamics: &DiscreteDynamics) -> DecisionTrajectory {
    let n = prev.horizon();
    if n == 0 {
        return prev.clone();
    }
    let shift = |v: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut out: Vec<_> = v[1..].to_vec();
        out.push(v[v.len() - 1].clone());
        out
    };
    let mut states: Vec<_> = prev.states[1..].to_vec();
    states.push(dynamics.step(&prev.states[n], prev.inputs[n - 1].as_slice()));
    DecisionTrajectory {
        states,
        inputs: shift(&prev.inputs),
        slacks: shift(&prev.slacks),
        multipliers: shift(&prev.multipliers),
        penalty: prev.penalty,
    }
}

struct Stage {
    lin: StageLinearization,
    mu_hat: DVector<f64>,
    /// `λ - ρc` before clipping at zero.
    shifted: DVector<f64>,
    active: Vec<bool>,
}

struct Evaluation {
    stages: Vec<Stage>,
    merit: f64,
    cost: f64,
}

/// Stationarity, primal feasibility and complementarity of the current
/// augmented-Lagrangian subproblem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktParts {
    pub stationarity: f64,
    pub dynamics: f64,
    pub violation: f64,
    pub complementarity: f64,
}

impl KktParts {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.dynamics)
            .max(self.violation)
            .max(self.complementarity)
    }
}

fn al_term(c: f64, lambda: f64, rho: f64) -> f64 {
    let m = (lambda - rho * c).max(0.0);
    (m * m - lambda * lambda) / (2.0 * rho)
}

fn stage_merit(r: &DVector<f64>, c: &DVector<f64>, lambda: &DVector<f64>, rho: f64) -> f64 {
    let mut m = 0.5 * r.norm_squared();
    for i in 0..c.len() {
        m += al_term(c[i], lambda[i], rho);
    }
    m
}

fn evaluate(program: &Program, traj: &DecisionTrajectory) -> Evaluation {
    let rho = traj.penalty;
    let mut merit = 0.0;
    let mut cost = 0.0;
    let mut stages = Vec::with_capacity(program.horizon());
    for k in 0..program.horizon() {
        let lin = program.linearize_stage(&traj.states[k], &traj.stage_vars(k));
        let lambda = &traj.multipliers[k];
        merit += stage_merit(&lin.r, &lin.c, lambda, rho);
        cost += lin.r.norm_squared();
        let shifted = DVector::from_fn(lin.c.len(), |i, _| lambda[i] - rho * lin.c[i]);
        let mu_hat = shifted.map(|m| m.max(0.0));
        let active = mu_hat.iter().map(|&m| m > 0.0).collect();
        stages.push(Stage { lin, mu_hat, shifted, active });
    }
    Evaluation { stages, merit, cost }
}

/// `merit(to) − merit(from)` at the multipliers and penalty of `from`,
/// summed residual by residual as `½(r⁺ − r)(r⁺ + r)` so that small changes
/// are not lost to cancellation against the total.
pub fn merit_change(program: &Program, from: &DecisionTrajectory, to: &DecisionTrajectory) -> f64 {
    let rho = from.penalty;
    let mut delta = 0.0;
    for k in 0..program.horizon() {
        let (r0, c0) = program.stage_values(&from.states[k], &from.stage_vars(k));
        let (r1, c1) = program.stage_values(&to.states[k], &to.stage_vars(k));
        let lambda = &from.multipliers[k];
        for i in 0..r0.len() {
            delta += 0.5 * (r1[i] - r0[i]) * (r1[i] + r0[i]);
        }
        for i in 0..c0.len() {
            delta += al_term(c1[i], lambda[i], rho) - al_term(c0[i], lambda[i], rho);
        }
    }
    delta
}

/// Merit of a trajectory at its stored multipliers and penalty.
pub fn merit(program: &Program, traj: &DecisionTrajectory) -> f64 {
    (0..program.horizon())
        .map(|k| {
            let (r, c) = program.stage_values(&traj.states[k], &traj.stage_vars(k));
            stage_merit(&r, &c, &traj.multipliers[k], traj.penalty)
        })
        .sum()
}

fn stage_gradient(st: &Stage) -> DVector<f64> {
    let mut g = st.lin.jr.tr_mul(&st.lin.r);
    if !st.mu_hat.is_empty() {
        g -= st.lin.jc.tr_mul(&st.mu_hat);
    }
    g
}

fn stage_hessian(st: &Stage, rho: f64, mask: &[bool]) -> DMatrix<f64> {
    let mut h = st.lin.jr.tr_mul(&st.lin.jr);
    let n_active = mask.iter().filter(|a| **a).count();
    if n_active > 0 {
        let nz = st.lin.jc.ncols();
        let mut ja = DMatrix::zeros(n_active, nz);
        let mut row = 0;
        for (i, a) in mask.iter().enumerate() {
            if *a {
                ja.row_mut(row).copy_from(&st.lin.jc.row(i));
                row += 1;
            }
        }
        h += ja.tr_mul(&ja) * rho;
    }
    h
}

/// Gradient of the stage model in which the rows in `mask` carry the
/// quadratic penalty piece and the others carry none.
fn masked_gradient(st: &Stage, mask: &[bool]) -> DVector<f64> {
    let mut g = st.lin.jr.tr_mul(&st.lin.r);
    for (i, a) in mask.iter().enumerate() {
        if *a {
            g -= st.lin.jc.row(i).transpose() * st.shifted[i];
        }
    }
    g
}

/// Gradient of the merit with respect to every `v_k`, with the states
/// treated as functions of the inputs through the dynamics.
fn reduced_gradient_of(program: &Program, eval: &Evaluation) -> Vec<DVector<f64>> {
    let n_x = program.n_x();
    let a = program.a();
    let b = program.b();
    let mut adj = DVector::zeros(n_x);
    let mut out = vec![DVector::zeros(program.n_v()); program.horizon()];
    for k in (0..program.horizon()).rev() {
        let g = stage_gradient(&eval.stages[k]);
        out[k] = g.rows(n_x, program.n_v()) + b.tr_mul(&adj);
        adj = g.rows(0, n_x) + a.tr_mul(&adj);
    }
    out
}

/// Merit gradient with respect to each stage's `[u; s]`, at the stored
/// multipliers and penalty. States must be a rollout of the inputs.
pub fn reduced_gradient(program: &Program, traj: &DecisionTrajectory) -> Vec<DVector<f64>> {
    reduced_gradient_of(program, &evaluate(program, traj))
}

/// Gradient of `½ Σ_k ‖r_k‖²` with respect to each stage's `[x; u; s]`.
pub fn cost_gradient(program: &Program, traj: &DecisionTrajectory) -> Vec<DVector<f64>> {
    (0..program.horizon())
        .map(|k| {
            let lin = program.linearize_stage(&traj.states[k], &traj.stage_vars(k));
            lin.jr.tr_mul(&lin.r)
        })
        .collect()
}

fn kkt_parts(program: &Program, traj: &DecisionTrajectory, eval: &Evaluation) -> KktParts {
    let stationarity = reduced_gradient_of(program, eval)
        .iter()
        .map(|g| g.amax())
        .fold(0.0, f64::max);
    let mut dynamics = (&traj.states[0] - program.x_init()).amax();
    for k in 0..program.horizon() {
        let next = program.step(&traj.states[k], &traj.stage_vars(k));
        dynamics = dynamics.max((&traj.states[k + 1] - next).amax());
    }
    let mut violation: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for st in &eval.stages {
        for i in 0..st.lin.c.len() {
            let c = st.lin.c[i];
            violation = violation.max(-c);
            complementarity = complementarity.max(c.min(st.mu_hat[i]).abs());
        }
    }
    KktParts {
        stationarity,
        dynamics,
        violation,
        complementarity,
    }
}

/// Infinity norm of stationarity, dynamics, feasibility and complementarity
/// residuals at the trajectory's multipliers and penalty.
pub fn kkt_residual(program: &Program, traj: &DecisionTrajectory) -> f64 {
    kkt_components(program, traj).max()
}

pub fn kkt_components(program: &Program, traj: &DecisionTrajectory) -> KktParts {
    let eval = evaluate(program, traj);
    kkt_parts(program, traj, &eval)
}

const ACTIVE_SET_ITERS: usize = 8;
const MAX_DAMPING: f64 = 1e8;

struct Sweep {
    k: Vec<DVector<f64>>,
    gain: Vec<DMatrix<f64>>,
}

/// Reusable per-loop solver state.
pub struct Solver {
    cfg: SolverConfig,
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Solver { cfg })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn backward(&self, program: &Program, eval: &Evaluation, rho: f64, masks: &[Vec<bool>], damping: f64) -> Result<Sweep> {
        let n = program.horizon();
        let n_x = program.n_x();
        let n_v = program.n_v();
        let a = program.a();
        let b = program.b();
        let mut p = DVector::<f64>::zeros(n_x);
        let mut pm = DMatrix::<f64>::zeros(n_x, n_x);
        let mut ks = vec![DVector::zeros(n_v); n];
        let mut gains = vec![DMatrix::zeros(n_v, n_x); n];
        for k in (0..n).rev() {
            let st = &eval.stages[k];
            let g = masked_gradient(st, &masks[k]);
            let h = stage_hessian(st, rho, &masks[k]);
            let qx = g.rows(0, n_x) + a.tr_mul(&p);
            let qv = g.rows(n_x, n_v) + b.tr_mul(&p);
            let pa = &pm * a;
            let qxx = h.view((0, 0), (n_x, n_x)) + a.tr_mul(&pa);
            let qvx = h.view((n_x, 0), (n_v, n_x)) + b.tr_mul(&pa);
            let qvv = h.view((n_x, n_x), (n_v, n_v)) + b.tr_mul(&(&pm * b)) + DMatrix::identity(n_v, n_v) * damping;

            let chol = match qvv.clone().cholesky() {
                Some(c) => c,
                None => {
                    let mut delta = 1e-8;
                    loop {
                        let reg = &qvv + DMatrix::identity(n_v, n_v) * delta;
                        if let Some(c) = reg.cholesky() {
                            break c;
                        }
                        delta *= 2.0;
                        if delta > 1e-2 {
                            return Err(Error::Regularization { stage: k });
                        }
                    }
                }
            };
            let kk = -chol.solve(&qv);
            let gain = -chol.solve(&qvx);

            let qvv_k = &qvv * &kk;
            p = &qx + gain.tr_mul(&qvv_k) + gain.tr_mul(&qv) + qvx.tr_mul(&kk);
            let mut next = &qxx + gain.tr_mul(&(&qvv * &gain)) + gain.tr_mul(&qvx) + qvx.tr_mul(&gain);
            next = (&next + next.transpose()) * 0.5;
            pm = next;
            ks[k] = kk;
            gains[k] = gain;
        }
        Ok(Sweep { k: ks, gain: gains })
    }

    /// Search direction from an active-set iteration on the linearised
    /// merit, or `None` when no descent direction exists. Iterates that do
    /// not settle keep the candidate with the largest predicted decrease.
    fn direction(
        &self,
        program: &Program,
        traj: &DecisionTrajectory,
        eval: &Evaluation,
        damping: f64,
    ) -> Result<Option<(Sweep, LineModel, f64)>> {
        let tiny = 1e-15 * (1.0 + eval.merit.abs());
        let mut masks: Vec<Vec<bool>> = eval.stages.iter().map(|s| s.active.clone()).collect();
        let mut best: Option<(Sweep, LineModel, f64, f64)> = None;
        for _ in 0..ACTIVE_SET_ITERS {
            let sweep = self.backward(program, eval, traj.penalty, &masks, damping)?;
            let full = self.forward(program, traj, &sweep, 1.0);
            let line = LineModel::new(program, traj, &full, eval);
            let next = line.masks_at_full(eval);
            let settled = next == masks;
            if line.slope(0.0) < -tiny {
                let alpha = line.minimiser();
                let gain = line.value(alpha);
                if settled {
                    return Ok(Some((sweep, line, alpha)));
                }
                if best.as_ref().is_none_or(|b| gain < b.3) {
                    best = Some((sweep, line, alpha, gain));
                }
            } else if settled {
                break;
            }
            masks = next;
        }
        Ok(best.map(|(s, l, a, _)| (s, l, a)))
    }

    fn forward(&self, program: &Program, traj: &DecisionTrajectory, sweep: &Sweep, alpha: f64) -> DecisionTrajectory {
        let n_u = program.n_u();
        let mut out = traj.clone();
        out.states[0] = program.x_init().clone();
        for k in 0..program.horizon() {
            let dx = &out.states[k] - &traj.states[k];
            let v = traj.stage_vars(k) + &sweep.k[k] * alpha + &sweep.gain[k] * dx;
            out.inputs[k] = v.rows(0, n_u).into_owned();
            out.slacks[k] = v.rows(n_u, program.n_s()).into_owned();
            out.states[k + 1] = program.step(&out.states[k], &v);
        }
        out
    }

    fn prepare(&self, program: &Program, guess: Option<&DecisionTrajectory>) -> Result<DecisionTrajectory> {
        let mut traj = match guess {
            Some(g) if self.cfg.warm_start => {
                program.check_shape(g)?;
                g.clone()
            }
            _ => program.cold_start(self.cfg.initial_penalty),
        };
        traj.penalty = self.cfg.initial_penalty;
        program.rollout(&mut traj);
        Ok(traj)
    }

    pub fn solve(&mut self, program: &Program, guess: Option<&DecisionTrajectory>) -> Result<SolveResult> {
        let start = Instant::now();
        let cfg = self.cfg.clone();
        let mut traj = self.prepare(program, guess)?;
        let cap = cfg.penalty_cap();
        let mut iterations = 0;
        let mut steps = Vec::new();
        let mut status = SolveStatus::Stalled;
        let mut outer = 0;
        let mut damping = 0.0;

        let finish = |traj: DecisionTrajectory,
                      eval: &Evaluation,
                      parts: KktParts,
                      status: SolveStatus,
                      iterations: usize,
                      outer: usize,
                      steps: Vec<StepRecord>| {
            SolveResult {
                converged: status == SolveStatus::Converged,
                status,
                kkt_residual: parts.max(),
                constraint_violation: parts.violation,
                iterations,
                outer_iterations: outer,
                cost: eval.cost,
                wall_time: start.elapsed().as_secs_f64(),
                steps,
                trajectory: traj,
            }
        };

        loop {
            let mut eval = evaluate(program, &traj);
            check_finite(eval.merit, &traj)?;
            let mut budget_hit = false;
            loop {
                let stationarity = reduced_gradient_of(program, &eval)
                    .iter()
                    .map(|g| g.amax())
                    .fold(0.0, f64::max);
                if stationarity <= cfg.kkt_tol {
                    break;
                }
                if iterations >= cfg.max_sqp_iters {
                    budget_hit = true;
                    break;
                }
                let Some((sweep, line, mut alpha)) = self.direction(program, &traj, &eval, damping)? else { break };
                let dv1 = line.slope(0.0);
                let mut accepted = None;
                while alpha > 1e-10 {
                    let cand = self.forward(program, &traj, &sweep, alpha);
                    let dm = merit_change(program, &traj, &cand);
                    if dm.is_finite() && dm <= cfg.armijo * alpha * dv1 && dm <= 0.0 {
                        accepted = Some((cand, dm));
                        break;
                    }
                    alpha *= cfg.backtrack;
                }
                if alpha < 0.5 {
                    damping = (damping * 10.0).max(cfg.damping);
                } else if alpha >= 1.0 {
                    damping = if damping > 1e-4 * cfg.damping { damping / 3.0 } else { 0.0 };
                }
                let Some((cand, dm)) = accepted else {
                    if damping < MAX_DAMPING {
                        continue;
                    }
                    break;
                };
                iterations += 1;
                steps.push(StepRecord {
                    outer,
                    merit_before: eval.merit,
                    merit_after: eval.merit + dm,
                    merit_change: dm,
                    step_size: alpha,
                });
                traj = cand;
                eval = evaluate(program, &traj);
                check_finite(eval.merit, &traj)?;
            }

            let parts = kkt_parts(program, &traj, &eval);
            if parts.max() <= cfg.kkt_tol && parts.violation <= cfg.constraint_tol {
                for (k, st) in eval.stages.iter().enumerate() {
                    traj.multipliers[k] = st.mu_hat.clone();
                }
                status = SolveStatus::Converged;
                return Ok(finish(traj, &eval, parts, status, iterations, outer, steps));
            }
            if budget_hit {
                status = SolveStatus::MaxIterations;
                return Ok(finish(traj, &eval, parts, status, iterations, outer, steps));
            }
            if program.n_c() == 0 || outer >= cfg.max_outer {
                if parts.violation > cfg.constraint_tol {
                    let violation = parts.violation;
                    let partial = finish(traj, &eval, parts, status, iterations, outer, steps);
                    return Err(Error::InfeasibleHardConstraints {
                        violation,
                        partial: Box::new(partial),
                    });
                }
                return Ok(finish(traj, &eval, parts, status, iterations, outer, steps));
            }
            for (k, st) in eval.stages.iter().enumerate() {
                traj.multipliers[k] = st.mu_hat.clone();
            }
            if parts.violation > cfg.constraint_tol {
                traj.penalty = (traj.penalty * cfg.penalty_growth).min(cap);
            }
            outer += 1;
        }
    }
}

/// Merit along `traj + α(full - traj)` with residuals and constraints
/// linearised at `traj`. Convex and piecewise quadratic in `α`.
struct LineModel {
    rho: f64,
    g0: f64,
    h0: f64,
    /// `(c, J·d, λ)` per constraint row, stage-major.
    rows: Vec<(f64, f64, f64)>,
}

impl LineModel {
    fn new(program: &Program, traj: &DecisionTrajectory, full: &DecisionTrajectory, eval: &Evaluation) -> Self {
        let n_x = program.n_x();
        let n_v = program.n_v();
        let mut g0 = 0.0;
        let mut h0 = 0.0;
        let mut rows = Vec::new();
        let mut d = DVector::zeros(n_x + n_v);
        for (k, st) in eval.stages.iter().enumerate() {
            d.rows_mut(0, n_x).copy_from(&(&full.states[k] - &traj.states[k]));
            d.rows_mut(n_x, n_v).copy_from(&(full.stage_vars(k) - traj.stage_vars(k)));
            let jd = &st.lin.jr * &d;
            g0 += st.lin.r.dot(&jd);
            h0 += jd.norm_squared();
            let cd = &st.lin.jc * &d;
            for i in 0..cd.len() {
                rows.push((st.lin.c[i], cd[i], traj.multipliers[k][i]));
            }
        }
        LineModel { rho: traj.penalty, g0, h0, rows }
    }

    fn slope(&self, alpha: f64) -> f64 {
        let mut s = self.g0 + alpha * self.h0;
        for &(c, b, lam) in &self.rows {
            s -= b * (lam - self.rho * (c + alpha * b)).max(0.0);
        }
        s
    }

    /// Model change from `α = 0` to `alpha`.
    fn value(&self, alpha: f64) -> f64 {
        let mut v = alpha * self.g0 + 0.5 * alpha * alpha * self.h0;
        for &(c, b, lam) in &self.rows {
            v += al_term(c + alpha * b, lam, self.rho) - al_term(c, lam, self.rho);
        }
        v
    }

    /// Rows active at the end of the full step, grouped per stage.
    fn masks_at_full(&self, eval: &Evaluation) -> Vec<Vec<bool>> {
        let mut it = self.rows.iter();
        eval.stages
            .iter()
            .map(|st| {
                (0..st.lin.c.len())
                    .map(|_| {
                        let &(c, b, lam) = it.next().expect("row count");
                        lam - self.rho * (c + b) > 0.0
                    })
                    .collect()
            })
            .collect()
    }

    /// Minimiser on `(0, 1]`, or 1 when the model still decreases there.
    fn minimiser(&self) -> f64 {
        if self.slope(1.0) <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

fn check_finite(merit: f64, traj: &DecisionTrajectory) -> Result<()> {
    if !merit.is_finite() {
        return Err(Error::Diverged(format!("merit {merit}")));
    }
    if traj.states.iter().chain(traj.inputs.iter()).any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Diverged("non-finite iterate".into()));
    }
    Ok(())
}

/// One-shot solve with a fresh workspace.
pub fn solve(program: &Program, guess: Option<&DecisionTrajectory>, cfg: &SolverConfig) -> Result<SolveResult> {
    Solver::new(cfg.clone())?.solve(program, guess)
}
