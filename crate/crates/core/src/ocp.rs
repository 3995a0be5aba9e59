//! Discrete-time optimal control problem assembly.
//!
//! Three stage-cost formulations are supported:
//!
//! * [`StageCostSpec::Regulator`]: `eᵀQe + μ·uᵀW_r u`
//! * [`StageCostSpec::Damped`]: `[e; ė]ᵀ Q_B [e; ė] + μ·uᵀW_r u`
//! * [`StageCostSpec::Decay`]: `sᵀW_s s + μ·uᵀW_r u` with `s = ė + K_e e`,
//!   the deviation from a first-order decay of every task error.
//!
//! Inequalities `h(x) ≥ 0` enter as barrier rows `ḣ(x,u) + K_h h(x) ≥ 0`
//! (hard) or `≥ s_h` with `w·s_h²` in the cost (soft). Input bounds are box
//! rows on `u`. The terminal cost is zero by construction.
//!
//! Every stage is written as a nonlinear least-squares residual `r(x, v)`
//! plus inequality rows `c(x, v) ≥ 0`, where `v = [u; s_h]` stacks the inputs
//! with the explicit soft-constraint slacks. That is the form consumed by
//! [`crate::solver`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::{self, Real};
use crate::error::{Error, Result};
use crate::model::{continuous_flat, ControlInput, DiscreteDynamics, State};
use crate::task::{GainMatrix, Inequality, Scalar, StateFn, Task};

/// Stage-cost formulation and its weights. All matrices act on the stacked
/// task-error vector (dimension `m`) or on the input (dimension `n_u`).
#[derive(Clone, Debug)]
pub enum StageCostSpec {
    Regulator {
        q: DMatrix<f64>,
        mu: f64,
        w_r: DMatrix<f64>,
    },
    Damped {
        q_b: DMatrix<f64>,
        mu: f64,
        w_r: DMatrix<f64>,
    },
    Decay {
        w_s: DMatrix<f64>,
        k_e: GainMatrix,
        mu: f64,
        w_r: DMatrix<f64>,
    },
}

impl StageCostSpec {
    /// `Q_B = diag(I, λI)` for an `m`-dimensional task.
    pub fn damped_diag(m: usize, lambda: f64, mu: f64, w_r: DMatrix<f64>) -> Self {
        let mut q_b = DMatrix::identity(2 * m, 2 * m);
        for i in m..2 * m {
            q_b[(i, i)] = lambda;
        }
        StageCostSpec::Damped { q_b, mu, w_r }
    }

    pub fn mu(&self) -> f64 {
        match self {
            StageCostSpec::Regulator { mu, .. } | StageCostSpec::Damped { mu, .. } | StageCostSpec::Decay { mu, .. } => *mu,
        }
    }

    pub fn w_r(&self) -> &DMatrix<f64> {
        match self {
            StageCostSpec::Regulator { w_r, .. } | StageCostSpec::Damped { w_r, .. } | StageCostSpec::Decay { w_r, .. } => w_r,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StageCostSpec::Regulator { .. } => "regulator",
            StageCostSpec::Damped { .. } => "damped",
            StageCostSpec::Decay { .. } => "decay",
        }
    }

    fn needs_rate(&self) -> bool {
        !matches!(self, StageCostSpec::Regulator { .. })
    }

    fn validate(&self, m: usize, n_u: usize) -> Result<()> {
        let mu = self.mu();
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
        }
        let w_r = self.w_r();
        check_square("W_r", w_r, n_u)?;
        check_symmetric("W_r", w_r)?;
        if w_r.clone().cholesky().is_none() {
            return Err(Error::invalid("W_r", "must be positive definite"));
        }
        match self {
            StageCostSpec::Regulator { q, .. } => {
                check_square("Q", q, m)?;
                check_psd("Q", q)
            }
            StageCostSpec::Damped { q_b, .. } => {
                check_square("Q_B", q_b, 2 * m)?;
                check_psd("Q_B", q_b)
            }
            StageCostSpec::Decay { w_s, k_e, .. } => {
                check_square("W_s", w_s, m)?;
                if k_e.len() != m {
                    return Err(Error::dims("K_e", m, k_e.len()));
                }
                check_psd("W_s", w_s)
            }
        }
    }
}

fn check_square(name: &'static str, a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::dims(name, n, if a.nrows() != n { a.nrows() } else { a.ncols() }));
    }
    Ok(())
}

fn check_symmetric(name: &'static str, a: &DMatrix<f64>) -> Result<()> {
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    Ok(())
}

fn check_psd(name: &'static str, a: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, a)?;
    let eig = a.clone().symmetric_eigenvalues();
    let scale = a.amax().max(1.0);
    if eig.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::invalid(name, "must be positive semidefinite"));
    }
    Ok(())
}

/// Factor `F` with `FᵀF = M` for symmetric positive semidefinite `M`.
pub(crate) fn sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l().transpose();
    }
    let eig = m.clone().symmetric_eigen();
    let mut f = eig.eigenvectors.transpose();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        f.row_mut(i).scale_mut(s);
    }
    f
}

fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    v.dot(&(m * v))
}

/// `eᵀQe + μ·uᵀW_r u`.
pub fn regulator_cost(e: &DVector<f64>, u: &DVector<f64>, q: &DMatrix<f64>, mu: f64, w_r: &DMatrix<f64>) -> f64 {
    quad(e, q) + mu * quad(u, w_r)
}

/// `[e; ė]ᵀ Q_B [e; ė] + μ·uᵀW_r u`.
pub fn damped_cost(
    e: &DVector<f64>,
    edot: &DVector<f64>,
    u: &DVector<f64>,
    q_b: &DMatrix<f64>,
    mu: f64,
    w_r: &DMatrix<f64>,
) -> f64 {
    let z = DVector::from_iterator(e.len() + edot.len(), e.iter().chain(edot.iter()).copied());
    quad(&z, q_b) + mu * quad(u, w_r)
}

/// `sᵀW_s s + μ·uᵀW_r u` with `s = ė + K_e e`.
pub fn decay_cost(
    e: &DVector<f64>,
    edot: &DVector<f64>,
    u: &DVector<f64>,
    w_s: &DMatrix<f64>,
    k_e: &DMatrix<f64>,
    mu: f64,
    w_r: &DMatrix<f64>,
) -> f64 {
    let s = edot + k_e * e;
    quad(&s, w_s) + mu * quad(u, w_r)
}

/// The task-error/rate weight that makes the damped cost identical to the
/// decay cost: `[[K_eᵀW_sK_e, K_eᵀW_s], [W_sK_e, W_s]]`. The input weight is
/// unchanged (`R = μ·W_r`).
pub fn qb_from_decay(k_e: &DMatrix<f64>, w_s: &DMatrix<f64>) -> DMatrix<f64> {
    let m = w_s.nrows();
    let mut q = DMatrix::zeros(2 * m, 2 * m);
    let kt = k_e.transpose();
    q.view_mut((0, 0), (m, m)).copy_from(&(&kt * w_s * k_e));
    q.view_mut((0, m), (m, m)).copy_from(&(&kt * w_s));
    q.view_mut((m, 0), (m, m)).copy_from(&(w_s * k_e));
    q.view_mut((m, m), (m, m)).copy_from(w_s);
    q
}

/// Stacked task errors and (optionally) their rates at a state/input pair.
pub fn stacked_errors(tasks: &[Task], state: &State, input: &ControlInput) -> Result<(DVector<f64>, DVector<f64>)> {
    let x = state.to_flat();
    if input.qddot_cmd.len() != state.n_q() {
        return Err(Error::dims("control input", state.n_q(), input.qddot_cmd.len()));
    }
    let mut dir = vec![0.0; x.len()];
    continuous_flat(x.as_slice(), input.qddot_cmd.as_slice(), &mut dir);
    let m: usize = tasks.iter().map(|t| t.dim()).sum();
    let mut e = DVector::zeros(m);
    let mut edot = DVector::zeros(m);
    let mut row = 0;
    for t in tasks {
        let d = t.dim();
        f64::eval_along(
            t.func(),
            x.as_slice(),
            &dir,
            &mut e.as_mut_slice()[row..row + d],
            &mut edot.as_mut_slice()[row..row + d],
        );
        row += d;
    }
    if edot.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonDifferentiable("task rate".into()));
    }
    Ok((e, edot))
}

/// Evaluates a stage cost directly from its formula.
pub fn stage_cost(cost: &StageCostSpec, tasks: &[Task], state: &State, input: &ControlInput) -> Result<f64> {
    let (e, edot) = stacked_errors(tasks, state, input)?;
    let u = &input.qddot_cmd;
    Ok(match cost {
        StageCostSpec::Regulator { q, mu, w_r } => regulator_cost(&e, u, q, *mu, w_r),
        StageCostSpec::Damped { q_b, mu, w_r } => damped_cost(&e, &edot, u, q_b, *mu, w_r),
        StageCostSpec::Decay { w_s, k_e, mu, w_r } => decay_cost(&e, &edot, u, w_s, &k_e.to_matrix(), *mu, w_r),
    })
}

/// Hard or soft treatment of an inequality.
#[derive(Clone, Debug, PartialEq)]
pub enum Softness {
    Hard,
    /// Penalty weight per component, each `> 0`.
    Soft(Vec<f64>),
}

/// Inequality `h(x) ≥ 0` imposed through its barrier row
/// `ḣ + K_h h ≥ 0` (or `≥ s_h` when soft).
#[derive(Clone, Debug)]
pub struct ConstraintSpec {
    pub h: Inequality,
    /// `None` inherits a uniform task gain from a decay cost at assembly.
    pub alpha: Option<GainMatrix>,
    pub softness: Softness,
}

impl ConstraintSpec {
    pub fn hard(h: Inequality, alpha: Option<GainMatrix>) -> Self {
        ConstraintSpec {
            h,
            alpha,
            softness: Softness::Hard,
        }
    }

    pub fn soft(h: Inequality, alpha: Option<GainMatrix>, weights: Vec<f64>) -> Self {
        ConstraintSpec {
            h,
            alpha,
            softness: Softness::Soft(weights),
        }
    }

    pub fn is_hard(&self) -> bool {
        self.softness == Softness::Hard
    }

    fn validate(&self) -> Result<()> {
        let d = self.h.dim();
        if let Some(a) = &self.alpha {
            if a.len() != d {
                return Err(Error::dims("constraint gain", d, a.len()));
            }
        }
        if let Softness::Soft(w) = &self.softness {
            if w.len() != d {
                return Err(Error::dims("soft constraint weights", d, w.len()));
            }
            if w.iter().any(|w| !(*w > 0.0)) {
                return Err(Error::invalid("soft constraint weights", "must be positive"));
            }
        }
        Ok(())
    }

    /// Barrier residual `ḣ(x,u) + K_h h(x)`, required `≥ 0` (hard) or
    /// `≥ s_h` (soft).
    pub fn barrier_rows(&self, state: &State, input: &ControlInput) -> Result<BarrierRows> {
        let alpha = self
            .alpha
            .as_ref()
            .ok_or_else(|| Error::invalid("constraint gain", "unresolved; set alpha explicitly"))?;
        let x = state.to_flat();
        if input.qddot_cmd.len() != state.n_q() {
            return Err(Error::dims("control input", state.n_q(), input.qddot_cmd.len()));
        }
        let mut dir = vec![0.0; x.len()];
        continuous_flat(x.as_slice(), input.qddot_cmd.as_slice(), &mut dir);
        let d = self.h.dim();
        let mut h = vec![0.0; d];
        let mut hdot = vec![0.0; d];
        f64::eval_along(self.h.func(), x.as_slice(), &dir, &mut h, &mut hdot);
        if hdot.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonDifferentiable(self.h.label.clone()));
        }
        let residual = DVector::from_iterator(d, (0..d).map(|i| hdot[i] + alpha.as_slice()[i] * h[i]));
        Ok(BarrierRows {
            residual,
            hard: self.is_hard(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierRows {
    pub residual: DVector<f64>,
    pub hard: bool,
}

/// Componentwise box on the commanded acceleration, enforced directly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBound {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputBound {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dims("input bound", lower.len(), upper.len()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::invalid("input bound", "lower must not exceed upper"));
        }
        Ok(InputBound { lower, upper })
    }

    pub fn symmetric(limit: f64, n: usize) -> Result<Self> {
        Self::new(DVector::from_element(n, -limit), DVector::from_element(n, limit))
    }

    pub fn violation(&self, u: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, &v)| (self.lower[i] - v).max(v - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Horizon-`N` problem definition.
#[derive(Clone, Debug)]
pub struct OcpSpec {
    pub horizon: usize,
    pub dynamics: DiscreteDynamics,
    pub tasks: Vec<Task>,
    pub cost: StageCostSpec,
    pub constraints: Vec<ConstraintSpec>,
    pub input_bounds: Option<InputBound>,
}

impl OcpSpec {
    pub fn new(horizon: usize, dynamics: DiscreteDynamics, tasks: Vec<Task>, cost: StageCostSpec) -> Self {
        OcpSpec {
            horizon,
            dynamics,
            tasks,
            cost,
            constraints: Vec::new(),
            input_bounds: None,
        }
    }

    pub fn with_constraint(mut self, c: ConstraintSpec) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_input_bounds(mut self, b: InputBound) -> Self {
        self.input_bounds = Some(b);
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn task_dim(&self) -> usize {
        self.tasks.iter().map(|t| t.dim()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        let n_u = self.dynamics.n_q;
        self.cost.validate(self.task_dim(), n_u)?;
        for c in &self.constraints {
            c.validate()?;
        }
        if let Some(b) = &self.input_bounds {
            if b.lower.len() != n_u {
                return Err(Error::dims("input bound", n_u, b.lower.len()));
            }
        }
        Ok(())
    }

    fn resolved_alpha(&self, c: &ConstraintSpec) -> Result<Vec<f64>> {
        if let Some(a) = &c.alpha {
            return Ok(a.as_slice().to_vec());
        }
        match &self.cost {
            StageCostSpec::Decay { k_e, .. } => k_e
                .uniform_value()
                .map(|a| vec![a; c.h.dim()])
                .ok_or_else(|| Error::invalid("constraint gain", "K_e is not uniform; set alpha explicitly")),
            _ => Err(Error::invalid("constraint gain", "no task gain to inherit; set alpha explicitly")),
        }
    }

    /// Largest violation of the hard inequalities `h(x) ≥ 0` and the input
    /// bounds at a plant state and applied input.
    pub fn hard_violation(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in self.constraints.iter().filter(|c| c.is_hard()) {
            let mut h = vec![0.0; c.h.dim()];
            c.h.func().eval_f64(x, &mut h);
            for v in h {
                worst = worst.max(-v);
            }
        }
        if let Some(b) = &self.input_bounds {
            worst = worst.max(b.violation(u));
        }
        worst
    }

    /// All inequality values `h(x)`, constraint by constraint.
    pub fn constraint_values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.constraints {
            let mut h = vec![0.0; c.h.dim()];
            c.h.func().eval_f64(x, &mut h);
            out.extend(h);
        }
        out
    }
}

struct ResolvedConstraint {
    func: Arc<dyn StateFn>,
    alpha: Vec<f64>,
    /// `(first slack index, sqrt weights)` for soft constraints.
    soft: Option<(usize, Vec<f64>)>,
}

enum CostFactor {
    Regulator(DMatrix<f64>),
    Damped(DMatrix<f64>),
    Decay(DMatrix<f64>, Vec<f64>),
}

/// Solution container: `x₀…x_N`, `u₀…u_{N−1}`, soft-constraint slacks and the
/// augmented-Lagrangian multipliers of the inequality rows per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub slacks: Vec<DVector<f64>>,
    pub multipliers: Vec<DVector<f64>>,
    pub penalty: f64,
}

impl DecisionTrajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `v_k = [u_k; s_k]`.
    pub fn stage_vars(&self, k: usize) -> DVector<f64> {
        let u = &self.inputs[k];
        let s = &self.slacks[k];
        DVector::from_iterator(u.len() + s.len(), u.iter().chain(s.iter()).copied())
    }
}

/// Assembled stage-wise program for one initial state.
pub struct Program {
    spec: OcpSpec,
    x_init: DVector<f64>,
    n_x: usize,
    n_u: usize,
    n_s: usize,
    n_c: usize,
    n_r: usize,
    factor: CostFactor,
    input_factor: DMatrix<f64>,
    constraints: Vec<ResolvedConstraint>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// Values and Jacobians of one stage with respect to `[x; v]`.
#[derive(Clone, Debug)]
pub struct StageLinearization {
    pub r: DVector<f64>,
    pub jr: DMatrix<f64>,
    pub c: DVector<f64>,
    pub jc: DMatrix<f64>,
}

/// Builds the stage-wise least-squares program for `spec` at `x_init`.
pub fn assemble(spec: &OcpSpec, x_init: &State) -> Result<Program> {
    spec.validate()?;
    let n_q = spec.dynamics.n_q;
    if x_init.n_q() != n_q {
        return Err(Error::dims("initial state", n_q, x_init.n_q()));
    }
    let n_x = spec.dynamics.n_x();
    let n_u = n_q;
    let m = spec.task_dim();

    let factor = match &spec.cost {
        StageCostSpec::Regulator { q, .. } => CostFactor::Regulator(sqrt_factor(q)),
        StageCostSpec::Damped { q_b, .. } => CostFactor::Damped(sqrt_factor(q_b)),
        StageCostSpec::Decay { w_s, k_e, .. } => CostFactor::Decay(sqrt_factor(w_s), k_e.as_slice().to_vec()),
    };
    let input_factor = sqrt_factor(&(spec.cost.w_r() * spec.cost.mu()));

    let mut constraints = Vec::with_capacity(spec.constraints.len());
    let mut n_s = 0;
    let mut n_c = 0;
    for c in &spec.constraints {
        let alpha = spec.resolved_alpha(c)?;
        let soft = match &c.softness {
            Softness::Hard => None,
            Softness::Soft(w) => {
                let start = n_s;
                n_s += w.len();
                Some((start, w.iter().map(|w| w.sqrt()).collect()))
            }
        };
        n_c += c.h.dim();
        constraints.push(ResolvedConstraint {
            func: c.h.func.clone(),
            alpha,
            soft,
        });
    }
    if spec.input_bounds.is_some() {
        n_c += 2 * n_u;
    }
    let cost_rows = match &factor {
        CostFactor::Regulator(f) | CostFactor::Damped(f) | CostFactor::Decay(f, _) => f.nrows(),
    };
    debug_assert!(m == 0 || cost_rows > 0);
    let n_r = cost_rows + input_factor.nrows() + n_s;

    let a = spec.dynamics.state_jacobian();
    let mut b = DMatrix::zeros(n_x, n_u + n_s);
    b.view_mut((0, 0), (n_x, n_u)).copy_from(&spec.dynamics.input_jacobian());

    Ok(Program {
        spec: spec.clone(),
        x_init: x_init.to_flat(),
        n_x,
        n_u,
        n_s,
        n_c,
        n_r,
        factor,
        input_factor,
        constraints,
        a,
        b,
    })
}

impl Program {
    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }
    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    /// Number of soft-constraint slacks per stage.
    pub fn n_s(&self) -> usize {
        self.n_s
    }
    /// Stage variables `v = [u; s]`.
    pub fn n_v(&self) -> usize {
        self.n_u + self.n_s
    }
    /// Inequality rows per stage.
    pub fn n_c(&self) -> usize {
        self.n_c
    }
    /// Least-squares residual rows per stage.
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn x_init(&self) -> &DVector<f64> {
        &self.x_init
    }
    /// Re-targets the program at a new measured state without re-assembly.
    pub fn set_initial_state(&mut self, x: &State) -> Result<()> {
        if x.n_q() != self.n_u {
            return Err(Error::dims("initial state", self.n_u, x.n_q()));
        }
        self.x_init = x.to_flat();
        Ok(())
    }
    pub fn dynamics(&self) -> &DiscreteDynamics {
        &self.spec.dynamics
    }
    /// Number of scalar decision variables including the fixed initial state.
    pub fn decision_dim(&self) -> usize {
        self.horizon() * (self.n_x + self.n_v()) + self.n_x
    }
    /// `∂f_d/∂x`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    /// `∂f_d/∂v` (zero columns for slacks).
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn step(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.spec.dynamics.step(x, &v.as_slice()[..self.n_u])
    }

    /// Residual rows and inequality rows of one stage, generic over the scalar.
    pub fn eval_stage<S: Scalar>(&self, x: &[S], v: &[S], res: &mut [S], con: &mut [S]) {
        let n_u = self.n_u;
        let u = &v[..n_u];
        let s = &v[n_u..];
        let need_dir = self.spec.cost.needs_rate() || !self.constraints.is_empty();
        let mut dir = vec![S::zero(); self.n_x];
        if need_dir {
            continuous_flat(x, u, &mut dir);
        }

        let m = self.spec.task_dim();
        let mut e = vec![S::zero(); m];
        let mut edot = vec![S::zero(); m];
        let mut row = 0;
        for t in &self.spec.tasks {
            let d = t.dim();
            if self.spec.cost.needs_rate() {
                S::eval_along(t.func(), x, &dir, &mut e[row..row + d], &mut edot[row..row + d]);
            } else {
                S::eval(t.func(), x, &mut e[row..row + d]);
            }
            row += d;
        }

        let mut r = 0;
        match &self.factor {
            CostFactor::Regulator(f) => {
                mat_vec(f, &e, &mut res[..f.nrows()]);
                r += f.nrows();
            }
            CostFactor::Damped(f) => {
                let z: Vec<S> = e.iter().chain(edot.iter()).copied().collect();
                mat_vec(f, &z, &mut res[..f.nrows()]);
                r += f.nrows();
            }
            CostFactor::Decay(f, k) => {
                let z: Vec<S> = (0..m).map(|i| edot[i] + e[i] * k[i]).collect();
                mat_vec(f, &z, &mut res[..f.nrows()]);
                r += f.nrows();
            }
        }
        let fr = &self.input_factor;
        mat_vec(fr, u, &mut res[r..r + fr.nrows()]);
        r += fr.nrows();
        for c in &self.constraints {
            if let Some((start, sw)) = &c.soft {
                for (i, w) in sw.iter().enumerate() {
                    res[r] = s[start + i] * *w;
                    r += 1;
                }
            }
        }
        debug_assert_eq!(r, self.n_r);

        let mut row = 0;
        for c in &self.constraints {
            let d = c.func.dim();
            let mut h = vec![S::zero(); d];
            let mut hdot = vec![S::zero(); d];
            S::eval_along(c.func.as_ref(), x, &dir, &mut h, &mut hdot);
            for i in 0..d {
                let mut val = hdot[i] + h[i] * c.alpha[i];
                if let Some((start, _)) = &c.soft {
                    val -= s[start + i];
                }
                con[row + i] = val;
            }
            row += d;
        }
        if let Some(b) = &self.spec.input_bounds {
            for i in 0..n_u {
                con[row + i] = u[i] - b.lower[i];
                con[row + n_u + i] = -u[i] + b.upper[i];
            }
        }
    }

    /// Residual and inequality values at plain floats.
    pub fn stage_values(&self, x: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut r = DVector::zeros(self.n_r);
        let mut c = DVector::zeros(self.n_c);
        self.eval_stage(x.as_slice(), v.as_slice(), r.as_mut_slice(), c.as_mut_slice());
        (r, c)
    }

    /// `‖r(x, v)‖²`, the stage cost as written in the formulation.
    pub fn stage_cost(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.stage_values(x, v).0.norm_squared()
    }

    /// Sum of stage costs along a trajectory (terminal cost is zero).
    pub fn total_cost(&self, traj: &DecisionTrajectory) -> f64 {
        (0..self.horizon())
            .map(|k| self.stage_cost(&traj.states[k], &traj.stage_vars(k)))
            .sum()
    }

    pub fn linearize_stage(&self, x: &DVector<f64>, v: &DVector<f64>) -> StageLinearization {
        let n_x = self.n_x;
        let z: Vec<f64> = x.iter().chain(v.iter()).copied().collect();
        let (vals, jac) = ad::jacobian(&z, self.n_r + self.n_c, |zs, out| {
            let (res, con) = out.split_at_mut(self.n_r);
            self.eval_stage(&zs[..n_x], &zs[n_x..], res, con);
        });
        StageLinearization {
            r: DVector::from_column_slice(&vals[..self.n_r]),
            jr: jac.rows(0, self.n_r).into_owned(),
            c: DVector::from_column_slice(&vals[self.n_r..]),
            jc: jac.rows(self.n_r, self.n_c).into_owned(),
        }
    }

    /// Zero inputs and slacks, states from an open-loop rollout.
    pub fn cold_start(&self, penalty: f64) -> DecisionTrajectory {
        let n = self.horizon();
        let inputs = vec![DVector::zeros(self.n_u); n];
        let slacks = vec![DVector::zeros(self.n_s); n];
        let mut traj = DecisionTrajectory {
            states: vec![self.x_init.clone(); n + 1],
            inputs,
            slacks,
            multipliers: vec![DVector::zeros(self.n_c); n],
            penalty,
        };
        self.rollout(&mut traj);
        traj
    }

    /// Recomputes `x₁…x_N` from `x_init` and the stored inputs.
    pub fn rollout(&self, traj: &mut DecisionTrajectory) {
        traj.states[0] = self.x_init.clone();
        for k in 0..self.horizon() {
            traj.states[k + 1] = self.spec.dynamics.step(&traj.states[k], traj.inputs[k].as_slice());
        }
    }

    /// Checks that a trajectory has this program's shape.
    pub fn check_shape(&self, traj: &DecisionTrajectory) -> Result<()> {
        let n = self.horizon();
        let bad = |what: &'static str, expected: usize, got: usize| Err(Error::dims(what, expected, got));
        if traj.inputs.len() != n {
            return bad("trajectory inputs", n, traj.inputs.len());
        }
        if traj.states.len() != n + 1 {
            return bad("trajectory states", n + 1, traj.states.len());
        }
        if traj.slacks.len() != n || traj.multipliers.len() != n {
            return bad("trajectory slacks/multipliers", n, traj.slacks.len().min(traj.multipliers.len()));
        }
        for k in 0..n {
            if traj.inputs[k].len() != self.n_u {
                return bad("stage input", self.n_u, traj.inputs[k].len());
            }
            if traj.slacks[k].len() != self.n_s {
                return bad("stage slack", self.n_s, traj.slacks[k].len());
            }
            if traj.multipliers[k].len() != self.n_c {
                return bad("stage multipliers", self.n_c, traj.multipliers[k].len());
            }
        }
        for x in &traj.states {
            if x.len() != self.n_x {
                return bad("stage state", self.n_x, x.len());
            }
        }
        Ok(())
    }
}

fn mat_vec<S: Real>(m: &DMatrix<f64>, v: &[S], out: &mut [S]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = S::zero();
        for (j, vj) in v.iter().enumerate() {
            let a = m[(i, j)];
            if a != 0.0 {
                acc += *vj * a;
            }
        }
        *o = acc;
    }
}
