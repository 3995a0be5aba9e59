//! Acceleration-controlled joint model, planar arm kinematics and the
//! lagged plant used for mismatch experiments.
//!
//! The flat state layout used throughout the crate is
//! `[q₀ … q_{n-1}, q̇₀ … q̇_{n-1}, t]`, so `n_x = 2·n_q + 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};

/// Joint positions, velocities and the clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>, t: f64) -> Result<Self> {
        if q.len() != qdot.len() {
            return Err(Error::dims("state velocity", q.len(), qdot.len()));
        }
        Ok(State { q, qdot, t })
    }

    pub fn at_rest(q: &[f64], t: f64) -> Self {
        State {
            q: DVector::from_column_slice(q),
            qdot: DVector::zeros(q.len()),
            t,
        }
    }

    pub fn n_q(&self) -> usize {
        self.q.len()
    }

    pub fn n_x(&self) -> usize {
        2 * self.q.len() + 1
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.n_q();
        let mut x = DVector::zeros(2 * n + 1);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qdot);
        x[2 * n] = self.t;
        x
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() % 2 != 1 {
            return Err(Error::invalid("flat state", format!("length {} is not 2·n_q + 1", x.len())));
        }
        let n = x.len() / 2;
        Ok(State {
            q: DVector::from_column_slice(&x[..n]),
            qdot: DVector::from_column_slice(&x[n..2 * n]),
            t: x[2 * n],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Commanded joint accelerations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub qddot_cmd: DVector<f64>,
}

impl ControlInput {
    pub fn new(qddot_cmd: DVector<f64>) -> Self {
        ControlInput { qddot_cmd }
    }

    pub fn from_slice(u: &[f64]) -> Self {
        ControlInput {
            qddot_cmd: DVector::from_column_slice(u),
        }
    }

    pub fn zeros(n_q: usize) -> Self {
        ControlInput {
            qddot_cmd: DVector::zeros(n_q),
        }
    }
}

/// Time derivative of `(q, q̇, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    pub dq: DVector<f64>,
    pub dqdot: DVector<f64>,
    pub dt: f64,
}

fn check_dims(state: &State, input: &ControlInput) -> Result<()> {
    if state.qdot.len() != state.q.len() {
        return Err(Error::dims("state velocity", state.q.len(), state.qdot.len()));
    }
    if input.qddot_cmd.len() != state.q.len() {
        return Err(Error::dims("control input", state.q.len(), input.qddot_cmd.len()));
    }
    Ok(())
}

/// `ẋ = (q̇, q̈_cmd, 1)` for the ideal acceleration-controlled system.
pub fn continuous_dynamics(state: &State, input: &ControlInput) -> Result<StateDerivative> {
    check_dims(state, input)?;
    Ok(StateDerivative {
        dq: state.qdot.clone(),
        dqdot: input.qddot_cmd.clone(),
        dt: 1.0,
    })
}

/// Continuous dynamics on the flat layout, generic over the scalar so it can
/// be used inside automatic differentiation.
pub fn continuous_flat<S: Real>(x: &[S], u: &[S], out: &mut [S]) {
    let n = u.len();
    debug_assert_eq!(x.len(), 2 * n + 1);
    out[..n].copy_from_slice(&x[n..2 * n]);
    out[n..2 * n].copy_from_slice(u);
    out[2 * n] = S::cst(1.0);
}

/// One forward-Euler step of the nominal model.
pub fn step_nominal(state: &State, input: &ControlInput, dt: f64) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let d = continuous_dynamics(state, input)?;
    Ok(State {
        q: &state.q + d.dq * dt,
        qdot: &state.qdot + d.dqdot * dt,
        t: state.t + dt * d.dt,
    })
}

/// Internal first-order actuator lag of the simulated plant. The MPC model
/// never sees this state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLag {
    pub alpha_internal: f64,
    pub qddot_actual: DVector<f64>,
}

impl ActuatorLag {
    pub fn new(alpha_internal: f64, n_q: usize) -> Result<Self> {
        if !(alpha_internal >= 0.0) || !alpha_internal.is_finite() {
            return Err(Error::invalid("alpha_internal", format!("must be finite and ≥ 0, got {alpha_internal}")));
        }
        Ok(ActuatorLag {
            alpha_internal,
            qddot_actual: DVector::zeros(n_q),
        })
    }
}

/// Lag update `q̈ ← q̈ − Δt·α(q̈ − q̈_cmd)` followed by an Euler step that
/// integrates the realized acceleration.
pub fn step_plant(
    state: &State,
    lag: &ActuatorLag,
    input: &ControlInput,
    dt: f64,
) -> Result<(State, ActuatorLag)> {
    check_dims(state, input)?;
    if lag.qddot_actual.len() != state.n_q() {
        return Err(Error::dims("actuator lag", state.n_q(), lag.qddot_actual.len()));
    }
    if lag.alpha_internal * dt >= 2.0 {
        return Err(Error::invalid(
            "alpha_internal",
            format!("α·dt = {} makes the lag filter unstable", lag.alpha_internal * dt),
        ));
    }
    let qddot = &lag.qddot_actual - (&lag.qddot_actual - &input.qddot_cmd) * (dt * lag.alpha_internal);
    let next = step_nominal(state, &ControlInput::new(qddot.clone()), dt)?;
    Ok((
        next,
        ActuatorLag {
            alpha_internal: lag.alpha_internal,
            qddot_actual: qddot,
        },
    ))
}

/// Discretization schemes. Only forward Euler is provided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Discretization {
    ForwardEuler,
}

/// Discrete-time model `x_{k+1} = f_d(x_k, u_k)` for `n_q` joints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDynamics {
    pub n_q: usize,
    pub dt: f64,
    pub scheme: Discretization,
}

impl DiscreteDynamics {
    pub fn euler(n_q: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if n_q == 0 {
            return Err(Error::invalid("n_q", "must be at least 1"));
        }
        Ok(DiscreteDynamics {
            n_q,
            dt,
            scheme: Discretization::ForwardEuler,
        })
    }

    pub fn n_x(&self) -> usize {
        2 * self.n_q + 1
    }

    pub fn step_flat(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n_q;
        match self.scheme {
            Discretization::ForwardEuler => {
                for i in 0..n {
                    out[i] = x[i] + self.dt * x[n + i];
                    out[n + i] = x[n + i] + self.dt * u[i];
                }
                out[2 * n] = x[2 * n] + self.dt;
            }
        }
    }

    pub fn step(&self, x: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.step_flat(x.as_slice(), u, out.as_mut_slice());
        out
    }

    /// `∂f_d/∂x`; constant for the Euler acceleration model.
    pub fn state_jacobian(&self) -> DMatrix<f64> {
        let n = self.n_q;
        let mut a = DMatrix::identity(2 * n + 1, 2 * n + 1);
        for i in 0..n {
            a[(i, n + i)] = self.dt;
        }
        a
    }

    /// `∂f_d/∂u`.
    pub fn input_jacobian(&self) -> DMatrix<f64> {
        let n = self.n_q;
        let mut b = DMatrix::zeros(2 * n + 1, n);
        for i in 0..n {
            b[(n + i, i)] = self.dt;
        }
        b
    }
}

/// Prismatic base joint along world x followed by two revolute joints with
/// unit links.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlanarArm;

impl PlanarArm {
    pub const N_Q: usize = 3;

    pub fn forward_kinematics<S: Real>(q: &[S]) -> [S; 2] {
        let a = q[1];
        let b = q[1] + q[2];
        [q[0] + a.cos() + b.cos(), a.sin() + b.sin()]
    }

    /// Absolute angle of the second link.
    pub fn tool_angle<S: Real>(q: &[S]) -> S {
        q[1] + q[2]
    }
}

/// End-effector position `(q₁ + cos q₂ + cos(q₂+q₃), sin q₂ + sin(q₂+q₃))`.
pub fn forward_kinematics(q: &[f64]) -> Result<[f64; 2]> {
    if q.len() != PlanarArm::N_Q {
        return Err(Error::dims("joint positions", PlanarArm::N_Q, q.len()));
    }
    Ok(PlanarArm::forward_kinematics(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn st(q: [f64; 3], qd: [f64; 3], t: f64) -> State {
        State::new(DVector::from_row_slice(&q), DVector::from_row_slice(&qd), t).unwrap()
    }

    #[test]
    fn continuous_dynamics_reads_off_double_integrator() {
        let d = continuous_dynamics(&st([0.0; 3], [0.0; 3], 0.0), &ControlInput::from_slice(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(d.dq.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(d.dqdot.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(d.dt, 1.0);

        let d = continuous_dynamics(&st([0.0; 3], [2.0, 0.0, 0.0], 5.0), &ControlInput::zeros(3)).unwrap();
        assert_eq!(d.dq.as_slice(), &[2.0, 0.0, 0.0]);
        assert_eq!(d.dqdot.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(d.dt, 1.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = continuous_dynamics(&st([0.0; 3], [0.0; 3], 0.0), &ControlInput::zeros(2));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        assert!(State::new(DVector::zeros(3), DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn euler_step_examples() {
        let s = step_nominal(&st([0.0; 3], [0.0; 3], 0.0), &ControlInput::from_slice(&[1.0, 0.0, 0.0]), 0.01).unwrap();
        assert_eq!(s.q.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.qdot.as_slice(), &[0.01, 0.0, 0.0]);
        assert_eq!(s.t, 0.01);

        let s0 = st([0.3, -0.2, 1.0], [0.0; 3], 2.0);
        let s = step_nominal(&s0, &ControlInput::zeros(3), 0.01).unwrap();
        assert_eq!(s.q, s0.q);
        assert_eq!(s.t, 2.01);

        let s = step_nominal(&st([0.0; 3], [1.0; 3], 0.0), &ControlInput::zeros(3), 0.01).unwrap();
        assert_eq!(s.q.as_slice(), &[0.01, 0.01, 0.01]);

        assert!(step_nominal(&s0, &ControlInput::zeros(3), 0.0).is_err());
    }

    #[test]
    fn clock_is_consistent_over_many_steps() {
        let mut s = State::at_rest(&[0.0; 3], 0.0);
        let dt = 0.01;
        for k in 1..=1000 {
            s = step_nominal(&s, &ControlInput::zeros(3), dt).unwrap();
            assert!((s.t - k as f64 * dt).abs() < 1e-12);
        }
    }

    #[test]
    fn lag_examples() {
        let s = st([0.0; 3], [0.0; 3], 0.0);
        let lag = ActuatorLag::new(15.0, 3).unwrap();
        let (_, lag2) = step_plant(&s, &lag, &ControlInput::from_slice(&[1.0, 1.0, 1.0]), 0.01).unwrap();
        assert_abs_diff_eq!(lag2.qddot_actual[0], 0.15, epsilon = 1e-15);

        let off = ActuatorLag::new(0.0, 3).unwrap();
        let (_, off2) = step_plant(&s, &off, &ControlInput::from_slice(&[5.0, -3.0, 2.0]), 0.01).unwrap();
        assert_eq!(off2.qddot_actual, off.qddot_actual);

        let mut fixed = ActuatorLag::new(15.0, 3).unwrap();
        fixed.qddot_actual = DVector::from_row_slice(&[0.5, -0.5, 2.0]);
        let (_, fixed2) = step_plant(&s, &fixed, &ControlInput::new(fixed.qddot_actual.clone()), 0.01).unwrap();
        assert_eq!(fixed2.qddot_actual, fixed.qddot_actual);

        assert!(ActuatorLag::new(-1.0, 3).is_err());
        assert!(step_plant(&s, &ActuatorLag::new(300.0, 3).unwrap(), &ControlInput::zeros(3), 0.01).is_err());
    }

    #[test]
    fn plant_matches_nominal_when_lag_is_bypassed() {
        let mut a = st([0.1, 0.2, 0.3], [0.0; 3], 0.0);
        let mut b = a.clone();
        for k in 0..200 {
            let u = ControlInput::from_slice(&[(k as f64 * 0.1).sin(), 1.0, -0.5]);
            let mut lag = ActuatorLag::new(15.0, 3).unwrap();
            lag.qddot_actual = u.qddot_cmd.clone();
            let (na, _) = step_plant(&a, &lag, &u, 0.01).unwrap();
            a = na;
            b = step_nominal(&b, &u, 0.01).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn euler_local_error_is_first_order() {
        // Smooth input u(t) = cos(t) on one joint; exact solution from q̈ = cos t,
        // q(0)=0, q̇(0)=0: q = 1 - cos t, q̇ = sin t.
        let local_error = |dt: f64| {
            let s0 = State::at_rest(&[0.0], 0.0);
            let s1 = step_nominal(&s0, &ControlInput::from_slice(&[1.0]), dt).unwrap();
            let exact_q = 1.0 - dt.cos();
            let exact_qd = dt.sin();
            ((s1.q[0] - exact_q).powi(2) + (s1.qdot[0] - exact_qd).powi(2)).sqrt()
        };
        // local truncation error is O(dt²) per step, i.e. first-order global.
        let r = local_error(1e-2) / local_error(5e-3);
        assert!((r - 4.0).abs() < 0.05, "ratio {r}");
    }

    #[test]
    fn forward_kinematics_examples() {
        let p = forward_kinematics(&[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0);
        assert_abs_diff_eq!(p[1], 0.0);
        let p = forward_kinematics(&[0.5, 0.0, FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(p[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-15);
        let p = forward_kinematics(&[0.0, FRAC_PI_2, -FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-15);
        assert!(forward_kinematics(&[0.0, 0.0]).is_err());
        let _ = PI;
    }

    #[test]
    fn discrete_jacobians_match_step() {
        let d = DiscreteDynamics::euler(3, 0.01).unwrap();
        let x = DVector::from_row_slice(&[0.1, 0.2, 0.3, 1.0, -1.0, 0.5, 2.0]);
        let u = [0.3, -0.7, 1.1];
        let fx = d.step(&x, &u);
        let lin = d.state_jacobian() * &x + d.input_jacobian() * DVector::from_row_slice(&u);
        // affine: f(x,u) = A x + B u + [0; 0; dt]
        let mut off = DVector::zeros(7);
        off[6] = 0.01;
        assert!((fx - lin - off).amax() < 1e-15);
    }
}
