//! Task-error and inequality functions of the flat state, their chain-rule
//! rates, and Jacobians.
//!
//! A function is written once against [`SmoothFn`] (generic over [`Real`])
//! and automatically becomes usable behind a `dyn StateFn`, which dispatches
//! to the concrete scalar types needed by the solver.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ad::{self, Dual, Jet, Real};
use crate::error::{Error, Result};
use crate::model::{continuous_flat, ControlInput, PlanarArm, State};

/// A smooth map from the flat state `x = [q, q̇, t]` to `Rᵐ`.
pub trait SmoothFn: Send + Sync + 'static {
    fn dim(&self) -> usize;
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]);
}

/// Object-safe view of a [`SmoothFn`]; implemented for every `SmoothFn`.
pub trait StateFn: Send + Sync {
    fn dim(&self) -> usize;
    fn eval_f64(&self, x: &[f64], out: &mut [f64]);
    fn eval_dir(&self, x: &[Dual<f64, 1>], out: &mut [Dual<f64, 1>]);
    fn eval_jet(&self, x: &[Jet], out: &mut [Jet]);
    fn eval_dir_jet(&self, x: &[Dual<Jet, 1>], out: &mut [Dual<Jet, 1>]);
}

impl<T: SmoothFn> StateFn for T {
    fn dim(&self) -> usize {
        SmoothFn::dim(self)
    }
    fn eval_f64(&self, x: &[f64], out: &mut [f64]) {
        self.eval(x, out)
    }
    fn eval_dir(&self, x: &[Dual<f64, 1>], out: &mut [Dual<f64, 1>]) {
        self.eval(x, out)
    }
    fn eval_jet(&self, x: &[Jet], out: &mut [Jet]) {
        self.eval(x, out)
    }
    fn eval_dir_jet(&self, x: &[Dual<Jet, 1>], out: &mut [Dual<Jet, 1>]) {
        self.eval(x, out)
    }
}

/// Scalars the OCP can be evaluated with: `f64` for values and [`Jet`] for
/// first derivatives.
pub trait Scalar: Real {
    fn eval(f: &dyn StateFn, x: &[Self], out: &mut [Self]);
    /// Value of `f` at `x` and its directional derivative along `v`.
    fn eval_along(f: &dyn StateFn, x: &[Self], v: &[Self], val: &mut [Self], rate: &mut [Self]);
}

fn seed<S: Real>(x: &[S], v: &[S]) -> Vec<Dual<S, 1>> {
    x.iter()
        .zip(v)
        .map(|(&re, &d)| Dual { re, eps: [d] })
        .collect()
}

impl Scalar for f64 {
    fn eval(f: &dyn StateFn, x: &[f64], out: &mut [f64]) {
        f.eval_f64(x, out)
    }
    fn eval_along(f: &dyn StateFn, x: &[f64], v: &[f64], val: &mut [f64], rate: &mut [f64]) {
        let xs = seed(x, v);
        let mut out = vec![Dual::<f64, 1>::cst(0.0); val.len()];
        f.eval_dir(&xs, &mut out);
        for (i, o) in out.iter().enumerate() {
            val[i] = o.re;
            rate[i] = o.eps[0];
        }
    }
}

impl Scalar for Jet {
    fn eval(f: &dyn StateFn, x: &[Jet], out: &mut [Jet]) {
        f.eval_jet(x, out)
    }
    fn eval_along(f: &dyn StateFn, x: &[Jet], v: &[Jet], val: &mut [Jet], rate: &mut [Jet]) {
        let xs = seed(x, v);
        let mut out = vec![Dual::<Jet, 1>::cst(0.0); val.len()];
        f.eval_dir_jet(&xs, &mut out);
        for (i, o) in out.iter().enumerate() {
            val[i] = o.re;
            rate[i] = o.eps[0];
        }
    }
}

/// Labelled task error `e(x)`, driven to zero by the controller.
#[derive(Clone)]
pub struct Task {
    pub label: String,
    pub(crate) func: Arc<dyn StateFn>,
}

/// Labelled inequality function `h(x) ≥ 0` (componentwise).
#[derive(Clone)]
pub struct Inequality {
    pub label: String,
    pub(crate) func: Arc<dyn StateFn>,
}

macro_rules! state_function_handle {
    ($ty:ident) => {
        impl $ty {
            pub fn new(label: impl Into<String>, f: impl SmoothFn) -> Self {
                $ty {
                    label: label.into(),
                    func: Arc::new(f),
                }
            }

            pub fn from_arc(label: impl Into<String>, f: Arc<dyn StateFn>) -> Self {
                $ty {
                    label: label.into(),
                    func: f,
                }
            }

            pub fn dim(&self) -> usize {
                self.func.dim()
            }

            pub fn func(&self) -> &dyn StateFn {
                self.func.as_ref()
            }

            pub fn eval_flat(&self, x: &[f64]) -> DVector<f64> {
                let mut out = DVector::zeros(self.dim());
                self.func.eval_f64(x, out.as_mut_slice());
                out
            }

            pub fn eval(&self, state: &State) -> DVector<f64> {
                self.eval_flat(state.to_flat().as_slice())
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_struct(stringify!($ty))
                    .field("label", &self.label)
                    .field("dim", &self.dim())
                    .finish()
            }
        }
    };
}

state_function_handle!(Task);
state_function_handle!(Inequality);

/// Diagonal gain `diag(α₁, α₂, …)` in 1/s. Every entry is strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix(Vec<f64>);

impl GainMatrix {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("gain", format!("entries must be positive and finite, got {a}")));
        }
        Ok(GainMatrix(alphas))
    }

    pub fn uniform(alpha: f64, n: usize) -> Result<Self> {
        Self::new(vec![alpha; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.0))
    }

    /// The common value if every entry is equal.
    pub fn uniform_value(&self) -> Option<f64> {
        let first = *self.0.first()?;
        self.0.iter().all(|&a| a == first).then_some(first)
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonDifferentiable(what.to_string()))
    }
}

/// `ė(x, u) = (∂e/∂x)·f_c(x, u)`, including the explicit time dependence
/// through the clock coordinate.
pub fn error_rate(task: &Task, state: &State, input: &ControlInput) -> Result<DVector<f64>> {
    if input.qddot_cmd.len() != state.n_q() {
        return Err(Error::dims("control input", state.n_q(), input.qddot_cmd.len()));
    }
    let x = state.to_flat();
    let mut v = vec![0.0; x.len()];
    continuous_flat(x.as_slice(), input.qddot_cmd.as_slice(), &mut v);
    let mut val = vec![0.0; task.dim()];
    let mut rate = vec![0.0; task.dim()];
    f64::eval_along(task.func(), x.as_slice(), &v, &mut val, &mut rate);
    check_finite(&task.label, &rate)?;
    Ok(DVector::from_vec(rate))
}

/// Jacobian of a state function at the flat point `x`, by forward-mode AD.
pub fn differentiate(f: &dyn StateFn, x: &[f64]) -> Result<DMatrix<f64>> {
    let (_, jac) = ad::jacobian(x, f.dim(), |xs, out| f.eval_jet(xs, out));
    check_finite("jacobian", jac.as_slice())?;
    Ok(jac)
}

/// End-effector minus the moving target `(cos t, 1.5)` for the planar arm.
#[derive(Clone, Copy, Debug, Default)]
pub struct SinusoidTracking;

impl SmoothFn for SinusoidTracking {
    fn dim(&self) -> usize {
        2
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        let p = PlanarArm::forward_kinematics(&x[..3]);
        let t = x[6];
        out[0] = p[0] - t.cos();
        out[1] = p[1] - 1.5;
    }
}

/// Tracking error of the planar arm against the sinusoidal target.
pub fn tracking_error(state: &State) -> Result<[f64; 2]> {
    if state.n_q() != PlanarArm::N_Q {
        return Err(Error::dims("planar arm state", PlanarArm::N_Q, state.n_q()));
    }
    let mut out = [0.0; 2];
    SinusoidTracking.eval(state.to_flat().as_slice(), &mut out);
    Ok(out)
}

/// End-effector velocity minus the target velocity `(-sin t, 0)`. Its rate
/// depends on the commanded acceleration (relative degree one).
#[derive(Clone, Copy, Debug, Default)]
pub struct SinusoidVelocityTracking;

impl SmoothFn for SinusoidVelocityTracking {
    fn dim(&self) -> usize {
        2
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        let (q2, q3) = (x[1], x[1] + x[2]);
        let (qd1, qd2, qd3) = (x[3], x[4], x[4] + x[5]);
        let vx = qd1 - q2.sin() * qd2 - q3.sin() * qd3;
        let vy = q2.cos() * qd2 + q3.cos() * qd3;
        out[0] = vx + x[6].sin();
        out[1] = vy;
    }
}

/// Affine state function `C·x + d`.
#[derive(Clone, Debug)]
pub struct AffineFn {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl AffineFn {
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        if c.nrows() != d.len() {
            return Err(Error::dims("affine offset", c.nrows(), d.len()));
        }
        Ok(AffineFn { c, d })
    }

    pub fn identity(n: usize) -> Self {
        AffineFn {
            c: DMatrix::identity(n, n),
            d: DVector::zeros(n),
        }
    }
}

impl SmoothFn for AffineFn {
    fn dim(&self) -> usize {
        self.c.nrows()
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = S::cst(self.d[i]);
            for (j, xj) in x.iter().enumerate() {
                let c = self.c[(i, j)];
                if c != 0.0 {
                    acc += *xj * c;
                }
            }
            *o = acc;
        }
    }
}

/// `q - q_ref`.
#[derive(Clone, Debug)]
pub struct JointHold {
    pub q_ref: Vec<f64>,
}

impl SmoothFn for JointHold {
    fn dim(&self) -> usize {
        self.q_ref.len()
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = x[i] - self.q_ref[i];
        }
    }
}

/// Box limits on joint positions and velocities as `h(x) ≥ 0` rows:
/// `[q − q⁻; q⁺ − q; q̇ − q̇⁻; q̇⁺ − q̇]`. Either block may be omitted.
#[derive(Clone, Debug)]
pub struct JointLimits {
    pub n_q: usize,
    pub position: Option<(Vec<f64>, Vec<f64>)>,
    pub velocity: Option<(Vec<f64>, Vec<f64>)>,
}

impl JointLimits {
    pub fn new(
        n_q: usize,
        position: Option<(Vec<f64>, Vec<f64>)>,
        velocity: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        for (name, block) in [("position limits", &position), ("velocity limits", &velocity)] {
            if let Some((lo, hi)) = block {
                if lo.len() != n_q || hi.len() != n_q {
                    return Err(Error::dims("joint limits", n_q, lo.len().min(hi.len())));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::invalid("joint limits", format!("{name} must satisfy lower ≤ upper")));
                }
            }
        }
        Ok(JointLimits {
            n_q,
            position,
            velocity,
        })
    }

    /// Evaluates the limit rows with plain floats.
    pub fn values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; SmoothFn::dim(self)];
        self.eval(x, &mut out);
        out
    }
}

impl SmoothFn for JointLimits {
    fn dim(&self) -> usize {
        2 * self.n_q * (self.position.is_some() as usize + self.velocity.is_some() as usize)
    }
    fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
        let n = self.n_q;
        let mut row = 0;
        for (offset, block) in [(0, &self.position), (n, &self.velocity)] {
            if let Some((lo, hi)) = block {
                for i in 0..n {
                    out[row + i] = x[offset + i] - lo[i];
                    out[row + n + i] = -x[offset + i] + hi[i];
                }
                row += 2 * n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn planar(q: [f64; 3], qd: [f64; 3], t: f64) -> State {
        State::new(DVector::from_row_slice(&q), DVector::from_row_slice(&qd), t).unwrap()
    }

    fn central_jacobian(f: &dyn StateFn, x: &[f64], h: f64) -> DMatrix<f64> {
        let m = f.dim();
        let mut jac = DMatrix::zeros(m, x.len());
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            f.eval_f64(&xp, &mut plus);
            f.eval_f64(&xm, &mut minus);
            for i in 0..m {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn tracking_error_examples() {
        let e = tracking_error(&planar([0.0; 3], [0.0; 3], 0.0)).unwrap();
        assert_abs_diff_eq!(e[0], 1.0);
        assert_abs_diff_eq!(e[1], -1.5);

        let t0: f64 = 0.7;
        // q2 = asin(0.75), q3 = 0 puts the arm at height 1.5; pick q1 so x = cos t0.
        let q2 = 0.75f64.asin();
        let q1 = t0.cos() - 2.0 * q2.cos();
        let e = tracking_error(&planar([q1, q2, 0.0], [0.0; 3], t0)).unwrap();
        assert_abs_diff_eq!(e[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-14);

        let e = tracking_error(&planar([0.0, FRAC_PI_2, -FRAC_PI_2], [0.0; 3], FRAC_PI_2)).unwrap();
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn tracking_error_vanishes_along_the_target_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..20.0);
            let q2: f64 = rng.random_range(0.2..1.3);
            // choose q3 so the height is 1.5: sin(q2) + sin(q2 + q3) = 1.5
            let s = 1.5 - q2.sin();
            if s.abs() > 1.0 {
                continue;
            }
            let q3 = s.asin() - q2;
            let q1 = t.cos() - q2.cos() - (q2 + q3).cos();
            let e = tracking_error(&planar([q1, q2, q3], [0.0; 3], t)).unwrap();
            assert!(e[0].abs() < 1e-12 && e[1].abs() < 1e-12);
        }
    }

    #[test]
    fn error_rate_examples() {
        let task = Task::new("track", SinusoidTracking);
        let r = error_rate(&task, &planar([0.0; 3], [1.0, 0.0, 0.0], 0.0), &ControlInput::from_slice(&[3.0, -2.0, 7.0])).unwrap();
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 0.0, epsilon = 1e-15);

        let r = error_rate(&task, &planar([0.2, 0.4, -0.1], [0.0; 3], FRAC_PI_2), &ControlInput::from_slice(&[1.0, 1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn error_rate_matches_directional_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tasks = [
            Task::new("track", SinusoidTracking),
            Task::new("vel", SinusoidVelocityTracking),
            Task::new(
                "limits",
                JointLimits::new(3, Some((vec![-1.0; 3], vec![1.0; 3])), Some((vec![-2.0; 3], vec![2.0; 3]))).unwrap(),
            ),
        ];
        for _ in 0..100 {
            let q: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let qd: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
            let t = rng.random_range(0.0..10.0);
            let s = planar(q, qd, t);
            let x = s.to_flat();
            let mut f = vec![0.0; 7];
            continuous_flat(x.as_slice(), &u, &mut f);
            for task in &tasks {
                let rate = error_rate(task, &s, &ControlInput::from_slice(&u)).unwrap();
                let h = 1e-6;
                let xp: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - h * b).collect();
                let fd = (task.eval_flat(&xp) - task.eval_flat(&xm)) / (2.0 * h);
                for i in 0..rate.len() {
                    let scale = rate[i].abs().max(1.0);
                    assert!((rate[i] - fd[i]).abs() / scale < 1e-5, "{} {} vs {}", task.label, rate[i], fd[i]);
                }
            }
        }
    }

    #[test]
    fn differentiate_examples() {
        struct Fk;
        impl SmoothFn for Fk {
            fn dim(&self) -> usize {
                2
            }
            fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
                let p = PlanarArm::forward_kinematics(&x[..3]);
                out[0] = p[0];
                out[1] = p[1];
            }
        }
        let j = differentiate(&Fk, &[0.0; 7]).unwrap();
        let want = [[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]];
        for i in 0..2 {
            for k in 0..3 {
                assert_abs_diff_eq!(j[(i, k)], want[i][k], epsilon = 1e-15);
            }
        }

        let j = differentiate(&AffineFn::identity(5), &[0.3, 1.0, -2.0, 0.0, 4.0]).unwrap();
        assert_eq!(j, DMatrix::identity(5, 5));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let ad = differentiate(&SinusoidVelocityTracking, &x).unwrap();
            let fd = central_jacobian(&SinusoidVelocityTracking, &x, 1e-6);
            for (a, b) in ad.iter().zip(fd.iter()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn differentiate_flags_non_differentiable_points() {
        struct Kink;
        impl SmoothFn for Kink {
            fn dim(&self) -> usize {
                1
            }
            fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
                out[0] = x[0].abs();
            }
        }
        assert!(matches!(differentiate(&Kink, &[0.0]), Err(Error::NonDifferentiable(_))));
        assert!(differentiate(&Kink, &[0.5]).is_ok());
    }

    #[test]
    fn differentiate_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        struct Combo(f64, f64);
        impl SmoothFn for Combo {
            fn dim(&self) -> usize {
                2
            }
            fn eval<S: Real>(&self, x: &[S], out: &mut [S]) {
                let mut f = [S::zero(); 2];
                let mut g = [S::zero(); 2];
                SinusoidTracking.eval(x, &mut f);
                SinusoidVelocityTracking.eval(x, &mut g);
                out[0] = f[0] * self.0 + g[0] * self.1;
                out[1] = f[1] * self.0 + g[1] * self.1;
            }
        }
        for _ in 0..20 {
            let a = rng.random_range(-3.0..3.0);
            let b = rng.random_range(-3.0..3.0);
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let jc = differentiate(&Combo(a, b), &x).unwrap();
            let jf = differentiate(&SinusoidTracking, &x).unwrap();
            let jg = differentiate(&SinusoidVelocityTracking, &x).unwrap();
            assert!((jc - (jf * a + jg * b)).amax() < 1e-12);
        }
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(GainMatrix::new(vec![2.0, 0.0]).is_err());
        assert!(GainMatrix::new(vec![2.0, -1.0]).is_err());
        let g = GainMatrix::uniform(2.0, 3).unwrap();
        assert_eq!(g.uniform_value(), Some(2.0));
        assert_eq!(g.to_matrix(), DMatrix::identity(3, 3) * 2.0);
    }

    #[test]
    fn joint_limits_rows() {
        let l = JointLimits::new(1, Some((vec![-1.0], vec![2.0])), Some((vec![-0.5], vec![0.5]))).unwrap();
        let v = l.values(&[0.5, 0.25, 0.0]);
        assert_eq!(v, vec![1.5, 1.5, 0.75, 0.25]);
        assert!(JointLimits::new(1, Some((vec![1.0], vec![0.0])), None).is_err());
    }
}
