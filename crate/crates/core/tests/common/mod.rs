//! Independent oracles and instance generators shared by the integration
//! tests. Nothing here calls the solver or the estimator under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{DecisionTrajectory, OcpSpec, Program, StageCostSpec};
use taskmpc::task::{AffineFn, GainMatrix, SinusoidTracking, SinusoidVelocityTracking, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Symmetric positive definite matrix with eigenvalues in roughly `[lo, 1 + lo]`.
pub fn random_spd(rng: &mut impl Rng, n: usize, lo: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * lo
}

pub fn random_state(rng: &mut impl Rng) -> State {
    let q = [rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
    let qd = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    State::new(DVector::from_row_slice(&q), DVector::from_row_slice(&qd), rng.random_range(0.0..10.0)).unwrap()
}

pub fn random_input(rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0))
}

pub fn random_decay(rng: &mut impl Rng, m: usize, mu: f64) -> StageCostSpec {
    let gains: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..10.0)).collect();
    StageCostSpec::Decay {
        w_s: random_spd(rng, m, 0.1),
        k_e: GainMatrix::new(gains).unwrap(),
        mu,
        w_r: random_spd(rng, 3, 0.1),
    }
}

pub fn random_cost(rng: &mut impl Rng, m: usize) -> StageCostSpec {
    let mu = log_uniform(rng, 1e-4, 1e-1);
    match rng.random_range(0..3) {
        0 => StageCostSpec::Regulator {
            q: random_spd(rng, m, 0.1),
            mu,
            w_r: random_spd(rng, 3, 0.1),
        },
        1 => StageCostSpec::Damped {
            q_b: random_spd(rng, 2 * m, 0.1),
            mu,
            w_r: random_spd(rng, 3, 0.1),
        },
        _ => random_decay(rng, m, mu),
    }
}

pub fn random_task(rng: &mut impl Rng) -> Task {
    match rng.random_range(0..3) {
        0 => Task::new("position", SinusoidTracking),
        1 => Task::new("velocity", SinusoidVelocityTracking),
        _ => {
            let c = DMatrix::from_fn(2, 7, |_, _| rng.random_range(-1.0..1.0));
            let d = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            Task::new("affine", AffineFn::new(c, d).unwrap())
        }
    }
}

/// Affine task of random dimension `1..=3` on the full state.
pub fn random_affine_task(rng: &mut impl Rng) -> Task {
    let m = rng.random_range(1..=3);
    let c = DMatrix::from_fn(m, 7, |_, _| rng.random_range(-1.0..1.0));
    let d = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    Task::new("affine", AffineFn::new(c, d).unwrap())
}

/// Unconstrained linear-quadratic instance: affine task, any of the three
/// costs, horizon in `1..=max_n`.
pub fn random_lq(rng: &mut impl Rng, max_n: usize) -> (OcpSpec, State) {
    let n = rng.random_range(1..=max_n);
    let dt = rng.random_range(0.005..0.05);
    let task = random_affine_task(rng);
    let cost = random_cost(rng, task.dim());
    let spec = OcpSpec::new(n, DiscreteDynamics::euler(3, dt).unwrap(), vec![task], cost);
    (spec, random_state(rng))
}

/// Unconstrained planar instance with horizon in `1..=max_n`.
pub fn random_unconstrained(rng: &mut impl Rng, max_n: usize) -> (OcpSpec, State) {
    let n = rng.random_range(1..=max_n);
    let dt = rng.random_range(0.005..0.05);
    let task = random_task(rng);
    let cost = random_cost(rng, 2);
    let spec = OcpSpec::new(n, DiscreteDynamics::euler(3, dt).unwrap(), vec![task], cost);
    (spec, random_state(rng))
}

/// Dense stacked-KKT Gauss-Newton on the unconstrained program.
///
/// Unknowns are `[u₀…u_{N−1}, x₁…x_N]`; every iteration factors the full
/// `[[JᵀJ, Gᵀ], [G, 0]]` system with LU and takes the largest step in
/// `{1, ½, ¼, …}` that lowers the total cost.
pub fn dense_kkt_solve(program: &Program) -> DecisionTrajectory {
    let n = program.horizon();
    let (n_x, n_u) = (program.n_x(), program.n_u());
    assert_eq!(program.n_s(), 0, "oracle handles unconstrained programs only");
    let nw = n * n_u + n * n_x;
    let ne = n * n_x;
    let ui = |k: usize| k * n_u;
    let xi = |k: usize| n * n_u + (k - 1) * n_x; // k ≥ 1

    let mut traj = program.cold_start(0.0);
    let cost = |t: &DecisionTrajectory| program.total_cost(t);
    for _ in 0..200 {
        let mut h = DMatrix::<f64>::zeros(nw, nw);
        let mut g = DVector::<f64>::zeros(nw);
        let mut kkt_g = DMatrix::<f64>::zeros(ne, nw);
        let mut rhs_e = DVector::<f64>::zeros(ne);
        for k in 0..n {
            let lin = program.linearize_stage(&traj.states[k], &traj.inputs[k]);
            // columns of this stage's variables in w; x₀ is fixed
            let mut cols: Vec<(usize, usize)> = Vec::new();
            if k > 0 {
                for i in 0..n_x {
                    cols.push((i, xi(k) + i));
                }
            }
            for i in 0..n_u {
                cols.push((n_x + i, ui(k) + i));
            }
            for &(la, wa) in &cols {
                g[wa] += lin.jr.column(la).dot(&lin.r);
                for &(lb, wb) in &cols {
                    h[(wa, wb)] += lin.jr.column(la).dot(&lin.jr.column(lb));
                }
            }
            // x_{k+1} − A x_k − B u_k − c = 0, linearised exactly (dynamics are affine)
            let row = k * n_x;
            let defect = program.step(&traj.states[k], &traj.inputs[k]) - &traj.states[k + 1];
            for i in 0..n_x {
                kkt_g[(row + i, xi(k + 1) + i)] = 1.0;
                rhs_e[row + i] = defect[i];
            }
            if k > 0 {
                for i in 0..n_x {
                    for j in 0..n_x {
                        kkt_g[(row + i, xi(k) + j)] -= program.a()[(i, j)];
                    }
                }
            }
            for i in 0..n_x {
                for j in 0..n_u {
                    kkt_g[(row + i, ui(k) + j)] -= program.b()[(i, j)];
                }
            }
        }
        let mut kkt = DMatrix::<f64>::zeros(nw + ne, nw + ne);
        kkt.view_mut((0, 0), (nw, nw)).copy_from(&h);
        kkt.view_mut((0, nw), (nw, ne)).copy_from(&kkt_g.transpose());
        kkt.view_mut((nw, 0), (ne, nw)).copy_from(&kkt_g);
        let mut rhs = DVector::<f64>::zeros(nw + ne);
        rhs.rows_mut(0, nw).copy_from(&(-&g));
        rhs.rows_mut(nw, ne).copy_from(&rhs_e);
        let sol = kkt.lu().solve(&rhs).expect("KKT matrix singular");
        let dw = sol.rows(0, nw);

        let apply = |t: &DecisionTrajectory, a: f64| {
            let mut c = t.clone();
            for k in 0..n {
                for i in 0..n_u {
                    c.inputs[k][i] += a * dw[ui(k) + i];
                }
                for i in 0..n_x {
                    c.states[k + 1][i] += a * dw[xi(k + 1) + i];
                }
            }
            c
        };
        // full steps once the step is small; cost comparisons there are rounding noise
        let small = dw.amax() < 1e-6;
        let f0 = cost(&traj);
        let mut a = 1.0;
        let mut next = apply(&traj, a);
        while !small && cost(&next) > f0 && a > 1e-12 {
            a *= 0.5;
            next = apply(&traj, a);
        }
        traj = next;
        if dw.amax() * a < 1e-14 * (1.0 + traj.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max)) {
            break;
        }
    }
    traj
}

/// Closed-form planar arm Jacobian `∂p/∂q` and drift `J̇q̇`.
pub fn arm_jacobian(q: &[f64], qd: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let (s2, c2) = q[1].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let j = DMatrix::from_row_slice(2, 3, &[1.0, -s2 - s23, -s23, 0.0, c2 + c23, c23]);
    let w = qd[1] + qd[2];
    let drift = DVector::from_row_slice(&[-c2 * qd[1] * qd[1] - c23 * w * w, -s2 * qd[1] * qd[1] - s23 * w * w]);
    (j, drift)
}

/// Instantaneous first-order controller for the velocity-tracking task:
/// `argmin_u ‖J u + J̇q̇ − a_des + K_e e‖²_{W_s} + μ‖u‖²_{W_r}`, solved from the
/// normal equations.
pub fn instantaneous_qp(
    state: &State,
    w_s: &DMatrix<f64>,
    k_e: &DMatrix<f64>,
    mu: f64,
    w_r: &DMatrix<f64>,
) -> DVector<f64> {
    let q = state.q.as_slice();
    let qd = state.qdot.as_slice();
    let (j, drift) = arm_jacobian(q, qd);
    let t = state.t;
    let v = &j * &state.qdot;
    // target velocity (−sin t, 0) and acceleration (−cos t, 0)
    let e = DVector::from_row_slice(&[v[0] + t.sin(), v[1]]);
    let b = drift + DVector::from_row_slice(&[t.cos(), 0.0]) + k_e * e;
    let lhs = j.transpose() * w_s * &j + w_r * mu;
    let rhs = -(j.transpose() * w_s * b);
    lhs.cholesky().expect("normal matrix not SPD").solve(&rhs)
}

/// Central finite-difference Jacobian.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Relative deviation `|a − b| / max(1, |b|)`, worst entry.
pub fn rel_dev(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn basis(p: &[f64; 3]) -> [f64; 6] {
    let (x, y) = (p[0], p[1]);
    [1.0, x, y, x * y, x * x, y * y]
}

/// Least-squares coefficients `[a₀…a₅]` from the normal equations.
pub fn normal_equations_fit(points: &[[f64; 3]]) -> [f64; 6] {
    let a = DMatrix::from_fn(points.len(), 6, |i, j| basis(&points[i])[j]);
    let z = DVector::from_iterator(points.len(), points.iter().map(|p| p[2]));
    let c = (a.transpose() * &a).cholesky().expect("normal matrix not SPD").solve(&(a.transpose() * z));
    [c[0], c[1], c[2], c[3], c[4], c[5]]
}

/// Three-parameter quadratic `c₀ + c₁x + c₂x²` through `(x, z)` pairs.
pub fn line_fit(points: &[[f64; 3]]) -> [f64; 3] {
    let a = DMatrix::from_fn(points.len(), 3, |i, j| points[i][0].powi(j as i32));
    let z = DVector::from_iterator(points.len(), points.iter().map(|p| p[2]));
    let c = (a.transpose() * &a).cholesky().expect("normal matrix not SPD").solve(&(a.transpose() * z));
    [c[0], c[1], c[2]]
}

pub fn residual_norm(coeffs: &[f64; 6], points: &[[f64; 3]]) -> f64 {
    points
        .iter()
        .map(|p| {
            let b = basis(p);
            let h: f64 = b.iter().zip(coeffs).map(|(u, v)| u * v).sum();
            (h - p[2]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}
