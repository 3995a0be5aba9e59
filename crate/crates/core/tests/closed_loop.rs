//! Solver globalisation and closed-loop bookkeeping on constrained problems.

mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use std::f64::consts::PI;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{assemble, ConstraintSpec, InputBound, OcpSpec, StageCostSpec};
use taskmpc::simloop::{metrics, run_closed_loop, ClosedLoopConfig, PlantModel, RunOutcome};
use taskmpc::solver::{merit, solve, SolverConfig};
use taskmpc::task::{GainMatrix, Inequality, JointLimits, SinusoidTracking, Task};

fn constrained(rng: &mut impl Rng) -> (OcpSpec, State) {
    let (spec, x0) = random_unconstrained(rng, 30);
    let limits = JointLimits::new(3, Some((vec![-2.0, -3.2, -3.2], vec![0.5, 3.2, 3.2])), Some((vec![-1.0; 3], vec![1.0; 3]))).unwrap();
    let h = Inequality::new("limits", limits);
    let gain = Some(GainMatrix::uniform(rng.random_range(1.0..20.0), 12).unwrap());
    let c = if rng.random_bool(0.5) {
        ConstraintSpec::hard(h, gain)
    } else {
        ConstraintSpec::soft(h, gain, vec![10.0; 12])
    };
    let spec = spec.with_constraint(c).with_input_bounds(InputBound::symmetric(rng.random_range(2.0..20.0), 3).unwrap());
    let q = [
        rng.random_range(-1.5..0.3),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
    ];
    (spec, State::at_rest(&q, x0.t))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn accepted_steps_never_increase_the_merit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (spec, x0) = constrained(&mut r);
        let program = assemble(&spec, &x0).unwrap();
        let res = match solve(&program, None, &SolverConfig::default()) {
            Ok(res) => res,
            Err(taskmpc::Error::InfeasibleHardConstraints { partial, .. }) => *partial,
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for s in &res.steps {
            prop_assert!(s.merit_change <= 0.0, "{s:?}");
            prop_assert!(s.merit_after <= s.merit_before, "{s:?}");
        }
    }
}

#[test]
fn recorded_merit_matches_independent_evaluation() {
    let mut r = rng(5);
    let mut checked = 0;
    for _ in 0..20 {
        let (spec, x0) = constrained(&mut r);
        let program = assemble(&spec, &x0).unwrap();
        let cfg = SolverConfig {
            max_sqp_iters: 1,
            ..SolverConfig::default()
        };
        let Ok(res) = solve(&program, None, &cfg) else { continue };
        if let Some(s) = res.steps.first() {
            // one step at the initial multipliers and penalty
            let mut t = res.trajectory.clone();
            t.multipliers.iter_mut().for_each(|m| m.fill(0.0));
            t.penalty = cfg.initial_penalty;
            let direct = merit(&program, &t);
            assert!((direct - s.merit_after).abs() <= 1e-9 * direct.abs().max(1.0), "{direct} vs {s:?}");
            checked += 1;
        }
    }
    assert!(checked >= 10, "only {checked} instances took a step");
}

fn limited(n: usize, duration: f64) -> ClosedLoopConfig {
    let cost = StageCostSpec::Decay {
        w_s: DMatrix::identity(2, 2),
        k_e: GainMatrix::uniform(2.0, 2).unwrap(),
        mu: 1e-5,
        w_r: DMatrix::identity(3, 3),
    };
    let limits = JointLimits::new(3, Some((vec![-2.0, -3.2, -3.2], vec![0.5, 3.2, 3.2])), Some((vec![-0.5; 3], vec![0.5; 3]))).unwrap();
    let spec = OcpSpec::new(n, DiscreteDynamics::euler(3, 0.01).unwrap(), vec![Task::new("track", SinusoidTracking)], cost)
        .with_constraint(ConstraintSpec::hard(Inequality::new("limits", limits), Some(GainMatrix::uniform(2.0, 12).unwrap())))
        .with_input_bounds(InputBound::symmetric(0.5, 3).unwrap());
    let mut cfg = ClosedLoopConfig::new(spec, State::at_rest(&[-1.0, PI / 4.0, PI / 2.0], 0.0), duration);
    cfg.plant = PlantModel::Lagged { alpha_internal: 15.0 };
    cfg.solver.constraint_tol = 1e-8;
    cfg
}

#[test]
fn applied_inputs_respect_bounds_and_limits_hold() {
    let log = run_closed_loop(&limited(10, 3.0)).unwrap();
    assert_eq!(log.outcome, Some(RunOutcome::Completed));
    for r in &log.ticks {
        assert!(r.input.amax() <= 0.5 + 1e-12, "t {} u {:?}", r.t, r.input);
        assert!(r.state.qdot.amax() <= 0.5 + 1e-6);
    }
    assert!(metrics(&log).unwrap().max_violation <= 1e-6);
}

#[test]
fn run_logs_are_deterministic() {
    let a = run_closed_loop(&limited(5, 1.0)).unwrap();
    let b = run_closed_loop(&limited(5, 1.0)).unwrap();
    let strip = |l: &taskmpc::simloop::RunLog| l.ticks.iter().map(|r| (r.t, r.state.clone(), r.input.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}
