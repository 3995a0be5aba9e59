//! One open-loop solve of the decay-cost problem from a resting pose.
//!
//! Prints the predicted task error along the horizon next to the ideal
//! exponential `e(0)e^{-k t}`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{assemble, OcpSpec, StageCostSpec};
use taskmpc::solver::{solve, SolverConfig};
use taskmpc::task::{GainMatrix, SinusoidTracking, Task};

fn main() -> taskmpc::Result<()> {
    let k = 2.0;
    let cost = StageCostSpec::Decay {
        w_s: DMatrix::identity(2, 2),
        k_e: GainMatrix::uniform(k, 2)?,
        mu: 1e-5,
        w_r: DMatrix::identity(3, 3),
    };
    let dt = 0.01;
    let spec = OcpSpec::new(40, DiscreteDynamics::euler(3, dt)?, vec![Task::new("track", SinusoidTracking)], cost);
    let x0 = State::at_rest(&[-1.0, PI / 4.0, PI / 2.0], 0.0);
    let program = assemble(&spec, &x0)?;

    let res = solve(&program, None, &SolverConfig::default())?;
    println!(
        "status {:?} after {} iterations, kkt {:.2e}, cost {:.4e}",
        res.status, res.iterations, res.kkt_residual, res.cost
    );
    println!("u0 = {:.4?}", res.trajectory.inputs[0].as_slice());

    let task = &spec.tasks[0];
    let e0 = task.eval_flat(res.trajectory.states[0].as_slice())[0];
    println!("{:>6} {:>10} {:>10}", "t", "e1", "ideal");
    for (i, x) in res.trajectory.states.iter().enumerate().step_by(5) {
        let t = i as f64 * dt;
        println!("{t:>6.2} {:>10.5} {:>10.5}", task.eval_flat(x.as_slice())[0], e0 * (-k * t).exp());
    }
    Ok(())
}
