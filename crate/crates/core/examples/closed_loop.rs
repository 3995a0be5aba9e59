//! Receding-horizon control of the planar arm against a plant with an
//! actuator lag the controller does not model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{OcpSpec, StageCostSpec};
use taskmpc::simloop::{decay_envelope_check, metrics, run_closed_loop, ClosedLoopConfig, PlantModel};
use taskmpc::task::{GainMatrix, SinusoidTracking, Task};

fn main() -> taskmpc::Result<()> {
    let cost = StageCostSpec::Decay {
        w_s: DMatrix::identity(2, 2),
        k_e: GainMatrix::uniform(2.0, 2)?,
        mu: 1e-5,
        w_r: DMatrix::identity(3, 3),
    };
    let spec = OcpSpec::new(40, DiscreteDynamics::euler(3, 0.01)?, vec![Task::new("track", SinusoidTracking)], cost);
    let mut cfg = ClosedLoopConfig::new(spec, State::at_rest(&[-1.0, PI / 4.0, PI / 2.0], 0.0), 3.0);
    cfg.plant = PlantModel::Lagged { alpha_internal: 15.0 };

    let log = run_closed_loop(&cfg)?;
    let m = metrics(&log)?;
    println!("outcome {:?} after {} ticks", log.outcome, m.ticks);
    println!("rmse e = {:.4?}, final max |e| = {:.2e}", m.rmse, m.final_abs.iter().fold(0.0_f64, |a, b| a.max(*b)));
    println!("solve ms: median {:.3}, max {:.3}", m.solve_time.median_ms, m.solve_time.max_ms);
    let env = decay_envelope_check(&log, 2.0, 0.1);
    println!("decay envelope: max deviation {:.3} of |e(0)|, pass {}", env.max_deviation, env.pass);

    for r in log.ticks.iter().step_by(25) {
        println!("t {:4.2}  e1 {:+.4}  e2 {:+.4}  u {:+.3?}", r.t, r.errors[0], r.errors[1], r.input.as_slice());
    }
    Ok(())
}
