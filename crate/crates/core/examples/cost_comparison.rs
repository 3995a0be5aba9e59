//! The three stage costs on the same problem: regulator, damped and
//! first-order decay, at a short and a long horizon.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{OcpSpec, StageCostSpec};
use taskmpc::simloop::{metrics, run_closed_loop, ClosedLoopConfig};
use taskmpc::task::{GainMatrix, SinusoidTracking, Task};

fn main() -> taskmpc::Result<()> {
    let i3 = || DMatrix::identity(3, 3);
    let costs = [
        StageCostSpec::Regulator {
            q: DMatrix::identity(2, 2),
            mu: 1e-3,
            w_r: i3(),
        },
        StageCostSpec::damped_diag(2, 0.1, 1e-4, i3()),
        StageCostSpec::Decay {
            w_s: DMatrix::identity(2, 2),
            k_e: GainMatrix::uniform(2.0, 2)?,
            mu: 1e-5,
            w_r: i3(),
        },
    ];
    println!("{:<10} {:>3} {:>9} {:>9} {:>8}", "cost", "N", "rmse e1", "final e1", "t_half");
    for cost in &costs {
        for n in [2, 30] {
            let spec = OcpSpec::new(n, DiscreteDynamics::euler(3, 0.01)?, vec![Task::new("track", SinusoidTracking)], cost.clone());
            let cfg = ClosedLoopConfig::new(spec, State::at_rest(&[-1.0, PI / 4.0, PI / 2.0], 0.0), 4.0);
            let m = metrics(&run_closed_loop(&cfg)?)?;
            let th = m.time_to_half[0].map_or("-".into(), |t| format!("{t:.2}"));
            println!("{:<10} {n:>3} {:>9.4} {:>9.4} {th:>8}", cost.name(), m.rmse[0], m.final_abs[0]);
        }
    }
    Ok(())
}
