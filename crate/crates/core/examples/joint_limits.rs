//! Hard joint position and velocity limits as rate barriers, plus an
//! acceleration box. Longer horizons brake earlier and track better.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use taskmpc::model::{DiscreteDynamics, State};
use taskmpc::ocp::{ConstraintSpec, InputBound, OcpSpec, StageCostSpec};
use taskmpc::simloop::{metrics, run_closed_loop, ClosedLoopConfig, PlantModel};
use taskmpc::task::{GainMatrix, Inequality, JointLimits, SinusoidTracking, Task};

fn main() -> taskmpc::Result<()> {
    let limits = JointLimits::new(
        3,
        Some((vec![-2.0, -3.2, -3.2], vec![0.5, 3.2, 3.2])),
        Some((vec![-0.5; 3], vec![0.5; 3])),
    )?;
    let duration = 10.0;
    for n in [2, 40] {
        let cost = StageCostSpec::Decay {
            w_s: DMatrix::identity(2, 2),
            k_e: GainMatrix::uniform(2.0, 2)?,
            mu: 1e-5,
            w_r: DMatrix::identity(3, 3),
        };
        let spec = OcpSpec::new(n, DiscreteDynamics::euler(3, 0.01)?, vec![Task::new("track", SinusoidTracking)], cost)
            .with_constraint(ConstraintSpec::hard(
                Inequality::new("joint limits", limits.clone()),
                Some(GainMatrix::uniform(2.0, 12)?),
            ))
            .with_input_bounds(InputBound::symmetric(0.5, 3)?);
        let mut cfg = ClosedLoopConfig::new(spec, State::at_rest(&[-1.0, PI / 4.0, PI / 2.0], 0.0), duration);
        cfg.plant = PlantModel::Lagged { alpha_internal: 15.0 };
        cfg.solver.constraint_tol = 1e-8;

        let log = run_closed_loop(&cfg)?;
        let m = metrics(&log)?;
        let tail_peak = log
            .ticks
            .iter()
            .filter(|r| r.t >= duration - 2.0 * PI)
            .map(|r| r.errors[0].abs())
            .fold(0.0, f64::max);
        let margin = log
            .ticks
            .iter()
            .flat_map(|r| r.constraints.iter().copied())
            .fold(f64::INFINITY, f64::min);
        println!(
            "N={n:<3} peak |e1| last period {tail_peak:.4}  max violation {:.1e}  smallest margin {margin:.4}  median solve {:.3} ms",
            m.max_violation, m.solve_time.median_ms
        );
    }
    Ok(())
}
