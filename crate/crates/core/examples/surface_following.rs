//! Surface following over an unknown bump: the controller only sees a
//! look-ahead range sensor and a local quadratic fit of its samples.

use taskmpc::surface::{horizon_sweep, GroundTruthProfile, ScenarioConfig};

fn main() -> taskmpc::Result<()> {
    let cfg = ScenarioConfig::default();
    let terrain = GroundTruthProfile::sine_bump();
    println!("profile {}, v_des {} m/s, lagged plant {:?}", terrain.name(), cfg.v_des, cfg.plant);
    println!("{:>3} {:>11} {:>9} {:>11} {:>10} {:>9}", "N", "rmse [m]", "time [s]", "smoothness", "violation", "med [ms]");
    for run in horizon_sweep(&cfg, &terrain, &[2, 10, 30])? {
        let m = run.metrics;
        println!(
            "{:>3} {:>11.3e} {:>9.2} {:>11.3} {:>10.1e} {:>9.3}",
            m.horizon, m.surface_rmse, m.traverse_time, m.smoothness, m.max_violation, m.solve_time.median_ms
        );
    }
    Ok(())
}
