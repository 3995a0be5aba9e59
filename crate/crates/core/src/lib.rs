//! Task-space model predictive control with first-order decay objectives.
//!
//! Modules, bottom up:
//!
//! * [`ad`]: forward-mode dual numbers for Jacobians and task rates.
//! * [`model`]: acceleration-controlled joint dynamics, actuator lag, planar arm kinematics.
//! * [`task`]: task errors, inequality functions and their rates.
//! * [`ocp`]: stage costs, barrier rows, problem assembly.
//! * [`solver`]: Gauss-Newton SQP with Riccati sweeps and an augmented Lagrangian.
//! * [`simloop`]: receding-horizon loop against a nominal or lagged plant, metrics.
//! * [`estimator`]: quadratic surface fit over a rolling sample buffer.
//! * [`surface`]: surface following over an unknown height profile.
//! * [`experiments`]: named, parameterised runs with pass/fail checks and CSV/JSON/SVG output.
//! * [`plot`]: dependency-free SVG line charts.
//! * [`cli`]: the `taskmpc run|report|list` front end.

pub mod ad;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod model;
pub mod ocp;
pub mod plot;
pub mod simloop;
pub mod solver;
pub mod surface;
pub mod task;

pub use error::{Error, Result};
