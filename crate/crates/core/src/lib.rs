//! Joint state and parameter estimation for a one-chamber circulation model
//! with a batch-interval unscented Kalman filter.
//!
//! * [`model`]: elastance heart, valves, arterial and venous compartments.
//! * [`solver`]: event-aware RK4 and steady-state warm-up.
//! * [`ukf`]: sigma points, unscented moments and the measurement update.
//! * [`filter`]: the batch-interval filter and the per-step baseline.
//! * [`synth`]: synthetic targets, plausibility gate and noisy signals.
//! * [`experiments`]: run matrices, heatmaps, convergence and blind state.
//! * [`config`], [`io`]: run configuration and run-directory files.

pub mod config;
pub mod experiments;
pub mod filter;
pub mod io;
pub mod model;
pub mod solver;
pub mod synth;
pub mod ukf;
