//! Robust bipedal walking pattern generation by nonlinear model predictive
//! control.
//!
//! The controller models the robot as a nonlinear inverted pendulum with a
//! flywheel (free CoM height, upper-body angular momentum) and solves, at
//! every control tick, a quadratically constrained quadratic program over
//! future CoM jerks, body-rotation jerks and footstep locations via
//! sequential quadratic programming with a dense active-set inner solver.
//! Zero-moment-point feasibility, step geometry, CoM height, body
//! inclination and hip-torque limits enter as constraints; balance
//! strategies (step adjustment, body rotation, height variation) toggle via
//! equality constraints.
//!
//! The crate also ships a pendulum-level closed-loop simulation harness for
//! stair walking, reference-tracking and push-recovery experiments, plus a
//! scenario file format consumed by the companion CLI.

pub mod assembly;
pub mod gait;
pub mod pendulum;
pub mod scenario;
pub mod sim;
pub mod solver;
