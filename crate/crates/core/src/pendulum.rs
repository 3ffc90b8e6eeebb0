//! Nonlinear inverted pendulum plus flywheel model (NIPFM).
//!
//! A point mass on a massless telescopic leg carries a flywheel whose roll
//! and pitch rotation model upper-body angular momentum. The CoM height is
//! free, which makes the zero-moment-point map nonlinear in the state. This
//! module also provides the constant-jerk integrator used both as the
//! prediction model and as the simulated plant, plus the stacked prediction
//! matrices that map an initial state and a jerk sequence to position,
//! velocity and acceleration sequences over a horizon.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PendulumError {
    /// The vertical dynamics degenerate when gravity plus vertical CoM
    /// acceleration is not positive (free fall): the ZMP is undefined.
    #[error("degenerate dynamics: g + com z acceleration must be positive")]
    DegenerateDynamics,
}

/// Physical parameters of the lumped model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Total mass (kg).
    #[serde(rename = "mass_kg")]
    pub mass: f64,
    /// Gravitational acceleration (m/s²).
    #[serde(rename = "gravity_m_s2")]
    pub gravity: f64,
    /// Flywheel moment of inertia about the x axis (roll), kg·m².
    #[serde(rename = "inertia_roll_kg_m2")]
    pub inertia_roll: f64,
    /// Flywheel moment of inertia about the y axis (pitch), kg·m².
    #[serde(rename = "inertia_pitch_kg_m2")]
    pub inertia_pitch: f64,
    /// Default inverted pendulum height (m), i.e. nominal CoM height above
    /// the supporting foot.
    #[serde(rename = "pendulum_height_m")]
    pub pendulum_height: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        // COMAN-scale reference configuration.
        Self {
            mass: 31.0,
            gravity: 9.81,
            inertia_roll: 1.0,
            inertia_pitch: 1.0,
            pendulum_height: 0.467,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("mass_kg", self.mass),
            ("gravity_m_s2", self.gravity),
            ("inertia_roll_kg_m2", self.inertia_roll),
            ("inertia_pitch_kg_m2", self.inertia_pitch),
            ("pendulum_height_m", self.pendulum_height),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Position, velocity and acceleration of one scalar motion channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisState {
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
}

impl AxisState {
    pub const fn new(pos: f64, vel: f64, acc: f64) -> Self {
        Self { pos, vel, acc }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite() && self.acc.is_finite()
    }
}

/// The five motion channels of the model, in decision-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionChannel {
    ComX,
    ComY,
    ComZ,
    Roll,
    Pitch,
}

impl MotionChannel {
    pub const ALL: [MotionChannel; 5] = [
        MotionChannel::ComX,
        MotionChannel::ComY,
        MotionChannel::ComZ,
        MotionChannel::Roll,
        MotionChannel::Pitch,
    ];
}

/// Full feedback state: 3D CoM plus the two flywheel angles, each with
/// velocity and acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PendulumState {
    pub com_x: AxisState,
    pub com_y: AxisState,
    pub com_z: AxisState,
    pub roll: AxisState,
    pub pitch: AxisState,
}

/// Jerk command for one control interval, one value per motion channel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JerkCommand {
    pub com_x: f64,
    pub com_y: f64,
    pub com_z: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl JerkCommand {
    pub fn channel(&self, ch: MotionChannel) -> f64 {
        match ch {
            MotionChannel::ComX => self.com_x,
            MotionChannel::ComY => self.com_y,
            MotionChannel::ComZ => self.com_z,
            MotionChannel::Roll => self.roll,
            MotionChannel::Pitch => self.pitch,
        }
    }
}

impl PendulumState {
    /// State at rest with the CoM directly above `support` at pendulum
    /// height; statically stable (ZMP under the CoM).
    pub fn standing_over(support: [f64; 3], params: &ModelParams) -> Self {
        Self {
            com_x: AxisState::new(support[0], 0.0, 0.0),
            com_y: AxisState::new(support[1], 0.0, 0.0),
            com_z: AxisState::new(support[2] + params.pendulum_height, 0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn channel(&self, ch: MotionChannel) -> AxisState {
        match ch {
            MotionChannel::ComX => self.com_x,
            MotionChannel::ComY => self.com_y,
            MotionChannel::ComZ => self.com_z,
            MotionChannel::Roll => self.roll,
            MotionChannel::Pitch => self.pitch,
        }
    }

    pub fn channel_mut(&mut self, ch: MotionChannel) -> &mut AxisState {
        match ch {
            MotionChannel::ComX => &mut self.com_x,
            MotionChannel::ComY => &mut self.com_y,
            MotionChannel::ComZ => &mut self.com_z,
            MotionChannel::Roll => &mut self.roll,
            MotionChannel::Pitch => &mut self.pitch,
        }
    }

    pub fn is_finite(&self) -> bool {
        MotionChannel::ALL.iter().all(|&ch| self.channel(ch).is_finite())
    }

    /// Advance every channel by one constant-jerk interval.
    pub fn step(&self, jerks: &JerkCommand, dt: f64) -> Self {
        let mut next = *self;
        for ch in MotionChannel::ALL {
            *next.channel_mut(ch) = step_axis(self.channel(ch), jerks.channel(ch), dt);
        }
        next
    }
}

/// Zero moment point of the NIPFM.
///
/// `support_z` is the height of the supporting foot; the returned point lies
/// in that plane. The pitch momentum rate subtracts from the sagittal ZMP and
/// the roll momentum rate adds to the coronal ZMP.
pub fn zmp(
    state: &PendulumState,
    support_z: f64,
    params: &ModelParams,
) -> Result<[f64; 3], PendulumError> {
    let gz = params.gravity + state.com_z.acc;
    if gz <= 0.0 {
        return Err(PendulumError::DegenerateDynamics);
    }
    let lever = (state.com_z.pos - support_z) / gz;
    let p_x = state.com_x.pos
        - lever * state.com_x.acc
        - params.inertia_pitch * state.pitch.acc / (params.mass * gz);
    let p_y = state.com_y.pos
        - lever * state.com_y.acc
        + params.inertia_roll * state.roll.acc / (params.mass * gz);
    Ok([p_x, p_y, support_z])
}

/// One constant-jerk Euler step of a single channel.
pub fn step_axis(state: AxisState, jerk: f64, dt: f64) -> AxisState {
    debug_assert!(dt > 0.0);
    AxisState {
        pos: state.pos + dt * state.vel + 0.5 * dt * dt * state.acc
            + dt * dt * dt / 6.0 * jerk,
        vel: state.vel + dt * state.acc + 0.5 * dt * dt * jerk,
        acc: state.acc + dt * jerk,
    }
}

/// Stacked prediction matrices for one (dt, horizon) pair.
///
/// For an initial channel state `x` and a jerk sequence `u` of length
/// `horizon`, the predicted positions are `p_ps * x + p_pu * u`, and
/// analogously for velocities (`p_vs`, `p_vu`) and accelerations
/// (`p_as`, `p_au`). The input maps are lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub p_ps: DMatrix<f64>,
    pub p_vs: DMatrix<f64>,
    pub p_as: DMatrix<f64>,
    pub p_pu: DMatrix<f64>,
    pub p_vu: DMatrix<f64>,
    pub p_au: DMatrix<f64>,
    pub dt: f64,
    pub horizon: usize,
}

/// Build the prediction matrices by applying the one-step recursion
/// `horizon` times.
pub fn build_prediction(dt: f64, horizon: usize) -> PredictionMatrices {
    assert!(dt > 0.0, "prediction interval must be positive");
    assert!(horizon >= 1, "horizon must contain at least one sample");

    let n = horizon;
    let mut p_ps = DMatrix::zeros(n, 3);
    let mut p_vs = DMatrix::zeros(n, 3);
    let mut p_as = DMatrix::zeros(n, 3);
    let mut p_pu = DMatrix::zeros(n, n);
    let mut p_vu = DMatrix::zeros(n, n);
    let mut p_au = DMatrix::zeros(n, n);

    // Rows of A^(i+1): propagate each unit initial condition forward.
    let units = [
        AxisState::new(1.0, 0.0, 0.0),
        AxisState::new(0.0, 1.0, 0.0),
        AxisState::new(0.0, 0.0, 1.0),
    ];
    for (col, unit) in units.iter().enumerate() {
        let mut s = *unit;
        for i in 0..n {
            s = step_axis(s, 0.0, dt);
            p_ps[(i, col)] = s.pos;
            p_vs[(i, col)] = s.vel;
            p_as[(i, col)] = s.acc;
        }
    }

    // Column j is the response at samples j.. to a unit jerk on interval j:
    // one step with unit jerk from rest, then free propagation.
    for j in 0..n {
        let mut s = step_axis(AxisState::default(), 1.0, dt);
        for i in j..n {
            p_pu[(i, j)] = s.pos;
            p_vu[(i, j)] = s.vel;
            p_au[(i, j)] = s.acc;
            s = step_axis(s, 0.0, dt);
        }
    }

    PredictionMatrices {
        p_ps,
        p_vs,
        p_as,
        p_pu,
        p_vu,
        p_au,
        dt,
        horizon,
    }
}

impl PredictionMatrices {
    /// Predicted position sequence for one channel.
    pub fn positions(&self, state: AxisState, jerks: &DVector<f64>) -> DVector<f64> {
        &self.p_ps * state_vec(state) + &self.p_pu * jerks
    }

    pub fn velocities(&self, state: AxisState, jerks: &DVector<f64>) -> DVector<f64> {
        &self.p_vs * state_vec(state) + &self.p_vu * jerks
    }

    pub fn accelerations(&self, state: AxisState, jerks: &DVector<f64>) -> DVector<f64> {
        &self.p_as * state_vec(state) + &self.p_au * jerks
    }
}

fn state_vec(s: AxisState) -> DVector<f64> {
    DVector::from_column_slice(&[s.pos, s.vel, s.acc])
}
