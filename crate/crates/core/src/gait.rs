//! Footstep schedule, horizon mapping and reference trajectories.
//!
//! Walking is a sequence of single-support cycles of fixed duration. The
//! plan stores the absolute reference support location for every cycle plus
//! the realized current support; the mapping distributes the prediction
//! horizon's samples over the current cycle and the future steps, which is
//! what ties footstep decision variables to per-sample support locations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("horizon of {horizon_s} s needs {needed} future steps but only {available} are modeled")]
    HorizonOverrun {
        horizon_s: f64,
        needed: usize,
        available: usize,
    },
    #[error("invalid step specification: {0}")]
    InvalidStep(String),
}

/// One reference step: displacement of the landing foot relative to the
/// previous support, plus the cycle duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Lateral direction a foot of this side sits at relative to the body
    /// centerline: left feet at +y.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// Reference footstep schedule plus realized current-support bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FootstepPlan {
    /// Absolute reference support locations, one per cycle; index 0 is the
    /// initial stance.
    refs: Vec<[f64; 3]>,
    /// Support side per cycle, aligned with `refs`.
    sides: Vec<Side>,
    /// Index of the current cycle.
    cycle: usize,
    /// Realized current support location (may deviate from the reference
    /// after reactive stepping).
    support: [f64; 3],
    /// Cycle duration T.
    pub cycle_duration: f64,
    /// Time already spent in the current cycle.
    pub elapsed: f64,
}

impl FootstepPlan {
    /// Build a plan from a step sequence. The sequence is extended by
    /// repeating its last entry until at least `min_cycles` cycles are
    /// covered. The initial stance is `initial_side` at the lateral offset
    /// of half the first step width, so the feet straddle the centerline.
    pub fn from_steps(
        steps: &[StepSpec],
        initial_side: Side,
        min_cycles: usize,
    ) -> Result<Self, GaitError> {
        if steps.is_empty() {
            return Err(GaitError::InvalidStep("empty step sequence".into()));
        }
        let duration = steps[0].duration_s;
        for (i, s) in steps.iter().enumerate() {
            if !(s.duration_s > 0.0) {
                return Err(GaitError::InvalidStep(format!(
                    "step {i} has non-positive duration"
                )));
            }
            if (s.duration_s - duration).abs() > 1e-12 {
                return Err(GaitError::InvalidStep(
                    "all cycles must share one duration".into(),
                ));
            }
            if s.width_m < 0.0 {
                return Err(GaitError::InvalidStep(format!("step {i} has negative width")));
            }
        }

        let n_cycles = min_cycles.max(steps.len() + 1);
        let mut refs = Vec::with_capacity(n_cycles);
        let mut sides = Vec::with_capacity(n_cycles);
        let initial = [0.0, initial_side.sign() * steps[0].width_m / 2.0, 0.0];
        refs.push(initial);
        sides.push(initial_side);
        for c in 1..n_cycles {
            let spec = steps[(c - 1).min(steps.len() - 1)];
            let prev = refs[c - 1];
            let side = sides[c - 1].other();
            refs.push([
                prev[0] + spec.length_m,
                prev[1] + side.sign() * spec.width_m,
                prev[2] + spec.height_m,
            ]);
            sides.push(side);
        }
        Ok(Self {
            refs,
            sides,
            cycle: 0,
            support: initial,
            cycle_duration: duration,
            elapsed: 0.0,
        })
    }

    pub fn support(&self) -> [f64; 3] {
        self.support
    }

    pub fn support_side(&self) -> Side {
        self.sides[self.cycle]
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle
    }

    /// Reference support location of the cycle `offset` cycles ahead of the
    /// current one (0 = current). Clamps at the end of the schedule.
    pub fn reference(&self, offset: usize) -> [f64; 3] {
        let idx = (self.cycle + offset).min(self.refs.len() - 1);
        self.refs[idx]
    }

    /// Side of the step landing `offset` cycles ahead (offset ≥ 1).
    pub fn side_of(&self, offset: usize) -> Side {
        let idx = (self.cycle + offset).min(self.sides.len() - 1);
        self.sides[idx]
    }

    pub fn remaining_in_cycle(&self) -> f64 {
        (self.cycle_duration - self.elapsed).max(0.0)
    }

    /// Advance time by one control tick; on cycle rollover the realized
    /// next step becomes the new support and the cycle index shifts.
    /// Returns the new plan and whether a rollover happened.
    pub fn advance(&self, dt: f64, realized_next_step: [f64; 3]) -> (Self, bool) {
        let mut next = self.clone();
        next.elapsed += dt;
        if next.elapsed + 1e-9 >= next.cycle_duration {
            next.elapsed -= next.cycle_duration;
            if next.cycle + 1 < next.refs.len() {
                next.cycle += 1;
            }
            next.support = realized_next_step;
            (next, true)
        } else {
            (next, false)
        }
    }
}

/// Distribution of the horizon samples over support cycles.
///
/// `current[i]` is 1.0 when sample i is supported by the current stance
/// foot; `future` maps future-step locations to samples (one 1.0 per row
/// otherwise zero). `cycle_offset[i]` gives the step index (0 = current
/// cycle, k ≥ 1 = k-th future step).
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMapping {
    pub current: DVector<f64>,
    pub future: DMatrix<f64>,
    pub cycle_offset: Vec<usize>,
    pub future_steps: usize,
}

impl HorizonMapping {
    /// Per-sample support value `e_c·d̂ + E_c·d` for one axis.
    pub fn support_sequence(&self, current_support: f64, future_vals: &DVector<f64>) -> DVector<f64> {
        &self.current * current_support + &self.future * future_vals
    }
}

/// Assign each of the `horizon` samples (at times `(i+1)·dt` from now) to
/// the current cycle or to one of `future_steps` future steps.
pub fn build_mapping(
    plan: &FootstepPlan,
    dt: f64,
    horizon: usize,
    future_steps: usize,
) -> Result<HorizonMapping, GaitError> {
    let remaining = plan.remaining_in_cycle();
    let t_cycle = plan.cycle_duration;
    let mut current = DVector::zeros(horizon);
    let mut future = DMatrix::zeros(horizon, future_steps);
    let mut cycle_offset = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let t = (i + 1) as f64 * dt;
        if t <= remaining + 1e-9 {
            current[i] = 1.0;
            cycle_offset.push(0);
        } else {
            let k = ((t - remaining) / t_cycle - 1e-9).floor() as usize + 1;
            if k > future_steps {
                return Err(GaitError::HorizonOverrun {
                    horizon_s: horizon as f64 * dt,
                    needed: k,
                    available: future_steps,
                });
            }
            future[(i, k - 1)] = 1.0;
            cycle_offset.push(k);
        }
    }
    Ok(HorizonMapping {
        current,
        future,
        cycle_offset,
        future_steps,
    })
}

/// Piecewise-linear profile over absolute time, clamped at both ends.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Profile {
    /// (time s, value) knots in non-decreasing time order.
    pub points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn eval(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        if pts.is_empty() {
            return None;
        }
        if t <= pts[0].0 {
            return Some(pts[0].1);
        }
        for w in pts.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t <= t1 {
                if t1 - t0 <= 0.0 {
                    return Some(v1);
                }
                return Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0));
            }
        }
        Some(pts[pts.len() - 1].1)
    }
}

/// Optional time-varying overrides of the default references.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceOverrides {
    /// Pendulum height reference h(t) replacing the constant default.
    pub pendulum_height: Option<Profile>,
    /// Pitch angle reference θ_p(t) replacing zero.
    pub pitch: Option<Profile>,
}

/// Per-sample and per-future-step references consumed by the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBundle {
    pub com_x: DVector<f64>,
    pub com_y: DVector<f64>,
    pub com_z: DVector<f64>,
    pub roll: DVector<f64>,
    pub pitch: DVector<f64>,
    pub step_x: DVector<f64>,
    pub step_y: DVector<f64>,
    pub step_z: DVector<f64>,
}

/// Build references over the horizon.
///
/// Horizontal CoM references sit at the midpoint of a sample's reference
/// support location and the subsequent step's reference; the height
/// reference is the pendulum height on top of the sample's reference step
/// height; angle references are zero. Overrides replace the pendulum height
/// and pitch profiles with time-varying values (evaluated at each sample's
/// absolute time).
pub fn build_references(
    plan: &FootstepPlan,
    mapping: &HorizonMapping,
    pendulum_height: f64,
    overrides: &ReferenceOverrides,
    now: f64,
    dt: f64,
) -> ReferenceBundle {
    let n = mapping.cycle_offset.len();
    let nf = mapping.future_steps;
    let mut com_x = DVector::zeros(n);
    let mut com_y = DVector::zeros(n);
    let mut com_z = DVector::zeros(n);
    let roll = DVector::zeros(n);
    let mut pitch = DVector::zeros(n);

    for i in 0..n {
        let k = mapping.cycle_offset[i];
        let here = plan.reference(k);
        let next = plan.reference(k + 1);
        com_x[i] = 0.5 * (here[0] + next[0]);
        com_y[i] = 0.5 * (here[1] + next[1]);
        let t_sample = now + (i + 1) as f64 * dt;
        let h = overrides
            .pendulum_height
            .as_ref()
            .and_then(|p| p.eval(t_sample))
            .unwrap_or(pendulum_height);
        com_z[i] = h + here[2];
        if let Some(p) = overrides.pitch.as_ref().and_then(|p| p.eval(t_sample)) {
            pitch[i] = p;
        }
    }

    let step_x = DVector::from_fn(nf, |k, _| plan.reference(k + 1)[0]);
    let step_y = DVector::from_fn(nf, |k, _| plan.reference(k + 1)[1]);
    let step_z = DVector::from_fn(nf, |k, _| plan.reference(k + 1)[2]);

    ReferenceBundle {
        com_x,
        com_y,
        com_z,
        roll,
        pitch,
        step_x,
        step_y,
        step_z,
    }
}

/// Quintic interpolation with zero boundary velocity and acceleration.
fn quintic(from: f64, to: f64, duration: f64, t: f64) -> f64 {
    let s = (t / duration).clamp(0.0, 1.0);
    let blend = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    from + (to - from) * blend
}

/// Swing-foot position between two supports.
///
/// Horizontal channels follow one quintic over the full duration; the
/// vertical channel chains two quintics through an apex of
/// `max(from_z, to_z) + apex` at mid-time. Boundary velocities and
/// accelerations vanish at lift-off, apex and touchdown.
pub fn swing_foot_trajectory(
    from: [f64; 3],
    to: [f64; 3],
    duration: f64,
    apex: f64,
    t: f64,
) -> [f64; 3] {
    let t = t.clamp(0.0, duration);
    let x = quintic(from[0], to[0], duration, t);
    let y = quintic(from[1], to[1], duration, t);
    let apex_z = from[2].max(to[2]) + apex;
    let half = duration / 2.0;
    let z = if t <= half {
        quintic(from[2], apex_z, half, t)
    } else {
        quintic(apex_z, to[2], half, t - half)
    };
    [x, y, z]
}
