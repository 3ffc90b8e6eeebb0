//! Scenario files: a single TOML document describing one walking episode.
//!
//! Keys carry explicit units (`step_length_m`, `dt_ctrl_s`, `force_x_n`).
//! Every section except the step sequence and the episode length has
//! defaults, so a minimal scenario is about ten lines. Unknown keys are
//! rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{Bounds, StrategyToggles, Weights};
use crate::gait::{FootstepPlan, GaitError, ReferenceOverrides, Side, StepSpec};
use crate::pendulum::ModelParams;
use crate::sim::{Disturbance, SimConfig};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One step entry of the scenario's gait table; `repeat` expands it into
/// that many consecutive cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub length_m: f64,
    pub width_m: f64,
    #[serde(default)]
    pub height_m: f64,
    pub duration_s: f64,
    #[serde(default = "one")]
    pub repeat: usize,
}

fn one() -> usize {
    1
}

impl StepEntry {
    pub fn spec(&self) -> StepSpec {
        StepSpec {
            length_m: self.length_m,
            width_m: self.width_m,
            height_m: self.height_m,
            duration_s: self.duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub bounds: Bounds,
    /// Explicit toggles; mutually exclusive with `strategy`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toggles: Option<StrategyToggles>,
    /// Named strategy 1–4 as a shortcut for the toggle combinations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<u8>,
    pub steps: Vec<StepEntry>,
    #[serde(default)]
    pub initial_side: InitialSide,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    #[serde(default, skip_serializing_if = "is_default_overrides")]
    pub overrides: ReferenceOverrides,
    pub sim: SimConfig,
}

fn is_default_overrides(o: &ReferenceOverrides) -> bool {
    o == &ReferenceOverrides::default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialSide {
    #[default]
    Left,
    Right,
}

impl From<InitialSide> for Side {
    fn from(s: InitialSide) -> Side {
        match s {
            InitialSide::Left => Side::Left,
            InitialSide::Right => Side::Right,
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Resolved strategy toggles (explicit toggles, named strategy, or the
    /// all-enabled default).
    pub fn resolved_toggles(&self) -> Result<StrategyToggles, ScenarioError> {
        match (self.toggles, self.strategy) {
            (Some(_), Some(_)) => Err(ScenarioError::Invalid(
                "specify either `toggles` or `strategy`, not both".into(),
            )),
            (Some(t), None) => Ok(t),
            (None, Some(n)) => StrategyToggles::strategy(n).ok_or_else(|| {
                ScenarioError::Invalid(format!("strategy must be 1..=4, got {n}"))
            }),
            (None, None) => Ok(StrategyToggles::default()),
        }
    }

    /// Expanded step sequence (repeats applied).
    pub fn step_sequence(&self) -> Vec<StepSpec> {
        self.steps
            .iter()
            .flat_map(|e| std::iter::repeat(e.spec()).take(e.repeat.max(1)))
            .collect()
    }

    /// Footstep plan covering the whole episode plus the horizon.
    pub fn footstep_plan(&self) -> Result<FootstepPlan, GaitError> {
        let steps = self.step_sequence();
        let duration = steps[0].duration_s;
        let horizon_s = self.sim.horizon_samples as f64 * self.sim.dt_mpc_s;
        let cycles = ((self.sim.total_s + horizon_s) / duration).ceil() as usize
            + self.sim.future_steps
            + 2;
        FootstepPlan::from_steps(&steps, self.initial_side.into(), cycles)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |msg: String| Err(ScenarioError::Invalid(msg));
        if self.name.is_empty() {
            return fail("scenario needs a name".into());
        }
        self.model.validate().or_else(|e| fail(format!("model: {e}")))?;
        self.weights
            .validate()
            .or_else(|e| fail(format!("weights: {e}")))?;
        self.bounds
            .validate()
            .or_else(|e| fail(format!("bounds: {e}")))?;
        self.resolved_toggles()?;
        self.sim.validate().or_else(|e| fail(format!("sim: {e}")))?;
        if self.steps.is_empty() {
            return fail("at least one step entry is required".into());
        }
        let duration = self.steps[0].duration_s;
        for (i, e) in self.steps.iter().enumerate() {
            if !(e.duration_s > 0.0) {
                return fail(format!("steps[{i}]: duration must be positive"));
            }
            if (e.duration_s - duration).abs() > 1e-12 {
                return fail(format!("steps[{i}]: all cycles must share one duration"));
            }
            if e.repeat == 0 {
                return fail(format!("steps[{i}]: repeat must be at least 1"));
            }
            let b = &self.bounds;
            if e.length_m < b.step_x_min_m - 1e-9 || e.length_m > b.step_x_max_m + 1e-9 {
                return fail(format!(
                    "steps[{i}]: length {} outside feasible range [{}, {}]",
                    e.length_m, b.step_x_min_m, b.step_x_max_m
                ));
            }
            if e.width_m < b.step_width_min_m - 1e-9 || e.width_m > b.step_width_max_m + 1e-9 {
                return fail(format!(
                    "steps[{i}]: width {} outside feasible range [{}, {}]",
                    e.width_m, b.step_width_min_m, b.step_width_max_m
                ));
            }
        }
        if self.sim.dt_mpc_s * self.sim.horizon_samples as f64
            > duration * (self.sim.future_steps + 1) as f64
        {
            return fail(format!(
                "horizon {} s cannot be covered by {} future steps of {} s",
                self.sim.dt_mpc_s * self.sim.horizon_samples as f64,
                self.sim.future_steps,
                duration
            ));
        }
        for (i, d) in self.disturbances.iter().enumerate() {
            if !(d.duration_s > 0.0) {
                return fail(format!("disturbances[{i}]: duration must be positive"));
            }
            if d.start_s < 0.0 {
                return fail(format!("disturbances[{i}]: start must be non-negative"));
            }
        }
        for profile in [&self.overrides.pendulum_height, &self.overrides.pitch]
            .into_iter()
            .flatten()
        {
            let mut last = f64::NEG_INFINITY;
            for &(t, _) in &profile.points {
                if t < last {
                    return fail("override profile knots must be time-ordered".into());
                }
                last = t;
            }
        }
        Ok(())
    }
}
