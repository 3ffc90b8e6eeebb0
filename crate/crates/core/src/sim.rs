//! Closed-loop pendulum-level simulation.
//!
//! The plant is the same triple-integrator model the controller predicts
//! with, so the only disturbances are the injected pushes. Each control
//! tick rebuilds references and the QCQP from the measured state, solves it
//! warm-started, applies the first jerk of every channel for one tick, and
//! advances the footstep plan at cycle rollovers using the solved next-step
//! location.
//!
//! Episodes report `Completed`, `Fallen` (realized ZMP outside the foot box
//! beyond the margin for three consecutive checks, or CoM diverged from the
//! support) or `SolverFailed`. On top of single episodes the module
//! provides the push-magnitude bisection search and the solver-budget
//! timing sweep, plus the built-in scenario catalog.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{build_problem, AssemblyInput, Layout, StrategyToggles};
use crate::gait::{
    build_mapping, build_references, swing_foot_trajectory, FootstepPlan, GaitError, Profile,
    ReferenceOverrides, Side,
};
use crate::pendulum::{
    build_prediction, zmp, JerkCommand, MotionChannel, PendulumState, PredictionMatrices,
};
use crate::scenario::{Scenario, StepEntry};
use crate::solver::{SolverError, SqpSettings, SqpSolver};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error("solver construction failed: {0}")]
    Solver(#[from] SolverError),
}

/// External push applied at the pelvis (the modeled CoM).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub force_x_n: f64,
    #[serde(default)]
    pub force_y_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Control tick: the loop re-solves and applies jerks at this rate.
    pub dt_ctrl_s: f64,
    /// Prediction-horizon sample spacing.
    pub dt_mpc_s: f64,
    pub horizon_samples: usize,
    pub future_steps: usize,
    /// Episode length.
    pub total_s: f64,
    /// Swing-foot apex over the higher of the two supports (output only).
    pub swing_apex_m: f64,
    /// ZMP may exceed the foot box by this much before counting as a
    /// violation.
    pub zmp_fail_margin_m: f64,
    /// Horizontal CoM-to-support distance counting as a fall.
    pub com_divergence_m: f64,
    pub sqp: SqpSettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_ctrl_s: 0.005,
            dt_mpc_s: 0.05,
            horizon_samples: 31,
            future_steps: 2,
            total_s: 5.6,
            swing_apex_m: 0.05,
            zmp_fail_margin_m: 0.005,
            com_divergence_m: 0.5,
            sqp: SqpSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.dt_ctrl_s > 0.0) {
            return Err("dt_ctrl_s must be positive".into());
        }
        if self.dt_mpc_s + 1e-12 < self.dt_ctrl_s {
            return Err("dt_ctrl_s must not exceed dt_mpc_s".into());
        }
        if self.horizon_samples == 0 || self.future_steps == 0 {
            return Err("horizon_samples and future_steps must be at least 1".into());
        }
        if !(self.total_s > 0.0) {
            return Err("total_s must be positive".into());
        }
        if self.zmp_fail_margin_m < 0.0 || !(self.com_divergence_m > 0.0) {
            return Err("failure thresholds must be positive".into());
        }
        self.sqp.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Outcome {
    Completed,
    Fallen { time_s: f64 },
    SolverFailed { time_s: f64 },
}

impl Outcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, Outcome::Completed)
    }
}

/// One control-tick record. Wall-clock solve times live outside so the
/// physical log is reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time_s: f64,
    pub state: PendulumState,
    pub jerks: JerkCommand,
    pub zmp: [f64; 3],
    /// ZMP excess over the (margin-free) foot box; `None` inside the
    /// support-transfer grace window where the box is ill-defined.
    pub zmp_excess_m: Option<f64>,
    pub support: [f64; 3],
    pub support_side: Side,
    pub step_event: bool,
    pub next_step: [f64; 3],
    pub swing_foot: [f64; 3],
    pub sqp_iterations: usize,
    pub sqp_converged: bool,
    pub sqp_relaxed: bool,
    pub termination_metric: f64,
    pub max_quad_violation: f64,
    pub eq_residual: f64,
    /// Next-step displacement per solve interval, for the rate-limit check.
    pub step_rate_m_s: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub strategy: StrategyToggles,
    pub outcome: Outcome,
    pub records: Vec<TickRecord>,
    /// Wall-clock SQP solve time per tick (not part of equality checks).
    pub solve_times_s: Vec<f64>,
}

pub const CSV_SCHEMA_VERSION: u32 = 1;

impl TrajectoryLog {
    pub fn mean_solve_time_s(&self) -> f64 {
        if self.solve_times_s.is_empty() {
            0.0
        } else {
            self.solve_times_s.iter().sum::<f64>() / self.solve_times_s.len() as f64
        }
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "time_s,com_x_m,com_y_m,com_z_m,com_vx_m_s,com_vy_m_s,com_vz_m_s,\
             com_ax_m_s2,com_ay_m_s2,com_az_m_s2,roll_rad,roll_rad_s,roll_rad_s2,\
             pitch_rad,pitch_rad_s,pitch_rad_s2,jerk_x_m_s3,jerk_y_m_s3,jerk_z_m_s3,\
             jerk_roll_rad_s3,jerk_pitch_rad_s3,zmp_x_m,zmp_y_m,zmp_z_m,zmp_excess_m,\
             support_x_m,support_y_m,support_z_m,support_side,step_event,\
             next_step_x_m,next_step_y_m,next_step_z_m,swing_x_m,swing_y_m,swing_z_m,\
             sqp_iterations,sqp_converged,sqp_relaxed,termination_metric,\
             max_quad_violation,eq_residual,step_rate_x_m_s,step_rate_y_m_s,solve_time_s"
        )?;
        for (r, dt) in self.records.iter().zip(
            self.solve_times_s
                .iter()
                .copied()
                .chain(std::iter::repeat(0.0)),
        ) {
            let s = &r.state;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.time_s,
                s.com_x.pos, s.com_y.pos, s.com_z.pos,
                s.com_x.vel, s.com_y.vel, s.com_z.vel,
                s.com_x.acc, s.com_y.acc, s.com_z.acc,
                s.roll.pos, s.roll.vel, s.roll.acc,
                s.pitch.pos, s.pitch.vel, s.pitch.acc,
                r.jerks.com_x, r.jerks.com_y, r.jerks.com_z,
                r.jerks.roll, r.jerks.pitch,
                r.zmp[0], r.zmp[1], r.zmp[2],
                r.zmp_excess_m.map_or(String::new(), |v| v.to_string()),
                r.support[0], r.support[1], r.support[2],
                match r.support_side { Side::Left => "left", Side::Right => "right" },
                r.step_event as u8,
                r.next_step[0], r.next_step[1], r.next_step[2],
                r.swing_foot[0], r.swing_foot[1], r.swing_foot[2],
                r.sqp_iterations, r.sqp_converged as u8, r.sqp_relaxed as u8,
                r.termination_metric, r.max_quad_violation, r.eq_residual,
                r.step_rate_m_s[0], r.step_rate_m_s[1],
                dt,
            )?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let max_excess = self
            .records
            .iter()
            .filter_map(|r| r.zmp_excess_m)
            .fold(f64::NEG_INFINITY, f64::max);
        let relaxed = self.records.iter().filter(|r| r.sqp_relaxed).count();
        let max_eq = self
            .records
            .iter()
            .map(|r| r.eq_residual)
            .fold(0.0, f64::max);
        serde_json::json!({
            "csv_schema_version": CSV_SCHEMA_VERSION,
            "scenario": self.scenario,
            "strategy": self.strategy,
            "outcome": self.outcome,
            "ticks": self.records.len(),
            "duration_s": self.records.last().map_or(0.0, |r| r.time_s),
            "max_zmp_excess_m": if max_excess.is_finite() { max_excess } else { 0.0 },
            "max_eq_residual": max_eq,
            "relaxed_ticks": relaxed,
            "mean_solve_time_ms": self.mean_solve_time_s() * 1e3,
            "max_solve_time_ms": self.solve_times_s.iter().copied().fold(0.0, f64::max) * 1e3,
        })
    }
}

/// The receding-horizon controller: owns the solver, the warm start and
/// the step-rate memory.
struct Controller {
    prediction: PredictionMatrices,
    layout: Layout,
    solver: SqpSolver,
    warm: DVector<f64>,
    prev_next_step: [f64; 2],
    shift_accum: f64,
}

struct TickSolution {
    jerks: JerkCommand,
    next_step: [f64; 3],
    eq_residual: f64,
    max_quad_violation: f64,
    iterations: usize,
    converged: bool,
    relaxed: bool,
    termination_metric: f64,
    step_rate: [f64; 2],
    x: DVector<f64>,
}

impl Controller {
    fn new(scenario: &Scenario, plan: &FootstepPlan) -> Result<Self, SimError> {
        let cfg = &scenario.sim;
        let layout = Layout {
            horizon: cfg.horizon_samples,
            future_steps: cfg.future_steps,
        };
        let mut warm = DVector::zeros(layout.n());
        for axis in 0..3 {
            let block = layout.step_block(axis);
            for i in 0..cfg.future_steps {
                warm[block.start + i] = plan.reference(i + 1)[axis];
            }
        }
        Ok(Self {
            prediction: build_prediction(cfg.dt_mpc_s, cfg.horizon_samples),
            layout,
            solver: SqpSolver::new(cfg.sqp),
            warm,
            prev_next_step: [plan.reference(1)[0], plan.reference(1)[1]],
            shift_accum: 0.0,
        })
    }

    fn solve_tick(
        &mut self,
        scenario: &Scenario,
        toggles: &StrategyToggles,
        state: &PendulumState,
        plan: &FootstepPlan,
        now: f64,
    ) -> Result<TickSolution, SimError> {
        let cfg = &scenario.sim;
        let mapping = build_mapping(plan, cfg.dt_mpc_s, cfg.horizon_samples, cfg.future_steps)?;
        let references = build_references(
            plan,
            &mapping,
            scenario.model.pendulum_height,
            &scenario.overrides,
            now,
            cfg.dt_mpc_s,
        );
        let input = AssemblyInput {
            state,
            plan,
            mapping: &mapping,
            references: &references,
            weights: &scenario.weights,
            bounds: &scenario.bounds,
            toggles,
            prediction: &self.prediction,
            params: &scenario.model,
            prev_next_step: self.prev_next_step,
            rate_dt: cfg.dt_ctrl_s,
        };
        let problem = build_problem(&input);
        self.solver
            .set_structure_epoch(Some(plan.cycle_index() as u64));
        let (x, report) = self.solver.solve(&problem, &self.warm)?;

        let jerks = JerkCommand {
            com_x: x[self.layout.jerk_block(MotionChannel::ComX).start],
            com_y: x[self.layout.jerk_block(MotionChannel::ComY).start],
            com_z: x[self.layout.jerk_block(MotionChannel::ComZ).start],
            roll: x[self.layout.jerk_block(MotionChannel::Roll).start],
            pitch: x[self.layout.jerk_block(MotionChannel::Pitch).start],
        };
        let next_step = [
            x[self.layout.step_block(0).start],
            x[self.layout.step_block(1).start],
            x[self.layout.step_block(2).start],
        ];
        let eq_residual = problem
            .lin_eq
            .residuals(&x)
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()));
        let step_rate = [
            (next_step[0] - self.prev_next_step[0]) / cfg.dt_ctrl_s,
            (next_step[1] - self.prev_next_step[1]) / cfg.dt_ctrl_s,
        ];
        Ok(TickSolution {
            jerks,
            next_step,
            eq_residual,
            max_quad_violation: report.max_violation.last().copied().unwrap_or(f64::NAN),
            iterations: report.iterations,
            converged: report.converged,
            relaxed: report.relaxed,
            termination_metric: report.termination_metric.last().copied().unwrap_or(0.0),
            step_rate,
            x,
        })
    }

    /// Carry the solution into the next tick's warm start.
    fn roll_warm_start(&mut self, sol: &TickSolution, plan_after: &FootstepPlan, rolled: bool, dt_ctrl: f64, dt_mpc: f64) {
        self.warm.copy_from(&sol.x);
        let nf = self.layout.future_steps;
        if rolled {
            // Future-step indices shift by one cycle.
            for axis in 0..3 {
                let block = self.layout.step_block(axis);
                for i in 0..nf - 1 {
                    self.warm[block.start + i] = sol.x[block.start + i + 1];
                }
                self.warm[block.start + nf - 1] = plan_after.reference(nf)[axis];
            }
            // The new cycle's swing target is the old second step; seeding
            // the rate-limit memory with it keeps the rate and range rows
            // jointly feasible mid-recovery (the old solution satisfied the
            // chained range constraint). With a single modeled future step
            // fall back to the reference.
            self.prev_next_step = if nf >= 2 {
                [
                    sol.x[self.layout.step_block(0).start + 1],
                    sol.x[self.layout.step_block(1).start + 1],
                ]
            } else {
                [plan_after.reference(1)[0], plan_after.reference(1)[1]]
            };
        } else {
            self.prev_next_step = [sol.next_step[0], sol.next_step[1]];
        }
        // Shift the jerk sequences one sample once a full horizon interval
        // has elapsed (the control tick may subdivide it).
        self.shift_accum += dt_ctrl;
        if self.shift_accum + 1e-12 >= dt_mpc {
            self.shift_accum -= dt_mpc;
            for ch in MotionChannel::ALL {
                let block = self.layout.jerk_block(ch);
                for i in 0..self.layout.horizon - 1 {
                    self.warm[block.start + i] = self.warm[block.start + i + 1];
                }
            }
        }
    }
}

/// Run one closed-loop episode.
pub fn run_episode(scenario: &Scenario) -> Result<TrajectoryLog, SimError> {
    run_episode_with(scenario, None)
}

/// Variant taking an SQP-settings override (the timing sweep disables the
/// ε rule, which user scenarios may not).
pub fn run_episode_with(
    scenario: &Scenario,
    sqp_override: Option<SqpSettings>,
) -> Result<TrajectoryLog, SimError> {
    scenario
        .validate()
        .map_err(|e| SimError::Scenario(e.to_string()))?;
    let toggles = scenario
        .resolved_toggles()
        .map_err(|e| SimError::Scenario(e.to_string()))?;
    let mut scenario = scenario.clone();
    if let Some(s) = sqp_override {
        scenario.sim.sqp = s;
    }
    let cfg = scenario.sim;
    let params = scenario.model;
    let mut plan = scenario.footstep_plan()?;
    let mut state = PendulumState::standing_over(plan.support(), &params);
    let mut ctrl = Controller::new(&scenario, &plan)?;

    let first_width = scenario.steps[0].width_m;
    let s0 = plan.support();
    let mut swing_from = [
        s0[0],
        s0[1] - plan.support_side().sign() * first_width,
        s0[2],
    ];

    let n_ticks = (cfg.total_s / cfg.dt_ctrl_s).round() as usize;
    let mut records = Vec::with_capacity(n_ticks);
    let mut solve_times = Vec::with_capacity(n_ticks);
    let mut outcome = Outcome::Completed;
    let mut zmp_streak = 0usize;

    for tick in 0..n_ticks {
        let now = tick as f64 * cfg.dt_ctrl_s;

        let started = Instant::now();
        let sol = match ctrl.solve_tick(&scenario, &toggles, &state, &plan, now) {
            Ok(s) => s,
            Err(SimError::Solver(_)) => {
                outcome = Outcome::SolverFailed { time_s: now };
                break;
            }
            Err(e) => return Err(e),
        };
        solve_times.push(started.elapsed().as_secs_f64());

        // Realized ZMP and failure checks against the current support box.
        let support = plan.support();
        let zmp_now = match zmp(&state, support[2], &params) {
            Ok(p) => p,
            Err(_) => {
                outcome = Outcome::Fallen { time_s: now };
                break;
            }
        };
        // The single-support model transfers the ZMP between feet across
        // the cycle boundary: once every prediction sample lies on the next
        // support (last horizon interval of the cycle) the instantaneous
        // ZMP is already in transit, and the realized trajectory needs up
        // to two horizon intervals after rollover to settle into the new
        // box (one for the commanded transfer, one of receding-horizon
        // sub-sample lag). The box check applies outside that window; the
        // divergence bound always applies.
        let in_grace = plan.elapsed < 2.0 * cfg.dt_mpc_s - 1e-9
            || plan.remaining_in_cycle() < cfg.dt_mpc_s - 1e-9;
        let zmp_excess = if in_grace {
            None
        } else {
            let ex_x = (zmp_now[0] - support[0] - scenario.bounds.zmp_x_max_m)
                .max(scenario.bounds.zmp_x_min_m - (zmp_now[0] - support[0]));
            let ex_y = (zmp_now[1] - support[1] - scenario.bounds.zmp_y_max_m)
                .max(scenario.bounds.zmp_y_min_m - (zmp_now[1] - support[1]));
            Some(ex_x.max(ex_y).max(0.0))
        };

        let elapsed_in_cycle = plan.elapsed;
        let swing_target = if toggles.step_adjustment {
            sol.next_step
        } else {
            plan.reference(1)
        };
        let swing = swing_foot_trajectory(
            swing_from,
            swing_target,
            plan.cycle_duration,
            cfg.swing_apex_m,
            elapsed_in_cycle,
        );

        records.push(TickRecord {
            time_s: now,
            state,
            jerks: sol.jerks,
            zmp: zmp_now,
            zmp_excess_m: zmp_excess,
            support,
            support_side: plan.support_side(),
            step_event: false,
            next_step: sol.next_step,
            swing_foot: swing,
            sqp_iterations: sol.iterations,
            sqp_converged: sol.converged,
            sqp_relaxed: sol.relaxed,
            termination_metric: sol.termination_metric,
            max_quad_violation: sol.max_quad_violation,
            eq_residual: sol.eq_residual,
            step_rate_m_s: sol.step_rate,
        });

        // The box is enforced by the controller at the horizon cadence, so
        // violations are also judged at sample-aligned ticks; in between,
        // the realized ZMP may lag the sampled plan during fast transfers.
        let sample_aligned = (now / cfg.dt_mpc_s - (now / cfg.dt_mpc_s).round()).abs() < 1e-6;
        if sample_aligned {
            if let Some(excess) = zmp_excess {
                if excess > cfg.zmp_fail_margin_m {
                    zmp_streak += 1;
                } else {
                    zmp_streak = 0;
                }
            }
        }
        let div = ((state.com_x.pos - support[0]).powi(2)
            + (state.com_y.pos - support[1]).powi(2))
        .sqrt();
        if zmp_streak >= 3 || div > cfg.com_divergence_m {
            outcome = Outcome::Fallen { time_s: now };
            break;
        }

        // Plant step: first jerk over one control tick, then the push as
        // extra horizontal acceleration.
        state = state.step(&sol.jerks, cfg.dt_ctrl_s);
        for d in &scenario.disturbances {
            if now + 1e-12 >= d.start_s && now < d.start_s + d.duration_s - 1e-12 {
                let ax = d.force_x_n / params.mass;
                let ay = d.force_y_n / params.mass;
                state.com_x.vel += ax * cfg.dt_ctrl_s;
                state.com_x.pos += 0.5 * ax * cfg.dt_ctrl_s * cfg.dt_ctrl_s;
                state.com_y.vel += ay * cfg.dt_ctrl_s;
                state.com_y.pos += 0.5 * ay * cfg.dt_ctrl_s * cfg.dt_ctrl_s;
            }
        }
        if !state.is_finite() {
            outcome = Outcome::Fallen { time_s: now };
            break;
        }

        let old_support = plan.support();
        let realized = if toggles.step_adjustment {
            sol.next_step
        } else {
            plan.reference(1)
        };
        let (next_plan, rolled) = plan.advance(cfg.dt_ctrl_s, realized);
        plan = next_plan;
        if rolled {
            swing_from = old_support;
            if let Some(last) = records.last_mut() {
                last.step_event = true;
            }
        }
        ctrl.roll_warm_start(&sol, &plan, rolled, cfg.dt_ctrl_s, cfg.dt_mpc_s);
    }

    Ok(TrajectoryLog {
        scenario: scenario.name.clone(),
        strategy: toggles,
        outcome,
        records,
        solve_times_s: solve_times,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushAxis {
    X,
    Y,
}

#[derive(Debug, Clone)]
pub struct PushSearchResult {
    pub max_force_n: f64,
    /// Probes as (force, completed) pairs in evaluation order.
    pub probes: Vec<(f64, bool)>,
    /// The search hit its upper force cap while still completing.
    pub saturated: bool,
}

/// Largest push force (1 N resolution) the scenario survives along one
/// axis. The template must contain exactly one disturbance, whose force is
/// replaced by the probe value.
pub fn max_push_search(template: &Scenario, axis: PushAxis) -> Result<PushSearchResult, SimError> {
    if template.disturbances.len() != 1 {
        return Err(SimError::Scenario(
            "push search needs exactly one disturbance in the template".into(),
        ));
    }
    let mut probes = Vec::new();
    let run = |force: f64, probes: &mut Vec<(f64, bool)>| -> Result<bool, SimError> {
        let mut s = template.clone();
        match axis {
            PushAxis::X => {
                s.disturbances[0].force_x_n = force;
                s.disturbances[0].force_y_n = 0.0;
            }
            PushAxis::Y => {
                s.disturbances[0].force_x_n = 0.0;
                s.disturbances[0].force_y_n = force;
            }
        }
        let log = run_episode(&s)?;
        let ok = log.outcome.is_completed();
        probes.push((force, ok));
        Ok(ok)
    };

    if !run(0.0, &mut probes)? {
        return Err(SimError::Scenario(
            "scenario does not complete even without a push".into(),
        ));
    }
    const CAP: f64 = 1024.0;
    let mut lo = 0.0;
    let mut hi = 64.0;
    loop {
        if run(hi, &mut probes)? {
            lo = hi;
            hi *= 2.0;
            if hi > CAP {
                return Ok(PushSearchResult {
                    max_force_n: lo,
                    probes,
                    saturated: true,
                });
            }
        } else {
            break;
        }
    }
    while hi - lo > 1.0 {
        let mid = ((lo + hi) / 2.0).round();
        if run(mid, &mut probes)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PushSearchResult {
        max_force_n: lo,
        probes,
        saturated: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub sqp_iters: usize,
    /// Worst-tick termination metric at the iteration cap: the smallest
    /// threshold that would have let every tick terminate within the cap.
    pub eps_reachable: f64,
    pub mean_solve_ms: f64,
}

/// Sweep the SQP iteration budget with ε-termination disabled and report,
/// per budget, the reachable threshold and the mean solve time.
pub fn timing_study(scenario: &Scenario, max_budget: usize) -> Result<Vec<TimingRow>, SimError> {
    let mut rows = Vec::new();
    for n_s in 1..=max_budget {
        let settings = SqpSettings {
            eps: -1.0,
            max_iters: n_s,
            qp_max_iter: scenario.sim.sqp.qp_max_iter,
        };
        let log = run_episode_with(scenario, Some(settings))?;
        if !log.outcome.is_completed() {
            return Err(SimError::Scenario(format!(
                "timing gait did not complete at iteration budget {n_s}: {:?}",
                log.outcome
            )));
        }
        let eps_reachable = log
            .records
            .iter()
            .map(|r| r.termination_metric)
            .fold(0.0f64, f64::max);
        rows.push(TimingRow {
            sqp_iters: n_s,
            eps_reachable,
            mean_solve_ms: log.mean_solve_time_s() * 1e3,
        });
    }
    Ok(rows)
}

/// Run a set of labeled episodes in parallel. Parallelism is capped by
/// the `NMPC_THREADS` environment variable when set.
pub fn run_parallel<T, F>(jobs: Vec<T>, f: F) -> Vec<Result<PushSearchResult, SimError>>
where
    T: Send + Sync,
    F: Fn(&T) -> Result<PushSearchResult, SimError> + Sync,
{
    use rayon::prelude::*;
    let pool = thread_pool();
    pool.install(|| jobs.par_iter().map(&f).collect())
}

fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("NMPC_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            builder = builder.num_threads(n.max(1));
        }
    }
    builder.build().expect("thread pool construction")
}

// ---------------------------------------------------------------------------
// Built-in scenarios
// ---------------------------------------------------------------------------

fn entry(length: f64, width: f64, height: f64, repeat: usize) -> StepEntry {
    StepEntry {
        length_m: length,
        width_m: width,
        height_m: height,
        duration_s: 0.8,
        repeat,
    }
}

fn base_scenario(name: &str, steps: Vec<StepEntry>, total_s: f64) -> Scenario {
    Scenario {
        name: name.into(),
        model: Default::default(),
        weights: Default::default(),
        bounds: Default::default(),
        toggles: None,
        strategy: Some(3),
        steps,
        initial_side: Default::default(),
        disturbances: Vec::new(),
        overrides: Default::default(),
        sim: SimConfig {
            total_s,
            ..Default::default()
        },
    }
}

/// Stair walking with varying step parameters: three rises of 0.1 m, a
/// long 0.3 m stride on top, then two descents.
pub fn stairs_3d() -> Scenario {
    let steps = vec![
        entry(0.15, 0.145, 0.0, 1),
        entry(0.15, 0.145, 0.1, 3),
        entry(0.15, 0.2, 0.0, 1),
        entry(0.3, 0.14, 0.0, 1),
        entry(0.25, 0.14, -0.1, 1),
        entry(0.15, 0.2, -0.1, 1),
        entry(0.05, 0.145, 0.0, 1),
        entry(0.15, 0.145, 0.0, 1),
    ];
    base_scenario("stairs-3d", steps, 8.8)
}

/// Stepping in place with a forward push at 2 s.
pub fn step_in_place_push() -> Scenario {
    let mut s = base_scenario("step-in-place-push", vec![entry(0.0, 0.145, 0.0, 7)], 4.8);
    s.disturbances.push(Disturbance {
        start_s: 2.0,
        duration_s: 0.1,
        force_x_n: 125.0,
        force_y_n: 0.0,
    });
    s
}

/// Forward walking with a combined forward/lateral push at 2 s.
pub fn walk_forward_push() -> Scenario {
    let mut s = base_scenario("walk-forward-push", vec![entry(0.15, 0.145, 0.0, 7)], 4.8);
    s.disturbances.push(Disturbance {
        start_s: 2.0,
        duration_s: 0.1,
        force_x_n: 125.0,
        force_y_n: 75.0,
    });
    s
}

/// Walking under a low obstacle: the height reference dips 0.05 m while
/// the pitch reference rises to 0.1 rad.
pub fn narrow_passage() -> Scenario {
    let mut s = base_scenario("narrow-passage", vec![entry(0.15, 0.145, 0.0, 10)], 8.0);
    s.overrides = ReferenceOverrides {
        pendulum_height: Some(Profile {
            points: vec![(1.6, 0.467), (2.8, 0.417), (5.2, 0.417), (6.4, 0.467)],
        }),
        pitch: Some(Profile {
            points: vec![(1.6, 0.0), (2.8, 0.1), (5.2, 0.1), (6.4, 0.0)],
        }),
    };
    s
}

/// Constant gait at a coarse sampling used for the solver-budget sweep.
pub fn timing_gait() -> Scenario {
    let mut s = base_scenario("timing-gait", vec![entry(0.1, 0.145, 0.0, 10)], 8.0);
    s.sim.dt_ctrl_s = 0.1;
    s.sim.dt_mpc_s = 0.1;
    s.sim.horizon_samples = 10;
    s.sim.future_steps = 2;
    s
}

/// The five canonical scenarios.
pub fn scenario_catalog() -> Vec<Scenario> {
    vec![
        stairs_3d(),
        step_in_place_push(),
        walk_forward_push(),
        narrow_passage(),
        timing_gait(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_standing() -> Scenario {
        let mut s = base_scenario("standing", vec![entry(0.0, 0.145, 0.0, 3)], 1.0);
        s.sim.dt_ctrl_s = 0.05;
        s
    }

    #[test]
    fn standing_episode_completes_inside_the_zmp_box() {
        let log = run_episode(&quick_standing()).unwrap();
        assert!(log.outcome.is_completed(), "{:?}", log.outcome);
        for r in &log.records {
            if let Some(e) = r.zmp_excess_m {
                assert!(e <= 0.0 + 1e-9, "tick {}: excess {e}", r.time_s);
            }
            assert!(r.state.com_z.acc + 31.0_f64.signum() * 9.81 > 0.0);
        }
    }

    #[test]
    fn plant_follows_the_prediction_under_matched_sampling() {
        // dt_ctrl == dt_mpc: after one tick the plant must sit exactly on
        // the first predicted sample of the solved trajectory.
        let mut s = quick_standing();
        s.sim.dt_ctrl_s = 0.05;
        s.sim.dt_mpc_s = 0.05;
        s.sim.horizon_samples = 16;
        let prediction = build_prediction(0.05, 16);
        let log = run_episode(&s).unwrap();
        assert!(log.outcome.is_completed());
        for w in log.records.windows(2) {
            let jerks = DVector::from_element(1, 0.0);
            let _ = jerks;
            let predicted =
                prediction.positions(w[0].state.com_x, &{
                    let mut j = DVector::zeros(16);
                    j[0] = w[0].jerks.com_x;
                    j
                })[0];
            assert!(
                (predicted - w[1].state.com_x.pos).abs() < 1e-9,
                "prediction deviates: {predicted} vs {}",
                w[1].state.com_x.pos
            );
        }
    }

    #[test]
    fn push_impulse_is_bookkept_exactly() {
        // The velocity gained across the push window, minus what the
        // commanded jerks and accelerations account for, is exactly F·T/m.
        let mut s = step_in_place_push();
        s.sim.total_s = 3.0;
        s.disturbances[0].force_x_n = 60.0;
        let log = run_episode(&s).unwrap();
        assert!(log.outcome.is_completed(), "{:?}", log.outcome);
        let dt = s.sim.dt_ctrl_s;
        let (t0, t1) = (2.0, 2.1);
        let i0 = (t0 / dt).round() as usize;
        let i1 = (t1 / dt).round() as usize;
        let mut commanded = 0.0;
        for r in &log.records[i0..i1] {
            commanded += r.state.com_x.acc * dt + 0.5 * r.jerks.com_x * dt * dt;
        }
        let dv = log.records[i1].state.com_x.vel - log.records[i0].state.com_x.vel;
        let expected = 60.0 * 0.1 / 31.0;
        assert!(
            (dv - commanded - expected).abs() < 1e-6,
            "force bookkeeping off: {dv} vs {commanded} + {expected}"
        );
    }

    #[test]
    fn episodes_are_deterministic() {
        let s = quick_standing();
        let a = run_episode(&s).unwrap();
        let b = run_episode(&s).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.outcome, b.outcome);
    }

    #[test]
    fn catalog_matches_the_declared_experiments() {
        let catalog = scenario_catalog();
        assert_eq!(catalog.len(), 5);
        for s in &catalog {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
        let stairs = &catalog[0];
        let seq = stairs.step_sequence();
        assert_eq!(seq[5].length_m, 0.3, "cycle 6 stride");
        assert_eq!(seq[1].height_m, 0.1);
        let walk = &catalog[2];
        assert_eq!(walk.disturbances[0].force_x_n, 125.0);
        assert_eq!(walk.disturbances[0].force_y_n, 75.0);
        assert_eq!(walk.disturbances[0].start_s, 2.0);
        let narrow = &catalog[3];
        let pitch = narrow.overrides.pitch.as_ref().unwrap();
        assert_eq!(pitch.eval(4.0), Some(0.1));
        let timing = &catalog[4];
        assert_eq!(timing.sim.dt_mpc_s, 0.1);
        assert_eq!(timing.sim.horizon_samples, 10);
    }

    #[test]
    fn csv_has_one_row_per_tick_and_a_header() {
        let log = run_episode(&quick_standing()).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), log.records.len() + 1);
        assert!(lines[0].starts_with("time_s,com_x_m"));
        let summary = log.summary_json();
        assert_eq!(summary["csv_schema_version"], CSV_SCHEMA_VERSION);
        assert_eq!(summary["outcome"]["kind"], "Completed");
    }
}
