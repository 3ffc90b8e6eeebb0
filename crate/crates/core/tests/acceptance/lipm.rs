//! Independent constant-height linear MPC, used as a reduction oracle.
//!
//! With the height and rotation strategies disabled on flat ground, the
//! nonlinear controller's feasible set collapses to the classic linear
//! inverted-pendulum one: ZMP `p = c − (h/g)·c̈` inside the moving foot
//! box, plus the step geometry rows. This module builds that linear MPC
//! directly — no quadratic constraint machinery, no SQP — and steps the
//! same plant, so the closed-loop CoM trajectories of the two paths can be
//! compared.

use gait_nmpc::gait::{build_mapping, build_references, FootstepPlan};
use gait_nmpc::pendulum::{build_prediction, step_axis, AxisState};
use gait_nmpc::scenario::Scenario;
use gait_nmpc::solver::{QpEngine, RowBlock};
use nalgebra::{DMatrix, DVector};

pub struct LipmTrace {
    pub com_x: Vec<f64>,
    pub com_y: Vec<f64>,
}

struct Blocks {
    h: usize,
    nf: usize,
}

impl Blocks {
    fn n(&self) -> usize {
        2 * self.h + 2 * self.nf
    }
    fn jerk(&self, axis: usize) -> usize {
        axis * self.h
    }
    fn step(&self, axis: usize) -> usize {
        2 * self.h + axis * self.nf
    }
}

/// Closed-loop run of the linear MPC on a flat-ground scenario.
pub fn run_lipm(scenario: &Scenario) -> LipmTrace {
    let cfg = &scenario.sim;
    let params = scenario.model;
    let w = &scenario.weights;
    let bounds = &scenario.bounds;
    let pm = build_prediction(cfg.dt_mpc_s, cfg.horizon_samples);
    let blocks = Blocks {
        h: cfg.horizon_samples,
        nf: cfg.future_steps,
    };
    let n = blocks.n();
    let lever = params.pendulum_height / params.gravity;

    let mut plan: FootstepPlan = scenario.footstep_plan().unwrap();
    let mut com = [
        AxisState::new(plan.support()[0], 0.0, 0.0),
        AxisState::new(plan.support()[1], 0.0, 0.0),
    ];
    let mut engine = QpEngine::new();
    let mut prev_next = [plan.reference(1)[0], plan.reference(1)[1]];

    let pvu_t_pvu = pm.p_vu.transpose() * &pm.p_vu;
    let ppu_t_ppu = pm.p_pu.transpose() * &pm.p_pu;

    let n_ticks = (cfg.total_s / cfg.dt_ctrl_s).round() as usize;
    let mut trace = LipmTrace {
        com_x: Vec::with_capacity(n_ticks),
        com_y: Vec::with_capacity(n_ticks),
    };

    for tick in 0..n_ticks {
        let now = tick as f64 * cfg.dt_ctrl_s;
        let mapping = build_mapping(&plan, cfg.dt_mpc_s, blocks.h, blocks.nf).unwrap();
        let refs = build_references(
            &plan,
            &mapping,
            params.pendulum_height,
            &scenario.overrides,
            now,
            cfg.dt_mpc_s,
        );

        // Objective.
        let mut g_mat = DMatrix::zeros(n, n);
        let mut g_vec = DVector::zeros(n);
        for axis in 0..2 {
            let (alpha, beta) = (w.velocity[axis], w.position[axis]);
            let gamma = w.jerk[axis];
            let theta = &pvu_t_pvu * (alpha / 2.0)
                + &ppu_t_ppu * (beta / 2.0)
                + DMatrix::identity(blocks.h, blocks.h) * (gamma / 2.0);
            let start = blocks.jerk(axis);
            g_mat
                .view_mut((start, start), (blocks.h, blocks.h))
                .copy_from(&theta);
            let x_hat = DVector::from_column_slice(&[com[axis].pos, com[axis].vel, com[axis].acc]);
            let refvec = if axis == 0 { &refs.com_x } else { &refs.com_y };
            let lin = pm.p_vu.transpose() * (&pm.p_vs * &x_hat * alpha)
                + pm.p_pu.transpose() * ((&pm.p_ps * &x_hat - refvec) * beta);
            g_vec.rows_mut(start, blocks.h).copy_from(&lin);

            let delta = w.step[axis];
            let dstart = blocks.step(axis);
            let drefs = if axis == 0 { &refs.step_x } else { &refs.step_y };
            for i in 0..blocks.nf {
                g_mat[(dstart + i, dstart + i)] = delta / 2.0;
                g_vec[dstart + i] = -delta * drefs[i];
            }
        }
        let hessian = &g_mat * 2.0;

        // Linear ZMP box rows: p_j − d̄_j within bounds.
        let mut ineq = RowBlock::new(n);
        let support = plan.support();
        for axis in 0..2 {
            let (lo, hi) = if axis == 0 {
                (bounds.zmp_x_min_m, bounds.zmp_x_max_m)
            } else {
                (bounds.zmp_y_min_m, bounds.zmp_y_max_m)
            };
            let x_hat = DVector::from_column_slice(&[com[axis].pos, com[axis].vel, com[axis].acc]);
            let pos_free = &pm.p_ps * &x_hat;
            let acc_free = &pm.p_as * &x_hat;
            let jstart = blocks.jerk(axis);
            let dstart = blocks.step(axis);
            for j in 0..blocks.h {
                let val_free = pos_free[j] - lever * acc_free[j]
                    - mapping.current[j] * support[axis];
                for (sign, rhs) in [(1.0, hi - val_free), (-1.0, val_free - lo)] {
                    let row = ineq.push_zeroed(rhs);
                    for c in 0..=j {
                        row[jstart + c] = sign * (pm.p_pu[(j, c)] - lever * pm.p_au[(j, c)]);
                    }
                    for k in 0..blocks.nf {
                        if mapping.future[(j, k)] != 0.0 {
                            row[dstart + k] = -sign * mapping.future[(j, k)];
                        }
                    }
                }
            }
        }
        // Step range rows.
        for i in 0..blocks.nf {
            for (sign, bound) in [(1.0, bounds.step_x_max_m), (-1.0, -bounds.step_x_min_m)] {
                let rhs = if i == 0 { bound + sign * support[0] } else { bound };
                let row = ineq.push_zeroed(rhs);
                row[blocks.step(0) + i] = sign;
                if i > 0 {
                    row[blocks.step(0) + i - 1] = -sign;
                }
            }
            let side = plan.side_of(i + 1).sign();
            for (sign, bound) in [(1.0, bounds.step_width_max_m), (-1.0, -bounds.step_width_min_m)]
            {
                let coeff = sign * side;
                let rhs = if i == 0 { bound + coeff * support[1] } else { bound };
                let row = ineq.push_zeroed(rhs);
                row[blocks.step(1) + i] = coeff;
                if i > 0 {
                    row[blocks.step(1) + i - 1] = -coeff;
                }
            }
        }
        // Step rate rows on the next step.
        let dt = cfg.dt_ctrl_s;
        for (axis, lo, hi) in [
            (0, bounds.step_rate_x_min_m_s, bounds.step_rate_x_max_m_s),
            (1, bounds.step_rate_y_min_m_s, bounds.step_rate_y_max_m_s),
        ] {
            let row = ineq.push_zeroed(prev_next[axis] + hi * dt);
            row[blocks.step(axis)] = 1.0;
            let row = ineq.push_zeroed(-(prev_next[axis] + lo * dt));
            row[blocks.step(axis)] = -1.0;
        }

        let sol = engine
            .solve(&hessian, &g_vec, &ineq, &RowBlock::new(n), 4000)
            .unwrap_or_else(|e| panic!("linear MPC solve failed at tick {tick}: {e}"));

        trace.com_x.push(com[0].pos);
        trace.com_y.push(com[1].pos);

        let jerks = [sol.x[blocks.jerk(0)], sol.x[blocks.jerk(1)]];
        let next_step = [sol.x[blocks.step(0)], sol.x[blocks.step(1)]];
        com[0] = step_axis(com[0], jerks[0], cfg.dt_ctrl_s);
        com[1] = step_axis(com[1], jerks[1], cfg.dt_ctrl_s);

        let realized = [next_step[0], next_step[1], plan.reference(1)[2]];
        let (next_plan, rolled) = plan.advance(cfg.dt_ctrl_s, realized);
        plan = next_plan;
        if rolled {
            prev_next = if blocks.nf >= 2 {
                [sol.x[blocks.step(0) + 1], sol.x[blocks.step(1) + 1]]
            } else {
                [plan.reference(1)[0], plan.reference(1)[1]]
            };
        } else {
            prev_next = next_step;
        }
    }
    trace
}
