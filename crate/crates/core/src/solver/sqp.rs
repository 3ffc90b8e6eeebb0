//! Sequential quadratic programming over a [`QcqpProblem`].
//!
//! Each iteration linearizes the quadratic constraints about the current
//! iterate, solves the resulting QP for a full step Δ, and updates
//! `x ← x + Δ`. Termination takes the per-channel maxima of |Δ| (the
//! decision vector is partitioned into its motion and step channels) and
//! stops when the smallest of them over the non-pinned channels drops to
//! the threshold, or when the iteration budget is exhausted. A channel
//! fully bound by equality rows produces identically-zero increments, so
//! pinned channels are excluded from the minimum; they still appear in the
//! report.
//!
//! When the linearized QP is infeasible, the quadratic-constraint rows
//! (the ZMP box in the walking problem) are relaxed once with L1 slack
//! variables and the step is retried; the relaxation is flagged in the
//! report so callers can treat it as a degraded tick.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::qcqp::{LinearizedQp, QcqpProblem};
use super::qp::{QpEngine, QpError, RowBlock};

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum SolverError {
    #[error("dimension mismatch between problem and iterate")]
    DimensionMismatch,
    #[error("inner QP failed: {0}")]
    Qp(#[from] QpError),
    #[error("linearized QP infeasible even after slack relaxation")]
    Infeasible,
}

/// Linear penalty weight on the relaxation slacks.
const SLACK_PENALTY: f64 = 1e6;
/// Small quadratic slack term keeping the relaxed Hessian positive definite.
const SLACK_CURVATURE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqpSettings {
    /// Increment threshold ε of the termination rule. Non-positive values
    /// disable early termination (used by the solver-budget sweep).
    pub eps: f64,
    /// Maximum number of SQP iterations N_s.
    pub max_iters: usize,
    /// Iteration cap handed to the inner active-set solver.
    pub qp_max_iter: usize,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            eps: 5e-8,
            max_iters: 3,
            qp_max_iter: 4000,
        }
    }
}

impl SqpSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps > 0.0) {
            return Err(format!("sqp eps must be positive, got {}", self.eps));
        }
        if self.max_iters == 0 {
            return Err("sqp max_iters must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpStatus {
    Optimal {
        active: usize,
        iterations: usize,
    },
    /// The clean QP was infeasible; the step came from the slack-relaxed
    /// problem with the reported worst slack.
    Relaxed {
        active: usize,
        iterations: usize,
        max_slack: f64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct SqpReport {
    pub iterations: usize,
    /// Per iteration, per channel: max |Δ| (the F vector of the
    /// termination rule, one entry per decision-vector channel).
    pub channel_maxima: Vec<Vec<f64>>,
    /// Per iteration: min of the channel maxima over non-pinned channels.
    pub termination_metric: Vec<f64>,
    /// Per iteration: worst quadratic-constraint value at the new iterate.
    pub max_violation: Vec<f64>,
    pub qp_status: Vec<QpStatus>,
    pub converged: bool,
    pub relaxed: bool,
}

/// SQP solver with reusable workspace. One instance per thread.
#[derive(Debug, Default)]
pub struct SqpSolver {
    pub settings: SqpSettings,
    engine: QpEngine,
    relax_engine: QpEngine,
    qp: LinearizedQp,
}

impl SqpSolver {
    pub fn new(settings: SqpSettings) -> Self {
        Self {
            settings,
            ..Self::default()
        }
    }

    /// Declare that subsequent problems share objective/equality/stable-row
    /// coefficients until the epoch changes (enables factorization reuse
    /// across a control episode).
    pub fn set_structure_epoch(&mut self, epoch: Option<u64>) {
        self.engine.set_structure_epoch(epoch);
    }

    pub fn solve(
        &mut self,
        problem: &QcqpProblem,
        warm_start: &DVector<f64>,
    ) -> Result<(DVector<f64>, SqpReport), SolverError> {
        let n = problem.n();
        if warm_start.len() != n {
            return Err(SolverError::DimensionMismatch);
        }
        let mut x = warm_start.clone();
        let mut report = SqpReport::default();

        for _iter in 0..self.settings.max_iters {
            problem.linearize_into(&x, &mut self.qp)?;
            let status;
            let delta;
            match self.engine.solve(
                &self.qp.hessian,
                &self.qp.gradient,
                &self.qp.ineq,
                &self.qp.eq,
                self.settings.qp_max_iter,
            ) {
                Ok(sol) => {
                    status = QpStatus::Optimal {
                        active: sol.active.len(),
                        iterations: sol.iterations,
                    };
                    delta = sol.x;
                }
                Err(QpError::Infeasible) => {
                    let (d, st) = self.solve_relaxed(problem.quad.len())?;
                    report.relaxed = true;
                    status = st;
                    delta = d;
                }
                Err(e) => return Err(SolverError::Qp(e)),
            }

            x += &delta;
            report.iterations += 1;
            report.qp_status.push(status);
            report.max_violation.push(problem.max_quad_violation(&x));

            let maxima: Vec<f64> = problem
                .channels
                .iter()
                .map(|ch| {
                    ch.range
                        .clone()
                        .map(|i| delta[i].abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            let metric = problem
                .channels
                .iter()
                .zip(&maxima)
                .filter(|(ch, _)| !ch.pinned)
                .map(|(_, &m)| m)
                .fold(f64::INFINITY, f64::min);
            let metric = if metric.is_finite() {
                metric
            } else {
                maxima.iter().copied().fold(f64::INFINITY, f64::min)
            };
            report.channel_maxima.push(maxima);
            report.termination_metric.push(metric);

            if self.settings.eps > 0.0 && metric <= self.settings.eps {
                report.converged = true;
                break;
            }
        }
        Ok((x, report))
    }

    /// Re-solve the current linearized QP with one L1 slack per
    /// quadratic-constraint row. Slacks enter the objective linearly at
    /// `SLACK_PENALTY` with a small quadratic term for definiteness.
    fn solve_relaxed(&mut self, n_quad: usize) -> Result<(DVector<f64>, QpStatus), SolverError> {
        let n = self.qp.gradient.len();
        let n_ext = n + n_quad;
        let quad_row_start = self.qp.stable_ineq;

        let mut hessian = DMatrix::zeros(n_ext, n_ext);
        hessian.view_mut((0, 0), (n, n)).copy_from(&self.qp.hessian);
        for k in 0..n_quad {
            hessian[(n + k, n + k)] = 2.0 * SLACK_CURVATURE;
        }
        let mut gradient = DVector::zeros(n_ext);
        gradient.rows_mut(0, n).copy_from(&self.qp.gradient);
        for k in 0..n_quad {
            gradient[n + k] = SLACK_PENALTY;
        }

        let mut ineq = RowBlock::new(n_ext);
        for (i, (row, b)) in self.qp.ineq.rows().enumerate() {
            let ext = ineq.push_zeroed(b);
            ext[..n].copy_from_slice(row);
            if i >= quad_row_start {
                ext[n + (i - quad_row_start)] = -1.0;
            }
        }
        for k in 0..n_quad {
            let ext = ineq.push_zeroed(0.0);
            ext[n + k] = -1.0; // slack ≥ 0
        }
        let mut eq = RowBlock::new(n_ext);
        for (row, b) in self.qp.eq.rows() {
            let ext = eq.push_zeroed(b);
            ext[..n].copy_from_slice(row);
        }

        match self
            .relax_engine
            .solve(&hessian, &gradient, &ineq, &eq, self.settings.qp_max_iter)
        {
            Ok(sol) => {
                let max_slack = (0..n_quad)
                    .map(|k| sol.x[n + k])
                    .fold(0.0, f64::max);
                let delta = DVector::from_fn(n, |i, _| sol.x[i]);
                Ok((
                    delta,
                    QpStatus::Relaxed {
                        active: sol.active.len(),
                        iterations: sol.iterations,
                        max_slack,
                    },
                ))
            }
            Err(QpError::Infeasible) => Err(SolverError::Infeasible),
            Err(e) => Err(SolverError::Qp(e)),
        }
    }
}

/// One-shot convenience wrapper.
pub fn solve_sqp(
    problem: &QcqpProblem,
    warm_start: &DVector<f64>,
    settings: SqpSettings,
) -> Result<(DVector<f64>, SqpReport), SolverError> {
    SqpSolver::new(settings).solve(problem, warm_start)
}
