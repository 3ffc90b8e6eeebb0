//! Solver layer: dense active-set QP, QCQP representation, SQP iteration.

pub mod qcqp;
pub mod qp;
pub mod sqp;

pub use qcqp::{AffineTerm, Channel, LinearizedQp, QcqpProblem, QuadConstraint, QuadForm};
pub use qp::{factor_hessian, solve_qp, QpEngine, QpError, QpSolution, RowBlock};
pub use sqp::{solve_sqp, QpStatus, SolverError, SqpReport, SqpSettings, SqpSolver};
