//! Quadratically constrained quadratic programs.
//!
//! A problem minimizes `f(x) = xᵀG x + gᵀx` subject to quadratic
//! inequalities `h_j(x) = xᵀV_j x + v_jᵀx + σ_j ≤ 0` plus linear
//! inequality and equality rows. Linearization about an iterate produces
//! the quadratic program consumed by the SQP loop: the Hessian is `2G`,
//! the gradient `2Gx + g`, and each quadratic constraint contributes the
//! row `(2V_j x + v_j)ᵀΔ + h_j(x) ≤ 0`.
//!
//! Quadratic forms that arise from the walking constraints are sums of a
//! few rank-one products of sparse vectors; they are stored in that factored
//! form so evaluation and gradients cost O(nnz) instead of O(n²). A dense
//! representation exists for generic problems and for materializing `V_j`.

use std::io::{self, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::qp::RowBlock;
use crate::solver::SolverError;

/// Sparse vector as index/value pairs (indices strictly increasing is not
/// required, duplicates accumulate).
pub type SparseVec = Vec<(usize, f64)>;

/// Affine form `aᵀx + a₀` with a sparse coefficient vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineTerm {
    pub coeffs: SparseVec,
    pub constant: f64,
}

impl AffineTerm {
    pub fn new(coeffs: SparseVec, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.coeffs
            .iter()
            .map(|&(i, v)| v * x[i])
            .sum::<f64>()
            + self.constant
    }

    fn add_scaled_into(&self, scale: f64, out: &mut DVector<f64>) {
        for &(i, v) in &self.coeffs {
            out[i] += scale * v;
        }
    }
}

/// Quadratic part of a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadForm {
    /// Explicit symmetric matrix.
    Dense(DMatrix<f64>),
    /// `Σ c_l (a_lᵀx)(b_lᵀx)` with sparse factors; equivalent to
    /// `V = ½ Σ c_l (a_l b_lᵀ + b_l a_lᵀ)`.
    Products(Vec<(f64, SparseVec, SparseVec)>),
}

/// One quadratic inequality `xᵀV x + vᵀx + σ ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    form: QuadForm,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadConstraint {
    /// Dense constructor; `v_matrix` is symmetrized on insertion.
    pub fn from_dense(v_matrix: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Self {
        let sym = (&v_matrix + v_matrix.transpose()) * 0.5;
        Self {
            form: QuadForm::Dense(sym),
            linear,
            constant,
        }
    }

    /// Build from affine products `Σ c_l (a_lᵀx + a₀)(b_lᵀx + b₀)` plus
    /// additional affine terms `Σ d_m (e_mᵀx + e₀)`. The affine constants
    /// are folded into the linear vector and the constant.
    pub fn from_products(
        n: usize,
        products: Vec<(f64, AffineTerm, AffineTerm)>,
        affine: Vec<(f64, AffineTerm)>,
    ) -> Self {
        let mut linear = DVector::zeros(n);
        let mut constant = 0.0;
        let mut quad = Vec::with_capacity(products.len());
        for (c, a, b) in products {
            a.add_scaled_into(c * b.constant, &mut linear);
            b.add_scaled_into(c * a.constant, &mut linear);
            constant += c * a.constant * b.constant;
            quad.push((c, a.coeffs, b.coeffs));
        }
        for (d, e) in affine {
            e.add_scaled_into(d, &mut linear);
            constant += d * e.constant;
        }
        Self {
            form: QuadForm::Products(quad),
            linear,
            constant,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let quad = match &self.form {
            QuadForm::Dense(v) => (v * x).dot(x),
            QuadForm::Products(terms) => terms
                .iter()
                .map(|(c, a, b)| {
                    c * sparse_dot(a, x) * sparse_dot(b, x)
                })
                .sum(),
        };
        quad + self.linear.dot(x) + self.constant
    }

    /// `∇h = 2V x + v` written into `out`.
    pub fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.form {
            QuadForm::Dense(v) => {
                out.copy_from(&self.linear);
                out.gemv(2.0, v, x, 1.0);
            }
            QuadForm::Products(terms) => {
                out.copy_from(&self.linear);
                for (c, a, b) in terms {
                    let av = sparse_dot(a, x);
                    let bv = sparse_dot(b, x);
                    for &(i, v) in a {
                        out[i] += c * bv * v;
                    }
                    for &(i, v) in b {
                        out[i] += c * av * v;
                    }
                }
            }
        }
    }

    /// Materialize the symmetric matrix `V`.
    pub fn dense_v(&self, n: usize) -> DMatrix<f64> {
        match &self.form {
            QuadForm::Dense(v) => v.clone(),
            QuadForm::Products(terms) => {
                let mut v = DMatrix::zeros(n, n);
                for (c, a, b) in terms {
                    for &(i, av) in a {
                        for &(jc, bv) in b {
                            v[(i, jc)] += 0.5 * c * av * bv;
                            v[(jc, i)] += 0.5 * c * av * bv;
                        }
                    }
                }
                v
            }
        }
    }
}

fn sparse_dot(s: &SparseVec, x: &DVector<f64>) -> f64 {
    s.iter().map(|&(i, v)| v * x[i]).sum()
}

/// A span of the decision vector treated as one channel by the SQP
/// termination rule. Channels fully bound by equality rows are flagged
/// `pinned`; their increments are identically zero and carry no
/// convergence information.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub label: String,
    pub range: Range<usize>,
    pub pinned: bool,
}

/// The full problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    /// Symmetric PSD objective matrix (convention `f = xᵀGx + gᵀx`).
    pub g_matrix: DMatrix<f64>,
    pub g_vector: DVector<f64>,
    pub quad: Vec<QuadConstraint>,
    pub lin_ineq: RowBlock,
    pub lin_eq: RowBlock,
    pub channels: Vec<Channel>,
}

impl QcqpProblem {
    pub fn new(g_matrix: DMatrix<f64>, g_vector: DVector<f64>) -> Self {
        let n = g_vector.len();
        assert_eq!(g_matrix.nrows(), n);
        assert_eq!(g_matrix.ncols(), n);
        let sym = (&g_matrix + g_matrix.transpose()) * 0.5;
        Self {
            g_matrix: sym,
            g_vector,
            quad: Vec::new(),
            lin_ineq: RowBlock::new(n),
            lin_eq: RowBlock::new(n),
            channels: vec![Channel {
                label: "all".to_string(),
                range: 0..n,
                pinned: false,
            }],
        }
    }

    pub fn n(&self) -> usize {
        self.g_vector.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (&self.g_matrix * x).dot(x) + self.g_vector.dot(x)
    }

    /// Largest quadratic-constraint value (positive means violated).
    pub fn max_quad_violation(&self, x: &DVector<f64>) -> f64 {
        self.quad
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Linearize about `x` into reusable storage. Row order:
    /// coefficient-stable linear rows first, then one row per quadratic
    /// constraint. Right-hand sides are expressed in step coordinates Δ.
    pub fn linearize_into(&self, x: &DVector<f64>, qp: &mut LinearizedQp) -> Result<(), SolverError> {
        let n = self.n();
        if x.len() != n {
            return Err(SolverError::DimensionMismatch);
        }

        qp.hessian = &self.g_matrix * 2.0;
        qp.gradient = &self.g_matrix * x * 2.0 + &self.g_vector;

        if qp.ineq.cols() != n {
            qp.ineq = RowBlock::new(n);
            qp.eq = RowBlock::new(n);
        }
        qp.ineq.clear();
        qp.eq.clear();
        for (row, b) in self.lin_ineq.rows() {
            qp.ineq.push(row, b - dot(row, x.as_slice()));
        }
        qp.stable_ineq = qp.ineq.len();
        let mut grad = DVector::zeros(n);
        for c in &self.quad {
            c.gradient_into(x, &mut grad);
            qp.ineq.push(grad.as_slice(), -c.value(x));
        }
        for (row, b) in self.lin_eq.rows() {
            qp.eq.push(row, b - dot(row, x.as_slice()));
        }
        Ok(())
    }

    /// Allocating variant of [`Self::linearize_into`].
    pub fn linearize(&self, x: &DVector<f64>) -> Result<LinearizedQp, SolverError> {
        let mut qp = LinearizedQp::default();
        self.linearize_into(x, &mut qp)?;
        Ok(qp)
    }

    /// Self-describing text dump for offline inspection. The format is a
    /// dimensions header followed by row-major values; see the README.
    pub fn dump_text(&self, w: &mut impl Write) -> io::Result<()> {
        let n = self.n();
        writeln!(
            w,
            "qcqp n={} quad={} lin_ineq={} lin_eq={}",
            n,
            self.quad.len(),
            self.lin_ineq.len(),
            self.lin_eq.len()
        )?;
        writeln!(w, "G {n} {n}")?;
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", self.g_matrix[(i, j)])).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        writeln!(w, "g {n}")?;
        let gv: Vec<String> = self.g_vector.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", gv.join(" "))?;
        for (k, c) in self.quad.iter().enumerate() {
            writeln!(w, "quad {k} V {n} {n}")?;
            let v = c.dense_v(n);
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", v[(i, j)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            writeln!(w, "quad {k} v {n}")?;
            let lv: Vec<String> = c.linear.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", lv.join(" "))?;
            writeln!(w, "quad {k} sigma {:.17e}", c.constant)?;
        }
        for (name, block) in [("lin_ineq", &self.lin_ineq), ("lin_eq", &self.lin_eq)] {
            writeln!(w, "{name} {} {}", block.len(), n + 1)?;
            for (row, b) in block.rows() {
                let mut parts: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                parts.push(format!("{b:.17e}"));
                writeln!(w, "{}", parts.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Linearization of a [`QcqpProblem`] about an iterate, in step
/// coordinates Δ.
#[derive(Debug, Clone, Default)]
pub struct LinearizedQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// `[stable linear rows | quadratic-constraint rows]`.
    pub ineq: RowBlock,
    /// Count of leading coefficient-stable rows in `ineq`.
    pub stable_ineq: usize,
    pub eq: RowBlock,
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
