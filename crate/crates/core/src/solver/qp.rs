//! Dense convex quadratic programming.
//!
//! Solves `min ½ xᵀH x + gᵀx  s.t.  A_eq x = b_eq, A_in x ≤ b_in` with the
//! dual active-set method of Goldfarb and Idnani. The Hessian must be
//! positive definite; a positive-semidefinite Hessian is nudged by a small
//! diagonal regularization when a factorization pivot degenerates.
//!
//! Small equality blocks are handled directly inside the active-set loop.
//! Large equality blocks are pre-eliminated through a null-space basis and
//! the active-set iteration then runs on the reduced inequality-only
//! problem. [`QpEngine`] owns reusable workspace and caches the
//! factorizations that stay constant across a receding-horizon control loop.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum QpError {
    #[error("dimension mismatch between Hessian, gradient and constraint rows")]
    DimensionMismatch,
    #[error("no point satisfies the constraints")]
    Infeasible,
    #[error("active-set iteration limit exceeded")]
    IterationLimit,
    #[error("Hessian is not positive definite, even after regularization")]
    NotPositiveDefinite,
    #[error("numerical breakdown in the active-set iteration")]
    NumericalBreakdown,
}

/// Row-major block of linear constraint rows sharing one right-hand side
/// convention (`a·x ≤ b` or `a·x = b`, decided by the caller).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowBlock {
    cols: usize,
    coeffs: Vec<f64>,
    rhs: Vec<f64>,
}

impl RowBlock {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            coeffs: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn with_capacity(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            coeffs: Vec::with_capacity(cols * rows),
            rhs: Vec::with_capacity(rows),
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn push(&mut self, coeffs: &[f64], rhs: f64) {
        assert_eq!(coeffs.len(), self.cols, "row width mismatch");
        self.coeffs.extend_from_slice(coeffs);
        self.rhs.push(rhs);
    }

    /// Append a zero row and hand out its coefficient slice for in-place
    /// construction.
    pub fn push_zeroed(&mut self, rhs: f64) -> &mut [f64] {
        let start = self.coeffs.len();
        self.coeffs.resize(start + self.cols, 0.0);
        self.rhs.push(rhs);
        &mut self.coeffs[start..]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    pub fn set_rhs(&mut self, i: usize, value: f64) {
        self.rhs[i] = value;
    }

    pub fn clear(&mut self) {
        self.coeffs.clear();
        self.rhs.clear();
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.coeffs
            .chunks_exact(self.cols.max(1))
            .zip(self.rhs.iter().copied())
    }

    /// Residuals `a·x − b` for every row.
    pub fn residuals(&self, x: &DVector<f64>) -> Vec<f64> {
        self.rows()
            .map(|(row, b)| dot(row, x.as_slice()) - b)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of inequality rows active at the solution.
    pub active: Vec<usize>,
    /// Multipliers for every inequality row (zero when inactive).
    pub lagrange: Vec<f64>,
    pub iterations: usize,
}

// ---------------------------------------------------------------------------
// Hessian factorization
// ---------------------------------------------------------------------------

/// Factor of a positive definite Hessian, stored as `J₀ = L⁻ᵀ` where
/// `H = L Lᵀ` (column-major, upper triangular with zeroed lower part),
/// the form consumed by the dual active-set iteration.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    n: usize,
    j: Vec<f64>,
    pub regularized: bool,
}

const MIN_PIVOT: f64 = 1e-12;

pub fn factor_hessian(h: &DMatrix<f64>) -> Result<HessianFactor, QpError> {
    let n = h.nrows();
    if h.ncols() != n || n == 0 {
        return Err(QpError::DimensionMismatch);
    }
    let mut a = h.as_slice().to_vec();
    let mut regularized = false;
    let ok = matches!(cholesky_upper(&mut a, n), Some(p) if p >= MIN_PIVOT);
    if !ok {
        let lambda = 1e-10 * h.trace() / n as f64;
        a.copy_from_slice(h.as_slice());
        for i in 0..n {
            a[i + i * n] += lambda;
        }
        regularized = true;
        match cholesky_upper(&mut a, n) {
            Some(p) if p > 0.0 => {}
            _ => return Err(QpError::NotPositiveDefinite),
        }
    }
    invert_upper(&mut a, n);
    for j in 0..n {
        for i in j + 1..n {
            a[i + j * n] = 0.0;
        }
    }
    Ok(HessianFactor {
        n,
        j: a,
        regularized,
    })
}

/// In-place Cholesky `H = RᵀR` on the upper triangle (column-major).
/// Returns the smallest pivot, or `None` if a pivot is non-positive.
fn cholesky_upper(a: &mut [f64], n: usize) -> Option<f64> {
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        for k in 0..j {
            let s = dot(&a[k * n..k * n + k], &a[j * n..j * n + k]);
            a[k + j * n] = (a[k + j * n] - s) / a[k + k * n];
        }
        let col = &a[j * n..j * n + j];
        let s = a[j + j * n] - dot(col, col);
        if s <= 0.0 || !s.is_finite() {
            return None;
        }
        let pivot = s.sqrt();
        a[j + j * n] = pivot;
        min_pivot = min_pivot.min(pivot);
    }
    Some(min_pivot)
}

/// Invert an upper triangular matrix in place (column-major).
fn invert_upper(a: &mut [f64], n: usize) {
    for k in 0..n {
        let dk = 1.0 / a[k + k * n];
        a[k + k * n] = dk;
        for v in &mut a[k * n..k * n + k] {
            *v *= -dk;
        }
        let (left, right) = a.split_at_mut((k + 1) * n);
        let col_k = &left[k * n..k * n + k];
        for col in right.chunks_exact_mut(n) {
            let factor = col[k];
            axpy(factor, col_k, &mut col[..k]);
            col[k] = factor * dk;
        }
    }
}

// ---------------------------------------------------------------------------
// Dual active-set core (inequality rows plus an optional leading equality
// block handled in-loop)
// ---------------------------------------------------------------------------

/// Normalized constraint violations below this are treated as satisfied.
const VIOLATION_TOL: f64 = 1e-11;

#[derive(Debug, Default)]
struct GiWorkspace {
    j: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
    z: Vec<f64>,
    step_r: Vec<f64>,
    slack: Vec<f64>,
    norms: Vec<f64>,
    x: Vec<f64>,
    active: Vec<usize>,
    mult: Vec<f64>,
    skip: Vec<bool>,
    is_active: Vec<bool>,
}

struct GiOutput {
    x: Vec<f64>,
    active: Vec<usize>,
    mult: Vec<f64>,
    iterations: usize,
}

/// Goldfarb-Idnani dual active-set iteration. `rows[..meq]` are equalities,
/// the rest are `a·x ≤ b`. The factor is copied into the workspace because
/// the iteration rotates it in place.
fn dual_active_set(
    factor: &HessianFactor,
    gradient: &[f64],
    rows: &RowBlock,
    meq: usize,
    max_iter: usize,
    ws: &mut GiWorkspace,
) -> Result<GiOutput, QpError> {
    let n = factor.n;
    let q = rows.len();
    if gradient.len() != n || (q > 0 && rows.cols() != n) || meq > q {
        return Err(QpError::DimensionMismatch);
    }

    ws.j.clear();
    ws.j.extend_from_slice(&factor.j);
    let rmax = n.min(q);
    ws.r.clear();
    ws.r.resize(rmax * (rmax + 1) / 2 + 1, 0.0);
    ws.d.clear();
    ws.d.resize(n, 0.0);
    ws.z.clear();
    ws.z.resize(n, 0.0);
    ws.step_r.clear();
    ws.step_r.resize(rmax, 0.0);
    ws.slack.clear();
    ws.slack.resize(q, 0.0);
    ws.norms.clear();
    ws.active.clear();
    ws.mult.clear();
    ws.skip.clear();
    ws.skip.resize(q, false);
    ws.is_active.clear();
    ws.is_active.resize(q, false);

    let j = &mut ws.j;

    // Unconstrained minimizer x = −J (Jᵀ g).
    for i in 0..n {
        ws.d[i] = dot(&j[i * n..(i + 1) * n], gradient);
    }
    ws.x.clear();
    ws.x.resize(n, 0.0);
    for i in 0..n {
        axpy(-ws.d[i], &j[i * n..(i + 1) * n], &mut ws.x);
    }

    for (row, b) in rows.rows() {
        let nrm = dot(row, row).sqrt();
        if nrm == 0.0 && b < -VIOLATION_TOL {
            return Err(QpError::Infeasible);
        }
        ws.norms.push(if nrm > 0.0 { nrm } else { 1.0 });
    }

    let mut iterations = 0usize;
    'outer: loop {
        // Equality rows are examined first with a cheap scan restricted to
        // them: once an equality joins the active set it stays exactly
        // satisfied (steps move inside its null space), so the full pass
        // over every row is only needed after the equality block settles.
        let mut add = usize::MAX;
        let mut worst = VIOLATION_TOL;
        for i in 0..meq {
            if ws.skip[i] || ws.is_active[i] {
                continue;
            }
            let s = rows.rhs(i) - dot(rows.row(i), &ws.x);
            ws.slack[i] = s;
            let v = s.abs() / ws.norms[i];
            if v > worst {
                worst = v;
                add = i;
            }
        }
        if add == usize::MAX {
            // Full pass: pick the worst violated inequality.
            for (i, (row, b)) in rows.rows().enumerate().skip(meq) {
                ws.slack[i] = if ws.is_active[i] {
                    0.0
                } else {
                    b - dot(row, &ws.x)
                };
            }
            for i in meq..q {
                if ws.skip[i] || ws.is_active[i] {
                    continue;
                }
                let v = -ws.slack[i] / ws.norms[i];
                if v > worst {
                    worst = v;
                    add = i;
                }
            }
        }
        if add == usize::MAX {
            break 'outer;
        }

        let mut slack_cur = ws.slack[add];
        let direction = slack_cur.signum();
        let mut u_add = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }

            let a_add = rows.row(add);
            // d = Jᵀ (direction · a); z = J₂ d₂ is the primal step direction.
            for i in 0..n {
                ws.d[i] = direction * dot(&j[i * n..(i + 1) * n], a_add);
            }
            let na = ws.active.len();
            ws.z.iter_mut().for_each(|v| *v = 0.0);
            for i in na..n {
                axpy(ws.d[i], &j[i * n..(i + 1) * n], &mut ws.z);
            }
            // step_r = R⁻¹ d₁ is the (negated) dual step direction.
            ws.step_r[..na].copy_from_slice(&ws.d[..na]);
            for i in (0..na).rev() {
                let start = i * (i + 1) / 2;
                ws.step_r[i] /= ws.r[start + i];
                let (head, tail) = ws.step_r.split_at_mut(i);
                axpy(-tail[0], &ws.r[start..start + i], head);
            }

            // Longest dual-feasible step, possibly dropping a constraint.
            let mut t1 = f64::INFINITY;
            let mut drop = usize::MAX;
            for k in 0..na {
                if ws.active[k] >= meq && ws.step_r[k] > 0.0 {
                    let t = ws.mult[k] / ws.step_r[k];
                    if t < t1 {
                        t1 = t;
                        drop = k;
                    }
                }
            }

            // Step that brings the new constraint's slack to zero.
            let zz = dot(&ws.z, &ws.z);
            let t2 = if zz.abs() <= f64::EPSILON {
                f64::INFINITY
            } else {
                slack_cur / dot(&ws.z, a_add)
            };

            if !t1.is_finite() && !t2.is_finite() {
                // The normal lies in the span of the active set and no
                // multiplier can yield: a noise-level violation of such a
                // row is rounding, anything larger is genuine
                // infeasibility.
                if slack_cur.abs() <= 1e-9 * (1.0 + rows.rhs(add).abs()) {
                    ws.skip[add] = true;
                    continue 'outer;
                }
                return Err(QpError::Infeasible);
            }
            let full_step = t2 <= t1;
            let step = if full_step { t2 } else { t1 };
            if !step.is_finite() && full_step {
                return Err(QpError::NumericalBreakdown);
            }

            if step.is_finite() {
                axpy(step, &ws.z, &mut ws.x);
                for k in 0..na {
                    ws.mult[k] -= step * ws.step_r[k];
                }
                u_add += step;
            }
            if !ws.x.iter().all(|v| v.is_finite()) {
                return Err(QpError::NumericalBreakdown);
            }

            if full_step {
                ws.mult.push(u_add);
                ws.active.push(add);
                ws.is_active[add] = true;
                let na = ws.active.len();
                qr_insert(na, &mut ws.d, j, n);
                let start = na * (na - 1) / 2;
                ws.r[start..start + na].copy_from_slice(&ws.d[..na]);
                // Degeneracy is relative to the active set, which changed.
                ws.skip.iter_mut().for_each(|s| *s = false);
                continue 'outer;
            }

            // Partial step: drop the blocking constraint and retry.
            let na = ws.active.len();
            let rlen = na * (na + 1) / 2;
            qr_delete(drop + 1, j, &mut ws.r[..rlen], n, na);
            ws.mult.remove(drop);
            ws.is_active[ws.active[drop]] = false;
            ws.active.remove(drop);
            ws.skip.iter_mut().for_each(|s| *s = false);
            slack_cur = rows.rhs(add) - dot(rows.row(add), &ws.x);
        }
    }

    Ok(GiOutput {
        x: ws.x.clone(),
        active: ws.active.clone(),
        mult: ws.mult.clone(),
        iterations,
    })
}

/// Zero `d[k..n]` with Givens rotations applied from the bottom up, rotating
/// the corresponding column pairs of `j` (column-major n×n).
fn qr_insert(k: usize, d: &mut [f64], j: &mut [f64], n: usize) {
    for i in (k..n).rev() {
        if d[i] == 0.0 {
            continue;
        }
        let (left, right) = j.split_at_mut(i * n);
        let col_prev = &mut left[(i - 1) * n..];
        let col_cur = &mut right[..n];
        if d[i - 1] == 0.0 {
            d[i - 1] = d[i];
            col_prev.swap_with_slice(col_cur);
        } else {
            let h = hypot_signed(d[i - 1], d[i]);
            let gc = d[i - 1] / h;
            let gs = d[i] / h;
            let nu = d[i] / (d[i - 1] + h);
            d[i - 1] = h;
            for (a, b) in col_prev.iter_mut().zip(col_cur.iter_mut()) {
                let t = gc * *a + gs * *b;
                *b = nu * (*a + t) - *b;
                *a = t;
            }
        }
    }
}

/// Remove the `col`-th (1-based) column of the packed triangular factor and
/// restore triangularity, rotating `j`'s columns accordingly.
fn qr_delete(col: usize, j: &mut [f64], r: &mut [f64], n: usize, na: usize) {
    for i in col..na {
        let di = i * (i + 1) / 2;
        let l = di + i;
        if r[l] == 0.0 {
            let (left, right) = j.split_at_mut(i * n);
            left[(i - 1) * n..].swap_with_slice(&mut right[..n]);
            let (rl, rr) = r.split_at_mut(di);
            rl[di - i..].swap_with_slice(&mut rr[..i]);
            continue;
        }
        if r[l - 1] == 0.0 {
            let mut ind = l;
            for jj in i + 1..=na {
                r.swap(ind - 1, ind);
                ind += jj;
            }
            let (left, right) = j.split_at_mut(i * n);
            left[(i - 1) * n..].swap_with_slice(&mut right[..n]);
        } else {
            let h = hypot_signed(r[l - 1], r[l]);
            let gc = r[l - 1] / h;
            let gs = r[l] / h;
            let nu = r[l] / (r[l - 1] + h);
            let mut ind = l;
            for jj in i + 1..=na {
                let t = gc * r[ind - 1] + gs * r[ind];
                r[ind] = nu * (r[ind - 1] + t) - r[ind];
                r[ind - 1] = t;
                ind += jj;
            }
            let (left, right) = j.split_at_mut(i * n);
            let col_prev = &mut left[(i - 1) * n..];
            let col_cur = &mut right[..n];
            for (a, b) in col_prev.iter_mut().zip(col_cur.iter_mut()) {
                let t = gc * *a + gs * *b;
                *b = nu * (*a + t) - *b;
                *a = t;
            }
        }
        let (rl, rr) = r.split_at_mut(di);
        rl[di - i..].swap_with_slice(&mut rr[..i]);
    }
}

/// `hypot` carrying the sign of the leading component.
fn hypot_signed(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a.abs() < b.abs() {
        (a.abs(), b.abs())
    } else {
        (b.abs(), a.abs())
    };
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    (hi * (1.0 + ratio * ratio).sqrt()).copysign(a)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// Reusable QP solving engine.
///
/// When `structure_epoch` is set, the engine assumes the Hessian does not
/// change between calls within one epoch and reuses its factorization
/// (the dominant constant cost of a receding-horizon loop, where only
/// gradients, right-hand sides and the linearized constraint rows move).
#[derive(Debug, Default)]
pub struct QpEngine {
    epoch: Option<u64>,
    cached_factor: Option<(u64, HessianFactor)>,
    gi: GiWorkspace,
    rows: RowBlock,
}

impl QpEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_structure_epoch(&mut self, epoch: Option<u64>) {
        self.epoch = epoch;
    }

    /// Solve `min ½xᵀHx + gᵀx` s.t. `eq` rows hold with equality and `ineq`
    /// rows hold as `a·x ≤ b`.
    pub fn solve(
        &mut self,
        hessian: &DMatrix<f64>,
        gradient: &DVector<f64>,
        ineq: &RowBlock,
        eq: &RowBlock,
        max_iter: usize,
    ) -> Result<QpSolution, QpError> {
        let n = hessian.nrows();
        if hessian.ncols() != n
            || gradient.len() != n
            || (!ineq.is_empty() && ineq.cols() != n)
            || (!eq.is_empty() && eq.cols() != n)
        {
            return Err(QpError::DimensionMismatch);
        }

        let reuse = matches!((self.epoch, &self.cached_factor), (Some(e), Some((c, f))) if *c == e && f.n == n);
        if !reuse {
            let factor = factor_hessian(hessian)?;
            self.cached_factor = Some((self.epoch.unwrap_or(0), factor));
        }
        let factor = &self.cached_factor.as_ref().unwrap().1;

        let meq = eq.len();
        // Combined rows: equalities first.
        let mut rows = std::mem::take(&mut self.rows);
        rows.clear();
        if rows.cols() != n {
            rows = RowBlock::with_capacity(n, meq + ineq.len());
        }
        for (row, b) in eq.rows() {
            rows.push(row, b);
        }
        for (row, b) in ineq.rows() {
            rows.push(row, b);
        }

        let out = dual_active_set(factor, gradient.as_slice(), &rows, meq, max_iter, &mut self.gi);
        self.rows = rows;
        let out = out?;

        let mut lagrange = vec![0.0; ineq.len()];
        let mut active = Vec::new();
        for (&idx, &u) in out.active.iter().zip(out.mult.iter()) {
            if idx >= meq {
                lagrange[idx - meq] = u;
                active.push(idx - meq);
            }
        }
        active.sort_unstable();
        Ok(QpSolution {
            x: DVector::from_vec(out.x),
            active,
            lagrange,
            iterations: out.iterations,
        })
    }
}

/// One-shot convenience wrapper around [`QpEngine`].
pub fn solve_qp(
    hessian: &DMatrix<f64>,
    gradient: &DVector<f64>,
    ineq: &RowBlock,
    eq: &RowBlock,
    max_iter: usize,
) -> Result<QpSolution, QpError> {
    QpEngine::new().solve(hessian, gradient, ineq, eq, max_iter)
}
