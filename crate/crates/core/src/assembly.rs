//! Per-tick construction of the walking QCQP.
//!
//! The decision vector stacks, in order, the jerk sequences of the five
//! motion channels (CoM x/y/z, flywheel roll/pitch, each of horizon length)
//! followed by the three future-step location channels (x/y/z, each of
//! future-step count):
//!
//! `[J_cx | J_cy | J_cz | J_r | J_p | D_x | D_y | D_z]`
//!
//! The objective is block diagonal over those channels; the ZMP feasibility
//! box produces one quadratic constraint per horizon sample per bound
//! (vertical acceleration multiplies the horizontal ZMP offset, and the
//! optimized step locations move the box — both bilinear couplings);
//! everything else is linear. Balance strategies are disabled by pinning
//! the corresponding channels to their references with equality rows.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::gait::{FootstepPlan, HorizonMapping, ReferenceBundle};
use crate::pendulum::{AxisState, ModelParams, MotionChannel, PendulumState, PredictionMatrices};
use crate::solver::{AffineTerm, Channel, QcqpProblem, QuadConstraint, RowBlock};

/// Objective weights, one entry per channel in decision-vector order
/// (motion channels: CoM x, y, z, roll, pitch; step channels: x, y, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    /// Velocity penalties α.
    pub velocity: [f64; 5],
    /// Position tracking penalties β.
    pub position: [f64; 5],
    /// Jerk penalties γ.
    pub jerk: [f64; 5],
    /// Step-location tracking penalties δ.
    pub step: [f64; 3],
}

impl Default for Weights {
    fn default() -> Self {
        // Reference profile: stiff step tracking, stiff height/angle
        // tracking, soft horizontal tracking, jerk as a regularizer. The
        // sagittal position weight stays low because its reference is a
        // per-cycle staircase; chasing it hard presses the ZMP against the
        // toe edge and leaks the transfer effort into the height and
        // rotation channels.
        Self {
            velocity: [1.0; 5],
            position: [20.0, 50.0, 200.0, 200.0, 200.0],
            jerk: [1e-3; 5],
            step: [1000.0; 3],
        }
    }
}

impl Weights {
    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .velocity
            .iter()
            .chain(&self.position)
            .chain(&self.jerk)
            .chain(&self.step);
        for v in all {
            if *v < 0.0 || !v.is_finite() {
                return Err(format!("weights must be non-negative, got {v}"));
            }
        }
        for c in 0..5 {
            if self.position[c] <= 0.0 && self.jerk[c] <= 0.0 {
                return Err(format!(
                    "channel {c}: at least one of position/jerk weight must be positive"
                ));
            }
        }
        for (a, d) in self.step.iter().enumerate() {
            if *d <= 0.0 {
                return Err(format!("step channel {a}: tracking weight must be positive"));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut w = *self;
        w.velocity.iter_mut().for_each(|v| *v *= factor);
        w.position.iter_mut().for_each(|v| *v *= factor);
        w.jerk.iter_mut().for_each(|v| *v *= factor);
        w.step.iter_mut().for_each(|v| *v *= factor);
        w
    }
}

/// Feasibility bounds. Defaults follow the reference robot's constraint
/// table: a forward-biased ZMP box, step geometry and rate limits, a CoM
/// height band, inclination boxes and hip torque limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub zmp_x_min_m: f64,
    pub zmp_x_max_m: f64,
    pub zmp_y_min_m: f64,
    pub zmp_y_max_m: f64,
    pub step_x_min_m: f64,
    pub step_x_max_m: f64,
    pub step_width_min_m: f64,
    pub step_width_max_m: f64,
    pub step_rate_x_min_m_s: f64,
    pub step_rate_x_max_m_s: f64,
    pub step_rate_y_min_m_s: f64,
    pub step_rate_y_max_m_s: f64,
    pub height_dev_min_m: f64,
    pub height_dev_max_m: f64,
    pub roll_min_rad: f64,
    pub roll_max_rad: f64,
    pub pitch_min_rad: f64,
    pub pitch_max_rad: f64,
    pub torque_roll_min_nm: f64,
    pub torque_roll_max_nm: f64,
    pub torque_pitch_min_nm: f64,
    pub torque_pitch_max_nm: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            zmp_x_min_m: -0.03,
            zmp_x_max_m: 0.07,
            zmp_y_min_m: -0.05,
            zmp_y_max_m: 0.05,
            step_x_min_m: -0.1,
            step_x_max_m: 0.3,
            step_width_min_m: 0.11,
            step_width_max_m: 0.2,
            step_rate_x_min_m_s: -1.0,
            step_rate_x_max_m_s: 3.0,
            step_rate_y_min_m_s: -1.0,
            step_rate_y_max_m_s: 1.0,
            height_dev_min_m: -0.15,
            height_dev_max_m: 0.1,
            roll_min_rad: -0.087,
            roll_max_rad: 0.175,
            pitch_min_rad: -0.175,
            pitch_max_rad: 0.175,
            torque_roll_min_nm: -80.0,
            torque_roll_max_nm: 80.0,
            torque_pitch_min_nm: -80.0,
            torque_pitch_max_nm: 80.0,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), String> {
        let pairs = [
            ("zmp_x", self.zmp_x_min_m, self.zmp_x_max_m),
            ("zmp_y", self.zmp_y_min_m, self.zmp_y_max_m),
            ("step_x", self.step_x_min_m, self.step_x_max_m),
            ("step_width", self.step_width_min_m, self.step_width_max_m),
            ("step_rate_x", self.step_rate_x_min_m_s, self.step_rate_x_max_m_s),
            ("step_rate_y", self.step_rate_y_min_m_s, self.step_rate_y_max_m_s),
            ("height_dev", self.height_dev_min_m, self.height_dev_max_m),
            ("roll", self.roll_min_rad, self.roll_max_rad),
            ("pitch", self.pitch_min_rad, self.pitch_max_rad),
            ("torque_roll", self.torque_roll_min_nm, self.torque_roll_max_nm),
            ("torque_pitch", self.torque_pitch_min_nm, self.torque_pitch_max_nm),
        ];
        for (name, lo, hi) in pairs {
            if !(lo < hi) {
                return Err(format!("{name}: min {lo} must be below max {hi}"));
            }
        }
        Ok(())
    }
}

/// Balance-strategy switches. A disabled strategy is enforced with equality
/// constraints pinning the corresponding quantities to their references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyToggles {
    pub step_adjustment: bool,
    pub body_rotation: bool,
    pub height_variation: bool,
    /// Restrict the disabled-rotation/height equalities to the first
    /// horizon sample instead of the full horizon.
    pub next_sample_only: bool,
}

impl Default for StrategyToggles {
    fn default() -> Self {
        Self::strategy(3).unwrap()
    }
}

impl StrategyToggles {
    /// The four canonical strategy combinations:
    /// 1 stepping only, 2 stepping + rotation, 3 all three,
    /// 4 rotation + height (no stepping).
    pub fn strategy(n: u8) -> Option<Self> {
        let (step, rot, height) = match n {
            1 => (true, false, false),
            2 => (true, true, false),
            3 => (true, true, true),
            4 => (false, true, true),
            _ => return None,
        };
        Some(Self {
            step_adjustment: step,
            body_rotation: rot,
            height_variation: height,
            next_sample_only: false,
        })
    }
}

/// Decision-vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
    pub future_steps: usize,
}

impl Layout {
    pub fn n(&self) -> usize {
        5 * self.horizon + 3 * self.future_steps
    }

    pub fn jerk_block(&self, ch: MotionChannel) -> Range<usize> {
        let idx = match ch {
            MotionChannel::ComX => 0,
            MotionChannel::ComY => 1,
            MotionChannel::ComZ => 2,
            MotionChannel::Roll => 3,
            MotionChannel::Pitch => 4,
        };
        idx * self.horizon..(idx + 1) * self.horizon
    }

    /// Step-location block; axis 0 = x, 1 = y, 2 = z.
    pub fn step_block(&self, axis: usize) -> Range<usize> {
        let base = 5 * self.horizon + axis * self.future_steps;
        base..base + self.future_steps
    }

    /// The eight termination channels with their pinned flags. A channel is
    /// pinned when equality rows remove all of its freedom: step heights
    /// always; toggled-off channels when the equalities span the horizon.
    pub fn channels(&self, toggles: &StrategyToggles) -> Vec<Channel> {
        let full = !toggles.next_sample_only;
        let pin_rot = !toggles.body_rotation && full;
        let pin_height = !toggles.height_variation && full;
        let pin_step = !toggles.step_adjustment;
        let mk = |label: &str, range: Range<usize>, pinned: bool| Channel {
            label: label.to_string(),
            range,
            pinned,
        };
        vec![
            mk("jerk_com_x", self.jerk_block(MotionChannel::ComX), false),
            mk("jerk_com_y", self.jerk_block(MotionChannel::ComY), false),
            mk("jerk_com_z", self.jerk_block(MotionChannel::ComZ), pin_height),
            mk("jerk_roll", self.jerk_block(MotionChannel::Roll), pin_rot),
            mk("jerk_pitch", self.jerk_block(MotionChannel::Pitch), pin_rot),
            mk("step_x", self.step_block(0), pin_step),
            mk("step_y", self.step_block(1), pin_step),
            mk("step_z", self.step_block(2), true),
        ]
    }
}

/// Everything one tick of problem construction needs.
pub struct AssemblyInput<'a> {
    pub state: &'a PendulumState,
    pub plan: &'a FootstepPlan,
    pub mapping: &'a HorizonMapping,
    pub references: &'a ReferenceBundle,
    pub weights: &'a Weights,
    pub bounds: &'a Bounds,
    pub toggles: &'a StrategyToggles,
    pub prediction: &'a PredictionMatrices,
    pub params: &'a ModelParams,
    /// Next-step locations (x, y) committed by the previous solve, for the
    /// step-rate constraint. At a cycle start this is the reference.
    pub prev_next_step: [f64; 2],
    /// Time between the previous solve and this one.
    pub rate_dt: f64,
}

fn axis_ref<'r>(refs: &'r ReferenceBundle, ch: MotionChannel) -> &'r DVector<f64> {
    match ch {
        MotionChannel::ComX => &refs.com_x,
        MotionChannel::ComY => &refs.com_y,
        MotionChannel::ComZ => &refs.com_z,
        MotionChannel::Roll => &refs.roll,
        MotionChannel::Pitch => &refs.pitch,
    }
}

fn state_vec3(s: AxisState) -> DVector<f64> {
    DVector::from_column_slice(&[s.pos, s.vel, s.acc])
}

/// Objective matrices `(G, g)`: block diagonal quadratic part with
/// `γ/2·I + α/2·PvuᵀPvu + β/2·PpuᵀPpu` on motion channels and `δ/2·I` on
/// step channels; the linear part tracks references.
pub fn assemble_objective(input: &AssemblyInput) -> (DMatrix<f64>, DVector<f64>) {
    let layout = Layout {
        horizon: input.prediction.horizon,
        future_steps: input.mapping.future_steps,
    };
    let n = layout.n();
    let h = layout.horizon;
    let pm = input.prediction;
    let mut g_matrix = DMatrix::zeros(n, n);
    let mut g_vector = DVector::zeros(n);

    let pvu_t_pvu = pm.p_vu.transpose() * &pm.p_vu;
    let ppu_t_ppu = pm.p_pu.transpose() * &pm.p_pu;

    for (c, ch) in MotionChannel::ALL.into_iter().enumerate() {
        let alpha = input.weights.velocity[c];
        let beta = input.weights.position[c];
        let gamma = input.weights.jerk[c];
        let block = layout.jerk_block(ch);

        let mut theta = &pvu_t_pvu * (alpha / 2.0) + &ppu_t_ppu * (beta / 2.0);
        for i in 0..h {
            theta[(i, i)] += gamma / 2.0;
        }
        g_matrix
            .view_mut((block.start, block.start), (h, h))
            .copy_from(&theta);

        let x_hat = state_vec3(input.state.channel(ch));
        let vel_free = &pm.p_vs * &x_hat;
        let pos_free = &pm.p_ps * &x_hat;
        let lin = pm.p_vu.transpose() * (vel_free * alpha)
            + pm.p_pu.transpose() * ((pos_free - axis_ref(input.references, ch)) * beta);
        g_vector.rows_mut(block.start, h).copy_from(&lin);
    }

    for axis in 0..3 {
        let delta = input.weights.step[axis];
        let block = layout.step_block(axis);
        let nf = layout.future_steps;
        for i in 0..nf {
            g_matrix[(block.start + i, block.start + i)] = delta / 2.0;
        }
        let refs = match axis {
            0 => &input.references.step_x,
            1 => &input.references.step_y,
            _ => &input.references.step_z,
        };
        for i in 0..nf {
            g_vector[block.start + i] = -delta * refs[i];
        }
    }

    (g_matrix, g_vector)
}

/// Sparse prediction-matrix row scattered into a decision-vector block.
fn row_term(m: &DMatrix<f64>, j: usize, block: &Range<usize>, constant: f64) -> AffineTerm {
    let coeffs = (0..=j).map(|c| (block.start + c, m[(j, c)])).collect();
    AffineTerm::new(coeffs, constant)
}

/// Quadratic ZMP box constraints: per horizon sample, upper and lower
/// bounds along x then y, each expressed as `xᵀVx + vᵀx + σ ≤ 0` equal to
/// the foot-relative ZMP offset scaled by `m(g + c̈_z)`.
pub fn assemble_zmp_constraints(input: &AssemblyInput) -> Vec<QuadConstraint> {
    let layout = Layout {
        horizon: input.prediction.horizon,
        future_steps: input.mapping.future_steps,
    };
    let n = layout.n();
    let h = layout.horizon;
    let pm = input.prediction;
    let params = input.params;
    let mass = params.mass;
    let support = input.plan.support();

    // Per-sample known support heights (step heights are pinned to the
    // references, so the vertical sequence is a constant per tick).
    let dz = input
        .mapping
        .support_sequence(support[2], &input.references.step_z);

    // Free-evolution scalars per channel.
    let pos_free_x = &pm.p_ps * state_vec3(input.state.com_x);
    let acc_free_x = &pm.p_as * state_vec3(input.state.com_x);
    let pos_free_y = &pm.p_ps * state_vec3(input.state.com_y);
    let acc_free_y = &pm.p_as * state_vec3(input.state.com_y);
    let pos_free_z = &pm.p_ps * state_vec3(input.state.com_z);
    let acc_free_z = &pm.p_as * state_vec3(input.state.com_z);
    let acc_free_roll = &pm.p_as * state_vec3(input.state.roll);
    let acc_free_pitch = &pm.p_as * state_vec3(input.state.pitch);

    let jx = layout.jerk_block(MotionChannel::ComX);
    let jy = layout.jerk_block(MotionChannel::ComY);
    let jz = layout.jerk_block(MotionChannel::ComZ);
    let jr = layout.jerk_block(MotionChannel::Roll);
    let jp = layout.jerk_block(MotionChannel::Pitch);
    let dx_block = layout.step_block(0);
    let dy_block = layout.step_block(1);

    let mut constraints = Vec::with_capacity(4 * h);
    for j in 0..h {
        // Vertical load factor w = g + c̈_z(k+j).
        let w = row_term(&pm.p_au, j, &jz, params.gravity + acc_free_z[j]);
        // Height lever s = c_z(k+j) − d_z(k+j).
        let s = row_term(&pm.p_pu, j, &jz, pos_free_z[j] - dz[j]);

        for (axis, (jerk_block, step_block, pos_free, acc_free, zmp_lo, zmp_hi)) in [
            (
                &jx,
                &dx_block,
                &pos_free_x,
                &acc_free_x,
                input.bounds.zmp_x_min_m,
                input.bounds.zmp_x_max_m,
            ),
            (
                &jy,
                &dy_block,
                &pos_free_y,
                &acc_free_y,
                input.bounds.zmp_y_min_m,
                input.bounds.zmp_y_max_m,
            ),
        ]
        .into_iter()
        .enumerate()
        {
            // Horizontal acceleration r and flywheel torque term t.
            let r = row_term(&pm.p_au, j, jerk_block, acc_free[j]);
            let (t, inertia, t_sign_upper) = if axis == 0 {
                // Pitch momentum subtracts from the sagittal ZMP.
                (
                    row_term(&pm.p_au, j, &jp, acc_free_pitch[j]),
                    params.inertia_pitch,
                    -1.0,
                )
            } else {
                // Roll momentum adds to the coronal ZMP.
                (
                    row_term(&pm.p_au, j, &jr, acc_free_roll[j]),
                    params.inertia_roll,
                    1.0,
                )
            };
            let support_axis = support[axis];
            let e_cur = input.mapping.current[j];

            for (bound, sign) in [(zmp_hi, 1.0), (zmp_lo, -1.0)] {
                // u = c_axis − d̄_axis − bound over [jerk | step] blocks.
                let mut coeffs: Vec<(usize, f64)> =
                    (0..=j).map(|c| (jerk_block.start + c, pm.p_pu[(j, c)])).collect();
                for k in 0..layout.future_steps {
                    let e = input.mapping.future[(j, k)];
                    if e != 0.0 {
                        coeffs.push((step_block.start + k, -e));
                    }
                }
                let u = AffineTerm::new(coeffs, pos_free[j] - e_cur * support_axis - bound);

                // sign·[ m·u·w − m·s·r + t_sign·I·θ̈ ] ≤ 0
                let products = vec![
                    (sign * mass, u, w.clone()),
                    (-sign * mass, s.clone(), r.clone()),
                ];
                let affine = vec![(sign * t_sign_upper * inertia, t.clone())];
                constraints.push(QuadConstraint::from_products(n, products, affine));
            }
        }
    }
    constraints
}

/// Linear rows: step geometry and rate, step-height equalities, CoM height
/// band, vertical-acceleration floor, inclination boxes, hip-torque boxes,
/// and the strategy-disabling equalities.
pub fn assemble_linear_constraints(input: &AssemblyInput) -> (RowBlock, RowBlock) {
    let layout = Layout {
        horizon: input.prediction.horizon,
        future_steps: input.mapping.future_steps,
    };
    let n = layout.n();
    let h = layout.horizon;
    let nf = layout.future_steps;
    let pm = input.prediction;
    let b = input.bounds;
    let support = input.plan.support();

    let mut ineq = RowBlock::with_capacity(n, 12 * h + 4 * nf + 4);
    let mut eq = RowBlock::with_capacity(n, 3 * h + 3 * nf);

    // Step range, x: chained differences within [min, max].
    let dx_block = layout.step_block(0);
    for i in 0..nf {
        for (sign, bound) in [(1.0, b.step_x_max_m), (-1.0, -b.step_x_min_m)] {
            let rhs = if i == 0 { bound + sign * support[0] } else { bound };
            let row = ineq.push_zeroed(rhs);
            row[dx_block.start + i] = sign;
            if i > 0 {
                row[dx_block.start + i - 1] = -sign;
            }
        }
    }
    // Step range, y: the signed width must stay within the band on the
    // side the landing foot belongs to (prevents leg crossing).
    let dy_block = layout.step_block(1);
    for i in 0..nf {
        let side_sign = input.plan.side_of(i + 1).sign();
        for (sign, bound) in [(1.0, b.step_width_max_m), (-1.0, -b.step_width_min_m)] {
            let coeff = sign * side_sign;
            let rhs = if i == 0 { bound + coeff * support[1] } else { bound };
            let row = ineq.push_zeroed(rhs);
            row[dy_block.start + i] = coeff;
            if i > 0 {
                row[dy_block.start + i - 1] = -coeff;
            }
        }
    }
    // Step rate on the next step only.
    let dt = input.rate_dt;
    for (axis, block, lo, hi) in [
        (0, &dx_block, b.step_rate_x_min_m_s, b.step_rate_x_max_m_s),
        (1, &dy_block, b.step_rate_y_min_m_s, b.step_rate_y_max_m_s),
    ] {
        let prev = input.prev_next_step[axis];
        let row = ineq.push_zeroed(prev + hi * dt);
        row[block.start] = 1.0;
        let row = ineq.push_zeroed(-(prev + lo * dt));
        row[block.start] = -1.0;
    }

    // CoM height band around the nominal pendulum height.
    let jz = layout.jerk_block(MotionChannel::ComZ);
    let pos_free_z = &pm.p_ps * state_vec3(input.state.com_z);
    let acc_free_z = &pm.p_as * state_vec3(input.state.com_z);
    let dz = input
        .mapping
        .support_sequence(support[2], &input.references.step_z);
    let h_ref = input.params.pendulum_height;
    for j in 0..h {
        let free = pos_free_z[j] - dz[j] - h_ref;
        let row = ineq.push_zeroed(b.height_dev_max_m - free);
        for c in 0..=j {
            row[jz.start + c] = pm.p_pu[(j, c)];
        }
        let row = ineq.push_zeroed(-(b.height_dev_min_m - free));
        for c in 0..=j {
            row[jz.start + c] = -pm.p_pu[(j, c)];
        }
    }
    // Unilateral contact: c̈_z ≥ −g.
    for j in 0..h {
        let row = ineq.push_zeroed(input.params.gravity + acc_free_z[j]);
        for c in 0..=j {
            row[jz.start + c] = -pm.p_au[(j, c)];
        }
    }
    // Inclination boxes.
    for (ch, lo, hi) in [
        (MotionChannel::Roll, b.roll_min_rad, b.roll_max_rad),
        (MotionChannel::Pitch, b.pitch_min_rad, b.pitch_max_rad),
    ] {
        let block = layout.jerk_block(ch);
        let pos_free = &pm.p_ps * state_vec3(input.state.channel(ch));
        for j in 0..h {
            let row = ineq.push_zeroed(hi - pos_free[j]);
            for c in 0..=j {
                row[block.start + c] = pm.p_pu[(j, c)];
            }
            let row = ineq.push_zeroed(-(lo - pos_free[j]));
            for c in 0..=j {
                row[block.start + c] = -pm.p_pu[(j, c)];
            }
        }
    }
    // Hip torque boxes, I·θ̈ within limits.
    for (ch, inertia, lo, hi) in [
        (
            MotionChannel::Roll,
            input.params.inertia_roll,
            b.torque_roll_min_nm,
            b.torque_roll_max_nm,
        ),
        (
            MotionChannel::Pitch,
            input.params.inertia_pitch,
            b.torque_pitch_min_nm,
            b.torque_pitch_max_nm,
        ),
    ] {
        let block = layout.jerk_block(ch);
        let acc_free = &pm.p_as * state_vec3(input.state.channel(ch));
        for j in 0..h {
            let free = inertia * acc_free[j];
            let row = ineq.push_zeroed(hi - free);
            for c in 0..=j {
                row[block.start + c] = inertia * pm.p_au[(j, c)];
            }
            let row = ineq.push_zeroed(-(lo - free));
            for c in 0..=j {
                row[block.start + c] = -inertia * pm.p_au[(j, c)];
            }
        }
    }

    // Step heights always equal their references.
    let dz_block = layout.step_block(2);
    for i in 0..nf {
        let row = eq.push_zeroed(input.references.step_z[i]);
        row[dz_block.start + i] = 1.0;
    }
    // Disabled stepping: horizontal step locations pinned.
    if !input.toggles.step_adjustment {
        for (axis, refs) in [(0, &input.references.step_x), (1, &input.references.step_y)] {
            let block = layout.step_block(axis);
            for i in 0..nf {
                let row = eq.push_zeroed(refs[i]);
                row[block.start + i] = 1.0;
            }
        }
    }
    // Disabled rotation / height variation: positions pinned to references
    // over the horizon (or only its first sample).
    let pin_rows = if input.toggles.next_sample_only { 1 } else { h };
    if !input.toggles.body_rotation {
        for ch in [MotionChannel::Roll, MotionChannel::Pitch] {
            let block = layout.jerk_block(ch);
            let refs = axis_ref(input.references, ch);
            let pos_free = &pm.p_ps * state_vec3(input.state.channel(ch));
            for j in 0..pin_rows {
                let row = eq.push_zeroed(refs[j] - pos_free[j]);
                for c in 0..=j {
                    row[block.start + c] = pm.p_pu[(j, c)];
                }
            }
        }
    }
    if !input.toggles.height_variation {
        let pos_free = &pm.p_ps * state_vec3(input.state.com_z);
        for j in 0..pin_rows {
            let row = eq.push_zeroed(input.references.com_z[j] - pos_free[j]);
            for c in 0..=j {
                row[jz.start + c] = pm.p_pu[(j, c)];
            }
        }
    }

    (ineq, eq)
}

/// Assemble the full tick problem.
pub fn build_problem(input: &AssemblyInput) -> QcqpProblem {
    let layout = Layout {
        horizon: input.prediction.horizon,
        future_steps: input.mapping.future_steps,
    };
    let (g_matrix, g_vector) = assemble_objective(input);
    let mut problem = QcqpProblem::new(g_matrix, g_vector);
    problem.quad = assemble_zmp_constraints(input);
    let (ineq, eq) = assemble_linear_constraints(input);
    problem.lin_ineq = ineq;
    problem.lin_eq = eq;
    problem.channels = layout.channels(input.toggles);
    debug_assert_eq!(problem.n(), layout.n());
    problem
}
