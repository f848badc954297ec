//! Assembly of the per-iteration convex subproblem.
//!
//! The decision vector stacks scaled node states, node inputs, interval
//! dilations, signed dynamics-relaxation slacks (split into nonnegative
//! pairs), and — when the continuous-time corridor channel is active — one
//! scalar corridor slack pair per interval. The objective combines the
//! flight costs (final time, thrust, input rate, angular rate) with 1-norm
//! relaxation penalties and a quadratic proximity penalty to the reference.

use nalgebra::SVector;
use thiserror::Error;

use crate::constraints::{ConstraintRow, RowKind, VarRef};
use crate::model::{input_idx, state_idx, InputVec, StateVec, INPUT_DIM, STATE_DIM};
use crate::qp::{QpProblem, QpSolution, QpStatus, SparseRow};
use crate::transcription::{IntervalLinearization, MeshSpec, TrajectoryIterate};

/// Cost and penalty weights of the subproblem objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Weights {
    /// Weight on the total flight time.
    pub time: f64,
    /// Weight on the squared engine thrust state.
    pub thrust: f64,
    /// Weight on squared successive differences of the surface commands.
    pub input_rate: f64,
    /// Weight on the squared body angular rates.
    pub angular_rate: f64,
    /// 1-norm penalty on the dynamics/corridor relaxation slacks.
    pub virtual_control: f64,
    /// Quadratic proximity penalty to the reference iterate.
    pub trust_region: f64,
    /// Extrapolation step length applied after each accepted solution.
    pub extrapolation: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            time: 0.02,
            thrust: 10.0,
            input_rate: 1.0,
            angular_rate: 10.0,
            virtual_control: 100.0,
            trust_region: 1.0,
            extrapolation: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error("weights must be positive and the extrapolation step at least 1")]
    InvalidWeights,
    #[error("{blocks} linearized blocks supplied for {intervals} intervals")]
    BlockCount { blocks: usize, intervals: usize },
    #[error("corridor channel missing from linearized interval {interval}")]
    MissingCorridor { interval: usize },
    #[error("constraint row references node {node} beyond the final node {max}")]
    RowNode { node: usize, max: usize },
    #[error("constraint row references interval {interval} beyond {max}")]
    RowInterval { interval: usize, max: usize },
}

impl Weights {
    pub fn validate(&self) -> Result<(), SubproblemError> {
        let positive = [
            self.time,
            self.thrust,
            self.input_rate,
            self.angular_rate,
            self.virtual_control,
            self.trust_region,
        ];
        if positive.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(SubproblemError::InvalidWeights);
        }
        if !(self.extrapolation >= 1.0) || !self.extrapolation.is_finite() {
            return Err(SubproblemError::InvalidWeights);
        }
        Ok(())
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Variable scaling
// ─────────────────────────────────────────────────────────────────────────────

/// Per-variable linear scaling mapping physical ranges to O(1) intervals:
/// positions by 10⁴ m, velocities by 10² m/s, angles and rates by 1, and
/// dilations by 10 s.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub state: StateVec,
    pub input: InputVec,
    pub dilation: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        let mut state = StateVec::from_element(1.0);
        for i in 0..3 {
            state[state_idx::P_N + i] = 1.0e4;
            state[state_idx::U + i] = 1.0e2;
        }
        Self {
            state,
            input: InputVec::from_element(1.0),
            dilation: 10.0,
        }
    }
}

impl Scaling {
    /// No-op scaling, useful for evaluating the raw penalty formulas.
    pub fn identity() -> Self {
        Self {
            state: StateVec::from_element(1.0),
            input: InputVec::from_element(1.0),
            dilation: 1.0,
        }
    }

    pub fn scale_state(&self, x: &StateVec) -> StateVec {
        x.component_div(&self.state)
    }

    pub fn unscale_state(&self, x: &StateVec) -> StateVec {
        x.component_mul(&self.state)
    }

    /// Scale factor of one decision variable.
    pub fn of(&self, var: VarRef) -> f64 {
        match var {
            VarRef::State { component, .. } => self.state[component],
            VarRef::Input { component, .. } => self.input[component],
            VarRef::Dilation { .. } => self.dilation,
        }
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Decision-vector layout
// ─────────────────────────────────────────────────────────────────────────────

/// Column layout of the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub intervals: usize,
    /// Whether the corridor slack pairs are present.
    pub ctcs: bool,
}

impl VarLayout {
    pub fn state(&self, node: usize, component: usize) -> usize {
        node * STATE_DIM + component
    }

    pub fn input(&self, node: usize, component: usize) -> usize {
        (self.intervals + 1) * STATE_DIM + node * INPUT_DIM + component
    }

    pub fn dilation(&self, interval: usize) -> usize {
        (self.intervals + 1) * (STATE_DIM + INPUT_DIM) + interval
    }

    fn slack_base(&self) -> usize {
        (self.intervals + 1) * (STATE_DIM + INPUT_DIM) + self.intervals
    }

    pub fn defect_pos(&self, interval: usize, component: usize) -> usize {
        self.slack_base() + interval * STATE_DIM + component
    }

    pub fn defect_neg(&self, interval: usize, component: usize) -> usize {
        self.slack_base() + self.intervals * STATE_DIM + interval * STATE_DIM + component
    }

    pub fn corridor_pos(&self, interval: usize) -> usize {
        debug_assert!(self.ctcs);
        self.slack_base() + 2 * self.intervals * STATE_DIM + interval
    }

    pub fn corridor_neg(&self, interval: usize) -> usize {
        debug_assert!(self.ctcs);
        self.slack_base() + 2 * self.intervals * STATE_DIM + self.intervals + interval
    }

    pub fn total(&self) -> usize {
        self.slack_base()
            + 2 * self.intervals * STATE_DIM
            + if self.ctcs { 2 * self.intervals } else { 0 }
    }

    /// Column of a symbolic variable reference.
    pub fn column(&self, var: VarRef) -> usize {
        match var {
            VarRef::State { node, component } => self.state(node, component),
            VarRef::Input { node, component } => self.input(node, component),
            VarRef::Dilation { interval } => self.dilation(interval),
        }
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Costs and penalties
// ─────────────────────────────────────────────────────────────────────────────

/// Flight-cost components of an iterate, in physical units
/// (seconds and radians).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DiscreteCosts {
    pub time: f64,
    pub thrust: f64,
    pub input_rate: f64,
    pub angular_rate: f64,
}

impl DiscreteCosts {
    /// Weighted sum of the four components.
    pub fn weighted(&self, w: &Weights) -> f64 {
        w.time * self.time
            + w.thrust * self.thrust
            + w.input_rate * self.input_rate
            + w.angular_rate * self.angular_rate
    }
}

/// Flight costs of an iterate: total time, summed squared engine thrust
/// state, summed squared successive surface-command differences, and summed
/// squared body rates.
pub fn discrete_costs(iterate: &TrajectoryIterate) -> DiscreteCosts {
    let time = iterate.dilations.iter().sum();
    let thrust = iterate
        .states
        .iter()
        .map(|x| x[state_idx::DELTA_T] * x[state_idx::DELTA_T])
        .sum();
    let mut input_rate = 0.0;
    for pair in iterate.inputs.windows(2) {
        for c in [input_idx::AILERON, input_idx::ELEVATOR, input_idx::RUDDER] {
            let d = pair[1][c] - pair[0][c];
            input_rate += d * d;
        }
    }
    let angular_rate = iterate
        .states
        .iter()
        .map(|x| {
            x[state_idx::P] * x[state_idx::P]
                + x[state_idx::Q] * x[state_idx::Q]
                + x[state_idx::R] * x[state_idx::R]
        })
        .sum();
    DiscreteCosts {
        time,
        thrust,
        input_rate,
        angular_rate,
    }
}

/// Squared distance between two iterates in physical units (the proximity
/// penalty). Positions count in meters, velocities in m/s, angles in radians,
/// dilations in seconds — the same units the relaxation 1-norm uses, so the
/// two penalties trade off consistently: fabricating a meter of linearized
/// position progress through a cheap attitude excursion costs proximity in
/// the same currency the relaxation rewards it in.
pub fn iterate_distance(a: &TrajectoryIterate, b: &TrajectoryIterate) -> f64 {
    let mut total = 0.0;
    for (xa, xb) in a.states.iter().zip(&b.states) {
        total += (xa - xb).norm_squared();
    }
    for (ua, ub) in a.inputs.iter().zip(&b.inputs) {
        total += (ua - ub).norm_squared();
    }
    for (sa, sb) in a.dilations.iter().zip(&b.dilations) {
        let d = sa - sb;
        total += d * d;
    }
    total
}

/// Result of one subproblem solve, back in physical units.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub iterate: TrajectoryIterate,
    /// Signed dynamics-relaxation slack per interval, in physical state units.
    pub dynamics_slack: Vec<SVector<f64, STATE_DIM>>,
    /// Signed corridor slack per interval (empty when the channel is off).
    pub corridor_slack: Vec<f64>,
    /// Full objective value, including the constant completing the proximity
    /// penalty.
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Backend primal vector, as returned.
    pub raw_primal: Vec<f64>,
}

impl SubproblemSolution {
    /// 1-norm of all relaxation slacks.
    pub fn virtual_control_norm(&self) -> f64 {
        let d: f64 = self
            .dynamics_slack
            .iter()
            .map(|v| v.iter().map(|c| c.abs()).sum::<f64>())
            .sum();
        let c: f64 = self.corridor_slack.iter().map(|v| v.abs()).sum();
        d + c
    }
}

/// Relaxation 1-norm and squared proximity distance of a solution relative
/// to its linearization reference, both in physical units.
pub fn penalty_costs(solution: &SubproblemSolution, reference: &TrajectoryIterate) -> (f64, f64) {
    (
        solution.virtual_control_norm(),
        iterate_distance(&solution.iterate, reference),
    )
}

// ─────────────────────────────────────────────────────────────────────────────
// Row scaling
// ─────────────────────────────────────────────────────────────────────────────

/// 2-norm of a row's coefficients in scaled variables; the common factor used
/// to normalize the row in the solver and its violations in audits.
pub fn row_scale_norm(row: &ConstraintRow, scaling: &Scaling) -> f64 {
    row.terms
        .iter()
        .map(|&(var, c)| {
            let s = c * scaling.of(var);
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// Violation of a row measured in normalized scaled units.
pub fn scaled_violation(row: &ConstraintRow, iterate: &TrajectoryIterate, scaling: &Scaling) -> f64 {
    let norm = row_scale_norm(row, scaling);
    if norm == 0.0 {
        return 0.0;
    }
    row.violation(iterate) / norm
}

fn scaled_sparse_row(
    row: &ConstraintRow,
    layout: &VarLayout,
    scaling: &Scaling,
) -> Result<SparseRow, SubproblemError> {
    let max_node = layout.intervals;
    let mut terms = Vec::with_capacity(row.terms.len());
    let mut norm_sq = 0.0;
    for &(var, c) in &row.terms {
        match var {
            VarRef::State { node, .. } | VarRef::Input { node, .. } if node > max_node => {
                return Err(SubproblemError::RowNode {
                    node,
                    max: max_node,
                })
            }
            VarRef::Dilation { interval } if interval >= layout.intervals => {
                return Err(SubproblemError::RowInterval {
                    interval,
                    max: layout.intervals - 1,
                })
            }
            _ => {}
        }
        let coeff = c * scaling.of(var);
        norm_sq += coeff * coeff;
        terms.push((layout.column(var), coeff));
    }
    let norm = norm_sq.sqrt();
    let inv = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    for t in &mut terms {
        t.1 *= inv;
    }
    Ok(SparseRow {
        terms,
        rhs: row.rhs * inv,
    })
}

// ─────────────────────────────────────────────────────────────────────────────
// Assembly
// ─────────────────────────────────────────────────────────────────────────────

/// Inputs to one subproblem assembly.
pub struct SubproblemInputs<'a> {
    pub reference: &'a TrajectoryIterate,
    pub blocks: &'a [IntervalLinearization],
    /// All affine constraint rows (static and reference-dependent).
    pub rows: &'a [ConstraintRow],
    pub mesh: &'a MeshSpec,
    pub weights: &'a Weights,
    pub scaling: &'a Scaling,
    /// Whether the continuous-time corridor channel is enforced.
    pub ctcs: bool,
}

/// An assembled subproblem ready for a backend, plus everything needed to
/// interpret its primal vector.
#[derive(Debug, Clone)]
pub struct AssembledSubproblem {
    pub qp: QpProblem,
    pub layout: VarLayout,
    /// Constant completing the proximity penalty (reference norms), excluded
    /// from the QP objective.
    pub objective_constant: f64,
    /// A primal point that satisfies every constraint whenever the reference
    /// satisfies the affine rows: the reference itself with slacks absorbing
    /// the shooting defects and corridor integrals.
    pub candidate: Vec<f64>,
    scaling: Scaling,
}

pub fn assemble(inputs: &SubproblemInputs) -> Result<AssembledSubproblem, SubproblemError> {
    inputs.weights.validate()?;
    let n_int = inputs.mesh.intervals;
    if inputs.blocks.len() != n_int {
        return Err(SubproblemError::BlockCount {
            blocks: inputs.blocks.len(),
            intervals: n_int,
        });
    }
    if inputs.ctcs {
        if let Some(k) = inputs.blocks.iter().position(|b| b.ctcs.is_none()) {
            return Err(SubproblemError::MissingCorridor { interval: k });
        }
    }
    let layout = VarLayout {
        intervals: n_int,
        ctcs: inputs.ctcs,
    };
    let n = layout.total();
    let w = inputs.weights;
    let sc = inputs.scaling;

    let mut p_triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut q = vec![0.0; n];
    let mut constant = 0.0;
    let mut candidate = vec![0.0; n];

    // Flight costs.
    for k in 0..n_int {
        q[layout.dilation(k)] += w.time * sc.dilation;
    }
    for k in 0..=n_int {
        let col = layout.state(k, state_idx::DELTA_T);
        let s = sc.state[state_idx::DELTA_T];
        p_triplets.push((col, col, 2.0 * w.thrust * s * s));
        for c in [state_idx::P, state_idx::Q, state_idx::R] {
            let col = layout.state(k, c);
            let s = sc.state[c];
            p_triplets.push((col, col, 2.0 * w.angular_rate * s * s));
        }
    }
    for k in 0..n_int {
        for c in [input_idx::AILERON, input_idx::ELEVATOR, input_idx::RUDDER] {
            let a = layout.input(k, c);
            let b = layout.input(k + 1, c);
            let s = sc.input[c];
            let coeff = 2.0 * w.input_rate * s * s;
            p_triplets.push((a, a, coeff));
            p_triplets.push((b, b, coeff));
            p_triplets.push((a.min(b), a.max(b), -coeff));
        }
    }

    // Proximity penalty to the reference. Like the flight costs and the
    // relaxation 1-norm, it is priced in physical units: the squared scale
    // converts each scaled decision column back to meters, m/s, radians, or
    // seconds. Pricing proximity in scaled units instead would let a
    // position node drift its full 10 km scale for the same cost as one
    // radian of attitude, and early iterations exploit exactly that — large
    // attitude/time excursions that fabricate linearized position progress
    // far outside the model's trust radius.
    for k in 0..=n_int {
        let x_ref = sc.scale_state(&inputs.reference.states[k]);
        for c in 0..STATE_DIM {
            let col = layout.state(k, c);
            let s2 = sc.state[c] * sc.state[c];
            p_triplets.push((col, col, 2.0 * w.trust_region * s2));
            q[col] += -2.0 * w.trust_region * s2 * x_ref[c];
            constant += w.trust_region * s2 * x_ref[c] * x_ref[c];
            candidate[col] = x_ref[c];
        }
        let u_ref = inputs.reference.inputs[k].component_div(&sc.input);
        for c in 0..INPUT_DIM {
            let col = layout.input(k, c);
            let s2 = sc.input[c] * sc.input[c];
            p_triplets.push((col, col, 2.0 * w.trust_region * s2));
            q[col] += -2.0 * w.trust_region * s2 * u_ref[c];
            constant += w.trust_region * s2 * u_ref[c] * u_ref[c];
            candidate[col] = u_ref[c];
        }
    }
    for k in 0..n_int {
        let s_ref = inputs.reference.dilations[k] / sc.dilation;
        let col = layout.dilation(k);
        let s2 = sc.dilation * sc.dilation;
        p_triplets.push((col, col, 2.0 * w.trust_region * s2));
        q[col] += -2.0 * w.trust_region * s2 * s_ref;
        constant += w.trust_region * s2 * s_ref * s_ref;
        candidate[col] = s_ref;
    }

    // Relaxation slack costs and the feasibility candidate's slack values.
    // Slacks live in physical state units: the 1-norm penalty must dominate
    // every flight-cost tradeoff for the relaxation to drive defects to zero,
    // and normalizing position defects by their (large) variable scale would
    // dilute the penalty until leftover meter-level defects become cheaper
    // than the flight-cost of removing them.
    for k in 0..n_int {
        let defect = inputs.reference.states[k + 1] - inputs.blocks[k].x_end;
        for c in 0..STATE_DIM {
            q[layout.defect_pos(k, c)] += w.virtual_control;
            q[layout.defect_neg(k, c)] += w.virtual_control;
            candidate[layout.defect_pos(k, c)] = defect[c].max(0.0);
            candidate[layout.defect_neg(k, c)] = (-defect[c]).max(0.0);
        }
        if inputs.ctcs {
            q[layout.corridor_pos(k)] += w.virtual_control;
            q[layout.corridor_neg(k)] += w.virtual_control;
            let nu = -inputs.blocks[k].ctcs.as_ref().unwrap().integral;
            candidate[layout.corridor_pos(k)] = nu.max(0.0);
            candidate[layout.corridor_neg(k)] = (-nu).max(0.0);
        }
    }

    // Equality rows: relaxed propagation continuity, then the relaxed
    // corridor channel, then affine equality rows.
    let mut eq_rows = Vec::new();
    for (k, block) in inputs.blocks.iter().enumerate() {
        for i in 0..STATE_DIM {
            let mut terms = Vec::with_capacity(2 * STATE_DIM + 2 * INPUT_DIM + 3);
            terms.push((layout.state(k + 1, i), sc.state[i]));
            for j in 0..STATE_DIM {
                let a = block.a[(i, j)];
                if a != 0.0 {
                    terms.push((layout.state(k, j), -a * sc.state[j]));
                }
            }
            for j in 0..INPUT_DIM {
                let bm = block.b_minus[(i, j)];
                if bm != 0.0 {
                    terms.push((layout.input(k, j), -bm * sc.input[j]));
                }
                let bp = block.b_plus[(i, j)];
                if bp != 0.0 {
                    terms.push((layout.input(k + 1, j), -bp * sc.input[j]));
                }
            }
            if block.z[i] != 0.0 {
                terms.push((layout.dilation(k), -block.z[i] * sc.dilation));
            }
            terms.push((layout.defect_pos(k, i), -1.0));
            terms.push((layout.defect_neg(k, i), 1.0));
            eq_rows.push(SparseRow {
                terms,
                rhs: block.offset[i],
            });
        }
    }
    if inputs.ctcs {
        for (k, block) in inputs.blocks.iter().enumerate() {
            let lin = block.ctcs.as_ref().unwrap();
            let mut terms = Vec::with_capacity(STATE_DIM + 2 * INPUT_DIM + 3);
            for j in 0..STATE_DIM {
                let g = lin.wrt_state[(0, j)];
                if g != 0.0 {
                    terms.push((layout.state(k, j), g * sc.state[j]));
                }
            }
            for j in 0..INPUT_DIM {
                let gm = lin.wrt_input_minus[(0, j)];
                if gm != 0.0 {
                    terms.push((layout.input(k, j), gm * sc.input[j]));
                }
                let gp = lin.wrt_input_plus[(0, j)];
                if gp != 0.0 {
                    terms.push((layout.input(k + 1, j), gp * sc.input[j]));
                }
            }
            if lin.wrt_dilation != 0.0 {
                terms.push((layout.dilation(k), lin.wrt_dilation * sc.dilation));
            }
            terms.push((layout.corridor_pos(k), 1.0));
            terms.push((layout.corridor_neg(k), -1.0));
            eq_rows.push(SparseRow {
                terms,
                rhs: -lin.offset,
            });
        }
    }

    let mut ineq_rows = Vec::new();
    for row in inputs.rows {
        let sparse = scaled_sparse_row(row, &layout, sc)?;
        match row.kind {
            RowKind::Equality => eq_rows.push(sparse),
            RowKind::LessEq => ineq_rows.push(sparse),
        }
    }

    // Slack nonnegativity.
    for k in 0..n_int {
        for c in 0..STATE_DIM {
            for col in [layout.defect_pos(k, c), layout.defect_neg(k, c)] {
                ineq_rows.push(SparseRow {
                    terms: vec![(col, -1.0)],
                    rhs: 0.0,
                });
            }
        }
        if inputs.ctcs {
            for col in [layout.corridor_pos(k), layout.corridor_neg(k)] {
                ineq_rows.push(SparseRow {
                    terms: vec![(col, -1.0)],
                    rhs: 0.0,
                });
            }
        }
    }

    Ok(AssembledSubproblem {
        qp: QpProblem {
            n,
            p_triplets,
            q,
            eq_rows,
            ineq_rows,
        },
        layout,
        objective_constant: constant,
        candidate,
        scaling: sc.clone(),
    })
}

impl AssembledSubproblem {
    /// Full objective (QP part plus the reference constant) at a primal
    /// point.
    pub fn objective_of_primal(&self, z: &[f64]) -> f64 {
        self.qp.objective_at(z) + self.objective_constant
    }

    /// Interprets a backend primal vector back into physical units.
    pub fn extract(&self, solution: &QpSolution) -> SubproblemSolution {
        let layout = &self.layout;
        let n_int = layout.intervals;
        let z = &solution.primal;
        let mut states = Vec::with_capacity(n_int + 1);
        let mut inputs = Vec::with_capacity(n_int + 1);
        for k in 0..=n_int {
            let mut x = StateVec::zeros();
            for c in 0..STATE_DIM {
                x[c] = z[layout.state(k, c)] * self.scaling.state[c];
            }
            states.push(x);
            let mut u = InputVec::zeros();
            for c in 0..INPUT_DIM {
                u[c] = z[layout.input(k, c)] * self.scaling.input[c];
            }
            inputs.push(u);
        }
        let dilations = (0..n_int)
            .map(|k| z[layout.dilation(k)] * self.scaling.dilation)
            .collect();
        let dynamics_slack = (0..n_int)
            .map(|k| {
                SVector::<f64, STATE_DIM>::from_fn(|c, _| {
                    z[layout.defect_pos(k, c)] - z[layout.defect_neg(k, c)]
                })
            })
            .collect();
        let corridor_slack = if layout.ctcs {
            (0..n_int)
                .map(|k| z[layout.corridor_pos(k)] - z[layout.corridor_neg(k)])
                .collect()
        } else {
            Vec::new()
        };
        SubproblemSolution {
            iterate: TrajectoryIterate {
                states,
                inputs,
                dilations,
            },
            dynamics_slack,
            corridor_slack,
            objective: self.objective_of_primal(z),
            status: solution.status,
            iterations: solution.iterations,
            raw_primal: z.clone(),
        }
    }

    /// Canonical primal vector of an extracted solution: identical state,
    /// input, and dilation entries, slack pairs re-split so exactly one side
    /// of each pair is nonzero. Evaluating the objective here makes the
    /// 1-norm term equal the signed-slack 1-norm exactly.
    pub fn canonical_primal(&self, solution: &SubproblemSolution) -> Vec<f64> {
        let layout = &self.layout;
        let mut z = vec![0.0; layout.total()];
        for k in 0..=layout.intervals {
            let x = self.scaling.scale_state(&solution.iterate.states[k]);
            for c in 0..STATE_DIM {
                z[layout.state(k, c)] = x[c];
            }
            for c in 0..INPUT_DIM {
                z[layout.input(k, c)] = solution.iterate.inputs[k][c] / self.scaling.input[c];
            }
        }
        for k in 0..layout.intervals {
            z[layout.dilation(k)] = solution.iterate.dilations[k] / self.scaling.dilation;
            for c in 0..STATE_DIM {
                let nu = solution.dynamics_slack[k][c];
                z[layout.defect_pos(k, c)] = nu.max(0.0);
                z[layout.defect_neg(k, c)] = (-nu).max(0.0);
            }
            if layout.ctcs {
                let nu = solution.corridor_slack[k];
                z[layout.corridor_pos(k)] = nu.max(0.0);
                z[layout.corridor_neg(k)] = (-nu).max(0.0);
            }
        }
        z
    }

    /// Pins every relaxation slack to zero through added equality rows,
    /// removing the feasibility guarantee. Diagnostic use.
    pub fn fix_virtual_controls_to_zero(&mut self) {
        let layout = self.layout;
        let mut cols = Vec::new();
        for k in 0..layout.intervals {
            for c in 0..STATE_DIM {
                cols.push(layout.defect_pos(k, c));
                cols.push(layout.defect_neg(k, c));
            }
            if layout.ctcs {
                cols.push(layout.corridor_pos(k));
                cols.push(layout.corridor_neg(k));
            }
        }
        for col in cols {
            self.qp.eq_rows.push(SparseRow {
                terms: vec![(col, 1.0)],
                rhs: 0.0,
            });
        }
    }
}
