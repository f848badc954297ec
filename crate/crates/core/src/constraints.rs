//! Node-wise convex constraints, runway-alignment formulations, and
//! linearized obstacle keep-out rows.
//!
//! Rows are emitted symbolically over named variables (state component at a
//! node, input component at a node, interval dilation) so that the QP
//! assembly and the post-solve audit evaluate exactly the same constraint
//! set.

use nalgebra::{Matrix3, Vector3, Vector4};
use thiserror::Error;

use crate::model::{input_idx, state_idx};
use crate::transcription::{CtcsLimits, MeshSpec, TrajectoryIterate};

/// Errors from constraint validation and row generation.
#[derive(Debug, Error)]
pub enum ConstraintError {
    /// A lower bound is not strictly below its upper bound.
    #[error("limit ordering violated for {name}")]
    LimitOrder { name: &'static str },
    /// Angle-of-attack bounds must stay strictly inside (-pi/2, pi/2) so the
    /// tangent reformulation is valid.
    #[error("angle-of-attack bounds must lie strictly inside (-pi/2, pi/2)")]
    AlphaWindow,
    /// Alignment wedge angles are out of order or outside their valid range.
    #[error("alignment wedge angles out of order or out of range")]
    AlignmentAngles,
    /// The alignment trigger altitude must be positive.
    #[error("alignment trigger altitude must be positive")]
    TriggerAltitude,
    /// A reference position coincides with an obstacle center, leaving the
    /// keep-out gradient undefined.
    #[error("reference position degenerate at obstacle center (distance {distance:.3e})")]
    ObstacleCenter { distance: f64 },
}

// ─────────────────────────────────────────────────────────────────────────────
// Operational limits
// ─────────────────────────────────────────────────────────────────────────────

/// Box and halfspace limits applied at every node, plus the terminal speed
/// window. Angles in radians, speeds in m/s, rates in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalLimits {
    pub velocity_min: Vector3<f64>,
    pub velocity_max: Vector3<f64>,
    pub roll_min: f64,
    pub roll_max: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub rate_min: Vector3<f64>,
    pub rate_max: Vector3<f64>,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub input_min: Vector4<f64>,
    pub input_max: Vector4<f64>,
    pub throttle_min: f64,
    pub throttle_max: f64,
    pub throttle_rate_min: f64,
    pub throttle_rate_max: f64,
    /// Componentwise bound on |v| at touchdown.
    pub final_speed_bound: Vector3<f64>,
}

impl Default for OperationalLimits {
    fn default() -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self {
            velocity_min: Vector3::new(80.0, -4.0, -10.0),
            velocity_max: Vector3::new(120.0, 4.0, 10.0),
            roll_min: -15.0 * d,
            roll_max: 15.0 * d,
            pitch_min: -15.0 * d,
            pitch_max: 15.0 * d,
            rate_min: Vector3::new(-10.0 * d, -10.0 * d, -10.0 * d),
            rate_max: Vector3::new(10.0 * d, 10.0 * d, 10.0 * d),
            alpha_min: -11.5 * d,
            alpha_max: 14.5 * d,
            input_min: Vector4::new(-25.0 * d, -25.0 * d, -30.0 * d, 0.0),
            input_max: Vector4::new(25.0 * d, 10.0 * d, 30.0 * d, 10.0 * d),
            throttle_min: 0.0,
            throttle_max: 10.0 * d,
            throttle_rate_min: -0.53 * d,
            throttle_rate_max: 0.53 * d,
            final_speed_bound: Vector3::new(85.0, 3.0, 3.0),
        }
    }
}

impl OperationalLimits {
    /// Checks that every lower bound sits strictly below its upper bound and
    /// that the angle-of-attack window admits the tangent reformulation.
    pub fn validate(&self) -> Result<(), ConstraintError> {
        let pairs: [(&'static str, f64, f64); 6] = [
            ("roll", self.roll_min, self.roll_max),
            ("pitch", self.pitch_min, self.pitch_max),
            ("alpha", self.alpha_min, self.alpha_max),
            ("throttle", self.throttle_min, self.throttle_max),
            (
                "throttle rate",
                self.throttle_rate_min,
                self.throttle_rate_max,
            ),
            ("alpha", self.alpha_min, self.alpha_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo < hi) {
                return Err(ConstraintError::LimitOrder { name });
            }
        }
        for i in 0..3 {
            if !(self.velocity_min[i] < self.velocity_max[i]) {
                return Err(ConstraintError::LimitOrder { name: "velocity" });
            }
            if !(self.rate_min[i] < self.rate_max[i]) {
                return Err(ConstraintError::LimitOrder { name: "angular rate" });
            }
        }
        for i in 0..4 {
            if !(self.input_min[i] < self.input_max[i]) {
                return Err(ConstraintError::LimitOrder { name: "input" });
            }
        }
        let quarter = std::f64::consts::FRAC_PI_2;
        if self.alpha_min <= -quarter || self.alpha_max >= quarter {
            return Err(ConstraintError::AlphaWindow);
        }
        Ok(())
    }

    /// The roll/pitch corridor enforced in continuous time between nodes.
    pub fn attitude_corridor(&self) -> CtcsLimits {
        CtcsLimits {
            roll_min: self.roll_min,
            roll_max: self.roll_max,
            pitch_min: self.pitch_min,
            pitch_max: self.pitch_max,
        }
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Runway alignment
// ─────────────────────────────────────────────────────────────────────────────

/// How the final-approach alignment requirement enters the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    /// Convex wedge rows imposed at every node of the final-approach phase.
    MultiPhase,
    /// State-triggered product form, linearized about the reference at every
    /// node whose reference altitude is below the trigger.
    Stc,
    /// No alignment requirement.
    None,
}

/// Geometry of the approach wedge and the altitude trigger. The runway lies
/// along +North with touchdown at the origin; approach positions have
/// negative North coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSpec {
    /// Altitude (m) below which alignment is required.
    pub trigger_altitude: f64,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub vertical_min: f64,
    pub vertical_max: f64,
    pub mode: AlignmentMode,
}

impl Default for AlignmentSpec {
    fn default() -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self {
            trigger_altitude: 500.0,
            lateral_min: -2.0 * d,
            lateral_max: 2.0 * d,
            vertical_min: 3.0 * d,
            vertical_max: 5.0 * d,
            mode: AlignmentMode::MultiPhase,
        }
    }
}

impl AlignmentSpec {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !(self.lateral_min < self.lateral_max) {
            return Err(ConstraintError::AlignmentAngles);
        }
        let quarter = std::f64::consts::FRAC_PI_2;
        if !(0.0 < self.vertical_min
            && self.vertical_min < self.vertical_max
            && self.vertical_max < quarter)
        {
            return Err(ConstraintError::AlignmentAngles);
        }
        if !(self.trigger_altitude > 0.0) {
            return Err(ConstraintError::TriggerAltitude);
        }
        Ok(())
    }
}

/// Row coefficients of the four-halfspace approach wedge: a position p is
/// inside the wedge iff every component of `alignment_matrix * p` is ≤ 0.
pub fn alignment_matrix(spec: &AlignmentSpec) -> [[f64; 3]; 4] {
    [
        [spec.lateral_max.tan(), -1.0, 0.0],
        [-spec.lateral_min.tan(), 1.0, 0.0],
        [spec.vertical_max.tan(), 0.0, -1.0],
        [-spec.vertical_min.tan(), 0.0, 1.0],
    ]
}

/// Evaluates the four wedge expressions at a position; all ≤ 0 iff the
/// position lies inside the approach wedge.
pub fn alignment_c(spec: &AlignmentSpec, p: &Vector3<f64>) -> [f64; 4] {
    let m = alignment_matrix(spec);
    let mut out = [0.0; 4];
    for (j, row) in m.iter().enumerate() {
        out[j] = row[0] * p.x + row[1] * p.y + row[2] * p.z;
    }
    out
}

/// The state-triggered alignment residual
/// `g(p) = -min(-p_D - h_c, 0) * c(p)`: elementwise ≤ 0 encodes "below the
/// trigger altitude implies inside the wedge".
pub fn stc_residual(spec: &AlignmentSpec, p: &Vector3<f64>) -> [f64; 4] {
    let factor = -(-p.z - spec.trigger_altitude).min(0.0);
    let c = alignment_c(spec, p);
    let mut out = [0.0; 4];
    for j in 0..4 {
        out[j] = factor * c[j];
    }
    out
}

/// Position Jacobian of `stc_residual` on the active (below-trigger) branch,
/// one gradient per wedge row.
pub fn stc_jacobian(spec: &AlignmentSpec, p: &Vector3<f64>) -> [Vector3<f64>; 4] {
    let m = alignment_matrix(spec);
    let c = alignment_c(spec, p);
    let factor = spec.trigger_altitude + p.z;
    let mut out = [Vector3::zeros(); 4];
    for j in 0..4 {
        out[j] = factor * Vector3::new(m[j][0], m[j][1], m[j][2])
            + c[j] * Vector3::new(0.0, 0.0, 1.0);
    }
    out
}

// ─────────────────────────────────────────────────────────────────────────────
// Obstacles
// ─────────────────────────────────────────────────────────────────────────────

/// Ellipsoidal keep-out region: feasible positions satisfy
/// `‖shape · (p − center)‖ ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub shape: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Obstacle {
    /// Axis-aligned ellipsoid with the given semi-axes.
    pub fn ellipsoid(semi_axes: [f64; 3], center: Vector3<f64>) -> Self {
        Self {
            shape: Matrix3::from_diagonal(&Vector3::new(
                1.0 / semi_axes[0],
                1.0 / semi_axes[1],
                1.0 / semi_axes[2],
            )),
            center,
        }
    }

    /// Vertical cylinder of the given radius: the Down axis is unconstrained.
    pub fn cylinder(radius: f64, center: Vector3<f64>) -> Self {
        Self {
            shape: Matrix3::from_diagonal(&Vector3::new(1.0 / radius, 1.0 / radius, 0.0)),
            center,
        }
    }

    /// The keep-out expression `1 − ‖shape (p − center)‖`; ≤ 0 iff p is
    /// outside the obstacle.
    pub fn constraint_value(&self, p: &Vector3<f64>) -> f64 {
        1.0 - (self.shape * (p - self.center)).norm()
    }

    /// Affine over-estimate of `constraint_value` about a reference position:
    /// gradient and offset such that `value(p) ≈ grad · p + offset`, with the
    /// affine model ≥ the true expression everywhere (imposing it ≤ 0 is
    /// conservative). Degenerate when the reference sits on the center.
    pub fn linearized(
        &self,
        p_ref: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, f64), ConstraintError> {
        let rel = p_ref - self.center;
        let scaled = self.shape * rel;
        let dist = scaled.norm();
        if dist < 1e-9 {
            return Err(ConstraintError::ObstacleCenter { distance: dist });
        }
        let grad = -(self.shape.transpose() * scaled) / dist;
        let offset = 1.0 - dist - grad.dot(p_ref);
        Ok((grad, offset))
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Symbolic rows
// ─────────────────────────────────────────────────────────────────────────────

/// A decision variable referenced by a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarRef {
    State { node: usize, component: usize },
    Input { node: usize, component: usize },
    Dilation { interval: usize },
}

/// Whether a row is an equality or an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// terms · z = rhs
    Equality,
    /// terms · z ≤ rhs
    LessEq,
}

/// Family a row belongs to, used for audit grouping and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowLabel {
    Altitude,
    VelocityBox,
    RollWindow,
    PitchWindow,
    RateWindow,
    AlphaWindow,
    InputBox,
    ThrottleBox,
    ThrottleRate,
    AlignmentTrigger,
    AlignmentWedge,
    StcAlignment,
    ObstacleKeepOut,
    UniformMesh,
    DilationBox,
    InitialState,
    FinalPosition,
    FinalAttitude,
    FinalRates,
    FinalVelocityWindow,
}

impl RowLabel {
    pub fn name(self) -> &'static str {
        match self {
            RowLabel::Altitude => "altitude",
            RowLabel::VelocityBox => "velocity_box",
            RowLabel::RollWindow => "roll_window",
            RowLabel::PitchWindow => "pitch_window",
            RowLabel::RateWindow => "rate_window",
            RowLabel::AlphaWindow => "alpha_window",
            RowLabel::InputBox => "input_box",
            RowLabel::ThrottleBox => "throttle_box",
            RowLabel::ThrottleRate => "throttle_rate",
            RowLabel::AlignmentTrigger => "alignment_trigger",
            RowLabel::AlignmentWedge => "alignment_wedge",
            RowLabel::StcAlignment => "stc_alignment",
            RowLabel::ObstacleKeepOut => "obstacle_keep_out",
            RowLabel::UniformMesh => "uniform_mesh",
            RowLabel::DilationBox => "dilation_box",
            RowLabel::InitialState => "initial_state",
            RowLabel::FinalPosition => "final_position",
            RowLabel::FinalAttitude => "final_attitude",
            RowLabel::FinalRates => "final_rates",
            RowLabel::FinalVelocityWindow => "final_velocity_window",
        }
    }
}

/// One affine constraint row over the trajectory decision variables.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub label: RowLabel,
    /// Node (or leading interval for mesh rows) the row belongs to.
    pub node: usize,
    pub kind: RowKind,
    pub terms: Vec<(VarRef, f64)>,
    pub rhs: f64,
}

impl ConstraintRow {
    fn less_eq(label: RowLabel, node: usize, terms: Vec<(VarRef, f64)>, rhs: f64) -> Self {
        Self {
            label,
            node,
            kind: RowKind::LessEq,
            terms,
            rhs,
        }
    }

    fn equality(label: RowLabel, node: usize, terms: Vec<(VarRef, f64)>, rhs: f64) -> Self {
        Self {
            label,
            node,
            kind: RowKind::Equality,
            terms,
            rhs,
        }
    }

    /// Left-hand side `terms · z` evaluated on an iterate.
    pub fn value(&self, iterate: &TrajectoryIterate) -> f64 {
        self.terms
            .iter()
            .map(|&(var, coeff)| {
                coeff
                    * match var {
                        VarRef::State { node, component } => iterate.states[node][component],
                        VarRef::Input { node, component } => iterate.inputs[node][component],
                        VarRef::Dilation { interval } => iterate.dilations[interval],
                    }
            })
            .sum()
    }

    /// Violation magnitude: `max(value − rhs, 0)` for upper bounds,
    /// `|value − rhs|` for equalities.
    pub fn violation(&self, iterate: &TrajectoryIterate) -> f64 {
        let residual = self.value(iterate) - self.rhs;
        match self.kind {
            RowKind::Equality => residual.abs(),
            RowKind::LessEq => residual.max(0.0),
        }
    }
}

fn state_term(node: usize, component: usize, coeff: f64) -> (VarRef, f64) {
    (VarRef::State { node, component }, coeff)
}

fn input_term(node: usize, component: usize, coeff: f64) -> (VarRef, f64) {
    (VarRef::Input { node, component }, coeff)
}

fn box_rows(
    out: &mut Vec<ConstraintRow>,
    label: RowLabel,
    node: usize,
    term: (VarRef, f64),
    lo: f64,
    hi: f64,
) {
    out.push(ConstraintRow::less_eq(label, node, vec![term], hi));
    out.push(ConstraintRow::less_eq(
        label,
        node,
        vec![(term.0, -term.1)],
        -lo,
    ));
}

/// All pointwise rows at node `k`: altitude, velocity/attitude/rate boxes,
/// the angle-of-attack window, input and throttle boxes, the throttle-rate
/// window, and — in multi-phase mode from the switch node on — the altitude
/// trigger and the four wedge rows.
pub fn node_rows(
    k: usize,
    limits: &OperationalLimits,
    alignment: &AlignmentSpec,
    mesh: &MeshSpec,
    engine_lag: f64,
) -> Vec<ConstraintRow> {
    let mut rows = Vec::with_capacity(36);

    // Stay above ground: p_D ≤ 0.
    rows.push(ConstraintRow::less_eq(
        RowLabel::Altitude,
        k,
        vec![state_term(k, state_idx::P_D, 1.0)],
        0.0,
    ));

    for i in 0..3 {
        box_rows(
            &mut rows,
            RowLabel::VelocityBox,
            k,
            state_term(k, state_idx::U + i, 1.0),
            limits.velocity_min[i],
            limits.velocity_max[i],
        );
    }
    box_rows(
        &mut rows,
        RowLabel::RollWindow,
        k,
        state_term(k, state_idx::PHI, 1.0),
        limits.roll_min,
        limits.roll_max,
    );
    box_rows(
        &mut rows,
        RowLabel::PitchWindow,
        k,
        state_term(k, state_idx::THETA, 1.0),
        limits.pitch_min,
        limits.pitch_max,
    );
    for i in 0..3 {
        box_rows(
            &mut rows,
            RowLabel::RateWindow,
            k,
            state_term(k, state_idx::P + i, 1.0),
            limits.rate_min[i],
            limits.rate_max[i],
        );
    }

    // Angle-of-attack window via the tangent reformulation:
    // u·tan(alpha_min) ≤ w ≤ u·tan(alpha_max).
    rows.push(ConstraintRow::less_eq(
        RowLabel::AlphaWindow,
        k,
        vec![
            state_term(k, state_idx::W, 1.0),
            state_term(k, state_idx::U, -limits.alpha_max.tan()),
        ],
        0.0,
    ));
    rows.push(ConstraintRow::less_eq(
        RowLabel::AlphaWindow,
        k,
        vec![
            state_term(k, state_idx::U, limits.alpha_min.tan()),
            state_term(k, state_idx::W, -1.0),
        ],
        0.0,
    ));

    for i in 0..4 {
        box_rows(
            &mut rows,
            RowLabel::InputBox,
            k,
            input_term(k, i, 1.0),
            limits.input_min[i],
            limits.input_max[i],
        );
    }
    box_rows(
        &mut rows,
        RowLabel::ThrottleBox,
        k,
        state_term(k, state_idx::DELTA_T, 1.0),
        limits.throttle_min,
        limits.throttle_max,
    );

    // Throttle rate (command − state)/lag inside its window.
    let inv_lag = 1.0 / engine_lag;
    rows.push(ConstraintRow::less_eq(
        RowLabel::ThrottleRate,
        k,
        vec![
            input_term(k, input_idx::THROTTLE_CMD, inv_lag),
            state_term(k, state_idx::DELTA_T, -inv_lag),
        ],
        limits.throttle_rate_max,
    ));
    rows.push(ConstraintRow::less_eq(
        RowLabel::ThrottleRate,
        k,
        vec![
            input_term(k, input_idx::THROTTLE_CMD, -inv_lag),
            state_term(k, state_idx::DELTA_T, inv_lag),
        ],
        -limits.throttle_rate_min,
    ));

    if alignment.mode == AlignmentMode::MultiPhase && k >= mesh.switch_node {
        // Below the trigger altitude: −p_D ≤ h_c.
        rows.push(ConstraintRow::less_eq(
            RowLabel::AlignmentTrigger,
            k,
            vec![state_term(k, state_idx::P_D, -1.0)],
            alignment.trigger_altitude,
        ));
        for row in alignment_matrix(alignment) {
            rows.push(ConstraintRow::less_eq(
                RowLabel::AlignmentWedge,
                k,
                vec![
                    state_term(k, state_idx::P_N, row[0]),
                    state_term(k, state_idx::P_E, row[1]),
                    state_term(k, state_idx::P_D, row[2]),
                ],
                0.0,
            ));
        }
    }

    rows
}

/// Uniform-mesh equalities within each phase plus the dilation box rows.
pub fn mesh_rows(mesh: &MeshSpec) -> Vec<ConstraintRow> {
    let mut rows = Vec::new();
    let phases = [(0, mesh.switch_node), (mesh.switch_node, mesh.intervals)];
    for (start, end) in phases {
        for i in start..end.saturating_sub(1) {
            rows.push(ConstraintRow::equality(
                RowLabel::UniformMesh,
                i,
                vec![
                    (VarRef::Dilation { interval: i }, 1.0),
                    (VarRef::Dilation { interval: i + 1 }, -1.0),
                ],
                0.0,
            ));
        }
    }
    for i in 0..mesh.intervals {
        rows.push(ConstraintRow::less_eq(
            RowLabel::DilationBox,
            i,
            vec![(VarRef::Dilation { interval: i }, 1.0)],
            mesh.dilation_max,
        ));
        rows.push(ConstraintRow::less_eq(
            RowLabel::DilationBox,
            i,
            vec![(VarRef::Dilation { interval: i }, -1.0)],
            -mesh.dilation_min,
        ));
    }
    rows
}

/// Kinematic state pinned at the start of the trajectory. The throttle state
/// is free at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Vector3<f64>,
    pub rates: Vector3<f64>,
}

impl InitialCondition {
    pub fn components(&self) -> [f64; 12] {
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
            self.attitude.x,
            self.attitude.y,
            self.attitude.z,
            self.rates.x,
            self.rates.y,
            self.rates.z,
        ]
    }
}

/// Equality rows pinning the initial kinematic state, touchdown equalities at
/// the terminal node, and the two-sided terminal speed window.
pub fn boundary_rows(
    initial: &InitialCondition,
    limits: &OperationalLimits,
    n_intervals: usize,
) -> Vec<ConstraintRow> {
    let mut rows = Vec::with_capacity(12 + 9 + 6);
    for (component, value) in initial.components().into_iter().enumerate() {
        rows.push(ConstraintRow::equality(
            RowLabel::InitialState,
            0,
            vec![state_term(0, component, 1.0)],
            value,
        ));
    }
    let last = n_intervals;
    for i in 0..3 {
        rows.push(ConstraintRow::equality(
            RowLabel::FinalPosition,
            last,
            vec![state_term(last, state_idx::P_N + i, 1.0)],
            0.0,
        ));
        rows.push(ConstraintRow::equality(
            RowLabel::FinalAttitude,
            last,
            vec![state_term(last, state_idx::PHI + i, 1.0)],
            0.0,
        ));
        rows.push(ConstraintRow::equality(
            RowLabel::FinalRates,
            last,
            vec![state_term(last, state_idx::P + i, 1.0)],
            0.0,
        ));
        box_rows(
            &mut rows,
            RowLabel::FinalVelocityWindow,
            last,
            state_term(last, state_idx::U + i, 1.0),
            -limits.final_speed_bound[i],
            limits.final_speed_bound[i],
        );
    }
    rows
}

/// Every reference-independent row of the problem: pointwise rows at all
/// nodes, mesh rows, and boundary rows.
pub fn static_rows(
    limits: &OperationalLimits,
    alignment: &AlignmentSpec,
    mesh: &MeshSpec,
    initial: &InitialCondition,
    engine_lag: f64,
) -> Vec<ConstraintRow> {
    let mut rows = Vec::new();
    for k in 0..=mesh.intervals {
        rows.extend(node_rows(k, limits, alignment, mesh, engine_lag));
    }
    rows.extend(mesh_rows(mesh));
    rows.extend(boundary_rows(initial, limits, mesh.intervals));
    rows
}

/// Linearized state-triggered alignment rows at node `k` about a reference
/// position. Empty when the reference altitude is at or above the trigger
/// (the model is identically zero there); individual rows that degenerate to
/// `0 ≤ 0` are dropped.
pub fn stc_rows(
    alignment: &AlignmentSpec,
    k: usize,
    p_ref: &Vector3<f64>,
) -> Vec<ConstraintRow> {
    if alignment.mode != AlignmentMode::Stc {
        return Vec::new();
    }
    let altitude = -p_ref.z;
    if altitude >= alignment.trigger_altitude {
        return Vec::new();
    }
    let residual = stc_residual(alignment, p_ref);
    let jacobian = stc_jacobian(alignment, p_ref);
    let mut rows = Vec::with_capacity(4);
    for j in 0..4 {
        let grad = jacobian[j];
        if grad.norm() < 1e-12 && residual[j].abs() < 1e-12 {
            continue;
        }
        // residual + grad·(p − p_ref) ≤ 0  ⇒  grad·p ≤ grad·p_ref − residual
        rows.push(ConstraintRow::less_eq(
            RowLabel::StcAlignment,
            k,
            vec![
                state_term(k, state_idx::P_N, grad.x),
                state_term(k, state_idx::P_E, grad.y),
                state_term(k, state_idx::P_D, grad.z),
            ],
            grad.dot(p_ref) - residual[j],
        ));
    }
    rows
}

/// Linearized keep-out rows for every obstacle at node `k` about the node's
/// reference position.
pub fn obstacle_rows(
    obstacles: &[Obstacle],
    k: usize,
    p_ref: &Vector3<f64>,
) -> Result<Vec<ConstraintRow>, ConstraintError> {
    let mut rows = Vec::with_capacity(obstacles.len());
    for obs in obstacles {
        let (grad, offset) = obs.linearized(p_ref)?;
        // grad·p + offset ≤ 0
        rows.push(ConstraintRow::less_eq(
            RowLabel::ObstacleKeepOut,
            k,
            vec![
                state_term(k, state_idx::P_N, grad.x),
                state_term(k, state_idx::P_E, grad.y),
                state_term(k, state_idx::P_D, grad.z),
            ],
            -offset,
        ));
    }
    Ok(rows)
}

/// Reference-dependent rows (state-triggered alignment and obstacle keep-out)
/// for an entire iterate.
pub fn reference_rows(
    alignment: &AlignmentSpec,
    obstacles: &[Obstacle],
    iterate: &TrajectoryIterate,
) -> Result<Vec<ConstraintRow>, ConstraintError> {
    let mut rows = Vec::new();
    for (k, x) in iterate.states.iter().enumerate() {
        let p = Vector3::new(x[state_idx::P_N], x[state_idx::P_E], x[state_idx::P_D]);
        rows.extend(stc_rows(alignment, k, &p));
        rows.extend(obstacle_rows(obstacles, k, &p)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputVec, StateVec, STATE_DIM};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn constant_iterate(mesh: &MeshSpec, x: StateVec, u: InputVec, s: f64) -> TrajectoryIterate {
        TrajectoryIterate {
            states: vec![x; mesh.intervals + 1],
            inputs: vec![u; mesh.intervals + 1],
            dilations: vec![s; mesh.intervals],
        }
    }

    // ── Alignment wedge ──────────────────────────────────────────────────

    #[test]
    fn wedge_examples_inside_boundary_apex() {
        let spec = AlignmentSpec::default();
        // Strictly inside both wedges: on the centerline at a 4° glide.
        let inside = Vector3::new(-1000.0, 0.0, -1000.0 * deg(4.0).tan());
        for v in alignment_c(&spec, &inside) {
            assert!(v < 0.0, "expected strict interior, got {v}");
        }
        // Lateral boundary: first component exactly zero.
        let boundary = Vector3::new(
            -1000.0,
            -1000.0 * deg(2.0).tan(),
            -1000.0 * deg(4.0).tan(),
        );
        let c = alignment_c(&spec, &boundary);
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-12);
        // Apex: all four components zero.
        let apex = Vector3::zeros();
        for v in alignment_c(&spec, &apex) {
            assert_abs_diff_eq!(v, 0.0);
        }
    }

    #[test]
    fn wedge_expressions_are_affine() {
        let spec = AlignmentSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p1 = Vector3::new(
                rng.gen_range(-5e4..0.0),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-5e3..0.0),
            );
            let p2 = Vector3::new(
                rng.gen_range(-5e4..0.0),
                rng.gen_range(-1e4..1e4),
                rng.gen_range(-5e3..0.0),
            );
            let lambda: f64 = rng.gen_range(0.0..1.0);
            let blend = lambda * p1 + (1.0 - lambda) * p2;
            let lhs = alignment_c(&spec, &blend);
            let c1 = alignment_c(&spec, &p1);
            let c2 = alignment_c(&spec, &p2);
            for j in 0..4 {
                let rhs = lambda * c1[j] + (1.0 - lambda) * c2[j];
                assert_relative_eq!(lhs[j], rhs, max_relative = 1e-12, epsilon = 1e-9);
            }
        }
    }

    // ── State-triggered form ─────────────────────────────────────────────

    #[test]
    fn stc_residual_clamps_above_trigger() {
        let spec = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        // Altitude 600 m > 500 m trigger: residual identically zero even far
        // outside the wedge.
        let p = Vector3::new(-300.0, 5000.0, -600.0);
        for v in stc_residual(&spec, &p) {
            assert_abs_diff_eq!(v, 0.0);
        }
        assert!(stc_rows(&spec, 3, &p).is_empty());
        // Exactly at the trigger altitude the active branch has not begun.
        let p = Vector3::new(-300.0, 5000.0, -spec.trigger_altitude);
        assert!(stc_rows(&spec, 3, &p).is_empty());
    }

    #[test]
    fn stc_residual_scales_wedge_by_altitude_deficit() {
        let spec = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        // Altitude 400 m: deficit to the 500 m trigger is 100 m.
        let p = Vector3::new(-2000.0, 100.0, -400.0);
        let c = alignment_c(&spec, &p);
        let g = stc_residual(&spec, &p);
        for j in 0..4 {
            assert_relative_eq!(g[j], 100.0 * c[j], max_relative = 1e-12);
        }
        // Inside the wedge and below the trigger the residual is ≤ 0.
        let aligned = Vector3::new(-4000.0, 0.0, -4000.0 * deg(4.0).tan());
        assert!(-aligned.z < spec.trigger_altitude);
        for v in stc_residual(&spec, &aligned) {
            assert!(v <= 0.0);
        }
    }

    #[test]
    fn stc_rows_reproduce_residual_at_reference() {
        let spec = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec::default();
        let p = Vector3::new(-2000.0, 150.0, -350.0);
        let rows = stc_rows(&spec, 7, &p);
        assert_eq!(rows.len(), 4);
        let mut x = StateVec::zeros();
        x[state_idx::P_N] = p.x;
        x[state_idx::P_E] = p.y;
        x[state_idx::P_D] = p.z;
        let it = constant_iterate(&mesh, x, InputVec::zeros(), 10.0);
        let g = stc_residual(&spec, &p);
        for (row, expected) in rows.iter().zip(g) {
            // Row residual value − rhs recovers the nonlinear residual at the
            // linearization point exactly.
            assert_relative_eq!(row.value(&it) - row.rhs, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn stc_jacobian_matches_finite_differences() {
        let spec = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        let p = Vector3::new(-1500.0, -120.0, -300.0);
        let jac = stc_jacobian(&spec, &p);
        let eps = 1e-6;
        for axis in 0..3 {
            let mut dp = Vector3::zeros();
            dp[axis] = eps;
            let plus = stc_residual(&spec, &(p + dp));
            let minus = stc_residual(&spec, &(p - dp));
            for j in 0..4 {
                let fd = (plus[j] - minus[j]) / (2.0 * eps);
                assert_relative_eq!(jac[j][axis], fd, max_relative = 1e-6, epsilon = 1e-7);
            }
        }
    }

    // ── Obstacles ────────────────────────────────────────────────────────

    #[test]
    fn spherical_obstacle_row_matches_hand_case() {
        // Unit sphere at the origin, reference at (2,0,0): the affine row is
        // 1 − 2 − (p_N − 2) ≤ 0, i.e. p_N ≥ 1.
        let obs = Obstacle::ellipsoid([1.0, 1.0, 1.0], Vector3::zeros());
        let p_ref = Vector3::new(2.0, 0.0, 0.0);
        let (grad, offset) = obs.linearized(&p_ref).unwrap();
        assert_relative_eq!(grad.x, -1.0, max_relative = 1e-12);
        assert_abs_diff_eq!(grad.y, 0.0);
        assert_abs_diff_eq!(grad.z, 0.0);
        // grad·p + offset ≤ 0 at p_N = 1 is tight.
        assert_relative_eq!(grad.x * 1.0 + offset, 0.0, epsilon = 1e-12);
        // Evaluating the affine model at the reference reproduces the true
        // expression 1 − ‖p̄‖ = −1.
        assert_relative_eq!(
            grad.dot(&p_ref) + offset,
            obs.constraint_value(&p_ref),
            max_relative = 1e-12
        );
    }

    #[test]
    fn obstacle_affine_model_overestimates_everywhere() {
        let obs = Obstacle::ellipsoid([300.0, 200.0, 120.0], Vector3::new(-5e3, 200.0, -900.0));
        let p_ref = Vector3::new(-5400.0, 150.0, -700.0);
        let (grad, offset) = obs.linearized(&p_ref).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.gen_range(-1e4..0.0),
                rng.gen_range(-2e3..2e3),
                rng.gen_range(-3e3..0.0),
            );
            let affine = grad.dot(&p) + offset;
            let truth = obs.constraint_value(&p);
            assert!(
                affine >= truth - 1e-9,
                "affine {affine} under truth {truth} at {p:?}"
            );
        }
    }

    #[test]
    fn cylinder_ignores_vertical_position() {
        let obs = Obstacle::cylinder(500.0, Vector3::new(-2e3, 0.0, -400.0));
        let p_ref = Vector3::new(-2800.0, 300.0, -100.0);
        let (grad, _) = obs.linearized(&p_ref).unwrap();
        assert_abs_diff_eq!(grad.z, 0.0);
        let a = obs.constraint_value(&Vector3::new(-2800.0, 300.0, -100.0));
        let b = obs.constraint_value(&Vector3::new(-2800.0, 300.0, -2500.0));
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn obstacle_center_reference_is_degenerate() {
        let center = Vector3::new(-1e3, 0.0, -500.0);
        let obs = Obstacle::ellipsoid([100.0, 100.0, 100.0], center);
        match obs.linearized(&center) {
            Err(ConstraintError::ObstacleCenter { distance }) => assert!(distance < 1e-9),
            other => panic!("expected center degeneracy, got {other:?}"),
        }
    }

    // ── Node rows ────────────────────────────────────────────────────────

    fn interior_state() -> StateVec {
        let mut x = StateVec::zeros();
        x[state_idx::P_N] = -10_000.0;
        x[state_idx::P_D] = -1_000.0;
        x[state_idx::U] = 100.0;
        x[state_idx::DELTA_T] = deg(5.0);
        x
    }

    #[test]
    fn interior_point_satisfies_all_node_rows() {
        let limits = OperationalLimits::default();
        let alignment = AlignmentSpec::default();
        let mesh = MeshSpec::default();
        let mut u = InputVec::zeros();
        u[input_idx::THROTTLE_CMD] = deg(5.0);
        let it = constant_iterate(&mesh, interior_state(), u, 10.0);
        for row in node_rows(5, &limits, &alignment, &mesh, 1.5) {
            assert_abs_diff_eq!(row.violation(&it), 0.0);
        }
    }

    #[test]
    fn alpha_window_flags_exactly_one_row() {
        let limits = OperationalLimits::default();
        let alignment = AlignmentSpec {
            mode: AlignmentMode::None,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec::default();
        let mut x = interior_state();
        x[state_idx::U] = 100.0;
        x[state_idx::W] = 100.0 * limits.alpha_max.tan() + 0.01;
        let mut u = InputVec::zeros();
        u[input_idx::THROTTLE_CMD] = deg(5.0);
        let it = constant_iterate(&mesh, x, u, 10.0);
        let rows = node_rows(2, &limits, &alignment, &mesh, 1.5);
        let violated: Vec<_> = rows
            .iter()
            .filter(|r| r.label == RowLabel::AlphaWindow && r.violation(&it) > 0.0)
            .collect();
        assert_eq!(violated.len(), 1);
        assert_relative_eq!(violated[0].violation(&it), 0.01, max_relative = 1e-9);
    }

    #[test]
    fn alignment_rows_gate_on_switch_node_and_mode() {
        let limits = OperationalLimits::default();
        let mesh = MeshSpec::default();
        let multi = AlignmentSpec::default();
        let before = node_rows(mesh.switch_node - 1, &limits, &multi, &mesh, 1.5);
        assert!(before
            .iter()
            .all(|r| r.label != RowLabel::AlignmentWedge && r.label != RowLabel::AlignmentTrigger));
        let after = node_rows(mesh.switch_node, &limits, &multi, &mesh, 1.5);
        assert_eq!(
            after
                .iter()
                .filter(|r| r.label == RowLabel::AlignmentWedge)
                .count(),
            4
        );
        assert_eq!(
            after
                .iter()
                .filter(|r| r.label == RowLabel::AlignmentTrigger)
                .count(),
            1
        );
        let stc = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        let rows = node_rows(mesh.intervals, &limits, &stc, &mesh, 1.5);
        assert!(rows
            .iter()
            .all(|r| r.label != RowLabel::AlignmentWedge && r.label != RowLabel::AlignmentTrigger));
    }

    #[test]
    fn throttle_rate_rows_bound_the_lag_quotient() {
        let limits = OperationalLimits::default();
        let alignment = AlignmentSpec {
            mode: AlignmentMode::None,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec::default();
        let lag = 1.5;
        let mut x = interior_state();
        x[state_idx::DELTA_T] = 0.0;
        let mut u = InputVec::zeros();
        // Command far above the state: rate = u/lag exceeds the limit.
        u[input_idx::THROTTLE_CMD] = deg(10.0);
        let it = constant_iterate(&mesh, x, u, 10.0);
        let rows = node_rows(0, &limits, &alignment, &mesh, lag);
        let rate_rows: Vec<_> = rows
            .iter()
            .filter(|r| r.label == RowLabel::ThrottleRate)
            .collect();
        assert_eq!(rate_rows.len(), 2);
        let worst = rate_rows
            .iter()
            .map(|r| r.violation(&it))
            .fold(0.0, f64::max);
        let expected = deg(10.0) / lag - limits.throttle_rate_max;
        assert_relative_eq!(worst, expected, max_relative = 1e-9);
    }

    // ── Mesh and boundary rows ───────────────────────────────────────────

    #[test]
    fn mesh_rows_enforce_phasewise_uniformity() {
        let mesh = MeshSpec::default();
        let rows = mesh_rows(&mesh);
        let eq_count = rows
            .iter()
            .filter(|r| r.label == RowLabel::UniformMesh)
            .count();
        assert_eq!(eq_count, mesh.intervals - 2);
        let box_count = rows
            .iter()
            .filter(|r| r.label == RowLabel::DilationBox)
            .count();
        assert_eq!(box_count, 2 * mesh.intervals);

        // Different per-phase values satisfy every uniformity row.
        let mut it = constant_iterate(&mesh, StateVec::zeros(), InputVec::zeros(), 12.0);
        for k in mesh.switch_node..mesh.intervals {
            it.dilations[k] = 4.0;
        }
        for row in &rows {
            assert_abs_diff_eq!(row.violation(&it), 0.0);
        }
        // Breaking one base-leg interval violates exactly one equality.
        it.dilations[3] = 12.5;
        let violated = rows
            .iter()
            .filter(|r| r.label == RowLabel::UniformMesh && r.violation(&it) > 0.0)
            .count();
        assert_eq!(violated, 2); // rows (2,3) and (3,4)
    }

    #[test]
    fn boundary_rows_pin_ends_and_window_final_speed() {
        let limits = OperationalLimits::default();
        let mesh = MeshSpec::default();
        let initial = InitialCondition {
            position: Vector3::new(-40_000.0, 10_000.0, -3_000.0),
            velocity: Vector3::new(95.0, 0.0, 4.0),
            attitude: Vector3::new(0.0, deg(2.0), deg(-45.0)),
            rates: Vector3::zeros(),
        };
        let rows = boundary_rows(&initial, &limits, mesh.intervals);
        assert_eq!(rows.len(), 12 + 9 + 6);

        let mut it = constant_iterate(&mesh, StateVec::zeros(), InputVec::zeros(), 10.0);
        for (i, v) in initial.components().into_iter().enumerate() {
            it.states[0][i] = v;
        }
        // Terminal node at rest on the touchdown point with a small forward
        // residual speed.
        it.states[mesh.intervals][state_idx::U] = 84.0;
        for row in &rows {
            if row.label == RowLabel::FinalVelocityWindow && row.violation(&it) > 0.0 {
                panic!("final window violated: u = 84 within (85,3,3)?");
            }
        }
        let violations: f64 = rows.iter().map(|r| r.violation(&it)).sum();
        assert_abs_diff_eq!(violations, 0.0);

        // Exceeding the forward window by 2 m/s violates exactly one row.
        it.states[mesh.intervals][state_idx::U] = 87.0;
        let violated: Vec<_> = rows.iter().filter(|r| r.violation(&it) > 0.0).collect();
        assert_eq!(violated.len(), 1);
        assert_eq!(violated[0].label, RowLabel::FinalVelocityWindow);
        assert_relative_eq!(violated[0].violation(&it), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn static_rows_cover_all_nodes() {
        let limits = OperationalLimits::default();
        let alignment = AlignmentSpec::default();
        let mesh = MeshSpec::default();
        let initial = InitialCondition {
            position: Vector3::new(-40_000.0, 10_000.0, -3_000.0),
            velocity: Vector3::new(95.0, 0.0, 4.0),
            attitude: Vector3::zeros(),
            rates: Vector3::zeros(),
        };
        let rows = static_rows(&limits, &alignment, &mesh, &initial, 1.5);
        let per_node = 31;
        let align_nodes = mesh.intervals + 1 - mesh.switch_node;
        let expected = per_node * (mesh.intervals + 1)
            + 5 * align_nodes
            + (mesh.intervals - 2)
            + 2 * mesh.intervals
            + 27;
        assert_eq!(rows.len(), expected);
    }

    // ── Reference rows ───────────────────────────────────────────────────

    #[test]
    fn reference_rows_skip_inactive_stc_nodes() {
        let alignment = AlignmentSpec {
            mode: AlignmentMode::Stc,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec {
            intervals: 4,
            switch_node: 3,
            ..MeshSpec::default()
        };
        let mut it = constant_iterate(&mesh, StateVec::zeros(), InputVec::zeros(), 10.0);
        // Three nodes above the trigger, two below.
        for (k, alt) in [3000.0, 1500.0, 800.0, 400.0, 100.0].into_iter().enumerate() {
            it.states[k][state_idx::P_N] = -10.0 * (5.0 - k as f64) * alt;
            it.states[k][state_idx::P_D] = -alt;
        }
        let rows = reference_rows(&alignment, &[], &it).unwrap();
        assert!(rows.iter().all(|r| r.label == RowLabel::StcAlignment));
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.node == 3 || r.node == 4));
    }

    #[test]
    fn reference_rows_error_on_center_hit() {
        let alignment = AlignmentSpec {
            mode: AlignmentMode::None,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec {
            intervals: 2,
            switch_node: 1,
            ..MeshSpec::default()
        };
        let center = Vector3::new(-500.0, 0.0, -200.0);
        let obstacles = vec![Obstacle::cylinder(300.0, center)];
        let mut it = constant_iterate(&mesh, StateVec::zeros(), InputVec::zeros(), 10.0);
        it.states[1][state_idx::P_N] = center.x;
        it.states[1][state_idx::P_E] = center.y;
        // The cylinder projects out the vertical axis, so any altitude over
        // the center is degenerate.
        it.states[1][state_idx::P_D] = -1200.0;
        assert!(matches!(
            reference_rows(&alignment, &obstacles, &it),
            Err(ConstraintError::ObstacleCenter { .. })
        ));
    }

    // ── Validation ───────────────────────────────────────────────────────

    #[test]
    fn limit_validation_catches_misordered_bounds() {
        assert!(OperationalLimits::default().validate().is_ok());
        let mut l = OperationalLimits::default();
        l.roll_min = l.roll_max;
        assert!(matches!(
            l.validate(),
            Err(ConstraintError::LimitOrder { name: "roll" })
        ));
        let mut l = OperationalLimits::default();
        l.alpha_max = 1.6;
        assert!(matches!(l.validate(), Err(ConstraintError::AlphaWindow)));

        assert!(AlignmentSpec::default().validate().is_ok());
        let mut a = AlignmentSpec::default();
        a.vertical_min = -0.01;
        assert!(matches!(
            a.validate(),
            Err(ConstraintError::AlignmentAngles)
        ));
        let mut a = AlignmentSpec::default();
        a.trigger_altitude = 0.0;
        assert!(matches!(
            a.validate(),
            Err(ConstraintError::TriggerAltitude)
        ));
    }

    #[test]
    fn row_count_per_node_without_alignment() {
        let limits = OperationalLimits::default();
        let alignment = AlignmentSpec {
            mode: AlignmentMode::None,
            ..AlignmentSpec::default()
        };
        let mesh = MeshSpec::default();
        let rows = node_rows(0, &limits, &alignment, &mesh, 1.5);
        // 1 altitude + 6 velocity + 2 roll + 2 pitch + 6 rate + 2 alpha
        // + 8 input + 2 throttle + 2 throttle-rate = 31.
        assert_eq!(rows.len(), 31);
        let _ = STATE_DIM;
    }
}
