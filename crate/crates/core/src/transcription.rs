//! Multiple-shooting transcription of the free-final-time dynamics.
//!
//! The trajectory is split into `N` subintervals. Within interval `k` the
//! input is interpolated first-order-hold between the node inputs `u_k` and
//! `u_{k+1}`, and time is normalized to `tau in [0, 1]` through the dilation
//! variable `s_k` (the physical duration of the interval), so the dynamics
//! integrate as `dx/dtau = s_k * f(x, u(tau))`. Each interval is propagated
//! with fixed-step classical RK4 together with its variational equations, so
//! the returned sensitivity blocks are the exact Jacobians of the discrete
//! propagation map — no matrix inversion and no finite differencing.
//!
//! A scalar integral channel accumulates the squared violations of the roll
//! and pitch corridors between nodes; driving its per-interval increment to
//! zero enforces those limits in continuous time, not just at the nodes.

use nalgebra::{SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    dynamics_jacobians, dynamics_rhs, state_idx, AircraftParams, InputVec, StateVec, INPUT_DIM,
    STATE_DIM,
};

pub type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type StateInputMat = SMatrix<f64, STATE_DIM, INPUT_DIM>;
pub type StateRow = SMatrix<f64, 1, STATE_DIM>;
pub type InputRow = SMatrix<f64, 1, INPUT_DIM>;

/// Mesh layout of the transcription.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshSpec {
    /// Number of subintervals (nodes run 0..=n).
    pub intervals: usize,
    /// Node at which the final approach phase begins.
    pub switch_node: usize,
    /// RK4 substeps per subinterval.
    pub substeps: usize,
    /// Lower bound on each interval duration [s].
    pub dilation_min: f64,
    /// Upper bound on each interval duration [s].
    pub dilation_max: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            intervals: 32,
            switch_node: 24,
            substeps: 20,
            dilation_min: 0.1,
            dilation_max: 60.0,
        }
    }
}

/// Configuration errors for mesh and iterate shapes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TranscriptionError {
    #[error("mesh must have at least 2 intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("switch node {switch_node} must lie strictly between 0 and the interval count {intervals}")]
    SwitchNodeOutOfRange { switch_node: usize, intervals: usize },
    #[error("substep count must be positive")]
    NoSubsteps,
    #[error("dilation bounds must satisfy 0 < min < max, got [{min}, {max}]")]
    BadDilationBounds { min: f64, max: f64 },
    #[error("iterate shape mismatch: {0}")]
    BadIterateShape(String),
    #[error("iterate contains a non-finite entry")]
    NonFiniteIterate,
}

impl MeshSpec {
    pub fn validate(&self) -> Result<(), TranscriptionError> {
        if self.intervals < 2 {
            return Err(TranscriptionError::TooFewIntervals(self.intervals));
        }
        if self.switch_node == 0 || self.switch_node >= self.intervals {
            return Err(TranscriptionError::SwitchNodeOutOfRange {
                switch_node: self.switch_node,
                intervals: self.intervals,
            });
        }
        if self.substeps == 0 {
            return Err(TranscriptionError::NoSubsteps);
        }
        if !(self.dilation_min > 0.0 && self.dilation_min < self.dilation_max) {
            return Err(TranscriptionError::BadDilationBounds {
                min: self.dilation_min,
                max: self.dilation_max,
            });
        }
        Ok(())
    }
}

/// One full trajectory: node states, node inputs, and interval durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIterate {
    /// Node states, length `intervals + 1`.
    pub states: Vec<StateVec>,
    /// Node inputs, length `intervals + 1`.
    pub inputs: Vec<InputVec>,
    /// Interval durations [s], length `intervals`.
    pub dilations: Vec<f64>,
}

impl TrajectoryIterate {
    pub fn intervals(&self) -> usize {
        self.dilations.len()
    }

    pub fn validate(&self, mesh: &MeshSpec) -> Result<(), TranscriptionError> {
        let n = mesh.intervals;
        if self.states.len() != n + 1 || self.inputs.len() != n + 1 || self.dilations.len() != n {
            return Err(TranscriptionError::BadIterateShape(format!(
                "expected {} states, {} inputs, {} dilations; got {}, {}, {}",
                n + 1,
                n + 1,
                n,
                self.states.len(),
                self.inputs.len(),
                self.dilations.len()
            )));
        }
        let finite = self
            .states
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
            && self.inputs.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && self.dilations.iter().all(|s| s.is_finite() && *s > 0.0);
        if !finite {
            return Err(TranscriptionError::NonFiniteIterate);
        }
        Ok(())
    }

    /// Absolute node times, starting at zero [s].
    pub fn node_times(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.dilations.len() + 1);
        let mut acc = 0.0;
        t.push(0.0);
        for s in &self.dilations {
            acc += s;
            t.push(acc);
        }
        t
    }

    /// Total flight time [s].
    pub fn final_time(&self) -> f64 {
        self.dilations.iter().sum()
    }
}

/// Time at which the final approach phase begins, and the final time [s].
pub fn switch_time(iterate: &TrajectoryIterate, switch_node: usize) -> (f64, f64) {
    let t_s = iterate.dilations[..switch_node].iter().sum();
    (t_s, iterate.final_time())
}

/// First-order-hold weights at normalized time `tau in [0, 1]`.
#[inline]
pub fn foh_weights(tau: f64) -> (f64, f64) {
    (1.0 - tau, tau)
}

/// First-order-hold input interpolation between two node inputs.
#[inline]
pub fn foh_input(u_minus: &InputVec, u_plus: &InputVec, tau: f64) -> InputVec {
    let (wm, wp) = foh_weights(tau);
    wm * u_minus + wp * u_plus
}

// ── Dynamics abstraction ────────────────────────────────────────────────────

/// Point dynamics consumed by the propagator.
///
/// The production implementation wraps the aircraft model with a constant
/// wind; tests substitute analytically solvable systems.
pub trait DynamicsModel: Sync {
    fn rhs(&self, x: &StateVec, u: &InputVec) -> StateVec;
    fn rhs_jacobians(&self, x: &StateVec, u: &InputVec) -> (StateVec, StateMat, StateInputMat);
}

/// Aircraft dynamics under a constant inertial wind.
#[derive(Debug, Clone)]
pub struct AircraftDynamics {
    pub params: AircraftParams,
    pub wind: Vector3<f64>,
}

impl DynamicsModel for AircraftDynamics {
    fn rhs(&self, x: &StateVec, u: &InputVec) -> StateVec {
        dynamics_rhs(x, u, &self.wind, &self.params)
    }

    fn rhs_jacobians(&self, x: &StateVec, u: &InputVec) -> (StateVec, StateMat, StateInputMat) {
        dynamics_jacobians(x, u, &self.wind, &self.params)
    }
}

// ── Continuous-time roll/pitch corridor ─────────────────────────────────────

/// Roll and pitch corridor enforced between nodes [rad].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtcsLimits {
    pub roll_min: f64,
    pub roll_max: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
}

impl CtcsLimits {
    /// Component residuals, each `<= 0` when the corridor is respected:
    /// `(roll_min - roll, roll - roll_max, pitch_min - pitch, pitch - pitch_max)`.
    pub fn components(&self, x: &StateVec) -> [f64; 4] {
        let roll = x[state_idx::PHI];
        let pitch = x[state_idx::THETA];
        [
            self.roll_min - roll,
            roll - self.roll_max,
            self.pitch_min - pitch,
            pitch - self.pitch_max,
        ]
    }

    /// Aggregated violation rate `sum_j max(h_j, 0)^2`.
    pub fn violation_rate(&self, x: &StateVec) -> f64 {
        self.components(x)
            .iter()
            .map(|h| h.max(0.0).powi(2))
            .sum()
    }

    /// Gradient of [`Self::violation_rate`] with respect to the state.
    pub fn violation_gradient(&self, x: &StateVec) -> StateRow {
        let h = self.components(x);
        let mut g = StateRow::zeros();
        // d/droll: -2*max(h0,0) + 2*max(h1,0); similarly for pitch.
        g[(0, state_idx::PHI)] = -2.0 * h[0].max(0.0) + 2.0 * h[1].max(0.0);
        g[(0, state_idx::THETA)] = -2.0 * h[2].max(0.0) + 2.0 * h[3].max(0.0);
        g
    }
}

// ── Interval propagation ────────────────────────────────────────────────────

/// Failure modes of interval propagation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropagateError {
    #[error("state became non-finite during propagation (substep {substep})")]
    NonFiniteState { substep: usize },
}

/// Linearization of the corridor-violation integral over one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcsLinearization {
    /// Integral of the violation rate over the interval.
    pub integral: f64,
    /// Sensitivity of the integral to the start state (row).
    pub wrt_state: StateRow,
    /// Sensitivity to the left node input.
    pub wrt_input_minus: InputRow,
    /// Sensitivity to the right node input.
    pub wrt_input_plus: InputRow,
    /// Sensitivity to the interval duration.
    pub wrt_dilation: f64,
    /// Affine offset: `integral - wrt_state*x - wrt_input_minus*u_minus - ...`
    /// evaluated at the reference, so the linear model reproduces `integral`
    /// exactly at the reference point.
    pub offset: f64,
}

/// Exact linearization of the discrete propagation map over one interval.
///
/// The end state satisfies (to machine precision, at the reference)
/// `x_end = a * x_start + b_minus * u_minus + b_plus * u_plus + z * s + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalLinearization {
    /// Propagated end state.
    pub x_end: StateVec,
    /// Sensitivity to the start state.
    pub a: StateMat,
    /// Sensitivity to the left node input.
    pub b_minus: StateInputMat,
    /// Sensitivity to the right node input.
    pub b_plus: StateInputMat,
    /// Sensitivity to the interval duration.
    pub z: StateVec,
    /// Affine offset making the linear model exact at the reference.
    pub offset: StateVec,
    /// Corridor-violation channel, when requested.
    pub ctcs: Option<CtcsLinearization>,
}

/// Augmented integration state: trajectory plus variational blocks plus the
/// corridor channel and its sensitivities.
#[derive(Clone)]
struct Aug {
    x: StateVec,
    phi_a: StateMat,
    phi_bm: StateInputMat,
    phi_bp: StateInputMat,
    phi_z: StateVec,
    y: f64,
    y_a: StateRow,
    y_bm: InputRow,
    y_bp: InputRow,
    y_z: f64,
}

impl Aug {
    fn start(x: StateVec) -> Self {
        Self {
            x,
            phi_a: StateMat::identity(),
            phi_bm: StateInputMat::zeros(),
            phi_bp: StateInputMat::zeros(),
            phi_z: StateVec::zeros(),
            y: 0.0,
            y_a: StateRow::zeros(),
            y_bm: InputRow::zeros(),
            y_bp: InputRow::zeros(),
            y_z: 0.0,
        }
    }

    /// `self + c * d`, consumed-and-returned to chain RK4 combinations.
    fn axpy(mut self, c: f64, d: &Aug) -> Self {
        self.x += c * d.x;
        self.phi_a += c * d.phi_a;
        self.phi_bm += c * d.phi_bm;
        self.phi_bp += c * d.phi_bp;
        self.phi_z += c * d.phi_z;
        self.y += c * d.y;
        self.y_a += c * d.y_a;
        self.y_bm += c * d.y_bm;
        self.y_bp += c * d.y_bp;
        self.y_z += c * d.y_z;
        self
    }
}

/// Derivative of the augmented state at normalized time `tau`.
fn aug_deriv(
    model: &dyn DynamicsModel,
    aug: &Aug,
    tau: f64,
    s: f64,
    u_minus: &InputVec,
    u_plus: &InputVec,
    ctcs: Option<&CtcsLimits>,
) -> Aug {
    let (wm, wp) = foh_weights(tau);
    let u = wm * u_minus + wp * u_plus;
    let (f, jx, ju) = model.rhs_jacobians(&aug.x, &u);

    let sjx = s * jx;
    let deriv = Aug {
        x: s * f,
        phi_a: sjx * aug.phi_a,
        phi_bm: sjx * aug.phi_bm + s * wm * ju,
        phi_bp: sjx * aug.phi_bp + s * wp * ju,
        phi_z: f + sjx * aug.phi_z,
        y: 0.0,
        y_a: StateRow::zeros(),
        y_bm: InputRow::zeros(),
        y_bp: InputRow::zeros(),
        y_z: 0.0,
    };

    match ctcs {
        None => deriv,
        Some(limits) => {
            let g = limits.violation_rate(&aug.x);
            let gx = limits.violation_gradient(&aug.x);
            Aug {
                y: s * g,
                y_a: s * gx * aug.phi_a,
                y_bm: s * gx * aug.phi_bm,
                y_bp: s * gx * aug.phi_bp,
                y_z: g + s * (gx * aug.phi_z)[(0, 0)],
                ..deriv
            }
        }
    }
}

/// Propagate one interval and linearize the discrete map around the inputs.
///
/// Integrates `dx/dtau = s * f(x, u(tau))` from `x_start` over `tau in
/// [0, 1]` with `mesh.substeps` RK4 steps, carrying the variational equations
/// alongside so the returned blocks differentiate the discrete map exactly.
/// When `ctcs` is given, the corridor-violation integral and its
/// sensitivities are carried in the same pass.
pub fn propagate_interval(
    model: &dyn DynamicsModel,
    x_start: &StateVec,
    u_minus: &InputVec,
    u_plus: &InputVec,
    s: f64,
    substeps: usize,
    ctcs: Option<&CtcsLimits>,
) -> Result<IntervalLinearization, PropagateError> {
    let h = 1.0 / substeps as f64;
    let mut aug = Aug::start(*x_start);

    for i in 0..substeps {
        let tau = i as f64 * h;
        let k1 = aug_deriv(model, &aug, tau, s, u_minus, u_plus, ctcs);
        let mid1 = aug.clone().axpy(0.5 * h, &k1);
        let k2 = aug_deriv(model, &mid1, tau + 0.5 * h, s, u_minus, u_plus, ctcs);
        let mid2 = aug.clone().axpy(0.5 * h, &k2);
        let k3 = aug_deriv(model, &mid2, tau + 0.5 * h, s, u_minus, u_plus, ctcs);
        let end = aug.clone().axpy(h, &k3);
        let k4 = aug_deriv(model, &end, tau + h, s, u_minus, u_plus, ctcs);

        aug = aug
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);

        if !aug.x.iter().all(|v| v.is_finite()) {
            return Err(PropagateError::NonFiniteState { substep: i });
        }
    }

    if !(aug.phi_a.iter().all(|v| v.is_finite()) && aug.phi_z.iter().all(|v| v.is_finite())) {
        return Err(PropagateError::NonFiniteState { substep: substeps });
    }

    let offset = aug.x - aug.phi_a * x_start - aug.phi_bm * u_minus - aug.phi_bp * u_plus
        - aug.phi_z * s;
    let ctcs_lin = ctcs.map(|_| CtcsLinearization {
        integral: aug.y,
        wrt_state: aug.y_a,
        wrt_input_minus: aug.y_bm,
        wrt_input_plus: aug.y_bp,
        wrt_dilation: aug.y_z,
        offset: aug.y
            - (aug.y_a * x_start)[(0, 0)]
            - (aug.y_bm * u_minus)[(0, 0)]
            - (aug.y_bp * u_plus)[(0, 0)]
            - aug.y_z * s,
    });

    Ok(IntervalLinearization {
        x_end: aug.x,
        a: aug.phi_a,
        b_minus: aug.phi_bm,
        b_plus: aug.phi_bp,
        z: aug.phi_z,
        offset,
        ctcs: ctcs_lin,
    })
}

/// Linearize every interval of an iterate.
///
/// Intervals are independent; `parallel` fans them out across the rayon pool.
/// Both paths produce bitwise-identical results.
pub fn linearize_intervals(
    model: &dyn DynamicsModel,
    iterate: &TrajectoryIterate,
    substeps: usize,
    ctcs: Option<&CtcsLimits>,
    parallel: bool,
) -> Result<Vec<IntervalLinearization>, PropagateError> {
    let n = iterate.intervals();
    let one = |k: usize| {
        propagate_interval(
            model,
            &iterate.states[k],
            &iterate.inputs[k],
            &iterate.inputs[k + 1],
            iterate.dilations[k],
            substeps,
            ctcs,
        )
    };
    if parallel {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    }
}

// ── Dense resampling ────────────────────────────────────────────────────────

/// Single-shooting re-integration of an iterate on a fine time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSamples {
    /// Absolute sample times [s]; `samples_per_interval` entries per interval.
    pub times: Vec<f64>,
    /// Integrated states at the sample times.
    pub states: Vec<StateVec>,
    /// First-order-hold inputs at the sample times.
    pub inputs: Vec<InputVec>,
    /// Interval index of each sample.
    pub interval_of: Vec<usize>,
    /// Per-node shooting defect: distance between the state integrated up to
    /// node `k+1` and the iterate's node state `x_{k+1}` [2-norm].
    pub node_defects: Vec<f64>,
}

/// Re-integrate the nonlinear dynamics through all intervals from the first
/// node state, chaining across nodes, and record `samples_per_interval`
/// equally spaced samples in each interval (both endpoints included).
pub fn dense_sample(
    model: &dyn DynamicsModel,
    iterate: &TrajectoryIterate,
    substeps: usize,
    samples_per_interval: usize,
) -> Result<DenseSamples, PropagateError> {
    assert!(
        samples_per_interval >= 2,
        "need at least the two interval endpoints per interval"
    );
    let n = iterate.intervals();
    let m = samples_per_interval;
    let segments = m - 1;
    let sub_per_segment = substeps.div_ceil(segments);

    let mut out = DenseSamples {
        times: Vec::with_capacity(n * m),
        states: Vec::with_capacity(n * m),
        inputs: Vec::with_capacity(n * m),
        interval_of: Vec::with_capacity(n * m),
        node_defects: Vec::with_capacity(n),
    };

    let node_times = iterate.node_times();
    let mut x = iterate.states[0];
    for k in 0..n {
        let s = iterate.dilations[k];
        let (u_minus, u_plus) = (&iterate.inputs[k], &iterate.inputs[k + 1]);
        for j in 0..m {
            let tau = j as f64 / segments as f64;
            if j > 0 {
                // Advance from the previous sample to this one.
                let tau_prev = (j - 1) as f64 / segments as f64;
                let h = (tau - tau_prev) / sub_per_segment as f64;
                for i in 0..sub_per_segment {
                    let t0 = tau_prev + i as f64 * h;
                    x = rk4_state_step(model, &x, t0, h, s, u_minus, u_plus);
                    if !x.iter().all(|v| v.is_finite()) {
                        return Err(PropagateError::NonFiniteState { substep: i });
                    }
                }
            }
            out.times.push(node_times[k] + tau * s);
            out.states.push(x);
            out.inputs.push(foh_input(u_minus, u_plus, tau));
            out.interval_of.push(k);
        }
        out.node_defects.push((x - iterate.states[k + 1]).norm());
        // Chain: continue from the integrated state, not the node state.
    }
    Ok(out)
}

/// One RK4 step of the dilated state equation alone.
fn rk4_state_step(
    model: &dyn DynamicsModel,
    x: &StateVec,
    tau: f64,
    h: f64,
    s: f64,
    u_minus: &InputVec,
    u_plus: &InputVec,
) -> StateVec {
    let f = |x: &StateVec, tau: f64| -> StateVec {
        let u = foh_input(u_minus, u_plus, tau);
        s * model.rhs(x, &u)
    };
    let k1 = f(x, tau);
    let k2 = f(&(x + 0.5 * h * k1), tau + 0.5 * h);
    let k3 = f(&(x + 0.5 * h * k2), tau + 0.5 * h);
    let k4 = f(&(x + h * k3), tau + h);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AircraftParams, InputVec, StateVec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Decoupled linear dynamics `dx_i/dt = a_i x_i + b_i u_{i mod 4}`,
    /// solvable in closed form against which the propagator is checked.
    struct LinearTestModel {
        a: [f64; STATE_DIM],
        b: [f64; STATE_DIM],
    }

    impl DynamicsModel for LinearTestModel {
        fn rhs(&self, x: &StateVec, u: &InputVec) -> StateVec {
            let mut dx = StateVec::zeros();
            for i in 0..STATE_DIM {
                dx[i] = self.a[i] * x[i] + self.b[i] * u[i % INPUT_DIM];
            }
            dx
        }

        fn rhs_jacobians(&self, x: &StateVec, u: &InputVec) -> (StateVec, StateMat, StateInputMat) {
            let f = self.rhs(x, u);
            let mut jx = StateMat::zeros();
            let mut ju = StateInputMat::zeros();
            for i in 0..STATE_DIM {
                jx[(i, i)] = self.a[i];
                ju[(i, i % INPUT_DIM)] = self.b[i];
            }
            (f, jx, ju)
        }
    }

    fn aircraft() -> AircraftDynamics {
        AircraftDynamics {
            params: AircraftParams::default(),
            wind: Vector3::zeros(),
        }
    }

    /// A mildly maneuvering flight condition for propagation tests.
    fn flight_state() -> (StateVec, InputVec, InputVec) {
        let mut x = StateVec::zeros();
        x[0] = -50_000.0;
        x[1] = -30_000.0;
        x[2] = -5_000.0;
        x[3] = 100.0;
        x[4] = 1.0;
        x[5] = 2.0;
        x[6] = 0.02;
        x[7] = -0.03;
        x[8] = 0.5;
        x[9] = 0.005;
        x[10] = -0.004;
        x[11] = 0.002;
        x[12] = 0.06;
        let u0 = InputVec::new(0.01, -0.09, 0.005, 0.06);
        let u1 = InputVec::new(-0.01, -0.07, 0.0, 0.08);
        (x, u0, u1)
    }

    // ── FOH ─────────────────────────────────────────────────────────────

    #[test]
    fn foh_hits_endpoints_and_midpoint() {
        let u0 = InputVec::new(1.0, 2.0, 3.0, 4.0);
        let u1 = InputVec::new(5.0, 6.0, 7.0, 8.0);
        assert_eq!(foh_input(&u0, &u1, 0.0), u0);
        assert_eq!(foh_input(&u0, &u1, 1.0), u1);
        assert_eq!(
            foh_input(&u0, &u1, 0.5),
            InputVec::new(3.0, 4.0, 5.0, 6.0)
        );
        // Equal endpoints reduce to a constant signal.
        assert_eq!(foh_input(&u0, &u0, 0.37), u0);
    }

    // ── Mesh / iterate validation ───────────────────────────────────────

    #[test]
    fn mesh_validation_catches_bad_shapes() {
        let good = MeshSpec::default();
        assert!(good.validate().is_ok());
        assert!(MeshSpec {
            intervals: 1,
            ..good
        }
        .validate()
        .is_err());
        assert!(MeshSpec {
            switch_node: 0,
            ..good
        }
        .validate()
        .is_err());
        assert!(MeshSpec {
            switch_node: 32,
            ..good
        }
        .validate()
        .is_err());
        assert!(MeshSpec {
            substeps: 0,
            ..good
        }
        .validate()
        .is_err());
        assert!(MeshSpec {
            dilation_min: 5.0,
            dilation_max: 2.0,
            ..good
        }
        .validate()
        .is_err());
    }

    #[test]
    fn iterate_validation_checks_lengths_and_finiteness() {
        let mesh = MeshSpec {
            intervals: 3,
            switch_node: 2,
            ..MeshSpec::default()
        };
        let mut it = TrajectoryIterate {
            states: vec![StateVec::zeros(); 4],
            inputs: vec![InputVec::zeros(); 4],
            dilations: vec![1.0; 3],
        };
        assert!(it.validate(&mesh).is_ok());
        it.dilations[1] = f64::NAN;
        assert!(matches!(
            it.validate(&mesh),
            Err(TranscriptionError::NonFiniteIterate)
        ));
        it.dilations[1] = 1.0;
        it.states.pop();
        assert!(matches!(
            it.validate(&mesh),
            Err(TranscriptionError::BadIterateShape(_))
        ));
    }

    #[test]
    fn switch_time_sums_leading_dilations() {
        let it = TrajectoryIterate {
            states: vec![StateVec::zeros(); 5],
            inputs: vec![InputVec::zeros(); 5],
            dilations: vec![2.0, 3.0, 4.0, 5.0],
        };
        let (t_s, t_f) = switch_time(&it, 3);
        assert_abs_diff_eq!(t_s, 9.0);
        assert_abs_diff_eq!(t_f, 14.0);
        assert_eq!(it.node_times(), vec![0.0, 2.0, 5.0, 9.0, 14.0]);
    }

    // ── Propagation against the closed-form linear solution ─────────────

    #[test]
    fn linear_model_blocks_match_closed_form() {
        let mut a = [0.0; STATE_DIM];
        let mut b = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            a[i] = -0.3 + 0.04 * i as f64;
            b[i] = 0.5 - 0.05 * i as f64;
        }
        let model = LinearTestModel { a, b };
        let mut x0 = StateVec::zeros();
        for i in 0..STATE_DIM {
            x0[i] = 1.0 + i as f64;
        }
        let u0 = InputVec::new(0.3, -0.2, 0.1, 0.4);
        let u1 = InputVec::new(-0.1, 0.5, 0.2, -0.3);
        let s = 2.0;

        let lin = propagate_interval(&model, &x0, &u0, &u1, s, 40, None).unwrap();

        for i in 0..STATE_DIM {
            let c = a[i] * s;
            let e = c.exp();
            // x(1) = e^c x0 + s*b*[coef_m * u0 + coef_p * u1] where the FOH
            // weights integrate to the two closed-form coefficients below.
            let coef_m = (e * (c - 1.0) + 1.0) / (c * c);
            let coef_p = (e - 1.0) / c - coef_m;
            let expected =
                e * x0[i] + s * b[i] * (coef_m * u0[i % 4] + coef_p * u1[i % 4]);
            assert_relative_eq!(lin.x_end[i], expected, max_relative = 1e-8);
            assert_relative_eq!(lin.a[(i, i)], e, max_relative = 1e-8);
            assert_relative_eq!(
                lin.b_minus[(i, i % 4)],
                s * b[i] * coef_m,
                max_relative = 1e-8,
                epsilon = 1e-10
            );
            assert_relative_eq!(
                lin.b_plus[(i, i % 4)],
                s * b[i] * coef_p,
                max_relative = 1e-8,
                epsilon = 1e-10
            );
            for j in 0..STATE_DIM {
                if j != i {
                    assert_abs_diff_eq!(lin.a[(i, j)], 0.0, epsilon = 1e-12);
                }
            }
        }

        // Dilation sensitivity against central differences.
        let ds = 1e-4;
        let plus = propagate_interval(&model, &x0, &u0, &u1, s + ds, 20, None).unwrap();
        let minus = propagate_interval(&model, &x0, &u0, &u1, s - ds, 20, None).unwrap();
        let fd = (plus.x_end - minus.x_end) / (2.0 * ds);
        assert_relative_eq!(lin.z, fd, max_relative = 1e-6, epsilon = 1e-8);
    }

    #[test]
    fn linearization_is_exact_at_the_reference() {
        let model = aircraft();
        let (x, u0, u1) = flight_state();
        let s = 15.0;
        let lin = propagate_interval(&model, &x, &u0, &u1, s, 20, None).unwrap();
        let reconstructed = lin.a * x + lin.b_minus * u0 + lin.b_plus * u1 + lin.z * s + lin.offset;
        assert_abs_diff_eq!(reconstructed, lin.x_end, epsilon = 1e-9);
    }

    #[test]
    fn sensitivity_blocks_predict_directional_differences() {
        let model = aircraft();
        let (x, u0, u1) = flight_state();
        // Forward differences at eps carry an O(eps * curvature) remainder
        // that grows with the interval length, so the 1e-3 budget below is
        // meaningful on a short interval and would be dominated by
        // truncation on a long one.
        let s = 2.0;
        let lin = propagate_interval(&model, &x, &u0, &u1, s, 20, None).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-5;
        for _ in 0..5 {
            let mut d = StateVec::zeros();
            for i in 0..STATE_DIM {
                d[i] = rng.gen_range(-1.0..1.0);
            }
            d /= d.norm();
            let shifted =
                propagate_interval(&model, &(x + eps * d), &u0, &u1, s, 20, None).unwrap();
            let fd = (shifted.x_end - lin.x_end) / eps;
            let predicted = lin.a * d;
            assert!(
                (fd - predicted).norm() < 1e-3,
                "state directional error {}",
                (fd - predicted).norm()
            );
        }

        // Input directions, first- and second-node blocks.
        let mut du = InputVec::zeros();
        for i in 0..INPUT_DIM {
            du[i] = rng.gen_range(-1.0..1.0);
        }
        du /= du.norm();
        let shifted =
            propagate_interval(&model, &x, &(u0 + eps * du), &u1, s, 20, None).unwrap();
        let fd = (shifted.x_end - lin.x_end) / eps;
        assert!(
            (fd - lin.b_minus * du).norm() < 1e-3,
            "first-node input directional error {}",
            (fd - lin.b_minus * du).norm()
        );
        let shifted =
            propagate_interval(&model, &x, &u0, &(u1 + eps * du), s, 20, None).unwrap();
        let fd = (shifted.x_end - lin.x_end) / eps;
        assert!(
            (fd - lin.b_plus * du).norm() < 1e-3,
            "second-node input directional error {}",
            (fd - lin.b_plus * du).norm()
        );

        // Dilation direction.
        let shifted = propagate_interval(&model, &x, &u0, &u1, s + eps, 20, None).unwrap();
        let fd = (shifted.x_end - lin.x_end) / eps;
        assert!((fd - lin.z).norm() < 1e-3);
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let model = aircraft();
        let (x, u0, u1) = flight_state();
        let s = 10.0;
        let reference = propagate_interval(&model, &x, &u0, &u1, s, 200, None)
            .unwrap()
            .x_end;
        let coarse = propagate_interval(&model, &x, &u0, &u1, s, 10, None)
            .unwrap()
            .x_end;
        let fine = propagate_interval(&model, &x, &u0, &u1, s, 20, None)
            .unwrap()
            .x_end;
        let e_coarse = (coarse - reference).norm();
        let e_fine = (fine - reference).norm();
        let ratio = e_coarse / e_fine;
        assert!(
            ratio >= 12.0,
            "halving the step reduced the error by only {ratio:.2}x"
        );
    }

    // ── Corridor channel ────────────────────────────────────────────────

    fn corridor() -> CtcsLimits {
        let lim = 15.0_f64.to_radians();
        CtcsLimits {
            roll_min: -lim,
            roll_max: lim,
            pitch_min: -lim,
            pitch_max: lim,
        }
    }

    #[test]
    fn corridor_components_signs() {
        let lim = 15.0_f64.to_radians();
        let c = corridor();
        let mut x = StateVec::zeros();
        let h = c.components(&x);
        for r in h {
            assert_relative_eq!(r, -lim, max_relative = 1e-14);
        }
        assert_abs_diff_eq!(c.violation_rate(&x), 0.0);

        x[state_idx::PHI] = lim;
        assert_abs_diff_eq!(c.components(&x)[1], 0.0, epsilon = 1e-15);

        x[state_idx::PHI] = 30.0_f64.to_radians();
        let h = c.components(&x);
        assert_relative_eq!(h[1], lim, max_relative = 1e-12);
        assert_relative_eq!(c.violation_rate(&x), lim * lim, max_relative = 1e-12);
    }

    #[test]
    fn corridor_integral_zero_inside_limits() {
        let model = aircraft();
        let (x, u0, u1) = flight_state();
        // A corridor wide enough that this short arc never touches it: the
        // penalty integral and all its sensitivities must be identically zero.
        let wide = CtcsLimits {
            roll_min: -60.0_f64.to_radians(),
            roll_max: 60.0_f64.to_radians(),
            pitch_min: -60.0_f64.to_radians(),
            pitch_max: 60.0_f64.to_radians(),
        };
        let lin = propagate_interval(&model, &x, &u0, &u1, 4.0, 20, Some(&wide)).unwrap();
        let c = lin.ctcs.unwrap();
        assert_abs_diff_eq!(c.integral, 0.0);
        assert_abs_diff_eq!(c.wrt_state.norm(), 0.0);
        assert_abs_diff_eq!(c.wrt_dilation, 0.0);
    }

    #[test]
    fn corridor_integral_exact_for_constant_violation() {
        // Frozen dynamics: the state never moves, so the violation rate is
        // constant and the integral is s * max(phi - phi_max, 0)^2 exactly.
        let model = LinearTestModel {
            a: [0.0; STATE_DIM],
            b: [0.0; STATE_DIM],
        };
        let mut x = StateVec::zeros();
        x[state_idx::PHI] = 30.0_f64.to_radians();
        let s = 7.0;
        let lin = propagate_interval(
            &model,
            &x,
            &InputVec::zeros(),
            &InputVec::zeros(),
            s,
            20,
            Some(&corridor()),
        )
        .unwrap();
        let c = lin.ctcs.unwrap();
        let excess = 15.0_f64.to_radians();
        assert_relative_eq!(c.integral, s * excess * excess, max_relative = 1e-12);
        // Sensitivity to the dilation is the (constant) violation rate.
        assert_relative_eq!(c.wrt_dilation, excess * excess, max_relative = 1e-12);
        // Sensitivity to the start roll angle: d/dphi [s*(phi-max)^2].
        assert_relative_eq!(
            c.wrt_state[(0, state_idx::PHI)],
            2.0 * s * excess,
            max_relative = 1e-12
        );
    }

    #[test]
    fn corridor_sensitivities_predict_differences_on_aircraft() {
        let model = aircraft();
        let (mut x, u0, u1) = flight_state();
        // Start beyond the roll limit so the channel is active.
        x[state_idx::PHI] = 20.0_f64.to_radians();
        let s = 8.0;
        let lin = propagate_interval(&model, &x, &u0, &u1, s, 20, Some(&corridor())).unwrap();
        let c = lin.ctcs.unwrap();
        assert!(c.integral > 0.0);

        // The affine model reproduces the integral at the reference.
        let recon = (c.wrt_state * x)[(0, 0)]
            + (c.wrt_input_minus * u0)[(0, 0)]
            + (c.wrt_input_plus * u1)[(0, 0)]
            + c.wrt_dilation * s
            + c.offset;
        assert_relative_eq!(recon, c.integral, max_relative = 1e-9);

        // Directional check on the start state.
        let eps = 1e-6;
        let mut d = StateVec::zeros();
        d[state_idx::PHI] = 1.0;
        let shifted = propagate_interval(&model, &(x + eps * d), &u0, &u1, s, 20, Some(&corridor()))
            .unwrap()
            .ctcs
            .unwrap();
        let fd = (shifted.integral - c.integral) / eps;
        let predicted = (c.wrt_state * d)[(0, 0)];
        assert_relative_eq!(fd, predicted, max_relative = 1e-4);
    }

    // ── Dense resampling ────────────────────────────────────────────────

    #[test]
    fn dense_sample_consistent_with_interval_propagation() {
        let model = aircraft();
        let (x0, u0, u1) = flight_state();
        // Build a 3-interval chained trajectory whose nodes are exactly the
        // propagated endpoints, so every shooting defect is zero.
        let inputs = vec![u0, u1, u0, u1];
        let dilations = vec![8.0, 9.0, 7.0];
        let mut states = vec![x0];
        for k in 0..3 {
            let end = propagate_interval(
                &model,
                &states[k],
                &inputs[k],
                &inputs[k + 1],
                dilations[k],
                20,
                None,
            )
            .unwrap()
            .x_end;
            states.push(end);
        }
        let it = TrajectoryIterate {
            states: states.clone(),
            inputs,
            dilations,
        };

        let dense = dense_sample(&model, &it, 20, 5).unwrap();
        assert_eq!(dense.times.len(), 3 * 5);
        for defect in &dense.node_defects {
            assert!(*defect < 1e-9, "defect {defect}");
        }
        // Endpoint samples coincide with the node states.
        assert_abs_diff_eq!(dense.states[0], states[0], epsilon = 1e-12);
        assert_abs_diff_eq!(dense.states[4], states[1], epsilon = 1e-9);
        // With two samples per interval only the endpoints appear.
        let ends = dense_sample(&model, &it, 20, 2).unwrap();
        assert_eq!(ends.times.len(), 6);
        assert_abs_diff_eq!(ends.states[1], states[1], epsilon = 1e-9);
        assert_abs_diff_eq!(ends.states[5], states[3], epsilon = 1e-9);
    }

    #[test]
    fn dense_sample_reports_defects_of_inconsistent_nodes() {
        let model = aircraft();
        let (x0, u0, u1) = flight_state();
        let mut states = vec![x0; 3];
        // Second and third nodes deliberately not on the integrated path.
        states[1][0] += 500.0;
        states[2][0] += 1500.0;
        let it = TrajectoryIterate {
            states,
            inputs: vec![u0, u1, u0],
            dilations: vec![5.0, 5.0],
        };
        let dense = dense_sample(&model, &it, 20, 3).unwrap();
        assert!(dense.node_defects[0] > 100.0);
    }

    #[test]
    fn serial_and_parallel_linearization_agree_bitwise() {
        let model = aircraft();
        let (x0, u0, u1) = flight_state();
        let inputs = vec![u0, u1, u0, u1, u0];
        let dilations = vec![8.0, 9.0, 7.0, 6.0];
        let mut states = vec![x0];
        for k in 0..4 {
            let mut x = states[k];
            x[0] += 800.0 * k as f64;
            states.push(x);
        }
        let it = TrajectoryIterate {
            states,
            inputs,
            dilations,
        };
        let serial = linearize_intervals(&model, &it, 20, Some(&corridor()), false).unwrap();
        let parallel = linearize_intervals(&model, &it, 20, Some(&corridor()), true).unwrap();
        assert_eq!(serial.len(), parallel.len());
        for (a, b) in serial.iter().zip(parallel.iter()) {
            assert_eq!(a.x_end, b.x_end);
            assert_eq!(a.a, b.a);
            assert_eq!(a.offset, b.offset);
        }
    }

    #[test]
    fn propagation_survives_degenerate_states() {
        // Stalled airspeed and near-vertical pitch both saturate inside the
        // model, so even a pathological start propagates to a finite result
        // that the relaxation machinery can recover from.
        let model = aircraft();
        let (mut x, u0, u1) = flight_state();
        x[state_idx::U] = 0.1;
        x[state_idx::THETA] = std::f64::consts::FRAC_PI_2 - 1e-5;
        let lin = propagate_interval(&model, &x, &u0, &u1, 2.0, 20, None).unwrap();
        assert!(lin.x_end.iter().all(|v| v.is_finite()));
        assert!(lin.a.iter().all(|v| v.is_finite()));
    }
}
