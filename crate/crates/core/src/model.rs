//! Six-degree-of-freedom rigid-body flight dynamics of a twin-engine civil
//! transport, after the RCAM benchmark aircraft.
//!
//! Frames: inertial North-East-Down (NED) and body-fixed forward-right-down.
//! The attitude is parameterized by ZYX Euler angles `(roll, pitch, yaw)`.
//! All angles are radians, positions meters, velocities m/s.
//!
//! State vector (13 components, fixed ordering):
//! `(p_N, p_E, p_D, u, v, w, phi, theta, psi, p, q, r, delta_T)` —
//! inertial position, body-frame airspeed, Euler angles, body angular rate,
//! and the engine throttle state (the engine responds to the commanded
//! throttle through a first-order lag).
//!
//! Input vector (4 components): `(delta_A, delta_E, delta_R, eta_T)` —
//! aileron, elevator, rudder deflections and the commanded throttle, all in
//! radians.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::dual::{Dual, Real};

/// Number of state components.
pub const STATE_DIM: usize = 13;
/// Number of input components.
pub const INPUT_DIM: usize = 4;

/// Dense state vector in the canonical ordering.
pub type StateVec = SVector<f64, STATE_DIM>;
/// Dense input vector in the canonical ordering.
pub type InputVec = SVector<f64, INPUT_DIM>;

/// Indices of the state components within [`StateVec`].
pub mod state_idx {
    pub const P_N: usize = 0;
    pub const P_E: usize = 1;
    pub const P_D: usize = 2;
    pub const U: usize = 3;
    pub const V: usize = 4;
    pub const W: usize = 5;
    pub const PHI: usize = 6;
    pub const THETA: usize = 7;
    pub const PSI: usize = 8;
    pub const P: usize = 9;
    pub const Q: usize = 10;
    pub const R: usize = 11;
    pub const DELTA_T: usize = 12;
}

/// Indices of the input components within [`InputVec`].
pub mod input_idx {
    pub const AILERON: usize = 0;
    pub const ELEVATOR: usize = 1;
    pub const RUDDER: usize = 2;
    pub const THROTTLE_CMD: usize = 3;
}

/// Body-x airspeed below which the aerodynamic angles saturate [m/s].
///
/// The angle of attack and sideslip are computed as if the body-x airspeed
/// were at least this floor, keeping the dynamics defined at every state. Any
/// state an optimizer should accept flies far above the floor, so the clamp
/// only shapes the vector field in regions visited by wildly infeasible
/// intermediate iterates — where a finite, bounded-slope extension lets the
/// penalty machinery pull the iterate back instead of aborting.
pub const AIRSPEED_FLOOR: f64 = 1.0;

/// Margin at which the pitch angle saturates inside the Euler-rate map [rad].
///
/// The map's tan/sec terms blow up at |pitch| = pi/2; evaluating them at a
/// pitch clamped to pi/2 minus this margin keeps the kinematics finite (with
/// slope ~1/margin) for arbitrarily tumbled states, again so that infeasible
/// intermediates produce large recoverable defects rather than failures.
pub const PITCH_SINGULARITY_MARGIN: f64 = 1e-3;

/// Structured view of a state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    /// Inertial NED position [m].
    pub position: Vector3<f64>,
    /// Body-frame airspeed (u, v, w) [m/s].
    pub velocity: Vector3<f64>,
    /// Euler angles (roll, pitch, yaw) [rad].
    pub euler: Vector3<f64>,
    /// Body angular rate (p, q, r) [rad/s].
    pub rate: Vector3<f64>,
    /// Engine throttle state [rad].
    pub throttle: f64,
}

impl State {
    pub fn to_vec(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(6).copy_from(&self.euler);
        x.fixed_rows_mut::<3>(9).copy_from(&self.rate);
        x[state_idx::DELTA_T] = self.throttle;
        x
    }

    pub fn from_vec(x: &StateVec) -> Self {
        Self {
            position: x.fixed_rows::<3>(0).into(),
            velocity: x.fixed_rows::<3>(3).into(),
            euler: x.fixed_rows::<3>(6).into(),
            rate: x.fixed_rows::<3>(9).into(),
            throttle: x[state_idx::DELTA_T],
        }
    }
}

/// Structured view of an input vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Input {
    /// Aileron deflection [rad].
    pub aileron: f64,
    /// Elevator deflection [rad].
    pub elevator: f64,
    /// Rudder deflection [rad].
    pub rudder: f64,
    /// Commanded throttle [rad].
    pub throttle_cmd: f64,
}

impl Input {
    pub fn to_vec(&self) -> InputVec {
        InputVec::new(self.aileron, self.elevator, self.rudder, self.throttle_cmd)
    }

    pub fn from_vec(u: &InputVec) -> Self {
        Self {
            aileron: u[input_idx::AILERON],
            elevator: u[input_idx::ELEVATOR],
            rudder: u[input_idx::RUDDER],
            throttle_cmd: u[input_idx::THROTTLE_CMD],
        }
    }
}

/// Physical parameters of the aircraft.
///
/// Defaults describe the RCAM-class 120 t transport. Dimensionless stability
/// and control derivatives are per radian; positions are expressed in the
/// airframe measurement frame used for moment arms.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftParams {
    /// Total mass [kg].
    pub mass: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
    /// Moments of inertia divided by mass: (J_x, J_y, J_z, J_xz) / m [m^2].
    pub inertia_per_mass: [f64; 4],
    /// Air density [kg/m^3].
    pub air_density: f64,
    /// Wing reference area [m^2].
    pub wing_area: f64,
    /// Tailplane reference area [m^2].
    pub tail_area: f64,
    /// Mean aerodynamic chord [m].
    pub chord: f64,
    /// Longitudinal distance between tailplane and wing-body aerodynamic
    /// centers [m].
    pub tail_arm: f64,
    /// Wing-body lift-curve slope C_L_alpha [1/rad].
    pub lift_slope_wb: f64,
    /// Tailplane lift-curve slope C_L_alpha_t [1/rad].
    pub lift_slope_tail: f64,
    /// Pitch-rate contribution factor C_LqV to the tail angle of attack.
    pub pitch_rate_lift_factor: f64,
    /// Zero-lift angle of attack of the wing-body alpha_0 [rad].
    pub zero_lift_alpha: f64,
    /// Downwash slope d(epsilon)/d(alpha).
    pub downwash_slope: f64,
    /// Parasitic drag coefficient C_D0.
    pub drag_base: f64,
    /// Drag polar offset C_D1.
    pub drag_offset: f64,
    /// Drag polar curvature C_D2.
    pub drag_curvature: f64,
    /// Drag polar angle-of-attack slope C_D_alpha [1/rad].
    pub drag_alpha_slope: f64,
    /// Sideforce due to sideslip C_Y_beta [1/rad].
    pub side_beta: f64,
    /// Sideforce due to rudder C_Y_deltaR [1/rad].
    pub side_rudder: f64,
    /// Rolling moment derivatives: beta, p-rate, r-rate, aileron, rudder.
    pub roll_beta: f64,
    pub roll_p: f64,
    pub roll_r: f64,
    pub roll_aileron: f64,
    pub roll_rudder: f64,
    /// Pitching moment derivatives: constant, alpha, q-rate, elevator.
    pub pitch_base: f64,
    pub pitch_alpha: f64,
    pub pitch_q: f64,
    pub pitch_elevator: f64,
    /// Yawing moment derivatives: beta, alpha*beta, p-rate, r-rate, aileron,
    /// rudder.
    pub yaw_beta: f64,
    pub yaw_alpha_beta: f64,
    pub yaw_p: f64,
    pub yaw_r: f64,
    pub yaw_aileron: f64,
    pub yaw_rudder: f64,
    /// Center of gravity position in the measurement frame [m].
    pub cg_position: Vector3<f64>,
    /// Wing-body aerodynamic center position in the measurement frame [m].
    pub aero_center: Vector3<f64>,
    /// Engine thrust application point in the measurement frame [m].
    pub engine_position: Vector3<f64>,
    /// Engine first-order lag time constant [s].
    pub engine_lag: f64,
}

impl Default for AircraftParams {
    fn default() -> Self {
        let chord = 6.6;
        Self {
            mass: 120_000.0,
            gravity: 9.81,
            inertia_per_mass: [40.07, 64.0, 99.92, 2.0923],
            air_density: 1.225,
            wing_area: 260.0,
            tail_area: 64.0,
            chord,
            tail_arm: 24.8,
            lift_slope_wb: 5.5,
            lift_slope_tail: 3.1,
            pitch_rate_lift_factor: 1.3,
            zero_lift_alpha: (-11.5f64).to_radians(),
            downwash_slope: 0.25,
            drag_base: 0.13,
            drag_offset: 0.654,
            drag_curvature: 0.07,
            drag_alpha_slope: 5.5,
            side_beta: -1.6,
            side_rudder: 0.24,
            roll_beta: -1.4,
            roll_p: -11.0,
            roll_r: 5.0,
            roll_aileron: -0.6,
            roll_rudder: 0.22,
            pitch_base: -0.59,
            pitch_alpha: -3.1,
            pitch_q: -4.03,
            pitch_elevator: -3.1,
            yaw_beta: 1.0,
            yaw_alpha_beta: -3.82,
            yaw_p: 1.7,
            yaw_r: -11.5,
            yaw_aileron: 0.0,
            yaw_rudder: -0.63,
            cg_position: Vector3::new(0.23 * chord, 0.0, 0.10 * chord),
            aero_center: Vector3::new(0.12 * chord, 0.0, 0.0),
            engine_position: Vector3::new(0.0, 0.0, -1.9),
            engine_lag: 1.5,
        }
    }
}

impl AircraftParams {
    /// Moment of inertia matrix [kg m^2], symmetric about the body xz-plane.
    pub fn inertia(&self) -> Matrix3<f64> {
        let [jx, jy, jz, jxz] = self.inertia_per_mass;
        let m = self.mass;
        Matrix3::new(
            m * jx,
            0.0,
            -m * jxz,
            0.0,
            m * jy,
            0.0,
            -m * jxz,
            0.0,
            m * jz,
        )
    }

    /// Inverse of the moment of inertia matrix.
    pub fn inertia_inverse(&self) -> Matrix3<f64> {
        self.inertia()
            .try_inverse()
            .expect("inertia matrix is invertible for physical parameters")
    }
}

// ── Generic 3-vector helpers ────────────────────────────────────────────────
//
// The dynamics are written against the `Real` scalar so that a single code
// path serves both plain evaluation (f64) and exact differentiation (dual
// numbers). Small fixed-size arrays keep that generic code free of linear
// algebra trait bounds.

type V3<S> = [S; 3];
type M3<S> = [[S; 3]; 3];

#[inline]
fn cross<S: Real>(a: &V3<S>, b: &V3<S>) -> V3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn matvec<S: Real>(m: &M3<S>, v: &V3<S>) -> V3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Multiply by the transpose of `m`.
#[inline]
fn matvec_t<S: Real>(m: &M3<S>, v: &V3<S>) -> V3<S> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
fn matmul<S: Real>(a: &M3<S>, b: &M3<S>) -> M3<S> {
    let mut out = [[S::lift(0.0); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
fn lift3<S: Real>(v: &Vector3<f64>) -> V3<S> {
    [S::lift(v[0]), S::lift(v[1]), S::lift(v[2])]
}

// ── Generic kinematics and aerodynamics ─────────────────────────────────────

/// Inertial-to-body rotation as the ZYX product R_phi * R_theta * R_psi.
fn rotation_i2b_g<S: Real>(phi: S, theta: S, psi: S) -> M3<S> {
    let (zero, one) = (S::lift(0.0), S::lift(1.0));
    let (sph, cph) = (phi.sin(), phi.cos());
    let (sth, cth) = (theta.sin(), theta.cos());
    let (sps, cps) = (psi.sin(), psi.cos());
    let r_psi = [[cps, sps, zero], [-sps, cps, zero], [zero, zero, one]];
    let r_theta = [[cth, zero, -sth], [zero, one, zero], [sth, zero, cth]];
    let r_phi = [[one, zero, zero], [zero, cph, sph], [zero, -sph, cph]];
    matmul(&r_phi, &matmul(&r_theta, &r_psi))
}

/// Euler-angle kinematics matrix mapping body rates to Euler-angle rates.
/// Pitch saturates at [`PITCH_SINGULARITY_MARGIN`] short of ±pi/2.
fn euler_rate_map_g<S: Real>(phi: S, theta: S) -> M3<S> {
    let limit = std::f64::consts::FRAC_PI_2 - PITCH_SINGULARITY_MARGIN;
    let theta = if theta.re() > limit {
        S::lift(limit)
    } else if theta.re() < -limit {
        S::lift(-limit)
    } else {
        theta
    };
    let (zero, one) = (S::lift(0.0), S::lift(1.0));
    let (sph, cph) = (phi.sin(), phi.cos());
    let tth = theta.tan();
    let sec = theta.cos().recip();
    [
        [one, sph * tth, cph * tth],
        [zero, cph, -sph],
        [zero, sph * sec, cph * sec],
    ]
}

/// Angle of attack, sideslip angle, and airspeed magnitude from the
/// body-frame airspeed components. The body-x component saturates at
/// [`AIRSPEED_FLOOR`] from below.
fn aero_angles_g<S: Real>(u: S, v: S, w: S) -> (S, S, S) {
    let u = if u.re() < AIRSPEED_FLOOR { S::lift(AIRSPEED_FLOOR) } else { u };
    let alpha = (w / u).atan();
    let vmag = (u * u + v * v + w * w).sqrt();
    let beta = (v / vmag).asin();
    (alpha, beta, vmag)
}

/// Dimensionless force and moment coefficients.
struct Coefficients<S> {
    lift_wb: S,
    lift_tail: S,
    lift: S,
    drag: S,
    side: S,
    roll: S,
    pitch: S,
    yaw: S,
}

fn aero_coefficients_g<S: Real>(
    alpha: S,
    beta: S,
    vmag: S,
    rate: &V3<S>,
    aileron: S,
    elevator: S,
    rudder: S,
    prm: &AircraftParams,
) -> Coefficients<S> {
    let [p, q, r] = *rate;
    let alpha_from_zl = alpha - S::lift(prm.zero_lift_alpha);

    // Lift: wing-body plus tailplane, with downwash and pitch-rate effects
    // on the tail angle of attack.
    let downwash = alpha_from_zl.scale(prm.downwash_slope);
    let alpha_tail = alpha - downwash
        + elevator
        + (q * S::lift(prm.tail_arm) / vmag).scale(prm.pitch_rate_lift_factor);
    let lift_wb = alpha_from_zl.scale(prm.lift_slope_wb);
    let lift_tail = alpha_tail.scale(prm.lift_slope_tail * prm.tail_area / prm.wing_area);
    let lift = lift_wb + lift_tail;

    // Quadratic drag polar in the angle of attack.
    let polar = alpha.scale(prm.drag_alpha_slope) + S::lift(prm.drag_offset);
    let drag = S::lift(prm.drag_base) + polar.sq().scale(prm.drag_curvature);

    let side = beta.scale(prm.side_beta) + rudder.scale(prm.side_rudder);

    // Rate terms enter through the chord-normalized non-dimensional rates.
    let chord_over_v = S::lift(prm.chord) / vmag;
    let roll = beta.scale(prm.roll_beta)
        + (p * chord_over_v).scale(prm.roll_p)
        + (r * chord_over_v).scale(prm.roll_r)
        + aileron.scale(prm.roll_aileron)
        + rudder.scale(prm.roll_rudder);

    // Pitch derivatives are scaled by tail volume ratios.
    let tail_volume = prm.tail_area * prm.tail_arm / (prm.wing_area * prm.chord);
    let tail_volume_sq = prm.tail_area * prm.tail_arm * prm.tail_arm / (prm.wing_area * prm.chord);
    let pitch = S::lift(prm.pitch_base)
        + (alpha - downwash).scale(prm.pitch_alpha * tail_volume)
        + (q / vmag).scale(prm.pitch_q * tail_volume_sq)
        + elevator.scale(prm.pitch_elevator * tail_volume);

    let yaw = beta.scale(prm.yaw_beta)
        + (alpha * beta).scale(prm.yaw_alpha_beta)
        + (p * chord_over_v).scale(prm.yaw_p)
        + (r * chord_over_v).scale(prm.yaw_r)
        + aileron.scale(prm.yaw_aileron)
        + rudder.scale(prm.yaw_rudder);

    Coefficients {
        lift_wb,
        lift_tail,
        lift,
        drag,
        side,
        roll,
        pitch,
        yaw,
    }
}

/// Forces and moments in the body frame, split by source.
struct ForcesMoments<S> {
    aero_force: V3<S>,
    aero_moment: V3<S>,
    gravity_force: V3<S>,
    engine_force: V3<S>,
    engine_moment: V3<S>,
}

fn forces_moments_g<S: Real>(
    x: &[S; STATE_DIM],
    u_in: &[S; INPUT_DIM],
    prm: &AircraftParams,
) -> ForcesMoments<S> {
    let (u, v, w) = (x[3], x[4], x[5]);
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let rate = [x[9], x[10], x[11]];
    let throttle = x[12];
    let (aileron, elevator, rudder) = (u_in[0], u_in[1], u_in[2]);

    let (alpha, beta, vmag) = aero_angles_g(u, v, w);
    let coeff = aero_coefficients_g(alpha, beta, vmag, &rate, aileron, elevator, rudder, prm);

    let qbar_s = (vmag * vmag).scale(0.5 * prm.air_density * prm.wing_area);
    let drag = qbar_s * coeff.drag;
    let lift = qbar_s * coeff.lift;
    let side = qbar_s * coeff.side;

    // Resolve (-drag, side, -lift) from the wind axes into the body frame.
    let (sa, ca) = (alpha.sin(), alpha.cos());
    let (sb, cb) = (beta.sin(), beta.cos());
    let aero_force = [
        lift * sa - drag * ca * cb - side * ca * sb,
        -(drag * sb) + side * cb,
        -(lift * ca) - drag * sa * cb - side * sa * sb,
    ];

    // Moments about the wing-body aerodynamic center, transported to the
    // center of gravity.
    let qbar_s_c = qbar_s.scale(prm.chord);
    let aero_ac = [qbar_s_c * coeff.roll, qbar_s_c * coeff.pitch, qbar_s_c * coeff.yaw];
    let cg_from_ac: V3<S> = lift3(&(prm.cg_position - prm.aero_center));
    let transport = cross(&aero_force, &cg_from_ac);
    let aero_moment = [
        aero_ac[0] + transport[0],
        aero_ac[1] + transport[1],
        aero_ac[2] + transport[2],
    ];

    let r_i2b = rotation_i2b_g(phi, theta, psi);
    let gravity_force = matvec(&r_i2b, &[S::lift(0.0), S::lift(0.0), S::lift(prm.mass * prm.gravity)]);

    // Both engines produce thrust along body-x, proportional to throttle.
    let engine_force = [
        throttle.scale(2.0 * prm.mass * prm.gravity),
        S::lift(0.0),
        S::lift(0.0),
    ];
    let cg_from_engine: V3<S> = lift3(&(prm.cg_position - prm.engine_position));
    let engine_moment = cross(&cg_from_engine, &engine_force);

    ForcesMoments {
        aero_force,
        aero_moment,
        gravity_force,
        engine_force,
        engine_moment,
    }
}

/// Full dynamics right-hand side, generic over the scalar.
fn rhs_g<S: Real>(
    x: &[S; STATE_DIM],
    u_in: &[S; INPUT_DIM],
    wind: &Vector3<f64>,
    prm: &AircraftParams,
) -> [S; STATE_DIM] {
    let fm = forces_moments_g(x, u_in, prm);
    let vel = [x[3], x[4], x[5]];
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let rate = [x[9], x[10], x[11]];

    // Translational dynamics in the body frame.
    let total_force = [
        fm.aero_force[0] + fm.gravity_force[0] + fm.engine_force[0],
        fm.aero_force[1] + fm.gravity_force[1] + fm.engine_force[1],
        fm.aero_force[2] + fm.gravity_force[2] + fm.engine_force[2],
    ];
    let coriolis = cross(&rate, &vel);
    let inv_m = 1.0 / prm.mass;
    let v_dot = [
        total_force[0].scale(inv_m) - coriolis[0],
        total_force[1].scale(inv_m) - coriolis[1],
        total_force[2].scale(inv_m) - coriolis[2],
    ];

    // Rotational dynamics: J * Omega_dot = M - Omega x J Omega.
    let j = prm.inertia();
    let j_inv = prm.inertia_inverse();
    let j_rows: M3<S> = [
        [S::lift(j[(0, 0)]), S::lift(j[(0, 1)]), S::lift(j[(0, 2)])],
        [S::lift(j[(1, 0)]), S::lift(j[(1, 1)]), S::lift(j[(1, 2)])],
        [S::lift(j[(2, 0)]), S::lift(j[(2, 1)]), S::lift(j[(2, 2)])],
    ];
    let j_omega = matvec(&j_rows, &rate);
    let gyro = cross(&rate, &j_omega);
    let torque = [
        fm.aero_moment[0] + fm.engine_moment[0] - gyro[0],
        fm.aero_moment[1] + fm.engine_moment[1] - gyro[1],
        fm.aero_moment[2] + fm.engine_moment[2] - gyro[2],
    ];
    let j_inv_rows: M3<S> = [
        [S::lift(j_inv[(0, 0)]), S::lift(j_inv[(0, 1)]), S::lift(j_inv[(0, 2)])],
        [S::lift(j_inv[(1, 0)]), S::lift(j_inv[(1, 1)]), S::lift(j_inv[(1, 2)])],
        [S::lift(j_inv[(2, 0)]), S::lift(j_inv[(2, 1)]), S::lift(j_inv[(2, 2)])],
    ];
    let omega_dot = matvec(&j_inv_rows, &torque);

    // Attitude kinematics.
    let euler_map = euler_rate_map_g(phi, theta);
    let euler_dot = matvec(&euler_map, &rate);

    // Position kinematics: body velocity into the inertial frame, plus wind.
    let r_i2b = rotation_i2b_g(phi, theta, psi);
    let v_inertial = matvec_t(&r_i2b, &vel);
    let p_dot = [
        v_inertial[0] + S::lift(wind[0]),
        v_inertial[1] + S::lift(wind[1]),
        v_inertial[2] + S::lift(wind[2]),
    ];

    // First-order engine lag toward the commanded throttle.
    let throttle_dot = (u_in[3] - x[12]).scale(1.0 / prm.engine_lag);

    [
        p_dot[0],
        p_dot[1],
        p_dot[2],
        v_dot[0],
        v_dot[1],
        v_dot[2],
        euler_dot[0],
        euler_dot[1],
        euler_dot[2],
        omega_dot[0],
        omega_dot[1],
        omega_dot[2],
        throttle_dot,
    ]
}

// ── Public f64 interface ────────────────────────────────────────────────────

/// Rotation matrix from the inertial NED frame to the body frame for Euler
/// angles `(roll, pitch, yaw)`.
pub fn rotation_i2b(euler: &Vector3<f64>) -> Matrix3<f64> {
    let m = rotation_i2b_g(euler[0], euler[1], euler[2]);
    Matrix3::from_fn(|i, j| m[i][j])
}

/// Rotation matrix from the body frame to the inertial NED frame.
pub fn rotation_b2i(euler: &Vector3<f64>) -> Matrix3<f64> {
    rotation_i2b(euler).transpose()
}

/// Matrix mapping body angular rate to Euler-angle rates.
///
/// Pitch saturates at [`PITCH_SINGULARITY_MARGIN`] short of ±pi/2, where the
/// map would lose rank.
pub fn euler_rate_map(euler: &Vector3<f64>) -> Matrix3<f64> {
    let m = euler_rate_map_g(euler[0], euler[1]);
    Matrix3::from_fn(|i, j| m[i][j])
}

/// Aerodynamic angles and airspeed magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroAngles {
    /// Angle of attack [rad].
    pub alpha: f64,
    /// Sideslip angle [rad].
    pub beta: f64,
    /// Airspeed magnitude [m/s].
    pub airspeed: f64,
}

/// Angle of attack `atan(w/u)`, sideslip `asin(v/V)`, and airspeed `V`.
///
/// The body-x airspeed saturates at [`AIRSPEED_FLOOR`] from below.
pub fn aero_angles(velocity: &Vector3<f64>) -> AeroAngles {
    let (alpha, beta, airspeed) = aero_angles_g(velocity[0], velocity[1], velocity[2]);
    AeroAngles {
        alpha,
        beta,
        airspeed,
    }
}

/// Dimensionless aerodynamic coefficients at one flight condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroCoefficients {
    /// Wing-body lift contribution.
    pub lift_wb: f64,
    /// Tailplane lift contribution.
    pub lift_tail: f64,
    /// Total lift coefficient.
    pub lift: f64,
    /// Drag coefficient.
    pub drag: f64,
    /// Sideforce coefficient.
    pub side: f64,
    /// Rolling moment coefficient.
    pub roll: f64,
    /// Pitching moment coefficient.
    pub pitch: f64,
    /// Yawing moment coefficient.
    pub yaw: f64,
}

/// Aerodynamic coefficients from angles, rates and surface deflections.
pub fn aero_coefficients(
    angles: &AeroAngles,
    rate: &Vector3<f64>,
    input: &Input,
    prm: &AircraftParams,
) -> AeroCoefficients {
    let c = aero_coefficients_g(
        angles.alpha,
        angles.beta,
        angles.airspeed,
        &[rate[0], rate[1], rate[2]],
        input.aileron,
        input.elevator,
        input.rudder,
        prm,
    );
    AeroCoefficients {
        lift_wb: c.lift_wb,
        lift_tail: c.lift_tail,
        lift: c.lift,
        drag: c.drag,
        side: c.side,
        roll: c.roll,
        pitch: c.pitch,
        yaw: c.yaw,
    }
}

/// Body-frame forces and moments, split by source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyForces {
    /// Aerodynamic force [N].
    pub aero_force: Vector3<f64>,
    /// Aerodynamic moment about the center of gravity [N m].
    pub aero_moment: Vector3<f64>,
    /// Gravity resolved into the body frame [N].
    pub gravity_force: Vector3<f64>,
    /// Engine thrust force [N].
    pub engine_force: Vector3<f64>,
    /// Engine thrust moment about the center of gravity [N m].
    pub engine_moment: Vector3<f64>,
}

impl BodyForces {
    /// Sum of all force contributions [N].
    pub fn total_force(&self) -> Vector3<f64> {
        self.aero_force + self.gravity_force + self.engine_force
    }

    /// Sum of all moment contributions [N m].
    pub fn total_moment(&self) -> Vector3<f64> {
        self.aero_moment + self.engine_moment
    }
}

/// All body-frame forces and moments at one state and input.
pub fn forces_and_moments(state: &State, input: &Input, prm: &AircraftParams) -> BodyForces {
    let x = state.to_vec();
    let u = input.to_vec();
    let fm = forces_moments_g(
        x.as_slice().try_into().expect("state has 13 components"),
        u.as_slice().try_into().expect("input has 4 components"),
        prm,
    );
    BodyForces {
        aero_force: Vector3::from_row_slice(&fm.aero_force),
        aero_moment: Vector3::from_row_slice(&fm.aero_moment),
        gravity_force: Vector3::from_row_slice(&fm.gravity_force),
        engine_force: Vector3::from_row_slice(&fm.engine_force),
        engine_moment: Vector3::from_row_slice(&fm.engine_moment),
    }
}

/// Time derivative of the state under constant inertial wind.
pub fn dynamics_rhs(
    x: &StateVec,
    u: &InputVec,
    wind: &Vector3<f64>,
    prm: &AircraftParams,
) -> StateVec {
    let xa: [f64; STATE_DIM] = x.as_slice().try_into().expect("state has 13 components");
    let ua: [f64; INPUT_DIM] = u.as_slice().try_into().expect("input has 4 components");
    let dx = rhs_g(&xa, &ua, wind, prm);
    StateVec::from_row_slice(&dx)
}

/// Dynamics value together with its exact Jacobians with respect to the
/// state and the input, computed by forward-mode differentiation of the same
/// code path as [`dynamics_rhs`].
#[allow(clippy::type_complexity)]
pub fn dynamics_jacobians(
    x: &StateVec,
    u: &InputVec,
    wind: &Vector3<f64>,
    prm: &AircraftParams,
) -> (
    StateVec,
    SMatrix<f64, STATE_DIM, STATE_DIM>,
    SMatrix<f64, STATE_DIM, INPUT_DIM>,
) {
    const NDIR: usize = STATE_DIM + INPUT_DIM;
    let mut xd = [Dual::<NDIR>::constant(0.0); STATE_DIM];
    for (i, xi) in xd.iter_mut().enumerate() {
        *xi = Dual::variable(x[i], i);
    }
    let mut ud = [Dual::<NDIR>::constant(0.0); INPUT_DIM];
    for (j, uj) in ud.iter_mut().enumerate() {
        *uj = Dual::variable(u[j], STATE_DIM + j);
    }
    let out = rhs_g(&xd, &ud, wind, prm);

    let mut value = StateVec::zeros();
    let mut jac_x = SMatrix::<f64, STATE_DIM, STATE_DIM>::zeros();
    let mut jac_u = SMatrix::<f64, STATE_DIM, INPUT_DIM>::zeros();
    for (r, o) in out.iter().enumerate() {
        value[r] = o.v;
        for c in 0..STATE_DIM {
            jac_x[(r, c)] = o.d[c];
        }
        for c in 0..INPUT_DIM {
            jac_u[(r, c)] = o.d[STATE_DIM + c];
        }
    }
    (value, jac_x, jac_u)
}
