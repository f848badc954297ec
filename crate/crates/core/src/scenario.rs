//! Problem definition, JSON documents, builtin scenarios, trajectory audit,
//! and run artifacts.
//!
//! The internal [`ProblemSpec`] works in SI units and radians. The on-disk
//! document types mirror it with angles in degrees (fields suffixed `_deg`)
//! and positions in meters; every section may be omitted or given partially,
//! with missing fields falling back to the built-in defaults.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{
    static_rows, stc_residual, AlignmentMode, AlignmentSpec, ConstraintError,
    InitialCondition, Obstacle, OperationalLimits, RowLabel,
};
use crate::model::{state_idx, AircraftParams, INPUT_DIM, STATE_DIM};
use crate::subproblem::{
    discrete_costs, scaled_violation, DiscreteCosts, Scaling, SubproblemError, Weights,
};
use crate::transcription::{
    dense_sample, propagate_interval, switch_time, AircraftDynamics, DenseSamples, MeshSpec,
    PropagateError, TrajectoryIterate,
};
use crate::xptr::{merit_monotonicity_diagnostic, SolveReport, SolveSettings};

// ─────────────────────────────────────────────────────────────────────────────
// Errors
// ─────────────────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario '{0}' (run the scenario list command for the known names)")]
    UnknownScenario(String),
    #[error("invalid constraint data: {0}")]
    Constraint(#[from] ConstraintError),
    #[error("invalid weights: {0}")]
    Subproblem(#[from] SubproblemError),
    #[error("invalid solver settings: {0}")]
    Settings(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("invalid aircraft parameters: {0}")]
    Aircraft(String),
    #[error("the initial position must be above the ground (negative Down coordinate)")]
    StartsUnderground,
    #[error("{what} must be finite")]
    NonFinite { what: &'static str },
    #[error("trajectory propagation failed: {0}")]
    Propagation(#[from] PropagateError),
    #[error("could not access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("could not parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed table {path}: {detail}")]
    Table { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// The resolved problem
// ─────────────────────────────────────────────────────────────────────────────

/// Everything a solve needs: airframe, limits, alignment geometry, obstacles,
/// wind, the initial condition, objective weights, mesh, and solver settings.
/// All in SI units and radians.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub aircraft: AircraftParams,
    pub limits: OperationalLimits,
    pub alignment: AlignmentSpec,
    pub obstacles: Vec<Obstacle>,
    /// Constant wind, North-East-Down [m/s].
    pub wind: Vector3<f64>,
    pub initial: InitialCondition,
    pub weights: Weights,
    pub mesh: MeshSpec,
    pub settings: SolveSettings,
    /// Enforce the roll/pitch corridor in continuous time between nodes.
    pub continuous_corridor: bool,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        SpecDocument::default().to_spec()
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let a = &self.aircraft;
        for (name, v) in [
            ("mass", a.mass),
            ("gravity", a.gravity),
            ("air density", a.air_density),
            ("wing area", a.wing_area),
            ("tail area", a.tail_area),
            ("chord", a.chord),
            ("engine lag", a.engine_lag),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::Aircraft(format!("{name} must be positive")));
            }
        }
        self.limits.validate()?;
        self.alignment.validate()?;
        self.weights.validate()?;
        self.settings
            .validate()
            .map_err(ScenarioError::Settings)?;

        let mesh = &self.mesh;
        if mesh.intervals < 2 {
            return Err(ScenarioError::Mesh("need at least two intervals".into()));
        }
        if mesh.switch_node == 0 || mesh.switch_node >= mesh.intervals {
            return Err(ScenarioError::Mesh(format!(
                "switch node {} must lie strictly inside 0..{}",
                mesh.switch_node, mesh.intervals
            )));
        }
        if mesh.substeps == 0 {
            return Err(ScenarioError::Mesh("need at least one substep".into()));
        }
        if !(mesh.dilation_min > 0.0 && mesh.dilation_min < mesh.dilation_max) {
            return Err(ScenarioError::Mesh(
                "interval duration bounds must satisfy 0 < min < max".into(),
            ));
        }

        let finite3 = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        if !finite3(&self.wind) {
            return Err(ScenarioError::NonFinite { what: "wind" });
        }
        if !(finite3(&self.initial.position)
            && finite3(&self.initial.velocity)
            && finite3(&self.initial.attitude)
            && finite3(&self.initial.rates))
        {
            return Err(ScenarioError::NonFinite {
                what: "initial condition",
            });
        }
        if !(-self.initial.position.z > 0.0) {
            return Err(ScenarioError::StartsUnderground);
        }
        for obstacle in &self.obstacles {
            if !(obstacle.shape.iter().all(|x| x.is_finite()) && finite3(&obstacle.center)) {
                return Err(ScenarioError::NonFinite { what: "obstacle" });
            }
        }
        Ok(())
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// On-disk documents (degrees and meters)
// ─────────────────────────────────────────────────────────────────────────────

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

fn a3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn deg3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x.to_degrees(), v.y.to_degrees(), v.z.to_degrees()]
}

fn rad3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0].to_radians(), a[1].to_radians(), a[2].to_radians())
}

/// Airframe section. Mirrors the physical parameter set; the only
/// angle-valued entry carries a `_deg` suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftDoc {
    pub mass: f64,
    pub gravity: f64,
    pub inertia_per_mass: [f64; 4],
    pub air_density: f64,
    pub wing_area: f64,
    pub tail_area: f64,
    pub chord: f64,
    pub tail_arm: f64,
    pub lift_slope_wb: f64,
    pub lift_slope_tail: f64,
    pub pitch_rate_lift_factor: f64,
    pub zero_lift_alpha_deg: f64,
    pub downwash_slope: f64,
    pub drag_base: f64,
    pub drag_offset: f64,
    pub drag_curvature: f64,
    pub drag_alpha_slope: f64,
    pub side_beta: f64,
    pub side_rudder: f64,
    pub roll_beta: f64,
    pub roll_p: f64,
    pub roll_r: f64,
    pub roll_aileron: f64,
    pub roll_rudder: f64,
    pub pitch_base: f64,
    pub pitch_alpha: f64,
    pub pitch_q: f64,
    pub pitch_elevator: f64,
    pub yaw_beta: f64,
    pub yaw_alpha_beta: f64,
    pub yaw_p: f64,
    pub yaw_r: f64,
    pub yaw_aileron: f64,
    pub yaw_rudder: f64,
    pub cg_position_m: [f64; 3],
    pub aero_center_m: [f64; 3],
    pub engine_position_m: [f64; 3],
    pub engine_lag: f64,
}

impl From<&AircraftParams> for AircraftDoc {
    fn from(p: &AircraftParams) -> Self {
        Self {
            mass: p.mass,
            gravity: p.gravity,
            inertia_per_mass: p.inertia_per_mass,
            air_density: p.air_density,
            wing_area: p.wing_area,
            tail_area: p.tail_area,
            chord: p.chord,
            tail_arm: p.tail_arm,
            lift_slope_wb: p.lift_slope_wb,
            lift_slope_tail: p.lift_slope_tail,
            pitch_rate_lift_factor: p.pitch_rate_lift_factor,
            zero_lift_alpha_deg: p.zero_lift_alpha.to_degrees(),
            downwash_slope: p.downwash_slope,
            drag_base: p.drag_base,
            drag_offset: p.drag_offset,
            drag_curvature: p.drag_curvature,
            drag_alpha_slope: p.drag_alpha_slope,
            side_beta: p.side_beta,
            side_rudder: p.side_rudder,
            roll_beta: p.roll_beta,
            roll_p: p.roll_p,
            roll_r: p.roll_r,
            roll_aileron: p.roll_aileron,
            roll_rudder: p.roll_rudder,
            pitch_base: p.pitch_base,
            pitch_alpha: p.pitch_alpha,
            pitch_q: p.pitch_q,
            pitch_elevator: p.pitch_elevator,
            yaw_beta: p.yaw_beta,
            yaw_alpha_beta: p.yaw_alpha_beta,
            yaw_p: p.yaw_p,
            yaw_r: p.yaw_r,
            yaw_aileron: p.yaw_aileron,
            yaw_rudder: p.yaw_rudder,
            cg_position_m: a3(&p.cg_position),
            aero_center_m: a3(&p.aero_center),
            engine_position_m: a3(&p.engine_position),
            engine_lag: p.engine_lag,
        }
    }
}

impl AircraftDoc {
    fn to_params(&self) -> AircraftParams {
        AircraftParams {
            mass: self.mass,
            gravity: self.gravity,
            inertia_per_mass: self.inertia_per_mass,
            air_density: self.air_density,
            wing_area: self.wing_area,
            tail_area: self.tail_area,
            chord: self.chord,
            tail_arm: self.tail_arm,
            lift_slope_wb: self.lift_slope_wb,
            lift_slope_tail: self.lift_slope_tail,
            pitch_rate_lift_factor: self.pitch_rate_lift_factor,
            zero_lift_alpha: self.zero_lift_alpha_deg.to_radians(),
            downwash_slope: self.downwash_slope,
            drag_base: self.drag_base,
            drag_offset: self.drag_offset,
            drag_curvature: self.drag_curvature,
            drag_alpha_slope: self.drag_alpha_slope,
            side_beta: self.side_beta,
            side_rudder: self.side_rudder,
            roll_beta: self.roll_beta,
            roll_p: self.roll_p,
            roll_r: self.roll_r,
            roll_aileron: self.roll_aileron,
            roll_rudder: self.roll_rudder,
            pitch_base: self.pitch_base,
            pitch_alpha: self.pitch_alpha,
            pitch_q: self.pitch_q,
            pitch_elevator: self.pitch_elevator,
            yaw_beta: self.yaw_beta,
            yaw_alpha_beta: self.yaw_alpha_beta,
            yaw_p: self.yaw_p,
            yaw_r: self.yaw_r,
            yaw_aileron: self.yaw_aileron,
            yaw_rudder: self.yaw_rudder,
            cg_position: v3(self.cg_position_m),
            aero_center: v3(self.aero_center_m),
            engine_position: v3(self.engine_position_m),
            engine_lag: self.engine_lag,
        }
    }
}

impl Default for AircraftDoc {
    fn default() -> Self {
        Self::from(&AircraftParams::default())
    }
}

/// Operational limits section. Speeds in m/s, angles in degrees, angular and
/// throttle rates in degrees per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsDoc {
    pub velocity_min: [f64; 3],
    pub velocity_max: [f64; 3],
    pub roll_min_deg: f64,
    pub roll_max_deg: f64,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
    pub rate_min_deg: [f64; 3],
    pub rate_max_deg: [f64; 3],
    pub alpha_min_deg: f64,
    pub alpha_max_deg: f64,
    pub input_min_deg: [f64; 4],
    pub input_max_deg: [f64; 4],
    pub throttle_min_deg: f64,
    pub throttle_max_deg: f64,
    pub throttle_rate_min_deg: f64,
    pub throttle_rate_max_deg: f64,
    pub final_speed_bound: [f64; 3],
}

impl From<&OperationalLimits> for LimitsDoc {
    fn from(l: &OperationalLimits) -> Self {
        let deg4 = |v: &Vector4<f64>| {
            [
                v[0].to_degrees(),
                v[1].to_degrees(),
                v[2].to_degrees(),
                v[3].to_degrees(),
            ]
        };
        Self {
            velocity_min: a3(&l.velocity_min),
            velocity_max: a3(&l.velocity_max),
            roll_min_deg: l.roll_min.to_degrees(),
            roll_max_deg: l.roll_max.to_degrees(),
            pitch_min_deg: l.pitch_min.to_degrees(),
            pitch_max_deg: l.pitch_max.to_degrees(),
            rate_min_deg: deg3(&l.rate_min),
            rate_max_deg: deg3(&l.rate_max),
            alpha_min_deg: l.alpha_min.to_degrees(),
            alpha_max_deg: l.alpha_max.to_degrees(),
            input_min_deg: deg4(&l.input_min),
            input_max_deg: deg4(&l.input_max),
            throttle_min_deg: l.throttle_min.to_degrees(),
            throttle_max_deg: l.throttle_max.to_degrees(),
            throttle_rate_min_deg: l.throttle_rate_min.to_degrees(),
            throttle_rate_max_deg: l.throttle_rate_max.to_degrees(),
            final_speed_bound: a3(&l.final_speed_bound),
        }
    }
}

impl LimitsDoc {
    fn to_limits(&self) -> OperationalLimits {
        let rad4 = |a: [f64; 4]| {
            Vector4::new(
                a[0].to_radians(),
                a[1].to_radians(),
                a[2].to_radians(),
                a[3].to_radians(),
            )
        };
        OperationalLimits {
            velocity_min: v3(self.velocity_min),
            velocity_max: v3(self.velocity_max),
            roll_min: self.roll_min_deg.to_radians(),
            roll_max: self.roll_max_deg.to_radians(),
            pitch_min: self.pitch_min_deg.to_radians(),
            pitch_max: self.pitch_max_deg.to_radians(),
            rate_min: rad3(self.rate_min_deg),
            rate_max: rad3(self.rate_max_deg),
            alpha_min: self.alpha_min_deg.to_radians(),
            alpha_max: self.alpha_max_deg.to_radians(),
            input_min: rad4(self.input_min_deg),
            input_max: rad4(self.input_max_deg),
            throttle_min: self.throttle_min_deg.to_radians(),
            throttle_max: self.throttle_max_deg.to_radians(),
            throttle_rate_min: self.throttle_rate_min_deg.to_radians(),
            throttle_rate_max: self.throttle_rate_max_deg.to_radians(),
            final_speed_bound: v3(self.final_speed_bound),
        }
    }
}

impl Default for LimitsDoc {
    fn default() -> Self {
        Self::from(&OperationalLimits::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignmentModeDoc {
    #[serde(rename = "multiphase")]
    MultiPhase,
    #[serde(rename = "stc")]
    Stc,
    #[serde(rename = "none")]
    None,
}

impl From<AlignmentMode> for AlignmentModeDoc {
    fn from(m: AlignmentMode) -> Self {
        match m {
            AlignmentMode::MultiPhase => Self::MultiPhase,
            AlignmentMode::Stc => Self::Stc,
            AlignmentMode::None => Self::None,
        }
    }
}

impl From<AlignmentModeDoc> for AlignmentMode {
    fn from(m: AlignmentModeDoc) -> Self {
        match m {
            AlignmentModeDoc::MultiPhase => Self::MultiPhase,
            AlignmentModeDoc::Stc => Self::Stc,
            AlignmentModeDoc::None => Self::None,
        }
    }
}

/// Final-approach alignment section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentDoc {
    pub trigger_altitude_m: f64,
    pub lateral_min_deg: f64,
    pub lateral_max_deg: f64,
    pub vertical_min_deg: f64,
    pub vertical_max_deg: f64,
    pub mode: AlignmentModeDoc,
}

impl From<&AlignmentSpec> for AlignmentDoc {
    fn from(a: &AlignmentSpec) -> Self {
        Self {
            trigger_altitude_m: a.trigger_altitude,
            lateral_min_deg: a.lateral_min.to_degrees(),
            lateral_max_deg: a.lateral_max.to_degrees(),
            vertical_min_deg: a.vertical_min.to_degrees(),
            vertical_max_deg: a.vertical_max.to_degrees(),
            mode: a.mode.into(),
        }
    }
}

impl AlignmentDoc {
    fn to_alignment(&self) -> AlignmentSpec {
        AlignmentSpec {
            trigger_altitude: self.trigger_altitude_m,
            lateral_min: self.lateral_min_deg.to_radians(),
            lateral_max: self.lateral_max_deg.to_radians(),
            vertical_min: self.vertical_min_deg.to_radians(),
            vertical_max: self.vertical_max_deg.to_radians(),
            mode: self.mode.into(),
        }
    }
}

impl Default for AlignmentDoc {
    fn default() -> Self {
        Self::from(&AlignmentSpec::default())
    }
}

/// Keep-out region: a vertical cylinder or an axis-aligned ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleDoc {
    Cylinder {
        radius_m: f64,
        center_m: [f64; 3],
    },
    Ellipsoid {
        semi_axes_m: [f64; 3],
        center_m: [f64; 3],
    },
}

impl ObstacleDoc {
    fn to_obstacle(&self) -> Obstacle {
        match *self {
            Self::Cylinder { radius_m, center_m } => Obstacle::cylinder(radius_m, v3(center_m)),
            Self::Ellipsoid {
                semi_axes_m,
                center_m,
            } => Obstacle::ellipsoid(semi_axes_m, v3(center_m)),
        }
    }

    fn from_obstacle(o: &Obstacle) -> Self {
        let d = o.shape.diagonal();
        if d[2] == 0.0 {
            Self::Cylinder {
                radius_m: 1.0 / d[0],
                center_m: a3(&o.center),
            }
        } else {
            Self::Ellipsoid {
                semi_axes_m: [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]],
                center_m: a3(&o.center),
            }
        }
    }
}

/// Initial-condition section: position in meters, body velocity in m/s,
/// attitude and angular rates in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDoc {
    pub position_m: [f64; 3],
    pub velocity: [f64; 3],
    pub attitude_deg: [f64; 3],
    pub rates_deg: [f64; 3],
}

impl Default for InitialDoc {
    fn default() -> Self {
        // The canonical approach entry: 50+ km out, southwest of the runway.
        Self {
            position_m: [-50_000.0, -30_000.0, -5_000.0],
            velocity: [100.0, 0.0, 0.0],
            attitude_deg: [0.0; 3],
            rates_deg: [0.0; 3],
        }
    }
}

impl From<&InitialCondition> for InitialDoc {
    fn from(c: &InitialCondition) -> Self {
        Self {
            position_m: a3(&c.position),
            velocity: a3(&c.velocity),
            attitude_deg: deg3(&c.attitude),
            rates_deg: deg3(&c.rates),
        }
    }
}

impl InitialDoc {
    fn to_condition(&self) -> InitialCondition {
        InitialCondition {
            position: v3(self.position_m),
            velocity: v3(self.velocity),
            attitude: rad3(self.attitude_deg),
            rates: rad3(self.rates_deg),
        }
    }
}

/// Root of a problem document. Every section is optional; `{}` resolves to
/// the default problem (the canonical approach entry with default airframe,
/// limits, weights, mesh, and settings).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecDocument {
    pub aircraft: AircraftDoc,
    pub limits: LimitsDoc,
    pub alignment: AlignmentDoc,
    pub obstacles: Vec<ObstacleDoc>,
    /// Constant wind, North-East-Down [m/s].
    pub wind: [f64; 3],
    pub initial: InitialDoc,
    pub weights: Weights,
    pub mesh: MeshSpec,
    pub settings: SolveSettings,
    pub continuous_corridor: bool,
}

impl SpecDocument {
    pub fn to_spec(&self) -> ProblemSpec {
        ProblemSpec {
            aircraft: self.aircraft.to_params(),
            limits: self.limits.to_limits(),
            alignment: self.alignment.to_alignment(),
            obstacles: self.obstacles.iter().map(ObstacleDoc::to_obstacle).collect(),
            wind: v3(self.wind),
            initial: self.initial.to_condition(),
            weights: self.weights.clone(),
            mesh: self.mesh,
            settings: self.settings.clone(),
            continuous_corridor: self.continuous_corridor,
        }
    }

    pub fn from_spec(spec: &ProblemSpec) -> Self {
        Self {
            aircraft: AircraftDoc::from(&spec.aircraft),
            limits: LimitsDoc::from(&spec.limits),
            alignment: AlignmentDoc::from(&spec.alignment),
            obstacles: spec.obstacles.iter().map(ObstacleDoc::from_obstacle).collect(),
            wind: a3(&spec.wind),
            initial: InitialDoc::from(&spec.initial),
            weights: spec.weights.clone(),
            mesh: spec.mesh,
            settings: spec.settings.clone(),
            continuous_corridor: spec.continuous_corridor,
        }
    }
}

/// Parses a problem document from a JSON file.
pub fn load_document(path: &Path) -> Result<SpecDocument, ScenarioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Parses, resolves, and validates a problem document.
pub fn load_spec(path: &Path) -> Result<ProblemSpec, ScenarioError> {
    let spec = load_document(path)?.to_spec();
    spec.validate()?;
    Ok(spec)
}

// ─────────────────────────────────────────────────────────────────────────────
// Builtin scenarios
// ─────────────────────────────────────────────────────────────────────────────

pub const BUILTIN_NAMES: [&str; 7] = [
    "A",
    "B",
    "C",
    "ctcs_demo",
    "obstacle_demo",
    "crosswind_left",
    "crosswind_right",
];

/// One-line description of each builtin, for listings.
pub fn builtin_description(name: &str) -> &'static str {
    match name {
        "A" => "long approach from the southwest",
        "B" => "entry from the northeast, facing away from the runway",
        "C" => "entry past the runway, facing east",
        "ctcs_demo" => "aggressive entry attitude with the continuous roll/pitch corridor",
        "obstacle_demo" => "southwest approach with two cylindrical keep-out regions",
        "crosswind_left" => "straight-in approach with wind from the left",
        "crosswind_right" => "straight-in approach with wind from the right",
        _ => "",
    }
}

/// Builds one of the named builtin scenarios.
pub fn builtin_scenario(name: &str) -> Result<ProblemSpec, ScenarioError> {
    let mut spec = ProblemSpec::default();
    let set_initial = |spec: &mut ProblemSpec, p: [f64; 3], yaw_deg: f64| {
        spec.initial.position = v3(p);
        spec.initial.velocity = Vector3::new(100.0, 0.0, 0.0);
        spec.initial.attitude = Vector3::new(0.0, 0.0, yaw_deg.to_radians());
        spec.initial.rates = Vector3::zeros();
    };
    match name {
        n if n.eq_ignore_ascii_case("A") => {
            set_initial(&mut spec, [-50_000.0, -30_000.0, -5_000.0], 0.0);
        }
        n if n.eq_ignore_ascii_case("B") => {
            set_initial(&mut spec, [-10_000.0, 30_000.0, -5_000.0], -90.0);
        }
        n if n.eq_ignore_ascii_case("C") => {
            set_initial(&mut spec, [30_000.0, -10_000.0, -5_000.0], 90.0);
        }
        n if n.eq_ignore_ascii_case("ctcs_demo") => {
            set_initial(&mut spec, [-54_000.0, -34_000.0, -4_700.0], 0.0);
            spec.initial.attitude =
                Vector3::new((-14.0f64).to_radians(), 0.0, (-50.0f64).to_radians());
            spec.continuous_corridor = true;
        }
        n if n.eq_ignore_ascii_case("obstacle_demo") => {
            set_initial(&mut spec, [-50_000.0, -30_000.0, -5_000.0], 0.0);
            spec.obstacles = vec![
                Obstacle::cylinder(3_000.0, Vector3::new(-30_000.0, -18_000.0, 0.0)),
                Obstacle::cylinder(3_000.0, Vector3::new(-15_000.0, -9_000.0, 0.0)),
            ];
        }
        n if n.eq_ignore_ascii_case("crosswind_left") => {
            set_initial(&mut spec, [-50_000.0, 0.0, -5_000.0], 0.0);
            spec.wind = Vector3::new(0.0, 5.0, 0.0);
        }
        n if n.eq_ignore_ascii_case("crosswind_right") => {
            set_initial(&mut spec, [-50_000.0, 0.0, -5_000.0], 0.0);
            spec.wind = Vector3::new(0.0, -5.0, 0.0);
        }
        other => return Err(ScenarioError::UnknownScenario(other.to_string())),
    }
    Ok(spec)
}

// ─────────────────────────────────────────────────────────────────────────────
// Audit
// ─────────────────────────────────────────────────────────────────────────────

/// Independent checks on a trajectory: re-propagation defects, pointwise-row
/// violations, dense-sample corridor and alignment quality, obstacle margins,
/// and phase timing. Angle statistics are in degrees; `None` marks
/// statistics with no qualifying samples (or, for the obstacle margin, no
/// obstacles).
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    /// Largest per-interval re-propagation defect, scaled-state 1-norm.
    pub max_defect: f64,
    /// Distance [m] between the touchdown target and the end of a single
    /// forward propagation chained over the whole trajectory.
    pub terminal_position_error: f64,
    /// Largest scaled violation over all reference-independent rows.
    pub max_node_violation: f64,
    /// How far dense-sampled roll leaves its window [deg]; 0 when inside.
    pub max_roll_exceed_deg: f64,
    /// How far dense-sampled pitch leaves its window [deg]; 0 when inside.
    pub max_pitch_exceed_deg: f64,
    /// Wedge satisfaction: largest scaled wedge-row violation at
    /// final-approach nodes (multiphase mode), or the largest positive
    /// trigger-product residual over dense samples (state-triggered mode).
    pub alignment_max_violation: f64,
    /// Glide-angle range [deg] over dense final-approach samples, excluding
    /// points within 50 m ground range of touchdown.
    pub dense_glide_min_deg: Option<f64>,
    pub dense_glide_max_deg: Option<f64>,
    /// Mean yaw [deg] over dense final-approach samples.
    pub mean_final_yaw_deg: Option<f64>,
    /// Smallest scaled obstacle distance over dense samples; at least 1 means
    /// every sample stays outside every keep-out region.
    pub min_obstacle_margin: Option<f64>,
    /// Time [s] at which the final-approach phase begins.
    pub switch_time: f64,
    /// Total flight time [s].
    pub final_time: f64,
    /// Flight costs of the trajectory in physical units.
    pub costs: DiscreteCosts,
}

/// Audits a trajectory against its problem, re-propagating the dynamics with
/// `samples_per_interval` dense samples per interval.
pub fn audit(
    spec: &ProblemSpec,
    trajectory: &TrajectoryIterate,
    samples_per_interval: usize,
) -> Result<AuditReport, ScenarioError> {
    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    let dense = dense_sample(&model, trajectory, spec.mesh.substeps, samples_per_interval)?;
    audit_with_dense(spec, trajectory, &dense)
}

fn audit_with_dense(
    spec: &ProblemSpec,
    trajectory: &TrajectoryIterate,
    dense: &DenseSamples,
) -> Result<AuditReport, ScenarioError> {
    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    let scaling = Scaling::default();
    let n = trajectory.intervals();

    let mut max_defect = 0.0f64;
    for k in 0..n {
        let block = propagate_interval(
            &model,
            &trajectory.states[k],
            &trajectory.inputs[k],
            &trajectory.inputs[k + 1],
            trajectory.dilations[k],
            spec.mesh.substeps,
            None,
        )?;
        let defect = (trajectory.states[k + 1] - block.x_end)
            .component_div(&scaling.state)
            .abs()
            .sum();
        max_defect = max_defect.max(defect);
    }

    let last = dense.states.last().expect("dense samples are nonempty");
    let terminal_position_error = Vector3::new(
        last[state_idx::P_N],
        last[state_idx::P_E],
        last[state_idx::P_D],
    )
    .norm();

    let rows = static_rows(
        &spec.limits,
        &spec.alignment,
        &spec.mesh,
        &spec.initial,
        spec.aircraft.engine_lag,
    );
    let max_node_violation = rows
        .iter()
        .map(|row| scaled_violation(row, trajectory, &scaling))
        .fold(0.0f64, f64::max);

    let mut max_roll_exceed = 0.0f64;
    let mut max_pitch_exceed = 0.0f64;
    for x in &dense.states {
        let roll = x[state_idx::PHI];
        let pitch = x[state_idx::THETA];
        max_roll_exceed = max_roll_exceed
            .max(roll - spec.limits.roll_max)
            .max(spec.limits.roll_min - roll);
        max_pitch_exceed = max_pitch_exceed
            .max(pitch - spec.limits.pitch_max)
            .max(spec.limits.pitch_min - pitch);
    }

    let alignment_max_violation = match spec.alignment.mode {
        AlignmentMode::None => 0.0,
        AlignmentMode::MultiPhase => rows
            .iter()
            .filter(|row| {
                matches!(
                    row.label,
                    RowLabel::AlignmentWedge | RowLabel::AlignmentTrigger
                )
            })
            .map(|row| scaled_violation(row, trajectory, &scaling))
            .fold(0.0f64, f64::max),
        AlignmentMode::Stc => dense
            .states
            .iter()
            .map(|x| {
                let p = Vector3::new(
                    x[state_idx::P_N],
                    x[state_idx::P_E],
                    x[state_idx::P_D],
                );
                stc_residual(&spec.alignment, &p)
                    .into_iter()
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max),
    };

    let mut glide_min: Option<f64> = None;
    let mut glide_max: Option<f64> = None;
    let mut yaw_sum = 0.0;
    let mut yaw_count = 0usize;
    for (x, &interval) in dense.states.iter().zip(&dense.interval_of) {
        if interval < spec.mesh.switch_node {
            continue;
        }
        yaw_sum += x[state_idx::PSI];
        yaw_count += 1;
        let range = -x[state_idx::P_N];
        let altitude = -x[state_idx::P_D];
        if range < 50.0 {
            continue;
        }
        let glide = altitude.atan2(range).to_degrees();
        glide_min = Some(glide_min.map_or(glide, |g: f64| g.min(glide)));
        glide_max = Some(glide_max.map_or(glide, |g: f64| g.max(glide)));
    }
    let mean_final_yaw_deg = (yaw_count > 0)
        .then(|| (yaw_sum / yaw_count as f64).to_degrees());

    let min_obstacle_margin = (!spec.obstacles.is_empty()).then(|| {
        let mut margin = f64::MAX;
        for x in &dense.states {
            let p = Vector3::new(x[state_idx::P_N], x[state_idx::P_E], x[state_idx::P_D]);
            for obstacle in &spec.obstacles {
                margin = margin.min((obstacle.shape * (p - obstacle.center)).norm());
            }
        }
        margin
    });

    let (switch_time, final_time) = switch_time(trajectory, spec.mesh.switch_node);

    Ok(AuditReport {
        max_defect,
        terminal_position_error,
        max_node_violation,
        max_roll_exceed_deg: max_roll_exceed.to_degrees(),
        max_pitch_exceed_deg: max_pitch_exceed.to_degrees(),
        alignment_max_violation,
        dense_glide_min_deg: glide_min,
        dense_glide_max_deg: glide_max,
        mean_final_yaw_deg,
        min_obstacle_margin,
        switch_time,
        final_time,
        costs: discrete_costs(trajectory),
    })
}

// ─────────────────────────────────────────────────────────────────────────────
// Artifacts
// ─────────────────────────────────────────────────────────────────────────────

const STATE_COLS: [&str; STATE_DIM] = [
    "p_n", "p_e", "p_d", "u", "v", "w", "phi", "theta", "psi", "p", "q", "r", "delta_t",
];
const INPUT_COLS: [&str; INPUT_DIM] = ["aileron", "elevator", "rudder", "throttle_cmd"];

/// 12-significant-digit decimal rendering used in all tables.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

#[derive(Serialize)]
struct RunLog<'a> {
    #[serde(flatten)]
    report: &'a SolveReport,
    merit_monotonic_fraction: f64,
}

/// Writes the run artifacts into `dir`:
///
/// - `nodes.csv` — the node trajectory (states, inputs, durations),
/// - `runlog.json` — outcome, per-iteration records, final weights,
/// - `spec.json` — the resolved problem document (degree units),
/// - `dense.csv`, `plots/*.csv`, `audit.json` — dense re-propagation tables
///   and the audit, when re-propagation succeeds (`audit_error.txt`
///   otherwise).
///
/// Returns the audit when it could be computed.
pub fn save_artifact(
    dir: &Path,
    spec: &ProblemSpec,
    report: &SolveReport,
    samples_per_interval: usize,
) -> Result<Option<AuditReport>, ScenarioError> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;

    write_nodes_csv(&dir.join("nodes.csv"), &report.trajectory)?;

    let runlog_path = dir.join("runlog.json");
    let runlog_file = fs::File::create(&runlog_path).map_err(io_err(&runlog_path))?;
    serde_json::to_writer_pretty(
        BufWriter::new(runlog_file),
        &RunLog {
            report,
            merit_monotonic_fraction: merit_monotonicity_diagnostic(report),
        },
    )
    .map_err(|source| ScenarioError::Parse {
        path: runlog_path.display().to_string(),
        source,
    })?;

    let spec_path = dir.join("spec.json");
    let spec_file = fs::File::create(&spec_path).map_err(io_err(&spec_path))?;
    serde_json::to_writer_pretty(BufWriter::new(spec_file), &SpecDocument::from_spec(spec))
        .map_err(|source| ScenarioError::Parse {
            path: spec_path.display().to_string(),
            source,
        })?;

    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    match dense_sample(
        &model,
        &report.trajectory,
        spec.mesh.substeps,
        samples_per_interval,
    ) {
        Ok(dense) => {
            write_dense_csv(&dir.join("dense.csv"), &dense)?;
            write_plot_csvs(&plots, &dense)?;
            let audit = audit_with_dense(spec, &report.trajectory, &dense)?;
            let audit_path = dir.join("audit.json");
            let audit_file = fs::File::create(&audit_path).map_err(io_err(&audit_path))?;
            serde_json::to_writer_pretty(BufWriter::new(audit_file), &audit).map_err(
                |source| ScenarioError::Parse {
                    path: audit_path.display().to_string(),
                    source,
                },
            )?;
            Ok(Some(audit))
        }
        Err(err) => {
            let note_path = dir.join("audit_error.txt");
            fs::write(
                &note_path,
                format!("dense re-propagation failed: {err}\n"),
            )
            .map_err(io_err(&note_path))?;
            Ok(None)
        }
    }
}

fn write_nodes_csv(path: &Path, iterate: &TrajectoryIterate) -> Result<(), ScenarioError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let times = iterate.node_times();
    let mut write = || -> std::io::Result<()> {
        write!(out, "k,t")?;
        for c in STATE_COLS {
            write!(out, ",{c}")?;
        }
        for c in INPUT_COLS {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",duration")?;
        for (k, (x, u)) in iterate.states.iter().zip(&iterate.inputs).enumerate() {
            write!(out, "{k},{}", num(times[k]))?;
            for c in 0..STATE_DIM {
                write!(out, ",{}", num(x[c]))?;
            }
            for c in 0..INPUT_DIM {
                write!(out, ",{}", num(u[c]))?;
            }
            if k < iterate.dilations.len() {
                writeln!(out, ",{}", num(iterate.dilations[k]))?;
            } else {
                writeln!(out, ",")?;
            }
        }
        Ok(())
    };
    write().map_err(io_err(path))
}

/// Reads a node table written by [`save_artifact`] back into a trajectory.
pub fn load_nodes_csv(path: &Path) -> Result<TrajectoryIterate, ScenarioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |detail: String| ScenarioError::Table {
        path: path.display().to_string(),
        detail,
    };
    let expected_cols = 2 + STATE_DIM + INPUT_DIM + 1;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if header.split(',').count() != expected_cols {
        return Err(bad(format!(
            "expected {expected_cols} columns, found {}",
            header.split(',').count()
        )));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut dilations = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(bad(format!(
                "row {row}: expected {expected_cols} columns, found {}",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, ScenarioError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {row}: bad number '{s}': {e}")))
        };
        let mut x = crate::model::StateVec::zeros();
        for c in 0..STATE_DIM {
            x[c] = parse(fields[2 + c])?;
        }
        let mut u = crate::model::InputVec::zeros();
        for c in 0..INPUT_DIM {
            u[c] = parse(fields[2 + STATE_DIM + c])?;
        }
        states.push(x);
        inputs.push(u);
        let last = fields[expected_cols - 1].trim();
        if !last.is_empty() {
            dilations.push(parse(last)?);
        }
    }
    if states.len() < 2 || dilations.len() + 1 != states.len() {
        return Err(bad(format!(
            "inconsistent row structure: {} node rows, {} durations",
            states.len(),
            dilations.len()
        )));
    }
    Ok(TrajectoryIterate {
        states,
        inputs,
        dilations,
    })
}

fn write_dense_csv(path: &Path, dense: &DenseSamples) -> Result<(), ScenarioError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(out, "t")?;
        for c in STATE_COLS {
            write!(out, ",{c}")?;
        }
        for c in INPUT_COLS {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",interval")?;
        for i in 0..dense.times.len() {
            write!(out, "{}", num(dense.times[i]))?;
            for c in 0..STATE_DIM {
                write!(out, ",{}", num(dense.states[i][c]))?;
            }
            for c in 0..INPUT_DIM {
                write!(out, ",{}", num(dense.inputs[i][c]))?;
            }
            writeln!(out, ",{}", dense.interval_of[i])?;
        }
        Ok(())
    };
    write().map_err(io_err(path))
}

fn write_plot_csvs(dir: &Path, dense: &DenseSamples) -> Result<(), ScenarioError> {
    let deg = |x: f64| x.to_degrees();
    let tables: [(&str, Vec<&str>, Box<dyn Fn(usize) -> Vec<f64> + '_>); 5] = [
        (
            "ground_track.csv",
            vec!["east", "north"],
            Box::new(|i| {
                vec![
                    dense.states[i][state_idx::P_E],
                    dense.states[i][state_idx::P_N],
                ]
            }),
        ),
        (
            "altitude.csv",
            vec!["t", "altitude"],
            Box::new(|i| vec![dense.times[i], -dense.states[i][state_idx::P_D]]),
        ),
        (
            "euler.csv",
            vec!["t", "roll_deg", "pitch_deg", "yaw_deg"],
            Box::new(|i| {
                vec![
                    dense.times[i],
                    deg(dense.states[i][state_idx::PHI]),
                    deg(dense.states[i][state_idx::THETA]),
                    deg(dense.states[i][state_idx::PSI]),
                ]
            }),
        ),
        (
            "rates.csv",
            vec!["t", "p_deg", "q_deg", "r_deg"],
            Box::new(|i| {
                vec![
                    dense.times[i],
                    deg(dense.states[i][state_idx::P]),
                    deg(dense.states[i][state_idx::Q]),
                    deg(dense.states[i][state_idx::R]),
                ]
            }),
        ),
        (
            "inputs.csv",
            vec![
                "t",
                "aileron_deg",
                "elevator_deg",
                "rudder_deg",
                "throttle_cmd_deg",
                "throttle_deg",
            ],
            Box::new(|i| {
                let u = &dense.inputs[i];
                vec![
                    dense.times[i],
                    deg(u[0]),
                    deg(u[1]),
                    deg(u[2]),
                    deg(u[3]),
                    deg(dense.states[i][state_idx::DELTA_T]),
                ]
            }),
        ),
    ];
    for (name, headers, row) in tables {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "{}", headers.join(","))?;
            for i in 0..dense.times.len() {
                let values = row(i);
                let line: Vec<String> = values.into_iter().map(num).collect();
                writeln!(out, "{}", line.join(","))?;
            }
            Ok(())
        };
        write().map_err(io_err(&path))?;
    }
    Ok(())
}
