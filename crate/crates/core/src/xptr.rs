//! Outer successive-convexification driver.
//!
//! Each iteration linearizes the dynamics about the reference trajectory,
//! assembles and solves the convex subproblem, then moves the reference by an
//! extrapolated step toward (or past) the subproblem solution. Convergence is
//! declared when both the relaxation 1-norm and the proximity distance of a
//! subproblem solution fall under their tolerances; a second attempt with
//! doubled penalty weights covers first-attempt failures.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{reference_rows, static_rows};
use crate::qp::{InteriorPointBackend, QpBackend, QpStatus};
use crate::scenario::ProblemSpec;
use crate::subproblem::{
    assemble, discrete_costs, penalty_costs, DiscreteCosts, Scaling, SubproblemInputs, Weights,
};
use crate::transcription::{
    linearize_intervals, AircraftDynamics, DynamicsModel, MeshSpec, TrajectoryIterate,
};
use crate::model::{input_idx, state_idx, StateVec};

// ─────────────────────────────────────────────────────────────────────────────
// Settings and report types
// ─────────────────────────────────────────────────────────────────────────────

/// Which divisor turns the straight-line flight-time estimate into the
/// per-interval duration guess.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessTimeDivisor {
    /// Divide the estimated flight time by `intervals - 1`.
    IntervalsMinusOne,
    /// Divide by the interval count.
    Intervals,
}

/// Stopping tolerances, iteration caps, and retry-ladder parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    /// Relaxation 1-norm below which the dynamics are considered satisfied.
    pub vc_tolerance: f64,
    /// Proximity distance below which the iteration is considered stationary.
    pub tr_tolerance: f64,
    /// Iteration cap per attempt.
    pub max_iterations: usize,
    /// Total attempts of the weight-doubling ladder.
    pub max_attempts: usize,
    /// Factor applied to a penalty weight between attempts.
    pub weight_doubling: f64,
    /// Divisor choice for the initial duration guess.
    pub guess_time_divisor: GuessTimeDivisor,
    /// Optional safeguard: from this iteration on, the extrapolation factor
    /// is forced to 1.
    pub gamma_switch_iteration: Option<usize>,
    /// Linearize the intervals of one iteration in parallel.
    pub parallel_linearization: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            vc_tolerance: 1e-6,
            tr_tolerance: 1e-3,
            max_iterations: 100,
            max_attempts: 2,
            weight_doubling: 2.0,
            guess_time_divisor: GuessTimeDivisor::IntervalsMinusOne,
            gamma_switch_iteration: None,
            parallel_linearization: true,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.vc_tolerance > 0.0) {
            return Err("relaxation tolerance must be positive".into());
        }
        if !(self.tr_tolerance > 0.0) {
            return Err("proximity tolerance must be positive".into());
        }
        if self.max_iterations < 1 {
            return Err("iteration cap must be at least 1".into());
        }
        if self.max_attempts < 1 {
            return Err("attempt count must be at least 1".into());
        }
        if !(self.weight_doubling >= 1.0) {
            return Err("weight doubling factor must be at least 1".into());
        }
        Ok(())
    }
}

/// Terminal label of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveOutcome {
    Success,
    FailMaxIteration,
    FailDivergence,
}

/// Cost breakdown of one accepted subproblem solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationCosts {
    /// Flight costs in physical units.
    pub flight: DiscreteCosts,
    /// Relaxation 1-norm, physical state units.
    pub virtual_control: f64,
    /// Squared proximity distance to the reference (scaled variables).
    pub trust_region: f64,
    /// Full weighted objective.
    pub objective: f64,
}

/// One record per subproblem invocation, failed ones included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Attempt this record belongs to (1-based).
    pub attempt: usize,
    /// Iteration within the attempt (1-based).
    pub iteration: usize,
    pub status: QpStatus,
    /// Present when the backend produced a usable solution.
    pub costs: Option<IterationCosts>,
    /// Wall time of the full iteration (linearize + assemble + solve) [ms].
    pub wall_ms: f64,
}

/// Full account of a solve: outcome, per-iteration records, and the final
/// trajectory (the last subproblem solution, never an extrapolated point;
/// the initial guess if no subproblem succeeded).
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub records: Vec<IterationRecord>,
    pub attempts: usize,
    pub final_weights: Weights,
    pub trajectory: TrajectoryIterate,
}

impl SolveReport {
    /// Records of the final attempt only.
    pub fn last_attempt_records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(move |r| r.attempt == self.attempts)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Initial guess and extrapolation
// ─────────────────────────────────────────────────────────────────────────────

/// Elevator deflection that zeroes the pitch acceleration at the given state,
/// found by bisection over the elevator range (the pitch moment is affine in
/// the deflection). Falls back to the less-accelerating end of the range when
/// no zero crossing lies inside it.
fn pitch_trim_elevator(spec: &ProblemSpec, state: &StateVec, thrust_mid: f64) -> f64 {
    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    let pitch_accel = |elevator: f64| -> f64 {
        let mut u = nalgebra::Vector4::zeros();
        u[input_idx::ELEVATOR] = elevator;
        u[input_idx::THROTTLE_CMD] = thrust_mid;
        model.rhs(state, &u)[state_idx::Q]
    };
    let mut lo = spec.limits.input_min[input_idx::ELEVATOR];
    let mut hi = spec.limits.input_max[input_idx::ELEVATOR];
    let mut f_lo = pitch_accel(lo);
    let f_hi = pitch_accel(hi);
    if f_lo * f_hi > 0.0 {
        return if f_lo.abs() <= f_hi.abs() { lo } else { hi };
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let f_mid = pitch_accel(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

/// Straight-line initial trajectory: node states interpolate from the initial
/// condition to a touchdown anchor at the origin, inputs are constant with
/// mid-range thrust command and a pitch-trimmed elevator, and every interval
/// duration is the same fraction of a straight-line flight-time estimate.
pub fn initial_guess(spec: &ProblemSpec) -> TrajectoryIterate {
    let n = spec.mesh.intervals;
    let thrust_mid =
        0.5 * (spec.limits.input_min[input_idx::THROTTLE_CMD]
            + spec.limits.input_max[input_idx::THROTTLE_CMD]);

    let mut start = StateVec::zeros();
    let mut end = StateVec::zeros();
    for i in 0..3 {
        start[state_idx::P_N + i] = spec.initial.position[i];
        start[state_idx::U + i] = spec.initial.velocity[i];
        start[state_idx::PHI + i] = spec.initial.attitude[i];
        start[state_idx::P + i] = spec.initial.rates[i];
        end[state_idx::U + i] = spec.limits.final_speed_bound[i];
    }
    start[state_idx::DELTA_T] = thrust_mid;
    end[state_idx::DELTA_T] = thrust_mid;

    // An untrimmed constant input tumbles the linearization propagation
    // within a single long interval; trimming pitch at the entry state keeps
    // the first few references finite.
    let elevator = pitch_trim_elevator(spec, &start, thrust_mid);

    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let blend = k as f64 / n as f64;
        states.push((1.0 - blend) * start + blend * end);
        let mut u = nalgebra::Vector4::zeros();
        u[input_idx::ELEVATOR] = elevator;
        u[input_idx::THROTTLE_CMD] = thrust_mid;
        inputs.push(u);
    }

    let range = spec.initial.position.norm();
    let slow = spec.limits.velocity_min.norm();
    let fast = spec.limits.velocity_max.norm();
    let flight_time = range / (2.0 * slow) + range / (2.0 * fast);
    let divisor = match spec.settings.guess_time_divisor {
        GuessTimeDivisor::IntervalsMinusOne => (n - 1).max(1) as f64,
        GuessTimeDivisor::Intervals => n as f64,
    };
    let duration = (flight_time / divisor)
        .clamp(spec.mesh.dilation_min, spec.mesh.dilation_max);

    TrajectoryIterate {
        states,
        inputs,
        dilations: vec![duration; n],
    }
}

/// Moves every decision variable from the reference toward (or, for factors
/// above 1, past) the subproblem solution; durations are clamped back into
/// the mesh bounds afterwards.
pub fn extrapolate(
    reference: &TrajectoryIterate,
    solution: &TrajectoryIterate,
    factor: f64,
    mesh: &MeshSpec,
) -> TrajectoryIterate {
    let states = reference
        .states
        .iter()
        .zip(&solution.states)
        .map(|(r, s)| r + factor * (s - r))
        .collect();
    let inputs = reference
        .inputs
        .iter()
        .zip(&solution.inputs)
        .map(|(r, s)| r + factor * (s - r))
        .collect();
    let dilations = reference
        .dilations
        .iter()
        .zip(&solution.dilations)
        .map(|(r, s)| (r + factor * (s - r)).clamp(mesh.dilation_min, mesh.dilation_max))
        .collect();
    TrajectoryIterate {
        states,
        inputs,
        dilations,
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// The iteration loop
// ─────────────────────────────────────────────────────────────────────────────

struct StepOutcome {
    iterate: TrajectoryIterate,
    virtual_control: f64,
    trust_region: f64,
    costs: IterationCosts,
}

enum AttemptEnd {
    Converged(TrajectoryIterate),
    MaxIterations {
        vc_high: bool,
        tr_high: bool,
        last: Option<TrajectoryIterate>,
    },
    Diverged {
        last: Option<TrajectoryIterate>,
    },
}

struct Driver<'a> {
    spec: &'a ProblemSpec,
    backend: &'a dyn QpBackend,
    scaling: Scaling,
    fixed_rows: Vec<crate::constraints::ConstraintRow>,
    model: AircraftDynamics,
    /// Iteration index (1-based, counted across attempts) whose assembled
    /// subproblem should be captured as text.
    capture_iteration: Option<usize>,
    captured: Option<String>,
}

impl<'a> Driver<'a> {
    fn new(spec: &'a ProblemSpec, backend: &'a dyn QpBackend) -> Self {
        Self {
            spec,
            backend,
            scaling: Scaling::default(),
            fixed_rows: static_rows(
                &spec.limits,
                &spec.alignment,
                &spec.mesh,
                &spec.initial,
                spec.aircraft.engine_lag,
            ),
            model: AircraftDynamics {
                params: spec.aircraft.clone(),
                wind: spec.wind,
            },
            capture_iteration: None,
            captured: None,
        }
    }

    fn step(
        &mut self,
        reference: &TrajectoryIterate,
        weights: &Weights,
        global_iteration: usize,
    ) -> Result<StepOutcome, QpStatus> {
        let corridor = self.spec.limits.attitude_corridor();
        let blocks = linearize_intervals(
            &self.model,
            reference,
            self.spec.mesh.substeps,
            self.spec.continuous_corridor.then_some(&corridor),
            self.spec.settings.parallel_linearization,
        )
        .map_err(|_| QpStatus::NumericalFailure)?;

        let mut rows = self.fixed_rows.clone();
        rows.extend(
            reference_rows(&self.spec.alignment, &self.spec.obstacles, reference)
                .map_err(|_| QpStatus::NumericalFailure)?,
        );

        let assembled = assemble(&SubproblemInputs {
            reference,
            blocks: &blocks,
            rows: &rows,
            mesh: &self.spec.mesh,
            weights,
            scaling: &self.scaling,
            ctcs: self.spec.continuous_corridor,
        })
        .map_err(|_| QpStatus::NumericalFailure)?;

        if self.capture_iteration == Some(global_iteration) {
            let mut buffer = Vec::new();
            if assembled.qp.dump_text(&mut buffer).is_ok() {
                self.captured = Some(String::from_utf8_lossy(&buffer).into_owned());
            }
        }

        let qp_solution = self.backend.solve(&assembled.qp);
        if qp_solution.status != QpStatus::Optimal {
            return Err(qp_solution.status);
        }
        let solution = assembled.extract(&qp_solution);
        if !solution
            .iterate
            .states
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
        {
            return Err(QpStatus::NumericalFailure);
        }
        let (virtual_control, trust_region) =
            penalty_costs(&solution, reference, &self.scaling);
        let flight = discrete_costs(&solution.iterate);
        let objective = flight.weighted(weights)
            + weights.virtual_control * virtual_control
            + weights.trust_region * trust_region;
        Ok(StepOutcome {
            iterate: solution.iterate,
            virtual_control,
            trust_region,
            costs: IterationCosts {
                flight,
                virtual_control,
                trust_region,
                objective,
            },
        })
    }

    fn attempt(
        &mut self,
        attempt: usize,
        weights: &Weights,
        records: &mut Vec<IterationRecord>,
    ) -> AttemptEnd {
        let settings = &self.spec.settings;
        let mut reference = initial_guess(self.spec);
        let mut last: Option<TrajectoryIterate> = None;
        let mut vc_high = true;
        let mut tr_high = true;
        for iteration in 1..=settings.max_iterations {
            let clock = Instant::now();
            let global_iteration = records.len() + 1;
            let step = self.step(&reference, weights, global_iteration);
            let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            match step {
                Err(status) => {
                    records.push(IterationRecord {
                        attempt,
                        iteration,
                        status,
                        costs: None,
                        wall_ms,
                    });
                    return AttemptEnd::Diverged { last };
                }
                Ok(outcome) => {
                    records.push(IterationRecord {
                        attempt,
                        iteration,
                        status: QpStatus::Optimal,
                        costs: Some(outcome.costs),
                        wall_ms,
                    });
                    vc_high = outcome.virtual_control >= settings.vc_tolerance;
                    tr_high = outcome.trust_region >= settings.tr_tolerance;
                    if !vc_high && !tr_high {
                        return AttemptEnd::Converged(outcome.iterate);
                    }
                    let factor = match settings.gamma_switch_iteration {
                        Some(switch) if iteration >= switch => 1.0,
                        _ => weights.extrapolation,
                    };
                    reference =
                        extrapolate(&reference, &outcome.iterate, factor, &self.spec.mesh);
                    last = Some(outcome.iterate);
                }
            }
        }
        AttemptEnd::MaxIterations {
            vc_high,
            tr_high,
            last,
        }
    }
}

/// One run of the iteration loop with the spec's weights: no retries.
pub fn solve(spec: &ProblemSpec) -> SolveReport {
    solve_with_backend(spec, &InteriorPointBackend::default())
}

/// Like [`solve`] with an explicit subproblem backend.
pub fn solve_with_backend(spec: &ProblemSpec, backend: &dyn QpBackend) -> SolveReport {
    let mut driver = Driver::new(spec, backend);
    let mut records = Vec::new();
    let weights = spec.weights.clone();
    let end = driver.attempt(1, &weights, &mut records);
    finish_single(spec, records, weights, end)
}

fn finish_single(
    spec: &ProblemSpec,
    records: Vec<IterationRecord>,
    weights: Weights,
    end: AttemptEnd,
) -> SolveReport {
    let (outcome, trajectory) = match end {
        AttemptEnd::Converged(t) => (SolveOutcome::Success, t),
        AttemptEnd::MaxIterations { last, .. } => (
            SolveOutcome::FailMaxIteration,
            last.unwrap_or_else(|| initial_guess(spec)),
        ),
        AttemptEnd::Diverged { last } => (
            SolveOutcome::FailDivergence,
            last.unwrap_or_else(|| initial_guess(spec)),
        ),
    };
    SolveReport {
        outcome,
        records,
        attempts: 1,
        final_weights: weights,
        trajectory,
    }
}

/// The weight-adaptation ladder: attempt 1 with the spec's weights; a
/// max-iteration exit doubles whichever penalty failed its tolerance, an
/// unsolvable subproblem doubles the proximity weight; the final attempt's
/// failure mode labels the report.
pub fn solve_with_retries(spec: &ProblemSpec, backend: &dyn QpBackend) -> SolveReport {
    let settings = &spec.settings;
    let mut driver = Driver::new(spec, backend);
    let mut records = Vec::new();
    let mut weights = spec.weights.clone();
    for attempt in 1..=settings.max_attempts {
        let end = driver.attempt(attempt, &weights, &mut records);
        match end {
            AttemptEnd::Converged(trajectory) => {
                return SolveReport {
                    outcome: SolveOutcome::Success,
                    records,
                    attempts: attempt,
                    final_weights: weights,
                    trajectory,
                }
            }
            AttemptEnd::MaxIterations {
                vc_high,
                tr_high,
                last,
            } => {
                if vc_high {
                    weights.virtual_control *= settings.weight_doubling;
                }
                if tr_high {
                    weights.trust_region *= settings.weight_doubling;
                }
                if attempt == settings.max_attempts {
                    return SolveReport {
                        outcome: SolveOutcome::FailMaxIteration,
                        records,
                        attempts: attempt,
                        final_weights: weights,
                        trajectory: last.unwrap_or_else(|| initial_guess(spec)),
                    };
                }
            }
            AttemptEnd::Diverged { last } => {
                if attempt == settings.max_attempts {
                    return SolveReport {
                        outcome: SolveOutcome::FailDivergence,
                        records,
                        attempts: attempt,
                        final_weights: weights,
                        trajectory: last.unwrap_or_else(|| initial_guess(spec)),
                    };
                }
                weights.trust_region *= settings.weight_doubling;
            }
        }
    }
    unreachable!("the ladder returns from its final attempt");
}

/// Runs the loop while capturing the assembled subproblem of one global
/// iteration (1-based across attempts) as plain text.
pub fn solve_capturing(
    spec: &ProblemSpec,
    backend: &dyn QpBackend,
    capture_iteration: usize,
) -> (SolveReport, Option<String>) {
    let mut driver = Driver::new(spec, backend);
    driver.capture_iteration = Some(capture_iteration);
    let mut records = Vec::new();
    let weights = spec.weights.clone();
    let end = driver.attempt(1, &weights, &mut records);
    let report = finish_single(spec, records, weights, end);
    (report, driver.captured)
}

/// Fraction of consecutive accepted-iteration pairs whose full objective did
/// not increase (beyond a 1e-9 absolute allowance). Meaningful for runs with
/// extrapolation factor 1.
pub fn merit_monotonicity_diagnostic(report: &SolveReport) -> f64 {
    let objectives: Vec<f64> = report
        .records
        .iter()
        .filter_map(|r| r.costs.as_ref().map(|c| c.objective))
        .collect();
    if objectives.len() < 2 {
        return 1.0;
    }
    let pairs = objectives.len() - 1;
    let good = objectives
        .windows(2)
        .filter(|w| w[1] <= w[0] + 1e-9)
        .count();
    good as f64 / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{AlignmentMode, AlignmentSpec, InitialCondition, OperationalLimits};
    use crate::model::AircraftParams;
    use crate::qp::QpSolution;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn short_final_spec() -> ProblemSpec {
        // A short, nearly aligned final approach that keeps test solves cheap.
        ProblemSpec {
            aircraft: AircraftParams::default(),
            limits: OperationalLimits::default(),
            alignment: AlignmentSpec::default(),
            obstacles: Vec::new(),
            wind: Vector3::zeros(),
            initial: InitialCondition {
                position: Vector3::new(-3_000.0, 0.0, -200.0),
                velocity: Vector3::new(90.0, 0.0, 2.0),
                attitude: Vector3::zeros(),
                rates: Vector3::zeros(),
            },
            weights: Weights::default(),
            mesh: MeshSpec {
                intervals: 8,
                switch_node: 6,
                substeps: 10,
                ..MeshSpec::default()
            },
            settings: SolveSettings::default(),
            continuous_corridor: false,
        }
    }

    #[test]
    fn initial_guess_interpolates_between_the_boundary_anchors() {
        let mut spec = short_final_spec();
        spec.mesh.intervals = 32;
        spec.mesh.switch_node = 24;
        spec.initial.position = Vector3::new(-30_000.0, -40_000.0, -3_000.0);
        spec.initial.velocity = Vector3::new(100.0, 0.0, 0.0);
        spec.initial.attitude = Vector3::new(0.0, 0.0, -1.0);
        let guess = initial_guess(&spec);

        let first = &guess.states[0];
        assert_eq!(first[state_idx::P_N], -30_000.0);
        assert_eq!(first[state_idx::P_E], -40_000.0);
        assert_eq!(first[state_idx::U], 100.0);
        assert_eq!(first[state_idx::PSI], -1.0);
        let last = &guess.states[32];
        assert_eq!(last[state_idx::P_N], 0.0);
        assert_eq!(last[state_idx::P_E], 0.0);
        assert_eq!(last[state_idx::U], 85.0);
        assert_eq!(last[state_idx::V], 3.0);
        assert_eq!(last[state_idx::W], 3.0);
        assert_eq!(last[state_idx::PHI], 0.0);
        assert_eq!(last[state_idx::Q], 0.0);

        // Every input is the constant mid-thrust vector.
        let mid = 0.5 * (10.0_f64).to_radians();
        for u in &guess.inputs {
            assert_eq!(u[input_idx::AILERON], 0.0);
            assert_relative_eq!(u[input_idx::THROTTLE_CMD], mid);
        }

        // Straight-line flight-time estimate over a 50 km range with the
        // default speed bounds: 25000/|v_min| + 25000/|v_max| ≈ 517.2 s.
        // Range here: |(-30000, -40000, -3000)| close to but not exactly
        // 50 km, so rebuild the oracle from the same norm.
        let range = spec.initial.position.norm();
        let expected_total = range / (2.0 * 6516.0_f64.sqrt()) + range / (2.0 * 14516.0_f64.sqrt());
        let per_interval: Vec<f64> = guess.dilations.clone();
        assert!(per_interval.windows(2).all(|w| w[0] == w[1]));
        assert_relative_eq!(per_interval[0] * 31.0, expected_total, max_relative = 1e-12);

        // The published arithmetic check at exactly 50 km.
        let fifty = 50_000.0 / (2.0 * 6516.0_f64.sqrt()) + 50_000.0 / (2.0 * 14516.0_f64.sqrt());
        assert_relative_eq!(fifty, 517.2, max_relative = 1e-3);
    }

    #[test]
    fn guess_divisor_choice_switches_the_denominator() {
        let mut spec = short_final_spec();
        let printed = initial_guess(&spec);
        spec.settings.guess_time_divisor = GuessTimeDivisor::Intervals;
        let alternative = initial_guess(&spec);
        let n = spec.mesh.intervals as f64;
        assert_relative_eq!(
            printed.dilations[0] * (n - 1.0),
            alternative.dilations[0] * n,
            max_relative = 1e-12
        );
    }

    #[test]
    fn extrapolation_is_identity_at_one_and_linear_beyond() {
        let spec = short_final_spec();
        let mesh = spec.mesh;
        let reference = initial_guess(&spec);
        let mut solution = reference.clone();
        for x in &mut solution.states {
            x[state_idx::P_N] += 100.0;
        }
        solution.dilations.iter_mut().for_each(|s| *s += 1.0);

        let same = extrapolate(&reference, &solution, 1.0, &mesh);
        assert_eq!(same, solution);

        let stretched = extrapolate(&reference, &solution, 2.0, &mesh);
        for (s, r) in stretched.states.iter().zip(&reference.states) {
            assert_relative_eq!(s[state_idx::P_N] - r[state_idx::P_N], 200.0);
        }

        let fixed_point = extrapolate(&reference, &reference, 7.5, &mesh);
        assert_eq!(fixed_point, reference);
    }

    #[test]
    fn extrapolated_durations_clamp_to_the_mesh_bounds() {
        let spec = short_final_spec();
        let mesh = spec.mesh;
        let mut reference = initial_guess(&spec);
        reference.dilations.iter_mut().for_each(|s| *s = 30.0);
        let mut solution = reference.clone();
        solution.dilations.iter_mut().for_each(|s| *s = 50.0);
        // 30 + 2*(50-30) = 70, above the 60 s ceiling.
        let out = extrapolate(&reference, &solution, 2.0, &mesh);
        assert!(out.dilations.iter().all(|&s| s == mesh.dilation_max));
    }

    #[test]
    fn vacuous_tolerances_succeed_after_one_iteration() {
        let mut spec = short_final_spec();
        spec.settings.vc_tolerance = f64::INFINITY;
        spec.settings.tr_tolerance = f64::INFINITY;
        let report = solve(&spec);
        assert_eq!(report.outcome, SolveOutcome::Success);
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].status, QpStatus::Optimal);
        assert_eq!(report.attempts, 1);
    }

    #[test]
    fn binding_iteration_cap_fails_by_max_iteration() {
        let mut spec = short_final_spec();
        spec.settings.max_iterations = 1;
        spec.settings.vc_tolerance = 1e-300;
        spec.settings.tr_tolerance = 1e-300;
        let report = solve(&spec);
        assert_eq!(report.outcome, SolveOutcome::FailMaxIteration);
        assert_eq!(report.records.len(), 1);
    }

    #[test]
    fn retry_doubles_only_the_proximity_weight_when_only_it_is_high() {
        let mut spec = short_final_spec();
        spec.settings.max_iterations = 1;
        spec.settings.vc_tolerance = f64::INFINITY; // relaxation always passes
        spec.settings.tr_tolerance = 1e-300; // proximity never passes
        let report = solve_with_retries(&spec, &InteriorPointBackend::default());
        assert_eq!(report.outcome, SolveOutcome::FailMaxIteration);
        assert_eq!(report.attempts, 2);
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.records[0].attempt, 1);
        assert_eq!(report.records[1].attempt, 2);
        // Doubled once after each of the two max-iteration exits.
        assert_relative_eq!(report.final_weights.trust_region, 4.0);
        assert_relative_eq!(
            report.final_weights.virtual_control,
            spec.weights.virtual_control
        );
    }

    struct FailingBackend;

    impl QpBackend for FailingBackend {
        fn name(&self) -> &'static str {
            "failing"
        }

        fn solve(&self, _problem: &crate::qp::QpProblem) -> QpSolution {
            QpSolution {
                status: QpStatus::NumericalFailure,
                primal: Vec::new(),
                objective: 0.0,
                iterations: 0,
            }
        }
    }

    #[test]
    fn backend_failure_in_both_attempts_is_divergence() {
        let spec = short_final_spec();
        let report = solve_with_retries(&spec, &FailingBackend);
        assert_eq!(report.outcome, SolveOutcome::FailDivergence);
        assert_eq!(report.attempts, 2);
        assert_eq!(report.records.len(), 2);
        assert!(report.records.iter().all(|r| r.costs.is_none()));
        // A first-attempt backend failure doubles the proximity weight once.
        assert_relative_eq!(report.final_weights.trust_region, 2.0);
        // With no accepted subproblem, the reported trajectory is the guess.
        assert_eq!(report.trajectory, initial_guess(&spec));
    }

    fn synthetic_report(objectives: &[f64]) -> SolveReport {
        let records = objectives
            .iter()
            .enumerate()
            .map(|(i, &objective)| IterationRecord {
                attempt: 1,
                iteration: i + 1,
                status: QpStatus::Optimal,
                costs: Some(IterationCosts {
                    flight: DiscreteCosts {
                        time: 0.0,
                        thrust: 0.0,
                        input_rate: 0.0,
                        angular_rate: 0.0,
                    },
                    virtual_control: 0.0,
                    trust_region: 0.0,
                    objective,
                }),
                wall_ms: 0.0,
            })
            .collect();
        SolveReport {
            outcome: SolveOutcome::Success,
            records,
            attempts: 1,
            final_weights: Weights::default(),
            trajectory: TrajectoryIterate {
                states: vec![],
                inputs: vec![],
                dilations: vec![],
            },
        }
    }

    #[test]
    fn monotonicity_diagnostic_counts_nonincreasing_pairs() {
        assert_relative_eq!(
            merit_monotonicity_diagnostic(&synthetic_report(&[5.0, 4.0, 3.0, 2.0])),
            1.0
        );
        assert_relative_eq!(
            merit_monotonicity_diagnostic(&synthetic_report(&[5.0, 6.0, 5.0, 6.0, 5.0])),
            0.5
        );
        assert_relative_eq!(merit_monotonicity_diagnostic(&synthetic_report(&[1.0])), 1.0);
    }

    #[test]
    fn identical_settings_reproduce_identical_records() {
        let mut spec = short_final_spec();
        spec.settings.max_iterations = 3;
        spec.settings.vc_tolerance = 1e-300;
        spec.settings.tr_tolerance = 1e-300;
        let a = solve(&spec);
        let b = solve(&spec);
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.status, rb.status);
            assert_eq!(ra.costs, rb.costs, "wall time may differ, costs may not");
        }
        assert_eq!(a.trajectory, b.trajectory);
    }
}
