use glidepath::constraints::{reference_rows, static_rows};
use glidepath::qp::{InteriorPointBackend, QpBackend, QpStatus};
use glidepath::scenario::builtin_scenario;
use glidepath::subproblem::{
    assemble, discrete_costs, penalty_costs, Scaling, SubproblemInputs,
};
use glidepath::transcription::{
    linearize_intervals, propagate_interval, AircraftDynamics,
};
use glidepath::xptr::{extrapolate, initial_guess};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "C".into());
    let spec = builtin_scenario(&name).unwrap();
    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    let backend = InteriorPointBackend::default();
    let scaling = Scaling::default();
    let weights = spec.weights.clone();
    let fixed = static_rows(
        &spec.limits,
        &spec.alignment,
        &spec.mesh,
        &spec.initial,
        spec.aircraft.engine_lag,
    );
    let mut reference = initial_guess(&spec);
    let d = 180.0 / std::f64::consts::PI;
    for it in 1..=100 {
        let blocks = match linearize_intervals(&model, &reference, spec.mesh.substeps, None, false)
        {
            Ok(b) => b,
            Err(e) => {
                println!("iteration {it}: linearization failed: {e}");
                for k in 0..reference.intervals() {
                    let r = propagate_interval(
                        &model,
                        &reference.states[k],
                        &reference.inputs[k],
                        &reference.inputs[k + 1],
                        reference.dilations[k],
                        spec.mesh.substeps,
                        None,
                    );
                    if let Err(pe) = r {
                        let x = &reference.states[k];
                        let u0 = &reference.inputs[k];
                        let u1 = &reference.inputs[k + 1];
                        println!(
                            "  interval {k} (s={:.3}): {pe}\n    x: p ({:.0},{:.0},{:.0}) v ({:.1},{:.1},{:.1}) phi/theta/psi ({:.1},{:.1},{:.1})deg pqr ({:.1},{:.1},{:.1})deg/s eta {:.3}\n    u0 ({:.1},{:.1},{:.1},{:.1})deg u1 ({:.1},{:.1},{:.1},{:.1})deg",
                            reference.dilations[k],
                            x[0], x[1], x[2], x[3], x[4], x[5],
                            x[6]*d, x[7]*d, x[8]*d, x[9]*d, x[10]*d, x[11]*d, x[12],
                            u0[0]*d, u0[1]*d, u0[2]*d, u0[3]*d,
                            u1[0]*d, u1[1]*d, u1[2]*d, u1[3]*d,
                        );
                    }
                }
                break;
            }
        };
        let mut rows = fixed.clone();
        rows.extend(reference_rows(&spec.alignment, &spec.obstacles, &reference).unwrap());
        let assembled = assemble(&SubproblemInputs {
            reference: &reference,
            blocks: &blocks,
            rows: &rows,
            mesh: &spec.mesh,
            weights: &weights,
            scaling: &scaling,
            ctcs: spec.continuous_corridor,
        })
        .unwrap();
        let qp_solution = backend.solve(&assembled.qp);
        if qp_solution.status != QpStatus::Optimal {
            println!("iteration {it}: backend {:?}", qp_solution.status);
            break;
        }
        let solution = assembled.extract(&qp_solution);
        let (vc, tr) = penalty_costs(&solution, &reference, &scaling);
        let flight = discrete_costs(&solution.iterate);
        let total: f64 = solution.iterate.dilations.iter().sum();
        println!(
            "i{it:>3} vc {vc:.3e} tr {tr:.3e} J {:.4e} T {total:.1}s",
            flight.weighted(&weights) + weights.virtual_control * vc + weights.trust_region * tr
        );
        if vc < spec.settings.vc_tolerance && tr < spec.settings.tr_tolerance {
            println!("converged at iteration {it}");
            break;
        }
        reference = extrapolate(&reference, &solution.iterate, weights.extrapolation, &spec.mesh);
    }
}
