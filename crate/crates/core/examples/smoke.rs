use glidepath::qp::InteriorPointBackend;
use glidepath::scenario::{audit, builtin_scenario};
use glidepath::transcription::{linearize_intervals, AircraftDynamics};
use glidepath::xptr::solve_with_retries;

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "A".into());
    let spec = builtin_scenario(&name).unwrap();
    spec.validate().unwrap();
    let start = std::time::Instant::now();
    let report = solve_with_retries(&spec, &InteriorPointBackend::default());
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "{name}: {:?} after {} iterations, {} attempts, {elapsed:.1} s",
        report.outcome,
        report.iterations(),
        report.attempts
    );
    for r in &report.records {
        match &r.costs {
            Some(c) => println!(
                "  a{} i{:>2} {:?} vc {:.3e} tr {:.3e} J {:.6e} T {:.1}s [{:.0} ms]",
                r.attempt,
                r.iteration,
                r.status,
                c.virtual_control,
                c.trust_region,
                c.objective,
                c.flight.time,
                r.wall_ms
            ),
            None => println!(
                "  a{} i{:>2} {:?} [{:.0} ms]",
                r.attempt, r.iteration, r.status, r.wall_ms
            ),
        }
    }
    let traj = &report.trajectory;
    println!("nodes (k: pN pE pD | u v w | phi theta psi deg | q deg/s | s):");
    let n = traj.states.len();
    for k in [0usize, n / 2, n.saturating_sub(3), n.saturating_sub(2), n - 1] {
        let x = &traj.states[k];
        let d = 180.0 / std::f64::consts::PI;
        println!(
            "  {k:>2}: {:9.1} {:9.1} {:8.1} | {:6.1} {:5.1} {:5.1} | {:7.2} {:7.2} {:8.2} | {:6.2} | s {:.3?}",
            x[0],
            x[1],
            x[2],
            x[3],
            x[4],
            x[5],
            x[6] * d,
            x[7] * d,
            x[8] * d,
            x[10] * d,
            traj.dilations.get(k)
        );
    }
    let model = AircraftDynamics {
        params: spec.aircraft.clone(),
        wind: spec.wind,
    };
    match linearize_intervals(&model, traj, spec.mesh.substeps, None, true) {
        Ok(blocks) => {
            let defect: f64 = blocks
                .iter()
                .zip(traj.states.windows(2))
                .map(|(b, w)| (&w[1] - &b.x_end).abs().sum())
                .sum();
            println!("re-propagation defect (1-norm, physical): {defect:.3e}");
        }
        Err(e) => println!("re-propagation impossible: {e}"),
    }
    match audit(&spec, traj, 64) {
        Ok(a) => println!(
            "audit: defect {:.3e} terminal {:.2} m node_viol {:.3e} align {:.3e} glide [{:?}, {:?}] roll_exc {:.3} t_s {:.1} t_f {:.1}",
            a.max_defect,
            a.terminal_position_error,
            a.max_node_violation,
            a.alignment_max_violation,
            a.dense_glide_min_deg,
            a.dense_glide_max_deg,
            a.max_roll_exceed_deg,
            a.switch_time,
            a.final_time
        ),
        Err(e) => println!("audit impossible: {e}"),
    }
}
