use platoon_codesign::codesign::*;
use platoon_codesign::dissipativity::LocalSynthesisOptions;
use platoon_codesign::platoon::Formulation;
use platoon_codesign::sim::{self, Scenario, SimDesign};
use std::time::Instant;

fn main() {
    let n = 9;
    let certs = local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let result = centralized_codesign(&certs, Formulation::I, &costs).unwrap();
    println!("gamma = {:.4}", result.gamma());

    // standard noisy scenario
    let sc = Scenario::standard(n, 42);
    let t0 = Instant::now();
    let trace = sim::run(&sc, &SimDesign::Fixed(&result)).unwrap();
    println!("run: {:?}, samples {}, aborted {:?}, collisions {}", t0.elapsed(), trace.time.len(), trace.aborted, trace.collisions());
    let m = sim::metrics(&trace);
    println!("error_l2={:.4} dist_l2={:.4} gain={:?} min_spacing={:.3}", m.error_l2, m.disturbance_l2, m.empirical_gain, m.min_spacing);
    println!("peaks={:?}", m.peak_location_errors.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!("sso={:?}", m.steady_state_offsets.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    let vlast: Vec<String> = trace.vehicles.iter().map(|v| format!("{:.2}", v.velocity.last().unwrap())).collect();
    println!("terminal velocities: {:?}", vlast);

    // equilibrium
    let eq = Scenario::equilibrium(n, 20.0, 10.0);
    let trace_eq = sim::run(&eq, &SimDesign::Fixed(&result)).unwrap();
    let m_eq = sim::metrics(&trace_eq);
    let max_err = trace_eq.vehicles.iter().flat_map(|v| v.error_location.iter().chain(v.error_velocity.iter()).chain(v.error_acceleration.iter())).fold(0.0f64, |a, b| a.max(b.abs()));
    println!("equilibrium max error = {:.3e}, gain marker = {:?}", max_err, m_eq.empirical_gain);

    // determinism
    let t1 = sim::run(&sc, &SimDesign::Fixed(&result)).unwrap();
    let t2 = sim::run(&sc, &SimDesign::Fixed(&result)).unwrap();
    let identical = t1.vehicles.iter().zip(&t2.vehicles).all(|(a, b)| a.position == b.position && a.velocity == b.velocity && a.error_location == b.error_location);
    println!("deterministic: {identical}");
}
