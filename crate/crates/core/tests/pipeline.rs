//! Integration tests for the synthesis pipelines, merge/split orchestration,
//! persistence, and closed-loop simulation behaviors beyond the acceptance
//! criteria.

mod common;

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use platoon_codesign::blockmat::sylvester_decompose;
use platoon_codesign::codesign::{
    self, centralized_codesign, certify_weak_string_stability, decentralized_codesign,
    local_certificates, merge, persist, uniform_multipliers, CostSpec, DecentralizedOptions,
};
use platoon_codesign::dissipativity::LocalSynthesisOptions;
use platoon_codesign::platoon::{
    drift, linearizing_input, triple_integrator, Formulation, VehicleParams, VehicleState,
};
use platoon_codesign::sim::{
    self, integrate_single_vehicle, Event, EventKind, LeaderProfile, NoiseSpec, Scenario,
    SimDesign,
};

fn design(n: usize) -> codesign::SynthesisResult {
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    centralized_codesign(&certs, Formulation::I, &CostSpec::default_for(n)).unwrap()
}

#[test]
fn two_vehicle_empirical_ratio_respects_achieved_gain() {
    // Pure-noise response from an equilibrium start under a constant-speed
    // leader: the measured error-to-disturbance ratio must stay within the
    // certified gain (5% slack for the finite horizon).
    let result = design(2);
    let mut scenario = Scenario {
        followers: vec![VehicleParams::default(); 2],
        leader: LeaderProfile::constant(20.0, 10.0),
        leader_start: 0.0,
        leader_length: 2.5,
        noise: NoiseSpec::standard(11),
        events: Vec::new(),
        step: 1e-3,
        horizon: 10.0,
        initial_jitter: false,
    };
    scenario.validate().unwrap();
    let trace = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    let m = sim::metrics(&trace);
    let ratio = m.empirical_gain.unwrap();
    assert!(
        ratio <= result.gamma() * 1.05,
        "ratio {ratio:.4} vs achieved gamma {:.4}",
        result.gamma()
    );
}

#[test]
fn string_stability_certificate_bounds_the_trace() {
    let result = design(3);
    let cert = certify_weak_string_stability(&result, result.gamma_bar).unwrap();
    let scenario = Scenario::standard(3, 5);
    let trace = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    let m = sim::metrics(&trace);
    assert!(cert.bound_holds(m.error_l2, m.disturbance_l2));
}

#[test]
fn lemma1_holds_for_one_hundred_random_multipliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let p: Vec<f64> = (0..100).map(|_| rng.random_range(0.02..2.0)).collect();
    let certs = local_certificates(&p, &LocalSynthesisOptions::default()).unwrap();
    for (i, cert) in certs.iter().enumerate() {
        assert!(
            codesign::lemma1_check(cert),
            "index box violated at draw {i} (p = {})",
            p[i]
        );
    }
}

#[test]
fn mid_platoon_insertion_keeps_certificate_positive() {
    let n = 3;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions::default(),
    )
    .unwrap();
    let mut ledger = outcome.ledger;
    merge(
        &mut ledger,
        &VehicleParams::default(),
        0.25,
        1,
        &costs,
        &DecentralizedOptions::default(),
        &LocalSynthesisOptions::default(),
    )
    .expect("mid-platoon insertion must be feasible");
    assert_eq!(ledger.n(), n + 1);
    // Positions form a permutation of 0..n+1 with the new vehicle at slot 1.
    let mut positions: Vec<usize> = ledger.entries().iter().map(|e| e.position).collect();
    positions.sort_unstable();
    assert_eq!(positions, (0..=n).collect::<Vec<_>>());
    assert_eq!(ledger.entries().last().unwrap().position, 1);

    let w = ledger.full_w().unwrap();
    assert!(sylvester_decompose(&w).unwrap().is_positive());
    let result = ledger.to_result(costs.gamma_bar).unwrap();
    result.gains.structure_check().unwrap();
    assert!(platoon_codesign::linalg::is_hurwitz(
        &result.closed_loop_matrix(),
        1e-9
    ));
}

#[test]
fn rejected_merge_leaves_the_ledger_untouched() {
    let n = 2;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions::default(),
    )
    .unwrap();
    let mut ledger = outcome.ledger;
    let before = ledger.clone();
    // An impossible bound forces the step to report a split, which the merge
    // surface turns into a rejection.
    let mut tight = costs.clone();
    tight.gamma_bar = 1e-6;
    let err = merge(
        &mut ledger,
        &VehicleParams::default(),
        0.5,
        n,
        &tight,
        &DecentralizedOptions::default(),
        &LocalSynthesisOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        codesign::CodesignError::MergeRejected { .. }
    ));
    assert_eq!(ledger.n(), before.n());
    for i in 0..n {
        for j in 0..n {
            assert_eq!(ledger.coupling(i, j), before.coupling(i, j));
        }
    }
}

#[test]
fn result_persistence_round_trips_with_ledger() {
    let n = 3;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions::default(),
    )
    .unwrap();
    let result = &outcome.partitions[0].result;
    let dir = std::env::temp_dir().join("codesign-pipeline-roundtrip");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("dec.json");
    persist::save_result(&path, result, Some(&outcome.ledger), "cfg-hash").unwrap();
    let loaded = persist::load_result(&path).unwrap();
    assert_eq!(loaded.config_sha256, "cfg-hash");
    let mut ledger = loaded.ledger.expect("ledger stored for decentralized runs");
    assert_eq!(ledger.n(), n);
    // The reloaded ledger must accept further merges.
    merge(
        &mut ledger,
        &VehicleParams::default(),
        0.25,
        n,
        &costs,
        &DecentralizedOptions::default(),
        &LocalSynthesisOptions::default(),
    )
    .expect("merge on a reloaded ledger");
    assert_eq!(ledger.n(), n + 1);
    std::fs::remove_file(&path).ok();
}

#[test]
fn string_stability_variant_gives_decreasing_gains_within_partitions() {
    let n = 5;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions {
            string_stability: true,
        },
    )
    .unwrap();
    assert!(!outcome.partitions.is_empty());
    for partition in &outcome.partitions {
        let gh = partition.result.gamma_hats.as_ref().unwrap();
        for pair in gh.windows(2) {
            assert!(
                pair[1] < pair[0],
                "gains must strictly decrease within a partition: {gh:?}"
            );
        }
        assert!(partition.result.gamma_tilde < costs.gamma_bar);
    }
}

#[test]
fn simulated_merge_event_extends_platoon_and_versions_gains() {
    let n = 4;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions::default(),
    )
    .unwrap();
    let result = &outcome.partitions[0].result;
    let mut scenario = Scenario::standard(n, 9);
    scenario.events.push(Event {
        time: 5.0,
        kind: EventKind::Merge {
            params: VehicleParams::default(),
            position: n,
            p_scalar: 0.2,
        },
    });
    let trace = sim::run(
        &scenario,
        &SimDesign::Adaptive {
            result,
            ledger: &outcome.ledger,
            costs: &costs,
        },
    )
    .unwrap();
    assert!(trace.aborted.is_none());
    let merges = trace
        .events
        .iter()
        .filter(|e| matches!(e, sim::EventLog::Merge { .. }))
        .count();
    assert_eq!(merges, 1, "exactly one merge event recorded");
    assert_eq!(trace.vehicles.len(), n + 1);
    let joined = &trace.vehicles[n];
    assert!(joined.joined_at > 0);
    assert!(joined.position[joined.joined_at - 1].is_nan());
    assert!(joined.position[joined.joined_at].is_finite());
    // The newcomer settles: its location error decays after the join.
    let tail = *joined.error_location.last().unwrap();
    assert!(tail.is_finite() && tail.abs() < 5.0);
}

#[test]
fn simulated_split_event_partitions_the_platoon() {
    let n = 4;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let outcome = decentralized_codesign(
        &certs,
        Formulation::I,
        &costs,
        &DecentralizedOptions::default(),
    )
    .unwrap();
    let result = &outcome.partitions[0].result;
    let mut scenario = Scenario::standard(n, 13);
    scenario.events.push(Event {
        time: 4.0,
        kind: EventKind::Split { position: 2 },
    });
    let trace = sim::run(
        &scenario,
        &SimDesign::Adaptive {
            result,
            ledger: &outcome.ledger,
            costs: &costs,
        },
    )
    .unwrap();
    assert!(trace.aborted.is_none());
    let splits = trace
        .events
        .iter()
        .filter(|e| matches!(e, sim::EventLog::Split { .. }))
        .count();
    assert_eq!(splits, 1);
    // All four vehicles keep finite physical states to the end.
    for v in &trace.vehicles {
        assert!(v.position.last().unwrap().is_finite());
        assert!(v.velocity.last().unwrap().is_finite());
    }
}

#[test]
fn nonlinear_plant_matches_direct_triple_integrator_model() {
    // Dual-model oracle: integrate the linear error-free model directly and
    // compare against the nonlinear plant under the linearizing command.
    let params = VehicleParams::default();
    let g = |t: f64| 0.8 * (1.0 - t / 10.0).max(0.0) - 0.2;
    let initial = VehicleState {
        position: -7.5,
        velocity: 2.0,
        acceleration: 0.1,
    };
    let step = 1e-3;
    let horizon = 10.0;
    let nonlinear = integrate_single_vehicle(&params, initial, g, step, horizon);

    // Direct triple-integrator integration with the same scheme.
    let (a, b) = triple_integrator();
    let mut x = Vector3::new(initial.position, initial.velocity, initial.acceleration);
    let mut linear = vec![x];
    let steps = (horizon / step).round() as usize;
    for k in 0..steps {
        let t = k as f64 * step;
        let f = |tt: f64, xx: &Vector3<f64>| a * xx + b * g(tt);
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * step, &(x + k1 * (0.5 * step)));
        let k3 = f(t + 0.5 * step, &(x + k2 * (0.5 * step)));
        let k4 = f(t + step, &(x + k3 * step));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        linear.push(x);
    }
    for (s, l) in nonlinear.iter().zip(&linear) {
        assert!((s.position - l[0]).abs() < 1e-6);
        assert!((s.velocity - l[1]).abs() < 1e-6);
        assert!((s.acceleration - l[2]).abs() < 1e-6);
    }
}

#[test]
fn step_halving_changes_terminal_states_marginally() {
    let result = design(3);
    let mut scenario = Scenario::equilibrium(3, 20.0, 4.0);
    scenario.initial_jitter = true;
    scenario.noise.seed = 3;
    let coarse = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    scenario.step = 5e-4;
    let fine = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    for (a, b) in coarse.vehicles.iter().zip(&fine.vehicles) {
        let (xa, xb) = (a.position.last().unwrap(), b.position.last().unwrap());
        let (va, vb) = (a.velocity.last().unwrap(), b.velocity.last().unwrap());
        assert!(((xa - xb) / xb.abs().max(1.0)).abs() < 1e-5);
        assert!(((va - vb) / vb.abs().max(1.0)).abs() < 1e-5);
    }
}

#[test]
fn identical_seeds_give_bitwise_identical_traces() {
    let result = design(3);
    let scenario = Scenario::standard(3, 77);
    let a = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    let b = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    assert_eq!(a.leader_position, b.leader_position);
    for (va, vb) in a.vehicles.iter().zip(&b.vehicles) {
        assert_eq!(va.position, vb.position);
        assert_eq!(va.velocity, vb.velocity);
        assert_eq!(va.error_location, vb.error_location);
        assert_eq!(va.disturbance[2], vb.disturbance[2]);
    }
}

#[test]
fn formulation_ii_centralized_design_and_simulation() {
    let n = 3;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let costs = CostSpec::default_for(n);
    let result = centralized_codesign(&certs, Formulation::II, &costs).unwrap();
    result.gains.structure_check().unwrap();
    assert!(result.gamma_tilde < costs.gamma_bar);
    let scenario = Scenario::standard(n, 21);
    let trace = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    assert!(trace.aborted.is_none());
    assert_eq!(trace.collisions(), 0);
    let m = sim::metrics(&trace);
    assert!(m.empirical_gain.unwrap() <= costs.gamma_bar * 1.05);
}

#[test]
fn infeasible_bound_reports_diagnostics() {
    let n = 2;
    let certs =
        local_certificates(&uniform_multipliers(n), &LocalSynthesisOptions::default()).unwrap();
    let mut costs = CostSpec::default_for(n);
    costs.gamma_bar = 1e-6;
    let err = centralized_codesign(&certs, Formulation::I, &costs).unwrap_err();
    match err {
        codesign::CodesignError::CentralizedInfeasible { diagnostics } => {
            assert_eq!(diagnostics.len(), n);
        }
        other => panic!("expected infeasibility, got {other}"),
    }
}

#[test]
fn weak_coupling_norm_variants_agree_on_order() {
    let result = design(4);
    let two = codesign::weak_coupling_metric(&result, codesign::CouplingNorm::InducedTwo);
    let fro = codesign::weak_coupling_metric(&result, codesign::CouplingNorm::Frobenius);
    assert!(two.max <= fro.max + 1e-12, "induced 2-norm <= Frobenius");
    assert!(fro.max < 1.0);
}

#[test]
fn metrics_flag_undefined_gain_without_disturbance() {
    let result = design(2);
    let scenario = Scenario::equilibrium(2, 15.0, 2.0);
    let trace = sim::run(&scenario, &SimDesign::Fixed(&result)).unwrap();
    let m = sim::metrics(&trace);
    assert!(m.empirical_gain.is_none());
    assert!(m.error_l2 < 1e-9);
}

#[test]
fn drift_and_linearizing_input_compose_to_zero_acceleration_dynamics() {
    // Spot-check that the actuator command cancels the drift at a few
    // operating points sampled across the envelope.
    let params = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let v = rng.random_range(0.0..45.0);
        let a = rng.random_range(-5.0..5.0);
        let g = rng.random_range(-3.0..3.0);
        let u = linearizing_input(&params, v, a, g);
        let adot = drift(&params, v, a) + u / (params.mass * params.tau);
        assert!((adot - g).abs() < 1e-10);
    }
}

#[test]
fn centralized_result_reanalysis_uses_interconnection_shape() {
    // The analysis re-certification must run against the documented
    // interconnection view (identity disturbance and performance maps).
    let result = design(2);
    let ic = result.interconnection();
    let t = 3 * result.n();
    assert_eq!(ic.m_uw, DMatrix::identity(t, t));
    assert_eq!(ic.m_zy, DMatrix::identity(t, t));
    assert_eq!(ic.m_zw, DMatrix::zeros(t, t));
    assert!(result.reverify().unwrap().is_some());
}
