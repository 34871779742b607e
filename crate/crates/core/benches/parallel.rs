//! Benchmarks for the data-parallel batch surfaces.
//!
//! The same entry points fan out over rayon with the default `parallel`
//! feature and degrade to sequential loops without it, so the comparison is
//! run as two baselines:
//!
//! ```text
//! cargo bench -p platoon-codesign --bench parallel -- --save-baseline parallel
//! cargo bench -p platoon-codesign --bench parallel --no-default-features -- --baseline parallel
//! ```

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand::SeedableRng;

use platoon_codesign::blockmat::{sylvester_decompose, BlockMatrix};
use platoon_codesign::codesign::{
    centralized_codesign, local_certificates, uniform_multipliers, CostSpec,
};
use platoon_codesign::dissipativity::LocalSynthesisOptions;
use platoon_codesign::platoon::Formulation;
use platoon_codesign::sim::{run_batch, Scenario};

/// Nine independent per-vehicle controller syntheses (one conic solve each).
fn local_synthesis_batch(c: &mut Criterion) {
    c.bench_function("local_synthesis_batch_9", |b| {
        b.iter(|| {
            let certs = local_certificates(
                &uniform_multipliers(9),
                &LocalSynthesisOptions::default(),
            )
            .unwrap();
            black_box(certs.len())
        })
    });
}

/// Four seeded ten-second closed-loop runs against one fixed design.
fn simulation_batch(c: &mut Criterion) {
    let certs =
        local_certificates(&uniform_multipliers(5), &LocalSynthesisOptions::default()).unwrap();
    let result = centralized_codesign(&certs, Formulation::I, &CostSpec::default_for(5)).unwrap();
    let scenarios: Vec<Scenario> = (0..4).map(|s| Scenario::standard(5, s as u64)).collect();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("batch_4_runs_5_vehicles", |b| {
        b.iter(|| {
            let traces = run_batch(&scenarios, &result);
            black_box(traces.iter().filter(|t| t.is_ok()).count())
        })
    });
    group.finish();
}

/// Sequential-by-nature baseline: the positive-definiteness recursion over a
/// nine-block certificate-sized matrix.
fn sylvester_recursion(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let dim = 9 * 12;
    let mut dense = nalgebra::DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            dense[(i, j)] = v;
            dense[(j, i)] = v;
        }
    }
    dense += nalgebra::DMatrix::identity(dim, dim) * (dim as f64);
    let w = BlockMatrix::from_dense(&dense, vec![12; 9], vec![12; 9]).unwrap();
    c.bench_function("sylvester_9x12", |b| {
        b.iter(|| black_box(sylvester_decompose(&w).unwrap().is_positive()))
    });
}

criterion_group!(
    benches,
    local_synthesis_batch,
    simulation_batch,
    sylvester_recursion
);
criterion_main!(benches);
