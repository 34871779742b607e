//! Property tests for the block-matrix layer: the sequential recursion
//! agrees with the dense eigenvalue oracle, the block element-wise
//! rearrangement is a spectrum-preserving involution, and the network-matrix
//! class is closed under the documented operations.

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use platoon_codesign::blockmat::{
    bew, is_network_matrix, sylvester_decompose, BlockMatError, BlockMatrix, SylvesterOutcome,
    Topology,
};
use platoon_codesign::linalg;

fn symmetric_blocks_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, f64)> {
    (2usize..=5, 1usize..=3)
        .prop_flat_map(|(n_blocks, size)| {
            let dim = n_blocks * size;
            (
                Just(n_blocks),
                Just(size),
                proptest::collection::vec(-1.0f64..1.0, dim * dim),
                0.0f64..4.0,
            )
        })
}

fn assemble_symmetric(n_blocks: usize, size: usize, entries: &[f64], shift: f64) -> BlockMatrix {
    let dim = n_blocks * size;
    let mut dense = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            dense[(i, j)] = entries[k];
            dense[(j, i)] = entries[k];
            k += 1;
        }
    }
    dense += DMatrix::identity(dim, dim) * shift;
    BlockMatrix::from_dense(&dense, vec![size; n_blocks], vec![size; n_blocks]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sylvester_verdict_matches_eigenvalue_sign(
        (n_blocks, size, entries, shift) in symmetric_blocks_strategy()
    ) {
        let w = assemble_symmetric(n_blocks, size, &entries, shift);
        let lambda = common::eigen_lambda_min(&w);
        prop_assume!(lambda.abs() > 1e-8);
        match sylvester_decompose(&w) {
            Ok(SylvesterOutcome::Positive { .. }) => prop_assert!(lambda > 0.0),
            Ok(SylvesterOutcome::NotPositive { .. }) => prop_assert!(lambda < 0.0),
            Err(BlockMatError::IllConditioned { .. }) => prop_assume!(false),
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error: {e}"))),
        }
    }

    #[test]
    fn bew_preserves_symmetry_and_spectrum(
        entries in proptest::collection::vec(-1.0f64..1.0, 36 * 36 / 2 + 18),
        outer in 2usize..=3,
    ) {
        // outer * inner = 6 blocks of size 2.
        let inner = 6 / outer;
        let w = assemble_symmetric(6, 2, &entries, 0.0);
        let out = bew(&w, outer, inner).unwrap();
        prop_assert!(out.is_symmetric(1e-12));
        let a = common::eigen_lambda_min(&w);
        let b = common::eigen_lambda_min(&out);
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        // Involution with the roles swapped.
        let back = bew(&out, inner, outer).unwrap();
        prop_assert_eq!(back.to_dense(), w.to_dense());
    }

    #[test]
    fn network_matrix_class_is_closed_under_the_documented_ops(
        edge_bits in proptest::collection::vec(any::<bool>(), 20),
        entries in proptest::collection::vec(-1.0f64..1.0, 400),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let n = 5;
        let size = 2;
        let mut topo = Topology::new(n);
        let mut bit = 0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    if edge_bits[bit % edge_bits.len()] {
                        topo.add_edge(i, j);
                    }
                    bit += 1;
                }
            }
        }
        let mut k = 0;
        let mut next = || {
            let v = entries[k % entries.len()];
            k += 1;
            v
        };
        // Theta: blocks only on coupled pairs and the diagonal.
        let theta = BlockMatrix::from_fn(vec![size; n], vec![size; n], |i, j| {
            if i == j || topo.coupled(i, j) {
                DMatrix::from_fn(size, size, |_, _| next())
            } else {
                DMatrix::zeros(size, size)
            }
        }).unwrap();
        // Phi: block diagonal.
        let phi = BlockMatrix::from_fn(vec![size; n], vec![size; n], |i, j| {
            if i == j {
                DMatrix::from_fn(size, size, |_, _| next())
            } else {
                DMatrix::zeros(size, size)
            }
        }).unwrap();

        prop_assert!(is_network_matrix(&theta, &topo));
        prop_assert!(is_network_matrix(&phi, &topo));
        prop_assert!(is_network_matrix(&theta.transpose(), &topo));
        let combo = theta.add_scaled(alpha, &phi, beta).unwrap();
        prop_assert!(is_network_matrix(&combo, &topo));
        prop_assert!(is_network_matrix(&phi.matmul(&theta).unwrap(), &topo));
        prop_assert!(is_network_matrix(&theta.matmul(&phi).unwrap(), &topo));
    }

    #[test]
    fn incremental_and_batch_recursions_agree(
        (n_blocks, size, entries, shift) in symmetric_blocks_strategy()
    ) {
        use platoon_codesign::blockmat::{RowOutcome, SylvesterState};
        let w = assemble_symmetric(n_blocks, size, &entries, shift + 2.0);
        prop_assume!(common::eigen_lambda_min(&w) > 1e-6);
        let batch = sylvester_decompose(&w).unwrap();
        let mut state = SylvesterState::new();
        for i in 0..n_blocks {
            let mut row: Vec<DMatrix<f64>> = (0..i).map(|j| w.block(i, j).clone()).collect();
            row.push(linalg::symmetrize(w.block(i, i)));
            match state.push_row(row).unwrap() {
                RowOutcome::Accepted { .. } => {}
                RowOutcome::Rejected { .. } => {
                    return Err(TestCaseError::fail("incremental rejection of a positive matrix"));
                }
            }
        }
        let SylvesterOutcome::Positive { certificates } = batch else {
            return Err(TestCaseError::fail("batch verdict must be positive"));
        };
        for (a, b) in certificates.iter().zip(state.certificates()) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        // The accumulated principal prefix is the original matrix.
        prop_assert!((state.principal_matrix() - w.to_dense()).norm() < 1e-12);
    }
}
