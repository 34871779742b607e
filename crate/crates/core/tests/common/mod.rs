//! Independent oracles shared by the integration suites. These deliberately
//! avoid the library's certification paths: positive definiteness is checked
//! by dense eigendecomposition of the full matrix, and worst-case gains by a
//! frequency sweep of the transfer function.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use platoon_codesign::blockmat::BlockMatrix;

/// Smallest eigenvalue of the dense symmetric assembly of a block matrix.
pub fn eigen_lambda_min(w: &BlockMatrix) -> f64 {
    platoon_codesign::linalg::lambda_min(&w.to_dense())
}

/// Random symmetric block matrix with `n_blocks` square blocks of `size`,
/// entries uniform in (-1, 1), shifted by `shift * I`.
pub fn random_symmetric_blocks(
    rng: &mut ChaCha8Rng,
    n_blocks: usize,
    size: usize,
    shift: f64,
) -> BlockMatrix {
    let dim = n_blocks * size;
    let mut dense = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            dense[(i, j)] = v;
            dense[(j, i)] = v;
        }
    }
    dense += DMatrix::identity(dim, dim) * shift;
    BlockMatrix::from_dense(&dense, vec![size; n_blocks], vec![size; n_blocks]).unwrap()
}

/// Random Hurwitz system `(A, B, C, D)` with the given state dimension and
/// single input/output.
pub fn random_stable_siso(
    rng: &mut ChaCha8Rng,
    n: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let shift = platoon_codesign::linalg::spectral_abscissa(&a) + rng.random_range(0.3..1.2);
    a -= DMatrix::identity(n, n) * shift;
    let b = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(1, n, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::from_element(1, 1, rng.random_range(-0.5..0.5));
    (a, b, c, d)
}

/// Largest singular value of `C (jw I - A)^{-1} B + D` at one frequency.
fn response_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    omega: f64,
) -> f64 {
    let n = a.nrows();
    let jw_minus_a = DMatrix::<Complex<f64>>::from_fn(n, n, |i, j| {
        let mut v = Complex::new(-a[(i, j)], 0.0);
        if i == j {
            v += Complex::new(0.0, omega);
        }
        v
    });
    let inv = jw_minus_a
        .lu()
        .try_inverse()
        .expect("jw I - A is invertible for Hurwitz A");
    let bc = DMatrix::<Complex<f64>>::from_fn(n, b.ncols(), |i, j| Complex::new(b[(i, j)], 0.0));
    let cc = DMatrix::<Complex<f64>>::from_fn(c.nrows(), n, |i, j| Complex::new(c[(i, j)], 0.0));
    let dc =
        DMatrix::<Complex<f64>>::from_fn(d.nrows(), d.ncols(), |i, j| Complex::new(d[(i, j)], 0.0));
    let g = cc * inv * bc + dc;
    g.singular_values()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
}

/// Worst-case gain estimate by frequency sweep: a wide logarithmic grid plus
/// candidates at the resonant frequencies of `A`, refined twice around the
/// running maximum.
pub fn sweep_hinf_norm(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> f64 {
    let mut candidates: Vec<f64> = vec![0.0];
    for k in 0..=1200 {
        candidates.push(10f64.powf(-4.0 + 8.0 * k as f64 / 1200.0));
    }
    for ev in a.clone().complex_eigenvalues().iter() {
        let wi = ev.im.abs();
        if wi > 0.0 {
            for f in [0.5, 0.8, 0.9, 1.0, 1.1, 1.2, 2.0] {
                candidates.push(wi * f);
            }
        }
    }
    let mut best_w = 0.0;
    let mut best = f64::NEG_INFINITY;
    for &w in &candidates {
        let g = response_gain(a, b, c, d, w);
        if g > best {
            best = g;
            best_w = w;
        }
    }
    // Two rounds of local refinement around the incumbent peak.
    for round in 0..2 {
        let span = if round == 0 { 4.0 } else { 1.05 };
        let lo = (best_w / span).max(0.0);
        let hi = if best_w > 0.0 { best_w * span } else { 1.0 };
        for k in 0..=400 {
            let w = lo + (hi - lo) * k as f64 / 400.0;
            let g = response_gain(a, b, c, d, w);
            if g > best {
                best = g;
                best_w = w;
            }
        }
    }
    best
}
