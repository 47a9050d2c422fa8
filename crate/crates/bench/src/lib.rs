//! Reproducible problem instances for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vucalc_core::{Composite, DMatrix, DVector, QuadraticAtom};

/// Max of `pieces` convex quadratics on ℝ^m with the first `active` tied
/// at `x̄`.
pub fn max_of_quadratics(seed: u64, m: usize, pieces: usize, active: usize) -> (Composite, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xbar = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let atoms = (0..pieces)
        .map(|i| {
            let r = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let a = &r * r.transpose();
            let b = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let value = 0.5 * xbar.dot(&(&a * &xbar)) + b.dot(&xbar);
            let target = if i < active { 1.0 } else { -1.0 };
            QuadraticAtom::new(a, b, target - value).expect("square quadratic term")
        })
        .collect();
    (Composite::max_of(atoms).expect("nonempty pieces"), xbar)
}

/// LASSO objective with every other coordinate of `x̄` at zero.
pub fn lasso(seed: u64, n: usize, rows: usize, tau: f64) -> (Composite, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
    let xbar = DVector::from_fn(n, |i, _| if i % 2 == 0 { rng.random_range(0.5..1.5) } else { 0.0 });
    (Composite::lasso(&a, &b, tau).expect("positive weight"), xbar)
}

/// Dense `rows x cols` matrix of rank `rank`.
pub fn low_rank(seed: u64, rows: usize, cols: usize, rank: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = DMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0));
    let r = DMatrix::from_fn(rank, cols, |_, _| rng.random_range(-1.0..1.0));
    l * r
}
