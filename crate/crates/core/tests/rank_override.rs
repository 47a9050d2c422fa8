//! Runs in its own process because the override is global.

use vucalc_core::subspace::numerical_rank;
use vucalc_core::{rank_tol_override, set_rank_tol_override, DMatrix, RankTol};

#[test]
fn override_replaces_structural_rule() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-7]);
    assert_eq!(numerical_rank(&m, RankTol::structural()).unwrap(), 2);
    set_rank_tol_override(Some(1e-6));
    assert_eq!(rank_tol_override(), Some(1e-6));
    assert_eq!(RankTol::structural(), RankTol::Absolute(1e-6));
    assert_eq!(numerical_rank(&m, RankTol::structural()).unwrap(), 1);
    set_rank_tol_override(Some(-1.0));
    assert_eq!(rank_tol_override(), None);
    set_rank_tol_override(None);
    assert_eq!(RankTol::structural(), RankTol::Relative(1e-10));
}
