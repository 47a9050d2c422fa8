//! VU-decomposition, U-gradients and fast tracks for structured nonsmooth
//! functions `f = h ∘ Φ`.
//!
//! The crate works with finite generator models of subdifferentials and
//! with primal-dual gradient (PDG) structures made of quadratic atoms.
//! All routines are pure functions over small dense matrices.

pub mod atoms;
pub mod chain;
pub mod composite;
pub mod error;
pub mod fast_track;
pub mod oracles;
pub mod subdiff;
pub mod subspace;
pub mod vu;

pub use nalgebra::{DMatrix, DVector};

pub use atoms::{QuadraticAtom, SmoothFunction, SmoothMap};
pub use chain::{
    compose_vu, compose_vu_spanned, finite_max_compose, l1_compose, l2_regularize,
    nondegeneracy_check, separable_sum, smooth_perturbation, sum_condition_check, sum_rule,
    transversality_check, ChainResult, HypothesisCheck, ManifoldModel, Summand,
};
pub use composite::{Analysis, Composite, OuterAtom, Part, Tolerances};
pub use error::{Result, VuError};
pub use fast_track::{FastTrack, ProbeReport, ProbeRow, TrackPoint};
pub use oracles::{
    brute_force_u_space, fd_u_lagrangian_gradient, hausdorff_distance, sample_subdifferential,
    subspace_distance,
};
pub use subdiff::{Horizon, NonsmoothAtom, SubdifferentialModel};
pub use subspace::{
    rank_tol_override, set_rank_tol_override, OrthonormalBasis, RankTol, VuPair,
};
pub use vu::{
    check_pdg_consistency, decompose, decompose_pdg, strong_transversality, u_gradient,
    PdgStructure, UGradientResult,
};
