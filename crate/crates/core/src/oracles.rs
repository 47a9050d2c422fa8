//! Independent checks: finite-difference U-Lagrangian gradients, sampled
//! subdifferentials, brute-force U-spaces and subspace distances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Result, VuError};
use crate::fast_track::FastTrack;
use crate::subdiff::{Horizon, SubdifferentialModel};
use crate::subspace::{ensure_finite_vec, spectral_norm, OrthonormalBasis};
use crate::vu::decompose;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Sampled gradients closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-6;
/// Smallest fraction of draws that must avoid the kink set.
pub const MIN_ACCEPTED_FRACTION: f64 = 0.1;

/// Central-difference estimate of `∇L_U f(0)` using
/// `L̂(u) = f(χ(u)) − ḡᵀV̄v(u)` along the fast track.
pub fn fd_u_lagrangian_gradient(
    f_eval: &dyn Fn(&DVector<f64>) -> f64,
    ft: &FastTrack,
    gbar: &DVector<f64>,
    h_step: f64,
) -> Result<DVector<f64>> {
    check_dim("ri-point length", ft.xbar().len(), gbar.len())?;
    if !(h_step > 0.0 && h_step.is_finite()) {
        return Err(VuError::InvalidParameter(format!(
            "finite-difference step must be positive, got {h_step}"
        )));
    }
    let weights = ft.v_raw().transpose() * gbar;
    let lagrangian = |u: &DVector<f64>| -> Result<f64> {
        let tp = ft.solve_track(u)?;
        Ok(f_eval(&tp.chi) - weights.dot(&tp.v))
    };
    let k = ft.dim_u();
    let mut grad = DVector::zeros(k);
    for i in 0..k {
        let mut e = DVector::zeros(k);
        e[i] = h_step;
        grad[i] = (lagrangian(&e)? - lagrangian(&(-e))?) / (2.0 * h_step);
    }
    Ok(grad)
}

/// Uniform draw from the Euclidean ball of radius `radius` around `center`.
fn ball_point(rng: &mut ChaCha8Rng, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = center.len();
    let mut d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = d.norm();
    if norm > 0.0 {
        d /= norm;
    }
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center + d * r
}

/// Gradients at `n_samples` uniform points of the ball `B(x̄, radius)`,
/// sorted and merged at [`DEDUP_TOL`]. Points where `grad_oracle`
/// returns `None` are treated as kinks and skipped.
pub fn sample_subdifferential(
    grad_oracle: &dyn Fn(&DVector<f64>) -> Option<DVector<f64>>,
    xbar: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<SubdifferentialModel> {
    ensure_finite_vec(xbar)?;
    if !(radius > 0.0 && radius.is_finite()) || n_samples == 0 {
        return Err(VuError::InvalidParameter(
            "sampling needs a positive radius and sample count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x = ball_point(&mut rng, xbar, radius);
        if let Some(g) = grad_oracle(&x) {
            grads.push(g);
        }
    }
    let accepted = grads.len();
    if (accepted as f64) < MIN_ACCEPTED_FRACTION * n_samples as f64 || accepted == 0 {
        return Err(VuError::InsufficientSamples {
            accepted,
            drawn: n_samples,
        });
    }
    grads.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for g in grads {
        if kept.iter().all(|k| (k - &g).norm() > DEDUP_TOL) {
            kept.push(g);
        }
    }
    SubdifferentialModel::new(kept, Horizon::Trivial)
}

/// U-space of a composite computed straight from its subdifferential model.
pub fn brute_force_u_space(model_f: &SubdifferentialModel) -> Result<OrthonormalBasis> {
    Ok(decompose(model_f)?.u_basis)
}

/// Largest principal angle between two subspaces, `+∞` when their
/// dimensions differ.
///
/// Computed as `asin ‖(I − B₁B₁ᵀ)B₂‖₂`, which stays accurate for small
/// angles.
pub fn subspace_distance(b1: &OrthonormalBasis, b2: &OrthonormalBasis) -> Result<f64> {
    check_dim("subspace ambient dimension", b1.ambient_dim(), b2.ambient_dim())?;
    if b1.dim() != b2.dim() {
        return Ok(f64::INFINITY);
    }
    if b1.dim() == 0 {
        return Ok(0.0);
    }
    let m1 = b1.matrix();
    let m2 = b2.matrix();
    let resid: DMatrix<f64> = m2 - m1 * (m1.transpose() * m2);
    let s = spectral_norm(&resid)?;
    Ok(s.clamp(0.0, 1.0).asin())
}

/// Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let directed = |p: &[DVector<f64>], q: &[DVector<f64>]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}
