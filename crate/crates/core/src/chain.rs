//! Chain rule for `f = h ∘ Φ` and the calculus rules derived from it.

use nalgebra::{DMatrix, DVector};

use crate::atoms::{QuadraticAtom, SmoothFunction, SmoothMap};
use crate::error::{check_dim, Result, VuError};
use crate::subdiff::{
    active_set, minkowski_difference_span, minkowski_sum, pushforward, sign_pattern, zero_set,
    Horizon, NonsmoothAtom, SubdifferentialModel,
};
use crate::subspace::{
    ensure_finite, ensure_finite_vec, hstack, intersect_subspaces, null_space, numerical_rank_scaled,
    orthonormal_complement, orthonormal_range_scaled, restrict_u, OrthonormalBasis, RankTol, VuPair,
};
use crate::vu::UGradientResult;

/// Normal and tangent spaces of an active manifold at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldModel {
    normal_basis: OrthonormalBasis,
    tangent_basis: OrthonormalBasis,
}

impl ManifoldModel {
    pub fn from_normal(normal_basis: OrthonormalBasis) -> Self {
        let tangent_basis = orthonormal_complement(&normal_basis);
        ManifoldModel {
            normal_basis,
            tangent_basis,
        }
    }

    /// Manifold whose normal space is the V-space and tangent space the
    /// U-space.
    pub fn from_vu(vu: &VuPair) -> Self {
        ManifoldModel {
            normal_basis: vu.v_basis.clone(),
            tangent_basis: vu.u_basis.clone(),
        }
    }

    /// Normal space spanned by arbitrary columns.
    pub fn from_normal_columns(cols: &DMatrix<f64>) -> Result<Self> {
        let b = orthonormal_range_scaled(cols, RankTol::structural(), 1.0)?;
        Ok(Self::from_normal(b))
    }

    /// The whole space: trivial normal space.
    pub fn whole_space(n: usize) -> Self {
        Self::from_normal(OrthonormalBasis::empty(n))
    }

    /// `{z : z_i = z_j for i, j ∈ active}`, the manifold on which the
    /// coordinate max keeps the active set.
    pub fn max_active(n: usize, active: &[usize]) -> Result<Self> {
        let mut cols = DMatrix::zeros(n, active.len().saturating_sub(1));
        for (k, &i) in active.iter().skip(1).enumerate() {
            cols[(i, k)] = 1.0;
            cols[(active[0], k)] = -1.0;
        }
        Self::from_normal_columns(&cols)
    }

    /// `{z : z_i = 0 for i ∈ zeros}`, the manifold on which ℓ1 keeps its
    /// zero pattern.
    pub fn zero_pattern(n: usize, zeros: &[usize]) -> Self {
        Self::from_normal(OrthonormalBasis::coordinate(n, zeros))
    }

    pub fn ambient_dim(&self) -> usize {
        self.normal_basis.ambient_dim()
    }

    pub fn normal_basis(&self) -> &OrthonormalBasis {
        &self.normal_basis
    }

    pub fn tangent_basis(&self) -> &OrthonormalBasis {
        &self.tangent_basis
    }
}

/// U-space and U-gradient of a composite in its domain ℝᵐ.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainResult {
    pub u_basis: OrthonormalBasis,
    /// `Ū Ūᵀ ḡ_f` with `ḡ_f = Jᵀ ḡ`.
    pub u_gradient: DVector<f64>,
    /// `Ūᵀ ḡ_f`.
    pub u_lagrangian_gradient: DVector<f64>,
    /// Relative-interior subgradient `ḡ_f` of the composite.
    pub gbar: DVector<f64>,
    /// `Jᵀ ∂h`, when it fits the generator budget.
    pub pushforward_model: Option<SubdifferentialModel>,
    /// False only when the computation was forced past a failed hypothesis.
    pub transversality_verified: bool,
}

impl ChainResult {
    fn from_u_and_gbar(
        u_basis: OrthonormalBasis,
        gbar: DVector<f64>,
        pushforward_model: Option<SubdifferentialModel>,
        transversality_verified: bool,
    ) -> Self {
        let lag = u_basis.matrix().transpose() * &gbar;
        ChainResult {
            u_gradient: u_basis.matrix() * &lag,
            u_lagrangian_gradient: lag,
            u_basis,
            gbar,
            pushforward_model,
            transversality_verified,
        }
    }

    pub fn vu_pair(&self) -> VuPair {
        VuPair::from_u_basis(self.u_basis.clone())
    }

    pub fn ambient_dim(&self) -> usize {
        self.u_basis.ambient_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisCheck {
    pub holds: bool,
    pub witness: Option<DVector<f64>>,
}

/// `Φ` is transversal to `M` when no nonzero normal vector `z` has
/// `Jᵀ z = 0`, i.e. `rank(Jᵀ N) = dim N`.
pub fn transversality_check(j: &DMatrix<f64>, m: &ManifoldModel) -> Result<HypothesisCheck> {
    check_dim("manifold ambient dimension", j.nrows(), m.ambient_dim())?;
    ensure_finite(j)?;
    let n_basis = m.normal_basis.matrix();
    let k = n_basis.ncols();
    if k == 0 {
        return Ok(HypothesisCheck {
            holds: true,
            witness: None,
        });
    }
    let b = j.transpose() * n_basis;
    let reference = j.norm();
    let rank = numerical_rank_scaled(&b, RankTol::structural(), reference)?;
    if rank == k {
        return Ok(HypothesisCheck {
            holds: true,
            witness: None,
        });
    }
    // rank < k, so the kernel of JᵀN is nontrivial.
    let kernel = null_space(&b, RankTol::structural(), reference)?;
    let mut z = n_basis * kernel.matrix().column(0);
    let norm = z.norm();
    if norm > 0.0 {
        z /= norm;
    }
    if z[z.iamax()] < 0.0 {
        z.neg_mut();
    }
    Ok(HypothesisCheck {
        holds: false,
        witness: Some(z),
    })
}

/// Nondegeneracy of `h` at `Φ(x̄)`: trivial for finite convex `h`, and
/// equivalent to transversality for `h` restricted to a manifold.
pub fn nondegeneracy_check(model: &SubdifferentialModel, j: &DMatrix<f64>) -> Result<HypothesisCheck> {
    check_dim("Jacobian rows", model.ambient_dim(), j.nrows())?;
    match model.horizon() {
        Horizon::Trivial => Ok(HypothesisCheck {
            holds: true,
            witness: None,
        }),
        Horizon::Manifold(m) => transversality_check(j, m),
        Horizon::Unknown => Err(VuError::MissingHorizonInfo),
    }
}

/// U-space and U-gradient of `h ∘ Φ` at `x̄` from `∂h(Φ(x̄))`, the Jacobian
/// `J = ∇Φ(x̄)` (`n x m`) and the active manifold of `h`.
///
/// U is the set of directions `d` with `dᵀJᵀ(g − ḡ) = 0` for every
/// generator `g`. Refuses to run when transversality fails unless `force`
/// is set, in which case the result is flagged as unverified.
pub fn compose_vu(
    model: &SubdifferentialModel,
    j: &DMatrix<f64>,
    m: &ManifoldModel,
    force: bool,
) -> Result<ChainResult> {
    check_dim("Jacobian rows", model.ambient_dim(), j.nrows())?;
    let t = transversality_check(j, m)?;
    if !t.holds && !force {
        return Err(VuError::TransversalityViolated {
            witness: t.witness.unwrap_or_else(|| DVector::zeros(j.nrows())),
        });
    }
    let push = pushforward(model, j)?;
    let rows = minkowski_difference_span(&push).transpose();
    let u_basis = chain_u_basis(&rows, j.ncols(), push.scale())?;
    let gbar = push.ri_point().clone();
    Ok(ChainResult::from_u_and_gbar(u_basis, gbar, Some(push), t.holds))
}

/// As [`compose_vu`], from a spanning set `diff_span` (`n x k`) of
/// `∂h − ḡ` and the ri-point `ḡ` instead of a generator list. Used when
/// the generator list would exceed the budget.
pub fn compose_vu_spanned(
    diff_span: &DMatrix<f64>,
    gbar: &DVector<f64>,
    j: &DMatrix<f64>,
    m: &ManifoldModel,
    force: bool,
) -> Result<ChainResult> {
    check_dim("difference span rows", j.nrows(), diff_span.nrows())?;
    check_dim("ri-point length", j.nrows(), gbar.len())?;
    ensure_finite(diff_span)?;
    ensure_finite_vec(gbar)?;
    let t = transversality_check(j, m)?;
    if !t.holds && !force {
        return Err(VuError::TransversalityViolated {
            witness: t.witness.unwrap_or_else(|| DVector::zeros(j.nrows())),
        });
    }
    let jt = j.transpose();
    let pushed = &jt * diff_span;
    let gbar_f = &jt * gbar;
    let scale = pushed
        .column_iter()
        .map(|c| c.norm())
        .fold(gbar_f.norm(), f64::max);
    let u_basis = chain_u_basis(&pushed.transpose(), j.ncols(), scale)?;
    Ok(ChainResult::from_u_and_gbar(u_basis, gbar_f, None, t.holds))
}

fn chain_u_basis(rows: &DMatrix<f64>, m: usize, scale: f64) -> Result<OrthonormalBasis> {
    if rows.nrows() == 0 {
        Ok(OrthonormalBasis::identity(m))
    } else {
        null_space(rows, RankTol::structural(), scale)
    }
}

/// Adds a smooth term `q`: the U-space is unchanged and the U-gradient
/// gains `Ū Ūᵀ ∇q`.
pub fn smooth_perturbation(p: &UGradientResult, grad_q: &DVector<f64>) -> Result<UGradientResult> {
    check_dim("smooth perturbation gradient", p.vu.ambient_dim(), grad_q.len())?;
    ensure_finite_vec(grad_q)?;
    let lag_q = restrict_u(grad_q, &p.vu.u_basis)?;
    Ok(UGradientResult {
        u_gradient: &p.u_gradient + p.vu.u_basis.matrix() * &lag_q,
        u_lagrangian_gradient: &p.u_lagrangian_gradient + lag_q,
        vu: p.vu.clone(),
        ri_point_used: &p.ri_point_used + grad_q,
    })
}

/// Adds `(λ/2)‖x‖²`.
pub fn l2_regularize(p: &UGradientResult, lambda: f64, xbar: &DVector<f64>) -> Result<UGradientResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(VuError::InvalidParameter(format!(
            "regularization weight must be positive, got {lambda}"
        )));
    }
    smooth_perturbation(p, &(xbar * lambda))
}

/// Direct-sum test on normal spaces:
/// `rank([N_1 | … | N_k]) = Σ dim N_i`.
pub fn sum_condition_check(manifolds: &[ManifoldModel]) -> Result<bool> {
    let Some(first) = manifolds.first() else {
        return Ok(true);
    };
    let n = first.ambient_dim();
    for m in manifolds {
        check_dim("sum rule manifold ambient dimension", n, m.ambient_dim())?;
    }
    let blocks: Vec<&DMatrix<f64>> = manifolds.iter().map(|m| m.normal_basis.matrix()).collect();
    let stacked = hstack(n, &blocks);
    let total = stacked.ncols();
    Ok(numerical_rank_scaled(&stacked, RankTol::structural(), 1.0)? == total)
}

/// One summand of [`sum_rule`].
#[derive(Clone, Debug)]
pub struct Summand {
    pub model: SubdifferentialModel,
    pub manifold: ManifoldModel,
    pub vu: VuPair,
}

impl Summand {
    /// Summand whose active manifold has the V-space as normal space.
    pub fn from_model(model: SubdifferentialModel) -> Result<Self> {
        let vu = crate::vu::decompose(&model)?;
        Ok(Summand {
            manifold: ManifoldModel::from_vu(&vu),
            model,
            vu,
        })
    }
}

/// `U = ∩ U_i` and `∇_U f = Ū Ūᵀ Σ ḡ_i`.
pub fn sum_rule(summands: &[Summand]) -> Result<ChainResult> {
    let first = summands
        .first()
        .ok_or_else(|| VuError::InvalidParameter("empty sum".into()))?;
    let n = first.model.ambient_dim();
    for s in summands {
        check_dim("summand dimension", n, s.model.ambient_dim())?;
        check_dim("summand VU dimension", n, s.vu.ambient_dim())?;
    }
    let manifolds: Vec<ManifoldModel> = summands.iter().map(|s| s.manifold.clone()).collect();
    if !sum_condition_check(&manifolds)? {
        return Err(VuError::SumRuleConditionViolated);
    }
    let us: Vec<OrthonormalBasis> = summands.iter().map(|s| s.vu.u_basis.clone()).collect();
    let u_basis = intersect_subspaces(&us)?;
    let mut gbar = DVector::zeros(n);
    for s in summands {
        gbar += s.model.ri_point();
    }
    let models: Vec<SubdifferentialModel> = summands.iter().map(|s| s.model.clone()).collect();
    let total = minkowski_sum(&models).ok();
    Ok(ChainResult::from_u_and_gbar(u_basis, gbar, total, true))
}

/// Function of disjoint variable blocks: block-diagonal U-basis and
/// concatenated U-gradients.
pub fn separable_sum(blocks: &[ChainResult]) -> Result<ChainResult> {
    let n: usize = blocks.iter().map(|b| b.ambient_dim()).sum();
    let k: usize = blocks.iter().map(|b| b.u_basis.dim()).sum();
    let mut u = DMatrix::zeros(n, k);
    let mut gbar = DVector::zeros(n);
    let mut u_grad = DVector::zeros(n);
    let mut lag = DVector::zeros(k);
    let (mut row, mut col) = (0, 0);
    for b in blocks {
        let (ni, ki) = (b.ambient_dim(), b.u_basis.dim());
        u.view_mut((row, col), (ni, ki)).copy_from(b.u_basis.matrix());
        gbar.rows_mut(row, ni).copy_from(&b.gbar);
        u_grad.rows_mut(row, ni).copy_from(&b.u_gradient);
        lag.rows_mut(col, ki).copy_from(&b.u_lagrangian_gradient);
        row += ni;
        col += ki;
    }
    let model = blocks
        .iter()
        .scan(0, |offset, b| {
            let idx: Vec<usize> = (*offset..*offset + b.ambient_dim()).collect();
            *offset += b.ambient_dim();
            Some(b.pushforward_model.as_ref().map(|m| m.embed(n, &idx)))
        })
        .collect::<Option<Result<Vec<_>>>>()
        .transpose()?
        .and_then(|ms| minkowski_sum(&ms).ok());
    Ok(ChainResult {
        u_basis: OrthonormalBasis::from_columns_unchecked(u),
        u_gradient: u_grad,
        u_lagrangian_gradient: lag,
        gbar,
        pushforward_model: model,
        transversality_verified: blocks.iter().all(|b| b.transversality_verified),
    })
}

/// `f + τ‖·‖₁` at `x̄` from the sign pattern of `x̄`, without enumerating
/// the sign box.
pub fn l1_compose(f: &QuadraticAtom, tau: f64, xbar: &DVector<f64>, zero_tol: f64) -> Result<ChainResult> {
    check_dim("ℓ1 composite point", f.dim(), xbar.len())?;
    ensure_finite_vec(xbar)?;
    let atom = NonsmoothAtom::l1_norm(tau)?;
    let n = xbar.len();
    let zeros = zero_set(xbar, zero_tol);
    let support: Vec<usize> = (0..n).filter(|i| !zeros.contains(i)).collect();
    let u_basis = OrthonormalBasis::coordinate(n, &support);
    let gbar = f.gradient(xbar) + sign_pattern(xbar, zero_tol) * tau;
    let model = atom
        .with_active_tol(zero_tol)?
        .subdifferential(xbar)
        .ok()
        .and_then(|l1| minkowski_sum(&[SubdifferentialModel::singleton(f.gradient(xbar)), l1]).ok());
    Ok(ChainResult::from_u_and_gbar(u_basis, gbar, model, true))
}

/// `max_i Φ_i` at `x̄` through the chain rule, after checking that the
/// active gradients are affinely independent.
pub fn finite_max_compose(phi: &SmoothMap, xbar: &DVector<f64>, active_tol: f64) -> Result<ChainResult> {
    let y = phi.eval(xbar)?;
    let j = phi.jacobian(xbar)?;
    let active = active_set(&y, active_tol);
    affine_independence(&j, &active)?;
    let model = NonsmoothAtom::coordinate_max()
        .with_active_tol(active_tol)?
        .subdifferential(&y)?;
    let manifold = ManifoldModel::max_active(y.len(), &active)?;
    compose_vu(&model, &j, &manifold, false)
}

/// Errors unless the rows `J_i` for `i ∈ active` are affinely independent.
pub fn affine_independence(j: &DMatrix<f64>, active: &[usize]) -> Result<()> {
    let needed = active.len().saturating_sub(1);
    if needed == 0 {
        return Ok(());
    }
    let mut diffs = DMatrix::zeros(j.ncols(), needed);
    let base = j.row(active[0]).transpose();
    let mut scale = base.norm();
    for (k, &i) in active.iter().skip(1).enumerate() {
        let r = j.row(i).transpose();
        scale = scale.max(r.norm());
        diffs.set_column(k, &(r - &base));
    }
    let rank = numerical_rank_scaled(&diffs, RankTol::structural(), scale)?;
    if rank == needed {
        Ok(())
    } else {
        Err(VuError::AffineDependence { rank, needed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::subspace_distance;
    use crate::vu::{decompose, u_gradient};
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn e(n: usize, i: usize) -> OrthonormalBasis {
        OrthonormalBasis::coordinate(n, &[i])
    }

    #[test]
    fn transversality_examples() {
        // Φ(x, y) = (x², y) at the origin.
        let j = dmatrix![0.0, 0.0; 0.0, 1.0];
        let m = ManifoldModel::from_normal(e(2, 0));
        let t = transversality_check(&j, &m).unwrap();
        assert!(!t.holds);
        let z = t.witness.unwrap();
        assert_abs_diff_eq!(z, dvector![1.0, 0.0], epsilon = 1e-12);

        assert!(transversality_check(&DMatrix::identity(3, 3), &ManifoldModel::from_normal(OrthonormalBasis::identity(3))).unwrap().holds);
        // Surjective 2x3 Jacobian.
        let j = dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, 1.0];
        assert!(transversality_check(&j, &ManifoldModel::from_normal(OrthonormalBasis::identity(2))).unwrap().holds);
        assert!(matches!(
            transversality_check(&j, &ManifoldModel::whole_space(3)),
            Err(VuError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn witness_lies_in_normal_space_and_is_annihilated() {
        let j = dmatrix![1.0, 1.0; 1.0, 1.0; 0.0, 2.0];
        let n = OrthonormalBasis::new(dmatrix![
            1.0 / 2f64.sqrt(), 0.0;
            -1.0 / 2f64.sqrt(), 0.0;
            0.0, 1.0
        ])
        .unwrap();
        let t = transversality_check(&j, &ManifoldModel::from_normal(n.clone())).unwrap();
        assert!(!t.holds);
        let z = t.witness.unwrap();
        assert_abs_diff_eq!(z.norm(), 1.0, epsilon = 1e-12);
        assert!(n.residual(&z) <= 1e-12);
        assert!((j.transpose() * z).norm() <= 1e-10);
    }

    #[test]
    fn nondegeneracy_examples() {
        let j = dmatrix![0.0, 0.0; 0.0, 1.0];
        let convex = NonsmoothAtom::coordinate_max().subdifferential(&dvector![0.0, 0.0]).unwrap();
        assert!(nondegeneracy_check(&convex, &j).unwrap().holds);

        let manifold = ManifoldModel::from_normal(e(2, 0));
        let restricted = convex.clone().with_horizon(Horizon::Manifold(manifold));
        assert!(!nondegeneracy_check(&restricted, &j).unwrap().holds);
        assert!(nondegeneracy_check(&restricted, &DMatrix::identity(2, 2)).unwrap().holds);

        let unknown = convex.with_horizon(Horizon::Unknown);
        assert!(matches!(nondegeneracy_check(&unknown, &j), Err(VuError::MissingHorizonInfo)));
    }

    #[test]
    fn compose_abs_via_max() {
        // max(y₁, y₂) with Φ(x) = (x₁, −x₁) gives |x₁|.
        let j = dmatrix![1.0, 0.0; -1.0, 0.0];
        let model = NonsmoothAtom::coordinate_max().subdifferential(&dvector![0.0, 0.0]).unwrap();
        let m = ManifoldModel::max_active(2, &[0, 1]).unwrap();
        let r = compose_vu(&model, &j, &m, false).unwrap();
        assert_eq!(r.u_basis.matrix(), &dmatrix![0.0; 1.0]);
        assert_abs_diff_eq!(r.u_gradient, dvector![0.0, 0.0], epsilon = 1e-15);
        assert!(r.transversality_verified);
    }

    #[test]
    fn compose_refuses_without_transversality() {
        let j = dmatrix![0.0, 0.0; 0.0, 1.0];
        let model = NonsmoothAtom::coordinate_max().subdifferential(&dvector![0.0, 0.0]).unwrap();
        let m = ManifoldModel::from_normal(e(2, 0));
        assert!(matches!(
            compose_vu(&model, &j, &m, false),
            Err(VuError::TransversalityViolated { .. })
        ));
        let forced = compose_vu(&model, &j, &m, true).unwrap();
        assert!(!forced.transversality_verified);
    }

    #[test]
    fn compose_with_identity_matches_decompose() {
        let model = SubdifferentialModel::new(
            vec![dvector![1.0, 2.0, 0.0], dvector![-1.0, 0.5, 1.0], dvector![0.0, 0.0, 3.0]],
            Horizon::Trivial,
        )
        .unwrap();
        let vu = decompose(&model).unwrap();
        let direct = u_gradient(&vu, model.ri_point()).unwrap();
        let r = compose_vu(&model, &DMatrix::identity(3, 3), &ManifoldModel::from_vu(&vu), false).unwrap();
        assert!(subspace_distance(&r.u_basis, &vu.u_basis).unwrap() <= 1e-12);
        assert_abs_diff_eq!(r.u_gradient, direct.u_gradient, epsilon = 1e-12);
    }

    #[test]
    fn lasso_through_chain_rule() {
        // ½‖x − b‖² + 0.1‖x‖₁ at (0.5, 0) with b = (1, 0).
        let f = QuadraticAtom::least_squares(&DMatrix::identity(2, 2), &dvector![1.0, 0.0]).unwrap();
        let xbar = dvector![0.5, 0.0];
        let r = l1_compose(&f, 0.1, &xbar, 1e-10).unwrap();
        assert_eq!(r.u_basis.matrix(), &dmatrix![1.0; 0.0]);
        assert_abs_diff_eq!(r.u_gradient, dvector![-0.4, 0.0], epsilon = 1e-15);

        // Same answer from compose_vu applied to h(y) = f(y) + τ‖y‖₁ with Φ = Id.
        let model = minkowski_sum(&[
            SubdifferentialModel::singleton(f.gradient(&xbar)),
            NonsmoothAtom::l1_norm(0.1).unwrap().subdifferential(&xbar).unwrap(),
        ])
        .unwrap();
        let m = ManifoldModel::zero_pattern(2, &[1]);
        let c = compose_vu(&model, &DMatrix::identity(2, 2), &m, false).unwrap();
        assert!(subspace_distance(&c.u_basis, &r.u_basis).unwrap() <= 1e-12);
        assert_abs_diff_eq!(c.u_gradient, r.u_gradient, epsilon = 1e-12);
    }

    #[test]
    fn l1_compose_edge_cases() {
        let f = QuadraticAtom::new(DMatrix::identity(3, 3), dvector![1.0, -1.0, 0.5], 0.0).unwrap();
        let xbar = dvector![1.0, -2.0, 0.5];
        let r = l1_compose(&f, 0.3, &xbar, 1e-10).unwrap();
        assert_eq!(r.u_basis.dim(), 3);
        let expected = f.gradient(&xbar) + dvector![0.3, -0.3, 0.3];
        assert_abs_diff_eq!(r.u_gradient, expected, epsilon = 1e-15);

        let r = l1_compose(&f, 0.3, &DVector::zeros(3), 1e-10).unwrap();
        assert_eq!(r.u_basis.dim(), 0);
        assert_eq!(r.u_gradient, DVector::zeros(3));
        assert!(l1_compose(&f, 0.0, &xbar, 1e-10).is_err());
    }

    #[test]
    fn smooth_perturbation_examples() {
        // |x₁| in ℝ² at the origin.
        let model = NonsmoothAtom::l1_norm(1.0)
            .unwrap()
            .subdifferential(&dvector![0.0])
            .unwrap()
            .embed(2, &[0])
            .unwrap();
        let vu = decompose(&model).unwrap();
        let p = u_gradient(&vu, model.ri_point()).unwrap();
        let same = smooth_perturbation(&p, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(same, p);
        let q = smooth_perturbation(&p, &dvector![0.0, 1.0]).unwrap();
        assert_eq!(q.u_gradient, dvector![0.0, 1.0]);
        assert_eq!(q.vu, p.vu);
        let v_dir = smooth_perturbation(&p, &dvector![5.0, 0.0]).unwrap();
        assert_eq!(v_dir.u_gradient, p.u_gradient);
        assert!(smooth_perturbation(&p, &dvector![1.0]).is_err());
    }

    #[test]
    fn l2_regularize_examples() {
        let xbar = dvector![3.0, 0.0];
        let model = NonsmoothAtom::l1_norm(1.0).unwrap().subdifferential(&xbar).unwrap();
        let vu = decompose(&model).unwrap();
        let p = u_gradient(&vu, model.ri_point()).unwrap();
        let r = l2_regularize(&p, 2.0, &xbar).unwrap();
        assert_eq!(r.vu.u_basis.matrix(), &dmatrix![1.0; 0.0]);
        assert_abs_diff_eq!(r.u_gradient, dvector![7.0, 0.0], epsilon = 1e-12);
        assert_eq!(l2_regularize(&p, 2.0, &DVector::zeros(2)).unwrap().u_gradient, p.u_gradient);
        assert_eq!(l2_regularize(&p, 2.0, &dvector![0.0, 4.0]).unwrap().u_gradient, p.u_gradient);
        assert!(l2_regularize(&p, -1.0, &xbar).is_err());
    }

    #[test]
    fn sum_condition_examples() {
        let x_axis = ManifoldModel::from_normal(e(2, 0));
        assert!(!sum_condition_check(&[x_axis.clone(), x_axis.clone()]).unwrap());
        assert!(sum_condition_check(std::slice::from_ref(&x_axis)).unwrap());
        assert!(sum_condition_check(&[x_axis, ManifoldModel::from_normal(e(2, 1))]).unwrap());
    }

    fn abs_coordinate(n: usize, i: usize) -> Summand {
        let model = NonsmoothAtom::abs_value(1.0)
            .unwrap()
            .subdifferential(&dvector![0.0])
            .unwrap()
            .embed(n, &[i])
            .unwrap();
        Summand::from_model(model).unwrap()
    }

    #[test]
    fn sum_rule_examples() {
        let r = sum_rule(&[abs_coordinate(2, 0), abs_coordinate(2, 1)]).unwrap();
        assert_eq!(r.u_basis.dim(), 0);
        assert_eq!(r.u_gradient, DVector::zeros(2));

        let single = sum_rule(&[abs_coordinate(2, 0)]).unwrap();
        assert_eq!(single.u_basis.matrix(), &dmatrix![0.0; 1.0]);

        // |x₁| + |x₁|: both normal spaces are the x-axis.
        assert!(matches!(
            sum_rule(&[abs_coordinate(2, 0), abs_coordinate(2, 0)]),
            Err(VuError::SumRuleConditionViolated)
        ));
    }

    #[test]
    fn separable_sum_examples() {
        // |x| block and y² block at ȳ = 1.
        let abs = compose_vu(
            &NonsmoothAtom::abs_value(1.0).unwrap().subdifferential(&dvector![0.0]).unwrap(),
            &DMatrix::identity(1, 1),
            &ManifoldModel::from_normal(OrthonormalBasis::identity(1)),
            false,
        )
        .unwrap();
        let sq = l1_free_smooth(dvector![2.0]);
        let r = separable_sum(&[abs.clone(), sq.clone()]).unwrap();
        assert_eq!(r.u_basis.matrix(), &dmatrix![0.0; 1.0]);
        assert_eq!(r.u_gradient, dvector![0.0, 2.0]);

        let swapped = separable_sum(&[sq, abs]).unwrap();
        assert_eq!(swapped.u_basis.matrix(), &dmatrix![1.0; 0.0]);
        assert_eq!(swapped.u_gradient, dvector![2.0, 0.0]);

        let two_smooth = separable_sum(&[l1_free_smooth(dvector![1.0]), l1_free_smooth(dvector![3.0, 4.0])]).unwrap();
        assert_eq!(two_smooth.u_basis.dim(), 3);
        assert_eq!(two_smooth.u_gradient, dvector![1.0, 3.0, 4.0]);
    }

    fn l1_free_smooth(g: DVector<f64>) -> ChainResult {
        let n = g.len();
        compose_vu(
            &SubdifferentialModel::singleton(g),
            &DMatrix::identity(n, n),
            &ManifoldModel::whole_space(n),
            false,
        )
        .unwrap()
    }

    #[test]
    fn finite_max_examples() {
        // Single active piece.
        let phi = SmoothMap::new(
            2,
            vec![
                QuadraticAtom::affine(dvector![1.0, 2.0], 1.0).unwrap(),
                QuadraticAtom::affine(dvector![0.0, 1.0], 0.0).unwrap(),
            ],
        )
        .unwrap();
        let r = finite_max_compose(&phi, &dvector![0.0, 0.0], 1e-8).unwrap();
        assert_eq!(r.u_basis.dim(), 2);
        assert_abs_diff_eq!(r.u_gradient, dvector![1.0, 2.0], epsilon = 1e-12);

        // max(x₁, −x₁) in ℝ³.
        let phi = SmoothMap::new(
            3,
            vec![
                QuadraticAtom::coordinate(3, 0),
                QuadraticAtom::affine(dvector![-1.0, 0.0, 0.0], 0.0).unwrap(),
            ],
        )
        .unwrap();
        let r = finite_max_compose(&phi, &DVector::zeros(3), 1e-8).unwrap();
        let expected = OrthonormalBasis::coordinate(3, &[1, 2]);
        assert!(subspace_distance(&r.u_basis, &expected).unwrap() <= 1e-12);
        assert_abs_diff_eq!(r.u_gradient, DVector::zeros(3), epsilon = 1e-15);

        // Two quadratics with active gradients (1, 0) and (−1, 0) at the origin.
        let phi = SmoothMap::new(
            2,
            vec![
                QuadraticAtom::new(dmatrix![1.0, 0.0; 0.0, 2.0], dvector![1.0, 0.0], 0.0).unwrap(),
                QuadraticAtom::new(dmatrix![3.0, 1.0; 1.0, 1.0], dvector![-1.0, 0.0], 0.0).unwrap(),
            ],
        )
        .unwrap();
        let r = finite_max_compose(&phi, &dvector![0.0, 0.0], 1e-8).unwrap();
        assert!(subspace_distance(&r.u_basis, &e(2, 1)).unwrap() <= 1e-12);
        let brute = decompose(r.pushforward_model.as_ref().unwrap()).unwrap();
        assert!(subspace_distance(&r.u_basis, &brute.u_basis).unwrap() <= 1e-12);
    }

    #[test]
    fn finite_max_rejects_affine_dependence() {
        let g = dvector![1.0, 1.0];
        let phi = SmoothMap::new(
            2,
            vec![
                QuadraticAtom::affine(g.clone(), 0.0).unwrap(),
                QuadraticAtom::affine(g, 0.0).unwrap(),
            ],
        )
        .unwrap();
        assert!(matches!(
            finite_max_compose(&phi, &dvector![0.0, 0.0], 1e-8),
            Err(VuError::AffineDependence { rank: 0, needed: 1 })
        ));
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = DVector<f64>> {
        prop::collection::vec(-2.0f64..2.0, n).prop_map(DVector::from_vec)
    }

    proptest! {
        #[test]
        fn membership_and_ri_independence(
            rows in prop::collection::vec(arb_vec(5), 3),
            w in prop::collection::vec(0.1f64..1.0, 3),
        ) {
            // max of three affine pieces tied at the origin of ℝ⁵.
            let atoms: Vec<_> = rows.iter().map(|r| QuadraticAtom::affine(r.clone(), 0.0).unwrap()).collect();
            let phi = SmoothMap::new(5, atoms).unwrap();
            let x = DVector::zeros(5);
            let r = finite_max_compose(&phi, &x, 1e-8).unwrap();
            let push = r.pushforward_model.clone().unwrap();
            for d in r.u_basis.matrix().column_iter() {
                for g in push.generators() {
                    prop_assert!((d.dot(&(g - push.ri_point()))).abs() <= 1e-9);
                }
            }
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            let reweighted = push.with_weights(&w).unwrap();
            let lag = restrict_u(reweighted.ri_point(), &r.u_basis).unwrap();
            let grad = r.u_basis.matrix() * lag;
            prop_assert!((grad - &r.u_gradient).amax() <= 1e-9);
        }

        #[test]
        fn sum_rule_matches_minkowski_sum(
            a in prop::collection::vec(arb_vec(4), 2),
            b in prop::collection::vec(arb_vec(4), 2),
        ) {
            let ma = SubdifferentialModel::new(a, Horizon::Trivial).unwrap();
            let mb = SubdifferentialModel::new(b, Horizon::Trivial).unwrap();
            let sa = Summand::from_model(ma.clone()).unwrap();
            let sb = Summand::from_model(mb.clone()).unwrap();
            prop_assume!(sum_condition_check(&[sa.manifold.clone(), sb.manifold.clone()]).unwrap());
            let r = sum_rule(&[sa, sb]).unwrap();
            let total = decompose(&minkowski_sum(&[ma, mb]).unwrap()).unwrap();
            prop_assert!(subspace_distance(&r.u_basis, &total.u_basis).unwrap() <= 1e-8);
        }

        #[test]
        fn l1_compose_matches_sum_rule(
            x in prop::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 4),
            g in arb_vec(4),
            tau in 0.1f64..2.0,
        ) {
            let x = DVector::from_vec(x);
            let f = QuadraticAtom::affine(g.clone(), 0.0).unwrap();
            let direct = l1_compose(&f, tau, &x, 1e-10).unwrap();
            let smooth = Summand {
                model: SubdifferentialModel::singleton(g),
                manifold: ManifoldModel::whole_space(4),
                vu: VuPair::from_u_basis(OrthonormalBasis::identity(4)),
            };
            let l1 = Summand::from_model(NonsmoothAtom::l1_norm(tau).unwrap().subdifferential(&x).unwrap()).unwrap();
            let via_sum = sum_rule(&[smooth, l1]).unwrap();
            prop_assert!(subspace_distance(&direct.u_basis, &via_sum.u_basis).unwrap() <= 1e-12);
            prop_assert!((direct.u_gradient - via_sum.u_gradient).amax() <= 1e-12);
        }

        #[test]
        fn smooth_perturbation_keeps_basis_bitwise(q in arb_vec(3)) {
            let model = NonsmoothAtom::l1_norm(1.0).unwrap().subdifferential(&dvector![1.0, 0.0, -2.0]).unwrap();
            let vu = decompose(&model).unwrap();
            let p = u_gradient(&vu, model.ri_point()).unwrap();
            let r = smooth_perturbation(&p, &q).unwrap();
            prop_assert_eq!(&r.vu, &p.vu);
        }
    }

    #[test]
    fn separable_sum_pushforward_is_product() {
        let a = l1_free_smooth(dvector![1.0]);
        let b = compose_vu(
            &NonsmoothAtom::abs_value(1.0).unwrap().subdifferential(&dvector![0.0]).unwrap(),
            &DMatrix::identity(1, 1),
            &ManifoldModel::from_normal(OrthonormalBasis::identity(1)),
            false,
        )
        .unwrap();
        let r = separable_sum(&[a, b]).unwrap();
        let model = r.pushforward_model.unwrap();
        assert_eq!(model.generators().len(), 2);
        let brute = decompose(&model).unwrap();
        assert!(subspace_distance(&brute.u_basis, &r.u_basis).unwrap() <= 1e-12);
    }
}
