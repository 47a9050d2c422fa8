//! Rank-tolerant dense linear algebra on subspaces.
//!
//! Everything here works on small dense matrices (ambient dimension in the
//! tens). Bases are produced by a thin SVD and normalised so that the first
//! entry of each column with magnitude above [`SIGN_EPS`] is positive, which
//! makes bases reproducible across runs.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, VuError};

/// Orthonormality tolerance for [`OrthonormalBasis`].
pub const ORTHONORMAL_TOL: f64 = 1e-12;

/// Entries below this magnitude are skipped when fixing column signs.
pub const SIGN_EPS: f64 = 1e-12;

/// Relative threshold used for structural rank decisions in the calculus
/// layers (V-spaces, transversality, sum condition).
pub const STRUCTURAL_RANK_TOL: f64 = 1e-10;

/// Rule for deciding numerical rank from singular values.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum RankTol {
    /// `max(rows, cols) * eps * sigma_max`.
    #[default]
    Auto,
    /// `factor * scale`, where `scale` is the largest singular value or a
    /// caller-supplied reference magnitude, whichever is larger.
    Relative(f64),
    /// Fixed absolute threshold.
    Absolute(f64),
}

impl RankTol {
    pub fn threshold(&self, rows: usize, cols: usize, scale: f64) -> f64 {
        match *self {
            RankTol::Auto => rows.max(cols) as f64 * f64::EPSILON * scale,
            RankTol::Relative(f) => f * scale,
            RankTol::Absolute(t) => t,
        }
    }

    /// Relative structural tolerance, or the absolute override when one is set.
    pub fn structural() -> Self {
        match rank_tol_override() {
            Some(t) => RankTol::Absolute(t),
            None => RankTol::Relative(STRUCTURAL_RANK_TOL),
        }
    }
}

static RANK_TOL_OVERRIDE: AtomicU64 = AtomicU64::new(u64::MAX);

/// Process-wide absolute threshold replacing the structural rank rule.
/// Pass `None` to restore the default.
pub fn set_rank_tol_override(tol: Option<f64>) {
    let bits = match tol {
        Some(t) if t.is_finite() && t > 0.0 => t.to_bits(),
        _ => u64::MAX,
    };
    RANK_TOL_OVERRIDE.store(bits, Ordering::Relaxed);
}

pub fn rank_tol_override() -> Option<f64> {
    let bits = RANK_TOL_OVERRIDE.load(Ordering::Relaxed);
    (bits != u64::MAX).then(|| f64::from_bits(bits))
}

/// An `n x k` matrix with orthonormal columns (`k` may be zero).
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    cols: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Validates orthonormality and applies the sign convention.
    pub fn new(cols: DMatrix<f64>) -> Result<Self> {
        ensure_finite(&cols)?;
        let gram = cols.transpose() * &cols;
        let k = cols.ncols();
        let err = (gram - DMatrix::<f64>::identity(k, k)).amax();
        if k > 0 && err > ORTHONORMAL_TOL * 10.0 {
            return Err(VuError::InvalidParameter(format!(
                "columns are not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(Self::from_columns_unchecked(cols))
    }

    pub(crate) fn from_columns_unchecked(mut cols: DMatrix<f64>) -> Self {
        canonical_signs(&mut cols);
        OrthonormalBasis { cols }
    }

    pub fn empty(ambient_dim: usize) -> Self {
        OrthonormalBasis {
            cols: DMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn identity(ambient_dim: usize) -> Self {
        OrthonormalBasis {
            cols: DMatrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Span of the given standard basis vectors, in the given order.
    pub fn coordinate(ambient_dim: usize, indices: &[usize]) -> Self {
        let mut cols = DMatrix::zeros(ambient_dim, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            cols[(i, c)] = 1.0;
        }
        OrthonormalBasis { cols }
    }

    pub fn ambient_dim(&self) -> usize {
        self.cols.nrows()
    }

    pub fn dim(&self) -> usize {
        self.cols.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.cols
    }

    /// Indices `i` when every column is exactly a signed standard basis
    /// vector `±e_i`.
    pub fn coordinate_indices(&self) -> Option<Vec<usize>> {
        self.cols
            .column_iter()
            .map(|c| {
                let nz: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
                (nz.len() == 1 && c[nz[0]].abs() == 1.0).then(|| nz[0])
            })
            .collect()
    }

    /// Orthogonal projector `B B^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.cols * self.cols.transpose()
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.cols * (self.cols.transpose() * x)
    }

    /// `‖x - Proj x‖`, the distance from `x` to the span.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (x - self.project(x)).norm()
    }

    /// Maximum deviation of `B^T B` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.dim();
        if k == 0 {
            return 0.0;
        }
        (self.cols.transpose() * &self.cols - DMatrix::<f64>::identity(k, k)).amax()
    }
}

/// U- and V-bases at a point, plus the raw V-columns they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct VuPair {
    pub u_basis: OrthonormalBasis,
    pub v_basis: OrthonormalBasis,
    /// Raw V-columns (PDG gradient differences), or the orthonormal V-basis
    /// when no raw columns exist.
    pub v_raw: DMatrix<f64>,
}

impl VuPair {
    /// Builds the pair from an orthonormal V-basis; U is its complement.
    pub fn from_v_basis(v_basis: OrthonormalBasis) -> Self {
        let u_basis = orthonormal_complement(&v_basis);
        let v_raw = v_basis.matrix().clone();
        VuPair {
            u_basis,
            v_basis,
            v_raw,
        }
    }

    /// Builds the pair from an orthonormal U-basis; V is its complement.
    pub fn from_u_basis(u_basis: OrthonormalBasis) -> Self {
        let v_basis = orthonormal_complement(&u_basis);
        let v_raw = v_basis.matrix().clone();
        VuPair {
            u_basis,
            v_basis,
            v_raw,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.u_basis.ambient_dim()
    }

    pub fn dim_u(&self) -> usize {
        self.u_basis.dim()
    }

    pub fn dim_v(&self) -> usize {
        self.v_basis.dim()
    }

    /// `max |U^T V|` over the orthonormal bases.
    pub fn cross_orthogonality(&self) -> f64 {
        if self.dim_u() == 0 || self.dim_v() == 0 {
            return 0.0;
        }
        (self.u_basis.matrix().transpose() * self.v_basis.matrix()).amax()
    }
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(VuError::NonFiniteInput)
    }
}

pub(crate) fn ensure_finite_vec(v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(VuError::NonFiniteInput)
    }
}

fn canonical_signs(cols: &mut DMatrix<f64>) {
    for mut col in cols.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > SIGN_EPS) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Full singular value decomposition, singular values in descending order.
pub(crate) struct Svd {
    pub s: Vec<f64>,
    /// `rows x rows` left singular vectors.
    pub u: DMatrix<f64>,
    /// `cols x cols` right singular vectors.
    pub v: DMatrix<f64>,
}

pub(crate) fn svd(m: &DMatrix<f64>) -> Result<Svd> {
    ensure_finite(m)?;
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(Svd {
            s: Vec::new(),
            u: DMatrix::identity(r, r),
            v: DMatrix::identity(c, c),
        });
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let d = fm.svd().map_err(|_| {
        VuError::InvalidParameter("singular value decomposition did not converge".into())
    })?;
    let sv = d.S().column_vector();
    let s: Vec<f64> = (0..r.min(c)).map(|i| sv[i]).collect();
    debug_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    let (fu, fv) = (d.U(), d.V());
    Ok(Svd {
        s,
        u: DMatrix::from_fn(r, r, |i, j| fu[(i, j)]),
        v: DMatrix::from_fn(c, c, |i, j| fv[(i, j)]),
    })
}

/// Largest singular value (spectral norm).
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(svd(m)?.s.first().copied().unwrap_or(0.0))
}

fn rank_from(s: &[f64], rows: usize, cols: usize, tol: RankTol, reference: f64) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    let thr = tol.threshold(rows, cols, smax.max(reference));
    s.iter().filter(|&&v| v > thr && v > 0.0).count()
}

/// Numerical rank of `m`, thresholding singular values against `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: RankTol) -> Result<usize> {
    numerical_rank_scaled(m, tol, 0.0)
}

pub(crate) fn numerical_rank_scaled(m: &DMatrix<f64>, tol: RankTol, reference: f64) -> Result<usize> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0);
    }
    let d = svd(m)?;
    Ok(rank_from(&d.s, m.nrows(), m.ncols(), tol, reference))
}

/// Orthonormal basis of the column space of `m`.
///
/// Columns come from the left singular vectors whose singular values exceed
/// the threshold given by `tol`.
pub fn orthonormal_range(m: &DMatrix<f64>, tol: RankTol) -> Result<OrthonormalBasis> {
    orthonormal_range_scaled(m, tol, 0.0)
}

/// As [`orthonormal_range`], with a reference magnitude that floors the
/// scale used by relative tolerances. Use it when `m` is a difference of
/// larger quantities and may be pure rounding noise.
pub fn orthonormal_range_scaled(
    m: &DMatrix<f64>,
    tol: RankTol,
    reference: f64,
) -> Result<OrthonormalBasis> {
    ensure_finite(m)?;
    let n = m.nrows();
    if n == 0 || m.ncols() == 0 {
        return Ok(OrthonormalBasis::empty(n));
    }
    let d = svd(m)?;
    let rank = rank_from(&d.s, n, m.ncols(), tol, reference);
    Ok(OrthonormalBasis::from_columns_unchecked(
        d.u.columns(0, rank).into_owned(),
    ))
}

/// Orthonormal basis of the right null space `{d : m d = 0}`, from the
/// trailing right singular vectors.
pub fn null_space(m: &DMatrix<f64>, tol: RankTol, reference: f64) -> Result<OrthonormalBasis> {
    ensure_finite(m)?;
    let cols = m.ncols();
    if cols == 0 {
        return Ok(OrthonormalBasis::empty(0));
    }
    if m.nrows() == 0 {
        return Ok(OrthonormalBasis::identity(cols));
    }
    let d = svd(m)?;
    let rank = rank_from(&d.s, m.nrows(), cols, tol, reference);
    Ok(OrthonormalBasis::from_columns_unchecked(
        d.v.columns(rank, cols - rank).into_owned(),
    ))
}

/// Orthonormal basis of the orthogonal complement of `span(b)`.
pub fn orthonormal_complement(b: &OrthonormalBasis) -> OrthonormalBasis {
    let n = b.ambient_dim();
    let k = b.dim();
    if k == 0 {
        return OrthonormalBasis::identity(n);
    }
    if k >= n {
        return OrthonormalBasis::empty(n);
    }
    if let Some(idx) = b.coordinate_indices() {
        let rest: Vec<usize> = (0..n).filter(|i| !idx.contains(i)).collect();
        return OrthonormalBasis::coordinate(n, &rest);
    }
    // Trailing left singular vectors of an orthonormal B span its complement.
    let d = svd(b.matrix()).expect("orthonormal bases are finite");
    OrthonormalBasis::from_columns_unchecked(d.u.columns(k, n - k).into_owned())
}

/// Orthonormal basis of the intersection of the spans of `bases`.
///
/// Computed as the complement of the sum of the complements.
pub fn intersect_subspaces(bases: &[OrthonormalBasis]) -> Result<OrthonormalBasis> {
    let first = bases
        .first()
        .ok_or_else(|| VuError::InvalidParameter("no subspaces to intersect".into()))?;
    let n = first.ambient_dim();
    for b in bases {
        check_dim("intersect_subspaces ambient dimension", n, b.ambient_dim())?;
    }
    if bases.len() == 1 {
        return Ok(first.clone());
    }
    let complements: Vec<_> = bases.iter().map(orthonormal_complement).collect();
    let total: usize = complements.iter().map(|c| c.dim()).sum();
    let mut stacked = DMatrix::zeros(n, total);
    let mut offset = 0;
    for c in &complements {
        stacked
            .view_mut((0, offset), (n, c.dim()))
            .copy_from(c.matrix());
        offset += c.dim();
    }
    let sum = orthonormal_range_scaled(&stacked, RankTol::structural(), 1.0)?;
    Ok(orthonormal_complement(&sum))
}

/// `x_U = U^T x`.
pub fn restrict_u(x: &DVector<f64>, u: &OrthonormalBasis) -> Result<DVector<f64>> {
    check_dim("restrict_u vector length", u.ambient_dim(), x.len())?;
    Ok(u.matrix().transpose() * x)
}

/// `x_V = (V^T V)^{-1} V^T x` for a full-column-rank raw V-matrix.
pub fn restrict_v(x: &DVector<f64>, v_raw: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_dim("restrict_v vector length", v_raw.nrows(), x.len())?;
    let k = v_raw.ncols();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let rank = numerical_rank(v_raw, RankTol::structural())?;
    if rank < k {
        return Err(VuError::RankDeficientVBar { rank, cols: k });
    }
    let gram = v_raw.transpose() * v_raw;
    let rhs = v_raw.transpose() * x;
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(VuError::RankDeficientVBar { rank, cols: k })
}

/// `x = V x_V + U x_U`.
pub fn reconstruct(
    x_u: &DVector<f64>,
    x_v: &DVector<f64>,
    u: &OrthonormalBasis,
    v_raw: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_dim("reconstruct U component", u.dim(), x_u.len())?;
    check_dim("reconstruct V component", v_raw.ncols(), x_v.len())?;
    check_dim("reconstruct ambient dimension", u.ambient_dim(), v_raw.nrows())?;
    Ok(v_raw * x_v + u.matrix() * x_u)
}

/// Horizontal concatenation of column blocks sharing a row count.
pub fn hstack(rows: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, total);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((0, offset), (rows, b.ncols())).copy_from(*b);
        offset += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn e(n: usize, i: usize) -> OrthonormalBasis {
        OrthonormalBasis::coordinate(n, &[i])
    }

    #[test]
    fn range_of_scalar() {
        let b = orthonormal_range(&dmatrix![-2.0], RankTol::Auto).unwrap();
        assert_eq!(b.matrix(), &dmatrix![1.0]);
    }

    #[test]
    fn range_of_zero_matrix_is_empty() {
        let b = orthonormal_range(&DMatrix::zeros(3, 2), RankTol::Auto).unwrap();
        assert_eq!(b.dim(), 0);
        assert_eq!(b.ambient_dim(), 3);
    }

    #[test]
    fn range_rank_one() {
        let m = dmatrix![1.0, 2.0; 0.0, 0.0; 1.0, 2.0];
        let b = orthonormal_range(&m, RankTol::Auto).unwrap();
        assert_eq!(b.dim(), 1);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(b.matrix()[(0, 0)], s, epsilon = 1e-14);
        assert_abs_diff_eq!(b.matrix()[(1, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b.matrix()[(2, 0)], s, epsilon = 1e-14);
    }

    #[test]
    fn range_rejects_nan() {
        let m = dmatrix![1.0, f64::NAN];
        assert!(matches!(
            orthonormal_range(&m, RankTol::Auto),
            Err(VuError::NonFiniteInput)
        ));
    }

    #[test]
    fn complement_cases() {
        let c = orthonormal_complement(&e(2, 0));
        assert_eq!(c.matrix(), OrthonormalBasis::coordinate(2, &[1]).matrix());

        let c = orthonormal_complement(&OrthonormalBasis::empty(3));
        assert_eq!(c.matrix(), &DMatrix::<f64>::identity(3, 3));

        let s = 1.0 / 2f64.sqrt();
        let b = OrthonormalBasis::new(dmatrix![s; s]).unwrap();
        let c = orthonormal_complement(&b);
        assert_eq!(c.dim(), 1);
        assert_abs_diff_eq!(c.matrix()[(0, 0)], s, epsilon = 1e-14);
        assert_abs_diff_eq!(c.matrix()[(1, 0)], -s, epsilon = 1e-14);
        assert_abs_diff_eq!((b.matrix().transpose() * c.matrix())[(0, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn intersections() {
        let r = intersect_subspaces(&[e(2, 1), e(2, 0)]).unwrap();
        assert_eq!(r.dim(), 0);

        let s = 1.0 / 2f64.sqrt();
        let b = OrthonormalBasis::new(dmatrix![s; s]).unwrap();
        let r = intersect_subspaces(&[b.clone(), b.clone()]).unwrap();
        assert_eq!(r.dim(), 1);
        assert!(b.residual(&r.matrix().column(0).into_owned()) < 1e-12);

        let a = OrthonormalBasis::coordinate(3, &[0, 1]);
        let c = OrthonormalBasis::coordinate(3, &[1, 2]);
        let r = intersect_subspaces(&[a, c]).unwrap();
        assert_eq!(r.dim(), 1);
        assert_abs_diff_eq!(r.matrix()[(1, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn intersection_dimension_mismatch() {
        assert!(matches!(
            intersect_subspaces(&[e(2, 0), e(3, 0)]),
            Err(VuError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn restrictions() {
        let x = dvector![3.0, 4.0];
        assert_eq!(restrict_u(&x, &e(2, 1)).unwrap(), dvector![4.0]);
        assert_eq!(restrict_u(&DVector::zeros(2), &e(2, 1)).unwrap(), dvector![0.0]);
        let s = 1.0 / 2f64.sqrt();
        let b = OrthonormalBasis::new(dmatrix![s; s]).unwrap();
        let xu = restrict_u(&dvector![1.0, 1.0], &b).unwrap();
        assert_abs_diff_eq!(xu[0], 2f64.sqrt(), epsilon = 1e-15);
        assert!(restrict_u(&dvector![1.0], &b).is_err());
    }

    #[test]
    fn v_restriction_scalar() {
        let xv = restrict_v(&dvector![5.0], &dmatrix![-2.0]).unwrap();
        assert_abs_diff_eq!(xv[0], -2.5, epsilon = 1e-15);
    }

    #[test]
    fn v_restriction_orthogonal_and_orthonormal() {
        let v = dmatrix![1.0; 0.0];
        assert_eq!(restrict_v(&dvector![0.0, 3.0], &v).unwrap(), dvector![0.0]);
        let s = 1.0 / 2f64.sqrt();
        let v = dmatrix![s; s];
        let x = dvector![0.3, -1.7];
        let got = restrict_v(&x, &v).unwrap();
        assert_abs_diff_eq!(got[0], (v.transpose() * &x)[0], epsilon = 1e-15);
    }

    #[test]
    fn v_restriction_rank_deficient() {
        let v = dmatrix![1.0, 2.0; 1.0, 2.0];
        assert!(matches!(
            restrict_v(&dvector![1.0, 0.0], &v),
            Err(VuError::RankDeficientVBar { rank: 1, cols: 2 })
        ));
    }

    #[test]
    fn reconstruct_zero_and_u_part() {
        let u = e(3, 0);
        let v = dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 2.0];
        let x = reconstruct(&DVector::zeros(1), &DVector::zeros(2), &u, &v).unwrap();
        assert_eq!(x, DVector::zeros(3));
        let x = reconstruct(&dvector![2.5], &DVector::zeros(2), &u, &v).unwrap();
        assert_eq!(u.residual(&x), 0.0);
    }

    #[test]
    fn null_space_wide_and_tall() {
        let m = dmatrix![1.0, 0.0, 0.0];
        let ns = null_space(&m, RankTol::structural(), 0.0).unwrap();
        assert_eq!(ns.dim(), 2);
        assert!((m * ns.matrix()).amax() < 1e-15);
        let m = dmatrix![1.0, 1.0; 2.0, 2.0; 3.0, 3.0];
        let ns = null_space(&m, RankTol::structural(), 0.0).unwrap();
        assert_eq!(ns.dim(), 1);
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0f64..3.0, rows * cols)
            .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
    }

    proptest! {
        #[test]
        fn range_is_orthonormal_and_idempotent(m in arb_matrix(5, 3), drop in 0usize..3) {
            // Force rank deficiency by duplicating a column.
            let mut m = m;
            if drop > 0 {
                let c = m.column(0).into_owned();
                m.set_column(drop, &c);
            }
            let b = orthonormal_range(&m, RankTol::Auto).unwrap();
            prop_assert!(b.orthonormality_error() <= ORTHONORMAL_TOL);
            let b2 = orthonormal_range(b.matrix(), RankTol::Auto).unwrap();
            prop_assert_eq!(b.dim(), b2.dim());
            for c in b2.matrix().column_iter() {
                prop_assert!(b.residual(&c.into_owned()) < 1e-10);
            }
            for c in m.column_iter() {
                prop_assert!(b.residual(&c.into_owned()) < 1e-10 * (1.0 + c.norm()));
            }
        }

        #[test]
        fn vu_projectors_partition_identity(m in arb_matrix(5, 2), x in prop::collection::vec(-5.0f64..5.0, 5)) {
            let v = orthonormal_range(&m, RankTol::Auto).unwrap();
            let vu = VuPair { v_raw: m.clone(), ..VuPair::from_v_basis(v) };
            let pu = vu.u_basis.projector();
            let pv = vu.v_basis.projector();
            let id = DMatrix::<f64>::identity(5, 5);
            prop_assert!((&pu + &pv - id).amax() <= 1e-10);
            prop_assert!((&pu * &pv).amax() <= 1e-10);
            prop_assert!(vu.cross_orthogonality() <= 1e-10);

            let x = DVector::from_vec(x);
            let xu = restrict_u(&x, &vu.u_basis).unwrap();
            let xv = restrict_v(&x, &vu.v_raw).unwrap();
            let back = reconstruct(&xu, &xv, &vu.u_basis, &vu.v_raw).unwrap();
            prop_assert!((back - &x).amax() <= 1e-10);
            // Lifting identity: V x_V = Proj_V x.
            prop_assert!((&vu.v_raw * xv - pv * &x).amax() <= 1e-10);
        }

        #[test]
        fn intersection_contained_in_inputs(a in arb_matrix(5, 3), b in arb_matrix(5, 3), w in prop::collection::vec(0.5f64..1.5, 3)) {
            // b shares one direction with a; generic 3-planes in R^5 then meet in that line.
            let common = &a * DVector::from_vec(w);
            let mut b = b;
            b.set_column(0, &common);
            let ba = orthonormal_range(&a, RankTol::Auto).unwrap();
            let bb = orthonormal_range(&b, RankTol::Auto).unwrap();
            let r = intersect_subspaces(&[ba.clone(), bb.clone()]).unwrap();
            prop_assert_eq!(r.dim(), 1);
            for c in r.matrix().column_iter() {
                let c = c.into_owned();
                prop_assert!(ba.residual(&c) <= 1e-10);
                prop_assert!(bb.residual(&c) <= 1e-10);
            }
            prop_assert!(r.residual(&common) <= 1e-10 * common.norm());
        }
    }
}
