//! Fast tracks `χ(u) = x̄ + Ūu + V̄v(u)` traced by Newton's method on the
//! PDG equations.

use nalgebra::{DMatrix, DVector};

use crate::atoms::SmoothFunction;
use crate::error::{check_dim, Result, VuError};
use crate::subspace::{numerical_rank_scaled, RankTol, VuPair};
use crate::vu::{decompose_pdg, PdgStructure};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 50;
/// Consecutive residual increases that count as divergence.
const GROWTH_LIMIT: usize = 5;

/// A PDG structure at `x̄` with its U-basis and reduced V-columns.
#[derive(Clone, Debug)]
pub struct FastTrack {
    xbar: DVector<f64>,
    pdg: PdgStructure,
    vu: VuPair,
    newton_tol: f64,
    max_iters: usize,
}

/// A solved point on the track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPoint {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub chi: DVector<f64>,
    /// `‖R(v)‖_∞` at the returned `v`.
    pub residual: f64,
    pub newton_iters: usize,
}

impl FastTrack {
    /// Track requiring `dim U ≥ 1` and `dim V ≥ 1`.
    pub fn new(pdg: PdgStructure, xbar: DVector<f64>) -> Result<Self> {
        let ft = Self::build(pdg, xbar)?;
        if ft.dim_u() == 0 || ft.dim_v() == 0 {
            return Err(VuError::TrackDimensions {
                dim_u: ft.dim_u(),
                dim_v: ft.dim_v(),
            });
        }
        Ok(ft)
    }

    /// Track without the dimension requirement; `dim V = 0` gives `v ≡ 0`.
    pub fn build(pdg: PdgStructure, xbar: DVector<f64>) -> Result<Self> {
        let vu = decompose_pdg(&pdg, &xbar)?;
        let cols = vu.v_raw.ncols();
        let rank = numerical_rank_scaled(&vu.v_raw, RankTol::structural(), pdg.gradient_scale(&xbar))?;
        if rank < cols {
            return Err(VuError::RankDeficientVBar { rank, cols });
        }
        Ok(FastTrack {
            xbar,
            pdg,
            vu,
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        })
    }

    pub fn with_newton(mut self, newton_tol: f64, max_iters: usize) -> Result<Self> {
        if !(newton_tol > 0.0 && newton_tol.is_finite()) || max_iters == 0 {
            return Err(VuError::InvalidParameter(
                "Newton tolerance and iteration cap must be positive".into(),
            ));
        }
        self.newton_tol = newton_tol;
        self.max_iters = max_iters;
        Ok(self)
    }

    pub fn xbar(&self) -> &DVector<f64> {
        &self.xbar
    }

    pub fn pdg(&self) -> &PdgStructure {
        &self.pdg
    }

    pub fn vu(&self) -> &VuPair {
        &self.vu
    }

    pub fn u_basis(&self) -> &DMatrix<f64> {
        self.vu.u_basis.matrix()
    }

    pub fn v_raw(&self) -> &DMatrix<f64> {
        &self.vu.v_raw
    }

    pub fn dim_u(&self) -> usize {
        self.vu.dim_u()
    }

    pub fn dim_v(&self) -> usize {
        self.vu.v_raw.ncols()
    }

    pub fn newton_tol(&self) -> f64 {
        self.newton_tol
    }

    /// `x̄ + Ūu + V̄v`.
    pub fn chi(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.xbar + self.u_basis() * u + self.v_raw() * v
    }

    /// `(f_i − f_0)(x)` for reduced `i ≠ 0`, then `φ_j(x)` for reduced `j`.
    pub fn residual_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let f0 = self.pdg.f_atoms()[0].value(x);
        let vals: Vec<f64> = self
            .pdg
            .reduced_f()
            .iter()
            .filter(|&&i| i != 0)
            .map(|&i| self.pdg.f_atoms()[i].value(x) - f0)
            .chain(self.pdg.reduced_phi().iter().map(|&j| self.pdg.phi_atoms()[j].value(x)))
            .collect();
        DVector::from_vec(vals)
    }

    /// Solves for `v(u)` by Newton's method started at `v = 0`.
    pub fn solve_track(&self, u: &DVector<f64>) -> Result<TrackPoint> {
        self.solve_track_from(u, &DVector::zeros(self.dim_v()))
    }

    /// Solves for `v(u)` by Newton's method started at `v0`.
    pub fn solve_track_from(&self, u: &DVector<f64>, v0: &DVector<f64>) -> Result<TrackPoint> {
        check_dim("track parameter u", self.dim_u(), u.len())?;
        check_dim("track start v", self.dim_v(), v0.len())?;
        let base = &self.xbar + self.u_basis() * u;
        let mut v = v0.clone();
        let mut chi = &base + self.v_raw() * &v;
        let mut r = self.residual_at(&chi);
        let mut res = r.amax();
        let mut iters = 0;
        let mut growth = 0;
        loop {
            if !res.is_finite() {
                return Err(VuError::NewtonDiverged { iters, residual: res });
            }
            if res <= self.newton_tol {
                return Ok(TrackPoint {
                    u: u.clone(),
                    v,
                    chi,
                    residual: res,
                    newton_iters: iters,
                });
            }
            if iters == self.max_iters || growth >= GROWTH_LIMIT {
                return Err(VuError::NewtonDiverged { iters, residual: res });
            }
            let jac = self.v_basis_at(&chi).transpose() * self.v_raw();
            let step = jac.lu().solve(&r).ok_or(VuError::SingularNewtonJacobian)?;
            if step.iter().any(|s| !s.is_finite()) {
                return Err(VuError::SingularNewtonJacobian);
            }
            v -= step;
            chi = &base + self.v_raw() * &v;
            r = self.residual_at(&chi);
            let next = r.amax();
            growth = if next > res { growth + 1 } else { 0 };
            res = next;
            iters += 1;
        }
    }

    fn v_basis_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.pdg.reduced_columns(x)
    }

    /// `V(u)`: the reduced V-columns evaluated at `χ(u)`.
    pub fn v_basis_along(&self, tp: &TrackPoint) -> DMatrix<f64> {
        if tp.u.iter().all(|&x| x == 0.0) && tp.v.iter().all(|&x| x == 0.0) {
            return self.v_raw().clone();
        }
        self.v_basis_at(&tp.chi)
    }

    /// `∇χ(u) = Ū − V̄ (V(u)ᵀV̄)⁻¹ V(u)ᵀ Ū`.
    pub fn track_jacobian(&self, tp: &TrackPoint) -> Result<DMatrix<f64>> {
        let u_mat = self.u_basis();
        if self.dim_v() == 0 || tp.u.iter().all(|&x| x == 0.0) {
            // V(0) = V̄ and V̄ᵀŪ = 0.
            return Ok(u_mat.clone());
        }
        let vu = self.v_basis_along(tp);
        let m = vu.transpose() * self.v_raw();
        let rhs = vu.transpose() * u_mat;
        let x = m.lu().solve(&rhs).ok_or(VuError::SingularVtV)?;
        if x.iter().any(|s| !s.is_finite()) {
            return Err(VuError::SingularVtV);
        }
        Ok(u_mat - self.v_raw() * x)
    }

    /// Solves along `t·d` for increasing `t`, warm-starting each solve
    /// from the previous `v` rescaled by `(t/t_prev)²`.
    pub fn trace_ray(&self, direction: &DVector<f64>, scales: &[f64]) -> Vec<(f64, Result<TrackPoint>)> {
        let mut order: Vec<usize> = (0..scales.len()).collect();
        order.sort_by(|&a, &b| scales[a].abs().total_cmp(&scales[b].abs()));
        let mut out: Vec<Option<(f64, Result<TrackPoint>)>> = vec![None; scales.len()];
        let mut prev: Option<(f64, DVector<f64>)> = None;
        for idx in order {
            let t = scales[idx];
            let start = match &prev {
                Some((tp, v)) if *tp != 0.0 => v * (t / tp).powi(2),
                _ => DVector::zeros(self.dim_v()),
            };
            let res = self.solve_track_from(&(direction * t), &start);
            if let Ok(p) = &res {
                prev = Some((t, p.v.clone()));
            }
            out[idx] = Some((t, res));
        }
        out.into_iter().map(|o| o.expect("every scale solved")).collect()
    }

    /// Checks the asserted track properties along rays `t·d`.
    pub fn property_probe(&self, directions: &[DVector<f64>], scales: &[f64]) -> Result<ProbeReport> {
        for d in directions {
            check_dim("probe direction", self.dim_u(), d.len())?;
        }
        let inactive: Vec<usize> = (0..self.pdg.f_atoms().len())
            .filter(|i| !self.pdg.reduced_f().contains(i))
            .collect();
        let mut rows = Vec::new();
        for (k, d) in directions.iter().enumerate() {
            for (t, res) in self.trace_ray(d, scales) {
                rows.push(match res {
                    Ok(tp) => {
                        let v_norm = tp.v.norm();
                        let f0 = self.pdg.f_atoms()[0].value(&tp.chi);
                        let inactive_gap = inactive
                            .iter()
                            .map(|&i| (self.pdg.f_atoms()[i].value(&tp.chi) - f0).abs())
                            .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
                        ProbeRow {
                            direction: k,
                            t,
                            v_norm,
                            ratio: v_norm / (t * t),
                            newton_iters: tp.newton_iters,
                            residual: tp.residual,
                            inactive_gap,
                            error: None,
                        }
                    }
                    Err(e) => ProbeRow {
                        direction: k,
                        t,
                        v_norm: f64::NAN,
                        ratio: f64::NAN,
                        newton_iters: 0,
                        residual: f64::NAN,
                        inactive_gap: None,
                        error: Some(e),
                    },
                });
            }
        }
        let grad_v0 = self.fd_grad_v0(FD_V0_STEP)?;
        Ok(ProbeReport {
            rows,
            grad_v0_norm: if grad_v0.is_empty() { 0.0 } else { grad_v0.amax() },
            newton_tol: self.newton_tol,
        })
    }

    /// Central-difference estimate of `∇v(0)` (`dim V x dim U`).
    pub fn fd_grad_v0(&self, h: f64) -> Result<DMatrix<f64>> {
        let mut g = DMatrix::zeros(self.dim_v(), self.dim_u());
        for k in 0..self.dim_u() {
            let mut e = DVector::zeros(self.dim_u());
            e[k] = h;
            let plus = self.solve_track(&e)?;
            let minus = self.solve_track(&(-e))?;
            g.set_column(k, &((plus.v - minus.v) / (2.0 * h)));
        }
        Ok(g)
    }

    /// Central-difference Jacobian of `u ↦ χ(u)` at `u`.
    pub fn fd_track_jacobian(&self, u: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
        let n = self.xbar.len();
        let mut g = DMatrix::zeros(n, self.dim_u());
        for k in 0..self.dim_u() {
            let mut e = DVector::zeros(self.dim_u());
            e[k] = h;
            let plus = self.solve_track(&(u + &e))?;
            let minus = self.solve_track(&(u - &e))?;
            g.set_column(k, &((plus.chi - minus.chi) / (2.0 * h)));
        }
        Ok(g)
    }
}

/// Step used for the finite-difference estimate of `∇v(0)`.
pub const FD_V0_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ProbeRow {
    pub direction: usize,
    pub t: f64,
    pub v_norm: f64,
    /// `‖v(t·d)‖ / t²`.
    pub ratio: f64,
    pub newton_iters: usize,
    pub residual: f64,
    /// `max |f_i(χ) − f_0(χ)|` over f-atoms outside the reduced set;
    /// reported without a pass/fail judgement.
    pub inactive_gap: Option<f64>,
    pub error: Option<VuError>,
}

#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// `max |∂v/∂u (0)|` from central differences.
    pub grad_v0_norm: f64,
    pub newton_tol: f64,
}

impl ProbeReport {
    pub fn solved(&self) -> impl Iterator<Item = &ProbeRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_some())
    }

    pub fn max_ratio(&self) -> f64 {
        self.solved().map(|r| r.ratio).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.solved().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn max_iters(&self) -> usize {
        self.solved().map(|r| r.newton_iters).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::QuadraticAtom;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    /// max(x₁, −x₁ + x₂²) at the origin.
    fn parabola() -> FastTrack {
        let pdg = PdgStructure::new(
            vec![
                QuadraticAtom::coordinate(2, 0),
                QuadraticAtom::new(dmatrix![0.0, 0.0; 0.0, 2.0], dvector![-1.0, 0.0], 0.0).unwrap(),
            ],
            vec![],
        )
        .unwrap();
        FastTrack::new(pdg, dvector![0.0, 0.0]).unwrap()
    }

    /// max(x₁, −x₁) + x₂: polyhedral, constant gradients.
    fn polyhedral() -> FastTrack {
        let pdg = PdgStructure::new(
            vec![
                QuadraticAtom::affine(dvector![1.0, 1.0], 0.0).unwrap(),
                QuadraticAtom::affine(dvector![-1.0, 1.0], 0.0).unwrap(),
            ],
            vec![],
        )
        .unwrap();
        FastTrack::new(pdg, dvector![0.0, 0.0]).unwrap()
    }

    #[test]
    fn origin_is_fixed() {
        let ft = parabola();
        let tp = ft.solve_track(&dvector![0.0]).unwrap();
        assert_eq!(tp.v, dvector![0.0]);
        assert_eq!(tp.newton_iters, 0);
        assert_eq!(tp.chi, dvector![0.0, 0.0]);
        assert_eq!(ft.v_basis_along(&tp), *ft.v_raw());
        assert_eq!(ft.track_jacobian(&tp).unwrap(), *ft.u_basis());
    }

    #[test]
    fn parabola_track_closed_form() {
        let ft = parabola();
        assert_eq!(ft.v_raw(), &dmatrix![-2.0; 0.0]);
        assert_eq!(ft.u_basis(), &dmatrix![0.0; 1.0]);
        for u in [0.3, -0.05, 1e-3] {
            let tp = ft.solve_track(&dvector![u]).unwrap();
            assert_abs_diff_eq!(tp.v[0], -u * u / 4.0, epsilon = 1e-14);
            assert_abs_diff_eq!(tp.chi, dvector![u * u / 2.0, u], epsilon = 1e-14);
            assert!(tp.newton_iters <= 8);
            let vb = ft.v_basis_along(&tp);
            assert_abs_diff_eq!(vb, dmatrix![-2.0; 2.0 * u], epsilon = 1e-14);
        }
    }

    #[test]
    fn parabola_jacobian_matches_finite_differences() {
        let ft = parabola();
        let u = dvector![0.2];
        let tp = ft.solve_track(&u).unwrap();
        let jac = ft.track_jacobian(&tp).unwrap();
        let fd = ft.fd_track_jacobian(&u, 1e-5).unwrap();
        assert!((&jac - &fd).norm() <= 1e-6 * jac.norm());
        assert_abs_diff_eq!(jac, dmatrix![0.2; 1.0], epsilon = 1e-12);
    }

    #[test]
    fn polyhedral_track_is_flat() {
        let ft = polyhedral();
        let tp = ft.solve_track(&dvector![0.7]).unwrap();
        assert_eq!(tp.v, dvector![0.0]);
        assert_eq!(ft.v_basis_along(&tp), *ft.v_raw());
        assert_abs_diff_eq!(ft.track_jacobian(&tp).unwrap(), ft.u_basis().clone(), epsilon = 1e-15);
        let report = ft.property_probe(&[dvector![1.0]], &[0.1, 0.01]).unwrap();
        assert_eq!(report.max_ratio(), 0.0);
    }

    #[test]
    fn probe_ratios() {
        let ft = parabola();
        let report = ft
            .property_probe(&[dvector![1.0], dvector![-1.0]], &[1e-1, 1e-2, 1e-3])
            .unwrap();
        assert_eq!(report.rows.len(), 6);
        for row in &report.rows {
            assert!(row.error.is_none());
            assert_abs_diff_eq!(row.ratio, 0.25, epsilon = 0.25 * 1e-6);
            assert!(row.newton_iters <= 8);
            assert!(row.residual <= 1e-12);
            assert!(row.inactive_gap.is_none());
        }
        assert!(report.grad_v0_norm <= 1e-6);
    }

    #[test]
    fn dimension_requirements() {
        let pdg = PdgStructure::new(vec![QuadraticAtom::coordinate(2, 0)], vec![]).unwrap();
        assert!(matches!(
            FastTrack::new(pdg.clone(), dvector![0.0, 0.0]),
            Err(VuError::TrackDimensions { dim_u: 2, dim_v: 0 })
        ));
        let ft = FastTrack::build(pdg, dvector![0.0, 0.0]).unwrap();
        let tp = ft.solve_track(&dvector![0.5, 0.5]).unwrap();
        assert_eq!(tp.v.len(), 0);
        assert_eq!(tp.chi, dvector![0.5, 0.5]);
    }

    #[test]
    fn dependent_columns_are_rejected() {
        let g = QuadraticAtom::affine(dvector![1.0, 0.0], 0.0).unwrap();
        let pdg = PdgStructure::new(vec![QuadraticAtom::zero(2), g.clone(), g], vec![]).unwrap();
        assert!(matches!(
            FastTrack::new(pdg.clone(), dvector![0.0, 0.0]),
            Err(VuError::RankDeficientVBar { rank: 1, cols: 2 })
        ));
        let reduced = pdg.with_reduced(vec![0, 1], vec![]).unwrap();
        assert!(FastTrack::new(reduced, dvector![0.0, 0.0]).is_ok());
    }

    #[test]
    fn divergence_is_reported() {
        // f₁ − f₀ = 4v² + 4v + u² along the track: no real root once |u| > 1.
        let pdg = PdgStructure::new(
            vec![
                QuadraticAtom::coordinate(2, 0),
                QuadraticAtom::new(dmatrix![2.0, 0.0; 0.0, 2.0], dvector![-1.0, 0.0], 0.0).unwrap(),
            ],
            vec![],
        )
        .unwrap();
        let ft = FastTrack::new(pdg, dvector![0.0, 0.0]).unwrap();
        let err = ft.solve_track(&dvector![10.0]).unwrap_err();
        assert!(matches!(
            err,
            VuError::NewtonDiverged { .. } | VuError::SingularNewtonJacobian
        ));
    }

    proptest! {
        #[test]
        fn jacobian_and_agreement_on_random_quadratic_pairs(
            a in prop::collection::vec(-1.0f64..1.0, 9),
            b in prop::collection::vec(-1.0f64..1.0, 9),
            g in prop::collection::vec(-1.0f64..1.0, 3),
            u in prop::collection::vec(-0.05f64..0.05, 2),
        ) {
            let a = DMatrix::from_vec(3, 3, a);
            let b = DMatrix::from_vec(3, 3, b);
            let g0 = DVector::from_vec(g);
            let mut g1 = -&g0;
            g1[0] += 2.0;
            let pdg = PdgStructure::new(
                vec![
                    QuadraticAtom::new(a, g0, 0.0).unwrap(),
                    QuadraticAtom::new(b, g1, 0.0).unwrap(),
                ],
                vec![],
            )
            .unwrap();
            let ft = FastTrack::new(pdg, DVector::zeros(3)).unwrap();
            let u = DVector::from_vec(u);
            let tp = ft.solve_track(&u).unwrap();
            prop_assert!(tp.newton_iters <= 8);
            let gaps = ft.residual_at(&tp.chi);
            prop_assert!(gaps.amax() <= 10.0 * ft.newton_tol());
            let jac = ft.track_jacobian(&tp).unwrap();
            let fd = ft.fd_track_jacobian(&u, 1e-5).unwrap();
            prop_assert!((&jac - &fd).norm() <= 1e-5 * jac.norm());
        }
    }
}
