//! VU-decomposition from generator models and from primal-dual gradient
//! (PDG) structures, strong transversality, and U-gradients.

use nalgebra::{DMatrix, DVector};

use crate::atoms::{QuadraticAtom, SmoothFunction};
use crate::error::{check_dim, Result, VuError};
use crate::subdiff::{minkowski_difference_span, SubdifferentialModel};
use crate::subspace::{
    numerical_rank_scaled, orthonormal_range_scaled, restrict_u, RankTol, VuPair,
    STRUCTURAL_RANK_TOL,
};

/// Default tolerance for [`check_pdg_consistency`].
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-8;

/// Primal functions `f_0, …, f_{m1}` and `φ_1, …, φ_{m2}` describing a
/// function near a point, together with the reduced index sets used to
/// build V-bases and fast tracks.
///
/// Indices are 0-based into `f_atoms` and `phi_atoms`; `reduced_f` always
/// contains 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PdgStructure {
    f_atoms: Vec<QuadraticAtom>,
    phi_atoms: Vec<QuadraticAtom>,
    reduced_f: Vec<usize>,
    reduced_phi: Vec<usize>,
}

impl PdgStructure {
    pub fn new(f_atoms: Vec<QuadraticAtom>, phi_atoms: Vec<QuadraticAtom>) -> Result<Self> {
        let first = f_atoms
            .first()
            .ok_or_else(|| VuError::InvalidParameter("PDG needs at least f_0".into()))?;
        let n = first.dim();
        for a in f_atoms.iter().chain(&phi_atoms) {
            check_dim("PDG atom dimension", n, a.dim())?;
        }
        let reduced_f = (0..f_atoms.len()).collect();
        let reduced_phi = (0..phi_atoms.len()).collect();
        Ok(PdgStructure {
            f_atoms,
            phi_atoms,
            reduced_f,
            reduced_phi,
        })
    }

    /// Restricts V-columns and the fast-track system to the given indices.
    pub fn with_reduced(mut self, reduced_f: Vec<usize>, reduced_phi: Vec<usize>) -> Result<Self> {
        let mut kf = reduced_f;
        kf.sort_unstable();
        kf.dedup();
        let mut kp = reduced_phi;
        kp.sort_unstable();
        kp.dedup();
        if kf.first() != Some(&0) {
            return Err(VuError::InvalidParameter(
                "reduced f-index set must contain 0".into(),
            ));
        }
        if kf.last().is_some_and(|&i| i >= self.f_atoms.len())
            || kp.last().is_some_and(|&j| j >= self.phi_atoms.len())
        {
            return Err(VuError::InvalidParameter(
                "reduced index out of range".into(),
            ));
        }
        self.reduced_f = kf;
        self.reduced_phi = kp;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.f_atoms[0].dim()
    }

    pub fn f_atoms(&self) -> &[QuadraticAtom] {
        &self.f_atoms
    }

    pub fn phi_atoms(&self) -> &[QuadraticAtom] {
        &self.phi_atoms
    }

    pub fn reduced_f(&self) -> &[usize] {
        &self.reduced_f
    }

    pub fn reduced_phi(&self) -> &[usize] {
        &self.reduced_phi
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced_f.len() != self.f_atoms.len() || self.reduced_phi.len() != self.phi_atoms.len()
    }

    /// Columns `∇f_i − ∇f_0` (`i ∈ f_idx \ {0}`) followed by `∇φ_j`
    /// (`j ∈ phi_idx`) at `x`.
    pub(crate) fn columns(&self, x: &DVector<f64>, f_idx: &[usize], phi_idx: &[usize]) -> DMatrix<f64> {
        let g0 = self.f_atoms[0].gradient(x);
        let cols: Vec<DVector<f64>> = f_idx
            .iter()
            .filter(|&&i| i != 0)
            .map(|&i| self.f_atoms[i].gradient(x) - &g0)
            .chain(phi_idx.iter().map(|&j| self.phi_atoms[j].gradient(x)))
            .collect();
        let mut m = DMatrix::zeros(x.len(), cols.len());
        for (k, c) in cols.iter().enumerate() {
            m.set_column(k, c);
        }
        m
    }

    /// Raw V-columns over the reduced index sets.
    pub fn reduced_columns(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.columns(x, &self.reduced_f, &self.reduced_phi)
    }

    /// Raw V-columns over the full index sets.
    pub fn full_columns(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let kf: Vec<usize> = (0..self.f_atoms.len()).collect();
        let kp: Vec<usize> = (0..self.phi_atoms.len()).collect();
        self.columns(x, &kf, &kp)
    }

    /// Largest gradient norm among all atoms at `x`.
    pub(crate) fn gradient_scale(&self, x: &DVector<f64>) -> f64 {
        self.f_atoms
            .iter()
            .chain(&self.phi_atoms)
            .map(|a| a.gradient(x).norm())
            .fold(0.0, f64::max)
    }
}

/// U-gradient and U-Lagrangian gradient at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct UGradientResult {
    /// `∇_U f = Ū Ūᵀ ḡ ∈ ℝⁿ`.
    pub u_gradient: DVector<f64>,
    /// `∇L_U f = Ūᵀ ḡ ∈ ℝᵘ`.
    pub u_lagrangian_gradient: DVector<f64>,
    pub vu: VuPair,
    pub ri_point_used: DVector<f64>,
}

/// VU-decomposition of a generator model, `V = span(∂f − ḡ)`.
pub fn decompose(model: &SubdifferentialModel) -> Result<VuPair> {
    decompose_with(model, RankTol::structural())
}

pub fn decompose_with(model: &SubdifferentialModel, tol: RankTol) -> Result<VuPair> {
    let diffs = minkowski_difference_span(model);
    let v = orthonormal_range_scaled(&diffs, tol, model.scale())?;
    Ok(VuPair::from_v_basis(v))
}

/// VU-decomposition from the reduced PDG gradient columns at `xbar`.
///
/// The raw columns are kept in `v_raw` even when they are linearly
/// dependent; [`crate::subspace::restrict_v`] and fast-track construction
/// reject dependent columns.
pub fn decompose_pdg(pdg: &PdgStructure, xbar: &DVector<f64>) -> Result<VuPair> {
    decompose_pdg_with(pdg, xbar, RankTol::structural(), DEFAULT_CONSISTENCY_TOL)
}

pub fn decompose_pdg_with(
    pdg: &PdgStructure,
    xbar: &DVector<f64>,
    tol: RankTol,
    consistency_tol: f64,
) -> Result<VuPair> {
    check_dim("PDG point", pdg.dim(), xbar.len())?;
    let f_value = pdg.f_atoms[0].value(xbar);
    let report = check_pdg_consistency(pdg, xbar, f_value, consistency_tol);
    if !report.passed() {
        return Err(VuError::PdgInconsistent(report.describe_failures()));
    }
    let v_raw = pdg.reduced_columns(xbar);
    let v = orthonormal_range_scaled(&v_raw, tol, pdg.gradient_scale(xbar))?;
    let mut pair = VuPair::from_v_basis(v);
    pair.v_raw = v_raw;
    Ok(pair)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionCheck {
    pub index: usize,
    pub value: f64,
    pub passed: bool,
}

/// Outcome of [`check_pdg_consistency`].
#[derive(Clone, Debug, PartialEq)]
pub struct PdgConsistencyReport {
    pub tol: f64,
    /// `f_i(x̄) − f(x̄)` per f-atom.
    pub f_checks: Vec<ConditionCheck>,
    /// `φ_j(x̄)` per φ-atom.
    pub phi_checks: Vec<ConditionCheck>,
}

impl PdgConsistencyReport {
    pub fn passed(&self) -> bool {
        self.f_checks.iter().chain(&self.phi_checks).all(|c| c.passed)
    }

    fn describe_failures(&self) -> String {
        let mut parts = Vec::new();
        for c in self.f_checks.iter().filter(|c| !c.passed) {
            parts.push(format!("f_{} - f = {:e}", c.index, c.value));
        }
        for c in self.phi_checks.iter().filter(|c| !c.passed) {
            parts.push(format!("phi_{} = {:e}", c.index, c.value));
        }
        parts.join(", ")
    }
}

/// Checks `f_i(x̄) = f(x̄)` and `φ_j(x̄) = 0` for every atom, each up to
/// `tol * (1 + |f(x̄)|)`.
pub fn check_pdg_consistency(
    pdg: &PdgStructure,
    xbar: &DVector<f64>,
    f_value: f64,
    tol: f64,
) -> PdgConsistencyReport {
    let slack = tol * (1.0 + f_value.abs());
    let check = |index, value: f64| ConditionCheck {
        index,
        value,
        passed: value.is_finite() && value.abs() <= slack,
    };
    let dims_ok = xbar.len() == pdg.dim();
    let f_checks = pdg
        .f_atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let v = if dims_ok { a.value(xbar) - f_value } else { f64::NAN };
            check(i, v)
        })
        .collect();
    let phi_checks = pdg
        .phi_atoms
        .iter()
        .enumerate()
        .map(|(j, a)| check(j, if dims_ok { a.value(xbar) } else { f64::NAN }))
        .collect();
    PdgConsistencyReport {
        tol,
        f_checks,
        phi_checks,
    }
}

/// Heuristic reduced index sets picked by greedy column pivoting.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedIndexSuggestion {
    pub reduced_f: Vec<usize>,
    pub reduced_phi: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrongTransversality {
    pub holds: bool,
    /// Full-index matrix `[∇f_i − ∇f_0, ∇φ_j]`.
    pub vbar: DMatrix<f64>,
    pub rank: usize,
    /// Greedy choice of linearly independent columns spanning the same
    /// space. A heuristic, not part of the transversality test.
    pub suggestion: ReducedIndexSuggestion,
}

/// Full-column-rank test of the full-index V̄ matrix at `xbar`.
pub fn strong_transversality(pdg: &PdgStructure, xbar: &DVector<f64>) -> Result<StrongTransversality> {
    check_dim("PDG point", pdg.dim(), xbar.len())?;
    let vbar = pdg.full_columns(xbar);
    let scale = pdg.gradient_scale(xbar);
    let rank = numerical_rank_scaled(&vbar, RankTol::structural(), scale)?;
    let holds = rank == vbar.ncols();
    let suggestion = greedy_reduction(pdg, &vbar, scale);
    Ok(StrongTransversality {
        holds,
        vbar,
        rank,
        suggestion,
    })
}

fn greedy_reduction(pdg: &PdgStructure, vbar: &DMatrix<f64>, scale: f64) -> ReducedIndexSuggestion {
    let m1 = pdg.f_atoms.len() - 1;
    let thr = STRUCTURAL_RANK_TOL * scale.max(f64::MIN_POSITIVE);
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut reduced_f = vec![0];
    let mut reduced_phi = Vec::new();
    for (k, col) in vbar.column_iter().enumerate() {
        let mut r = col.into_owned();
        // Two passes of Gram-Schmidt for stability.
        for _ in 0..2 {
            for b in &q {
                let c = b.dot(&r);
                r -= b * c;
            }
        }
        let norm = r.norm();
        if norm > thr {
            q.push(r / norm);
            if k < m1 {
                reduced_f.push(k + 1);
            } else {
                reduced_phi.push(k - m1);
            }
        }
    }
    ReducedIndexSuggestion {
        reduced_f,
        reduced_phi,
    }
}

/// `∇_U f = Ū Ūᵀ ḡ` and `∇L_U f = Ūᵀ ḡ`.
pub fn u_gradient(vu: &VuPair, gbar: &DVector<f64>) -> Result<UGradientResult> {
    let lag = restrict_u(gbar, &vu.u_basis)?;
    Ok(UGradientResult {
        u_gradient: vu.u_basis.matrix() * &lag,
        u_lagrangian_gradient: lag,
        vu: vu.clone(),
        ri_point_used: gbar.clone(),
    })
}
