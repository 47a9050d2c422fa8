//! Structured composites `f = h ∘ Φ` with `Φ` quadratic and `h` a sum of
//! max, ℓ1 and linear parts, each acting on a subset of the components of
//! `Φ`.

use nalgebra::{DMatrix, DVector};

use crate::atoms::{QuadraticAtom, SmoothMap};
use crate::chain::{
    compose_vu, compose_vu_spanned, nondegeneracy_check, sum_condition_check, transversality_check,
    ChainResult, HypothesisCheck, ManifoldModel,
};
use crate::error::{check_dim, Result, VuError};
use crate::subdiff::{
    active_set, minkowski_sum, zero_set, NonsmoothAtom, SubdifferentialModel, DEFAULT_ACTIVE_TOL,
    DEFAULT_ZERO_TOL,
};
use crate::subspace::hstack;
use crate::vu::PdgStructure;

#[derive(Clone, Debug, PartialEq)]
pub enum OuterAtom {
    /// `y ↦ max_i y_i`.
    Max,
    /// `y ↦ τ‖y‖₁`.
    L1 { tau: f64 },
    /// `y ↦ wᵀy`; all ones when `w` is absent.
    Smooth { w: Option<DVector<f64>> },
}

/// An outer atom applied to the listed components of `Φ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub atom: OuterAtom,
    pub components: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Relative tie tolerance for max activity.
    pub active_tol: f64,
    /// Absolute zero tolerance for ℓ1 components.
    pub zero_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            active_tol: DEFAULT_ACTIVE_TOL,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    phi: SmoothMap,
    parts: Vec<Part>,
}

/// Active structure of `h` at `Φ(x̄)`.
#[derive(Clone, Debug)]
pub struct LocalStructure {
    pub y: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Columns spanning `∂h(Φ(x̄)) − ḡ`, which are also normals of the
    /// active manifold.
    pub diff_span: DMatrix<f64>,
    pub gbar: DVector<f64>,
    pub part_manifolds: Vec<ManifoldModel>,
    pub manifold: ManifoldModel,
}

/// Hypothesis checks and, when they pass (or are forced), the chain rule
/// result.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub local: LocalStructure,
    /// `∂h(Φ(x̄))` when it fits the generator budget.
    pub h_model: Option<SubdifferentialModel>,
    pub transversality: HypothesisCheck,
    pub nondegeneracy: HypothesisCheck,
    /// Present when `h` has more than one part.
    pub sum_condition: Option<bool>,
    pub chain: Option<ChainResult>,
}

impl Analysis {
    pub fn hypotheses_hold(&self) -> bool {
        self.transversality.holds && self.nondegeneracy.holds && self.sum_condition != Some(false)
    }
}

impl Part {
    fn weights(&self) -> DVector<f64> {
        match &self.atom {
            OuterAtom::Smooth { w: Some(w) } => w.clone(),
            _ => DVector::from_element(self.components.len(), 1.0),
        }
    }

    fn gather(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.components.len(), self.components.iter().map(|&c| y[c]))
    }

    fn atom(&self, tols: &Tolerances) -> Result<NonsmoothAtom> {
        match &self.atom {
            OuterAtom::Max => NonsmoothAtom::coordinate_max().with_active_tol(tols.active_tol),
            OuterAtom::L1 { tau } => NonsmoothAtom::l1_norm(*tau)?.with_active_tol(tols.zero_tol),
            OuterAtom::Smooth { .. } => Ok(NonsmoothAtom::smooth_linear(self.weights())),
        }
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

impl Composite {
    pub fn new(phi: SmoothMap, parts: Vec<Part>) -> Result<Self> {
        if parts.is_empty() {
            return Err(VuError::InvalidParameter("outer function has no parts".into()));
        }
        let n = phi.codomain_dim();
        for p in &parts {
            if p.components.is_empty() {
                return Err(VuError::InvalidParameter("outer part acts on no components".into()));
            }
            if let Some(&bad) = p.components.iter().find(|&&c| c >= n) {
                return Err(VuError::InvalidParameter(format!(
                    "component index {bad} out of range for {n} inner components"
                )));
            }
            match &p.atom {
                OuterAtom::L1 { tau } if !(*tau > 0.0 && tau.is_finite()) => {
                    return Err(VuError::InvalidParameter(format!(
                        "ℓ1 weight must be positive, got {tau}"
                    )));
                }
                OuterAtom::Smooth { w: Some(w) } => {
                    check_dim("linear part weights", p.components.len(), w.len())?;
                }
                _ => {}
            }
        }
        Ok(Composite { phi, parts })
    }

    /// `atom ∘ Φ` with the atom acting on every component.
    pub fn single(phi: SmoothMap, atom: OuterAtom) -> Result<Self> {
        let components = (0..phi.codomain_dim()).collect();
        Self::new(phi, vec![Part { atom, components }])
    }

    /// `max_i f_i`.
    pub fn max_of(pieces: Vec<QuadraticAtom>) -> Result<Self> {
        let m = pieces
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| VuError::InvalidParameter("no pieces".into()))?;
        Self::single(SmoothMap::new(m, pieces)?, OuterAtom::Max)
    }

    /// `f + τ‖x‖₁`.
    pub fn l1_regularized(f: QuadraticAtom, tau: f64) -> Result<Self> {
        let m = f.dim();
        let mut comps = vec![f];
        comps.extend((0..m).map(|i| QuadraticAtom::coordinate(m, i)));
        Self::new(
            SmoothMap::new(m, comps)?,
            vec![
                Part {
                    atom: OuterAtom::Smooth { w: None },
                    components: vec![0],
                },
                Part {
                    atom: OuterAtom::L1 { tau },
                    components: (1..=m).collect(),
                },
            ],
        )
    }

    /// `½‖Ax − b‖² + τ‖x‖₁`.
    pub fn lasso(a: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Result<Self> {
        Self::l1_regularized(QuadraticAtom::least_squares(a, b)?, tau)
    }

    pub fn dim(&self) -> usize {
        self.phi.domain_dim()
    }

    pub fn phi(&self) -> &SmoothMap {
        &self.phi
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let y = self.phi.eval(x)?;
        Ok(self.value_at_y(&y))
    }

    fn value_at_y(&self, y: &DVector<f64>) -> f64 {
        self.parts
            .iter()
            .map(|p| {
                let z = p.gather(y);
                match &p.atom {
                    OuterAtom::Max => z.max(),
                    OuterAtom::L1 { tau } => tau * z.iter().map(|v| v.abs()).sum::<f64>(),
                    OuterAtom::Smooth { .. } => p.weights().dot(&z),
                }
            })
            .sum()
    }

    /// Active pieces, zero patterns, difference span and ri-point of `h`
    /// at `Φ(x̄)`.
    pub fn local(&self, xbar: &DVector<f64>, tols: &Tolerances) -> Result<LocalStructure> {
        let y = self.phi.eval(xbar)?;
        let jacobian = self.phi.jacobian(xbar)?;
        let n = y.len();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut gbar = DVector::zeros(n);
        let mut part_manifolds = Vec::new();
        for p in &self.parts {
            let z = p.gather(&y);
            let mut part_cols = Vec::new();
            match &p.atom {
                OuterAtom::Max => {
                    let active: Vec<usize> = active_set(&z, tols.active_tol)
                        .into_iter()
                        .map(|k| p.components[k])
                        .collect();
                    let weight = 1.0 / active.len() as f64;
                    for &i in &active {
                        gbar[i] += weight;
                    }
                    for &i in &active[1..] {
                        part_cols.push(unit(n, i) - unit(n, active[0]));
                    }
                }
                OuterAtom::L1 { tau } => {
                    let zeros = zero_set(&z, tols.zero_tol);
                    for (k, &c) in p.components.iter().enumerate() {
                        if zeros.contains(&k) {
                            part_cols.push(unit(n, c));
                        } else {
                            gbar[c] += tau * z[k].signum();
                        }
                    }
                }
                OuterAtom::Smooth { .. } => {
                    for (k, w) in p.weights().iter().enumerate() {
                        gbar[p.components[k]] += w;
                    }
                }
            }
            part_manifolds.push(ManifoldModel::from_normal_columns(&columns(n, &part_cols))?);
            cols.extend(part_cols);
        }
        let diff_span = columns(n, &cols);
        let manifold = ManifoldModel::from_normal_columns(&diff_span)?;
        Ok(LocalStructure {
            y,
            jacobian,
            diff_span,
            gbar,
            part_manifolds,
            manifold,
        })
    }

    /// `∂h(y)` as a generator list, enumerating Minkowski sums of parts.
    pub fn h_model(&self, y: &DVector<f64>, tols: &Tolerances) -> Result<SubdifferentialModel> {
        check_dim("outer argument", self.phi.codomain_dim(), y.len())?;
        let n = y.len();
        let models = self
            .parts
            .iter()
            .map(|p| p.atom(tols)?.subdifferential(&p.gather(y))?.embed(n, &p.components))
            .collect::<Result<Vec<_>>>()?;
        minkowski_sum(&models)
    }

    /// Runs the hypothesis checks and the chain rule at `x̄`.
    ///
    /// The chain rule result is omitted when a hypothesis fails, unless
    /// `force` is set.
    pub fn analyze(&self, xbar: &DVector<f64>, tols: &Tolerances, force: bool) -> Result<Analysis> {
        let local = self.local(xbar, tols)?;
        let h_model = match self.h_model(&local.y, tols) {
            Ok(m) => Some(m),
            Err(VuError::GeneratorBudgetExceeded { .. }) => None,
            Err(e) => return Err(e),
        };
        let transversality = transversality_check(&local.jacobian, &local.manifold)?;
        let nondegeneracy = match &h_model {
            Some(m) => nondegeneracy_check(m, &local.jacobian)?,
            // Every supported outer atom is finite and convex.
            None => HypothesisCheck {
                holds: true,
                witness: None,
            },
        };
        let sum_condition = if self.parts.len() > 1 {
            Some(sum_condition_check(&local.part_manifolds)?)
        } else {
            None
        };
        let ok = transversality.holds && nondegeneracy.holds && sum_condition != Some(false);
        let chain = if ok || force {
            Some(match &h_model {
                Some(m) => compose_vu(m, &local.jacobian, &local.manifold, true)?,
                None => compose_vu_spanned(&local.diff_span, &local.gbar, &local.jacobian, &local.manifold, true)?,
            })
        } else {
            None
        };
        Ok(Analysis {
            local,
            h_model,
            transversality,
            nondegeneracy,
            sum_condition,
            chain,
        })
    }

    /// Gradient of `f` at `x`, or `None` when two active values of a max
    /// part tie within `active_tol` or an ℓ1 argument is within
    /// `active_tol` of zero.
    pub fn gradient(&self, x: &DVector<f64>, active_tol: f64) -> Option<DVector<f64>> {
        let y = self.phi.eval(x).ok()?;
        let j = self.phi.jacobian(x).ok()?;
        let mut g = DVector::zeros(y.len());
        for p in &self.parts {
            let z = p.gather(&y);
            match &p.atom {
                OuterAtom::Max => {
                    let active = active_set(&z, active_tol);
                    if active.len() != 1 {
                        return None;
                    }
                    g[p.components[active[0]]] += 1.0;
                }
                OuterAtom::L1 { tau } => {
                    for (k, &c) in p.components.iter().enumerate() {
                        if 2.0 * z[k].abs() <= active_tol * (1.0 + z[k].abs()) {
                            return None;
                        }
                        g[c] += tau * z[k].signum();
                    }
                }
                OuterAtom::Smooth { .. } => {
                    for (k, w) in p.weights().iter().enumerate() {
                        g[p.components[k]] += w;
                    }
                }
            }
        }
        Some(j.transpose() * g)
    }

    /// Bound on how fast the gradient of any single smooth piece of `f` can
    /// change: `Σ_parts max_g ‖Σ_i g_i A_i‖_F` over the part's extreme
    /// subgradients.
    pub fn piece_lipschitz_bound(&self) -> f64 {
        let comps = self.phi.components();
        self.parts
            .iter()
            .map(|p| match &p.atom {
                OuterAtom::Max => p
                    .components
                    .iter()
                    .map(|&c| comps[c].a().norm())
                    .fold(0.0, f64::max),
                OuterAtom::L1 { tau } => tau * p.components.iter().map(|&c| comps[c].a().norm()).sum::<f64>(),
                OuterAtom::Smooth { .. } => {
                    let w = p.weights();
                    let mut acc = DMatrix::zeros(self.dim(), self.dim());
                    for (k, &c) in p.components.iter().enumerate() {
                        acc += comps[c].a() * w[k];
                    }
                    acc.norm()
                }
            })
            .sum()
    }

    /// PDG structure at `x̄`: `f_0` takes the first active piece of every
    /// max part; each further `f_i` swaps in one other active piece; each
    /// zero ℓ1 component contributes `φ_j = Φ_c`.
    pub fn pdg(&self, xbar: &DVector<f64>, tols: &Tolerances) -> Result<PdgStructure> {
        let y = self.phi.eval(xbar)?;
        let m = self.dim();
        let comps = self.phi.components();
        let mut base: Vec<(f64, usize)> = Vec::new();
        let mut swaps: Vec<(usize, usize)> = Vec::new();
        let mut phis = Vec::new();
        for p in &self.parts {
            let z = p.gather(&y);
            match &p.atom {
                OuterAtom::Max => {
                    let active: Vec<usize> = active_set(&z, tols.active_tol)
                        .into_iter()
                        .map(|k| p.components[k])
                        .collect();
                    base.push((1.0, active[0]));
                    swaps.extend(active[1..].iter().map(|&i| (active[0], i)));
                }
                OuterAtom::L1 { tau } => {
                    for (k, &c) in p.components.iter().enumerate() {
                        if z[k].abs() <= tols.zero_tol {
                            phis.push(comps[c].clone());
                        } else {
                            base.push((tau * z[k].signum(), c));
                        }
                    }
                }
                OuterAtom::Smooth { .. } => {
                    for (k, w) in p.weights().iter().enumerate() {
                        base.push((*w, p.components[k]));
                    }
                }
            }
        }
        let combine = |terms: &[(f64, usize)]| {
            let refs: Vec<(f64, &QuadraticAtom)> = terms.iter().map(|&(w, c)| (w, &comps[c])).collect();
            QuadraticAtom::linear_combination(m, &refs)
        };
        let mut f_atoms = vec![combine(&base)?];
        for &(from, to) in &swaps {
            let mut terms = base.clone();
            terms.push((-1.0, from));
            terms.push((1.0, to));
            f_atoms.push(combine(&terms)?);
        }
        PdgStructure::new(f_atoms, phis)
    }
}

fn columns(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mats: Vec<DMatrix<f64>> = cols.iter().map(|c| DMatrix::from_column_slice(n, 1, c.as_slice())).collect();
    let refs: Vec<&DMatrix<f64>> = mats.iter().collect();
    hstack(n, &refs)
}

/// PDG of `f + τ‖·‖₁` on ℝⁿ at `x̄`: `f_0 = f + τ Σ sgn(x̄_i) x_i` and
/// `φ_j = x_j` for the zero coordinates.
pub fn l1_pdg(f: &QuadraticAtom, tau: f64, xbar: &DVector<f64>, zero_tol: f64) -> Result<PdgStructure> {
    let composite = Composite::l1_regularized(f.clone(), tau)?;
    composite.pdg(
        xbar,
        &Tolerances {
            active_tol: DEFAULT_ACTIVE_TOL,
            zero_tol,
        },
    )
}

/// PDG of `f + τ‖·‖₁` lifted to `(r, x) ∈ ℝ²ⁿ` with the coupling `r = x`:
/// `f_0 = f(x) + τ Σ sgn(x̄_i) r_i`, `φ_j = r_j` for the zero coordinates
/// and a final `φ = ‖r − x‖²`. Returns the structure and the lifted point
/// `(x̄, x̄)`.
///
/// The final constraint has a vanishing gradient at the point, so the full
/// structure is never strongly transversal; the returned structure is
/// reduced to drop it.
pub fn l1_lifted_pdg(
    f: &QuadraticAtom,
    tau: f64,
    xbar: &DVector<f64>,
    zero_tol: f64,
) -> Result<(PdgStructure, DVector<f64>)> {
    check_dim("ℓ1 point", f.dim(), xbar.len())?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VuError::InvalidParameter(format!("ℓ1 weight must be positive, got {tau}")));
    }
    let n = xbar.len();
    let zeros = zero_set(xbar, zero_tol);
    let mut lin = DVector::zeros(2 * n);
    for i in 0..n {
        if !zeros.contains(&i) {
            lin[i] = tau * xbar[i].signum();
        }
    }
    let f_lifted = f.embed(2 * n, n)?;
    let f0 = QuadraticAtom::linear_combination(
        2 * n,
        &[(1.0, &f_lifted), (1.0, &QuadraticAtom::affine(lin, 0.0)?)],
    )?;
    let mut phis: Vec<QuadraticAtom> = zeros.iter().map(|&i| QuadraticAtom::coordinate(2 * n, i)).collect();
    let mut coupling = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        coupling[(i, i)] = 2.0;
        coupling[(n + i, n + i)] = 2.0;
        coupling[(i, n + i)] = -2.0;
        coupling[(n + i, i)] = -2.0;
    }
    phis.push(QuadraticAtom::new(coupling, DVector::zeros(2 * n), 0.0)?);
    let point = DVector::from_iterator(2 * n, xbar.iter().chain(xbar.iter()).copied());
    let k = zeros.len();
    let pdg = PdgStructure::new(vec![f0], phis)?.with_reduced(vec![0], (0..k).collect())?;
    Ok((pdg, point))
}
