//! Generator (convex hull) representations of subdifferentials of the
//! supported outer functions.

use nalgebra::{DMatrix, DVector};

use crate::chain::ManifoldModel;
use crate::error::{check_dim, Result, VuError};
use crate::subspace::ensure_finite_vec;

/// Maximum number of generators any model may carry.
pub const GENERATOR_BUDGET: usize = 4096;

/// Default relative tie tolerance for coordinate-max activity.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-8;

/// Default absolute tolerance for detecting zero coordinates under ℓ1.
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// What is known about the horizon subdifferential at the point.
#[derive(Clone, Debug, PartialEq)]
pub enum Horizon {
    /// Finite convex function: the horizon subdifferential is `{0}`.
    Trivial,
    /// Function restricted to a manifold: horizon subdifferential is the
    /// normal space of the manifold.
    Manifold(ManifoldModel),
    Unknown,
}

/// `∂h(z)` as the convex hull of finitely many generators, with the
/// barycenter as relative-interior point.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdifferentialModel {
    generators: Vec<DVector<f64>>,
    ri_point: DVector<f64>,
    horizon: Horizon,
}

impl SubdifferentialModel {
    pub fn new(generators: Vec<DVector<f64>>, horizon: Horizon) -> Result<Self> {
        let first = generators
            .first()
            .ok_or_else(|| VuError::InvalidParameter("empty generator list".into()))?;
        let n = first.len();
        for g in &generators {
            check_dim("generator length", n, g.len())?;
            ensure_finite_vec(g)?;
        }
        if generators.len() > GENERATOR_BUDGET {
            return Err(VuError::GeneratorBudgetExceeded {
                count: generators.len(),
                budget: GENERATOR_BUDGET,
            });
        }
        let ri_point = barycenter(&generators);
        Ok(SubdifferentialModel {
            generators,
            ri_point,
            horizon,
        })
    }

    /// The single-point model `{g}` of a smooth function.
    pub fn singleton(g: DVector<f64>) -> Self {
        SubdifferentialModel {
            ri_point: g.clone(),
            generators: vec![g],
            horizon: Horizon::Trivial,
        }
    }

    /// Replaces the relative-interior point by `Σ wⱼ gⱼ`; the weights must be
    /// strictly positive and sum to one.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        check_dim("convex weights", self.generators.len(), weights.len())?;
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) || (total - 1.0).abs() > 1e-12 {
            return Err(VuError::InvalidParameter(
                "ri weights must be strictly positive and sum to 1".into(),
            ));
        }
        let mut ri = DVector::zeros(self.ambient_dim());
        for (g, w) in self.generators.iter().zip(weights) {
            ri += g * *w;
        }
        Ok(SubdifferentialModel {
            ri_point: ri,
            ..self.clone()
        })
    }

    /// Replaces the relative-interior point without any membership check.
    pub fn with_ri_point_override(&self, ri_point: DVector<f64>) -> Result<Self> {
        check_dim("ri point override", self.ambient_dim(), ri_point.len())?;
        Ok(SubdifferentialModel {
            ri_point,
            ..self.clone()
        })
    }

    pub fn with_horizon(mut self, horizon: Horizon) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.ri_point.len()
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    pub fn ri_point(&self) -> &DVector<f64> {
        &self.ri_point
    }

    pub fn horizon(&self) -> &Horizon {
        &self.horizon
    }

    pub fn horizon_trivial(&self) -> bool {
        matches!(self.horizon, Horizon::Trivial)
    }

    /// Largest generator norm; reference magnitude for rank decisions on
    /// generator differences.
    pub fn scale(&self) -> f64 {
        self.generators
            .iter()
            .map(|g| g.norm())
            .fold(self.ri_point.norm(), f64::max)
    }

    /// The model lifted into ℝⁿ, placing coordinate `k` at `components[k]`.
    pub fn embed(&self, n: usize, components: &[usize]) -> Result<Self> {
        check_dim("embedding components", self.ambient_dim(), components.len())?;
        if let Some(&bad) = components.iter().find(|&&c| c >= n) {
            return Err(VuError::DimensionMismatch {
                context: "embedding target index",
                expected: n,
                got: bad + 1,
            });
        }
        let lift = |g: &DVector<f64>| {
            let mut out = DVector::zeros(n);
            for (k, &c) in components.iter().enumerate() {
                out[c] += g[k];
            }
            out
        };
        Ok(SubdifferentialModel {
            generators: self.generators.iter().map(lift).collect(),
            ri_point: lift(&self.ri_point),
            horizon: match &self.horizon {
                Horizon::Trivial => Horizon::Trivial,
                _ => Horizon::Unknown,
            },
        })
    }
}

fn barycenter(generators: &[DVector<f64>]) -> DVector<f64> {
    let mut sum = DVector::zeros(generators[0].len());
    for g in generators {
        sum += g;
    }
    sum / generators.len() as f64
}

/// Nonsmooth outer-function building blocks.
#[derive(Clone, Debug, PartialEq)]
pub enum AtomKind {
    /// `y ↦ max_i y_i`.
    CoordinateMax,
    /// `y ↦ τ‖y‖₁`.
    L1Norm { tau: f64 },
    /// `y ↦ τ|y|` on ℝ.
    AbsValue { tau: f64 },
    /// `y ↦ wᵀy`.
    SmoothLinear { w: DVector<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonsmoothAtom {
    pub kind: AtomKind,
    /// Relative tie tolerance for `CoordinateMax`, absolute zero tolerance
    /// for the ℓ1 and absolute-value atoms.
    pub active_tol: f64,
}

impl NonsmoothAtom {
    pub fn coordinate_max() -> Self {
        NonsmoothAtom {
            kind: AtomKind::CoordinateMax,
            active_tol: DEFAULT_ACTIVE_TOL,
        }
    }

    pub fn l1_norm(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(NonsmoothAtom {
            kind: AtomKind::L1Norm { tau },
            active_tol: DEFAULT_ZERO_TOL,
        })
    }

    pub fn abs_value(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(NonsmoothAtom {
            kind: AtomKind::AbsValue { tau },
            active_tol: DEFAULT_ZERO_TOL,
        })
    }

    pub fn smooth_linear(w: DVector<f64>) -> Self {
        NonsmoothAtom {
            kind: AtomKind::SmoothLinear { w },
            active_tol: DEFAULT_ACTIVE_TOL,
        }
    }

    pub fn with_active_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(VuError::InvalidParameter(format!(
                "active tolerance must be positive, got {tol}"
            )));
        }
        self.active_tol = tol;
        Ok(self)
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        match &self.kind {
            AtomKind::CoordinateMax => y.max(),
            AtomKind::L1Norm { tau } => tau * y.lp_norm(1),
            AtomKind::AbsValue { tau } => tau * y[0].abs(),
            AtomKind::SmoothLinear { w } => w.dot(y),
        }
    }

    /// Exact subdifferential at `z`.
    pub fn subdifferential(&self, z: &DVector<f64>) -> Result<SubdifferentialModel> {
        ensure_finite_vec(z)?;
        match &self.kind {
            AtomKind::CoordinateMax => {
                let active = active_set(z, self.active_tol);
                let gens = active
                    .iter()
                    .map(|&i| unit(z.len(), i))
                    .collect::<Vec<_>>();
                SubdifferentialModel::new(gens, Horizon::Trivial)
            }
            AtomKind::L1Norm { tau } => l1_subdifferential(z, *tau, self.active_tol),
            AtomKind::AbsValue { tau } => {
                check_dim("absolute value argument", 1, z.len())?;
                l1_subdifferential(z, *tau, self.active_tol)
            }
            AtomKind::SmoothLinear { w } => {
                check_dim("linear atom argument", w.len(), z.len())?;
                Ok(SubdifferentialModel::singleton(w.clone()))
            }
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(VuError::InvalidParameter(format!(
            "ℓ1 weight must be positive, got {tau}"
        )))
    }
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

/// Indices attaining the maximum of `y` up to `tol * (1 + |max y|)`.
pub fn active_set(y: &DVector<f64>, tol: f64) -> Vec<usize> {
    if y.is_empty() {
        return Vec::new();
    }
    let top = y.max();
    let slack = tol * (1.0 + top.abs());
    (0..y.len()).filter(|&i| top - y[i] <= slack).collect()
}

/// Indices with `|z_i| <= zero_tol`.
pub fn zero_set(z: &DVector<f64>, zero_tol: f64) -> Vec<usize> {
    (0..z.len()).filter(|&i| z[i].abs() <= zero_tol).collect()
}

/// Sign pattern of `z` with zeros (at `zero_tol`) mapped to 0.
pub fn sign_pattern(z: &DVector<f64>, zero_tol: f64) -> DVector<f64> {
    z.map(|v| if v.abs() <= zero_tol { 0.0 } else { v.signum() })
}

fn l1_subdifferential(z: &DVector<f64>, tau: f64, zero_tol: f64) -> Result<SubdifferentialModel> {
    let zeros = zero_set(z, zero_tol);
    let count = 1usize
        .checked_shl(zeros.len() as u32)
        .filter(|c| *c <= GENERATOR_BUDGET)
        .ok_or(VuError::GeneratorBudgetExceeded {
            count: if zeros.len() >= usize::BITS as usize {
                usize::MAX
            } else {
                1usize << zeros.len()
            },
            budget: GENERATOR_BUDGET,
        })?;
    let base = sign_pattern(z, zero_tol) * tau;
    let gens = (0..count)
        .map(|mask| {
            let mut g = base.clone();
            for (bit, &i) in zeros.iter().enumerate() {
                g[i] = if mask & (1 << bit) == 0 { tau } else { -tau };
            }
            g
        })
        .collect();
    // The barycenter of the sign box is exactly τ·sgn(z) with zeros kept.
    Ok(SubdifferentialModel {
        generators: gens,
        ri_point: base,
        horizon: Horizon::Trivial,
    })
}

/// Columns `gⱼ − ḡ`, spanning `span(∂h − ḡ)`.
pub fn minkowski_difference_span(model: &SubdifferentialModel) -> DMatrix<f64> {
    let n = model.ambient_dim();
    let p = model.generators.len();
    let mut m = DMatrix::zeros(n, p);
    for (j, g) in model.generators.iter().enumerate() {
        m.set_column(j, &(g - &model.ri_point));
    }
    m
}

/// Linear image `Jᵀ ∂h` for an `n x m` Jacobian `J`.
pub fn pushforward(model: &SubdifferentialModel, j: &DMatrix<f64>) -> Result<SubdifferentialModel> {
    check_dim("pushforward Jacobian rows", model.ambient_dim(), j.nrows())?;
    let jt = j.transpose();
    Ok(SubdifferentialModel {
        generators: model.generators.iter().map(|g| &jt * g).collect(),
        ri_point: &jt * &model.ri_point,
        horizon: match model.horizon {
            Horizon::Trivial => Horizon::Trivial,
            _ => Horizon::Unknown,
        },
    })
}

/// `∂h₁ + ⋯ + ∂h_k`, enumerating all sums of generators.
pub fn minkowski_sum(models: &[SubdifferentialModel]) -> Result<SubdifferentialModel> {
    let first = models
        .first()
        .ok_or_else(|| VuError::InvalidParameter("empty Minkowski sum".into()))?;
    let n = first.ambient_dim();
    let mut count: usize = 1;
    for m in models {
        check_dim("Minkowski sum operand", n, m.ambient_dim())?;
        count = count.saturating_mul(m.generators.len());
    }
    if count > GENERATOR_BUDGET {
        return Err(VuError::GeneratorBudgetExceeded {
            count,
            budget: GENERATOR_BUDGET,
        });
    }
    let mut gens = vec![DVector::zeros(n)];
    for m in models {
        gens = gens
            .iter()
            .flat_map(|acc| m.generators.iter().map(move |g| acc + g))
            .collect();
    }
    let mut ri = DVector::zeros(n);
    for m in models {
        ri += &m.ri_point;
    }
    let horizon = if models.iter().all(|m| m.horizon_trivial()) {
        Horizon::Trivial
    } else {
        Horizon::Unknown
    };
    Ok(SubdifferentialModel {
        generators: gens,
        ri_point: ri,
        horizon,
    })
}
