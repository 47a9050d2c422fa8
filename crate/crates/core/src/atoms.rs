//! Quadratic and affine building blocks and the smooth maps built from them.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result, VuError};
use crate::subspace::{ensure_finite, ensure_finite_vec};

/// A twice continuously differentiable function with exact derivatives.
///
/// Library users can implement this for their own functions; the
/// quadratic atom below is the only implementation the CLI understands.
pub trait SmoothFunction {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `x ↦ ½ xᵀAx + bᵀx + c` with symmetric `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticAtom {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl QuadraticAtom {
    /// Builds the atom; `a` is replaced by its symmetric part.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(VuError::InvalidParameter(format!(
                "quadratic term must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_dim("quadratic atom linear term", a.nrows(), b.len())?;
        ensure_finite(&a)?;
        ensure_finite_vec(&b)?;
        if !c.is_finite() {
            return Err(VuError::NonFiniteInput);
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(QuadraticAtom { a, b, c })
    }

    pub fn affine(b: DVector<f64>, c: f64) -> Result<Self> {
        let n = b.len();
        Self::new(DMatrix::zeros(n, n), b, c)
    }

    /// The coordinate function `x ↦ x_i` on ℝⁿ.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut b = DVector::zeros(n);
        b[i] = 1.0;
        QuadraticAtom {
            a: DMatrix::zeros(n, n),
            b,
            c: 0.0,
        }
    }

    pub fn zero(n: usize) -> Self {
        QuadraticAtom {
            a: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            c: 0.0,
        }
    }

    /// `½‖Mx − r‖²`.
    pub fn least_squares(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<Self> {
        check_dim("least squares right-hand side", m.nrows(), r.len())?;
        let mt = m.transpose();
        Self::new(&mt * m, -(&mt * r), 0.5 * r.norm_squared())
    }

    /// `Σ wₖ fₖ`.
    pub fn linear_combination(n: usize, terms: &[(f64, &QuadraticAtom)]) -> Result<Self> {
        let mut out = Self::zero(n);
        for (w, atom) in terms {
            check_dim("linear combination operand", n, atom.dim())?;
            out.a += &atom.a * *w;
            out.b += &atom.b * *w;
            out.c += atom.c * *w;
        }
        Ok(out)
    }

    /// The same function on a larger space, reading its argument from the
    /// coordinates `offset..offset + self.dim()`.
    pub fn embed(&self, n: usize, offset: usize) -> Result<Self> {
        let k = self.dim();
        if offset + k > n {
            return Err(VuError::DimensionMismatch {
                context: "embedded atom block",
                expected: n,
                got: offset + k,
            });
        }
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((offset, offset), (k, k)).copy_from(&self.a);
        let mut b = DVector::zeros(n);
        b.rows_mut(offset, k).copy_from(&self.b);
        Ok(QuadraticAtom { a, b, c: self.c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn is_affine(&self) -> bool {
        self.a.iter().all(|v| *v == 0.0)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("atom argument", self.dim(), x.len())?;
        Ok(self.value(x))
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("atom argument", self.dim(), x.len())?;
        Ok(self.gradient(x))
    }

    pub fn hess(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("atom argument", self.dim(), x.len())?;
        Ok(self.a.clone())
    }
}

impl SmoothFunction for QuadraticAtom {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) + self.b.dot(x) + self.c
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

/// `Φ : ℝᵐ → ℝⁿ` with one quadratic atom per output component.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothMap {
    domain_dim: usize,
    components: Vec<QuadraticAtom>,
}

impl SmoothMap {
    pub fn new(domain_dim: usize, components: Vec<QuadraticAtom>) -> Result<Self> {
        for c in &components {
            check_dim("smooth map component domain", domain_dim, c.dim())?;
        }
        Ok(SmoothMap {
            domain_dim,
            components,
        })
    }

    /// `x ↦ x` on ℝᵐ.
    pub fn identity(m: usize) -> Self {
        SmoothMap {
            domain_dim: m,
            components: (0..m).map(|i| QuadraticAtom::coordinate(m, i)).collect(),
        }
    }

    /// `x ↦ (x, x, …, x)` with `copies` blocks.
    pub fn diagonal(m: usize, copies: usize) -> Self {
        SmoothMap {
            domain_dim: m,
            components: (0..copies)
                .flat_map(|_| (0..m).map(move |i| QuadraticAtom::coordinate(m, i)))
                .collect(),
        }
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[QuadraticAtom] {
        &self.components
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("smooth map argument", self.domain_dim, x.len())?;
        Ok(DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|c| c.value(x)),
        ))
    }

    /// `n x m` Jacobian; row `i` is the gradient of component `i`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("smooth map argument", self.domain_dim, x.len())?;
        let mut j = DMatrix::zeros(self.components.len(), self.domain_dim);
        for (i, c) in self.components.iter().enumerate() {
            j.set_row(i, &c.gradient(x).transpose());
        }
        Ok(j)
    }

    /// Concatenation of maps acting on disjoint variable blocks.
    pub fn block_diagonal(maps: &[SmoothMap]) -> Result<Self> {
        let m: usize = maps.iter().map(|p| p.domain_dim).sum();
        let mut components = Vec::new();
        let mut offset = 0;
        for p in maps {
            for c in &p.components {
                components.push(c.embed(m, offset)?);
            }
            offset += p.domain_dim;
        }
        Self::new(m, components)
    }
}
