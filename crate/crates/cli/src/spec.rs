//! JSON problem files: `f = h ∘ Φ` with quadratic components.

use serde::{Deserialize, Serialize};
use vucalc_core::{
    Composite, DMatrix, DVector, OuterAtom, Part, QuadraticAtom, SmoothMap, Tolerances,
};

/// Largest accepted `|A_ij - A_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub m: usize,
    pub phi: Vec<AtomSpec>,
    pub h: OuterSpec,
    pub xbar: Vec<f64>,
    #[serde(default)]
    pub options: Options,
}

/// `½xᵀAx + bᵀx + c`. An omitted `A` is the zero matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

/// Outer function. `components` selects entries of `Φ(x)`; all of them
/// when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OuterSpec {
    Max {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        components: Option<Vec<usize>>,
    },
    L1 {
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        components: Option<Vec<usize>>,
    },
    Smooth {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        components: Option<Vec<usize>>,
    },
    Sum {
        parts: Vec<OuterSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub active_tol: f64,
    pub zero_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_f: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_phi: Option<Vec<usize>>,
    pub seed: u64,
    pub samples: usize,
    pub radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gbar_override: Option<Vec<f64>>,
    pub force: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            active_tol: 1e-8,
            zero_tol: 1e-10,
            rank_tol: None,
            newton_tol: 1e-12,
            max_iters: 50,
            fd_step: 1e-5,
            reduced_f: None,
            reduced_phi: None,
            seed: 42,
            samples: 2000,
            radius: 1e-4,
            scales: None,
            directions: None,
            gbar_override: None,
            force: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("{line}:{column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), SpecError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn finite(path: &str, vals: &[f64]) -> Result<(), SpecError> {
    match vals.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(invalid(format!("{path}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

impl ProblemSpec {
    /// Parses and validates a JSON document.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| SpecError::Parse {
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let m = self.m;
        if m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        if self.phi.is_empty() {
            return Err(invalid("phi", "needs at least one component"));
        }
        for (k, atom) in self.phi.iter().enumerate() {
            let path = format!("phi[{k}]");
            if let Some(a) = &atom.a {
                if a.len() != m {
                    return Err(invalid(format!("{path}.A"), format!("expected {m} rows, got {}", a.len())));
                }
                for (i, row) in a.iter().enumerate() {
                    if row.len() != m {
                        return Err(invalid(
                            format!("{path}.A[{i}]"),
                            format!("expected {m} entries, got {}", row.len()),
                        ));
                    }
                    finite(&format!("{path}.A[{i}]"), row)?;
                }
                #[allow(clippy::needless_range_loop)]
                for i in 0..m {
                    for j in (i + 1)..m {
                        let gap = (a[i][j] - a[j][i]).abs();
                        if gap > SYMMETRY_TOL {
                            return Err(invalid(
                                format!("{path}.A"),
                                format!("not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {gap:e}"),
                            ));
                        }
                    }
                }
            }
            if atom.b.len() != m {
                return Err(invalid(format!("{path}.b"), format!("expected {m} entries, got {}", atom.b.len())));
            }
            finite(&format!("{path}.b"), &atom.b)?;
            if !atom.c.is_finite() {
                return Err(invalid(format!("{path}.c"), "must be finite"));
            }
        }
        self.validate_outer(&self.h, "h", true)?;
        if self.xbar.len() != m {
            return Err(invalid("xbar", format!("expected {m} entries, got {}", self.xbar.len())));
        }
        finite("xbar", &self.xbar)?;

        let o = &self.options;
        positive("options.active_tol", o.active_tol)?;
        positive("options.zero_tol", o.zero_tol)?;
        if let Some(t) = o.rank_tol {
            positive("options.rank_tol", t)?;
        }
        positive("options.newton_tol", o.newton_tol)?;
        if o.max_iters == 0 {
            return Err(invalid("options.max_iters", "must be at least 1"));
        }
        positive("options.fd_step", o.fd_step)?;
        if o.samples == 0 {
            return Err(invalid("options.samples", "must be at least 1"));
        }
        positive("options.radius", o.radius)?;
        if let Some(s) = &o.scales {
            if s.is_empty() {
                return Err(invalid("options.scales", "must not be empty"));
            }
            for (i, &t) in s.iter().enumerate() {
                positive(&format!("options.scales[{i}]"), t)?;
            }
        }
        if let Some(d) = &o.directions {
            for (i, dir) in d.iter().enumerate() {
                finite(&format!("options.directions[{i}]"), dir)?;
                if dir.iter().all(|&v| v == 0.0) {
                    return Err(invalid(format!("options.directions[{i}]"), "must be nonzero"));
                }
            }
        }
        if let Some(g) = &o.gbar_override {
            if g.len() != m {
                return Err(invalid("options.gbar_override", format!("expected {m} entries, got {}", g.len())));
            }
            finite("options.gbar_override", g)?;
        }
        if o.reduced_phi.is_some() && o.reduced_f.is_none() {
            return Err(invalid("options.reduced_phi", "requires options.reduced_f"));
        }
        Ok(())
    }

    fn validate_outer(&self, h: &OuterSpec, path: &str, top: bool) -> Result<(), SpecError> {
        let n = self.phi.len();
        let check_components = |components: &Option<Vec<usize>>| -> Result<usize, SpecError> {
            let Some(c) = components else { return Ok(n) };
            if c.is_empty() {
                return Err(invalid(format!("{path}.components"), "must not be empty"));
            }
            for (i, &k) in c.iter().enumerate() {
                if k >= n {
                    return Err(invalid(
                        format!("{path}.components[{i}]"),
                        format!("index {k} out of range for {n} components"),
                    ));
                }
            }
            Ok(c.len())
        };
        match h {
            OuterSpec::Max { components } => {
                check_components(components)?;
            }
            OuterSpec::L1 { tau, components } => {
                positive(&format!("{path}.tau"), *tau)?;
                check_components(components)?;
            }
            OuterSpec::Smooth { w, components } => {
                let len = check_components(components)?;
                if let Some(w) = w {
                    if w.len() != len {
                        return Err(invalid(format!("{path}.w"), format!("expected {len} entries, got {}", w.len())));
                    }
                    finite(&format!("{path}.w"), w)?;
                }
            }
            OuterSpec::Sum { parts } => {
                if !top {
                    return Err(invalid(path, "sums cannot be nested"));
                }
                if parts.is_empty() {
                    return Err(invalid(format!("{path}.parts"), "must not be empty"));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.validate_outer(p, &format!("{path}.parts[{i}]"), false)?;
                }
            }
        }
        Ok(())
    }

    pub fn xbar(&self) -> DVector<f64> {
        DVector::from_vec(self.xbar.clone())
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            active_tol: self.options.active_tol,
            zero_tol: self.options.zero_tol,
        }
    }

    pub fn gbar_override(&self) -> Option<DVector<f64>> {
        self.options.gbar_override.clone().map(DVector::from_vec)
    }

    /// Builds the composite. Assumes [`ProblemSpec::validate`] passed.
    pub fn composite(&self) -> vucalc_core::Result<Composite> {
        let m = self.m;
        let atoms = self
            .phi
            .iter()
            .map(|a| {
                let mat = match &a.a {
                    Some(rows) => DMatrix::from_fn(m, m, |i, j| rows[i][j]),
                    None => DMatrix::zeros(m, m),
                };
                QuadraticAtom::new(mat, DVector::from_vec(a.b.clone()), a.c)
            })
            .collect::<vucalc_core::Result<Vec<_>>>()?;
        let phi = SmoothMap::new(m, atoms)?;
        let parts = match &self.h {
            OuterSpec::Sum { parts } => parts.iter().map(|p| self.part(p)).collect(),
            other => vec![self.part(other)],
        };
        Composite::new(phi, parts)
    }

    fn part(&self, h: &OuterSpec) -> Part {
        let all = || (0..self.phi.len()).collect::<Vec<_>>();
        let (atom, components) = match h {
            OuterSpec::Max { components } => (OuterAtom::Max, components.clone()),
            OuterSpec::L1 { tau, components } => (OuterAtom::L1 { tau: *tau }, components.clone()),
            OuterSpec::Smooth { w, components } => (
                OuterAtom::Smooth {
                    w: w.clone().map(DVector::from_vec),
                },
                components.clone(),
            ),
            OuterSpec::Sum { .. } => unreachable!("nested sums are rejected by validation"),
        };
        Part {
            atom,
            components: components.unwrap_or_else(all),
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
