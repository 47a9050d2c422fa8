//! Report structures and their text rendering.

use std::fmt::Write as _;

use serde::Serialize;
use vucalc_core::{DMatrix, DVector, HypothesisCheck};

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub command: CommandEcho,
    pub dims: Dims,
    pub tolerances: ToleranceBlock,
    pub hypotheses: Hypotheses,
    pub reduced_sets: ReducedSets,
    /// Set when `force` produced results despite a failed hypothesis.
    pub unverified_hypothesis: bool,
    pub decomposition: Decomposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fast_track: Option<ProbeTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CommandEcho {
    pub name: String,
    pub spec_file: String,
    pub args: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Dims {
    pub m: usize,
    pub components: usize,
    pub dim_u: usize,
    pub dim_v: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ToleranceBlock {
    pub active_tol: f64,
    pub zero_tol: f64,
    /// `relative 1e-10` or `absolute <t>`.
    pub rank_rule: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn from_hypothesis(h: &HypothesisCheck) -> Self {
        Check {
            holds: h.holds,
            witness: h.witness.as_ref().map(|w| w.iter().copied().collect()),
            note: None,
        }
    }

    pub fn plain(holds: bool) -> Self {
        Check {
            holds,
            witness: None,
            note: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Hypotheses {
    pub strong_transversality: Check,
    pub transversality: Check,
    pub nondegeneracy: Check,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sum_condition: Option<Check>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReducedSets {
    pub reduced_f: Vec<usize>,
    pub reduced_phi: Vec<usize>,
    /// `full`, `user` or `heuristic`.
    pub source: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Decomposition {
    /// Rows of the `m x dim U` basis matrix.
    pub u_basis: Vec<Vec<f64>>,
    pub v_basis: Vec<Vec<f64>>,
    /// Reduced PDG gradient columns, as rows of an `m x k` matrix.
    pub v_raw: Vec<Vec<f64>>,
    pub gbar: Vec<f64>,
    pub gbar_overridden: bool,
    pub u_gradient: Vec<f64>,
    pub u_lagrangian_gradient: Vec<f64>,
    pub orthogonality_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeTable {
    pub directions: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub newton_tol: f64,
    pub max_iters: usize,
    pub rows: Vec<ProbeLine>,
    /// `max |∇v(0)|` by central differences.
    pub grad_v0: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeLine {
    pub direction: usize,
    pub t: f64,
    pub v_norm: Option<f64>,
    pub ratio: Option<f64>,
    pub newton_iters: usize,
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inactive_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleBlock {
    pub seed: u64,
    pub samples: usize,
    pub radius: f64,
    pub sampled_generators: usize,
    pub comparisons: Vec<Comparison>,
    pub all_passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<f64>>,
    pub gap: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Comparison {
    pub fn scalar(name: &str, gap: f64, tolerance: f64) -> Self {
        Comparison {
            name: name.into(),
            analytic: None,
            oracle: None,
            gap: Some(gap),
            tolerance,
            passed: gap <= tolerance,
            note: None,
        }
    }

    pub fn vectors(name: &str, analytic: &DVector<f64>, oracle: &DVector<f64>, tolerance: f64) -> Self {
        let gap = if analytic.is_empty() { 0.0 } else { (analytic - oracle).amax() };
        Comparison {
            analytic: Some(vec_of(analytic)),
            oracle: Some(vec_of(oracle)),
            ..Self::scalar(name, gap, tolerance)
        }
    }

    pub fn skipped(name: &str, tolerance: f64, note: &str) -> Self {
        Comparison {
            name: name.into(),
            analytic: None,
            oracle: None,
            gap: None,
            tolerance,
            passed: true,
            note: Some(note.into()),
        }
    }
}

pub fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.command;
        let args: String = c.args.iter().map(|(k, v)| format!(" --{k} {v}")).collect();
        let _ = writeln!(out, "vucalc {} {}{}", c.name, c.spec_file, args);
        let d = &self.dims;
        let _ = writeln!(
            out,
            "m = {}, components = {}, dim U = {}, dim V = {}",
            d.m, d.components, d.dim_u, d.dim_v
        );
        let t = &self.tolerances;
        let _ = writeln!(
            out,
            "tolerances: active {}, zero {}, rank {}",
            fmt_num(t.active_tol),
            fmt_num(t.zero_tol),
            t.rank_rule
        );
        if self.unverified_hypothesis {
            let _ = writeln!(out, "WARNING: unverified hypothesis (forced)");
        }

        let _ = writeln!(out, "\nhypotheses");
        let h = &self.hypotheses;
        let mut checks = vec![
            ("strong transversality", &h.strong_transversality),
            ("transversality", &h.transversality),
            ("nondegeneracy", &h.nondegeneracy),
        ];
        if let Some(s) = &h.sum_condition {
            checks.push(("sum condition", s));
        }
        for (name, chk) in checks {
            let _ = write!(out, "  {name:<22} {}", if chk.holds { "holds" } else { "FAILS" });
            if let Some(w) = &chk.witness {
                let _ = write!(out, "  witness {}", fmt_vec(w));
            }
            if let Some(n) = &chk.note {
                let _ = write!(out, "  ({n})");
            }
            out.push('\n');
        }
        let r = &self.reduced_sets;
        let _ = writeln!(
            out,
            "  reduced sets           K_f = {:?}, K_phi = {:?} ({})",
            r.reduced_f, r.reduced_phi, r.source
        );

        let dec = &self.decomposition;
        let _ = writeln!(out, "\ndecomposition");
        write_matrix(&mut out, "U basis", &dec.u_basis, d.dim_u);
        write_matrix(&mut out, "V basis", &dec.v_basis, d.dim_v);
        let raw_cols = dec.v_raw.first().map_or(0, |r| r.len());
        write_matrix(&mut out, "V raw columns", &dec.v_raw, raw_cols);
        let _ = writeln!(
            out,
            "  gbar{}  {}",
            if dec.gbar_overridden { " (override)" } else { "" },
            fmt_vec(&dec.gbar)
        );
        let _ = writeln!(out, "  U-gradient             {}", fmt_vec(&dec.u_gradient));
        let _ = writeln!(out, "  U-Lagrangian gradient  {}", fmt_vec(&dec.u_lagrangian_gradient));
        let _ = writeln!(out, "  |U^T V|                {}", fmt_num(dec.orthogonality_error));

        if let Some(ft) = &self.fast_track {
            let _ = writeln!(
                out,
                "\nfast track (Newton tol {}, max {} iterations, |grad v(0)| = {})",
                fmt_num(ft.newton_tol),
                ft.max_iters,
                fmt_num(ft.grad_v0)
            );
            for (k, dir) in ft.directions.iter().enumerate() {
                let _ = writeln!(out, "  direction {k}: {}", fmt_vec(dir));
            }
            let _ = writeln!(
                out,
                "  {:>3} {:>12} {:>12} {:>12} {:>5} {:>12}",
                "dir", "t", "|v(td)|", "|v|/t^2", "iters", "residual"
            );
            for row in &ft.rows {
                let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_num);
                let _ = write!(
                    out,
                    "  {:>3} {:>12} {:>12} {:>12} {:>5} {:>12}",
                    row.direction,
                    fmt_num(row.t),
                    opt(row.v_norm),
                    opt(row.ratio),
                    row.newton_iters,
                    opt(row.residual)
                );
                if let Some(e) = &row.error {
                    let _ = write!(out, "  {e}");
                }
                out.push('\n');
            }
        }

        if let Some(o) = &self.oracle {
            let _ = writeln!(
                out,
                "\nverification (seed {}, {} samples, radius {}, {} distinct sampled gradients)",
                o.seed,
                o.samples,
                fmt_num(o.radius),
                o.sampled_generators
            );
            for cmp in &o.comparisons {
                let status = match (cmp.passed, cmp.gap) {
                    (_, None) => "skip",
                    (true, _) => "ok",
                    (false, _) => "MISMATCH",
                };
                let _ = write!(out, "  {:<34} {:<8}", cmp.name, status);
                if let Some(g) = cmp.gap {
                    let _ = write!(out, " gap {} (tol {})", fmt_num(g), fmt_num(cmp.tolerance));
                }
                if let Some(n) = &cmp.note {
                    let _ = write!(out, " {n}");
                }
                out.push('\n');
                if !cmp.passed {
                    if let (Some(a), Some(b)) = (&cmp.analytic, &cmp.oracle) {
                        let _ = writeln!(out, "    analytic {}", fmt_vec(a));
                        let _ = writeln!(out, "    oracle   {}", fmt_vec(b));
                    }
                }
            }
            let _ = writeln!(out, "  result: {}", if o.all_passed { "PASS" } else { "FAIL" });
        }
        out
    }
}

fn write_matrix(out: &mut String, name: &str, rows: &[Vec<f64>], cols: usize) {
    if cols == 0 {
        let _ = writeln!(out, "  {name}: (empty)");
        return;
    }
    let _ = writeln!(out, "  {name}:");
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| format!("{:>12}", fmt_num(v))).collect();
        let _ = writeln!(out, "    {}", cells.join(" "));
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_num(x)).collect();
    format!("[{}]", parts.join(", "))
}

/// Six significant digits, trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_num;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(-0.4), "-0.4");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_num(123456.7), "123457");
        assert_eq!(fmt_num(1234567.0), "1.23457e6");
        assert_eq!(fmt_num(12345.67), "12345.7");
        assert_eq!(fmt_num(2.5e-7), "2.5e-7");
        assert_eq!(fmt_num(0.123456789), "0.123457");
        assert_eq!(fmt_num(-1e-16), "-1e-16");
    }
}
