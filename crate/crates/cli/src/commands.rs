//! Command implementations. Each returns the finished report or a
//! [`Failure`] carrying the exit code.

use std::path::Path;

use vucalc_core::oracles::DEDUP_TOL;
use vucalc_core::subspace::{orthonormal_complement, STRUCTURAL_RANK_TOL};
use vucalc_core::vu::StrongTransversality;
use vucalc_core::{
    brute_force_u_space, decompose_pdg, fd_u_lagrangian_gradient, hausdorff_distance, rank_tol_override,
    sample_subdifferential, set_rank_tol_override, strong_transversality, subspace_distance, Analysis,
    ChainResult, Composite, DVector, FastTrack, PdgStructure, SubdifferentialModel, VuError, VuPair,
};

use crate::report::{
    rows_of, vec_of, Check, CommandEcho, Comparison, Decomposition, Dims, Hypotheses, OracleBlock, ProbeLine,
    ProbeTable, ReducedSets, Report, ToleranceBlock,
};
use crate::spec::{ProblemSpec, SpecError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

pub const RANK_TOL_ENV: &str = "VUCALC_RANK_TOL";
pub const DEFAULT_SCALES: [f64; 3] = [0.1, 0.01, 0.001];
pub const SUBSPACE_TOL: f64 = 1e-8;
pub const FD_GRADIENT_TOL: f64 = 1e-5;
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
    /// Printed on stdout before exiting (hypothesis witnesses).
    pub block: Option<String>,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
            block: None,
        }
    }
}

/// Maps a library error onto the exit-code contract.
pub fn failure_from(e: VuError) -> Failure {
    let code = match &e {
        VuError::TransversalityViolated { .. }
        | VuError::SumRuleConditionViolated
        | VuError::AffineDependence { .. }
        | VuError::MissingHorizonInfo
        | VuError::RankDeficientVBar { .. } => EXIT_HYPOTHESIS,
        VuError::NewtonDiverged { .. }
        | VuError::SingularNewtonJacobian
        | VuError::SingularVtV
        | VuError::InsufficientSamples { .. }
        | VuError::GeneratorBudgetExceeded { .. }
        | VuError::NonFiniteInput => EXIT_NUMERICAL,
        VuError::DimensionMismatch { .. }
        | VuError::InvalidParameter(_)
        | VuError::PdgInconsistent(_)
        | VuError::TrackDimensions { .. } => EXIT_INVALID,
    };
    Failure::new(code, e.to_string())
}

pub fn load_spec(path: &Path) -> Result<ProblemSpec, Failure> {
    let shown = path.display();
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_INVALID, format!("{shown}: {e}")))?;
    ProblemSpec::parse(&text).map_err(|e| match e {
        SpecError::Parse { .. } => Failure::new(EXIT_INVALID, format!("{shown}:{e}")),
        SpecError::Invalid { .. } => Failure::new(EXIT_INVALID, format!("{shown}: {e}")),
    })
}

/// Installs the rank-tolerance override: the environment variable wins
/// over `options.rank_tol`.
pub fn apply_rank_tol(spec: &ProblemSpec) -> Result<(), Failure> {
    let from_env = match std::env::var(RANK_TOL_ENV) {
        Ok(s) => {
            let t: f64 = s
                .trim()
                .parse()
                .ok()
                .filter(|t: &f64| *t > 0.0 && t.is_finite())
                .ok_or_else(|| Failure::new(EXIT_INVALID, format!("{RANK_TOL_ENV}: expected a positive number, got {s:?}")))?;
            Some(t)
        }
        Err(_) => None,
    };
    set_rank_tol_override(from_env.or(spec.options.rank_tol));
    Ok(())
}

fn rank_rule() -> String {
    match rank_tol_override() {
        Some(t) => format!("absolute {t:e}"),
        None => format!("relative {STRUCTURAL_RANK_TOL:e}"),
    }
}

/// Everything the three commands share.
pub struct Context {
    pub spec: ProblemSpec,
    pub composite: Composite,
    pub xbar: DVector<f64>,
    pub analysis: Analysis,
    pub chain: ChainResult,
    pub strong: StrongTransversality,
    pub pdg: PdgStructure,
    pub pdg_vu: VuPair,
    pub reduced_source: &'static str,
    pub gbar: DVector<f64>,
    pub u_lagrangian_gradient: DVector<f64>,
    pub u_gradient: DVector<f64>,
}

pub fn build_context(spec: ProblemSpec) -> Result<Context, Failure> {
    apply_rank_tol(&spec)?;
    let composite = spec.composite().map_err(failure_from)?;
    build_context_with(spec, composite)
}

fn build_context_with(spec: ProblemSpec, composite: Composite) -> Result<Context, Failure> {
    let xbar = spec.xbar();
    let tols = spec.tolerances();
    let force = spec.options.force;
    let analysis = composite.analyze(&xbar, &tols, force).map_err(failure_from)?;
    if !analysis.hypotheses_hold() && !force {
        return Err(hypothesis_failure(&analysis));
    }
    let chain = analysis.chain.clone().expect("chain result present when hypotheses hold or forced");

    let full = composite.pdg(&xbar, &tols).map_err(failure_from)?;
    let strong = strong_transversality(&full, &xbar).map_err(failure_from)?;
    let (pdg, reduced_source) = match (&spec.options.reduced_f, &spec.options.reduced_phi) {
        (Some(kf), kphi) => (
            full.with_reduced(kf.clone(), kphi.clone().unwrap_or_default())
                .map_err(|e| Failure::new(EXIT_INVALID, format!("options.reduced_f: {e}")))?,
            "user",
        ),
        _ if strong.holds => (full, "full"),
        _ => {
            let s = &strong.suggestion;
            (
                full.with_reduced(s.reduced_f.clone(), s.reduced_phi.clone()).map_err(failure_from)?,
                "heuristic",
            )
        }
    };
    let pdg_vu = decompose_pdg(&pdg, &xbar).map_err(failure_from)?;

    let overridden = spec.gbar_override();
    let gbar = overridden.unwrap_or_else(|| chain.gbar.clone());
    let u = chain.u_basis.matrix();
    let u_lagrangian_gradient = u.transpose() * &gbar;
    let u_gradient = u * &u_lagrangian_gradient;
    Ok(Context {
        spec,
        composite,
        xbar,
        analysis,
        chain,
        strong,
        pdg,
        pdg_vu,
        reduced_source,
        gbar,
        u_lagrangian_gradient,
        u_gradient,
    })
}

fn hypothesis_failure(a: &Analysis) -> Failure {
    let (name, witness) = if !a.transversality.holds {
        ("transversality", a.transversality.witness.as_ref())
    } else if !a.nondegeneracy.holds {
        ("nondegeneracy", a.nondegeneracy.witness.as_ref())
    } else {
        ("sum condition", None)
    };
    let mut block = format!("hypothesis violated: {name}\n");
    if let Some(w) = witness {
        block.push_str(&format!("witness: {}\n", crate::report::fmt_vec(&vec_of(w))));
    }
    Failure {
        code: EXIT_HYPOTHESIS,
        message: format!("hypothesis violated: {name}; set options.force to compute anyway"),
        block: Some(block),
    }
}

fn base_report(ctx: &Context, name: &str, spec_file: &str, args: Vec<(String, String)>) -> Report {
    let a = &ctx.analysis;
    let m = ctx.spec.m;
    let u = &ctx.chain.u_basis;
    let v = orthonormal_complement(u);
    let mut strong = Check::plain(ctx.strong.holds);
    if ctx.reduced_source == "heuristic" {
        strong.note = Some("reduced sets chosen by greedy column selection".into());
    }
    let orthogonality_error = if u.dim() == 0 || v.dim() == 0 {
        0.0
    } else {
        (u.matrix().transpose() * v.matrix()).amax()
    };
    Report {
        command: CommandEcho {
            name: name.into(),
            spec_file: spec_file.into(),
            args,
        },
        dims: Dims {
            m,
            components: ctx.spec.phi.len(),
            dim_u: u.dim(),
            dim_v: v.dim(),
        },
        tolerances: ToleranceBlock {
            active_tol: ctx.spec.options.active_tol,
            zero_tol: ctx.spec.options.zero_tol,
            rank_rule: rank_rule(),
        },
        hypotheses: Hypotheses {
            strong_transversality: strong,
            transversality: Check::from_hypothesis(&a.transversality),
            nondegeneracy: Check::from_hypothesis(&a.nondegeneracy),
            sum_condition: a.sum_condition.map(Check::plain),
        },
        reduced_sets: ReducedSets {
            reduced_f: ctx.pdg.reduced_f().to_vec(),
            reduced_phi: ctx.pdg.reduced_phi().to_vec(),
            source: ctx.reduced_source.into(),
        },
        unverified_hypothesis: !a.hypotheses_hold(),
        decomposition: Decomposition {
            u_basis: rows_of(u.matrix()),
            v_basis: rows_of(v.matrix()),
            v_raw: rows_of(&ctx.pdg_vu.v_raw),
            gbar: vec_of(&ctx.gbar),
            gbar_overridden: ctx.spec.options.gbar_override.is_some(),
            u_gradient: vec_of(&ctx.u_gradient),
            u_lagrangian_gradient: vec_of(&ctx.u_lagrangian_gradient),
            orthogonality_error,
        },
        fast_track: None,
        oracle: None,
    }
}

pub fn decompose(path: &Path) -> Result<Report, Failure> {
    let ctx = build_context(load_spec(path)?)?;
    Ok(base_report(&ctx, "decompose", &path.display().to_string(), Vec::new()))
}

/// `auto` or semicolon-separated comma lists, e.g. `1,0;0,1`.
pub fn parse_directions(s: &str) -> Result<Option<Vec<Vec<f64>>>, Failure> {
    if s.trim() == "auto" {
        return Ok(None);
    }
    s.split(';')
        .map(|d| parse_list(d, "--directions"))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

pub fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::new(EXIT_INVALID, format!("{flag}: cannot parse {t:?} as a number")))
        })
        .collect()
}

pub struct TrackArgs {
    pub scales: Option<String>,
    pub directions: Option<String>,
}

pub fn fast_track(path: &Path, args: &TrackArgs) -> Result<Report, Failure> {
    let ctx = build_context(load_spec(path)?)?;
    let opts = &ctx.spec.options;
    let ft = match FastTrack::new(ctx.pdg.clone(), ctx.xbar.clone()) {
        Ok(ft) => ft,
        Err(VuError::TrackDimensions { dim_u, dim_v }) => {
            let need = if dim_v == 0 { "dim V ≥ 1" } else { "dim U ≥ 1" };
            return Err(Failure::new(
                EXIT_INVALID,
                format!("fast-track requires {need} (dim U = {dim_u}, dim V = {dim_v})"),
            ));
        }
        Err(e) => return Err(failure_from(e)),
    }
    .with_newton(opts.newton_tol, opts.max_iters)
    .map_err(failure_from)?;

    let scales = match &args.scales {
        Some(s) => parse_list(s, "--scales")?,
        None => opts.scales.clone().unwrap_or_else(|| DEFAULT_SCALES.to_vec()),
    };
    if let Some(bad) = scales.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Failure::new(EXIT_INVALID, format!("--scales: entries must be positive, got {bad}")));
    }
    let explicit = match &args.directions {
        Some(s) => parse_directions(s)?,
        None => opts.directions.clone(),
    };
    let k = ctx.chain.u_basis.dim();
    let directions: Vec<DVector<f64>> = match explicit {
        None => (0..k).map(|i| DVector::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 })).collect(),
        Some(ds) => ds
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let d = DVector::from_vec(d);
                if d.len() != k {
                    return Err(Failure::new(
                        EXIT_INVALID,
                        format!("direction {i}: expected {k} entries (dim U), got {}", d.len()),
                    ));
                }
                let n = d.norm();
                if n == 0.0 {
                    return Err(Failure::new(EXIT_INVALID, format!("direction {i} is zero")));
                }
                Ok(d / n)
            })
            .collect::<Result<_, _>>()?,
    };
    // Directions are given in the reported U basis; the track has its own.
    let to_track = ft.u_basis().transpose() * ctx.chain.u_basis.matrix();
    let track_dirs: Vec<DVector<f64>> = directions.iter().map(|d| &to_track * d).collect();
    let probe = ft.property_probe(&track_dirs, &scales).map_err(failure_from)?;
    if probe.all_failed() {
        let first = probe.rows.iter().find_map(|r| r.error.clone());
        let detail = first.map_or_else(String::new, |e| format!(": {e}"));
        return Err(Failure::new(
            EXIT_NUMERICAL,
            format!("Newton failed at every requested scale{detail}"),
        ));
    }

    let mut echo = Vec::new();
    if let Some(s) = &args.scales {
        echo.push(("scales".to_string(), s.clone()));
    }
    if let Some(d) = &args.directions {
        echo.push(("directions".to_string(), d.clone()));
    }
    let mut report = base_report(&ctx, "fast-track", &path.display().to_string(), echo);
    let finite = |v: f64| v.is_finite().then_some(v);
    report.fast_track = Some(ProbeTable {
        directions: directions.iter().map(vec_of).collect(),
        scales,
        newton_tol: probe.newton_tol,
        max_iters: opts.max_iters,
        rows: probe
            .rows
            .iter()
            .map(|r| ProbeLine {
                direction: r.direction,
                t: r.t,
                v_norm: finite(r.v_norm),
                ratio: finite(r.ratio),
                newton_iters: r.newton_iters,
                residual: finite(r.residual),
                inactive_gap: r.inactive_gap,
                error: r.error.as_ref().map(|e| e.to_string()),
            })
            .collect(),
        grad_v0: probe.grad_v0_norm,
    });
    Ok(report)
}

pub struct VerifyArgs {
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub radius: Option<f64>,
}

/// Runs the oracles against the analytic results. The report is returned
/// in both outcomes; `Ok(false)` means a comparison failed.
pub fn verify(path: &Path, args: &VerifyArgs) -> Result<(Report, bool), Failure> {
    let spec = load_spec(path)?;
    let seed = args.seed.unwrap_or(spec.options.seed);
    let samples = args.samples.unwrap_or(spec.options.samples);
    let radius = args.radius.unwrap_or(spec.options.radius);
    if samples == 0 {
        return Err(Failure::new(EXIT_INVALID, "--samples must be at least 1"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Failure::new(EXIT_INVALID, format!("--radius must be positive, got {radius}")));
    }
    apply_rank_tol(&spec)?;
    let composite = spec.composite().map_err(failure_from)?;
    let active_tol = spec.options.active_tol;
    let oracle = |x: &DVector<f64>| composite.gradient(x, active_tol);
    let sampled = sample_subdifferential(&oracle, &spec.xbar(), radius, samples, seed).map_err(failure_from)?;

    let ctx = build_context_with(spec, composite)?;
    let comparisons = compare(&ctx, &sampled, radius)?;
    let all_passed = comparisons.iter().all(|c| c.passed);

    let mut echo = Vec::new();
    if let Some(s) = args.seed {
        echo.push(("seed".to_string(), s.to_string()));
    }
    if let Some(s) = args.samples {
        echo.push(("samples".to_string(), s.to_string()));
    }
    if let Some(r) = args.radius {
        echo.push(("radius".to_string(), format!("{r:e}")));
    }
    let mut report = base_report(&ctx, "verify", &path.display().to_string(), echo);
    report.oracle = Some(OracleBlock {
        seed,
        samples,
        radius,
        sampled_generators: sampled.generators().len(),
        comparisons,
        all_passed,
    });
    Ok((report, all_passed))
}

fn compare(ctx: &Context, sampled: &SubdifferentialModel, radius: f64) -> Result<Vec<Comparison>, Failure> {
    let u = &ctx.chain.u_basis;
    let mut out = Vec::new();

    let exact = ctx.chain.pushforward_model.as_ref();
    match exact {
        Some(model) => {
            let brute = brute_force_u_space(model).map_err(failure_from)?;
            let d = subspace_distance(u, &brute).map_err(failure_from)?;
            out.push(Comparison::scalar("u_space_vs_brute_force", d, SUBSPACE_TOL));
        }
        None => out.push(Comparison::skipped(
            "u_space_vs_brute_force",
            SUBSPACE_TOL,
            "generator budget exceeded",
        )),
    }

    let d = subspace_distance(u, &ctx.pdg_vu.u_basis).map_err(failure_from)?;
    out.push(Comparison::scalar("u_space_vs_pdg", d, SUBSPACE_TOL));

    let ft = FastTrack::build(ctx.pdg.clone(), ctx.xbar.clone())
        .and_then(|ft| ft.with_newton(ctx.spec.options.newton_tol, ctx.spec.options.max_iters))
        .map_err(failure_from)?;
    let f_eval = |x: &DVector<f64>| ctx.composite.value(x).unwrap_or(f64::NAN);
    let fd = fd_u_lagrangian_gradient(&f_eval, &ft, &ctx.gbar, ctx.spec.options.fd_step).map_err(failure_from)?;
    let fd_ambient = ft.u_basis() * fd;
    out.push(Comparison::vectors(
        "u_gradient_vs_finite_differences",
        &ctx.u_gradient,
        &fd_ambient,
        FD_GRADIENT_TOL,
    ));

    match exact {
        Some(model) => {
            let bound = 10.0 * radius * ctx.composite.piece_lipschitz_bound() + DEDUP_TOL;
            let gap = hausdorff_distance(sampled.generators(), model.generators());
            out.push(Comparison::scalar("sampled_subdifferential_hausdorff", gap, bound));

            let scale = model.scale().max(1.0);
            let ut = u.matrix().transpose();
            let worst = model
                .generators()
                .iter()
                .map(|g| if u.dim() == 0 { 0.0 } else { (&ut * (g - &ctx.gbar)).amax() })
                .fold(0.0, f64::max);
            out.push(Comparison::scalar("u_space_membership", worst, MEMBERSHIP_TOL * scale));
        }
        None => {
            out.push(Comparison::skipped(
                "sampled_subdifferential_hausdorff",
                0.0,
                "generator budget exceeded",
            ));
            out.push(Comparison::skipped("u_space_membership", MEMBERSHIP_TOL, "generator budget exceeded"));
        }
    }
    Ok(out)
}
