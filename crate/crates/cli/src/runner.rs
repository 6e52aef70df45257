//! `run`, `verify` and `suite`.

use std::fs;
use std::path::{Path, PathBuf};

use kmcert::bounds::{
    empirical_constants, fit_tail_rate, pointwise_bound, ergodic_bound, displacement_bounds, verify_step_inequalities, verify_trace,
    BoundConstants, SubRegularityModel, BOUND_SLACK, STEP_SLACK, MONOTONE_SLACK,
};
use kmcert::km::{
    run_km_nonstationary, run_km_observed, ErrorModel, ErrorSchedule, FixReference, GammaSchedule, KmConfig,
    RelaxationSchedule, StopRule, StepObserver,
};
use kmcert::operators::{Membership, OperatorSpec};
use kmcert::problems::{
    make_gfb_multiblock, make_lasso, make_pds_small, make_quadratic_gd, make_two_subspaces, multiblock_spec, Method,
    ProblemInstance,
};
use kmcert::spaces::{Point, ProductPoint, Shape};
use kmcert::splitting::{build_gfb, pds_certificates, DrsObserver, GfbFamily, GfbObserver, GfbSpec};
use kmcert::IterationTrace;
use serde::{Deserialize, Serialize};

use crate::config::{ErrorKind, MethodKind, Problem, Resolved, RunConfig, ScheduleKind};
use crate::error::CliError;
use crate::presets;
use crate::report::{
    verdict, CertKind, CertificateRecord, ConstantsRecord, LocalModelRecord, Report, SummabilityRecord,
    ViolationRecord, NOT_SUMMABLE,
};
use crate::trace_csv::{self, TraceRow};

/// Certificates must vanish to this level at the reference fixed point.
pub const FIXED_POINT_CERT_TOL: f64 = 1e-10;
/// Relative tolerance when a bound column is recomputed.
pub const COLUMN_RTOL: f64 = 1e-12;

pub struct RunOutput {
    pub rows: Vec<TraceRow>,
    pub report: Report,
    pub trace: IterationTrace,
}

fn zero_map(d: usize) -> ProblemInstance {
    let shape = Shape::single(d);
    let z0: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.5 * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    ProblemInstance {
        name: format!("zero-map(d={d})"),
        method: Method::Operator(OperatorSpec::zero(shape.clone())),
        fix: Some(FixReference::Point(shape.zeros())),
        analytic: Default::default(),
        z0: ProductPoint::single(Point::new(z0).expect("finite")),
        relaxation: RelaxationSchedule::Constant(0.5),
        primal_reference: None,
    }
}

/// The problem instance described by `cfg`, with its fixed-point reference.
pub fn instance(cfg: &Resolved) -> Result<ProblemInstance, CliError> {
    let mut p = match cfg.problem {
        Problem::ZeroMap => zero_map(cfg.dim),
        Problem::QuadraticGd => make_quadratic_gd(cfg.delta_min, cfg.delta_max, cfg.dim, cfg.gamma)?,
        Problem::TwoSubspaces => make_two_subspaces(cfg.theta, cfg.dim)?,
        Problem::Lasso => make_lasso(cfg.m, cfg.n, cfg.mu, cfg.problem_seed)?,
        Problem::Multiblock => {
            let mut p = make_gfb_multiblock(cfg.blocks, cfg.dim, cfg.problem_seed)?;
            let gamma = if cfg.method == MethodKind::GfbNonstationary { cfg.gamma_limit } else { cfg.gamma };
            let spec = GfbSpec { gamma, ..multiblock_spec(cfg.blocks, cfg.dim, cfg.problem_seed)? };
            p.method = Method::Gfb(build_gfb(spec)?);
            p.analytic.gamma = Some(gamma);
            p
        }
        Problem::PdsSmall => make_pds_small(cfg.problem_seed)?,
    };
    p.relaxation = RelaxationSchedule::Constant(cfg.lambda);
    Ok(p.with_reference()?)
}

fn error_model(cfg: &Resolved, p: &ProblemInstance) -> Result<ErrorModel, CliError> {
    let schedule = ErrorSchedule::Power { c: cfg.error_c, p: cfg.error_p };
    Ok(match cfg.errors {
        ErrorKind::Exact => ErrorModel::Exact,
        ErrorKind::Additive => ErrorModel::Additive(schedule),
        ErrorKind::Channels => ErrorModel::Channels {
            schedule,
            injector: p.method.injector().ok_or_else(|| CliError::Usage("method has no error channels".into()))?,
        },
    })
}

fn gamma_schedule(cfg: &Resolved) -> GammaSchedule {
    let (limit, amp) = (cfg.gamma_limit, cfg.gamma_amp);
    match cfg.gamma_schedule {
        ScheduleKind::Constant => GammaSchedule::Constant(limit),
        ScheduleKind::Geometric => GammaSchedule::Geometric { limit, amp, ratio: cfg.gamma_ratio },
        ScheduleKind::InverseSquare => GammaSchedule::InverseSquare { limit, amp },
        ScheduleKind::Harmonic => GammaSchedule::Harmonic { limit, amp },
    }
}

struct CertSeries {
    record: CertificateRecord,
    value: Vec<f64>,
    bound: Vec<f64>,
    violations: Vec<ViolationRecord>,
}

fn membership_label(m: &Membership) -> String {
    match m {
        Membership::Verified { residual } => format!("verified (residual {residual:e})"),
        Membership::Violated { residual } => format!("violated (residual {residual:e})"),
        Membership::StructuralOnly => "structural only".into(),
    }
}

fn max_ratio(value: &[f64], bound: &[f64]) -> f64 {
    value.iter().zip(bound).map(|(v, b)| if *b > 0.0 { v / b } else if *v > 0.0 { f64::INFINITY } else { 0.0 }).fold(0.0, f64::max)
}

fn certificates(
    p: &ProblemInstance,
    tr: &IterationTrace,
    c: &BoundConstants,
    gfb_obs: Option<GfbObserver>,
    drs_obs: Option<DrsObserver>,
) -> Result<Option<CertSeries>, CliError> {
    let z_star = p.fix.as_ref().map(|f| f.anchor(&p.z0));
    let k_max = tr.steps();
    let mut violations = vec![];
    let (kind, gamma, factor, ambient, value, bound, ergodic, membership, at_fix, w_gap) = match (&p.method, gfb_obs, drs_obs) {
        (Method::Gfb(g), Some(obs), _) => {
            let bound: Vec<f64> = (0..k_max).map(|k| g.certificate_bound(k, c)).collect();
            let eb: Vec<f64> = (0..k_max).map(|k| g.ergodic_certificate_bound(k, c)).collect();
            for k in 0..k_max {
                if !(obs.ergodic[k] <= eb[k] + BOUND_SLACK) {
                    violations.push(ViolationRecord::new(Some(k), "ergodic-certificate", obs.ergodic[k], eb[k]));
                }
            }
            let at = match &z_star { Some(z) => g.certificate(z)?.criterion, None => f64::NAN };
            (CertKind::Gfb, g.spec().gamma, None, None, obs.criterion, bound, Some(max_ratio(&obs.ergodic, &eb)), obs.membership, at, None)
        }
        (Method::Drs(d), _, Some(obs)) => {
            let bound: Vec<f64> =
                (0..k_max).map(|k| d.certificate_bound(k, tr.lambdas[k], tr.norms.err[k], c)).collect();
            let at = match &z_star { Some(z) => d.certificate(z, z)?.criterion, None => f64::NAN };
            (CertKind::Drs, d.spec().gamma, None, None, obs.criterion, bound, None, obs.membership, at, None)
        }
        (Method::Pds(pds), _, _) => {
            let cert = pds_certificates(pds, tr)?;
            let at = match &z_star {
                Some(z) => (z - &pds.operator().apply(z)?).norm(),
                None => f64::NAN,
            };
            let w_gap = cert.w_gap.as_ref().map(|w| w.iter().copied().fold(0.0, f64::max));
            let amb = ConstantsRecord::from(&cert.constants);
            (
                CertKind::PdsSurrogate,
                pds.spec().tau,
                Some(pds.certificate_factor()),
                Some(amb),
                cert.criterion,
                cert.bound,
                None,
                Membership::StructuralOnly,
                at,
                w_gap,
            )
        }
        _ => return Ok(None),
    };
    for k in 0..k_max {
        if !(value[k] <= bound[k] + BOUND_SLACK) {
            violations.push(ViolationRecord::new(Some(k), "certificate", value[k], bound[k]));
        }
    }
    if let Membership::Violated { residual } = membership {
        violations.push(ViolationRecord::new(None, "membership", residual, kmcert::operators::MEMBERSHIP_TOL));
    }
    if at_fix.is_finite() && at_fix > FIXED_POINT_CERT_TOL {
        violations.push(ViolationRecord::new(None, "certificate-at-fixed-point", at_fix, FIXED_POINT_CERT_TOL));
    }
    let record = CertificateRecord {
        kind,
        gamma,
        factor,
        ambient,
        max_ratio: max_ratio(&value, &bound),
        ergodic_max_ratio: ergodic,
        membership: membership_label(&membership),
        final_value: value.last().copied().unwrap_or(f64::NAN),
        at_fixed_point: at_fix,
        w_gap_max: w_gap,
    };
    Ok(Some(CertSeries { record, value, bound, violations }))
}

fn rows(
    tr: &IterationTrace,
    c: Option<&BoundConstants>,
    model: Option<&SubRegularityModel>,
    gamma: Option<f64>,
    cert: Option<&CertSeries>,
) -> Vec<TraceRow> {
    let k_max = tr.steps();
    let lsum = tr.lambda_sums();
    let fix = tr.norms.fix.as_ref();
    (0..=k_max)
        .map(|k| {
            let step = k < k_max;
            let s = |v: &Vec<f64>| if step { Some(v[k]) } else { None };
            TraceRow {
                k,
                lambda: s(&tr.lambdas),
                gamma: if step { tr.gammas.as_ref().map(|g| g[k]).or(gamma) } else { None },
                err_norm: s(&tr.norms.err),
                res_norm: Some(tr.norms.res[k]),
                erg_res_norm: s(&tr.norms.erg),
                disp_norm: s(&tr.norms.disp),
                dist_fix: fix.map(|f| f.dist_fix[k]),
                pw_bound: c.map(|c| pointwise_bound(k, c)),
                erg_bound: c.filter(|_| step).map(|c| ergodic_bound(c, lsum[k])),
                local_model: match (model, c, fix) {
                    (Some(m), Some(c), Some(f)) if step => {
                        let lam = tr.lambdas[k];
                        Some(m.zeta(lam) * f.dist_fix[k] * f.dist_fix[k] + c.nu1 * lam * tr.norms.err[k])
                    }
                    _ => None,
                },
                cert_value: cert.filter(|_| step).map(|c| c.value[k]),
                cert_bound: cert.filter(|_| step).map(|c| c.bound[k]),
            }
        })
        .collect()
}

/// Executes one configured run in memory.
pub fn execute(cfg: &Resolved) -> Result<RunOutput, CliError> {
    let p = instance(cfg)?;
    let errors = error_model(cfg, &p)?;
    let kcfg = KmConfig {
        relaxation: p.relaxation.clone(),
        errors: errors.clone(),
        stop: StopRule { max_iters: cfg.max_iters, residual_tol: cfg.tol },
        seed: cfg.seed,
        retain: cfg.retain,
        fix: p.fix.clone(),
        ambient: matches!(p.method, Method::Pds(_)),
    };
    let op = p.operator();
    let mut notes = vec![];
    let mut gfb_obs = None;
    let mut drs_obs = None;
    let mut gamma_summ = None;
    let tr = if cfg.method == MethodKind::GfbNonstationary {
        let Method::Gfb(g) = &p.method else { unreachable!("validated") };
        let sched = gamma_schedule(cfg);
        gamma_summ = Some(sched.summability());
        notes.push("certificates are not evaluated for non-stationary runs".into());
        run_km_nonstationary(&GfbFamily { spec: g.spec().clone() }, &sched, &p.z0, &kcfg, cfg.track_limit)?
    } else {
        let mut observers: Vec<&mut dyn StepObserver> = vec![];
        match &p.method {
            _ if cfg.method == MethodKind::Km => {}
            Method::Gfb(g) => gfb_obs = Some(GfbObserver::new(g)),
            Method::Drs(d) => drs_obs = Some(DrsObserver::new(d)),
            _ => {}
        }
        if let Some(o) = gfb_obs.as_mut() {
            observers.push(o);
        }
        if let Some(o) = drs_obs.as_mut() {
            observers.push(o);
        }
        let mut kcfg = kcfg.clone();
        if matches!(p.method, Method::Pds(_)) {
            kcfg.retain = true;
        }
        run_km_observed(&op, &p.z0, &kcfg, &mut observers)?
    };

    let verifiable = cfg.method != MethodKind::GfbNonstationary || cfg.track_limit;
    let c = if verifiable { Some(empirical_constants(&tr)?) } else { None };
    if !verifiable {
        notes.push("native residuals against T_gamma_k: bounds not checked".into());
    }
    let model = p.local_model();
    let mut violations: Vec<ViolationRecord> = vec![];
    if let Some(c) = &c {
        violations.extend(verify_trace(&tr, c, model.as_ref()).iter().map(ViolationRecord::from));
        violations.extend(verify_step_inequalities(&tr, c).iter().map(ViolationRecord::from));
    }
    let cert = match &c {
        Some(c) if !matches!(cfg.method, MethodKind::Km | MethodKind::GfbNonstationary) => certificates(&p, &tr, c, gfb_obs, drs_obs)?,
        _ => None,
    };
    if let Some(cs) = &cert {
        violations.extend(cs.violations.iter().cloned());
    }

    let observed_rate = match fit_tail_rate(&tr.norms.res, cfg.tail_fraction) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("residual rate not fitted: {e}"));
            None
        }
    };
    let observed_rate_sq = tr
        .norms
        .fix
        .as_ref()
        .and_then(|f| fit_tail_rate(&f.dist_fix.iter().map(|d| d * d).collect::<Vec<_>>(), cfg.tail_fraction).ok());
    let es = errors.schedule().summability();
    let flag = match gamma_summ {
        Some(g) if !g.summable => Some(NOT_SUMMABLE.to_string()),
        _ if !(es.lambda_eps || errors.is_exact()) => Some(NOT_SUMMABLE.to_string()),
        _ => None,
    };
    let primal_reference_gap = match (&p.method, &p.primal_reference) {
        (Method::Pds(_), Some(x)) => Some((tr.final_z.block(0) - x).norm_inf()),
        _ => None,
    };
    if p.analytic.surrogate {
        notes.push("quadratic surrogate with the stated moduli".into());
    }
    let table = rows(&tr, c.as_ref(), model.as_ref(), p.analytic.gamma, cert.as_ref());
    let report = Report {
        config: cfg.clone(),
        problem: p.name.clone(),
        operator: op.label().to_string(),
        class: op.class().to_string(),
        alpha: op.class().alpha(),
        metric: tr.metric.label().to_string(),
        stop: format!("{:?}", tr.stop),
        steps: tr.steps(),
        final_residual: *tr.norms.res.last().expect("at least one state"),
        constants: c.as_ref().map(ConstantsRecord::from),
        observed_rate,
        observed_rate_sq,
        spectral_rate: p.analytic.spectral_rate,
        theoretical_rate: model.as_ref().map(|m| m.zeta(cfg.lambda).sqrt()).or(p.analytic.theoretical_rate),
        local_model: model.as_ref().map(|m| LocalModelRecord { kappa: m.kappa, alpha: m.alpha }),
        certificate: cert.map(|c| c.record),
        summability: SummabilityRecord {
            errors_summable: es.lambda_eps,
            errors_weighted_summable: es.k_eps,
            gamma_summable: gamma_summ.map(|g| g.summable),
            gamma_weighted_summable: gamma_summ.map(|g| g.weighted_summable),
            flag,
        },
        primal_reference_gap,
        surrogate: p.analytic.surrogate,
        notes,
        verdict: verdict(&violations),
        violations,
    };
    Ok(RunOutput { rows: table, report, trace: tr })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn trace_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}.csv"))
}

pub fn report_path(out: &Path, name: &str) -> PathBuf {
    out.join(format!("{name}.report.json"))
}

/// Runs and writes `<out>/<name>.csv` and `<out>/<name>.report.json`.
pub fn cmd_run(cfg: &Resolved, out: &Path) -> Result<RunOutput, CliError> {
    let run = execute(cfg)?;
    fs::create_dir_all(out)?;
    write_atomic(&trace_path(out, &cfg.name), trace_csv::emit(&run.rows).as_bytes())?;
    let json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    write_atomic(&report_path(out, &cfg.name), json.as_bytes())?;
    Ok(run)
}

/// Resolves `--config` / `--preset` plus command-line overrides.
pub fn load_config(
    config: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
    max_iters: Option<usize>,
    tol: Option<f64>,
) -> Result<Resolved, CliError> {
    let mut rc = match (config, preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --config or --preset".into())),
        (None, None) => return Err(CliError::Usage("one of --config or --preset is required".into())),
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut rc = RunConfig::from_toml(&text)?;
            if rc.name.is_none() {
                rc.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            }
            rc
        }
        (None, Some(name)) => presets::preset(name).ok_or_else(|| {
            CliError::Usage(format!("unknown preset '{name}' (known: {})", presets::NAMES.join(", ")))
        })?,
    };
    if seed.is_some() {
        rc.seed = seed;
    }
    if max_iters.is_some() {
        rc.max_iters = max_iters;
    }
    if tol.is_some() {
        rc.tol = tol;
    }
    rc.resolve()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: usize,
    /// Violations found by recomputing bounds from the CSV columns.
    pub recomputed: Vec<ViolationRecord>,
    /// Violations the report recorded for checks the CSV cannot reproduce.
    pub carried: Vec<ViolationRecord>,
    pub verdict: String,
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= COLUMN_RTOL * a.abs().max(b.abs()).max(1.0)
}

/// Re-checks a parsed trace against the constants of its report.
pub fn verify_rows(rows: &[TraceRow], report: &Report) -> Result<VerifyReport, CliError> {
    let schema = |m: String| CliError::Usage(format!("trace: {m}"));
    let mut out = vec![];
    let mut push = |k: usize, kind: &str, observed: f64, bound: f64, slack: f64| {
        if !(observed <= bound + slack) {
            out.push(ViolationRecord::new(Some(k), kind, observed, bound));
        }
    };
    let steps = rows.len() - 1;
    if steps != report.steps {
        return Err(schema(format!("{} rows for {} steps in the report", rows.len(), report.steps)));
    }
    let res: Vec<f64> = rows.iter().map(|r| r.res_norm.ok_or_else(|| schema(format!("row {}: missing res_norm", r.k)))).collect::<Result<_, _>>()?;
    let mut lam = Vec::with_capacity(steps);
    let mut err = Vec::with_capacity(steps);
    for r in &rows[..steps] {
        lam.push(r.lambda.ok_or_else(|| schema(format!("row {}: missing lambda", r.k)))?);
        err.push(r.err_norm.ok_or_else(|| schema(format!("row {}: missing err_norm", r.k)))?);
    }
    let dist: Option<Vec<f64>> = rows.iter().map(|r| r.dist_fix).collect();
    let Some(cr) = &report.constants else {
        return Ok(VerifyReport { rows: rows.len(), recomputed: vec![], carried: vec![], verdict: "pass".into() });
    };
    let c = cr.to_constants();
    let mut lsum = 0.0;
    for k in 0..=steps {
        let row = &rows[k];
        let pw = pointwise_bound(k, &c);
        if let Some(col) = row.pw_bound {
            if !close(col, pw) {
                push(k, "column", col, pw, 0.0);
            }
        }
        if c.tau_lo > 0.0 {
            push(k, "pointwise", res[k], pw, BOUND_SLACK);
        }
        if let Some(d) = &dist {
            push(k, "residual-vs-distance", res[k], 2.0 * d[k], BOUND_SLACK);
        }
        if k == steps {
            break;
        }
        lsum += lam[k];
        if let Some(g) = row.erg_res_norm {
            push(k, "ergodic", g, ergodic_bound(&c, lsum), BOUND_SLACK);
        }
        push(k, "residual-growth", res[k + 1] * res[k + 1], res[k] * res[k] + c.nu2 * err[k], STEP_SLACK);
        if c.exact {
            push(k, "residual-monotone", res[k + 1], res[k], MONOTONE_SLACK);
            if let Some(d) = &dist {
                push(k, "distance-monotone", d[k + 1], d[k], MONOTONE_SLACK);
                if c.lambda_hi <= 1.0 && c.tau_lo > 0.0 {
                    if let Some(disp) = row.disp_norm {
                        push(k, "displacement", disp, displacement_bounds(k, c.d0, c.tau_lo).0, BOUND_SLACK);
                    }
                }
            }
        }
        if let (Some(m), Some(d)) = (&report.local_model, &dist) {
            let model = SubRegularityModel { kappa: m.kappa, alpha: m.alpha };
            let b = model.zeta(lam[k]) * d[k] * d[k] + c.nu1 * lam[k] * err[k];
            push(k, "local-recursion", d[k + 1] * d[k + 1], b, BOUND_SLACK);
        }
        if let (Some(v), Some(col)) = (row.cert_value, row.cert_bound) {
            push(k, "certificate", v, col, BOUND_SLACK);
            if let Some(cert) = &report.certificate {
                let b = match cert.kind {
                    CertKind::Gfb => Some(pw / cert.gamma),
                    CertKind::Drs => Some(((1.0 + lam[k]) * pw + lam[k] * err[k]) / cert.gamma),
                    CertKind::PdsSurrogate => match (&cert.ambient, cert.factor) {
                        (Some(a), Some(f)) => Some(f * pointwise_bound(k, &a.to_constants())),
                        _ => None,
                    },
                };
                if let Some(b) = b {
                    if !close(col, b) {
                        push(k, "column", col, b, 0.0);
                    }
                }
            }
        }
    }
    let carried: Vec<ViolationRecord> = report.violations.iter().filter(|v| !v.recomputable()).cloned().collect();
    let all: Vec<ViolationRecord> = out.iter().chain(&carried).cloned().collect();
    Ok(VerifyReport { rows: rows.len(), recomputed: out, carried, verdict: verdict(&all) })
}

pub fn cmd_verify(trace: &Path, report: &Path) -> Result<VerifyReport, CliError> {
    let f = fs::File::open(trace).map_err(|e| CliError::Usage(format!("{}: {e}", trace.display())))?;
    let rows = trace_csv::parse(f)?;
    let text = fs::read_to_string(report).map_err(|e| CliError::Usage(format!("{}: {e}", report.display())))?;
    let rep: Report = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("report: {e}")))?;
    verify_rows(&rows, &rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub member: String,
    pub problem: String,
    pub method: String,
    pub errors: String,
    pub steps: usize,
    pub observed_rate: Option<f64>,
    pub theoretical_rate: Option<f64>,
    pub violations: usize,
    pub verdict: String,
    pub flag: Option<String>,
    pub failure: Option<String>,
}

/// Presets run exactly, with additive errors, and with channel errors where the method has them.
pub fn suite_members() -> Vec<(String, RunConfig)> {
    let mut out = vec![];
    for name in presets::NAMES {
        let base = presets::preset(name).expect("listed preset");
        let nonstationary = name.starts_with("nonstationary");
        out.push((name.to_string(), base.clone()));
        if nonstationary {
            continue;
        }
        out.push((format!("{name}+additive"), RunConfig { errors: Some("additive".into()), ..base.clone() }));
        let channels = matches!(base.problem.as_deref(), Some("two-subspaces" | "lasso" | "multiblock" | "pds-small"));
        if channels {
            out.push((format!("{name}+channels"), RunConfig { errors: Some("channels".into()), ..base }));
        }
    }
    out
}

fn suite_row(member: &str, rc: &RunConfig, out: Option<&Path>) -> SuiteRow {
    let mut rc = rc.clone();
    rc.name = Some(member.replace('+', "_"));
    let fail = |f: String| SuiteRow {
        member: member.into(),
        problem: rc.problem.clone().unwrap_or_default(),
        method: rc.method.clone().unwrap_or_default(),
        errors: rc.errors.clone().unwrap_or_else(|| "exact".into()),
        steps: 0,
        observed_rate: None,
        theoretical_rate: None,
        violations: 0,
        verdict: "error".into(),
        flag: None,
        failure: Some(f),
    };
    let cfg = match rc.resolve() {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    let run = match out {
        Some(dir) => cmd_run(&cfg, dir),
        None => execute(&cfg),
    };
    match run {
        Err(e) => fail(e.to_string()),
        Ok(r) => SuiteRow {
            member: member.into(),
            problem: r.report.problem.clone(),
            method: cfg.method.name().into(),
            errors: format!("{:?}", cfg.errors).to_lowercase(),
            steps: r.report.steps,
            observed_rate: r.report.observed_rate,
            theoretical_rate: r.report.theoretical_rate,
            violations: r.report.violations.len(),
            verdict: r.report.verdict.clone(),
            flag: r.report.summability.flag.clone(),
            failure: None,
        },
    }
}

/// Runs every suite member, concurrently; rows come back in member order.
pub fn cmd_suite(out: Option<&Path>) -> Vec<SuiteRow> {
    let members = suite_members();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(members.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<SuiteRow>>> = members.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= members.len() {
                    break;
                }
                let row = suite_row(&members[i].0, &members[i].1, out);
                *slots[i].lock().expect("slot") = Some(row);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot").expect("filled")).collect()
}

pub fn suite_table(rows: &[SuiteRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{:<34} {:<46} {:<18} {:>6} {:>10} {:>10} {:>5}  {}\n",
        "member", "problem", "method", "steps", "observed", "theory", "viol", "verdict"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<34} {:<46} {:<18} {:>6} {:>10} {:>10} {:>5}  {}",
            r.member,
            r.problem,
            r.method,
            r.steps,
            f(r.observed_rate),
            f(r.theoretical_rate),
            r.violations,
            r.verdict
        ));
        if let Some(flag) = &r.flag {
            s.push_str(&format!("  [{flag}]"));
        }
        if let Some(e) = &r.failure {
            s.push_str(&format!("  ({e})"));
        }
        s.push('\n');
    }
    s
}

pub fn suite_passed(rows: &[SuiteRow]) -> bool {
    rows.iter().all(|r| r.verdict == "pass")
}
