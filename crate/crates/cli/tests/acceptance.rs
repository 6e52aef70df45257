//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fail.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};
use std::time::{Duration, Instant};

use kmcert::bounds::BOUND_SLACK;
use kmcert::km::{run_km, ErrorModel, KmConfig, RelaxationSchedule, StopRule};
use kmcert::operators::{
    check_averaged, check_certified, check_firmly_nonexpansive, compose2, composition_alpha, project_box, Averagedness,
    Basis, Cocoercive, LinearMonotone, Monotone, OperatorSpec, DEFAULT_RADIUS, DEFAULT_SAMPLES,
};
use kmcert::problems::{lasso_data, make_lasso, make_pds, pds_small_data, Method};
use kmcert::spaces::{Point, Shape, Weights};
use kmcert::splitting::{build_drs, build_gfb, DrsSpec, GfbSpec, ProductMonotone};
use kmcert_cli::config::RunConfig;
use kmcert_cli::presets::preset;
use kmcert_cli::runner::{cmd_run, execute, instance, suite_members, trace_path, RunOutput};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const HORIZON: usize = 1000;
const RUNTIME: Duration = Duration::from_secs(1);

fn run(rc: RunConfig) -> Result<(RunOutput, Duration), String> {
    let cfg = rc.resolve().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let out = execute(&cfg).map_err(|e| e.to_string())?;
    Ok((out, t.elapsed()))
}

fn run_preset(name: &str) -> Result<(RunOutput, Duration), String> {
    run(preset(name).ok_or(format!("no preset {name}"))?)
}

/// Exact and inexact stationary suite members.
fn stationary_suite() -> Result<Vec<(String, RunOutput)>, String> {
    suite_members()
        .into_iter()
        .filter(|(n, _)| !n.starts_with("nonstationary"))
        .map(|(n, rc)| run(rc).map(|(o, _)| (n, o)))
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn kinds_in(name: &str, o: &RunOutput, kinds: &[&str]) -> Vec<String> {
    o.report
        .violations
        .iter()
        .filter(|v| kinds.contains(&v.kind.as_str()))
        .map(|v| format!("{name}: {} at k={:?} ({:e} > {:e})", v.kind, v.k, v.observed, v.bound))
        .collect()
}

fn count_kinds(runs: &[(String, RunOutput)], kinds: &[&str]) -> Vec<String> {
    runs.iter().flat_map(|(n, o)| kinds_in(n, o, kinds)).collect()
}

fn c1_gd() -> Outcome {
    let mut parts = vec![];
    for (name, obs, theo) in [("gd-fig1", 0.60, 0.72), ("gd-fig1-unit", 0.20, 0.60)] {
        let (o, dt) = run_preset(name)?;
        let r = &o.report;
        let got = r.observed_rate.ok_or("no fitted rate")?;
        let th = r.theoretical_rate.ok_or("no theoretical rate")?;
        ensure((got - obs).abs() <= 0.01, || format!("{name}: observed {got}, want {obs} +- 0.01"))?;
        ensure((th - theo).abs() <= 0.005, || format!("{name}: theoretical {th}, want {theo} +- 0.005"))?;
        ensure(dt < RUNTIME, || format!("{name}: {dt:?}"))?;
        parts.push(format!("{name} observed {got:.4} theoretical {th:.4} in {:.1} ms", dt.as_secs_f64() * 1e3));
    }
    Ok(parts.join("; "))
}

fn c2_drs() -> Outcome {
    let mut parts = vec![];
    for (name, theta, lambda, tol) in [
        ("drs-subspaces-pi6", FRAC_PI_6, 1.0, 1e-6),
        ("drs-subspaces", FRAC_PI_4, 1.0, 1e-6),
        ("drs-subspaces-pi3", FRAC_PI_3, 1.0, 1e-6),
        ("drs-subspaces-half", FRAC_PI_4, 0.5, 1e-4),
    ] {
        let (o, dt) = run_preset(name)?;
        let s = theta.sin();
        let want = 1.0 - (2.0 - lambda) * lambda * s * s;
        // the contraction is on squared distances; the residual norm itself decays at sqrt(want)
        let sq = o.report.observed_rate_sq.ok_or("no squared-distance fit")?;
        let res = o.report.observed_rate.ok_or("no residual fit")?;
        ensure((sq - want).abs() <= tol, || format!("{name}: fitted {sq}, want {want} +- {tol:e}"))?;
        ensure((res * res - want).abs() <= tol, || format!("{name}: residual fit squared {}, want {want}", res * res))?;
        ensure(dt < RUNTIME, || format!("{name}: {dt:?}"))?;
        parts.push(format!("{name} {sq:.7} vs {want:.7}"));
    }
    Ok(parts.join("; "))
}

fn horizon_ok(runs: &[(String, RunOutput)]) -> Result<(), String> {
    for (n, o) in runs {
        // exact runs stop early only when they land exactly on a fixed point
        ensure(o.report.steps >= HORIZON || o.report.final_residual == 0.0, || format!("{n}: only {} steps", o.report.steps))?;
    }
    Ok(())
}

fn c3_pointwise(runs: &[(String, RunOutput)]) -> Outcome {
    horizon_ok(runs)?;
    let bad = count_kinds(runs, &["pointwise"]);
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!("{} runs, 0 pointwise violations (slack {BOUND_SLACK:e})", runs.len()))
}

fn c4_ergodic(runs: &[(String, RunOutput)]) -> Outcome {
    let bad = count_kinds(runs, &["ergodic"]);
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!("{} runs, 0 ergodic violations", runs.len()))
}

fn c5_steps(runs: &[(String, RunOutput)]) -> Outcome {
    let kinds = [
        "residual-inner",
        "quasi-fejer",
        "residual-growth",
        "residual-monotone",
        "distance-monotone",
        "residual-vs-distance",
        "displacement",
        "ergodic-displacement",
    ];
    let bad = count_kinds(runs, &kinds);
    ensure(bad.is_empty(), || bad.join("; "))?;
    Ok(format!("{} runs, 0 per-step violations", runs.len()))
}

fn c6_recursion() -> Outcome {
    let cases = [
        ("gd-fig1", 1.0 / (0.5 * 0.8)),
        ("gd-fig1-unit", 1.0 / 0.8),
        ("drs-subspaces-pi6", 1.0 / FRAC_PI_6.sin()),
        ("drs-subspaces", 1.0 / FRAC_PI_4.sin()),
        ("drs-subspaces-pi3", 1.0 / FRAC_PI_3.sin()),
        ("drs-subspaces-half", 1.0 / FRAC_PI_4.sin()),
    ];
    let mut steps = 0;
    for (name, kappa) in cases {
        let (o, _) = run_preset(name)?;
        let m = o.report.local_model.as_ref().ok_or(format!("{name}: no local model"))?;
        ensure((m.kappa - kappa).abs() <= 1e-12 * kappa, || format!("{name}: kappa {} want {kappa}", m.kappa))?;
        for w in o.rows.windows(2) {
            let (r, next) = (&w[0], &w[1]);
            let d = next.dist_fix.ok_or("no dist_fix column")?;
            let b = r.local_model.ok_or("no local_model column")?;
            ensure(d * d <= b + 1e-10, || format!("{name} k={}: {:e} > {:e}", r.k, d * d, b))?;
            steps += 1;
        }
    }
    Ok(format!("{} problems, {steps} steps", cases.len()))
}

fn resolvent_op(a: &Monotone, gamma: f64, d: usize) -> Result<OperatorSpec, String> {
    let j = a.resolvent_map(gamma).map_err(|e| e.to_string())?;
    Ok(OperatorSpec::from_point_map(format!("J[{}]", a.label()), d, Averagedness::Averaged(0.5), move |x| j(x)))
}

fn inverse_resolvent_op(a: &Monotone, sigma: f64, d: usize) -> Result<OperatorSpec, String> {
    let j = a.inverse_resolvent_map(sigma).map_err(|e| e.to_string())?;
    Ok(OperatorSpec::from_point_map(format!("J_inv[{}]", a.label()), d, Averagedness::Averaged(0.5), move |x| j(x)))
}

fn random_averaged(d: usize, rng: &mut ChaCha8Rng) -> OperatorSpec {
    let a = rng.gen_range(0.05..0.95);
    let q = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let shift = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let m = DMatrix::identity(d, d) * (1.0 - a) + q * a;
    OperatorSpec::from_point_map("affine", d, Averagedness::Averaged(a), move |x| {
        Point::from_vector(&m * x.vector() + &shift)
    })
}

fn random_box_averaged(d: usize, rng: &mut ChaCha8Rng) -> OperatorSpec {
    let a = rng.gen_range(0.05..0.95);
    let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..3.0)).collect();
    OperatorSpec::from_point_map("box-reflection", d, Averagedness::Averaged(a), move |x| {
        let r = &(&project_box(x, &lo, &hi) * 2.0) - x;
        Ok(&(x * (1.0 - a)) + &(&r * a))
    })
}

fn c7_operators() -> Outcome {
    let mut resolvents = vec![];
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let k = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.clone().qr().q();
    let cols: Vec<Point> = (0..2).map(|j| Point::new(q.column(j).iter().copied().collect()).unwrap()).collect();
    let zoo = vec![
        Monotone::Zero,
        Monotone::l1(0.3).map_err(|e| e.to_string())?,
        Monotone::box_cone(vec![-1.0; d], vec![0.0, 0.5, 1.0, 1.5]).map_err(|e| e.to_string())?,
        Monotone::SubspaceCone(Basis::new(&cols).map_err(|e| e.to_string())?),
        Monotone::Linear(LinearMonotone::new(&g * g.transpose() + (&k - k.transpose())).map_err(|e| e.to_string())?),
    ];
    for a in &zoo {
        for gamma in [0.1, 1.0, 7.0] {
            resolvents.push(resolvent_op(a, gamma, d)?);
            resolvents.push(inverse_resolvent_op(a, gamma, d)?);
        }
    }
    // the resolvents the suite problems actually build
    let mut certified = vec![];
    for (n, rc) in suite_members() {
        let cfg = rc.resolve().map_err(|e| e.to_string())?;
        let p = instance(&cfg).map_err(|e| format!("{n}: {e}"))?;
        match &p.method {
            Method::Gfb(g) => {
                let s = g.spec();
                for (a, w) in s.blocks.iter().zip(s.weights.as_slice()) {
                    resolvents.push(resolvent_op(a, s.gamma / w, s.dim)?);
                }
                certified.push(g.factored_operator().map_err(|e| e.to_string())?);
            }
            Method::Drs(dr) => {
                if let ProductMonotone::Blocks(bs) = &dr.spec().a1 {
                    for (a, scale) in bs {
                        resolvents.push(resolvent_op(a, dr.spec().gamma * scale, dr.spec().shape.dims[0])?);
                    }
                }
                certified.push(dr.reflected_operator());
            }
            Method::Pds(pds) => {
                for b in &pds.spec().duals {
                    resolvents.push(inverse_resolvent_op(&b.a, b.sigma, b.l.nrows())?);
                }
            }
            Method::Operator(_) => {}
        }
        certified.push(p.operator());
    }
    for (i, t) in resolvents.iter().enumerate() {
        let r = check_firmly_nonexpansive(t, DEFAULT_SAMPLES, DEFAULT_RADIUS, i as u64).map_err(|e| e.to_string())?;
        ensure(r.passed, || format!("{}: violation {:e}", t.label(), r.max_violation))?;
    }
    let mut n_cert = 0;
    for (i, t) in certified.iter().enumerate() {
        if let Averagedness::Nonexpansive = t.class() {
            continue;
        }
        let r = check_certified(t, DEFAULT_SAMPLES, DEFAULT_RADIUS, 100 + i as u64).map_err(|e| e.to_string())?;
        ensure(r.passed, || format!("{}: violation {:e}", t.label(), r.max_violation))?;
        n_cert += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..100 {
        let d = 2 + i % 4;
        let t1 = if i % 2 == 0 { random_averaged(d, &mut rng) } else { random_box_averaged(d, &mut rng) };
        let t2 = if i % 3 == 0 { random_box_averaged(d, &mut rng) } else { random_averaged(d, &mut rng) };
        let c = compose2(&t1, &t2).map_err(|e| e.to_string())?;
        let want = composition_alpha(t1.class().alpha().unwrap(), t2.class().alpha().unwrap());
        let r = check_averaged(&c, want, DEFAULT_SAMPLES, DEFAULT_RADIUS, i as u64).map_err(|e| e.to_string())?;
        ensure(r.passed, || format!("composition {i}: violation {:e}", r.max_violation))?;
    }
    Ok(format!(
        "{} resolvents x {DEFAULT_SAMPLES} pairs, {n_cert} certified operators, 100 compositions",
        resolvents.len()
    ))
}

fn c8_certificates(runs: &[(String, RunOutput)]) -> Outcome {
    let mut n = 0;
    for (name, o) in runs.iter().filter(|(n, _)| !n.contains('+')) {
        let Some(c) = &o.report.certificate else { continue };
        n += 1;
        let bad = kinds_in(name, o, &["certificate", "ergodic-certificate"]);
        ensure(bad.is_empty(), || bad.join("; "))?;
        for r in &o.rows {
            if let (Some(v), Some(b)) = (r.cert_value, r.cert_bound) {
                ensure(v <= b + BOUND_SLACK, || format!("{name} k={}: {v:e} > {b:e}", r.k))?;
            }
        }
        let needs_membership = !matches!(c.kind, kmcert_cli::report::CertKind::PdsSurrogate);
        ensure(!needs_membership || c.membership.starts_with("verified"), || format!("{name}: membership {}", c.membership))?;
        ensure(c.at_fixed_point <= 1e-10, || format!("{name}: {:e} at the fixed point", c.at_fixed_point))?;
    }
    ensure(n >= 3, || format!("only {n} runs carry certificates"))?;
    Ok(format!("{n} exact runs with certificates"))
}

fn exact_cfg(lambda: f64, iters: usize) -> KmConfig {
    KmConfig {
        relaxation: RelaxationSchedule::Constant(lambda),
        errors: ErrorModel::Exact,
        stop: StopRule { max_iters: iters, residual_tol: 0.0 },
        retain: true,
        ..Default::default()
    }
}

fn c9_reductions() -> Outcome {
    let e = |e: kmcert::Error| e.to_string();
    // GFB with one block against forward-backward by hand
    let (m, n, mu, seed) = (40, 20, 0.1, 1);
    let p = make_lasso(m, n, mu, seed).map_err(e)?;
    let (a, y, _) = lasso_data(m, n, seed);
    let Method::Gfb(gfb) = &p.method else { return Err("lasso is not GFB".into()) };
    let gamma = gfb.spec().gamma;
    let (ata, aty) = (a.transpose() * &a, a.transpose() * &y);
    let mut worst1 = 0.0f64;
    for lambda in [1.0, 0.6] {
        let tr = run_km(&p.operator(), &p.z0, &exact_cfg(lambda, 300)).map_err(e)?;
        let mut x = p.z0.block(0).vector().clone();
        for zk in &tr.retained.as_ref().unwrap().z {
            worst1 = worst1.max((zk.block(0).vector() - &x).amax());
            let w = &x - (&ata * &x - &aty) * gamma;
            let prox = w.map(|v| v.signum() * (v.abs() - gamma * mu).max(0.0));
            x = &x + (prox - &x) * lambda;
        }
    }
    ensure(worst1 <= 1e-12, || format!("GFB(n=1) vs FBS: {worst1:e}"))?;
    // GFB without B against product-space DRS
    let d = 4;
    let blocks = vec![Monotone::l1(0.3).map_err(e)?, Monotone::box_cone(vec![-0.5; d], vec![1.0; d]).map_err(e)?];
    let w = Weights::new(vec![0.35, 0.65]).map_err(e)?;
    let gamma = 0.7;
    let g = build_gfb(GfbSpec { dim: d, blocks: blocks.clone(), weights: w.clone(), b: Cocoercive::Zero, gamma }).map_err(e)?;
    let drs = build_drs(DrsSpec {
        shape: Shape::diagonal(d, w.clone()),
        a1: ProductMonotone::Blocks(blocks.into_iter().zip(w.as_slice()).map(|(a, wi)| (a, 1.0 / wi)).collect()),
        a2: ProductMonotone::Diagonal,
        gamma,
    })
    .map_err(e)?;
    let z0 = g.shape().sample_ball(4.0, &mut ChaCha8Rng::seed_from_u64(3));
    let mut worst2 = 0.0f64;
    for lambda in [1.0, 1.5] {
        let ta = run_km(&g.operator(), &z0, &exact_cfg(lambda, 400)).map_err(e)?;
        let tb = run_km(&drs.operator(), &z0, &exact_cfg(lambda, 400)).map_err(e)?;
        for (za, zb) in ta.retained.unwrap().z.iter().zip(&tb.retained.unwrap().z) {
            worst2 = worst2.max((za - zb).norm());
        }
    }
    ensure(worst2 <= 1e-12, || format!("GFB(B=0) vs DRS: {worst2:e}"))?;
    // PDS with one dual block against forward-backward on the dual
    let p = make_pds(&pds_small_data(3, 1.0)).map_err(e)?.with_reference().map_err(e)?;
    let x = p.fix.as_ref().unwrap().anchor(&p.z0).block(0).clone();
    let xr = p.primal_reference.clone().ok_or("no primal reference")?;
    let gap = (&x - &xr).norm_inf();
    ensure(gap <= 1e-6, || format!("PDS vs FBS reference: {gap:e}"))?;
    Ok(format!("GFB/FBS {worst1:.1e}, GFB/DRS {worst2:.1e}, PDS/FBS {gap:.1e}"))
}

fn c10_nonstationary() -> Outcome {
    let (st, _) = run_preset("nonstationary-stationary")?;
    let (geo, _) = run_preset("nonstationary-geo")?;
    let (harm, _) = run_preset("nonstationary-harm")?;
    let e = |e: kmcert::Error| e.to_string();
    let xs = st.trace.final_z.mean().map_err(e)?;
    let xg = geo.trace.final_z.mean().map_err(e)?;
    let gap = (&xs - &xg).norm();
    ensure(gap <= 1e-6, || format!("geometric consensus off by {gap:e}"))?;
    let flag = harm.report.summability.flag.clone();
    ensure(flag.as_deref() == Some(kmcert_cli::report::NOT_SUMMABLE), || format!("harmonic flag {flag:?}"))?;
    ensure(geo.report.summability.flag.is_none(), || "geometric schedule flagged".into())?;
    let (rh, rg) = (harm.report.final_residual, geo.report.final_residual);
    ensure(harm.report.steps == geo.report.steps, || "horizons differ".into())?;
    ensure(rh >= rg, || format!("harmonic residual {rh:e} < geometric {rg:e}"))?;
    Ok(format!(
        "consensus gap {gap:.1e}; residual at {} iterations: harmonic {rh:.2e} >= geometric {rg:.2e}",
        geo.report.steps
    ))
}

fn c11_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut n = 0;
    for (name, rc) in suite_members() {
        let cfg = RunConfig { seed: Some(5), ..rc }.resolve().map_err(|e| e.to_string())?;
        let mut bytes = vec![];
        for d in &dirs {
            cmd_run(&cfg, d.path()).map_err(|e| format!("{name}: {e}"))?;
            bytes.push(std::fs::read(trace_path(d.path(), &cfg.name)).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1], || format!("{name}: traces differ"))?;
        n += 1;
    }
    Ok(format!("{n} configurations byte-identical"))
}

fn main() {
    let t = Instant::now();
    let suite = stationary_suite();
    let on_suite = |f: fn(&[(String, RunOutput)]) -> Outcome| match &suite {
        Ok(runs) => f(runs),
        Err(e) => Err(format!("suite failed: {e}")),
    };
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient descent rates", c1_gd()),
        (2, "DRS two-subspace rates", c2_drs()),
        (3, "pointwise bound", on_suite(c3_pointwise)),
        (4, "ergodic bound", on_suite(c4_ergodic)),
        (5, "per-step inequalities", on_suite(c5_steps)),
        (6, "local linear recursion", c6_recursion()),
        (7, "operator properties", c7_operators()),
        (8, "certificates", on_suite(c8_certificates)),
        (9, "reductions", c9_reductions()),
        (10, "non-stationary GFB", c10_nonstationary()),
        (11, "determinism", c11_determinism()),
    ];
    let mut failed = 0;
    for (i, name, r) in &results {
        match r {
            Ok(m) => println!("criterion {i:>2} {name}: PASS ({m})"),
            Err(m) => {
                failed += 1;
                println!("criterion {i:>2} {name}: FAIL ({m})");
            }
        }
    }
    println!("{} of {} criteria pass in {:.2} s", results.len() - failed, results.len(), t.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
