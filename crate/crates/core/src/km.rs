//! The inexact Krasnosel'skii–Mann iteration `z+ = z + lambda (T z + eps - z)`.
//!
//! [`run_km`] drives a fixed operator; [`run_km_nonstationary`] drives a family
//! `gamma -> T_gamma` along a schedule and measures everything against the
//! limit operator. Both produce an [`IterationTrace`] whose norm columns feed
//! the bounds layer.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::operators::{Averagedness, OperatorSpec};
use crate::spaces::{Metric, ProductPoint};

pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-10;
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Relaxation parameters `lambda_k`.
#[derive(Clone, Debug, PartialEq)]
pub enum RelaxationSchedule {
    Constant(f64),
    /// `lambda_0 = first`, then `rest`.
    FirstThen { first: f64, rest: f64 },
    /// Explicit values; the last one repeats.
    Explicit(Vec<f64>),
}

impl RelaxationSchedule {
    pub fn lambda(&self, k: usize) -> f64 {
        match self {
            RelaxationSchedule::Constant(l) => *l,
            RelaxationSchedule::FirstThen { first, rest } => if k == 0 { *first } else { *rest },
            RelaxationSchedule::Explicit(v) => v[k.min(v.len() - 1)],
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            RelaxationSchedule::Constant(l) => vec![*l],
            RelaxationSchedule::FirstThen { first, rest } => vec![*first, *rest],
            RelaxationSchedule::Explicit(v) => v.clone(),
        }
    }

    /// Checks every value lies in `(0, limit]`.
    pub fn validate(&self, limit: f64) -> Result<()> {
        let vals = self.values();
        if vals.is_empty() {
            return Err(Error::Parameter("empty relaxation schedule".into()));
        }
        for l in vals {
            if !(l > 0.0 && l <= limit) {
                return Err(Error::Parameter(format!("relaxation {l} outside (0, {limit}]")));
            }
        }
        Ok(())
    }

    /// `(inf lambda_k, sup lambda_k)` over the whole schedule.
    pub fn range(&self) -> (f64, f64) {
        let v = self.values();
        (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `(inf, sup)` of `tau_k = lambda_k (c - lambda_k)` with `c = 1/alpha`.
    pub fn tau_bounds(&self, c: f64) -> (f64, f64) {
        let taus: Vec<f64> = self.values().iter().map(|l| l * (c - l)).collect();
        (taus.iter().copied().fold(f64::INFINITY, f64::min), taus.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Whether the weighted error sums are finite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Summability {
    /// `(lambda_k ||eps_k||)` summable.
    pub lambda_eps: bool,
    /// `((k+1) ||eps_k||)` summable.
    pub k_eps: bool,
}

/// Norms of the injected errors.
#[derive(Clone, Debug, PartialEq)]
pub enum ErrorSchedule {
    Zero,
    /// `||eps_k|| = c / (k+1)^p`.
    Power { c: f64, p: f64 },
    /// Explicit norms, zero past the end.
    Explicit(Vec<f64>),
}

impl ErrorSchedule {
    pub fn magnitude(&self, k: usize) -> f64 {
        match self {
            ErrorSchedule::Zero => 0.0,
            ErrorSchedule::Power { c, p } => c / ((k + 1) as f64).powf(*p),
            ErrorSchedule::Explicit(v) => v.get(k).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorSchedule::Power { c, p } if !(c.is_finite() && *c >= 0.0 && p.is_finite()) => {
                Err(Error::Parameter(format!("error schedule c={c}, p={p}")))
            }
            ErrorSchedule::Explicit(v) if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) => {
                Err(Error::Parameter("explicit error norms must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Symbolic classification for bounded relaxation parameters.
    pub fn summability(&self) -> Summability {
        match self {
            ErrorSchedule::Zero | ErrorSchedule::Explicit(_) => Summability { lambda_eps: true, k_eps: true },
            ErrorSchedule::Power { c, p } => {
                let zero = *c == 0.0;
                Summability { lambda_eps: zero || *p > 1.0, k_eps: zero || *p > 2.0 }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ErrorSchedule::Zero => true,
            ErrorSchedule::Power { c, .. } => *c == 0.0,
            ErrorSchedule::Explicit(v) => v.iter().all(|x| *x == 0.0),
        }
    }
}

/// An inexact evaluation of `T z` produced by perturbing internal channels.
#[derive(Clone, Debug)]
pub struct Perturbed {
    pub value: ProductPoint,
    pub channel_norms: Vec<f64>,
    /// A reference combination of the channel errors, when the method has one.
    pub combined: Option<ProductPoint>,
}

/// Method-level error injection (resolvent and gradient channels).
pub trait ChannelInjector: Send + Sync {
    fn channel_names(&self) -> Vec<String>;
    fn perturbed(&self, z: &ProductPoint, magnitude: f64, rng: &mut ChaCha8Rng) -> Result<Perturbed>;
}

/// How `eps_k` enters the iteration.
#[derive(Clone)]
pub enum ErrorModel {
    Exact,
    /// `eps_k` drawn with norm from the schedule and a seeded direction.
    Additive(ErrorSchedule),
    /// Every channel of the method perturbed with norms from the schedule.
    Channels { schedule: ErrorSchedule, injector: Arc<dyn ChannelInjector> },
}

impl fmt::Debug for ErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorModel::Exact => write!(f, "Exact"),
            ErrorModel::Additive(s) => write!(f, "Additive({s:?})"),
            ErrorModel::Channels { schedule, injector } => {
                write!(f, "Channels({schedule:?}, {:?})", injector.channel_names())
            }
        }
    }
}

impl ErrorModel {
    pub fn schedule(&self) -> ErrorSchedule {
        match self {
            ErrorModel::Exact => ErrorSchedule::Zero,
            ErrorModel::Additive(s) | ErrorModel::Channels { schedule: s, .. } => s.clone(),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.schedule().is_zero()
    }
}

/// A unit vector in `metric`, scaled to `magnitude`.
pub fn seeded_direction(
    template: &crate::spaces::Shape,
    metric: &Metric,
    magnitude: f64,
    rng: &mut ChaCha8Rng,
) -> ProductPoint {
    let g = template.gaussian(rng);
    let n = metric.norm(&g);
    if n == 0.0 || magnitude == 0.0 {
        return template.zeros();
    }
    &g * (magnitude / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    /// Stop once `||e_k|| <= residual_tol`.
    pub residual_tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule { max_iters: DEFAULT_MAX_ITERS, residual_tol: DEFAULT_RESIDUAL_TOL }
    }
}

/// A fixed point or an analytic description of the fixed-point set.
#[derive(Clone)]
pub enum FixReference {
    Point(ProductPoint),
    /// Metric projection onto the fixed-point set.
    Projector { label: String, project: Arc<dyn Fn(&ProductPoint) -> ProductPoint + Send + Sync> },
}

impl fmt::Debug for FixReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixReference::Point(_) => write!(f, "FixReference::Point"),
            FixReference::Projector { label, .. } => write!(f, "FixReference::Projector({label})"),
        }
    }
}

impl FixReference {
    pub fn projector(
        label: impl Into<String>,
        project: impl Fn(&ProductPoint) -> ProductPoint + Send + Sync + 'static,
    ) -> Self {
        FixReference::Projector { label: label.into(), project: Arc::new(project) }
    }

    /// `d(z, Fix T)`.
    pub fn distance(&self, z: &ProductPoint, metric: &Metric) -> f64 {
        match self {
            FixReference::Point(p) => metric.norm(&(z - p)),
            FixReference::Projector { project, .. } => metric.norm(&(z - &project(z))),
        }
    }

    /// The fixed point `z*` nearest to `z0` used by the constants.
    pub fn anchor(&self, z0: &ProductPoint) -> ProductPoint {
        match self {
            FixReference::Point(p) => p.clone(),
            FixReference::Projector { project, .. } => project(z0),
        }
    }
}

/// Run-level settings shared by both engines.
#[derive(Clone, Debug)]
pub struct KmConfig {
    pub relaxation: RelaxationSchedule,
    pub errors: ErrorModel,
    pub stop: StopRule,
    pub seed: u64,
    /// Keep `z_k`, `e_k` and `eps_k` vectors.
    pub retain: bool,
    pub fix: Option<FixReference>,
    /// Also record norms in the plain product metric when the operator has its own.
    pub ambient: bool,
}

impl Default for KmConfig {
    fn default() -> Self {
        KmConfig {
            relaxation: RelaxationSchedule::Constant(0.5),
            errors: ErrorModel::Exact,
            stop: StopRule::default(),
            seed: 0,
            retain: false,
            fix: None,
            ambient: false,
        }
    }
}

/// Distances to the fixed-point set, indexed like the states.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FixSeries {
    /// `d_k = d(z_k, Fix T)`, length `K + 1`.
    pub dist_fix: Vec<f64>,
    /// `||z_k - z*||`, length `K + 1`.
    pub dist_ref: Vec<f64>,
    /// `||T_lambda_k z_k - z*||` with `T_lambda z = z - lambda e`, length `K`.
    pub tlam: Vec<f64>,
}

/// Per-iteration norms in one metric.
///
/// Step columns have length `K` (number of executed steps), state columns `K + 1`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NormSeries {
    pub metric: String,
    /// `||e_k||`, states.
    pub res: Vec<f64>,
    /// `||eps_k||` (effective error against the measured operator).
    pub err: Vec<f64>,
    /// `||e_k - e_{k+1}||`.
    pub e_diff: Vec<f64>,
    /// `<e_k - eps_k, e_k - e_{k+1}>`.
    pub residual_inner: Vec<f64>,
    /// `||e_bar_k||` with `e_bar_k = (1/Lambda_k) sum lambda_j e_j`.
    pub erg: Vec<f64>,
    /// `||z_k - z_{k+1}||`.
    pub disp: Vec<f64>,
    pub fix: Option<FixSeries>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retained {
    pub z: Vec<ProductPoint>,
    pub e: Vec<ProductPoint>,
    pub eps: Vec<ProductPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIters,
}

/// Everything recorded by one run.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub label: String,
    pub class: Averagedness,
    pub metric: Metric,
    pub seed: u64,
    pub relaxation: RelaxationSchedule,
    pub error_schedule: ErrorSchedule,
    pub lambdas: Vec<f64>,
    /// `gamma_k`, non-stationary runs only.
    pub gammas: Option<Vec<f64>>,
    /// Norm of the injected error alone.
    pub native_err: Vec<f64>,
    /// `||(T_gamma_k - T_gamma) z_k||`, non-stationary runs only.
    pub perturbation: Option<Vec<f64>>,
    pub channel_names: Vec<String>,
    pub channels: Vec<Vec<f64>>,
    /// `||eps_k - combined_k||` when the injector reports a combination.
    pub combined_gap: Vec<f64>,
    pub norms: NormSeries,
    pub ambient: Option<NormSeries>,
    pub retained: Option<Retained>,
    pub stop: StopReason,
    /// Largest gap between the direct residual and `(z_k - z_{k+1})/lambda_k + eps_k`,
    /// relative to `max(1, (||z_k|| + ||z_{k+1}||) / lambda_k)`.
    pub recurrence_gap: f64,
    pub final_z: ProductPoint,
}

impl IterationTrace {
    /// Number of executed steps `K`.
    pub fn steps(&self) -> usize {
        self.lambdas.len()
    }

    /// `1/alpha`, or 1 for nonexpansive operators.
    pub fn tau_scale(&self) -> f64 {
        1.0 / self.class.alpha().unwrap_or(1.0)
    }

    /// `Lambda_k = sum_{j <= k} lambda_j`.
    pub fn lambda_sums(&self) -> Vec<f64> {
        let mut s = 0.0;
        self.lambdas.iter().map(|l| { s += l; s }).collect()
    }
}

/// Data handed to observers after each step.
pub struct StepView<'a> {
    pub k: usize,
    pub lambda: f64,
    pub gamma: Option<f64>,
    pub z: &'a ProductPoint,
    /// `T z_k` for the measured operator.
    pub tz: &'a ProductPoint,
    pub e: &'a ProductPoint,
    pub eps: &'a ProductPoint,
    pub z_next: &'a ProductPoint,
}

pub trait StepObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()>;
}

/// One step `z + lambda (T z + eps - z)`.
pub fn km_step(z: &ProductPoint, t: &OperatorSpec, lambda: f64, eps: &ProductPoint) -> Result<ProductPoint> {
    let tz = t.apply(z)?;
    Ok(z.axpy(lambda, &(&(&tz + eps) - z)))
}

struct NormAcc {
    metric: Metric,
    series: NormSeries,
    erg_sum: Option<ProductPoint>,
    lam_sum: f64,
    prev: Option<(ProductPoint, ProductPoint)>,
    fix: Option<(FixReference, ProductPoint)>,
}

impl NormAcc {
    fn new(metric: Metric, fix: Option<(FixReference, ProductPoint)>) -> Self {
        let series = NormSeries {
            metric: metric.label().to_string(),
            fix: fix.as_ref().map(|_| FixSeries::default()),
            ..Default::default()
        };
        NormAcc { metric, series, erg_sum: None, lam_sum: 0.0, prev: None, fix }
    }

    fn state(&mut self, z: &ProductPoint, e: &ProductPoint) {
        let m = &self.metric;
        self.series.res.push(m.norm(e));
        if let Some((prev_e, prev_eps)) = self.prev.take() {
            let de = &prev_e - e;
            self.series.e_diff.push(m.norm(&de));
            self.series.residual_inner.push(m.inner(&(&prev_e - &prev_eps), &de));
        }
        if let (Some((fr, zs)), Some(fs)) = (&self.fix, self.series.fix.as_mut()) {
            fs.dist_fix.push(fr.distance(z, m));
            fs.dist_ref.push(m.norm(&(z - zs)));
        }
    }

    fn step(&mut self, z: &ProductPoint, e: &ProductPoint, eps: &ProductPoint, lambda: f64, z_next: &ProductPoint) {
        let m = &self.metric;
        self.series.err.push(m.norm(eps));
        self.series.disp.push(m.norm(&(z - z_next)));
        let sum = match self.erg_sum.take() {
            Some(s) => s.axpy(lambda, e),
            None => e * lambda,
        };
        self.lam_sum += lambda;
        self.series.erg.push(m.norm(&sum) / self.lam_sum);
        self.erg_sum = Some(sum);
        if let (Some((_, zs)), Some(fs)) = (&self.fix, self.series.fix.as_mut()) {
            fs.tlam.push(m.norm(&(&z.axpy(-lambda, e) - zs)));
        }
        self.prev = Some((e.clone(), eps.clone()));
    }
}

struct Evaluated {
    /// `T z` for the measured operator.
    tz: ProductPoint,
    /// The point the iterate moves toward, `T_k z + eps_k`.
    target: ProductPoint,
    /// Effective error against the measured operator.
    eps: ProductPoint,
    native_err: f64,
    perturbation: Option<f64>,
    gamma: Option<f64>,
    channels: Vec<f64>,
    combined_gap: Option<f64>,
}

struct Engine<'a> {
    label: String,
    class: Averagedness,
    metric: Metric,
    shape: crate::spaces::Shape,
    cfg: &'a KmConfig,
    channel_names: Vec<String>,
}

impl Engine<'_> {
    fn run(
        &self,
        z0: &ProductPoint,
        mut eval: impl FnMut(usize, &ProductPoint, &mut ChaCha8Rng) -> Result<Evaluated>,
        observers: &mut [&mut dyn StepObserver],
    ) -> Result<IterationTrace> {
        let cfg = self.cfg;
        self.shape.check(z0)?;
        if !z0.is_finite() {
            return Err(Error::numerical("non-finite initial point"));
        }
        if !(cfg.stop.residual_tol >= 0.0) {
            return Err(Error::Parameter("residual tolerance must be nonnegative".into()));
        }
        cfg.errors.schedule().validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fix = cfg.fix.as_ref().map(|f| (f.clone(), f.anchor(z0)));
        let mut acc = NormAcc::new(self.metric.clone(), fix.clone());
        let mut amb = (cfg.ambient && !self.metric.is_product()).then(|| NormAcc::new(Metric::Product, fix));
        let mut retained = cfg.retain.then(|| Retained { z: vec![], e: vec![], eps: vec![] });

        let mut lambdas = vec![];
        let mut gammas = vec![];
        let mut native = vec![];
        let mut perturbation = vec![];
        let mut channels = vec![];
        let mut combined_gap = vec![];
        let mut gap: f64 = 0.0;
        let mut z = z0.clone();
        let mut k = 0;
        let stop = loop {
            let ev = eval(k, &z, &mut rng).map_err(|e| e.at(k))?;
            if !ev.tz.is_finite() || !ev.target.is_finite() {
                return Err(Error::Numerical { k: Some(k), msg: "operator returned non-finite values".into() });
            }
            let e = &z - &ev.tz;
            acc.state(&z, &e);
            if let Some(a) = amb.as_mut() {
                a.state(&z, &e);
            }
            if let Some(r) = retained.as_mut() {
                r.z.push(z.clone());
                r.e.push(e.clone());
            }
            if acc.series.res[k] <= cfg.stop.residual_tol {
                break StopReason::Converged;
            }
            if k >= cfg.stop.max_iters {
                break StopReason::MaxIters;
            }
            let lambda = cfg.relaxation.lambda(k);
            let z_next = z.axpy(lambda, &(&ev.target - &z));
            let zn = self.metric.norm(&z_next);
            if !zn.is_finite() {
                return Err(Error::Numerical { k: Some(k), msg: "iterate became non-finite".into() });
            }
            if zn > DIVERGENCE_THRESHOLD {
                return Err(Error::Divergence { k, norm: zn });
            }
            let recur = (&z - &z_next) * (1.0 / lambda);
            let recur = &recur + &ev.eps;
            let scale = ((self.metric.norm(&z) + zn) / lambda).max(1.0);
            gap = gap.max(self.metric.norm(&(&recur - &e)) / scale);

            let view = StepView {
                k,
                lambda,
                gamma: ev.gamma,
                z: &z,
                tz: &ev.tz,
                e: &e,
                eps: &ev.eps,
                z_next: &z_next,
            };
            for o in observers.iter_mut() {
                o.observe(&view).map_err(|e| e.at(k))?;
            }
            acc.step(&z, &e, &ev.eps, lambda, &z_next);
            if let Some(a) = amb.as_mut() {
                a.step(&z, &e, &ev.eps, lambda, &z_next);
            }
            if let Some(r) = retained.as_mut() {
                r.eps.push(ev.eps.clone());
            }
            lambdas.push(lambda);
            native.push(ev.native_err);
            if let Some(g) = ev.gamma {
                gammas.push(g);
            }
            if let Some(p) = ev.perturbation {
                perturbation.push(p);
            }
            if !ev.channels.is_empty() {
                channels.push(ev.channels);
            }
            if let Some(g) = ev.combined_gap {
                combined_gap.push(g);
            }
            z = z_next;
            k += 1;
        };

        Ok(IterationTrace {
            label: self.label.clone(),
            class: self.class,
            metric: self.metric.clone(),
            seed: cfg.seed,
            relaxation: cfg.relaxation.clone(),
            error_schedule: cfg.errors.schedule(),
            gammas: (!gammas.is_empty()).then_some(gammas),
            perturbation: (!perturbation.is_empty()).then_some(perturbation),
            lambdas,
            native_err: native,
            channel_names: self.channel_names.clone(),
            channels,
            combined_gap,
            norms: acc.series,
            ambient: amb.map(|a| a.series),
            retained,
            stop,
            recurrence_gap: gap,
            final_z: z,
        })
    }
}

fn relaxation_limit(class: Averagedness, label: &str) -> Result<f64> {
    class
        .relaxation_limit()
        .ok_or_else(|| Error::Parameter(format!("'{label}' carries no averagedness certificate")))
}

/// Runs the stationary iteration.
pub fn run_km(op: &OperatorSpec, z0: &ProductPoint, cfg: &KmConfig) -> Result<IterationTrace> {
    run_km_observed(op, z0, cfg, &mut [])
}

pub fn run_km_observed(
    op: &OperatorSpec,
    z0: &ProductPoint,
    cfg: &KmConfig,
    observers: &mut [&mut dyn StepObserver],
) -> Result<IterationTrace> {
    cfg.relaxation.validate(relaxation_limit(op.class(), op.label())?)?;
    let channel_names = match &cfg.errors {
        ErrorModel::Channels { injector, .. } => injector.channel_names(),
        _ => vec![],
    };
    let engine = Engine {
        label: op.label().to_string(),
        class: op.class(),
        metric: op.metric().clone(),
        shape: op.shape().clone(),
        cfg,
        channel_names,
    };
    let metric = op.metric().clone();
    let shape = op.shape().clone();
    engine.run(
        z0,
        |k, z, rng| {
            let tz = op.apply(z)?;
            match &cfg.errors {
                ErrorModel::Additive(s) if !s.is_zero() => {
                    let eps = seeded_direction(&shape, &metric, s.magnitude(k), rng);
                    let target = &tz + &eps;
                    let native_err = metric.norm(&eps);
                    Ok(Evaluated { tz, target, eps, native_err, perturbation: None, gamma: None, channels: vec![], combined_gap: None })
                }
                ErrorModel::Channels { schedule, injector } if !schedule.is_zero() => {
                    let p = injector.perturbed(z, schedule.magnitude(k), rng)?;
                    let eps = &p.value - &tz;
                    let native_err = metric.norm(&eps);
                    let combined_gap = p.combined.as_ref().map(|c| metric.norm(&(&eps - c)));
                    Ok(Evaluated {
                        tz,
                        target: p.value,
                        eps,
                        native_err,
                        perturbation: None,
                        gamma: None,
                        channels: p.channel_norms,
                        combined_gap,
                    })
                }
                _ => {
                    let eps = shape.zeros();
                    Ok(Evaluated { target: tz.clone(), tz, eps, native_err: 0.0, perturbation: None, gamma: None, channels: vec![], combined_gap: None })
                }
            }
        },
        observers,
    )
}

/// Step-size schedules `gamma_k` with limit `gamma`.
///
/// Index `k` counts from zero; the `1/k` and `1/k^2` laws use `k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum GammaSchedule {
    Constant(f64),
    /// `gamma + amp / ratio^k`.
    Geometric { limit: f64, amp: f64, ratio: f64 },
    /// `gamma + amp / (k+1)^2`.
    InverseSquare { limit: f64, amp: f64 },
    /// `gamma + amp / (k+1)`.
    Harmonic { limit: f64, amp: f64 },
    /// Explicit values, then the limit.
    Explicit { limit: f64, values: Vec<f64> },
}

/// Summability of `|gamma_k - gamma|`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleSummability {
    pub summable: bool,
    /// `(k+1) |gamma_k - gamma|` summable.
    pub weighted_summable: bool,
}

impl GammaSchedule {
    pub fn value(&self, k: usize) -> f64 {
        let kk = (k + 1) as f64;
        match self {
            GammaSchedule::Constant(g) => *g,
            GammaSchedule::Geometric { limit, amp, ratio } => limit + amp / ratio.powi(k as i32),
            GammaSchedule::InverseSquare { limit, amp } => limit + amp / (kk * kk),
            GammaSchedule::Harmonic { limit, amp } => limit + amp / kk,
            GammaSchedule::Explicit { limit, values } => values.get(k).copied().unwrap_or(*limit),
        }
    }

    pub fn limit(&self) -> f64 {
        match self {
            GammaSchedule::Constant(g) => *g,
            GammaSchedule::Geometric { limit, .. }
            | GammaSchedule::InverseSquare { limit, .. }
            | GammaSchedule::Harmonic { limit, .. }
            | GammaSchedule::Explicit { limit, .. } => *limit,
        }
    }

    pub fn summability(&self) -> ScheduleSummability {
        match self {
            GammaSchedule::Constant(_) | GammaSchedule::Explicit { .. } => {
                ScheduleSummability { summable: true, weighted_summable: true }
            }
            GammaSchedule::Geometric { amp, ratio, .. } => {
                let ok = *amp == 0.0 || *ratio > 1.0;
                ScheduleSummability { summable: ok, weighted_summable: ok }
            }
            GammaSchedule::InverseSquare { amp, .. } => {
                ScheduleSummability { summable: true, weighted_summable: *amp == 0.0 }
            }
            GammaSchedule::Harmonic { amp, .. } => {
                ScheduleSummability { summable: *amp == 0.0, weighted_summable: *amp == 0.0 }
            }
        }
    }

    /// `(inf, sup)` of `gamma_k` over `k <= horizon` together with the limit.
    pub fn range(&self, horizon: usize) -> (f64, f64) {
        let mut lo = self.limit();
        let mut hi = lo;
        for k in 0..=horizon {
            let g = self.value(k);
            lo = lo.min(g);
            hi = hi.max(g);
        }
        (lo, hi)
    }
}

/// A family `gamma -> T_gamma` on one space.
pub trait OperatorFamily: Send + Sync {
    fn at(&self, gamma: f64) -> Result<OperatorSpec>;
}

/// Runs `z+ = z + lambda_k (T_{gamma_k} z + eps_k - z)`.
///
/// With `track_limit`, residuals are taken against `T_gamma` for the limit
/// `gamma` and the effective error is `pi_k = (T_{gamma_k} - T_gamma) z_k + eps_k`.
/// Otherwise residuals are native, against `T_{gamma_k}`.
pub fn run_km_nonstationary(
    family: &dyn OperatorFamily,
    schedule: &GammaSchedule,
    z0: &ProductPoint,
    cfg: &KmConfig,
    track_limit: bool,
) -> Result<IterationTrace> {
    if matches!(cfg.errors, ErrorModel::Channels { .. }) {
        return Err(Error::Parameter("channel errors are not supported for non-stationary runs".into()));
    }
    let limit_op = family.at(schedule.limit())?;
    let limit_relax = relaxation_limit(limit_op.class(), limit_op.label())?;
    cfg.relaxation.validate(limit_relax)?;
    let engine = Engine {
        label: format!("{} [non-stationary]", limit_op.label()),
        class: limit_op.class(),
        metric: limit_op.metric().clone(),
        shape: limit_op.shape().clone(),
        cfg,
        channel_names: vec![],
    };
    let metric = limit_op.metric().clone();
    let shape = limit_op.shape().clone();
    engine.run(
        z0,
        |k, z, rng| {
            let gamma = schedule.value(k);
            let tk = family.at(gamma)?;
            let lam = cfg.relaxation.lambda(k);
            let lim = relaxation_limit(tk.class(), tk.label())?;
            if !(lam <= lim) {
                return Err(Error::Parameter(format!("relaxation {lam} above 1/alpha_k = {lim} at gamma {gamma}")));
            }
            let tkz = tk.apply(z)?;
            let eps = match &cfg.errors {
                ErrorModel::Additive(s) if !s.is_zero() => seeded_direction(&shape, &metric, s.magnitude(k), rng),
                _ => shape.zeros(),
            };
            let native_err = metric.norm(&eps);
            let target = &tkz + &eps;
            if track_limit {
                let tz = limit_op.apply(z)?;
                let pert = &tkz - &tz;
                let pnorm = metric.norm(&pert);
                let pi = &pert + &eps;
                Ok(Evaluated { tz, target, eps: pi, native_err, perturbation: Some(pnorm), gamma: Some(gamma), channels: vec![], combined_gap: None })
            } else {
                Ok(Evaluated { tz: tkz, target, eps, native_err, perturbation: None, gamma: Some(gamma), channels: vec![], combined_gap: None })
            }
        },
        &mut [],
    )
}
