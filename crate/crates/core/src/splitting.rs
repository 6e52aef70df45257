//! Splitting methods cast as fixed-point operators.
//!
//! * [`build_gfb`]: generalized forward–backward for `0 in B x + sum_i A_i x`.
//! * [`build_drs`]: Douglas–Rachford for `0 in A_1 x + A_2 x` on a product space.
//! * [`build_pds`]: primal–dual splitting with dual blocks `L_i^* (A_i [] D_i)(L_i x - r_i)`,
//!   averaged in the metric induced by the preconditioner `F`.
//!
//! Each builder returns a struct exposing the operator, a channel injector
//! for method-level errors, and the optimality certificates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{constants_from_series, pointwise_bound, BoundConstants};
use crate::error::{Error, Result};
use crate::km::{seeded_direction, ChannelInjector, IterationTrace, OperatorFamily, Perturbed, StepObserver, StepView};
use crate::operators::{compose2, composition_alpha, Averagedness, Cocoercive, Membership, Monotone, OperatorSpec, PointMap};
use crate::spaces::{Metric, Point, ProductPoint, Shape, Weights};

/// Relative tolerance and iteration cap of [`operator_norm`].
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;

fn unit_dir(d: usize, magnitude: f64, rng: &mut ChaCha8Rng) -> Point {
    let z = seeded_direction(&Shape::single(d), &Metric::Product, magnitude, rng);
    z.into_blocks().remove(0)
}

// ---------------------------------------------------------------------------
// Generalized forward-backward
// ---------------------------------------------------------------------------

/// `0 in B x + sum_i A_i x` on `R^dim`.
#[derive(Clone, Debug)]
pub struct GfbSpec {
    pub dim: usize,
    pub blocks: Vec<Monotone>,
    pub weights: Weights,
    pub b: Cocoercive,
    pub gamma: f64,
}

/// A built generalized forward–backward operator.
#[derive(Clone)]
pub struct Gfb {
    spec: GfbSpec,
    alpha: f64,
    shape: Shape,
    resolvents: Vec<PointMap>,
}

/// Optimality certificate at one iterate.
#[derive(Clone, Debug)]
pub struct GfbCertificate {
    pub x: Point,
    pub u: Vec<Point>,
    /// `g = x/gamma - B x - (1/gamma) sum_i w_i u_i`, an element of `sum_i A_i u_i`.
    pub g: Point,
    /// `||g + B(sum_i w_i u_i)||`, an upper bound on `d(0, sum_i A_i u_i + B(sum_i w_i u_i))`.
    pub criterion: f64,
    pub membership: Membership,
}

pub fn build_gfb(spec: GfbSpec) -> Result<Gfb> {
    let n = spec.blocks.len();
    if n == 0 || spec.weights.len() != n {
        return Err(Error::Structure(format!("{n} blocks with {} weights", spec.weights.len())));
    }
    if !spec.weights.sums_to_one() {
        return Err(Error::Parameter("block weights must sum to 1".into()));
    }
    if let Cocoercive::Quadratic(q) = &spec.b {
        if q.dim() != spec.dim {
            return Err(Error::Structure(format!("B acts on R^{}, blocks on R^{}", q.dim(), spec.dim)));
        }
    }
    let beta = spec.b.beta();
    if !(spec.gamma > 0.0 && spec.gamma < 2.0 * beta) {
        return Err(Error::Parameter(format!("gamma {} outside (0, 2 beta = {})", spec.gamma, 2.0 * beta)));
    }
    let resolvents = spec
        .blocks
        .iter()
        .zip(spec.weights.as_slice())
        .map(|(a, w)| a.resolvent_map(spec.gamma / w))
        .collect::<Result<Vec<_>>>()?;
    let probe = Point::zeros(spec.dim);
    for j in &resolvents {
        j(&probe)?;
    }
    let alpha = composition_alpha(0.5, spec.gamma / (2.0 * beta));
    let shape = Shape::diagonal(spec.dim, spec.weights.clone());
    Ok(Gfb { spec, alpha, shape, resolvents })
}

impl Gfb {
    pub fn spec(&self) -> &GfbSpec {
        &self.spec
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// `2 beta / (4 beta - gamma)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn relaxation_limit(&self) -> f64 {
        1.0 / self.alpha
    }

    /// Consensus `x = sum_i w_i z_i`, `B x` and `u_i = J_{gamma/w_i A_i}(2x - z_i - gamma B x)`.
    pub fn parts(&self, z: &ProductPoint) -> Result<(Point, Point, Vec<Point>)> {
        let x = z.mean()?;
        let bx = self.spec.b.apply(&x);
        let base = x.axpy(-self.spec.gamma, &bx);
        let base = &base + &x;
        let u = z
            .blocks()
            .iter()
            .zip(&self.resolvents)
            .map(|(zi, j)| j(&(&base - zi)))
            .collect::<Result<Vec<_>>>()?;
        Ok((x, bx, u))
    }

    pub fn operator(&self) -> OperatorSpec {
        let me = self.clone();
        OperatorSpec::new(
            format!("GFB(gamma={})", self.spec.gamma),
            self.shape.clone(),
            Averagedness::Averaged(self.alpha),
            move |z| {
                let (x, _, u) = me.parts(z)?;
                Ok(z.map_blocks(|i, zi| &(zi + &u[i]) - &x))
            },
        )
    }

    /// The same operator built as `T1 T2` with `T1 = (R_{gamma A} R_S + Id)/2`, `T2 = Id - gamma B_S`.
    pub fn factored_operator(&self) -> Result<OperatorSpec> {
        let me = self.clone();
        let t1 = OperatorSpec::new("(R_A R_S + Id)/2", self.shape.clone(), Averagedness::Averaged(0.5), move |y| {
            let rs = y.reflect_diagonal()?;
            let ja = rs
                .blocks()
                .iter()
                .zip(&me.resolvents)
                .map(|(b, j)| j(b))
                .collect::<Result<Vec<_>>>()?;
            let ra = rs.map_blocks(|i, b| &(&ja[i] * 2.0) - b);
            Ok(&(&ra + y) * 0.5)
        });
        if self.spec.b.is_zero() {
            return Ok(t1);
        }
        let b = self.spec.b.clone();
        let gamma = self.spec.gamma;
        let t2 = OperatorSpec::new(
            "Id - gamma B_S",
            self.shape.clone(),
            Averagedness::Averaged(gamma / (2.0 * b.beta())),
            move |z| {
                let bx = b.apply(&z.mean()?);
                Ok(z.map_blocks(|_, zi| zi.axpy(-gamma, &bx)))
            },
        );
        compose2(&t1, &t2)
    }

    pub fn certificate(&self, z: &ProductPoint) -> Result<GfbCertificate> {
        let (x, bx, u) = self.parts(z)?;
        let gamma = self.spec.gamma;
        let w = self.spec.weights.as_slice();
        let ubar = ProductPoint::new(u.clone(), self.spec.weights.clone())?.mean()?;
        let g = &(&(&x - &ubar) * (1.0 / gamma)) - &bx;
        let criterion = (&g + &self.spec.b.apply(&ubar)).norm();
        // block i: (w_i/gamma)(2x - z_i - gamma B x - u_i) in A_i u_i
        let base = &x.axpy(-gamma, &bx) + &x;
        let membership = Membership::all(self.spec.blocks.iter().enumerate().map(|(i, a)| {
            let gi = &(&(&base - z.block(i)) - &u[i]) * (w[i] / gamma);
            a.membership(&u[i], &gi)
        }));
        Ok(GfbCertificate { x, u, g, criterion, membership })
    }

    /// Gradient and resolvent channels `b_k` and `a_{i,k}`.
    pub fn injector(&self) -> Arc<dyn ChannelInjector> {
        Arc::new(GfbChannels(self.clone()))
    }

    /// Pointwise certificate bound `(1/gamma) * pointwise_bound(k)`.
    pub fn certificate_bound(&self, k: usize, c: &BoundConstants) -> f64 {
        pointwise_bound(k, c) / self.spec.gamma
    }

    /// Ergodic certificate bound `2 (d0 + C2) / (gamma lambda_lo (k+1))`.
    pub fn ergodic_certificate_bound(&self, k: usize, c: &BoundConstants) -> f64 {
        2.0 * (c.d0 + c.c2) / (self.spec.gamma * c.lambda_lo * (k + 1) as f64)
    }
}

struct GfbChannels(Gfb);

impl ChannelInjector for GfbChannels {
    fn channel_names(&self) -> Vec<String> {
        vec!["gradient".into(), "resolvent".into()]
    }

    fn perturbed(&self, z: &ProductPoint, magnitude: f64, rng: &mut ChaCha8Rng) -> Result<Perturbed> {
        let g = &self.0;
        let b = unit_dir(g.spec.dim, magnitude, rng);
        let a = seeded_direction(&g.shape, &Metric::Product, magnitude, rng);
        let x = z.mean()?;
        let bx = g.spec.b.apply(&x);
        let base = &(&x.axpy(-g.spec.gamma, &bx) + &x) + &b;
        let u = z
            .blocks()
            .iter()
            .zip(&g.resolvents)
            .map(|(zi, j)| j(&(&base - zi)))
            .collect::<Result<Vec<_>>>()?;
        let value = z.map_blocks(|i, zi| &(&(zi + &u[i]) + a.block(i)) - &x);
        Ok(Perturbed { value, channel_norms: vec![b.norm(), a.norm()], combined: None })
    }
}

/// Records pointwise and ergodic certificates along a run.
///
/// Ergodic averages are weighted by `lambda_k`, matching the averaged residual.
pub struct GfbObserver {
    gfb: Gfb,
    pub criterion: Vec<f64>,
    pub ergodic: Vec<f64>,
    pub membership: Membership,
    sum_x: Option<Point>,
    sum_u: Option<Point>,
    lambda_sum: f64,
}

impl GfbObserver {
    pub fn new(gfb: &Gfb) -> Self {
        GfbObserver {
            gfb: gfb.clone(),
            criterion: vec![],
            ergodic: vec![],
            membership: Membership::Verified { residual: 0.0 },
            sum_x: None,
            sum_u: None,
            lambda_sum: 0.0,
        }
    }

    fn push(&mut self, z: &ProductPoint, lambda: f64) -> Result<()> {
        let c = self.gfb.certificate(z)?;
        self.criterion.push(c.criterion);
        self.membership = Membership::all([self.membership, c.membership]);
        let ub = ProductPoint::new(c.u, self.gfb.spec.weights.clone())?.mean()?;
        self.sum_x = Some(match self.sum_x.take() { Some(s) => s.axpy(lambda, &c.x), None => &c.x * lambda });
        self.sum_u = Some(match self.sum_u.take() { Some(s) => s.axpy(lambda, &ub), None => &ub * lambda });
        self.lambda_sum += lambda;
        let gamma = self.gfb.spec.gamma;
        let xb = self.sum_x.as_ref().unwrap() * (1.0 / self.lambda_sum);
        let ubar = self.sum_u.as_ref().unwrap() * (1.0 / self.lambda_sum);
        let b = &self.gfb.spec.b;
        let lhs = xb.axpy(-gamma, &b.apply(&xb));
        let rhs = ubar.axpy(-gamma, &b.apply(&ubar));
        self.ergodic.push((&lhs - &rhs).norm() / gamma);
        Ok(())
    }
}

impl StepObserver for GfbObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.push(step.z, step.lambda)
    }
}

/// Pointwise and ergodic certificates recomputed from a trace with retained iterates.
pub fn gfb_certificates(gfb: &Gfb, trace: &IterationTrace) -> Result<GfbObserver> {
    let ret = trace
        .retained
        .as_ref()
        .ok_or_else(|| Error::Unavailable("certificates need retained iterates".into()))?;
    let mut obs = GfbObserver::new(gfb);
    for k in 0..trace.steps() {
        obs.push(&ret.z[k], trace.lambdas[k])?;
    }
    Ok(obs)
}

/// `gamma -> T_gamma` for a fixed GFB problem.
#[derive(Clone, Debug)]
pub struct GfbFamily {
    pub spec: GfbSpec,
}

impl OperatorFamily for GfbFamily {
    fn at(&self, gamma: f64) -> Result<OperatorSpec> {
        Ok(build_gfb(GfbSpec { gamma, ..self.spec.clone() })?.operator())
    }
}

// ---------------------------------------------------------------------------
// Douglas-Rachford
// ---------------------------------------------------------------------------

/// A maximal monotone operator on a product space.
#[derive(Clone, Debug)]
pub enum ProductMonotone {
    /// `(x_i) -> (s_i A_i x_i)` with scale `s_i > 0`.
    Blocks(Vec<(Monotone, f64)>),
    /// The normal cone of the diagonal subspace.
    Diagonal,
}

impl ProductMonotone {
    pub fn single(a: Monotone) -> Self {
        ProductMonotone::Blocks(vec![(a, 1.0)])
    }

    fn resolvent(&self, gamma: f64) -> Result<Arc<dyn Fn(&ProductPoint) -> Result<ProductPoint> + Send + Sync>> {
        Ok(match self {
            ProductMonotone::Blocks(bs) => {
                if bs.iter().any(|(_, s)| !(*s > 0.0)) {
                    return Err(Error::Parameter("block scales must be positive".into()));
                }
                let maps = bs.iter().map(|(a, s)| a.resolvent_map(gamma * s)).collect::<Result<Vec<_>>>()?;
                Arc::new(move |z: &ProductPoint| {
                    if z.n_blocks() != maps.len() {
                        return Err(Error::Structure("block count mismatch".into()));
                    }
                    let out = z.blocks().iter().zip(&maps).map(|(b, j)| j(b)).collect::<Result<Vec<_>>>()?;
                    ProductPoint::new(out, z.weights().clone())
                })
            }
            ProductMonotone::Diagonal => Arc::new(|z: &ProductPoint| z.project_diagonal()),
        })
    }

    /// `g in A u`.
    pub fn membership(&self, u: &ProductPoint, g: &ProductPoint) -> Membership {
        match self {
            ProductMonotone::Blocks(bs) => Membership::all(
                bs.iter().enumerate().map(|(i, (a, s))| a.membership(u.block(i), &(g.block(i) * (1.0 / s)))),
            ),
            ProductMonotone::Diagonal => {
                let (pu, mg) = match (u.project_diagonal(), g.mean()) {
                    (Ok(p), Ok(m)) => (p, m),
                    _ => return Membership::Violated { residual: f64::INFINITY },
                };
                let off = (u - &pu).norm() / (1.0 + u.norm());
                let r = off.max(mg.norm() / (1.0 + g.norm()));
                if r <= crate::operators::MEMBERSHIP_TOL {
                    Membership::Verified { residual: r }
                } else {
                    Membership::Violated { residual: r }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct DrsSpec {
    pub shape: Shape,
    pub a1: ProductMonotone,
    pub a2: ProductMonotone,
    pub gamma: f64,
}

type ProductResolvent = Arc<dyn Fn(&ProductPoint) -> Result<ProductPoint> + Send + Sync>;

#[derive(Clone)]
pub struct Drs {
    spec: DrsSpec,
    j1: ProductResolvent,
    j2: ProductResolvent,
}

#[derive(Clone, Debug)]
pub struct DrsCertificate {
    /// `g = (1/gamma)(2 x_k - z_k - u_{k+1} + z_{k+1} - v_{k+1})`, in `A_1 u + A_2 v`.
    pub g: ProductPoint,
    pub criterion: f64,
    pub membership: Membership,
}

pub fn build_drs(spec: DrsSpec) -> Result<Drs> {
    if !(spec.gamma > 0.0 && spec.gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma {} must be positive", spec.gamma)));
    }
    let j1 = spec.a1.resolvent(spec.gamma)?;
    let j2 = spec.a2.resolvent(spec.gamma)?;
    let probe = spec.shape.zeros();
    j1(&probe)?;
    j2(&probe)?;
    Ok(Drs { spec, j1, j2 })
}

impl Drs {
    pub fn spec(&self) -> &DrsSpec {
        &self.spec
    }

    /// `x = J_{gamma A_2} z` and `u = J_{gamma A_1}(2x - z)`.
    pub fn parts(&self, z: &ProductPoint) -> Result<(ProductPoint, ProductPoint)> {
        let x = (self.j2)(z)?;
        let u = (self.j1)(&(&(&x * 2.0) - z))?;
        Ok((x, u))
    }

    /// `T = (R_1 R_2 + Id) / 2`, firmly nonexpansive.
    pub fn operator(&self) -> OperatorSpec {
        let me = self.clone();
        OperatorSpec::new(
            format!("DRS(gamma={})", self.spec.gamma),
            self.spec.shape.clone(),
            Averagedness::Averaged(0.5),
            move |z| {
                let (x, u) = me.parts(z)?;
                Ok(&(z + &u) - &x)
            },
        )
    }

    /// The same map written with reflections.
    pub fn reflected_operator(&self) -> OperatorSpec {
        let me = self.clone();
        OperatorSpec::new("(R1 R2 + Id)/2", self.spec.shape.clone(), Averagedness::Averaged(0.5), move |z| {
            let r2 = &(&(me.j2)(z)? * 2.0) - z;
            let r1 = &(&(me.j1)(&r2)? * 2.0) - &r2;
            Ok(&(&r1 + z) * 0.5)
        })
    }

    pub fn certificate(&self, z: &ProductPoint, z_next: &ProductPoint) -> Result<DrsCertificate> {
        let gamma = self.spec.gamma;
        let (x, u) = self.parts(z)?;
        let v = (self.j2)(z_next)?;
        let g1 = &(&(&(&x * 2.0) - z) - &u) * (1.0 / gamma);
        let g2 = &(z_next - &v) * (1.0 / gamma);
        let g = &g1 + &g2;
        let membership = Membership::all([self.spec.a1.membership(&u, &g1), self.spec.a2.membership(&v, &g2)]);
        Ok(DrsCertificate { criterion: g.norm(), g, membership })
    }

    /// `((1 + lambda) pointwise_bound(k) + lambda ||eps_k||) / gamma`.
    ///
    /// The certificate is evaluated with exact resolvents at `z_k` and
    /// `z_{k+1}`, so the error enters only through the step `z_{k+1} - z_k`.
    pub fn certificate_bound(&self, k: usize, lambda: f64, err: f64, c: &BoundConstants) -> f64 {
        ((1.0 + lambda) * pointwise_bound(k, c) + lambda * err) / self.spec.gamma
    }

    /// `eps_1` on the `z` update after the first resolvent, `eps_2` on `x`.
    pub fn injector(&self) -> Arc<dyn ChannelInjector> {
        Arc::new(DrsChannels(self.clone()))
    }
}

struct DrsChannels(Drs);

impl ChannelInjector for DrsChannels {
    fn channel_names(&self) -> Vec<String> {
        vec!["eps1".into(), "eps2".into()]
    }

    fn perturbed(&self, z: &ProductPoint, magnitude: f64, rng: &mut ChaCha8Rng) -> Result<Perturbed> {
        let d = &self.0;
        let shape = &d.spec.shape;
        let e1 = seeded_direction(shape, &Metric::Product, magnitude, rng);
        let e2 = seeded_direction(shape, &Metric::Product, magnitude, rng);
        let x = &(d.j2)(z)? + &e2;
        let u = (d.j1)(&(&(&x * 2.0) - z))?;
        let value = &(&(z + &u) + &e1) - &x;
        Ok(Perturbed { value, channel_norms: vec![e1.norm(), e2.norm()], combined: Some(&e1 + &e2) })
    }
}

pub struct DrsObserver {
    drs: Drs,
    pub criterion: Vec<f64>,
    pub membership: Membership,
}

impl DrsObserver {
    pub fn new(drs: &Drs) -> Self {
        DrsObserver { drs: drs.clone(), criterion: vec![], membership: Membership::Verified { residual: 0.0 } }
    }
}

impl StepObserver for DrsObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        let c = self.drs.certificate(step.z, step.z_next)?;
        self.criterion.push(c.criterion);
        self.membership = Membership::all([self.membership, c.membership]);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Primal-dual splitting
// ---------------------------------------------------------------------------

/// `L_i^* (A_i [] D_i)(L_i x - r_i)` with weight `w_i` and dual step `sigma_i`.
#[derive(Clone, Debug)]
pub struct DualBlock {
    pub a: Monotone,
    /// `D_i^{-1}`, cocoercive; `Zero` means `D_i^{-1} = 0`.
    pub d_inv: Cocoercive,
    pub l: DMatrix<f64>,
    pub r: DVector<f64>,
    pub weight: f64,
    pub sigma: f64,
}

/// `0 in C x + B x + sum_i w_i L_i^* (A_i [] D_i)(L_i x - r_i)` with primal step `tau`.
#[derive(Clone, Debug)]
pub struct PdsSpec {
    pub dim: usize,
    pub c: Monotone,
    pub b: Cocoercive,
    pub tau: f64,
    pub duals: Vec<DualBlock>,
}

/// Derived step-size constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PdsParams {
    pub l_norms: Vec<f64>,
    /// `min{1/tau, 1/sigma_i} (1 - sqrt(tau sum_i sigma_i w_i ||L_i||^2))`.
    pub eta: f64,
    /// `min{mu, nu_i}`.
    pub beta: f64,
    /// `2 eta beta / (4 eta beta - 1)`.
    pub alpha: f64,
    pub lambda_max: f64,
    /// `max{1/tau, 1/sigma_i}`.
    pub delta: f64,
}

/// Spectral norm by power iteration on `L^T L`.
pub fn operator_norm(l: &DMatrix<f64>) -> Result<f64> {
    if l.is_empty() {
        return Err(Error::Structure("empty matrix".into()));
    }
    let n = l.ncols();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7 % 11) as f64));
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = l.transpose() * (l * &v);
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(0.0);
        }
        let next = nw.sqrt();
        v = w / nw;
        if (next - est).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        est = next;
    }
    Err(Error::numerical("power iteration did not converge"))
}

pub fn pds_parameters(spec: &PdsSpec) -> Result<PdsParams> {
    if spec.duals.is_empty() {
        return Err(Error::Structure("at least one dual block".into()));
    }
    if !(spec.tau > 0.0) || spec.duals.iter().any(|d| !(d.sigma > 0.0 && d.weight > 0.0)) {
        return Err(Error::Parameter("tau, sigma_i and w_i must be positive".into()));
    }
    for d in &spec.duals {
        if d.l.ncols() != spec.dim || d.l.nrows() != d.r.len() {
            return Err(Error::Structure(format!(
                "L_i is {}x{}, r_i has {} entries, primal dim {}",
                d.l.nrows(),
                d.l.ncols(),
                d.r.len(),
                spec.dim
            )));
        }
    }
    let l_norms = spec.duals.iter().map(|d| operator_norm(&d.l)).collect::<Result<Vec<_>>>()?;
    let s: f64 = spec.duals.iter().zip(&l_norms).map(|(d, n)| d.sigma * d.weight * n * n).sum();
    let root = (spec.tau * s).sqrt();
    let inv_steps = std::iter::once(1.0 / spec.tau).chain(spec.duals.iter().map(|d| 1.0 / d.sigma));
    let (lo, hi) = inv_steps.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    let eta = lo * (1.0 - root);
    let beta = spec.duals.iter().map(|d| d.d_inv.beta()).fold(spec.b.beta(), f64::min);
    if !(eta > 0.0) {
        return Err(Error::Parameter(format!("tau sum sigma_i w_i ||L_i||^2 = {} must be below 1", root * root)));
    }
    let eb = eta * beta;
    if !(2.0 * eb > 1.0) {
        return Err(Error::Parameter(format!("2 eta beta = {} must exceed 1", 2.0 * eb)));
    }
    let (alpha, lambda_max) = if eb.is_infinite() { (0.5, 2.0) } else { (2.0 * eb / (4.0 * eb - 1.0), (4.0 * eb - 1.0) / (2.0 * eb)) };
    Ok(PdsParams { l_norms, eta, beta, alpha, lambda_max, delta: hi })
}

/// Picks the largest `tau = sigma_i = s` from `candidates` with `2 eta beta > 1`.
pub fn choose_pds_steps(mut spec: PdsSpec, candidates: &[f64]) -> Result<PdsSpec> {
    let mut tried = vec![];
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for s in sorted {
        spec.tau = s;
        for d in spec.duals.iter_mut() {
            d.sigma = s;
        }
        match pds_parameters(&spec) {
            Ok(_) => return Ok(spec),
            Err(Error::Parameter(_)) => tried.push(s),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Parameter(format!("no admissible (tau, sigma) among tau = sigma in {tried:?}")))
}

#[derive(Clone)]
pub struct Pds {
    spec: PdsSpec,
    params: PdsParams,
    shape: Shape,
    jc: PointMap,
    jdual: Vec<PointMap>,
}

pub fn build_pds(spec: PdsSpec) -> Result<Pds> {
    let params = pds_parameters(&spec)?;
    let mut dims = vec![spec.dim];
    let mut w = vec![1.0];
    for d in &spec.duals {
        dims.push(d.l.nrows());
        w.push(d.weight);
    }
    let shape = Shape::new(dims, Weights::new(w)?)?;
    let jc = spec.c.resolvent_map(spec.tau)?;
    let jdual = spec.duals.iter().map(|d| d.a.inverse_resolvent_map(d.sigma)).collect::<Result<Vec<_>>>()?;
    jc(&Point::zeros(spec.dim))?;
    for (j, d) in jdual.iter().zip(&spec.duals) {
        j(&Point::zeros(d.l.nrows()))?;
    }
    Ok(Pds { spec, params, shape, jc, jdual })
}

/// Channel errors of one primal–dual evaluation.
struct PdsErrors {
    e1: Point,
    e2: Point,
    e3: Vec<Point>,
    e4: Vec<Point>,
}

impl Pds {
    pub fn spec(&self) -> &PdsSpec {
        &self.spec
    }

    pub fn params(&self) -> &PdsParams {
        &self.params
    }

    /// `K = H (+) G_1 (+) ... ` with weights `(1, w_1, ...)`.
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn primal<'a>(&self, z: &'a ProductPoint) -> &'a Point {
        z.block(0)
    }

    pub fn dual<'a>(&self, z: &'a ProductPoint) -> &'a [Point] {
        &z.blocks()[1..]
    }

    pub fn join(&self, x: Point, v: Vec<Point>) -> Result<ProductPoint> {
        let mut b = vec![x];
        b.extend(v);
        let z = ProductPoint::new(b, self.shape.weights.clone())?;
        self.shape.check(&z)?;
        Ok(z)
    }

    fn evaluate(&self, z: &ProductPoint, err: Option<&PdsErrors>) -> Result<ProductPoint> {
        let s = &self.spec;
        let x = z.block(0);
        let v = &z.blocks()[1..];
        let mut lt = s.b.apply(x).into_vector();
        for (d, vi) in s.duals.iter().zip(v) {
            lt.axpy(d.weight, &(d.l.transpose() * vi.vector()), 1.0);
        }
        let mut lt = Point::from_vector(lt).map_err(|_| Error::numerical("non-finite primal gradient"))?;
        if let Some(e) = err {
            lt = &lt + &e.e1;
        }
        let mut p = (self.jc)(&x.axpy(-s.tau, &lt))?;
        if let Some(e) = err {
            p = &p + &e.e2;
        }
        let y = &(&p * 2.0) - x;
        let mut q = Vec::with_capacity(v.len());
        for (i, (d, vi)) in s.duals.iter().zip(v).enumerate() {
            let mut inner = &d.l * y.vector() - d.d_inv.apply(vi).vector() - &d.r;
            if let Some(e) = err {
                inner -= e.e3[i].vector();
            }
            let arg = vi.axpy(d.sigma, &Point::raw(inner));
            let mut qi = (self.jdual[i])(&arg)?;
            if let Some(e) = err {
                qi = &qi + &e.e4[i];
            }
            q.push(qi);
        }
        self.join(p, q)
    }

    /// `F(x, v) = (x/tau - sum_i w_i L_i^* v_i, v_i/sigma_i - L_i x)`.
    pub fn apply_f(&self, z: &ProductPoint) -> ProductPoint {
        let s = &self.spec;
        let x = z.block(0);
        let mut fx = x.vector() / s.tau;
        let mut out = vec![];
        for (d, vi) in s.duals.iter().zip(&z.blocks()[1..]) {
            fx.axpy(-d.weight, &(d.l.transpose() * vi.vector()), 1.0);
            out.push(Point::raw(vi.vector() / d.sigma - &d.l * x.vector()));
        }
        let mut b = vec![Point::raw(fx)];
        b.extend(out);
        z.with_blocks(b)
    }

    /// The metric `<z, F z>` in which the operator is averaged.
    pub fn metric(&self) -> Metric {
        let me = self.clone();
        Metric::operator("F", move |z| me.apply_f(z))
    }

    pub fn operator(&self) -> OperatorSpec {
        let me = self.clone();
        OperatorSpec::new(
            format!("PDS(tau={})", self.spec.tau),
            self.shape.clone(),
            Averagedness::Averaged(self.params.alpha),
            move |z| me.evaluate(z, None),
        )
        .with_metric(self.metric())
    }

    /// `J_A (z - B z)` with `A = F^{-1}(C + D)`, `B = F^{-1} E`, computed with a dense `F`.
    pub fn abstract_step(&self, z: &ProductPoint) -> Result<ProductPoint> {
        let s = &self.spec;
        let n = self.shape.total_dim();
        let mut f = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.apply_f(&self.shape.unflatten(&e)?).flatten();
            f.set_column(j, &DVector::from_vec(col));
        }
        let mut ez = vec![s.b.apply(z.block(0))];
        for (d, vi) in s.duals.iter().zip(&z.blocks()[1..]) {
            ez.push(d.d_inv.apply(vi));
        }
        let ez = DVector::from_vec(z.with_blocks(ez).flatten());
        let lu = f.clone().lu();
        let y = lu.solve(&ez).ok_or_else(|| Error::numerical("F is singular"))?;
        let w = DVector::from_vec(z.flatten()) - y;
        let fw = self.shape.unflatten((&f * w).as_slice())?;
        let p = (self.jc)(&(fw.block(0) * s.tau))?;
        let mut q = vec![];
        for (i, d) in s.duals.iter().enumerate() {
            let arg = fw.block(i + 1).vector() + &d.l * p.vector() * 2.0 - &d.r;
            q.push((self.jdual[i])(&Point::raw(arg * d.sigma))?);
        }
        self.join(p, q)
    }

    /// Channels `eps_1` (primal gradient), `eps_2` (primal output), `eps_3` (dual input), `eps_4` (dual output).
    pub fn injector(&self) -> Arc<dyn ChannelInjector> {
        Arc::new(PdsChannels(self.clone()))
    }

    /// `2 delta / eta`, the factor turning the fixed-point bound into a bound on the surrogate.
    pub fn certificate_factor(&self) -> f64 {
        2.0 * self.params.delta / self.params.eta
    }
}

struct PdsChannels(Pds);

impl ChannelInjector for PdsChannels {
    fn channel_names(&self) -> Vec<String> {
        vec!["eps1".into(), "eps2".into(), "eps3".into(), "eps4".into()]
    }

    fn perturbed(&self, z: &ProductPoint, magnitude: f64, rng: &mut ChaCha8Rng) -> Result<Perturbed> {
        let p = &self.0;
        let d = p.spec.dim;
        let dual_shape = Shape::new(p.shape.dims[1..].to_vec(), Weights::new(p.shape.weights.as_slice()[1..].to_vec())?)?;
        let e1 = unit_dir(d, magnitude, rng);
        let e2 = unit_dir(d, magnitude, rng);
        let e3 = seeded_direction(&dual_shape, &Metric::Product, magnitude, rng);
        let e4 = seeded_direction(&dual_shape, &Metric::Product, magnitude, rng);
        let norms = vec![e1.norm(), e2.norm(), e3.norm(), e4.norm()];
        let errs = PdsErrors { e1, e2, e3: e3.into_blocks(), e4: e4.into_blocks() };
        Ok(Perturbed { value: p.evaluate(z, Some(&errs))?, channel_norms: norms, combined: None })
    }
}

/// Surrogate certificate series for a primal–dual run.
#[derive(Clone, Debug, PartialEq)]
pub struct PdsCertificates {
    /// `||z_k - T z_k||_K`.
    pub criterion: Vec<f64>,
    /// `(2 delta / eta) * pointwise_bound_K(k)`.
    pub bound: Vec<f64>,
    /// `||w_{k+1} - T z_k||_K` with `w_{k+1} = (z_{k+1} - (1 - lambda) z_k)/lambda - eps_k`; needs retention.
    pub w_gap: Option<Vec<f64>>,
    pub constants: BoundConstants,
}

pub fn pds_certificates(pds: &Pds, trace: &IterationTrace) -> Result<PdsCertificates> {
    let amb = trace
        .ambient
        .as_ref()
        .ok_or_else(|| Error::Unavailable("surrogate certificate needs ambient norms".into()))?;
    let constants = constants_from_series(trace, amb)?;
    let f = pds.certificate_factor();
    let criterion = amb.res[..trace.steps()].to_vec();
    let bound = (0..trace.steps()).map(|k| f * pointwise_bound(k, &constants)).collect();
    let w_gap = match &trace.retained {
        None => None,
        Some(ret) => {
            let op = pds.operator();
            let mut gaps = vec![];
            for k in 0..trace.steps() {
                let lam = trace.lambdas[k];
                let w = &(&(&ret.z[k + 1] - &(&ret.z[k] * (1.0 - lam))) * (1.0 / lam)) - &ret.eps[k];
                gaps.push((&w - &op.apply(&ret.z[k])?).norm());
            }
            Some(gaps)
        }
    };
    Ok(PdsCertificates { criterion, bound, w_gap, constants })
}
