//! Test problems with known fixed-point sets, moduli and rates.
//!
//! Every generator is deterministic: random data come from a seeded ChaCha8
//! stream. The gradient-descent instance is a diagonal quadratic whose
//! spectrum spans `[delta_min, delta_max]`; it is a surrogate for any locally
//! strongly convex function with those moduli.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bounds::{gd_theoretical_rate, SubRegularityModel};
use crate::error::{Error, Result};
use crate::km::{run_km, ChannelInjector, FixReference, KmConfig, RelaxationSchedule, StopRule, DEFAULT_MAX_ITERS};
use crate::operators::{gradient_step, project_box, Basis, Cocoercive, LinearMonotone, Monotone, OperatorSpec, QuadraticFn};
use crate::spaces::{Point, ProductPoint, Shape, Weights};
use crate::splitting::{
    build_drs, build_gfb, build_pds, choose_pds_steps, operator_norm, DrsSpec, DualBlock, Drs, Gfb, GfbSpec, Pds,
    PdsSpec, ProductMonotone,
};

/// Tolerance for analytic fixed points at construction.
pub const FIX_CHECK_TOL: f64 = 1e-10;
/// Default seed of the generic starting vectors.
pub const Z0_SEED: u64 = 7;

/// How an instance is iterated.
#[derive(Clone)]
pub enum Method {
    Operator(OperatorSpec),
    Gfb(Gfb),
    Drs(Drs),
    Pds(Pds),
}

impl Method {
    pub fn kind(&self) -> &'static str {
        match self {
            Method::Operator(_) => "km",
            Method::Gfb(_) => "gfb",
            Method::Drs(_) => "drs",
            Method::Pds(_) => "pds",
        }
    }

    pub fn operator(&self) -> OperatorSpec {
        match self {
            Method::Operator(t) => t.clone(),
            Method::Gfb(g) => g.operator(),
            Method::Drs(d) => d.operator(),
            Method::Pds(p) => p.operator(),
        }
    }

    /// Method-level error channels, if the method has any.
    pub fn injector(&self) -> Option<Arc<dyn ChannelInjector>> {
        match self {
            Method::Operator(_) => None,
            Method::Gfb(g) => Some(g.injector()),
            Method::Drs(d) => Some(d.injector()),
            Method::Pds(p) => Some(p.injector()),
        }
    }
}

/// Analytic constants, where known.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Analytic {
    pub kappa: Option<f64>,
    pub delta_min: Option<f64>,
    pub delta_max: Option<f64>,
    pub theta: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// Spectral radius of the linear iteration map, the expected observed rate on `||e_k||`.
    pub spectral_rate: Option<f64>,
    /// Rate predicted by the subregularity recursion, on `d_k`.
    pub theoretical_rate: Option<f64>,
    /// True when the instance stands in for a function only described by its moduli.
    pub surrogate: bool,
}

#[derive(Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub method: Method,
    pub fix: Option<FixReference>,
    pub analytic: Analytic,
    pub z0: ProductPoint,
    pub relaxation: RelaxationSchedule,
    /// A primal solution from an independent solver.
    pub primal_reference: Option<Point>,
}

impl ProblemInstance {
    pub fn operator(&self) -> OperatorSpec {
        self.method.operator()
    }

    /// The subregularity model when `kappa` is known.
    pub fn local_model(&self) -> Option<SubRegularityModel> {
        let kappa = self.analytic.kappa?;
        Some(SubRegularityModel { kappa, alpha: self.operator().class().alpha() })
    }

    /// Fills `fix` with an oracle run when no analytic description exists.
    pub fn with_reference(mut self) -> Result<Self> {
        if self.fix.is_none() {
            self.fix = Some(reference_solution(&self, REFERENCE_TOL, REFERENCE_FACTOR)?);
        }
        Ok(self)
    }

    fn checked(self) -> Result<Self> {
        if let Some(fix) = &self.fix {
            let t = self.operator();
            let z = fix.anchor(&self.z0);
            let r = t.metric().norm(&(&z - &t.apply(&z)?));
            if r > FIX_CHECK_TOL {
                return Err(Error::numerical(format!("analytic fixed point has residual {r:e}")));
            }
        }
        Ok(self)
    }
}

fn generic_point(shape: &Shape, norm: f64, seed: u64) -> ProductPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = shape.gaussian(&mut rng);
    let n = g.norm();
    &g * (norm / n)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `x+ = x - gamma H x` with `H = diag(linspace(delta_min, delta_max, d))`.
pub fn make_quadratic_gd(delta_min: f64, delta_max: f64, d: usize, gamma: f64) -> Result<ProblemInstance> {
    if !(delta_min > 0.0 && delta_min <= delta_max && delta_max.is_finite()) {
        return Err(Error::Parameter(format!("need 0 < delta_min <= delta_max, got {delta_min}, {delta_max}")));
    }
    if d < 2 {
        return Err(Error::Parameter("dimension must be at least 2".into()));
    }
    if !(gamma > 0.0 && gamma * delta_max < 2.0) {
        return Err(Error::Parameter(format!("step {gamma} outside (0, 2/delta_max)")));
    }
    let h: Vec<f64> = (0..d).map(|i| delta_min + (delta_max - delta_min) * i as f64 / (d - 1) as f64).collect();
    let f = QuadraticFn::diagonal(&h, &vec![0.0; d])?;
    let t = gradient_step(&f, gamma)?;
    let spectral = h.iter().map(|hi| (1.0 - gamma * hi).abs()).fold(0.0, f64::max);
    let shape = Shape::single(d);
    ProblemInstance {
        name: format!("quadratic-gd(dm={delta_min}, dM={delta_max}, d={d}, gamma={gamma})"),
        method: Method::Operator(t),
        fix: Some(FixReference::Point(shape.zeros())),
        analytic: Analytic {
            kappa: Some(1.0 / (gamma * delta_min)),
            delta_min: Some(delta_min),
            delta_max: Some(delta_max),
            beta: Some(1.0 / delta_max),
            gamma: Some(gamma),
            spectral_rate: Some(spectral),
            theoretical_rate: Some(gd_theoretical_rate(gamma, delta_min, delta_max)?),
            surrogate: true,
            ..Default::default()
        },
        z0: generic_point(&shape, 1000.0, Z0_SEED),
        relaxation: RelaxationSchedule::Constant(1.0),
        primal_reference: None,
    }
    .checked()
}

/// DRS for `U = span{e1}` and `V = span{cos(theta) e1 + sin(theta) e2}` in `R^d`.
pub fn make_two_subspaces(theta: f64, d: usize) -> Result<ProblemInstance> {
    if !(theta > 0.0 && theta <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Parameter(format!("angle {theta} outside (0, pi/2]")));
    }
    if d < 2 {
        return Err(Error::Parameter("dimension must be at least 2".into()));
    }
    let u = Basis::new(&[Point::basis(d, 0)])?;
    let mut v = vec![0.0; d];
    v[0] = theta.cos();
    v[1] = theta.sin();
    let v = Basis::new(&[Point::new(v)?])?;
    let shape = Shape::single(d);
    let drs = build_drs(DrsSpec {
        shape: shape.clone(),
        a1: ProductMonotone::single(Monotone::SubspaceCone(u)),
        a2: ProductMonotone::single(Monotone::SubspaceCone(v)),
        gamma: 1.0,
    })?;
    // Fix T = (U cap V) + (U^perp cap V^perp) = span{e3, ..., ed}.
    let fix = FixReference::projector("span{e3..ed}", |z: &ProductPoint| {
        z.map_blocks(|_, b| {
            let mut c = b.clone().into_vector();
            c[0] = 0.0;
            c[1] = 0.0;
            Point::raw(c)
        })
    });
    let kappa = 1.0 / theta.sin();
    ProblemInstance {
        name: format!("two-subspaces(theta={theta}, d={d})"),
        method: Method::Drs(drs),
        fix: Some(fix),
        analytic: Analytic {
            kappa: Some(kappa),
            theta: Some(theta),
            gamma: Some(1.0),
            spectral_rate: Some(theta.cos()),
            theoretical_rate: Some(SubRegularityModel { kappa, alpha: Some(0.5) }.rate(1.0)),
            ..Default::default()
        },
        z0: generic_point(&shape, 100.0, Z0_SEED),
        relaxation: RelaxationSchedule::Constant(1.0),
        primal_reference: None,
    }
    .checked()
}

/// Forward–backward on `min 1/2 ||A x - y||^2 + mu ||x||_1`.
///
/// Columns of `A` are normalized; `y = A x0` for a planted `x0` with
/// `max(1, n/5)` nonzeros. The step is `gamma = beta = 1/||A^T A||`.
pub fn make_lasso(m: usize, n: usize, mu: f64, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 || m > 200 || n > 200 {
        return Err(Error::Parameter(format!("lasso size {m}x{n} outside 1..=200")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Parameter(format!("mu {mu} must be positive")));
    }
    let (a, y, planted) = lasso_data(m, n, seed);
    let f = QuadraticFn::new(a.transpose() * &a, a.transpose() * &y)?;
    let beta = f.beta();
    let spec = GfbSpec {
        dim: n,
        blocks: vec![Monotone::l1(mu)?],
        weights: Weights::one(),
        b: Cocoercive::Quadratic(f),
        gamma: beta,
    };
    let gfb = build_gfb(spec)?;
    let shape = gfb.shape().clone();
    ProblemInstance {
        name: format!("lasso(m={m}, n={n}, mu={mu}, seed={seed})"),
        method: Method::Gfb(gfb),
        fix: None,
        analytic: Analytic { beta: Some(beta), gamma: Some(beta), ..Default::default() },
        z0: generic_point(&shape, 1.0, seed ^ Z0_SEED),
        relaxation: RelaxationSchedule::Constant(1.0),
        primal_reference: Some(planted),
    }
    .checked()
}

/// Design matrix, observations and planted solution of [`make_lasso`].
pub fn lasso_data(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, Point) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian_matrix(m, n, &mut rng);
    for mut c in a.column_iter_mut() {
        let nc = c.norm();
        c /= nc;
    }
    let k = (n / 5).max(1);
    let mut x0 = vec![0.0; n];
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
        x0[idx[i]] = if rng.gen::<bool>() { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.5);
    }
    let x0 = DVector::from_vec(x0);
    let y = &a * &x0;
    (a, y, Point::raw(x0))
}

/// GFB with `B = grad env(||. - c||_1)` (`beta = 1`) and blocks cycling through
/// `l1, linear, box, l1`, equal weights, `gamma = 1`.
///
/// The linear block has symmetric part `>= I/2`, so the solution is unique.
pub fn make_gfb_multiblock(n_blocks: usize, d: usize, seed: u64) -> Result<ProblemInstance> {
    if !(2..=4).contains(&n_blocks) {
        return Err(Error::Parameter(format!("{n_blocks} blocks, expected 2..=4")));
    }
    if d == 0 || d > 100 {
        return Err(Error::Parameter(format!("dimension {d} outside 1..=100")));
    }
    let spec = multiblock_spec(n_blocks, d, seed)?;
    let gfb = build_gfb(spec)?;
    let shape = gfb.shape().clone();
    ProblemInstance {
        name: format!("gfb-multiblock(n={n_blocks}, d={d}, seed={seed})"),
        method: Method::Gfb(gfb),
        fix: None,
        analytic: Analytic { beta: Some(1.0), gamma: Some(1.0), ..Default::default() },
        z0: generic_point(&shape, 5.0, seed ^ Z0_SEED),
        relaxation: RelaxationSchedule::Constant(1.0),
        primal_reference: None,
    }
    .checked()
}

/// The [`GfbSpec`] behind [`make_gfb_multiblock`].
pub fn multiblock_spec(n_blocks: usize, d: usize, seed: u64) -> Result<GfbSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Point::new(gaussian_vec(d, &mut rng).iter().map(|v| 3.0 * v).collect())?;
    let g = gaussian_matrix(d, d, &mut rng);
    let k = gaussian_matrix(d, d, &mut rng);
    let m = DMatrix::identity(d, d) * 0.5 + &g * g.transpose() / (2.0 * d as f64) + (&k - k.transpose()) / (2.0 * (d as f64).sqrt());
    let all = [
        Monotone::l1(0.1)?,
        Monotone::Linear(LinearMonotone::new(m)?),
        Monotone::box_cone(vec![-0.5; d], vec![0.5; d])?,
        Monotone::l1(0.05)?,
    ];
    let b = Cocoercive::Custom {
        label: "grad env |. - c|_1".into(),
        beta: 1.0,
        map: Arc::new(move |x: &Point| crate::operators::moreau_envelope_gradient(&(x - &c), 1.0)),
    };
    Ok(GfbSpec {
        dim: d,
        blocks: all[..n_blocks].to_vec(),
        weights: Weights::uniform(n_blocks),
        b,
        gamma: 1.0,
    })
}

/// Data of the small primal–dual instance.
#[derive(Clone, Debug)]
pub struct PdsSmallData {
    pub q_diag: Vec<f64>,
    pub q_lin: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
    pub l: DMatrix<f64>,
    pub mu: f64,
}

/// Step candidates tried for `tau = sigma`, largest first.
pub const PDS_STEP_CANDIDATES: [f64; 6] = [0.5, 0.4, 0.3, 0.2, 0.1, 0.05];

/// `min 1/2 <x, Q x> - <q, x> + i_[-1,1](x) + mu ||L x||_1` with `L` dense `20 x 30`, `||L|| = 1`.
pub fn make_pds_small(seed: u64) -> Result<ProblemInstance> {
    make_pds(&pds_small_data(seed, 1.0))
}

pub fn pds_small_data(seed: u64, l_scale: f64) -> PdsSmallData {
    let (m, n) = (20, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_diag: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
    let q_lin = gaussian_vec(n, &mut rng);
    let mut l = gaussian_matrix(m, n, &mut rng);
    let ln = operator_norm(&l).unwrap_or(1.0);
    l *= l_scale / ln;
    PdsSmallData { q_diag, q_lin, lo: -1.0, hi: 1.0, l, mu: 0.1 }
}

/// Builds the primal–dual instance for `data` and the dual forward–backward reference.
pub fn make_pds(data: &PdsSmallData) -> Result<ProblemInstance> {
    let n = data.q_diag.len();
    let m = data.l.nrows();
    let spec = PdsSpec {
        dim: n,
        c: Monotone::box_cone(vec![data.lo; n], vec![data.hi; n])?,
        b: Cocoercive::Quadratic(QuadraticFn::diagonal(&data.q_diag, &data.q_lin)?),
        tau: PDS_STEP_CANDIDATES[0],
        duals: vec![DualBlock {
            a: Monotone::l1(data.mu)?,
            d_inv: Cocoercive::Zero,
            l: data.l.clone(),
            r: DVector::zeros(m),
            weight: 1.0,
            sigma: PDS_STEP_CANDIDATES[0],
        }],
    };
    let spec = choose_pds_steps(spec, &PDS_STEP_CANDIDATES)?;
    let pds = build_pds(spec)?;
    let shape = pds.shape().clone();
    let beta = pds.params().beta;
    let tau = pds.spec().tau;
    ProblemInstance {
        name: format!("pds-small(n={n}, m={m})"),
        method: Method::Pds(pds),
        fix: None,
        analytic: Analytic { beta: Some(beta), gamma: Some(tau), ..Default::default() },
        z0: generic_point(&shape, 1.0, Z0_SEED),
        relaxation: RelaxationSchedule::Constant(1.0),
        primal_reference: Some(dual_fbs_primal(data, 1e-14, 1_000_000)?),
    }
    .checked()
}

/// Primal solution of the [`PdsSmallData`] problem by forward–backward on its dual
/// `min_v h*(-L^T v) + i_[-mu,mu](v)`, `h = f + i_box`, whose gradient is explicit
/// because `Q` is diagonal: `grad h*(w) = clip(Q^{-1}(w + q))`.
pub fn dual_fbs_primal(data: &PdsSmallData, tol: f64, max_iters: usize) -> Result<Point> {
    let n = data.q_diag.len();
    let lo = vec![data.lo; n];
    let hi = vec![data.hi; n];
    let xw = |w: &DVector<f64>| {
        let raw = Point::raw(DVector::from_fn(n, |i, _| (w[i] + data.q_lin[i]) / data.q_diag[i]));
        project_box(&raw, &lo, &hi)
    };
    let qmin = data.q_diag.iter().copied().fold(f64::INFINITY, f64::min);
    let ln = operator_norm(&data.l)?;
    let step = if ln > 0.0 { qmin / (ln * ln) } else { 1.0 };
    let mut v = DVector::zeros(data.l.nrows());
    for _ in 0..max_iters {
        let x = xw(&(-(data.l.transpose() * &v)));
        let next = (&v + &data.l * x.vector() * step).map(|t| t.clamp(-data.mu, data.mu));
        let dv = (&next - &v).norm();
        v = next;
        if dv <= tol {
            return Ok(xw(&(-(data.l.transpose() * &v))));
        }
    }
    Err(Error::Unavailable(format!("dual forward-backward did not reach {tol:e} in {max_iters} steps")))
}

pub const REFERENCE_TOL: f64 = 1e-13;
pub const REFERENCE_FACTOR: usize = 10;

/// Exact run to `tol` over `factor` times the default horizon; the final iterate is the reference.
pub fn reference_solution(problem: &ProblemInstance, tol: f64, factor: usize) -> Result<FixReference> {
    let t = problem.operator();
    let cfg = KmConfig {
        relaxation: problem.relaxation.clone(),
        stop: StopRule { max_iters: factor * DEFAULT_MAX_ITERS, residual_tol: tol },
        ..Default::default()
    };
    let tr = run_km(&t, &problem.z0, &cfg)?;
    let z = tr.final_z;
    let r = t.metric().norm(&(&z - &t.apply(&z)?));
    if r > 10.0 * tol {
        return Err(Error::Unavailable(format!("reference run stalled at residual {r:e}")));
    }
    Ok(FixReference::Point(z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_constants() {
        let p = make_quadratic_gd(0.8, 1.0, 2, 0.5).unwrap();
        assert_eq!(p.analytic.spectral_rate, Some(0.6));
        assert!((p.analytic.theoretical_rate.unwrap() - 0.52f64.sqrt()).abs() < 1e-12);
        assert_eq!(p.analytic.kappa, Some(2.5));
        assert!(make_quadratic_gd(0.8, 1.0, 2, 2.0).is_err());
        assert!(make_quadratic_gd(1.0, 0.8, 2, 0.5).is_err());
    }

    #[test]
    fn subspaces_fix_set() {
        let p = make_two_subspaces(0.3, 4).unwrap();
        let fix = p.fix.as_ref().unwrap();
        let t = p.operator();
        let z = fix.anchor(&p.z0);
        assert!((&z - &t.apply(&z).unwrap()).norm() < 1e-14);
        assert!(make_two_subspaces(0.0, 2).is_err());
        assert!(make_two_subspaces(2.0, 2).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = make_lasso(30, 10, 0.1, 3).unwrap();
        let b = make_lasso(30, 10, 0.1, 3).unwrap();
        assert_eq!(a.z0, b.z0);
        let z = a.z0.clone();
        assert_eq!(a.operator().apply(&z).unwrap(), b.operator().apply(&z).unwrap());
        let c = make_gfb_multiblock(3, 5, 1).unwrap();
        let d = make_gfb_multiblock(3, 5, 1).unwrap();
        assert_eq!(c.operator().apply(&c.z0).unwrap(), d.operator().apply(&d.z0).unwrap());
    }

    #[test]
    fn pds_steps_admissible() {
        let p = make_pds_small(0).unwrap();
        let Method::Pds(pds) = &p.method else { panic!() };
        assert!(2.0 * pds.params().eta * pds.params().beta > 1.0);
        assert!(p.primal_reference.is_some());
    }

    #[test]
    fn reference_for_gd_is_zero() {
        let p = make_quadratic_gd(0.8, 1.0, 3, 1.0).unwrap();
        let r = reference_solution(&p, REFERENCE_TOL, 1).unwrap();
        assert!(r.anchor(&p.z0).norm() < 1e-9);
    }
}
