//! Nonexpansive and averaged operators, their algebra, and sampling checks.
//!
//! An [`OperatorSpec`] couples a map on a product space with its certified
//! class. The combinators ([`relax`], [`compose2`], [`combine`]) propagate the
//! averagedness constant. Maximal monotone building blocks live in
//! [`Monotone`] and cocoercive ones in [`Cocoercive`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::spaces::{Metric, Point, ProductPoint, Shape};

/// Relative tolerance of the sampling checks.
pub const SAMPLING_TOL: f64 = 1e-10;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_RADIUS: f64 = 10.0;
/// Relative residual allowed for inner linear solves.
pub const SOLVE_TOL: f64 = 1e-10;
/// Relative tolerance of exact membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

pub type ProductMap = Arc<dyn Fn(&ProductPoint) -> Result<ProductPoint> + Send + Sync>;
pub type PointMap = Arc<dyn Fn(&Point) -> Result<Point> + Send + Sync>;

/// Certified class of an operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Averagedness {
    Nonexpansive,
    /// `alpha`-averaged with `alpha` in `(0, 1)`.
    Averaged(f64),
    /// No certificate, e.g. a residual map `Id - T`.
    Uncertified,
}

impl Averagedness {
    pub fn averaged(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!("averagedness constant {alpha} not in (0,1)")));
        }
        Ok(Averagedness::Averaged(alpha))
    }

    /// `alpha`, with 1 for plain nonexpansive maps.
    pub fn alpha(&self) -> Option<f64> {
        match *self {
            Averagedness::Nonexpansive => Some(1.0),
            Averagedness::Averaged(a) => Some(a),
            Averagedness::Uncertified => None,
        }
    }

    /// Supremum of admissible relaxation parameters, `1/alpha`.
    pub fn relaxation_limit(&self) -> Option<f64> {
        self.alpha().map(|a| 1.0 / a)
    }

    pub fn is_certified(&self) -> bool {
        !matches!(self, Averagedness::Uncertified)
    }
}

impl fmt::Display for Averagedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Averagedness::Nonexpansive => write!(f, "nonexpansive"),
            Averagedness::Averaged(a) => write!(f, "{a}-averaged"),
            Averagedness::Uncertified => write!(f, "uncertified"),
        }
    }
}

/// A map on a product space together with its certified class.
#[derive(Clone)]
pub struct OperatorSpec {
    label: String,
    shape: Shape,
    class: Averagedness,
    metric: Metric,
    map: ProductMap,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("label", &self.label)
            .field("dims", &self.shape.dims)
            .field("class", &self.class)
            .field("metric", &self.metric)
            .finish()
    }
}

impl OperatorSpec {
    pub fn new(
        label: impl Into<String>,
        shape: Shape,
        class: Averagedness,
        map: impl Fn(&ProductPoint) -> Result<ProductPoint> + Send + Sync + 'static,
    ) -> Self {
        OperatorSpec { label: label.into(), shape, class, metric: Metric::Product, map: Arc::new(map) }
    }

    /// Lifts a map on `R^d` to the one-block product space.
    pub fn from_point_map(
        label: impl Into<String>,
        d: usize,
        class: Averagedness,
        map: impl Fn(&Point) -> Result<Point> + Send + Sync + 'static,
    ) -> Self {
        Self::new(label, Shape::single(d), class, move |z| {
            Ok(ProductPoint::single(map(z.block(0))?))
        })
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn class(&self) -> Averagedness {
        self.class
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn apply(&self, z: &ProductPoint) -> Result<ProductPoint> {
        self.shape.check(z)?;
        (self.map)(z)
    }

    pub fn identity(shape: Shape) -> Self {
        OperatorSpec::new("Id", shape, Averagedness::Averaged(0.5), |z| Ok(z.clone()))
    }

    /// The constant map onto the origin.
    pub fn zero(shape: Shape) -> Self {
        let zero = shape.zeros();
        OperatorSpec::new("0", shape, Averagedness::Nonexpansive, move |_| Ok(zero.clone()))
    }
}

/// `alpha` of `T1 T2` for `alpha_i`-averaged factors.
pub fn composition_alpha(a1: f64, a2: f64) -> f64 {
    (a1 + a2 - 2.0 * a1 * a2) / (1.0 - a1 * a2)
}

/// The n-ary constant `n / (n - 1 + 1/max alpha_i)`.
///
/// Looser than folding [`composition_alpha`]; exposed for comparison only.
pub fn composition_alpha_nary(alphas: &[f64]) -> f64 {
    let n = alphas.len() as f64;
    let amax = alphas.iter().copied().fold(0.0, f64::max);
    n / (n - 1.0 + 1.0 / amax)
}

fn same_space(a: &OperatorSpec, b: &OperatorSpec) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Structure(format!(
            "operators '{}' and '{}' act on different spaces",
            a.label, b.label
        )));
    }
    Ok(())
}

/// `T_lambda = lambda T + (1 - lambda) Id`.
pub fn relax(t: &OperatorSpec, lambda: f64) -> Result<OperatorSpec> {
    let class = match t.class {
        Averagedness::Uncertified if lambda > 0.0 => Averagedness::Uncertified,
        Averagedness::Uncertified => {
            return Err(Error::Parameter(format!("relaxation {lambda} must be positive")))
        }
        c => {
            let a = c.alpha().unwrap();
            if !(lambda > 0.0 && lambda * a < 1.0) {
                return Err(Error::Parameter(format!(
                    "relaxation {lambda} outside (0, {})",
                    1.0 / a
                )));
            }
            Averagedness::Averaged(lambda * a)
        }
    };
    let inner = t.clone();
    Ok(OperatorSpec::new(format!("relax({}, {lambda})", t.label), t.shape.clone(), class, move |z| {
        let tz = inner.apply(z)?;
        Ok(&(&tz * lambda) + &(z * (1.0 - lambda)))
    })
    .with_metric(t.metric.clone()))
}

/// `T1 T2`, certified through [`composition_alpha`].
pub fn compose2(t1: &OperatorSpec, t2: &OperatorSpec) -> Result<OperatorSpec> {
    same_space(t1, t2)?;
    let class = match (t1.class, t2.class) {
        (Averagedness::Averaged(a1), Averagedness::Averaged(a2)) => {
            Averagedness::Averaged(composition_alpha(a1, a2))
        }
        (Averagedness::Uncertified, _) | (_, Averagedness::Uncertified) => Averagedness::Uncertified,
        _ => Averagedness::Nonexpansive,
    };
    let (a, b) = (t1.clone(), t2.clone());
    Ok(OperatorSpec::new(format!("{} o {}", t1.label, t2.label), t1.shape.clone(), class, move |z| {
        a.apply(&b.apply(z)?)
    })
    .with_metric(t1.metric.clone()))
}

/// Left fold of [`compose2`]: `T1 (T2 (... Tn))`.
pub fn compose(ops: &[OperatorSpec]) -> Result<OperatorSpec> {
    let (last, rest) = ops
        .split_last()
        .ok_or_else(|| Error::Structure("empty composition".into()))?;
    rest.iter().rev().try_fold(last.clone(), |acc, t| compose2(t, &acc))
}

/// Convex combination `sum_i w_i T_i`, certified with `max alpha_i`.
pub fn combine(ops: &[OperatorSpec], weights: &[f64]) -> Result<OperatorSpec> {
    if ops.is_empty() || ops.len() != weights.len() {
        return Err(Error::Structure("combination needs one weight per operator".into()));
    }
    for t in &ops[1..] {
        same_space(&ops[0], t)?;
    }
    if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter("combination weights must be positive and sum to 1".into()));
    }
    let mut class = Averagedness::Averaged(0.0);
    for t in ops {
        class = match (class, t.class) {
            (Averagedness::Uncertified, _) | (_, Averagedness::Uncertified) => Averagedness::Uncertified,
            (Averagedness::Nonexpansive, _) | (_, Averagedness::Nonexpansive) => Averagedness::Nonexpansive,
            (Averagedness::Averaged(a), Averagedness::Averaged(b)) => Averagedness::Averaged(a.max(b)),
        };
    }
    let ops_c: Vec<OperatorSpec> = ops.to_vec();
    let w: Vec<f64> = weights.to_vec();
    let shape = ops[0].shape.clone();
    let label = format!("combine[{}]", ops.iter().map(|t| t.label.as_str()).collect::<Vec<_>>().join(", "));
    Ok(OperatorSpec::new(label, shape.clone(), class, move |z| {
        let mut acc = shape.zeros();
        for (t, wi) in ops_c.iter().zip(&w) {
            acc = acc.axpy(*wi, &t.apply(z)?);
        }
        Ok(acc)
    })
    .with_metric(ops[0].metric.clone()))
}

/// `T' = Id - T` and the firmly nonexpansive `(1/(2 alpha)) (Id - T)`.
#[derive(Clone, Debug)]
pub struct ResidualPair {
    pub residual: OperatorSpec,
    pub scaled: OperatorSpec,
}

pub fn residual(t: &OperatorSpec) -> Result<ResidualPair> {
    let a = t
        .class
        .alpha()
        .ok_or_else(|| Error::Parameter(format!("'{}' carries no averagedness certificate", t.label)))?;
    let class = if a <= 0.5 { Averagedness::Nonexpansive } else { Averagedness::Uncertified };
    let inner = t.clone();
    let res = OperatorSpec::new(format!("Id - {}", t.label), t.shape.clone(), class, move |z| {
        Ok(z - &inner.apply(z)?)
    })
    .with_metric(t.metric.clone());
    let r2 = res.clone();
    let c = 1.0 / (2.0 * a);
    let scaled = OperatorSpec::new(
        format!("(Id - {})/(2*{a})", t.label),
        t.shape.clone(),
        Averagedness::Averaged(0.5),
        move |z| Ok(&r2.apply(z)? * c),
    )
    .with_metric(t.metric.clone());
    Ok(ResidualPair { residual: res, scaled })
}

/// Soft thresholding, the proximity operator of `t ||.||_1`.
pub fn prox_l1(x: &Point, t: f64) -> Point {
    x.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

/// Componentwise clipping to `[lo, hi]`.
pub fn project_box(x: &Point, lo: &[f64], hi: &[f64]) -> Point {
    let mut v = x.vector().clone();
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
    Point::raw(v)
}

/// Gradient of the Moreau envelope of `mu ||.||_1`, `x - prox(x, mu)`.
///
/// 1-cocoercive.
pub fn moreau_envelope_gradient(x: &Point, mu: f64) -> Point {
    x - &prox_l1(x, mu)
}

/// Orthonormal basis of a subspace of `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    q: DMatrix<f64>,
}

impl Basis {
    /// Columns must be orthonormal to `1e-10`.
    pub fn new(columns: &[Point]) -> Result<Self> {
        let d = columns.first().ok_or_else(|| Error::Structure("empty basis".into()))?.dim();
        if columns.iter().any(|c| c.dim() != d) {
            return Err(Error::Structure("basis vectors of unequal dimension".into()));
        }
        let q = DMatrix::from_columns(&columns.iter().map(|c| c.vector().clone()).collect::<Vec<_>>());
        let gram = q.transpose() * &q;
        let err = (gram - DMatrix::identity(columns.len(), columns.len())).amax();
        if err > 1e-10 {
            return Err(Error::Parameter(format!("basis not orthonormal (deviation {err:e})")));
        }
        Ok(Basis { q })
    }

    pub fn ambient_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// Orthogonal projection `Q Q^T x`.
pub fn project_subspace(x: &Point, basis: &Basis) -> Point {
    Point::raw(&basis.q * (basis.q.transpose() * x.vector()))
}

/// `f(x) = 1/2 <x, H x> - <b, x>` with `H` symmetric positive semidefinite.
#[derive(Clone, Debug)]
pub struct QuadraticFn {
    h: DMatrix<f64>,
    b: DVector<f64>,
    delta_min: f64,
    delta_max: f64,
}

impl QuadraticFn {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || b.len() != d || d == 0 {
            return Err(Error::Structure("quadratic needs square H and matching b".into()));
        }
        let scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Parameter("H is not symmetric".into()));
        }
        let eig = h.clone().symmetric_eigen().eigenvalues;
        let delta_min = eig.min();
        let delta_max = eig.max();
        if delta_min < -1e-12 * scale {
            return Err(Error::Parameter(format!("H has negative eigenvalue {delta_min:e}")));
        }
        if !(delta_max > 0.0) {
            return Err(Error::Parameter("H is zero".into()));
        }
        Ok(QuadraticFn { h, b, delta_min: delta_min.max(0.0), delta_max })
    }

    pub fn diagonal(diag: &[f64], b: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
            DVector::from_column_slice(b),
        )
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }

    /// Smallest and largest eigenvalue of `H`.
    pub fn spectrum_bounds(&self) -> (f64, f64) {
        (self.delta_min, self.delta_max)
    }

    /// Cocoercivity constant of the gradient, `1 / delta_max`.
    pub fn beta(&self) -> f64 {
        1.0 / self.delta_max
    }

    pub fn value(&self, x: &Point) -> f64 {
        0.5 * x.vector().dot(&(&self.h * x.vector())) - self.b.dot(x.vector())
    }

    pub fn gradient(&self, x: &Point) -> Point {
        Point::raw(&self.h * x.vector() - &self.b)
    }
}

/// `Id - gamma grad f`, `(gamma delta_max / 2)`-averaged for `gamma < 2 / delta_max`.
pub fn gradient_step(f: &QuadraticFn, gamma: f64) -> Result<OperatorSpec> {
    let limit = 2.0 * f.beta();
    if !(gamma > 0.0 && gamma < limit) {
        return Err(Error::Parameter(format!("step {gamma} outside (0, {limit})")));
    }
    let alpha = gamma * f.delta_max / 2.0;
    let f = f.clone();
    Ok(OperatorSpec::from_point_map(
        format!("Id - {gamma} grad f"),
        f.dim(),
        Averagedness::Averaged(alpha),
        move |x| Ok(x.axpy(-gamma, &f.gradient(x))),
    ))
}

/// A square monotone matrix, `<x, M x> >= 0` for all `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMonotone {
    m: DMatrix<f64>,
}

impl LinearMonotone {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Structure("linear operator must be square".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let lo = sym.symmetric_eigen().eigenvalues.min();
        if lo < -1e-12 * m.amax().max(1.0) {
            return Err(Error::Parameter(format!("matrix not monotone (symmetric part eigenvalue {lo:e})")));
        }
        Ok(LinearMonotone { m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `(I + gamma M)^{-1}` with the factorization done once.
    pub fn resolvent_map(&self, gamma: f64) -> Result<PointMap> {
        let d = self.m.nrows();
        let sys = DMatrix::identity(d, d) + &self.m * gamma;
        let lu = sys.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::numerical("singular resolvent system"));
        }
        Ok(Arc::new(move |x: &Point| {
            if x.dim() != d {
                return Err(Error::Structure(format!("resolvent of size {d} applied to dim {}", x.dim())));
            }
            let y = lu.solve(x.vector()).ok_or_else(|| Error::numerical("resolvent solve failed"))?;
            let res = (&sys * &y - x.vector()).norm();
            if !(res <= SOLVE_TOL * x.norm().max(1.0)) {
                return Err(Error::numerical(format!("resolvent solve residual {res:e}")));
            }
            Ok(Point::raw(y))
        }))
    }
}

/// `(I + gamma A)^{-1}` for a monotone matrix, firmly nonexpansive.
pub fn resolvent_linear(a: &LinearMonotone, gamma: f64) -> Result<OperatorSpec> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("resolvent step {gamma} must be positive")));
    }
    let j = a.resolvent_map(gamma)?;
    Ok(OperatorSpec::from_point_map(
        format!("J_{gamma}A"),
        a.m.nrows(),
        Averagedness::Averaged(0.5),
        move |x| j(x),
    ))
}

/// Outcome of checking `g in A u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Membership {
    Verified { residual: f64 },
    Violated { residual: f64 },
    /// The operator has no closed-form graph test.
    StructuralOnly,
}

impl Membership {
    fn from_residual(residual: f64) -> Self {
        if residual <= MEMBERSHIP_TOL {
            Membership::Verified { residual }
        } else {
            Membership::Violated { residual }
        }
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Membership::Violated { .. })
    }

    /// Combines block checks: any violation wins, then any structural-only.
    pub fn all(items: impl IntoIterator<Item = Membership>) -> Membership {
        let mut out = Membership::Verified { residual: 0.0 };
        for m in items {
            out = match (out, m) {
                (Membership::Violated { residual: a }, Membership::Violated { residual: b }) => {
                    Membership::Violated { residual: a.max(b) }
                }
                (v @ Membership::Violated { .. }, _) | (_, v @ Membership::Violated { .. }) => v,
                (Membership::StructuralOnly, _) | (_, Membership::StructuralOnly) => Membership::StructuralOnly,
                (Membership::Verified { residual: a }, Membership::Verified { residual: b }) => {
                    Membership::Verified { residual: a.max(b) }
                }
            };
        }
        out
    }
}

type CustomResolvent = Arc<dyn Fn(&Point, f64) -> Result<Point> + Send + Sync>;

/// Maximal monotone operators with closed-form resolvents.
#[derive(Clone)]
pub enum Monotone {
    Zero,
    /// `mu d||.||_1`.
    L1 { mu: f64 },
    /// The normal cone of `[lo, hi]`.
    BoxCone { lo: Vec<f64>, hi: Vec<f64> },
    /// The normal cone of a subspace.
    SubspaceCone(Basis),
    Linear(LinearMonotone),
    /// A user resolvent `(x, gamma) -> J_{gamma A} x`; membership cannot be tested.
    Custom { label: String, resolvent: CustomResolvent },
}

impl fmt::Debug for Monotone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl Monotone {
    pub fn l1(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::Parameter(format!("l1 weight {mu} must be nonnegative")));
        }
        Ok(Monotone::L1 { mu })
    }

    pub fn box_cone(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Structure("box bounds of unequal length".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::Parameter("box with lo > hi".into()));
        }
        Ok(Monotone::BoxCone { lo, hi })
    }

    pub fn label(&self) -> String {
        match self {
            Monotone::Zero => "0".into(),
            Monotone::L1 { mu } => format!("{mu}*d|.|_1"),
            Monotone::BoxCone { .. } => "N_box".into(),
            Monotone::SubspaceCone(b) => format!("N_subspace(rank {})", b.rank()),
            Monotone::Linear(_) => "linear".into(),
            Monotone::Custom { label, .. } => label.clone(),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let need = match self {
            Monotone::BoxCone { lo, .. } => Some(lo.len()),
            Monotone::SubspaceCone(b) => Some(b.ambient_dim()),
            Monotone::Linear(m) => Some(m.m.nrows()),
            _ => None,
        };
        match need {
            Some(n) if n != d => Err(Error::Structure(format!("{} acts on R^{n}, got R^{d}", self.label()))),
            _ => Ok(()),
        }
    }

    /// `J_{gamma A}` as a reusable map.
    pub fn resolvent_map(&self, gamma: f64) -> Result<PointMap> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("resolvent step {gamma} must be positive")));
        }
        let this = self.clone();
        Ok(match self {
            Monotone::Linear(m) => m.resolvent_map(gamma)?,
            Monotone::Custom { resolvent, .. } => {
                let r = resolvent.clone();
                Arc::new(move |x: &Point| r(x, gamma))
            }
            _ => Arc::new(move |x: &Point| {
                this.check_dim(x.dim())?;
                Ok(match &this {
                    Monotone::Zero => x.clone(),
                    Monotone::L1 { mu } => prox_l1(x, gamma * mu),
                    Monotone::BoxCone { lo, hi } => project_box(x, lo, hi),
                    Monotone::SubspaceCone(b) => project_subspace(x, b),
                    _ => unreachable!(),
                })
            }),
        })
    }

    pub fn resolvent(&self, x: &Point, gamma: f64) -> Result<Point> {
        self.resolvent_map(gamma)?(x)
    }

    /// `J_{sigma A^{-1}} v = v - sigma J_{A/sigma}(v / sigma)`.
    pub fn inverse_resolvent_map(&self, sigma: f64) -> Result<PointMap> {
        let j = self.resolvent_map(1.0 / sigma)?;
        Ok(Arc::new(move |v: &Point| Ok(&*v - &(&j(&(v * (1.0 / sigma)))? * sigma))))
    }

    /// Tests `g in A u` with relative tolerance [`MEMBERSHIP_TOL`].
    pub fn membership(&self, u: &Point, g: &Point) -> Membership {
        if u.dim() != g.dim() || self.check_dim(u.dim()).is_err() {
            return Membership::Violated { residual: f64::INFINITY };
        }
        let scale = 1.0 + g.norm_inf();
        let r = match self {
            Monotone::Zero => g.norm_inf(),
            Monotone::L1 { mu } => u
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(&ui, &gi)| if ui != 0.0 { (gi - mu * ui.signum()).abs() } else { (gi.abs() - mu).max(0.0) })
                .fold(0.0, f64::max),
            Monotone::BoxCone { lo, hi } => {
                let mut r: f64 = 0.0;
                for i in 0..u.dim() {
                    let (ui, gi) = (u.as_slice()[i], g.as_slice()[i]);
                    let out = (lo[i] - ui).max(ui - hi[i]).max(0.0);
                    let viol = if lo[i] == hi[i] && ui == lo[i] {
                        0.0
                    } else if ui == lo[i] {
                        gi.max(0.0)
                    } else if ui == hi[i] {
                        (-gi).max(0.0)
                    } else {
                        gi.abs()
                    };
                    r = r.max(out).max(viol);
                }
                r
            }
            Monotone::SubspaceCone(b) => {
                let off = (u - &project_subspace(u, b)).norm_inf() / (1.0 + u.norm_inf());
                let tang = (b.q.transpose() * g.vector()).amax();
                off.max(tang)
            }
            Monotone::Linear(m) => {
                let mu = &m.m * u.vector();
                (g.vector() - &mu).amax() / (1.0 + mu.amax())
            }
            Monotone::Custom { .. } => return Membership::StructuralOnly,
        };
        Membership::from_residual(r / scale)
    }
}

type CustomCocoercive = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

/// Single-valued cocoercive operators.
#[derive(Clone)]
pub enum Cocoercive {
    Zero,
    Quadratic(QuadraticFn),
    /// Gradient of the Moreau envelope of `mu ||.||_1`, `beta = 1`.
    MoreauL1 { mu: f64 },
    Custom { label: String, beta: f64, map: CustomCocoercive },
}

impl fmt::Debug for Cocoercive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cocoercive::Zero => write!(f, "0"),
            Cocoercive::Quadratic(q) => write!(f, "grad quadratic (dim {})", q.dim()),
            Cocoercive::MoreauL1 { mu } => write!(f, "grad env {mu}|.|_1"),
            Cocoercive::Custom { label, .. } => write!(f, "{label}"),
        }
    }
}

impl Cocoercive {
    /// Cocoercivity constant; infinite for the zero map.
    pub fn beta(&self) -> f64 {
        match self {
            Cocoercive::Zero => f64::INFINITY,
            Cocoercive::Quadratic(q) => q.beta(),
            Cocoercive::MoreauL1 { .. } => 1.0,
            Cocoercive::Custom { beta, .. } => *beta,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Cocoercive::Zero)
    }

    pub fn apply(&self, x: &Point) -> Point {
        match self {
            Cocoercive::Zero => Point::zeros(x.dim()),
            Cocoercive::Quadratic(q) => q.gradient(x),
            Cocoercive::MoreauL1 { mu } => moreau_envelope_gradient(x, *mu),
            Cocoercive::Custom { map, .. } => map(x),
        }
    }
}

/// Result of a sampling check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingReport {
    pub samples: usize,
    /// Largest relative violation over the sampled pairs.
    pub max_violation: f64,
    pub passed: bool,
}

fn sample_pairs(
    t: &OperatorSpec,
    samples: usize,
    radius: f64,
    seed: u64,
    mut score: impl FnMut(&ProductPoint, &ProductPoint, &ProductPoint, &ProductPoint) -> f64,
) -> Result<SamplingReport> {
    if samples == 0 || !(radius > 0.0) {
        return Err(Error::Parameter("sampling needs samples > 0 and radius > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = t.shape.sample_ball(radius, &mut rng);
        let y = t.shape.sample_ball(radius, &mut rng);
        let (tx, ty) = (t.apply(&x)?, t.apply(&y)?);
        worst = worst.max(score(&x, &y, &tx, &ty));
    }
    Ok(SamplingReport { samples, max_violation: worst, passed: worst <= SAMPLING_TOL })
}

/// `||Tx - Ty||^2 <= <Tx - Ty, x - y>` on random pairs, in the operator's metric.
pub fn check_firmly_nonexpansive(t: &OperatorSpec, samples: usize, radius: f64, seed: u64) -> Result<SamplingReport> {
    let m = t.metric.clone();
    sample_pairs(t, samples, radius, seed, |x, y, tx, ty| {
        let dx = x - y;
        let dt = tx - ty;
        let n2 = m.inner(&dx, &dx);
        if n2 == 0.0 {
            return 0.0;
        }
        (m.inner(&dt, &dt) - m.inner(&dt, &dx)) / n2
    })
}

/// `||Tx - Ty|| <= ||x - y||` on random pairs.
pub fn check_nonexpansive(t: &OperatorSpec, samples: usize, radius: f64, seed: u64) -> Result<SamplingReport> {
    let m = t.metric.clone();
    sample_pairs(t, samples, radius, seed, |x, y, tx, ty| {
        let n = m.norm(&(x - y));
        if n == 0.0 {
            return 0.0;
        }
        (m.norm(&(tx - ty)) - n) / n
    })
}

/// Nonexpansiveness of `R = (T - (1 - alpha) Id) / alpha` on random pairs.
pub fn check_averaged(t: &OperatorSpec, alpha: f64, samples: usize, radius: f64, seed: u64) -> Result<SamplingReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("averagedness constant {alpha} not in (0,1]")));
    }
    let m = t.metric.clone();
    sample_pairs(t, samples, radius, seed, |x, y, tx, ty| {
        let dx = x - y;
        let n = m.norm(&dx);
        if n == 0.0 {
            return 0.0;
        }
        let dr = &(&(tx - ty) - &(&dx * (1.0 - alpha))) * (1.0 / alpha);
        (m.norm(&dr) - n) / n
    })
}

/// Sampling check of the operator's own certificate.
pub fn check_certified(t: &OperatorSpec, samples: usize, radius: f64, seed: u64) -> Result<SamplingReport> {
    match t.class.alpha() {
        Some(a) => check_averaged(t, a, samples, radius, seed),
        None => Err(Error::Unavailable(format!("'{}' carries no certificate to check", t.label))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    #[test]
    fn prox_l1_example() {
        assert_eq!(prox_l1(&p(&[3.0, -0.5, 1.0]), 1.0).as_slice(), &[2.0, 0.0, 0.0]);
    }

    #[test]
    fn projections_fix_their_sets() {
        let lo = [-1.0, 0.0];
        let hi = [1.0, 2.0];
        let x = p(&[0.5, 1.5]);
        assert_eq!(project_box(&x, &lo, &hi), x);
        assert_eq!(project_box(&p(&[-3.0, 5.0]), &lo, &hi).as_slice(), &[-1.0, 2.0]);
        let b = Basis::new(&[p(&[1.0, 0.0])]).unwrap();
        assert_eq!(project_subspace(&p(&[2.0, 3.0]), &b).as_slice(), &[2.0, 0.0]);
        assert!(Basis::new(&[p(&[1.0, 1.0])]).is_err());
    }

    #[test]
    fn composition_constant_examples() {
        assert!((composition_alpha(0.5, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        // the n-ary alternative is never tighter than the pairwise fold
        let a = [0.3, 0.6, 0.45];
        let fold = composition_alpha(a[0], composition_alpha(a[1], a[2]));
        assert!(fold <= composition_alpha_nary(&a) + 1e-15);
    }

    #[test]
    fn relax_scales_alpha() {
        let t = OperatorSpec::identity(Shape::single(2));
        let r = relax(&t, 1.0).unwrap();
        assert_eq!(r.class(), Averagedness::Averaged(0.5));
        let z = ProductPoint::single(p(&[1.0, -2.0]));
        assert_eq!(r.apply(&z).unwrap(), z);
        assert!(relax(&t, 2.0).is_err());
        assert!(relax(&t, 0.0).is_err());
    }

    #[test]
    fn doubling_is_not_firmly_nonexpansive() {
        let t = OperatorSpec::from_point_map("2Id", 3, Averagedness::Uncertified, |x| Ok(x * 2.0));
        let rep = check_firmly_nonexpansive(&t, 200, 10.0, 1).unwrap();
        assert!(!rep.passed && rep.max_violation > 0.0);
    }

    #[test]
    fn gradient_step_alpha_is_tight() {
        let f = QuadraticFn::diagonal(&[0.8, 1.0], &[0.0, 0.0]).unwrap();
        let t = gradient_step(&f, 0.5).unwrap();
        assert_eq!(t.class(), Averagedness::Averaged(0.25));
        assert!(check_averaged(&t, 0.25, 1000, 10.0, 5).unwrap().passed);
        assert!(!check_averaged(&t, 0.2, 1000, 10.0, 5).unwrap().passed);
        assert!(gradient_step(&f, 2.0).is_err());
    }

    #[test]
    fn quadratic_rejects_indefinite() {
        assert!(QuadraticFn::diagonal(&[1.0, -0.5], &[0.0, 0.0]).is_err());
        assert!(QuadraticFn::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), DVector::zeros(2)).is_err());
    }

    #[test]
    fn linear_resolvent_firm() {
        let m = LinearMonotone::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 0.5])).unwrap();
        let j = resolvent_linear(&m, 0.7).unwrap();
        assert!(check_firmly_nonexpansive(&j, 500, 10.0, 2).unwrap().passed);
        assert!(LinearMonotone::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn residual_pair_classes() {
        let f = QuadraticFn::diagonal(&[0.8, 1.0], &[0.0, 0.0]).unwrap();
        let t = gradient_step(&f, 1.5).unwrap();
        let pair = residual(&t).unwrap();
        assert_eq!(pair.residual.class(), Averagedness::Uncertified);
        assert!(check_firmly_nonexpansive(&pair.scaled, 500, 10.0, 3).unwrap().passed);
    }

    #[test]
    fn combine_and_compose_certified() {
        let f = QuadraticFn::diagonal(&[0.2, 1.0, 0.6], &[1.0, 0.0, -1.0]).unwrap();
        let g = gradient_step(&f, 1.2).unwrap();
        let l1 = Monotone::l1(0.3).unwrap().resolvent_map(1.0).unwrap();
        let j = OperatorSpec::from_point_map("prox", 3, Averagedness::Averaged(0.5), move |x| l1(x));
        let c = compose2(&j, &g).unwrap();
        let want = composition_alpha(0.5, 0.6);
        assert_eq!(c.class(), Averagedness::Averaged(want));
        assert!(check_certified(&c, 500, 10.0, 4).unwrap().passed);
        let m = combine(&[j.clone(), g.clone()], &[0.3, 0.7]).unwrap();
        assert_eq!(m.class(), Averagedness::Averaged(0.6));
        assert!(check_certified(&m, 500, 10.0, 4).unwrap().passed);
        assert!(combine(&[j, g], &[0.3, 0.6]).is_err());
    }

    #[test]
    fn memberships() {
        let a = Monotone::l1(1.0).unwrap();
        let x = p(&[3.0, -0.5, 1.0]);
        let u = a.resolvent(&x, 1.0).unwrap();
        assert!(matches!(a.membership(&u, &(&x - &u)), Membership::Verified { .. }));
        assert!(a.membership(&u, &p(&[0.0, 0.0, 0.0])).is_violated());

        let bx = Monotone::box_cone(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let x = p(&[2.0, 0.3]);
        let u = bx.resolvent(&x, 1.0).unwrap();
        assert!(matches!(bx.membership(&u, &(&x - &u)), Membership::Verified { .. }));
        assert!(bx.membership(&u, &p(&[-1.0, 0.0])).is_violated());

        let c = Monotone::Custom { label: "c".into(), resolvent: Arc::new(|x, _| Ok(x.clone())) };
        assert_eq!(c.membership(&x, &x), Membership::StructuralOnly);
    }

    #[test]
    fn moreau_identity() {
        let a = Monotone::l1(0.4).unwrap();
        let j = a.inverse_resolvent_map(2.0).unwrap();
        // J_{sigma (mu|.|_1)^*} is the projection onto [-mu, mu]
        let v = p(&[3.0, -0.1, -7.0]);
        let got = j(&v).unwrap();
        for (g, w) in got.as_slice().iter().zip([0.4, -0.1, -0.4]) {
            assert!((g - w).abs() < 1e-15);
        }
    }
}
