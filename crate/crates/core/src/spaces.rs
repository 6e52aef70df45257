//! Points in a finite-dimensional Hilbert space and in weighted product spaces.
//!
//! [`Point`] is a vector of `R^d`. [`ProductPoint`] is an element of `H^n` with
//! inner product `<x, y> = sum_i w_i <x_i, y_i>`. Blocks may have different
//! dimensions (the primal–dual space needs that); diagonal operations require
//! equal dimensions and weights summing to one.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on `sum w_i = 1` for diagonal projections.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A finite vector of `R^d`, `d >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(DVector<f64>);

impl Point {
    /// Builds a point, rejecting empty or non-finite input.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(coords))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Structure("point of dimension zero".into()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::numerical("non-finite coordinate"));
        }
        Ok(Point(v))
    }

    /// Unchecked constructor for values produced by arithmetic.
    pub(crate) fn raw(v: DVector<f64>) -> Self {
        Point(v)
    }

    pub fn zeros(d: usize) -> Self {
        Point(DVector::zeros(d))
    }

    /// The `i`-th canonical basis vector of `R^d`.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        Point(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.amax()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `self + a * x`.
    pub fn axpy(&self, a: f64, x: &Point) -> Point {
        Point(&self.0 + &x.0 * a)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Point {
        Point(self.0.map(f))
    }

    pub fn zip_map(&self, other: &Point, f: impl Fn(f64, f64) -> f64) -> Point {
        Point(self.0.zip_map(&other.0, f))
    }
}

impl Add for &Point {
    type Output = Point;
    fn add(self, rhs: &Point) -> Point {
        Point(&self.0 + &rhs.0)
    }
}

impl Sub for &Point {
    type Output = Point;
    fn sub(self, rhs: &Point) -> Point {
        Point(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point(&self.0 * rhs)
    }
}

impl Neg for &Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point(-&self.0)
    }
}

/// Positive block weights, shared between points of one space.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights(Arc<[f64]>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Structure("empty weight vector".into()));
        }
        if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Parameter("weights must be positive and finite".into()));
        }
        Ok(Weights(w.into()))
    }

    pub fn uniform(n: usize) -> Self {
        Weights(vec![1.0 / n as f64; n].into())
    }

    pub fn one() -> Self {
        Weights(vec![1.0].into())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn sums_to_one(&self) -> bool {
        (self.0.iter().sum::<f64>() - 1.0).abs() <= WEIGHT_SUM_TOL
    }
}

/// Block dimensions and weights of a product space.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub dims: Vec<usize>,
    pub weights: Weights,
}

impl Shape {
    pub fn new(dims: Vec<usize>, weights: Weights) -> Result<Self> {
        if dims.len() != weights.len() {
            return Err(Error::Structure(format!(
                "{} blocks but {} weights",
                dims.len(),
                weights.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Structure("block of dimension zero".into()));
        }
        Ok(Shape { dims, weights })
    }

    /// `R^d` seen as a product with one block of weight one.
    pub fn single(d: usize) -> Self {
        Shape { dims: vec![d], weights: Weights::one() }
    }

    /// `H^n` with equal block dimension.
    pub fn diagonal(d: usize, weights: Weights) -> Self {
        Shape { dims: vec![d; weights.len()], weights }
    }

    pub fn n_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn zeros(&self) -> ProductPoint {
        ProductPoint {
            blocks: self.dims.iter().map(|&d| Point::zeros(d)).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn check(&self, z: &ProductPoint) -> Result<()> {
        if z.weights != self.weights || z.blocks.iter().map(Point::dim).ne(self.dims.iter().copied()) {
            return Err(Error::Structure(format!(
                "point with block dims {:?} does not fit space with dims {:?}",
                z.blocks.iter().map(Point::dim).collect::<Vec<_>>(),
                self.dims
            )));
        }
        Ok(())
    }

    /// Rebuilds a point from flat coordinates in block order.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ProductPoint> {
        if flat.len() != self.total_dim() {
            return Err(Error::Structure(format!(
                "{} coordinates for a space of dimension {}",
                flat.len(),
                self.total_dim()
            )));
        }
        let mut off = 0;
        let blocks = self
            .dims
            .iter()
            .map(|&d| {
                let p = Point::raw(DVector::from_column_slice(&flat[off..off + d]));
                off += d;
                p
            })
            .collect();
        Ok(ProductPoint { blocks, weights: self.weights.clone() })
    }

    /// Standard Gaussian coordinates.
    pub fn gaussian<R: Rng>(&self, rng: &mut R) -> ProductPoint {
        let flat: Vec<f64> = (0..self.total_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.unflatten(&flat).expect("length matches")
    }

    /// Uniform sample in the Euclidean ball of the flat coordinates.
    pub fn sample_ball<R: Rng>(&self, radius: f64, rng: &mut R) -> ProductPoint {
        let g = self.gaussian(rng);
        let n = g.flat_norm();
        let u: f64 = rng.gen::<f64>();
        let r = radius * u.powf(1.0 / self.total_dim() as f64);
        if n == 0.0 {
            return self.zeros();
        }
        &g * (r / n)
    }
}

/// An element of a weighted product space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPoint {
    blocks: Vec<Point>,
    weights: Weights,
}

impl ProductPoint {
    pub fn new(blocks: Vec<Point>, weights: Weights) -> Result<Self> {
        if blocks.len() != weights.len() {
            return Err(Error::Structure(format!(
                "{} blocks but {} weights",
                blocks.len(),
                weights.len()
            )));
        }
        Ok(ProductPoint { blocks, weights })
    }

    pub fn single(p: Point) -> Self {
        ProductPoint { blocks: vec![p], weights: Weights::one() }
    }

    /// The diagonal embedding `C(x) = (x, ..., x)`.
    pub fn lift(x: &Point, weights: &Weights) -> Self {
        ProductPoint { blocks: vec![x.clone(); weights.len()], weights: weights.clone() }
    }

    pub(crate) fn with_blocks(&self, blocks: Vec<Point>) -> Self {
        debug_assert_eq!(blocks.len(), self.blocks.len());
        ProductPoint { blocks, weights: self.weights.clone() }
    }

    pub fn blocks(&self) -> &[Point] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &Point {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<Point> {
        self.blocks
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn shape(&self) -> Shape {
        Shape { dims: self.blocks.iter().map(Point::dim).collect(), weights: self.weights.clone() }
    }

    /// Weighted inner product.
    pub fn inner(&self, other: &ProductPoint) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .zip(self.weights.as_slice())
            .map(|((a, b), w)| w * a.dot(b))
            .sum()
    }

    /// The norm induced by [`ProductPoint::inner`].
    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Unweighted Euclidean norm of the flat coordinates, used for sampling.
    pub fn flat_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.dot(b)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(Point::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }

    /// `self + a * x`.
    pub fn axpy(&self, a: f64, x: &ProductPoint) -> ProductPoint {
        self.with_blocks(self.blocks.iter().zip(&x.blocks).map(|(s, b)| s.axpy(a, b)).collect())
    }

    pub fn map_blocks(&self, f: impl Fn(usize, &Point) -> Point) -> ProductPoint {
        self.with_blocks(self.blocks.iter().enumerate().map(|(i, b)| f(i, b)).collect())
    }

    fn require_diagonal(&self) -> Result<usize> {
        let d = self.blocks[0].dim();
        if self.blocks.iter().any(|b| b.dim() != d) {
            return Err(Error::Structure("diagonal operation on blocks of unequal dimension".into()));
        }
        if !self.weights.sums_to_one() {
            return Err(Error::Parameter(format!(
                "weights sum to {} instead of 1",
                self.weights.as_slice().iter().sum::<f64>()
            )));
        }
        Ok(d)
    }

    /// Weighted mean `sum_i w_i z_i`.
    pub fn mean(&self) -> Result<Point> {
        let d = self.require_diagonal()?;
        let mut acc = DVector::zeros(d);
        for (b, w) in self.blocks.iter().zip(self.weights.as_slice()) {
            acc.axpy(*w, b.vector(), 1.0);
        }
        Ok(Point::raw(acc))
    }

    /// Orthogonal projection onto the diagonal subspace.
    pub fn project_diagonal(&self) -> Result<ProductPoint> {
        Ok(ProductPoint::lift(&self.mean()?, &self.weights))
    }

    /// Reflection `2 P_S - Id` through the diagonal subspace.
    pub fn reflect_diagonal(&self) -> Result<ProductPoint> {
        let m = self.mean()?;
        Ok(self.map_blocks(|_, b| &(&m * 2.0) - b))
    }
}

impl Add for &ProductPoint {
    type Output = ProductPoint;
    fn add(self, rhs: &ProductPoint) -> ProductPoint {
        self.with_blocks(self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ProductPoint {
    type Output = ProductPoint;
    fn sub(self, rhs: &ProductPoint) -> ProductPoint {
        self.with_blocks(self.blocks.iter().zip(&rhs.blocks).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &ProductPoint {
    type Output = ProductPoint;
    fn mul(self, rhs: f64) -> ProductPoint {
        self.with_blocks(self.blocks.iter().map(|a| a * rhs).collect())
    }
}

// Owned forms forward to the reference impls.
macro_rules! forward_owned {
    ($t:ty) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, rhs: $t) -> $t {
                &self + &rhs
            }
        }
        impl Add<&$t> for $t {
            type Output = $t;
            fn add(self, rhs: &$t) -> $t {
                &self + rhs
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, rhs: $t) -> $t {
                &self - &rhs
            }
        }
        impl Sub<&$t> for $t {
            type Output = $t;
            fn sub(self, rhs: &$t) -> $t {
                &self - rhs
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, rhs: f64) -> $t {
                &self * rhs
            }
        }
    };
}

forward_owned!(Point);
forward_owned!(ProductPoint);

type MetricMap = Arc<dyn Fn(&ProductPoint) -> ProductPoint + Send + Sync>;

/// The geometry in which an operator is averaged.
///
/// `Operator(M)` is the inner product `<a, M b>` for a self-adjoint positive
/// definite `M` on the product space.
#[derive(Clone)]
pub enum Metric {
    Product,
    Operator { label: String, apply: MetricMap },
}

impl Metric {
    pub fn operator(
        label: impl Into<String>,
        apply: impl Fn(&ProductPoint) -> ProductPoint + Send + Sync + 'static,
    ) -> Self {
        Metric::Operator { label: label.into(), apply: Arc::new(apply) }
    }

    pub fn inner(&self, a: &ProductPoint, b: &ProductPoint) -> f64 {
        match self {
            Metric::Product => a.inner(b),
            Metric::Operator { apply, .. } => a.inner(&apply(b)),
        }
    }

    pub fn norm(&self, a: &ProductPoint) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn is_product(&self) -> bool {
        matches!(self, Metric::Product)
    }

    pub fn label(&self) -> &str {
        match self {
            Metric::Product => "product",
            Metric::Operator { label, .. } => label,
        }
    }
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Metric({})", self.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_points() {
        assert!(Point::new(vec![]).is_err());
        assert!(Point::new(vec![1.0, f64::NAN]).is_err());
        assert!(Point::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn weighted_norm_example() {
        let w = Weights::new(vec![0.5, 0.5]).unwrap();
        let z = ProductPoint::new(vec![p(&[1.0, 0.0]), p(&[0.0, 1.0])], w).unwrap();
        assert!((z.norm() - 1.0).abs() < 1e-15);
        let m = z.project_diagonal().unwrap();
        assert_eq!(m.block(0).as_slice(), &[0.5, 0.5]);
        assert_eq!(m.block(1).as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn lift_is_fixed_by_projection() {
        let w = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let x = p(&[1.5, -2.0, 0.25]);
        let c = ProductPoint::lift(&x, &w);
        let pc = c.project_diagonal().unwrap();
        assert!((&pc - &c).norm() < 1e-15);
    }

    #[test]
    fn diagonal_requires_unit_weights() {
        let w = Weights::new(vec![0.5, 0.6]).unwrap();
        let z = ProductPoint::new(vec![p(&[1.0]), p(&[2.0])], w).unwrap();
        assert!(matches!(z.project_diagonal(), Err(Error::Parameter(_))));
        assert!(Weights::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn mismatched_blocks_rejected() {
        let w = Weights::uniform(2);
        assert!(ProductPoint::new(vec![p(&[1.0])], w.clone()).is_err());
        let z = ProductPoint::new(vec![p(&[1.0]), p(&[1.0, 2.0])], w).unwrap();
        assert!(matches!(z.mean(), Err(Error::Structure(_))));
    }

    #[test]
    fn projection_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Weights::new(vec![0.1, 0.6, 0.3]).unwrap();
        let shape = Shape::diagonal(4, w);
        for _ in 0..50 {
            let z = shape.gaussian(&mut rng);
            let y = shape.gaussian(&mut rng);
            let pz = z.project_diagonal().unwrap();
            let py = ProductPoint::lift(&y.mean().unwrap(), z.weights());
            // <z - P z, s> = 0 for every s on the diagonal
            assert!((&z - &pz).inner(&py).abs() < 1e-12);
            let r = z.reflect_diagonal().unwrap();
            assert!((r.norm() - z.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_samples_inside_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = Shape::single(5);
        for _ in 0..100 {
            assert!(shape.sample_ball(10.0, &mut rng).flat_norm() <= 10.0 + 1e-12);
        }
    }

    #[test]
    fn operator_metric() {
        let m = Metric::operator("2I", |z: &ProductPoint| z * 2.0);
        let z = ProductPoint::single(p(&[3.0, 4.0]));
        assert!((m.norm(&z) - 50f64.sqrt()).abs() < 1e-14);
        assert!((Metric::Product.norm(&z) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn unflatten_roundtrip() {
        let shape = Shape::new(vec![2, 3], Weights::new(vec![1.0, 0.5]).unwrap()).unwrap();
        let z = shape.unflatten(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(z.flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(shape.check(&z).is_ok());
        assert!(shape.unflatten(&[1.0]).is_err());
    }
}
