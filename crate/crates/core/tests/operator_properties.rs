mod common;

use kmcert::operators::{
    check_averaged, check_certified, check_firmly_nonexpansive, compose2, composition_alpha, gradient_step, prox_l1,
    relax, Averagedness, Basis, Cocoercive, LinearMonotone, Monotone, OperatorSpec, QuadraticFn, DEFAULT_RADIUS,
    DEFAULT_SAMPLES,
};
use kmcert::problems::Method;
use kmcert::spaces::{Point, Shape};
use kmcert::splitting::{build_drs, DrsSpec, ProductMonotone};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn resolvent_op(a: &Monotone, gamma: f64, d: usize) -> OperatorSpec {
    let j = a.resolvent_map(gamma).unwrap();
    OperatorSpec::from_point_map(format!("J[{}]", a.label()), d, Averagedness::Averaged(0.5), move |x| j(x))
}

fn inverse_resolvent_op(a: &Monotone, sigma: f64, d: usize) -> OperatorSpec {
    let j = a.inverse_resolvent_map(sigma).unwrap();
    OperatorSpec::from_point_map(format!("J_inv[{}]", a.label()), d, Averagedness::Averaged(0.5), move |x| j(x))
}

fn monotone_zoo(d: usize, rng: &mut ChaCha8Rng) -> Vec<Monotone> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let k = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let lin = &g * g.transpose() + (&k - k.transpose());
    let q = g.clone().qr().q();
    let cols: Vec<Point> = (0..d / 2).map(|j| Point::new(q.column(j).iter().copied().collect()).unwrap()).collect();
    vec![
        Monotone::Zero,
        Monotone::l1(0.3).unwrap(),
        Monotone::box_cone(vec![-1.0; d], (0..d).map(|i| i as f64 * 0.5).collect()).unwrap(),
        Monotone::SubspaceCone(Basis::new(&cols).unwrap()),
        Monotone::Linear(LinearMonotone::new(lin).unwrap()),
    ]
}

#[test]
fn every_resolvent_is_firmly_nonexpansive() {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for a in monotone_zoo(d, &mut rng) {
        for gamma in [0.1, 1.0, 7.0] {
            let r = check_firmly_nonexpansive(&resolvent_op(&a, gamma, d), DEFAULT_SAMPLES, DEFAULT_RADIUS, 3).unwrap();
            assert!(r.passed, "{} gamma {gamma}: {r:?}", a.label());
            let r = check_firmly_nonexpansive(&inverse_resolvent_op(&a, gamma, d), DEFAULT_SAMPLES, DEFAULT_RADIUS, 4).unwrap();
            assert!(r.passed, "inverse {} gamma {gamma}: {r:?}", a.label());
        }
    }
}

#[test]
fn every_certified_operator_passes_sampling() {
    let mut ops = vec![];
    let f = QuadraticFn::diagonal(&[0.2, 1.0, 3.0], &[1.0, 0.0, -1.0]).unwrap();
    for g in [0.1, 0.4, 0.6] {
        ops.push(gradient_step(&f, g).unwrap());
    }
    for p in common::suite() {
        ops.push(p.operator());
        if let Method::Gfb(g) = &p.method {
            ops.push(g.factored_operator().unwrap());
        }
        if let Method::Drs(d) = &p.method {
            ops.push(d.reflected_operator());
        }
    }
    let base = ops.clone();
    for t in &base {
        if let Some(lim) = t.class().relaxation_limit() {
            ops.push(relax(t, 0.5 * lim).unwrap());
        }
    }
    for t in &ops {
        let r = check_certified(t, DEFAULT_SAMPLES, DEFAULT_RADIUS, 9).unwrap();
        assert!(r.passed, "{}: {r:?}", t.label());
    }
}

#[test]
fn firmly_nonexpansive_product_resolvent() {
    let d = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let zoo = monotone_zoo(d, &mut rng);
    let shape = Shape::new(vec![d, d], kmcert::Weights::new(vec![0.3, 0.7]).unwrap()).unwrap();
    let drs = build_drs(DrsSpec {
        shape: shape.clone(),
        a1: ProductMonotone::Blocks(vec![(zoo[1].clone(), 1.0 / 0.3), (zoo[4].clone(), 1.0 / 0.7)]),
        a2: ProductMonotone::Diagonal,
        gamma: 0.8,
    })
    .unwrap();
    let r = check_firmly_nonexpansive(&drs.operator(), DEFAULT_SAMPLES, DEFAULT_RADIUS, 5).unwrap();
    assert!(r.passed, "{r:?}");
}

// A random alpha-averaged linear map (1 - a) I + a Q with Q orthogonal.
fn random_averaged(d: usize, rng: &mut ChaCha8Rng) -> OperatorSpec {
    let a = rng.gen_range(0.05..0.95);
    let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.qr().q();
    let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = DMatrix::identity(d, d) * (1.0 - a) + q * a;
    OperatorSpec::from_point_map("affine", d, Averagedness::Averaged(a), move |x| {
        let v = &m * x.vector() + nalgebra::DVector::from_column_slice(&shift);
        Point::from_vector(v)
    })
}

// Projection-based nonlinear map (1 - a) I + a (2 P_box - I).
fn random_box_averaged(d: usize, rng: &mut ChaCha8Rng) -> OperatorSpec {
    let a = rng.gen_range(0.05..0.95);
    let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..0.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..3.0)).collect();
    OperatorSpec::from_point_map("box-reflection", d, Averagedness::Averaged(a), move |x| {
        let p = kmcert::operators::project_box(x, &lo, &hi);
        let r = &(&p * 2.0) - x;
        Ok(&(x * (1.0 - a)) + &(&r * a))
    })
}

#[test]
fn composition_constant_passes_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..100 {
        let d = 2 + i % 4;
        let t1 = if i % 2 == 0 { random_averaged(d, &mut rng) } else { random_box_averaged(d, &mut rng) };
        let t2 = if i % 3 == 0 { random_box_averaged(d, &mut rng) } else { random_averaged(d, &mut rng) };
        let c = compose2(&t1, &t2).unwrap();
        let want = composition_alpha(t1.class().alpha().unwrap(), t2.class().alpha().unwrap());
        assert_eq!(c.class(), Averagedness::Averaged(want));
        let r = check_averaged(&c, want, DEFAULT_SAMPLES, DEFAULT_RADIUS, i as u64).unwrap();
        assert!(r.passed, "composition {i}: {r:?}");
    }
}

#[test]
fn composition_constant_is_tight_for_scalings() {
    // T_i = (1 - 2 a_i) Id on R; the product is exactly alpha-averaged with
    // alpha = (1 - (1 - 2a1)(1 - 2a2)) / 2 when the product is negative.
    let (a1, a2): (f64, f64) = (0.9, 0.2);
    let s = (1.0 - 2.0 * a1) * (1.0 - 2.0 * a2);
    let exact = (1.0 - s) / 2.0;
    assert!(composition_alpha(a1, a2) >= exact - 1e-15);
}

proptest! {
    #[test]
    fn prox_l1_matches_scalar_minimizer(v in -10.0f64..10.0, t in 0.0f64..5.0) {
        // argmin_u t|u| + (u - v)^2 / 2, by ternary search
        let (mut lo, mut hi) = (-20.0f64, 20.0f64);
        let f = |u: f64| t * u.abs() + 0.5 * (u - v) * (u - v);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) { hi = m2 } else { lo = m1 }
        }
        let p = prox_l1(&Point::new(vec![v]).unwrap(), t).as_slice()[0];
        prop_assert!((p - 0.5 * (lo + hi)).abs() < 1e-6);
    }

    #[test]
    fn l1_inverse_resolvent_is_clipping(v in proptest::collection::vec(-5.0f64..5.0, 1..6), mu in 0.01f64..3.0, sigma in 0.05f64..10.0) {
        let a = Monotone::l1(mu).unwrap();
        let x = Point::new(v.clone()).unwrap();
        let got = a.inverse_resolvent_map(sigma).unwrap()(&x).unwrap();
        for (g, vi) in got.as_slice().iter().zip(&v) {
            prop_assert!((g - vi.clamp(-mu, mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_resolvent_matches_inverse(seed in 0u64..1000, gamma in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let k = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let m = &g * g.transpose() + (&k - k.transpose());
        let x = nalgebra::DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
        let want = (DMatrix::identity(d, d) + &m * gamma).try_inverse().unwrap() * &x;
        let got = LinearMonotone::new(m).unwrap().resolvent_map(gamma).unwrap()(&Point::from_vector(x).unwrap()).unwrap();
        prop_assert!((got.vector() - &want).amax() < 1e-10 * (1.0 + want.amax()));
    }

    #[test]
    fn composition_constant_properties(a1 in 0.001f64..0.999, a2 in 0.001f64..0.999) {
        let a = composition_alpha(a1, a2);
        prop_assert!((a - composition_alpha(a2, a1)).abs() < 1e-15);
        prop_assert!(a < 1.0 && a >= a1.max(a2) - 1e-15);
    }

    #[test]
    fn resolvent_membership_holds(v in proptest::collection::vec(-5.0f64..5.0, 4), gamma in 0.1f64..5.0) {
        // u = J_{gamma A} x  implies  (x - u)/gamma in A u
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Point::new(v).unwrap();
        for a in monotone_zoo(4, &mut rng) {
            let u = a.resolvent(&x, gamma).unwrap();
            let g = &(&x - &u) * (1.0 / gamma);
            prop_assert!(!a.membership(&u, &g).is_violated(), "{}", a.label());
        }
    }
}

#[test]
fn cocoercive_constants_by_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ops = [
        Cocoercive::Quadratic(QuadraticFn::diagonal(&[0.5, 2.0], &[1.0, 1.0]).unwrap()),
        Cocoercive::MoreauL1 { mu: 0.7 },
    ];
    for b in ops {
        let beta = b.beta();
        for _ in 0..1000 {
            let x = Point::new(vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).unwrap();
            let y = Point::new(vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).unwrap();
            let db = &b.apply(&x) - &b.apply(&y);
            assert!(beta * db.dot(&db) <= db.dot(&(&x - &y)) + 1e-12);
        }
    }
}
