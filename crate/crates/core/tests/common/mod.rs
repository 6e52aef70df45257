#![allow(dead_code)]

use kmcert::km::{ErrorModel, ErrorSchedule, FixReference, KmConfig, RelaxationSchedule, StopRule};
use kmcert::operators::OperatorSpec;
use kmcert::problems::{
    make_gfb_multiblock, make_lasso, make_pds_small, make_quadratic_gd, make_two_subspaces, Method, ProblemInstance,
};
use kmcert::spaces::{Point, ProductPoint, Shape};

pub const HORIZON: usize = 1000;

pub fn zero_map() -> ProblemInstance {
    let shape = Shape::single(3);
    ProblemInstance {
        name: "zero-map".into(),
        method: Method::Operator(OperatorSpec::zero(shape.clone())),
        fix: Some(FixReference::Point(shape.zeros())),
        analytic: Default::default(),
        z0: ProductPoint::single(Point::new(vec![1.0, -2.0, 0.5]).unwrap()),
        relaxation: RelaxationSchedule::Constant(0.5),
        primal_reference: None,
    }
}

/// The exact suite, with oracle references filled in.
pub fn suite() -> Vec<ProblemInstance> {
    let mut v = vec![
        zero_map(),
        make_quadratic_gd(0.8, 1.0, 2, 0.5).unwrap(),
        make_quadratic_gd(0.8, 1.0, 2, 1.0).unwrap(),
        make_two_subspaces(std::f64::consts::FRAC_PI_4, 3).unwrap(),
        make_lasso(40, 20, 0.1, 1).unwrap(),
        make_gfb_multiblock(3, 10, 2).unwrap(),
        make_pds_small(3).unwrap(),
    ];
    let mut half = make_two_subspaces(std::f64::consts::FRAC_PI_3, 2).unwrap();
    half.relaxation = RelaxationSchedule::Constant(0.5);
    half.name.push_str(" lambda=0.5");
    v.push(half);
    v.into_iter().map(|p| p.with_reference().unwrap()).collect()
}

pub fn config(p: &ProblemInstance, errors: ErrorModel, retain: bool) -> KmConfig {
    KmConfig {
        relaxation: p.relaxation.clone(),
        errors,
        stop: StopRule { max_iters: HORIZON, residual_tol: 0.0 },
        seed: 11,
        retain,
        fix: p.fix.clone(),
        ambient: matches!(p.method, Method::Pds(_)),
    }
}

pub fn inexact() -> ErrorModel {
    ErrorModel::Additive(ErrorSchedule::Power { c: 0.1, p: 3.0 })
}

/// Exact, additive and (where the method has them) channel variants.
pub fn variants(p: &ProblemInstance) -> Vec<(&'static str, ErrorModel)> {
    let mut v = vec![("exact", ErrorModel::Exact), ("additive", inexact())];
    if let Some(inj) = p.method.injector() {
        v.push(("channels", ErrorModel::Channels { schedule: ErrorSchedule::Power { c: 0.1, p: 3.0 }, injector: inj }));
    }
    v
}
