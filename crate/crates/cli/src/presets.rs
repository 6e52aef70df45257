//! Named configurations.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};

use crate::config::RunConfig;

pub const NAMES: [&str; 14] = [
    "zero-map",
    "gd-fig1",
    "gd-fig1-unit",
    "drs-subspaces",
    "drs-subspaces-pi6",
    "drs-subspaces-pi3",
    "drs-subspaces-half",
    "lasso",
    "multiblock",
    "pds-small",
    "nonstationary-stationary",
    "nonstationary-geo",
    "nonstationary-sq",
    "nonstationary-harm",
];

fn base(name: &str, problem: &str) -> RunConfig {
    RunConfig { name: Some(name.into()), problem: Some(problem.into()), ..Default::default() }
}

fn subspaces(name: &str, theta: f64, lambda: f64) -> RunConfig {
    RunConfig { theta: Some(theta), lambda: Some(lambda), dim: Some(2), ..base(name, "two-subspaces") }
}

fn nonstationary(name: &str, schedule: &str) -> RunConfig {
    RunConfig {
        method: Some("gfb-nonstationary".into()),
        gamma_schedule: Some(schedule.into()),
        blocks: Some(3),
        dim: Some(10),
        problem_seed: Some(2),
        max_iters: Some(10_000),
        ..base(name, "multiblock")
    }
}

pub fn preset(name: &str) -> Option<RunConfig> {
    Some(match name {
        "zero-map" => base(name, "zero-map"),
        "gd-fig1" => RunConfig { gamma: Some(0.5), ..base(name, "quadratic-gd") },
        "gd-fig1-unit" => RunConfig { gamma: Some(1.0), ..base(name, "quadratic-gd") },
        "drs-subspaces" => subspaces(name, FRAC_PI_4, 1.0),
        "drs-subspaces-pi6" => subspaces(name, FRAC_PI_6, 1.0),
        "drs-subspaces-pi3" => subspaces(name, FRAC_PI_3, 1.0),
        "drs-subspaces-half" => subspaces(name, FRAC_PI_4, 0.5),
        "lasso" => RunConfig { m: Some(40), n: Some(20), mu: Some(0.1), problem_seed: Some(1), ..base(name, "lasso") },
        "multiblock" => RunConfig { blocks: Some(3), dim: Some(10), problem_seed: Some(2), ..base(name, "multiblock") },
        "pds-small" => RunConfig { problem_seed: Some(3), ..base(name, "pds-small") },
        "nonstationary-stationary" => nonstationary(name, "constant"),
        "nonstationary-geo" => nonstationary(name, "geometric"),
        "nonstationary-sq" => nonstationary(name, "inverse-square"),
        "nonstationary-harm" => nonstationary(name, "harmonic"),
        _ => return None,
    })
}
