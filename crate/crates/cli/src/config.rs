//! Run configuration: a flat TOML document.
//!
//! Every key is optional in the file; [`RunConfig::resolve`] fills the
//! defaults and validates before anything runs. See `docs/config.md`.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub problem: Option<String>,
    pub method: Option<String>,

    pub dim: Option<usize>,
    pub delta_min: Option<f64>,
    pub delta_max: Option<f64>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub mu: Option<f64>,
    pub blocks: Option<usize>,
    pub problem_seed: Option<u64>,

    pub lambda: Option<f64>,
    pub gamma_schedule: Option<String>,
    pub gamma_limit: Option<f64>,
    pub gamma_amp: Option<f64>,
    pub gamma_ratio: Option<f64>,
    pub track_limit: Option<bool>,

    pub errors: Option<String>,
    pub error_c: Option<f64>,
    pub error_p: Option<f64>,

    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub retain: Option<bool>,
    pub tail_fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    ZeroMap,
    QuadraticGd,
    TwoSubspaces,
    Lasso,
    Multiblock,
    PdsSmall,
}

impl Problem {
    pub const ALL: [Problem; 6] =
        [Problem::ZeroMap, Problem::QuadraticGd, Problem::TwoSubspaces, Problem::Lasso, Problem::Multiblock, Problem::PdsSmall];

    pub fn name(self) -> &'static str {
        match self {
            Problem::ZeroMap => "zero-map",
            Problem::QuadraticGd => "quadratic-gd",
            Problem::TwoSubspaces => "two-subspaces",
            Problem::Lasso => "lasso",
            Problem::Multiblock => "multiblock",
            Problem::PdsSmall => "pds-small",
        }
    }

    fn parse(s: &str) -> Option<Problem> {
        Problem::ALL.into_iter().find(|p| p.name() == s)
    }

    fn default_method(self) -> MethodKind {
        match self {
            Problem::ZeroMap | Problem::QuadraticGd => MethodKind::Km,
            Problem::TwoSubspaces => MethodKind::Drs,
            Problem::Lasso | Problem::Multiblock => MethodKind::Gfb,
            Problem::PdsSmall => MethodKind::Pds,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Km,
    Gfb,
    Drs,
    Pds,
    GfbNonstationary,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Km => "km",
            MethodKind::Gfb => "gfb",
            MethodKind::Drs => "drs",
            MethodKind::Pds => "pds",
            MethodKind::GfbNonstationary => "gfb-nonstationary",
        }
    }

    fn parse(s: &str) -> Option<MethodKind> {
        [MethodKind::Km, MethodKind::Gfb, MethodKind::Drs, MethodKind::Pds, MethodKind::GfbNonstationary]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Geometric,
    InverseSquare,
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Exact,
    Additive,
    Channels,
}

/// A validated configuration with every default spelled out.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct Resolved {
    pub name: String,
    pub problem: Problem,
    pub method: MethodKind,
    pub dim: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub gamma: f64,
    pub theta: f64,
    pub m: usize,
    pub n: usize,
    pub mu: f64,
    pub blocks: usize,
    pub problem_seed: u64,
    pub lambda: f64,
    pub gamma_schedule: ScheduleKind,
    pub gamma_limit: f64,
    pub gamma_amp: f64,
    pub gamma_ratio: f64,
    pub track_limit: bool,
    pub errors: ErrorKind,
    pub error_c: f64,
    pub error_p: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub retain: bool,
    pub tail_fraction: f64,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let problem = match &self.problem {
            None => return Err(usage("config: missing key 'problem'")),
            Some(p) => Problem::parse(p).ok_or_else(|| {
                let names: Vec<_> = Problem::ALL.iter().map(|p| p.name()).collect();
                usage(format!("config: unknown problem '{p}' (expected one of {})", names.join(", ")))
            })?,
        };
        let method = match &self.method {
            None => problem.default_method(),
            Some(m) => MethodKind::parse(m).ok_or_else(|| usage(format!("config: unknown method '{m}'")))?,
        };
        let compatible = method == problem.default_method()
            || (method == MethodKind::GfbNonstationary && problem == Problem::Multiblock)
            || (method == MethodKind::Km);
        if !compatible {
            return Err(usage(format!("config: method '{}' does not apply to problem '{}'", method.name(), problem.name())));
        }
        let gamma_schedule = match self.gamma_schedule.as_deref() {
            None | Some("constant") => ScheduleKind::Constant,
            Some("geometric") => ScheduleKind::Geometric,
            Some("inverse-square") => ScheduleKind::InverseSquare,
            Some("harmonic") => ScheduleKind::Harmonic,
            Some(s) => return Err(usage(format!("config: unknown gamma_schedule '{s}'"))),
        };
        if method != MethodKind::GfbNonstationary && gamma_schedule != ScheduleKind::Constant {
            return Err(usage("config: gamma_schedule needs method 'gfb-nonstationary'"));
        }
        let errors = match self.errors.as_deref() {
            None | Some("exact") => ErrorKind::Exact,
            Some("additive") => ErrorKind::Additive,
            Some("channels") => ErrorKind::Channels,
            Some(s) => return Err(usage(format!("config: unknown errors '{s}'"))),
        };
        if errors == ErrorKind::Channels && matches!(method, MethodKind::Km | MethodKind::GfbNonstationary) {
            return Err(usage(format!("config: method '{}' has no error channels", method.name())));
        }
        let default_dim = match problem {
            Problem::ZeroMap => 3,
            Problem::QuadraticGd | Problem::TwoSubspaces => 2,
            Problem::Multiblock => 10,
            Problem::Lasso => 20,
            Problem::PdsSmall => 30,
        };
        let (default_gamma, default_lambda) = match problem {
            Problem::QuadraticGd => (0.5, 1.0),
            Problem::ZeroMap => (1.0, 0.5),
            _ => (1.0, 1.0),
        };
        let r = Resolved {
            name: self.name.clone().unwrap_or_else(|| "run".into()),
            problem,
            method,
            dim: self.dim.unwrap_or(default_dim),
            delta_min: self.delta_min.unwrap_or(0.8),
            delta_max: self.delta_max.unwrap_or(1.0),
            gamma: self.gamma.unwrap_or(default_gamma),
            theta: self.theta.unwrap_or(std::f64::consts::FRAC_PI_4),
            m: self.m.unwrap_or(40),
            n: self.n.unwrap_or(20),
            mu: self.mu.unwrap_or(0.1),
            blocks: self.blocks.unwrap_or(3),
            problem_seed: self.problem_seed.unwrap_or(1),
            lambda: self.lambda.unwrap_or(default_lambda),
            gamma_schedule,
            gamma_limit: self.gamma_limit.unwrap_or(1.5),
            gamma_amp: self.gamma_amp.unwrap_or(0.4),
            gamma_ratio: self.gamma_ratio.unwrap_or(1.1),
            track_limit: self.track_limit.unwrap_or(true),
            errors,
            error_c: self.error_c.unwrap_or(0.1),
            error_p: self.error_p.unwrap_or(3.0),
            max_iters: self.max_iters.unwrap_or(1000),
            tol: self.tol.unwrap_or(0.0),
            seed: self.seed.unwrap_or(0),
            retain: self.retain.unwrap_or(false),
            tail_fraction: self.tail_fraction.unwrap_or(kmcert::bounds::DEFAULT_TAIL_FRACTION),
        };
        r.validate()?;
        Ok(r)
    }
}

impl Resolved {
    fn validate(&self) -> Result<(), CliError> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(usage(format!("config: '{name}' must be positive and finite, got {v}")))
            }
        };
        pos("lambda", self.lambda)?;
        pos("gamma", self.gamma)?;
        pos("tail_fraction", self.tail_fraction)?;
        if self.tail_fraction > 1.0 {
            return Err(usage("config: 'tail_fraction' must be at most 1"));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(usage(format!("config: 'tol' must be nonnegative, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(usage("config: 'max_iters' must be positive"));
        }
        if self.errors != ErrorKind::Exact && !(self.error_c >= 0.0 && self.error_c.is_finite() && self.error_p.is_finite()) {
            return Err(usage("config: error schedule needs finite 'error_c' >= 0 and 'error_p'"));
        }
        if self.method == MethodKind::GfbNonstationary {
            pos("gamma_limit", self.gamma_limit)?;
            if !(self.gamma_amp >= 0.0 && self.gamma_amp.is_finite()) {
                return Err(usage("config: 'gamma_amp' must be nonnegative"));
            }
            if self.gamma_schedule == ScheduleKind::Geometric && !(self.gamma_ratio > 1.0) {
                return Err(usage("config: 'gamma_ratio' must exceed 1"));
            }
        }
        Ok(())
    }
}
