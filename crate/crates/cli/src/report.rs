//! JSON run reports.

use kmcert::bounds::{BoundConstants, Violation};
use serde::{Deserialize, Serialize};

use crate::config::Resolved;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRecord {
    pub d0: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub tau_scale: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub c1: f64,
    pub c2: f64,
    pub exact: bool,
    pub horizon: usize,
}

impl From<&BoundConstants> for ConstantsRecord {
    fn from(c: &BoundConstants) -> Self {
        ConstantsRecord {
            d0: c.d0,
            tau_lo: c.tau_lo,
            tau_hi: c.tau_hi,
            tau_scale: c.tau_scale,
            lambda_lo: c.lambda_lo,
            lambda_hi: c.lambda_hi,
            nu1: c.nu1,
            nu2: c.nu2,
            c1: c.c1,
            c2: c.c2,
            exact: c.exact,
            horizon: c.horizon,
        }
    }
}

impl ConstantsRecord {
    pub fn to_constants(&self) -> BoundConstants {
        BoundConstants {
            d0: self.d0,
            tau_lo: self.tau_lo,
            tau_hi: self.tau_hi,
            tau_scale: self.tau_scale,
            lambda_lo: self.lambda_lo,
            lambda_hi: self.lambda_hi,
            nu1: self.nu1,
            nu2: self.nu2,
            c1: self.c1,
            c2: self.c2,
            exact: self.exact,
            horizon: self.horizon,
        }
    }
}

/// Kinds recomputable from the CSV; the others are carried over by `verify`.
pub const CSV_KINDS: [&str; 10] = [
    "pointwise",
    "ergodic",
    "local-recursion",
    "residual-growth",
    "residual-monotone",
    "distance-monotone",
    "residual-vs-distance",
    "displacement",
    "certificate",
    "column",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub k: Option<usize>,
    pub kind: String,
    pub observed: f64,
    pub bound: f64,
}

impl ViolationRecord {
    pub fn new(k: Option<usize>, kind: &str, observed: f64, bound: f64) -> Self {
        ViolationRecord { k, kind: kind.into(), observed, bound }
    }

    pub fn recomputable(&self) -> bool {
        CSV_KINDS.contains(&self.kind.as_str())
    }
}

impl From<&Violation> for ViolationRecord {
    fn from(v: &Violation) -> Self {
        use kmcert::bounds::ViolationKind::*;
        let kind = match v.kind {
            Pointwise => "pointwise",
            Ergodic => "ergodic",
            LocalRecursion => "local-recursion",
            ResidualInner => "residual-inner",
            QuasiFejer => "quasi-fejer",
            ResidualGrowth => "residual-growth",
            ResidualMonotone => "residual-monotone",
            DistanceMonotone => "distance-monotone",
            ResidualVsDistance => "residual-vs-distance",
            Displacement => "displacement",
            ErgodicDisplacement => "ergodic-displacement",
        };
        ViolationRecord::new(Some(v.k), kind, v.observed, v.bound)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModelRecord {
    pub kappa: f64,
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertKind {
    /// `||g + B ubar|| <= pw_k / gamma`.
    Gfb,
    /// `||g|| <= ((1 + lambda) pw_k + lambda ||eps_k||) / gamma`.
    Drs,
    /// `||e_k||_K <= factor * pw_K(k)`.
    PdsSurrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub kind: CertKind,
    pub gamma: f64,
    pub factor: Option<f64>,
    /// Constants in the plain product norm (primal-dual only).
    pub ambient: Option<ConstantsRecord>,
    /// `max_k value_k / bound_k`.
    pub max_ratio: f64,
    pub ergodic_max_ratio: Option<f64>,
    pub membership: String,
    pub final_value: f64,
    pub at_fixed_point: f64,
    pub w_gap_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummabilityRecord {
    pub errors_summable: bool,
    pub errors_weighted_summable: bool,
    pub gamma_summable: Option<bool>,
    pub gamma_weighted_summable: Option<bool>,
    /// Informational; never a failure.
    pub flag: Option<String>,
}

pub const NOT_SUMMABLE: &str = "not summable; convergence not guaranteed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: Resolved,
    pub problem: String,
    pub operator: String,
    pub class: String,
    pub alpha: Option<f64>,
    pub metric: String,
    pub stop: String,
    pub steps: usize,
    pub final_residual: f64,
    pub constants: Option<ConstantsRecord>,
    pub observed_rate: Option<f64>,
    pub observed_rate_sq: Option<f64>,
    pub spectral_rate: Option<f64>,
    pub theoretical_rate: Option<f64>,
    pub local_model: Option<LocalModelRecord>,
    pub certificate: Option<CertificateRecord>,
    pub summability: SummabilityRecord,
    pub primal_reference_gap: Option<f64>,
    pub surrogate: bool,
    pub notes: Vec<String>,
    pub violations: Vec<ViolationRecord>,
    pub verdict: String,
}

pub fn verdict(violations: &[ViolationRecord]) -> String {
    if violations.is_empty() { "pass" } else { "fail" }.into()
}
