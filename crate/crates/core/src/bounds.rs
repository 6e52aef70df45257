//! Worst-case rate bounds and their verification against recorded traces.
//!
//! Constants are measured on the trace horizon: suprema and sums over the
//! executed steps only. Every bound at step `k` needs those quantities for
//! indices up to `k`, so horizon values are always admissible.

use crate::error::{Error, Result};
use crate::km::{IterationTrace, NormSeries};

/// Absolute slack for the rate bounds and the recursion model.
pub const BOUND_SLACK: f64 = 1e-10;
/// Absolute slack for the per-step inequalities.
pub const STEP_SLACK: f64 = 1e-10;
/// Absolute slack for monotonicity in the exact case.
pub const MONOTONE_SLACK: f64 = 1e-12;
/// Values at or below this are treated as underflow by [`fit_tail_rate`].
pub const FIT_FLOOR: f64 = 1e-14;
pub const FIT_MIN_LEN: usize = 20;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.3;

/// Constants entering the pointwise and ergodic bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundConstants {
    /// `||z_0 - z*||`.
    pub d0: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// `c` in `tau_k = lambda_k (c - lambda_k)`; `1/alpha` or 1.
    pub tau_scale: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// `2 sup ||T_lambda z_k - z*|| + sup lambda_k ||eps_k||`.
    pub nu1: f64,
    /// `2 sup ||e_k - e_{k+1}||`.
    pub nu2: f64,
    /// `nu1 sum lambda_j ||eps_j|| + nu2 tau_hi sum (l+1) ||eps_l||`.
    pub c1: f64,
    /// `sum lambda_k ||eps_k||`.
    pub c2: f64,
    pub exact: bool,
    pub horizon: usize,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Horizon constants from the trace's own metric.
pub fn empirical_constants(trace: &IterationTrace) -> Result<BoundConstants> {
    constants_from_series(trace, &trace.norms)
}

/// Horizon constants from a given norm series of the trace (e.g. the ambient one).
pub fn constants_from_series(trace: &IterationTrace, s: &NormSeries) -> Result<BoundConstants> {
    let fix = s
        .fix
        .as_ref()
        .ok_or_else(|| Error::Unavailable("trace has no fixed-point reference".into()))?;
    let c = trace.tau_scale();
    let lams: Vec<f64> = if trace.lambdas.is_empty() { vec![trace.relaxation.lambda(0)] } else { trace.lambdas.clone() };
    let taus: Vec<f64> = lams.iter().map(|l| l * (c - l)).collect();
    let tau_lo = taus.iter().copied().fold(f64::INFINITY, f64::min);
    let tau_hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lam_err: Vec<f64> = trace.lambdas.iter().zip(&s.err).map(|(l, e)| l * e).collect();
    let nu1 = 2.0 * max_of(&fix.tlam) + max_of(&lam_err);
    let nu2 = 2.0 * max_of(&s.e_diff);
    let c2: f64 = lam_err.iter().sum();
    let kw: f64 = s.err.iter().enumerate().map(|(l, e)| (l + 1) as f64 * e).sum();
    let c1 = nu1 * c2 + nu2 * tau_hi * kw;
    Ok(BoundConstants {
        d0: fix.dist_ref[0],
        tau_lo,
        tau_hi,
        tau_scale: c,
        lambda_lo: lams.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_hi: lams.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        nu1,
        nu2,
        c1,
        c2,
        exact: s.err.iter().all(|e| *e == 0.0),
        horizon: trace.steps(),
    })
}

/// `sqrt((d0^2 + C1) / (tau_lo (k+1)))`; infinite when `tau_lo <= 0`.
pub fn pointwise_bound(k: usize, c: &BoundConstants) -> f64 {
    if !(c.tau_lo > 0.0) {
        return f64::INFINITY;
    }
    ((c.d0 * c.d0 + c.c1) / (c.tau_lo * (k + 1) as f64)).sqrt()
}

/// `2 (d0 + C2) / Lambda_k`.
pub fn ergodic_bound(c: &BoundConstants, lambda_sum_k: f64) -> f64 {
    2.0 * (c.d0 + c.c2) / lambda_sum_k
}

/// Exact-case bounds on `||z_k - z_{k+1}||` and `||(z_0 - z_{k+1})/(k+1)||`.
///
/// The first needs `sup lambda_k <= 1`, the second `inf lambda_k > 0`.
pub fn displacement_bounds(k: usize, d0: f64, tau_lo: f64) -> (f64, f64) {
    let kk = (k + 1) as f64;
    (d0 / (tau_lo * kk).sqrt(), 2.0 * d0 / kk)
}

/// Contraction factor of `d_{k+1}^2 <= zeta d_k^2 + c_k` under subregularity with modulus `kappa`.
pub fn local_zeta(tau: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    let r = tau / k2;
    if r > 0.0 && r <= 1.0 {
        1.0 - r
    } else {
        k2 / (k2 + tau)
    }
}

/// [`local_zeta`] for an `alpha`-averaged operator: `lambda alpha` and `kappa alpha` substituted.
pub fn local_zeta_averaged(lambda: f64, alpha: f64, kappa: f64) -> f64 {
    let la = lambda * alpha;
    local_zeta(la * (1.0 - la), kappa * alpha)
}

/// Predicted rate on `d_k` for `Id - gamma grad f`, `sqrt(1 - t(2-t)/cnd^2)`.
pub fn gd_theoretical_rate(gamma: f64, delta_min: f64, delta_max: f64) -> Result<f64> {
    if !(delta_min > 0.0 && delta_min <= delta_max) {
        return Err(Error::Parameter(format!("need 0 < delta_min <= delta_max, got {delta_min}, {delta_max}")));
    }
    if !(gamma > 0.0 && gamma * delta_max < 2.0) {
        return Err(Error::Parameter(format!("step {gamma} outside (0, 2/delta_max)")));
    }
    let t = gamma * delta_max;
    let cnd = delta_max / delta_min;
    Ok((1.0 - t * (2.0 - t) / (cnd * cnd)).sqrt())
}

/// Local subregularity model `d(z, Fix T) <= kappa ||z - T z||`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubRegularityModel {
    pub kappa: f64,
    /// When set, the averaged form of the recursion is used.
    pub alpha: Option<f64>,
}

impl SubRegularityModel {
    pub fn zeta(&self, lambda: f64) -> f64 {
        match self.alpha {
            Some(a) => local_zeta_averaged(lambda, a, self.kappa),
            None => local_zeta(lambda * (1.0 - lambda), self.kappa),
        }
    }

    /// Predicted rate on `d_k`, `sqrt(zeta)`.
    pub fn rate(&self, lambda: f64) -> f64 {
        self.zeta(lambda).sqrt()
    }
}

/// Least-squares slope of `log v_k` over the tail, returned as `exp(slope)`.
///
/// The sequence is cut at its first value at or below [`FIT_FLOOR`]; the
/// remaining prefix must have at least [`FIT_MIN_LEN`] entries.
pub fn fit_tail_rate(seq: &[f64], tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Parameter(format!("tail fraction {tail_fraction} not in (0,1]")));
    }
    let n = seq.iter().position(|v| !(v.is_finite() && *v > FIT_FLOOR)).unwrap_or(seq.len());
    if n < FIT_MIN_LEN {
        return Err(Error::Unavailable(format!(
            "only {n} values above {FIT_FLOOR:e}, need {FIT_MIN_LEN}"
        )));
    }
    let m = ((n as f64 * tail_fraction).ceil() as usize).clamp(2, n);
    let pts: Vec<(f64, f64)> = (n - m..n).map(|k| (k as f64, seq[k].ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok((sxy / sxx).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    Pointwise,
    Ergodic,
    LocalRecursion,
    ResidualInner,
    QuasiFejer,
    ResidualGrowth,
    ResidualMonotone,
    DistanceMonotone,
    ResidualVsDistance,
    Displacement,
    ErgodicDisplacement,
}

/// A failed inequality `observed <= bound + slack` at iteration `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub kind: ViolationKind,
    pub observed: f64,
    pub bound: f64,
}

impl Violation {
    pub fn margin(&self) -> f64 {
        self.observed - self.bound
    }
}

fn check(out: &mut Vec<Violation>, k: usize, kind: ViolationKind, observed: f64, bound: f64, slack: f64) {
    if !(observed <= bound + slack) {
        out.push(Violation { k, kind, observed, bound });
    }
}

/// Pointwise, ergodic and (with a model) local-recursion checks.
pub fn verify_trace(
    trace: &IterationTrace,
    c: &BoundConstants,
    model: Option<&SubRegularityModel>,
) -> Vec<Violation> {
    verify_series(trace, &trace.norms, c, model)
}

pub fn verify_series(
    trace: &IterationTrace,
    s: &NormSeries,
    c: &BoundConstants,
    model: Option<&SubRegularityModel>,
) -> Vec<Violation> {
    let mut out = vec![];
    if c.tau_lo > 0.0 {
        for (k, r) in s.res.iter().enumerate() {
            check(&mut out, k, ViolationKind::Pointwise, *r, pointwise_bound(k, c), BOUND_SLACK);
        }
    }
    for (k, (g, lam)) in s.erg.iter().zip(trace.lambda_sums()).enumerate() {
        check(&mut out, k, ViolationKind::Ergodic, *g, ergodic_bound(c, lam), BOUND_SLACK);
    }
    if let (Some(m), Some(fix)) = (model, s.fix.as_ref()) {
        for k in 0..trace.steps() {
            let lam = trace.lambdas[k];
            let dk = fix.dist_fix[k];
            let dn = fix.dist_fix[k + 1];
            let ck = c.nu1 * lam * s.err[k];
            check(&mut out, k, ViolationKind::LocalRecursion, dn * dn, m.zeta(lam) * dk * dk + ck, BOUND_SLACK);
        }
    }
    out
}

/// Per-step inequalities of the convergence proof.
///
/// Checked: the firm-nonexpansiveness inequality of the residual, the
/// quasi-Fejér inequality, the residual recursion, residual versus distance,
/// and in the exact case monotonicity and the displacement bounds.
pub fn verify_step_inequalities(trace: &IterationTrace, c: &BoundConstants) -> Vec<Violation> {
    step_inequalities_for_series(trace, &trace.norms, c)
}

pub fn step_inequalities_for_series(trace: &IterationTrace, s: &NormSeries, c: &BoundConstants) -> Vec<Violation> {
    let mut out = vec![];
    let alpha = trace.class.alpha().unwrap_or(1.0);
    let cs = trace.tau_scale();
    for k in 0..trace.steps() {
        let lam = trace.lambdas[k];
        let de = s.e_diff[k];
        check(&mut out, k, ViolationKind::ResidualInner, de * de / (2.0 * alpha * lam), s.residual_inner[k], STEP_SLACK);
        let (r, rn) = (s.res[k], s.res[k + 1]);
        check(&mut out, k, ViolationKind::ResidualGrowth, rn * rn, r * r + c.nu2 * s.err[k], STEP_SLACK);
        if c.exact {
            check(&mut out, k, ViolationKind::ResidualMonotone, rn, r, MONOTONE_SLACK);
        }
        if let Some(fix) = &s.fix {
            let (d, dn) = (fix.dist_ref[k], fix.dist_ref[k + 1]);
            let tau = lam * (cs - lam);
            let rhs = d * d - tau * r * r + c.nu1 * lam * s.err[k];
            check(&mut out, k, ViolationKind::QuasiFejer, dn * dn, rhs, STEP_SLACK);
            if c.exact {
                check(&mut out, k, ViolationKind::DistanceMonotone, fix.dist_fix[k + 1], fix.dist_fix[k], MONOTONE_SLACK);
                if c.lambda_hi <= 1.0 && c.tau_lo > 0.0 {
                    let (b, _) = displacement_bounds(k, c.d0, c.tau_lo);
                    check(&mut out, k, ViolationKind::Displacement, s.disp[k], b, BOUND_SLACK);
                }
            }
        }
    }
    if let Some(fix) = &s.fix {
        for (k, r) in s.res.iter().enumerate() {
            check(&mut out, k, ViolationKind::ResidualVsDistance, *r, 2.0 * fix.dist_fix[k], BOUND_SLACK);
        }
    }
    if c.exact && c.lambda_lo > 0.0 {
        if let Some(ret) = &trace.retained {
            let m = &trace.metric;
            for k in 0..trace.steps() {
                let vbar = m.norm(&(&ret.z[0] - &ret.z[k + 1])) / (k + 1) as f64;
                let (_, b) = displacement_bounds(k, c.d0, c.tau_lo.max(f64::MIN_POSITIVE));
                check(&mut out, k, ViolationKind::ErgodicDisplacement, vbar, b, BOUND_SLACK);
            }
        }
    }
    out
}

/// `||e_bar_k||` recomputed from retained residual vectors.
pub fn ergodic_residual(trace: &IterationTrace) -> Result<Vec<f64>> {
    let ret = trace
        .retained
        .as_ref()
        .ok_or_else(|| Error::Unavailable("ergodic residual needs retained vectors".into()))?;
    let mut out = Vec::with_capacity(trace.steps());
    let mut sum = None;
    let mut lam_sum = 0.0;
    for (k, lam) in trace.lambdas.iter().enumerate() {
        let s = match sum.take() {
            None => &ret.e[k] * *lam,
            Some(s) => crate::spaces::ProductPoint::axpy(&s, *lam, &ret.e[k]),
        };
        lam_sum += lam;
        out.push(trace.metric.norm(&s) / lam_sum);
        sum = Some(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_branches() {
        assert_eq!(local_zeta(1.0, 1.0), 0.0);
        assert_eq!(local_zeta(0.0, 2.0), 1.0);
        assert!((local_zeta(4.0, 1.0) - 0.2).abs() < 1e-15);
        assert!((local_zeta(0.25, 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gd_rate_routes_agree() {
        for (g, dm, dmax) in [(0.5, 0.8, 1.0), (1.0, 0.8, 1.0), (0.3, 0.1, 2.0), (1.7, 0.5, 1.0)] {
            let direct = gd_theoretical_rate(g, dm, dmax).unwrap();
            let model = SubRegularityModel { kappa: 1.0 / (g * dm), alpha: Some(g * dmax / 2.0) };
            assert!((direct - model.rate(1.0)).abs() < 1e-14, "{g} {dm} {dmax}");
        }
        assert!(gd_theoretical_rate(2.0, 0.8, 1.0).is_err());
    }

    #[test]
    fn fit_exact_geometric() {
        let seq: Vec<f64> = (0..60).map(|k| 3.0 * 0.7f64.powi(k)).collect();
        assert!((fit_tail_rate(&seq, 0.3).unwrap() - 0.7).abs() < 1e-12);
        let short: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        assert!(matches!(fit_tail_rate(&short, 0.3), Err(Error::Unavailable(_))));
    }

    #[test]
    fn fit_cuts_at_underflow() {
        let mut seq: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k)).collect();
        seq.extend([0.0; 10]);
        assert!((fit_tail_rate(&seq, 0.3).unwrap() - 0.5).abs() < 1e-12);
    }
}
