//! Likelihood-ratio confidence regions for linear functions `A beta` of the
//! coefficients, taken as a union over candidate supports.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::solvers::loss::logit;
use crate::solvers::{mle_logistic, mle_logistic_constrained, MleFit};
use crate::stats_util::{chi2_quantile, merge_intervals, numerical_rank, IntervalUnion, RANK_TOL};
use crate::types::{CandidateSet, Dataset, LinearTarget, SupportSet};

/// Half-width beyond which a one-dimensional interval is truncated.
pub const MAX_HALF_WIDTH: f64 = 1e3;
/// Tolerance on the statistic scale for interval endpoints.
pub const ENDPOINT_TOL: f64 = 1e-4;

/// Log-likelihood of the alternative; a separated fit is capped at its
/// supremum 0.
fn alternative_loglik(fit: &MleFit) -> f64 {
    if fit.separated {
        0.0
    } else {
        fit.loglik
    }
}

fn stat_against(data: &Dataset, tau: &SupportSet, a_tau: &DMatrix<f64>, t: &[f64], l1: f64) -> Result<f64> {
    match mle_logistic_constrained(data, tau, a_tau, t) {
        Ok(null) if null.separated => Ok(f64::INFINITY),
        Ok(null) => Ok((-2.0 * (null.loglik - l1)).max(0.0)),
        Err(Error::IncompatibleTarget) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `-2 (l(b0) - l(b1))` for the null `A_tau b = t` against the unrestricted
/// fit on `tau`; `+inf` when the null is inconsistent or separated.
pub fn lrt_stat(data: &Dataset, tau: &SupportSet, a: &LinearTarget, t: &[f64]) -> Result<f64> {
    check_target(data, a, t)?;
    let alt = mle_logistic(data, tau)?;
    stat_against(data, tau, &a.restricted(tau), t, alternative_loglik(&alt))
}

fn check_target(data: &Dataset, a: &LinearTarget, t: &[f64]) -> Result<()> {
    if a.p() != data.p() {
        return Err(Error::DimensionMismatch(format!("target has {} columns for {} covariates", a.p(), data.p())));
    }
    if t.len() != a.q() {
        return Err(Error::DimensionMismatch(format!("{} values for {} target rows", t.len(), a.q())));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(invalid("target values must be finite"));
    }
    Ok(())
}

/// Per-candidate outcome of a membership query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    pub tau: SupportSet,
    pub stat: f64,
    pub rank: usize,
    /// Chi-squared threshold; `None` when the rank is zero.
    pub quantile: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
struct Prepared {
    tau: SupportSet,
    a_tau: DMatrix<f64>,
    rank: usize,
    quantile: Option<f64>,
    l1: f64,
}

/// Confidence region for `A beta_0` as a membership predicate.
#[derive(Debug, Clone)]
pub struct RegionHandle<'a> {
    data: &'a Dataset,
    target: LinearTarget,
    alpha: f64,
    prepared: Vec<Prepared>,
}

impl<'a> RegionHandle<'a> {
    pub fn candidates(&self) -> Vec<SupportSet> {
        self.prepared.iter().map(|c| c.tau.clone()).collect()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn target(&self) -> &LinearTarget {
        &self.target
    }

    pub fn diagnostics(&self, t: &[f64]) -> Result<Vec<CandidateCheck>> {
        check_target(self.data, &self.target, t)?;
        self.prepared
            .par_iter()
            .map(|c| {
                let (stat, accepted) = match c.quantile {
                    // a zero restriction only accepts targets it reproduces
                    None => {
                        let consistent = t.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-8;
                        (if consistent { 0.0 } else { f64::INFINITY }, consistent)
                    }
                    Some(q) => {
                        let s = stat_against(self.data, &c.tau, &c.a_tau, t, c.l1)?;
                        (s, s < q)
                    }
                };
                Ok(CandidateCheck {
                    tau: c.tau.clone(),
                    stat,
                    rank: c.rank,
                    quantile: c.quantile,
                    accepted,
                })
            })
            .collect()
    }

    /// Whether `t` lies in the region: some candidate accepts it.
    pub fn contains(&self, t: &[f64]) -> Result<bool> {
        Ok(self.diagnostics(t)?.iter().any(|c| c.accepted))
    }

    /// Membership of a probability vector, tested on the logit scale.
    pub fn contains_probabilities(&self, pi: &[f64]) -> Result<bool> {
        if let Some(&bad) = pi.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidProbability(bad));
        }
        let t: Vec<f64> = pi.iter().map(|&v| logit(v)).collect();
        self.contains(&t)
    }
}

/// Region `{t : some candidate tau has LRT stat below the chi-squared
/// alpha-quantile with rank(A_tau) degrees of freedom}`.
pub fn region_abeta<'a>(data: &'a Dataset, cands: &CandidateSet, a: &LinearTarget, alpha: f64) -> Result<RegionHandle<'a>> {
    if cands.is_empty() {
        return Err(invalid("candidate set is empty"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if a.p() != data.p() {
        return Err(Error::DimensionMismatch(format!("target has {} columns for {} covariates", a.p(), data.p())));
    }
    let prepared = cands
        .models()
        .par_iter()
        .map(|tau| {
            let a_tau = a.restricted(tau);
            let rank = if tau.is_empty() { 0 } else { numerical_rank(&a_tau, RANK_TOL) };
            let quantile = if rank == 0 { None } else { Some(chi2_quantile(rank, alpha)?) };
            let l1 = alternative_loglik(&mle_logistic(data, tau)?);
            Ok(Prepared {
                tau: tau.clone(),
                a_tau,
                rank,
                quantile,
                l1,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RegionHandle {
        data,
        target: a.clone(),
        alpha,
        prepared,
    })
}

/// Region for the case probabilities `h(X_new beta_0)`; membership is
/// queried with [`RegionHandle::contains_probabilities`].
pub fn region_case_probs<'a>(data: &'a Dataset, cands: &CandidateSet, x_new: &DMatrix<f64>, alpha: f64) -> Result<RegionHandle<'a>> {
    if x_new.ncols() != data.p() {
        return Err(Error::DimensionMismatch(format!("new cases have {} columns for {} covariates", x_new.ncols(), data.p())));
    }
    region_abeta(data, cands, &LinearTarget::new(x_new.clone())?, alpha)
}

/// Confidence set for one coefficient: the union over candidates of the
/// inverted one-dimensional LRT. Without augmentation a candidate missing
/// `j` contributes the point 0; with it, `j` is added to every candidate.
pub fn ci_single_coef(data: &Dataset, cands: &CandidateSet, j: usize, alpha: f64, augmented: bool) -> Result<IntervalUnion> {
    if cands.is_empty() {
        return Err(invalid("candidate set is empty"));
    }
    if j >= data.p() {
        return Err(Error::IndexOutOfRange { index: j, len: data.p() });
    }
    let mut row = vec![0.0; data.p()];
    row[j] = 1.0;
    let models: Vec<SupportSet> = cands
        .models()
        .iter()
        .map(|tau| if augmented { tau.with(j) } else { tau.clone() })
        .collect();
    union_of_inversions(data, models, &row, alpha)
}

/// Confidence set for a single linear combination `a . beta_0`. A candidate
/// on which `a` vanishes contributes the point 0.
pub fn ci_linear(data: &Dataset, cands: &CandidateSet, a: &[f64], alpha: f64) -> Result<IntervalUnion> {
    if cands.is_empty() {
        return Err(invalid("candidate set is empty"));
    }
    if a.len() != data.p() {
        return Err(Error::DimensionMismatch(format!("row of length {} for {} covariates", a.len(), data.p())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("linear combination has non-finite entries"));
    }
    union_of_inversions(data, cands.models().to_vec(), a, alpha)
}

fn union_of_inversions(data: &Dataset, mut models: Vec<SupportSet>, a: &[f64], alpha: f64) -> Result<IntervalUnion> {
    let q = chi2_quantile(1, alpha)?;
    models.sort();
    models.dedup();
    let pieces: Vec<Option<Option<[f64; 2]>>> = models
        .par_iter()
        .map(|tau| {
            let a_tau = DMatrix::from_fn(1, tau.len(), |_, k| a[tau.indices()[k]]);
            if a_tau.iter().all(|v| *v == 0.0) {
                Ok(None)
            } else {
                interval_on_support(data, tau, &a_tau, q).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let mut raw = Vec::new();
    let mut point_zero = false;
    for piece in pieces {
        match piece {
            None => point_zero = true,
            Some(Some(iv)) => raw.push(iv),
            Some(None) => {}
        }
    }
    let mut out = merge_intervals(&raw)?;
    out.contains_point_zero = point_zero;
    Ok(out)
}

/// `{t : stat(a_tau b = t) < q}` on one support, or `None` when even the
/// maximum likelihood value is rejected.
fn interval_on_support(data: &Dataset, tau: &SupportSet, a_tau: &DMatrix<f64>, q: f64) -> Result<Option<[f64; 2]>> {
    let alt = mle_logistic(data, tau)?;
    let l1 = alternative_loglik(&alt);
    let stat = |t: f64| stat_against(data, tau, a_tau, &[t], l1);
    let coef = nalgebra::DVector::from_column_slice(&alt.coef);
    let center = (a_tau * &coef)[0];
    if !(stat(center)? < q) {
        return Ok(None);
    }
    let row = a_tau.transpose();
    let se = alt
        .hessian
        .clone()
        .cholesky()
        .map(|c| (row.transpose() * c.inverse() * &row)[(0, 0)].sqrt())
        .filter(|v| v.is_finite() && *v > 0.0)
        .unwrap_or(1.0)
        .min(MAX_HALF_WIDTH);
    let lo = endpoint(&stat, center, -1.0, se, q)?;
    let hi = endpoint(&stat, center, 1.0, se, q)?;
    Ok(Some([lo, hi]))
}

/// Boundary of the accepted interval on one side of `center`. The bracket
/// doubles from `step` until rejection or `MAX_HALF_WIDTH`, then bisects.
fn endpoint(stat: &dyn Fn(f64) -> Result<f64>, center: f64, dir: f64, step: f64, q: f64) -> Result<f64> {
    let mut inside = 0.0;
    let mut width = step;
    loop {
        if stat(center + dir * width)? >= q {
            break;
        }
        inside = width;
        if width >= MAX_HALF_WIDTH {
            return Ok(center + dir * MAX_HALF_WIDTH);
        }
        width = (2.0 * width).min(MAX_HALF_WIDTH);
    }
    let mut outside = width;
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        let s = stat(center + dir * mid)?;
        if (s - q).abs() <= ENDPOINT_TOL && s < q {
            return Ok(center + dir * mid);
        }
        if s < q {
            inside = mid;
        } else {
            outside = mid;
        }
        if outside - inside <= 1e-12 * (1.0 + center.abs()) {
            break;
        }
    }
    Ok(center + dir * inside)
}
