//! Monte Carlo nuclear statistic and the model confidence set.
//!
//! For a candidate `theta = (tau, beta_tau)`, synthetic responses are drawn
//! from `theta` and each is passed through the lasso selector `tilde_tau`
//! (largest path model with at most `|tau|` nonzeros). The statistic is the
//! fraction of draws whose selected model is strictly more frequent than the
//! model selected on the observed responses.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{draw_logistic, synth_response, RngStream};
use crate::solvers::{lasso_path_xy, mle_logistic, support_at_cardinality, LassoOptions};
use crate::types::{labels_degenerate, BetaMode, CandidateSet, Dataset, InferenceConfig, SupportSet, ThetaPoint};

/// Stream family of the nuclear-statistic noise draws.
pub const NUCLEAR_STREAM: u64 = 0x2c1e;
/// Evaluation budget of the profile search.
pub const PROFILE_MAX_EVALS: usize = 200;
/// Extra path points beyond `|tau|` before the selector stops sweeping.
const SELECTOR_SLACK: usize = 3;

/// Largest model with at most `k` nonzeros on the L1 logistic path of
/// `(x, y)`. Degenerate labels select the empty model.
pub fn model_selector_tilde_tau(x: &DMatrix<f64>, y: &[u8], k: usize) -> Result<SupportSet> {
    if k == 0 || labels_degenerate(y) {
        return Ok(SupportSet::empty());
    }
    let opts = LassoOptions {
        stop_at_cardinality: Some(k + SELECTOR_SLACK),
        ..LassoOptions::default()
    };
    let path = lasso_path_xy(x, y, &opts)?;
    Ok(support_at_cardinality(&path, k))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEntry {
    pub model: SupportSet,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearReport {
    pub tau: SupportSet,
    pub t_hat: f64,
    pub beta_used: ThetaPoint,
    pub beta_mode: BetaMode,
    pub tilde_tau_obs: SupportSet,
    /// Selected models over the `m` draws, sorted by model.
    pub frequency_table: Vec<FrequencyEntry>,
    /// The maximum likelihood fit for `tau` did not converge to a finite
    /// point; `beta_used` is its last iterate.
    pub separated: bool,
}

/// Shared noise for every statistic evaluated in one run.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    draws: Vec<Vec<f64>>,
}

impl NoiseBank {
    pub fn new(stream: RngStream, n: usize, m: usize) -> Self {
        NoiseBank {
            draws: (0..m).map(|j| draw_logistic(stream.derive(j as u64), n)).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.draws.len()
    }

    pub fn draws(&self) -> &[Vec<f64>] {
        &self.draws
    }
}

/// The nuclear statistic at one `theta` with `m` fresh draws from `stream`.
pub fn nuclear_stat(data: &Dataset, theta: &ThetaPoint, m: usize, stream: RngStream) -> Result<NuclearReport> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    let bank = NoiseBank::new(stream, data.n(), m);
    let obs = model_selector_tilde_tau(data.x(), data.y(), theta.support().len())?;
    nuclear_stat_with(data, theta, &bank, &obs)
}

/// Statistic with pre-drawn noise and a precomputed observed selection.
pub fn nuclear_stat_with(data: &Dataset, theta: &ThetaPoint, bank: &NoiseBank, obs: &SupportSet) -> Result<NuclearReport> {
    let (t_hat, table) = tabulate(data, theta, bank, obs)?;
    Ok(NuclearReport {
        tau: theta.support().clone(),
        t_hat,
        beta_used: theta.clone(),
        beta_mode: BetaMode::Mle,
        tilde_tau_obs: obs.clone(),
        frequency_table: table,
        separated: false,
    })
}

fn tabulate(data: &Dataset, theta: &ThetaPoint, bank: &NoiseBank, obs: &SupportSet) -> Result<(f64, Vec<FrequencyEntry>)> {
    let k = theta.support().len();
    let selected: Vec<SupportSet> = bank
        .draws()
        .par_iter()
        .map(|eps| {
            let y = synth_response(data.x(), theta, eps)?;
            model_selector_tilde_tau(data.x(), &y, k)
        })
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<&SupportSet, usize> = BTreeMap::new();
    for s in &selected {
        *counts.entry(s).or_insert(0) += 1;
    }
    let obs_count = counts.get(obs).copied().unwrap_or(0);
    let exceed = selected.iter().filter(|s| counts[s] > obs_count).count();
    let table = counts
        .into_iter()
        .map(|(model, count)| FrequencyEntry {
            model: model.clone(),
            count,
        })
        .collect();
    Ok((exceed as f64 / bank.m() as f64, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub models: Vec<SupportSet>,
    pub reports: Vec<NuclearReport>,
}

/// Candidates whose statistic is below `alpha`; `alpha >= 1` keeps every one.
pub fn select_models(reports: &[NuclearReport], alpha: f64) -> Vec<SupportSet> {
    reports
        .iter()
        .filter(|r| alpha >= 1.0 || r.t_hat < alpha)
        .map(|r| r.tau.clone())
        .collect()
}

/// Evaluates the statistic for each candidate and keeps those below
/// `config.alpha`. All candidates share the same `m` noise draws.
pub fn model_confidence_set(data: &Dataset, cands: &CandidateSet, config: &InferenceConfig) -> Result<ConfidenceSet> {
    config.validate()?;
    if cands.is_empty() {
        return Err(invalid("candidate set is empty"));
    }
    let bank = NoiseBank::new(RngStream::new(config.seed, NUCLEAR_STREAM), data.n(), config.m);
    let mut obs_by_size: BTreeMap<usize, SupportSet> = BTreeMap::new();
    for tau in cands.models() {
        if !obs_by_size.contains_key(&tau.len()) {
            obs_by_size.insert(tau.len(), model_selector_tilde_tau(data.x(), data.y(), tau.len())?);
        }
    }
    let reports: Vec<NuclearReport> = cands
        .models()
        .par_iter()
        .map(|tau| candidate_report(data, tau, &bank, &obs_by_size[&tau.len()], config.beta_mode))
        .collect::<Result<_>>()?;
    Ok(ConfidenceSet {
        models: select_models(&reports, config.alpha),
        reports,
    })
}

fn candidate_report(data: &Dataset, tau: &SupportSet, bank: &NoiseBank, obs: &SupportSet, mode: BetaMode) -> Result<NuclearReport> {
    let fit = mle_logistic(data, tau)?;
    let start = ThetaPoint::new(tau.clone(), fit.coef.clone()).map_err(|_| {
        Error::InvalidArgument(format!("non-finite maximum likelihood iterate for {tau}"))
    })?;
    let mut report = nuclear_stat_with(data, &start, bank, obs)?;
    report.separated = fit.separated;
    if mode == BetaMode::Profile && !tau.is_empty() {
        report.beta_mode = BetaMode::Profile;
        let steps: Vec<f64> = standard_errors(&fit.hessian)
            .unwrap_or_else(|| vec![0.1; tau.len()]);
        let mut best = (report.t_hat, start.coef().to_vec());
        let mut failure = None;
        let mut objective = |b: &[f64]| -> f64 {
            if failure.is_some() || b.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            let theta = ThetaPoint::new(tau.clone(), b.to_vec()).expect("finite coefficients");
            match tabulate(data, &theta, bank, obs) {
                Ok((t, _)) => {
                    if t < best.0 {
                        best = (t, b.to_vec());
                    }
                    t
                }
                Err(e) => {
                    failure = Some(e);
                    f64::INFINITY
                }
            }
        };
        // the start point is already evaluated
        nelder_mead(&mut objective, start.coef(), &steps, report.t_hat, PROFILE_MAX_EVALS - 1);
        if let Some(e) = failure {
            return Err(e);
        }
        if best.0 < report.t_hat {
            let theta = ThetaPoint::new(tau.clone(), best.1)?;
            let (t, table) = tabulate(data, &theta, bank, obs)?;
            report.t_hat = t;
            report.frequency_table = table;
            report.beta_used = theta;
        }
    }
    Ok(report)
}

fn standard_errors(info: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inv = info.clone().cholesky()?.inverse();
    let se: Vec<f64> = (0..inv.nrows()).map(|i| inv[(i, i)].sqrt()).collect();
    se.iter().all(|v| v.is_finite() && *v > 0.0).then_some(se)
}

/// Derivative-free simplex minimization (Nelder and Mead) with the standard
/// reflection, expansion, contraction and shrink coefficients. `f0` is the
/// known value at `x0`; at most `max_evals` further evaluations are made.
pub fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], steps: &[f64], f0: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let k = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..k {
        if evals >= max_evals {
            break;
        }
        let mut v = x0.to_vec();
        v[i] += steps[i];
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    if simplex.len() < k + 1 {
        let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        return best;
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[k].1 - simplex[0].1;
        if spread == 0.0 && simplex_diameter(&simplex) < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|c| simplex[..k].iter().map(|(v, _)| v[c]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..k)
                .map(|c| centroid[c] + t * (simplex[k].0[c] - centroid[c]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals >= max_evals {
                simplex[k] = (xr, fr);
                break;
            }
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            if evals >= max_evals {
                break;
            }
            let (xc, fc) = if fr < simplex[k].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[k].1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for i in 1..=k {
                    if evals >= max_evals {
                        break;
                    }
                    let v: Vec<f64> = (0..k).map(|c| best[c] + 0.5 * (simplex[i].0[c] - best[c])).collect();
                    let fv = eval(&v, &mut evals);
                    simplex[i] = (v, fv);
                }
            }
        }
    }
    simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty")
}

fn simplex_diameter(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let base = &simplex[0].0;
    simplex[1..]
        .iter()
        .map(|(v, _)| v.iter().zip(base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}
