//! Model candidate sets from repro noise draws.
//!
//! For each draw `eps*`, the penalized joint fit is swept along a penalty
//! path and, for every EBIC weight `xi`, the path point with the smallest
//! EBIC contributes its support.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampler::{draw_logistic, RngStream};
use crate::solvers::{
    adaptive_joint_path, fit_ridge_joint_with, joint_loss_sum, penalty_factors, JointFit, PenaltyWeights,
    RidgeOptions,
};
use crate::stats_util::ln_binomial;
use crate::types::{CandidateSet, Dataset, InferenceConfig, Loss, Provenance, SupportSet};

/// Stream family of the candidate-set noise draws.
pub const CANDIDATE_STREAM: u64 = 0xc4d1;

/// Noise stream of repro draw `j`; independent of the total draw count.
pub fn draw_stream(seed: u64, j: usize) -> RngStream {
    RngStream::new(seed, CANDIDATE_STREAM).derive(j as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbicConfig {
    pub xi_grid: Vec<f64>,
}

impl Default for EbicConfig {
    fn default() -> Self {
        EbicConfig {
            xi_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl EbicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.xi_grid.is_empty() {
            return Err(invalid("EBIC grid must be nonempty"));
        }
        if self.xi_grid.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid("EBIC weights must lie in [0,1]"));
        }
        Ok(())
    }
}

/// `2 * sum L + |tau| log n + 2 xi log C(p, |tau|)`; lower is better.
pub fn ebic_score(data: &Dataset, fit: &JointFit, eps_star: &[f64], xi: f64, loss: Loss) -> f64 {
    let k = fit.support().len();
    let loss_sum = joint_loss_sum(data, eps_star, loss, &fit.beta, fit.sigma);
    2.0 * loss_sum + k as f64 * (data.n() as f64).ln() + 2.0 * xi * ln_binomial(data.p(), k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOptions {
    /// Penalty levels swept per draw.
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub weights: PenaltyWeights,
    pub ridge: RidgeOptions,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            n_lambda: 30,
            lambda_ratio: 1e-3,
            weights: PenaltyWeights::PerCoordinate,
            ridge: RidgeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutcome {
    pub set: CandidateSet,
    pub failed_draws: usize,
}

pub fn build_candidate_set(data: &Dataset, config: &InferenceConfig, ebic: &EbicConfig) -> Result<CandidateSet> {
    build_candidate_set_with(data, config, ebic, &CandidateOptions::default()).map(|o| o.set)
}

pub fn build_candidate_set_with(
    data: &Dataset,
    config: &InferenceConfig,
    ebic: &EbicConfig,
    opts: &CandidateOptions,
) -> Result<CandidateOutcome> {
    config.validate()?;
    ebic.validate()?;
    let results: Vec<Result<Vec<(SupportSet, Provenance)>>> = (0..config.d)
        .into_par_iter()
        .map(|j| supports_for_draw(data, config, ebic, opts, j))
        .collect();
    let mut set = CandidateSet::new();
    let mut failed = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(found) => {
                for (s, prov) in found {
                    set.insert(s, prov);
                }
            }
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    if failed == config.d {
        return Err(Error::AllDrawsFailed {
            failed,
            total: config.d,
            last: Box::new(last_err.expect("at least one draw")),
        });
    }
    Ok(CandidateOutcome { set, failed_draws: failed })
}

/// Supports selected by each EBIC weight for repro draw `j`.
pub fn supports_for_draw(
    data: &Dataset,
    config: &InferenceConfig,
    ebic: &EbicConfig,
    opts: &CandidateOptions,
    j: usize,
) -> Result<Vec<(SupportSet, Provenance)>> {
    let (n, p) = (data.n(), data.p());
    let eps = draw_logistic(draw_stream(config.seed, j), n);
    let cap = config.support_cap(n, p);
    let factors = match opts.weights {
        // a shared weight only rescales the penalty axis, and the grid is
        // relative to its top, so the pilot norm drops out
        PenaltyWeights::Global => {
            let mut f = vec![1.0; p];
            for &u in &config.unpenalized {
                if u >= p {
                    return Err(Error::IndexOutOfRange { index: u, len: p });
                }
                f[u] = 0.0;
            }
            f
        }
        PenaltyWeights::PerCoordinate => {
            let ridge = RidgeOptions {
                seed: draw_stream(config.seed, j).derive(1).stream_id,
                ..opts.ridge.clone()
            };
            let pilot = fit_ridge_joint_with(data, &eps, config.loss, &ridge)?;
            penalty_factors(&pilot, PenaltyWeights::PerCoordinate, &config.unpenalized)?
        }
    };
    let path = adaptive_joint_path(data, &eps, config.loss, &factors, opts.n_lambda, opts.lambda_ratio, Some(cap))?;
    let scored: Vec<(SupportSet, &JointFit)> = path
        .fits
        .iter()
        .map(|f| (f.support(), f))
        .filter(|(s, _)| s.len() <= cap)
        .collect();
    let mut out = Vec::with_capacity(ebic.xi_grid.len());
    for &xi in &ebic.xi_grid {
        let mut best: Option<(f64, &SupportSet)> = None;
        for (s, fit) in &scored {
            let score = ebic_score(data, fit, &eps, xi, config.loss);
            if best.is_none_or(|(b, _)| score < b) {
                best = Some((score, s));
            }
        }
        if let Some((score, s)) = best {
            out.push((
                s.clone(),
                Provenance {
                    draw: j,
                    xi,
                    ebic: score,
                },
            ));
        }
    }
    Ok(out)
}
