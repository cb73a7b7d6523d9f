//! Joint fits of `(beta, sigma)` for a fixed repro noise vector `eps`:
//! `sum_i L((2y_i - 1)(x_i'beta + sigma * eps_i)) + penalty(beta)`, with
//! `sigma` free and unpenalized.
//!
//! The hinge loss is optimized through a quadratically smoothed surrogate,
//! tightened by continuation on cold starts.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cd::{Iterate, Outcome, Problem, Settings};
use super::loss::{log1pexp, MarginLoss};
use crate::error::{invalid, Error, Result};
use crate::sampler::RngStream;
use crate::types::{Dataset, Loss, SupportSet};

/// Smoothing width of the hinge surrogate in the adaptive fits.
pub const HINGE_WIDTH: f64 = 1e-4;
const HINGE_CONTINUATION: [f64; 5] = [1.0, 0.1, 0.01, 1e-3, HINGE_WIDTH];
/// Smoothing width used by the ridge pilot.
const RIDGE_HINGE_WIDTH: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Minimized objective (smoothed loss for hinge fits).
    pub objective: f64,
    pub converged: bool,
    /// Penalty level the fit was computed at.
    pub lambda: f64,
}

impl JointFit {
    pub fn support(&self) -> SupportSet {
        SupportSet::from_nonzero(&self.beta)
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }
}

/// How the pilot fit turns into penalty weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyWeights {
    /// One weight `1 / ||pilot||_1` shared by every coefficient.
    Global,
    /// Adaptive-lasso weights `1 / |pilot_j|`.
    #[default]
    PerCoordinate,
}

/// Penalty multipliers per coefficient: 0 leaves a coefficient free and
/// infinity pins it at zero.
pub fn penalty_factors(pilot: &JointFit, mode: PenaltyWeights, unpenalized: &[usize]) -> Result<Vec<f64>> {
    let l1 = pilot.l1_norm();
    if !(l1 > 0.0) || !l1.is_finite() {
        return Err(Error::DegeneratePilot);
    }
    let mut f: Vec<f64> = match mode {
        PenaltyWeights::Global => vec![1.0 / l1; pilot.beta.len()],
        PenaltyWeights::PerCoordinate => pilot
            .beta
            .iter()
            .map(|b| if *b == 0.0 { f64::INFINITY } else { 1.0 / b.abs() })
            .collect(),
    };
    for &j in unpenalized {
        if j >= f.len() {
            return Err(Error::IndexOutOfRange { index: j, len: f.len() });
        }
        f[j] = 0.0;
    }
    Ok(f)
}

/// Exact (unsmoothed) loss summed over observations.
pub fn joint_loss_sum(data: &Dataset, eps: &[f64], loss: Loss, beta: &[f64], sigma: f64) -> f64 {
    let eta = data.x() * DVector::from_column_slice(beta);
    eta.iter()
        .zip(eps)
        .zip(data.y())
        .map(|((e, z), &y)| {
            let t = (2.0 * y as f64 - 1.0) * (e + sigma * z);
            match loss {
                Loss::Logistic => log1pexp(-t),
                Loss::Hinge => (1.0 - t).max(0.0),
            }
        })
        .sum()
}

fn settings(loss: Loss) -> Settings {
    match loss {
        Loss::Logistic => Settings {
            kkt_tol: 1e-7,
            obj_tol: 1e-12,
            max_newton: 200,
            max_rounds: 50,
            max_sweeps: 1000,
        },
        // the smoothed hinge has curvature 1/width on a thin band, which
        // makes exact inner solves slow; inexact Newton steps are enough
        Loss::Hinge => Settings {
            kkt_tol: 1e-6,
            obj_tol: 1e-10,
            max_newton: 50,
            max_rounds: 50,
            max_sweeps: 20,
        },
    }
}

struct JointProblem<'a> {
    prob: Problem<'a>,
    loss: Loss,
    p: usize,
}

impl<'a> JointProblem<'a> {
    fn new(data: &'a Dataset, eps: &'a [f64], signs: &'a [f64], loss: Loss) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        if eps.len() != n {
            return Err(Error::DimensionMismatch(format!("{} noise values for {} rows", eps.len(), n)));
        }
        let mut cols: Vec<&[f64]> = (0..p).map(|j| data.column(j)).collect();
        cols.push(eps);
        Ok(JointProblem {
            prob: Problem {
                cols,
                signs,
                scale: 1.0,
                loss: MarginLoss::Logistic,
                pen: vec![0.0; p + 1],
            },
            loss,
            p,
        })
    }

    fn set_penalty(&mut self, lambda: f64, factors: &[f64]) {
        for j in 0..self.p {
            self.prob.pen[j] = if factors[j] == 0.0 { 0.0 } else { lambda * factors[j] };
        }
        self.prob.pen[self.p] = 0.0;
    }

    fn solve(&mut self, it: &mut Iterate, active: &mut [bool], cold: bool) -> Outcome {
        match self.loss {
            Loss::Logistic => {
                self.prob.loss = MarginLoss::Logistic;
                self.prob.solve(it, active, &settings(self.loss))
            }
            Loss::Hinge => {
                let widths: &[f64] = if cold { &HINGE_CONTINUATION } else { &[HINGE_WIDTH] };
                let mut out = None;
                for &h in widths {
                    self.prob.loss = MarginLoss::SmoothHinge(h);
                    out = Some(self.prob.solve(it, active, &settings(self.loss)));
                }
                out.expect("nonempty continuation")
            }
        }
    }

    fn fit(&self, it: &Iterate, out: &Outcome, lambda: f64) -> JointFit {
        JointFit {
            beta: it.w[..self.p].to_vec(),
            sigma: it.w[self.p],
            objective: out.objective,
            converged: out.converged,
            lambda,
        }
    }

    /// Fit with every penalized coefficient pinned at zero.
    fn null_fit(&mut self, factors: &[f64]) -> (Iterate, Outcome, Vec<bool>) {
        let n = self.prob.n();
        for j in 0..self.p {
            self.prob.pen[j] = if factors[j] == 0.0 { 0.0 } else { f64::INFINITY };
        }
        self.prob.pen[self.p] = 0.0;
        let mut it = Iterate::zeros(n, self.p + 1);
        let mut active: Vec<bool> = factors.iter().map(|&f| f == 0.0).collect();
        active.push(true);
        let out = self.solve(&mut it, &mut active, true);
        (it, out, active)
    }
}

/// Minimizes `sum L + lambda * ||beta||_1 / ||pilot.beta||_1` from a cold start.
pub fn fit_adaptive_joint(data: &Dataset, eps_star: &[f64], loss: Loss, lambda: f64, pilot: &JointFit) -> Result<JointFit> {
    let factors = penalty_factors(pilot, PenaltyWeights::Global, &[])?;
    fit_penalized_joint(data, eps_star, loss, lambda, &factors)
}

/// Single fit with explicit per-coefficient penalty factors.
pub fn fit_penalized_joint(data: &Dataset, eps_star: &[f64], loss: Loss, lambda: f64, factors: &[f64]) -> Result<JointFit> {
    if !(lambda >= 0.0) {
        return Err(invalid("penalty level must be nonnegative"));
    }
    if factors.len() != data.p() {
        return Err(Error::DimensionMismatch(format!("{} penalty factors for {} columns", factors.len(), data.p())));
    }
    let signs = data.signs();
    let mut jp = JointProblem::new(data, eps_star, &signs, loss)?;
    let (mut it, _, mut active) = jp.null_fit(factors);
    jp.set_penalty(lambda, factors);
    let out = jp.solve(&mut it, &mut active, true);
    Ok(jp.fit(&it, &out, lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPath {
    pub lambdas: Vec<f64>,
    pub fits: Vec<JointFit>,
}

/// Warm-started sweep over `n_lambda` log-spaced penalty levels from the
/// smallest level that zeroes every penalized coefficient down to
/// `ratio` times it. With `cap`, the sweep stops after the first fit whose
/// support exceeds `cap`.
pub fn adaptive_joint_path(
    data: &Dataset,
    eps_star: &[f64],
    loss: Loss,
    factors: &[f64],
    n_lambda: usize,
    ratio: f64,
    cap: Option<usize>,
) -> Result<JointPath> {
    let p = data.p();
    if factors.len() != p {
        return Err(Error::DimensionMismatch(format!("{} penalty factors for {} columns", factors.len(), p)));
    }
    if n_lambda < 1 || !(ratio > 0.0 && ratio <= 1.0) {
        return Err(invalid("adaptive path needs n_lambda >= 1 and ratio in (0,1]"));
    }
    if factors.iter().any(|f| f.is_nan() || *f < 0.0) {
        return Err(invalid("penalty factors must be nonnegative"));
    }
    let signs = data.signs();
    let mut jp = JointProblem::new(data, eps_star, &signs, loss)?;
    let (mut it, mut out, mut active) = jp.null_fit(factors);
    let lambda_max = factors
        .iter()
        .zip(&out.grad)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, g)| g.abs() / f)
        .fold(0.0, f64::max);
    let mut path = JointPath {
        lambdas: Vec::new(),
        fits: Vec::new(),
    };
    if !(lambda_max > 0.0) {
        // nothing can enter: the null fit is the whole path
        path.lambdas.push(0.0);
        path.fits.push(jp.fit(&it, &out, 0.0));
        return Ok(path);
    }
    let denom = (n_lambda.max(2) - 1) as f64;
    for k in 0..n_lambda {
        let lam = lambda_max * ratio.powf(k as f64 / denom);
        if k > 0 {
            let prev = path.lambdas[k - 1];
            jp.set_penalty(lam, factors);
            for j in 0..p {
                if factors[j] > 0.0 && out.grad[j].abs() >= (2.0 * lam - prev) * factors[j] {
                    active[j] = true;
                }
            }
            out = jp.solve(&mut it, &mut active, false);
        } else {
            jp.set_penalty(lam, factors);
            out.objective = jp.prob.objective(&it);
        }
        let fit = jp.fit(&it, &out, lam);
        let card = fit.support().len();
        path.lambdas.push(lam);
        path.fits.push(fit);
        if cap.is_some_and(|c| card > c) {
            break;
        }
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeOptions {
    /// Explicit penalty grid; defaults to `n_grid` log-spaced values below
    /// the level that zeroes `beta`.
    pub grid: Option<Vec<f64>>,
    pub folds: usize,
    pub n_grid: usize,
    pub seed: u64,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            grid: None,
            folds: 3,
            n_grid: 10,
            seed: 0,
        }
    }
}

/// Fold label of each row: a seeded permutation dealt round-robin.
pub fn cv_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut RngStream::new(seed, 0x0f01_d5).rng());
    let mut label = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        label[i] = pos % folds;
    }
    label
}

/// Pilot fit `sum L + lambda * ||beta||_2` with `lambda` picked by K-fold
/// cross-validation on held-out mean loss.
pub fn fit_ridge_joint(data: &Dataset, eps_star: &[f64], loss: Loss) -> Result<JointFit> {
    fit_ridge_joint_with(data, eps_star, loss, &RidgeOptions::default())
}

pub fn fit_ridge_joint_with(data: &Dataset, eps_star: &[f64], loss: Loss, opts: &RidgeOptions) -> Result<JointFit> {
    let n = data.n();
    if eps_star.len() != n {
        return Err(Error::DimensionMismatch(format!("{} noise values for {} rows", eps_star.len(), n)));
    }
    if opts.folds < 2 || n < opts.folds {
        return Err(Error::TooFewRows {
            needed: opts.folds.max(2),
            got: n,
        });
    }
    let grid = match &opts.grid {
        Some(g) => {
            if g.is_empty() || g.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("ridge grid must be nonempty, finite and nonnegative"));
            }
            let mut g = g.clone();
            g.sort_by(|a, b| b.total_cmp(a));
            g
        }
        None => {
            let top = 0.95 * ridge_lambda_max(data, eps_star, loss);
            let m = opts.n_grid.max(1);
            (0..m)
                .map(|k| top * 1e-2f64.powf(k as f64 / (m.max(2) - 1) as f64))
                .collect()
        }
    };
    let chosen = if grid.len() == 1 {
        grid[0]
    } else {
        let labels = cv_folds(n, opts.folds, opts.seed);
        let per_fold: Vec<Vec<f64>> = (0..opts.folds)
            .into_par_iter()
            .map(|f| {
                let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
                let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
                let dtr = data.select_rows(&train);
                let etr: Vec<f64> = train.iter().map(|&i| eps_star[i]).collect();
                let dte = data.select_rows(&test);
                let ete: Vec<f64> = test.iter().map(|&i| eps_star[i]).collect();
                let mut w = vec![0.0; data.p() + 1];
                let mut held_out = Vec::with_capacity(grid.len());
                for (g, &lam) in grid.iter().enumerate() {
                    w = ridge_fit(&dtr, &etr, loss, lam, &w, g > 0, CV_TOL).0;
                    let (beta, sigma) = w.split_at(data.p());
                    held_out.push(joint_loss_sum(&dte, &ete, loss, beta, sigma[0]) / n as f64);
                }
                held_out
            })
            .collect();
        // summed in fold order so the result does not depend on scheduling
        let mut cv = vec![0.0; grid.len()];
        for fold in &per_fold {
            for (c, v) in cv.iter_mut().zip(fold) {
                *c += v;
            }
        }
        // ties go to the heavier penalty (grid is decreasing)
        let mut best = 0;
        for g in 1..grid.len() {
            if cv[g] < cv[best] {
                best = g;
            }
        }
        grid[best]
    };
    let (w, objective, converged) = ridge_fit(data, eps_star, loss, chosen, &vec![0.0; data.p() + 1], false, FINAL_TOL);
    let (beta, sigma) = w.split_at(data.p());
    Ok(JointFit {
        beta: beta.to_vec(),
        sigma: sigma[0],
        objective,
        converged,
        lambda: chosen,
    })
}

fn ridge_margin_loss(loss: Loss, width: f64) -> MarginLoss {
    match loss {
        Loss::Logistic => MarginLoss::Logistic,
        Loss::Hinge => MarginLoss::SmoothHinge(width),
    }
}

/// Euclidean norm of the loss gradient in `beta` at the best `sigma`-only fit.
fn ridge_lambda_max(data: &Dataset, eps: &[f64], loss: Loss) -> f64 {
    let (w, _, _) = ridge_fit(data, eps, loss, f64::INFINITY, &vec![0.0; data.p() + 1], false, FINAL_TOL);
    let ml = ridge_margin_loss(loss, RIDGE_HINGE_WIDTH);
    let sigma = w[data.p()];
    let signs = data.signs();
    let g = DVector::from_iterator(
        data.n(),
        eps.iter().zip(&signs).map(|(e, s)| ml.d1(s * sigma * e) * s),
    );
    data.x().tr_mul(&g).norm()
}

// Relative step tolerance of the cross-validation fits and of the final refit.
const CV_TOL: f64 = 1e-4;
const FINAL_TOL: f64 = 1e-9;

/// Returns `(w, objective, converged)` with `w = (beta, sigma)`. Cold hinge
/// fits tighten the smoothing by continuation.
fn ridge_fit(data: &Dataset, eps: &[f64], loss: Loss, lambda: f64, start: &[f64], warm: bool, tol: f64) -> (Vec<f64>, f64, bool) {
    match loss {
        Loss::Logistic => ridge_fista(data, eps, MarginLoss::Logistic, lambda, start, tol),
        Loss::Hinge => {
            let widths: &[f64] = if warm { &[RIDGE_HINGE_WIDTH] } else { &[1.0, 0.1, RIDGE_HINGE_WIDTH] };
            let mut w = start.to_vec();
            let mut res = (w.clone(), f64::NAN, false);
            for &h in widths {
                res = ridge_fista(data, eps, ridge_margin_loss(loss, h), lambda, &w, tol);
                w = res.0.clone();
            }
            res
        }
    }
}

/// Accelerated proximal gradient with backtracking and adaptive restart.
fn ridge_fista(data: &Dataset, eps: &[f64], ml: MarginLoss, lambda: f64, start: &[f64], tol: f64) -> (Vec<f64>, f64, bool) {
    let (n, p) = (data.n(), data.p());
    let x = data.x();
    let signs = data.signs();
    let epsv = DVector::from_column_slice(eps);
    let eta_of = |w: &DVector<f64>| -> DVector<f64> { x * w.rows(0, p) + &epsv * w[p] };
    let smooth = |eta: &DVector<f64>| -> f64 { eta.iter().zip(&signs).map(|(e, s)| ml.value(s * e)).sum() };
    let grad_of = |eta: &DVector<f64>| -> DVector<f64> {
        let g = DVector::from_iterator(n, eta.iter().zip(&signs).map(|(e, s)| ml.d1(s * e) * s));
        let mut out = DVector::zeros(p + 1);
        out.rows_mut(0, p).copy_from(&x.tr_mul(&g));
        out[p] = epsv.dot(&g);
        out
    };
    let pen = |w: &DVector<f64>| -> f64 {
        let nb = w.rows(0, p).norm();
        if nb == 0.0 {
            0.0
        } else {
            lambda * nb
        }
    };
    let prox = |v: &DVector<f64>, step: f64| -> DVector<f64> {
        let mut out = v.clone();
        let nb = v.rows(0, p).norm();
        let shrink = if nb == 0.0 { 0.0 } else { (1.0 - step * lambda / nb).max(0.0) };
        out.rows_mut(0, p).scale_mut(shrink);
        out
    };

    let mut w = DVector::from_column_slice(start);
    let mut eta_w = eta_of(&w);
    let mut f = smooth(&eta_w) + pen(&w);
    let mut z = w.clone();
    let mut eta_z = eta_w.clone();
    let mut tk: f64 = 1.0;
    let mut lip = 1.0;
    let mut converged = false;
    for _ in 0..5000 {
        let fz = smooth(&eta_z);
        let gz = grad_of(&eta_z);
        let mut next;
        let mut eta_next;
        let mut s_next;
        loop {
            next = prox(&(&z - &gz * (1.0 / lip)), 1.0 / lip);
            eta_next = eta_of(&next);
            s_next = smooth(&eta_next);
            let diff = &next - &z;
            let bound = fz + gz.dot(&diff) + 0.5 * lip * diff.norm_squared();
            if s_next <= bound + 1e-12 * fz.abs().max(1.0) || lip > 1e12 {
                break;
            }
            lip *= 2.0;
        }
        let f_next = s_next + pen(&next);
        let step = (&next - &w).norm();
        if f_next > f {
            // restart momentum from the last accepted point
            z = w.clone();
            eta_z = eta_w.clone();
            tk = 1.0;
            if (f_next - f).abs() <= 1e-13 * f.abs().max(1.0) {
                converged = true;
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let mom = (tk - 1.0) / t_next;
        z = &next + (&next - &w) * mom;
        // the predictor is linear in w
        eta_z = &eta_next + (&eta_next - &eta_w) * mom;
        tk = t_next;
        let rel = (f - f_next) / f.abs().max(1.0);
        w = next;
        eta_w = eta_next;
        f = f_next;
        lip *= 0.95;
        if step <= tol * (1.0 + w.norm()) && rel <= tol * tol {
            converged = true;
            break;
        }
    }
    (w.as_slice().to_vec(), f, converged)
}
