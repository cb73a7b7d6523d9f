//! L1-penalized logistic regression along a decreasing grid of penalties.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cd::{Iterate, Problem, Settings};
use super::loss::MarginLoss;
use crate::error::{invalid, Error, Result};
use crate::types::{labels_degenerate, Dataset, SupportSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    pub supports: Vec<SupportSet>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    pub n_lambda: usize,
    /// `lambda_min / lambda_max`.
    pub ratio: f64,
    /// Per-coefficient penalty factors; 0 leaves a coefficient unpenalized.
    pub penalty_factors: Option<Vec<f64>>,
    /// Stop the sweep once a solution reaches this many nonzeros.
    pub stop_at_cardinality: Option<usize>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            n_lambda: 100,
            ratio: 1e-3,
            penalty_factors: None,
            stop_at_cardinality: None,
        }
    }
}

/// Full path of `(1/n) sum log(1 + exp(-(2y-1) x'b)) + lambda * sum w_j |b_j|`.
pub fn logistic_lasso_path(data: &Dataset, weights: Option<&[f64]>, n_lambda: usize) -> Result<LassoPath> {
    let opts = LassoOptions {
        n_lambda,
        penalty_factors: weights.map(<[f64]>::to_vec),
        ..LassoOptions::default()
    };
    lasso_path_xy(data.x(), data.y(), &opts)
}

/// Path on a raw design and label vector; avoids building a [`Dataset`] per
/// synthetic response.
pub fn lasso_path_xy(x: &DMatrix<f64>, y: &[u8], opts: &LassoOptions) -> Result<LassoPath> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {} rows", y.len(), n)));
    }
    if opts.n_lambda < 2 {
        return Err(invalid("a lasso path needs at least two penalty values"));
    }
    if !(opts.ratio > 0.0 && opts.ratio < 1.0) {
        return Err(invalid("lambda ratio must lie in (0,1)"));
    }
    if labels_degenerate(y) {
        return Err(Error::DegenerateLabels);
    }
    let factors = match &opts.penalty_factors {
        Some(w) => {
            if w.len() != p {
                return Err(Error::DimensionMismatch(format!("{} penalty factors for {} columns", w.len(), p)));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("penalty factors must be finite and nonnegative"));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(invalid("at least one coefficient must be penalized"));
            }
            w.clone()
        }
        None => vec![1.0; p],
    };
    let signs: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let data = x.as_slice();
    let cols: Vec<&[f64]> = (0..p).map(|j| &data[j * n..(j + 1) * n]).collect();
    let mut prob = Problem {
        cols,
        signs: &signs,
        scale: 1.0 / n as f64,
        loss: MarginLoss::Logistic,
        pen: factors.iter().map(|&w| if w > 0.0 { f64::INFINITY } else { 0.0 }).collect(),
    };
    let settings = Settings::tight();
    let mut it = Iterate::zeros(n, p);
    let mut active: Vec<bool> = factors.iter().map(|&w| w == 0.0).collect();
    let mut out = prob.solve(&mut it, &mut active, &settings);

    let lambda_max = factors
        .iter()
        .zip(&out.grad)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, g)| g.abs() / w)
        .fold(0.0, f64::max);
    if lambda_max <= 0.0 {
        return Err(invalid("loss gradient vanishes at the null fit; penalty path undefined"));
    }
    let m = opts.n_lambda;
    let lambdas: Vec<f64> = (0..m)
        .map(|k| lambda_max * opts.ratio.powf(k as f64 / (m - 1) as f64))
        .collect();

    let mut path = LassoPath {
        lambdas: Vec::with_capacity(m),
        betas: Vec::with_capacity(m),
        supports: Vec::with_capacity(m),
    };
    for (k, &lam) in lambdas.iter().enumerate() {
        if k > 0 {
            let prev = lambdas[k - 1];
            for j in 0..p {
                prob.pen[j] = lam * factors[j];
                // sequential strong rule
                if factors[j] > 0.0 && out.grad[j].abs() >= (2.0 * lam - prev) * factors[j] {
                    active[j] = true;
                }
            }
            out = prob.solve(&mut it, &mut active, &settings);
        }
        let support = SupportSet::from_nonzero(&it.w);
        let card = support.len();
        path.lambdas.push(lam);
        path.betas.push(it.w.clone());
        path.supports.push(support);
        if opts.stop_at_cardinality.is_some_and(|c| card >= c) {
            break;
        }
    }
    Ok(path)
}

/// Support of the path point with the largest cardinality not exceeding `k`;
/// ties go to the larger penalty.
pub fn support_at_cardinality(path: &LassoPath, k: usize) -> SupportSet {
    let mut best: Option<&SupportSet> = None;
    for s in &path.supports {
        if s.len() <= k && best.is_none_or(|b| s.len() > b.len()) {
            best = Some(s);
        }
    }
    best.cloned().unwrap_or_default()
}

/// Largest violation of the optimality conditions of the path objective at
/// `beta`.
pub fn lasso_kkt_violation(x: &DMatrix<f64>, y: &[u8], beta: &[f64], lambda: f64, factors: Option<&[f64]>) -> f64 {
    let (n, p) = x.shape();
    let signs: Vec<f64> = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    let data = x.as_slice();
    let factors = factors.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; p]);
    let prob = Problem {
        cols: (0..p).map(|j| &data[j * n..(j + 1) * n]).collect(),
        signs: &signs,
        scale: 1.0 / n as f64,
        loss: MarginLoss::Logistic,
        pen: factors.iter().map(|w| lambda * w).collect(),
    };
    let eta = x * nalgebra::DVector::from_column_slice(beta);
    let grad = prob.gradient(eta.as_slice());
    (0..p)
        .map(|j| {
            let pen = prob.pen[j];
            if beta[j] != 0.0 {
                (grad[j] + pen * beta[j].signum()).abs()
            } else {
                (grad[j].abs() - pen).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}
