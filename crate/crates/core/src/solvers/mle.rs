//! Low-dimensional logistic maximum likelihood, optionally under linear
//! equality constraints on the coefficients.

use nalgebra::{DMatrix, DVector};

use super::loss::{log1pexp, sigmoid};
use crate::error::{Error, Result};
use crate::types::{Dataset, SupportSet};

const JITTER: f64 = 1e-8;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub coef: Vec<f64>,
    pub loglik: f64,
    /// Negative Hessian of the log-likelihood at `coef`.
    pub hessian: DMatrix<f64>,
    /// The likelihood has no finite maximizer (or Newton failed to find it);
    /// `coef` is the last iterate.
    pub separated: bool,
}

/// `-sum_i log(1 + exp(-s_i eta_i))`.
pub fn loglik_from_eta(eta: &[f64], signs: &[f64]) -> f64 {
    -eta.iter().zip(signs).map(|(e, s)| log1pexp(-s * e)).sum::<f64>()
}

/// Log-likelihood of coefficients `coef` on the columns `support`.
pub fn log_likelihood(data: &Dataset, support: &SupportSet, coef: &[f64]) -> f64 {
    let xs = data.restrict(support);
    let eta = &xs * DVector::from_column_slice(coef);
    loglik_from_eta(eta.as_slice(), &data.signs())
}

fn neg_hessian(w: &DMatrix<f64>, eta: &[f64]) -> DMatrix<f64> {
    let k = w.ncols();
    let mut wd = w.clone();
    for (i, e) in eta.iter().enumerate() {
        let pi = sigmoid(*e);
        let s = (pi * (1.0 - pi)).sqrt();
        for c in 0..k {
            wd[(i, c)] *= s;
        }
    }
    wd.transpose() * wd
}

struct NewtonOut {
    v: DVector<f64>,
    loglik: f64,
    separated: bool,
}

/// Maximizes the log-likelihood of `eta = offset + W v` over `v`.
fn newton(w: &DMatrix<f64>, offset: &DVector<f64>, signs: &[f64], start: Option<&DVector<f64>>) -> NewtonOut {
    let k = w.ncols();
    let mut v = start.cloned().unwrap_or_else(|| DVector::zeros(k));
    let mut eta = offset + w * &v;
    let mut ll = loglik_from_eta(eta.as_slice(), signs);
    if k == 0 {
        return NewtonOut { v, loglik: ll, separated: false };
    }
    let wt = w.transpose();
    let mut converged = false;
    let mut separated = false;
    for _ in 0..MAX_ITER {
        let resid = DVector::from_iterator(eta.len(), eta.iter().zip(signs).map(|(e, s)| s * sigmoid(-s * e)));
        let grad = &wt * resid;
        if grad.amax() < GRAD_TOL {
            converged = true;
            break;
        }
        let mut h = neg_hessian(w, eta.as_slice());
        for c in 0..k {
            h[(c, c)] += JITTER;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match h.lu().solve(&grad) {
                Some(s) => s,
                None => grad.clone(),
            },
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &v + &step * t;
            let cand_eta = offset + w * &cand;
            let cand_ll = loglik_from_eta(cand_eta.as_slice(), signs);
            if cand_ll >= ll {
                let gain = cand_ll - ll;
                v = cand;
                eta = cand_eta;
                ll = cand_ll;
                moved = gain > 0.0 || t == 1.0;
                break;
            }
            t *= 0.5;
        }
        if v.norm() > DIVERGENCE_NORM {
            separated = true;
            break;
        }
        if !moved {
            // no ascent available at machine precision
            converged = grad.amax() < 1e-6;
            break;
        }
    }
    if !converged {
        separated = true;
    }
    if !separated {
        // a direction classifying every observation strictly correctly means
        // the supremum is approached only at infinity
        let free = w * &v;
        if free.iter().zip(signs).all(|(f, s)| s * f > 0.0) {
            separated = true;
        }
    }
    NewtonOut { v, loglik: ll, separated }
}

/// Unconstrained maximum likelihood on the columns `support`.
pub fn mle_logistic(data: &Dataset, support: &SupportSet) -> Result<MleFit> {
    check_support(data, support)?;
    let xs = data.restrict(support);
    let signs = data.signs();
    let out = newton(&xs, &DVector::zeros(data.n()), &signs, None);
    let eta = &xs * &out.v;
    Ok(MleFit {
        coef: out.v.as_slice().to_vec(),
        loglik: out.loglik,
        hessian: neg_hessian(&xs, eta.as_slice()),
        separated: out.separated,
    })
}

fn check_support(data: &Dataset, support: &SupportSet) -> Result<()> {
    if let Some(&j) = support.indices().last() {
        if j >= data.p() {
            return Err(Error::IndexOutOfRange { index: j, len: data.p() });
        }
    }
    if support.len() > data.n() {
        return Err(Error::TooFewRows {
            needed: support.len(),
            got: data.n(),
        });
    }
    Ok(())
}

/// Particular solution and orthonormal null-space basis of `a b = t`.
pub(crate) struct ConstraintSolution {
    pub particular: DVector<f64>,
    pub null_basis: DMatrix<f64>,
}

pub(crate) fn solve_constraint(a: &DMatrix<f64>, t: &[f64]) -> Result<ConstraintSolution> {
    let (q, k) = a.shape();
    if t.len() != q {
        return Err(Error::DimensionMismatch(format!("target of length {} for {} constraints", t.len(), q)));
    }
    let tv = DVector::from_column_slice(t);
    if k == 0 {
        return if tv.norm() <= 1e-8 {
            Ok(ConstraintSolution {
                particular: DVector::zeros(0),
                null_basis: DMatrix::zeros(0, 0),
            })
        } else {
            Err(Error::IncompatibleTarget)
        };
    }
    if q == 0 {
        return Ok(ConstraintSolution {
            particular: DVector::zeros(k),
            null_basis: DMatrix::identity(k, k),
        });
    }
    // pad to at least k rows so the thin SVD exposes the full right basis
    let rows = q.max(k);
    let mut padded = DMatrix::zeros(rows, k);
    padded.view_mut((0, 0), (q, k)).copy_from(a);
    let mut tp = DVector::zeros(rows);
    tp.rows_mut(0, q).copy_from(&tv);
    let svd = padded.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = crate::stats_util::RANK_TOL * q.max(k) as f64 * smax;
    let mut particular = DVector::zeros(k);
    let mut null_rows = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > cutoff {
            let coef = u.column(i).dot(&tp) / s;
            particular += vt.row(i).transpose() * coef;
        } else {
            null_rows.push(i);
        }
    }
    let resid = (a * &particular - &tv).norm();
    if resid > 1e-8 * (1.0 + tv.norm()) {
        return Err(Error::IncompatibleTarget);
    }
    let mut null_basis = DMatrix::zeros(k, null_rows.len());
    for (c, &i) in null_rows.iter().enumerate() {
        null_basis.set_column(c, &vt.row(i).transpose());
    }
    Ok(ConstraintSolution { particular, null_basis })
}

/// Maximum likelihood on `support` subject to `a_restricted * b = t`, where
/// `a_restricted` holds the columns of the target matrix indexed by `support`.
pub fn mle_logistic_constrained(data: &Dataset, support: &SupportSet, a_restricted: &DMatrix<f64>, t: &[f64]) -> Result<MleFit> {
    check_support(data, support)?;
    if a_restricted.ncols() != support.len() {
        return Err(Error::DimensionMismatch(format!(
            "restricted target has {} columns for a support of size {}",
            a_restricted.ncols(),
            support.len()
        )));
    }
    let sol = solve_constraint(a_restricted, t)?;
    let xs = data.restrict(support);
    let signs = data.signs();
    let offset = &xs * &sol.particular;
    let w = &xs * &sol.null_basis;
    let out = newton(&w, &offset, &signs, None);
    let coef = &sol.particular + &sol.null_basis * &out.v;
    let eta = &xs * &coef;
    Ok(MleFit {
        coef: coef.as_slice().to_vec(),
        loglik: out.loglik,
        hessian: neg_hessian(&xs, eta.as_slice()),
        separated: out.separated,
    })
}
