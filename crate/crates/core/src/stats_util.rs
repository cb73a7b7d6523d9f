//! Numerical primitives: log-gamma and the regularized incomplete gamma
//! function, chi-squared quantiles, SVD rank, interval-union algebra and the
//! mean(sd) summaries used for reporting.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7), valid for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `log C(n, k)` through log-gamma.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn chi2_cdf(df: usize, x: f64) -> f64 {
    gamma_p(df as f64 / 2.0, x / 2.0)
}

fn chi2_ln_pdf(df: usize, x: f64) -> f64 {
    let k = df as f64 / 2.0;
    (k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)
}

/// The `alpha`-quantile of the chi-squared distribution with `df` degrees of
/// freedom: safeguarded Newton iterations inside a shrinking bisection bracket,
/// absolute tolerance 1e-10.
pub fn chi2_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 {
        return Err(invalid("chi-squared degrees of freedom must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("quantile level must lie in (0,1), got {alpha}")));
    }
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while chi2_cdf(df, hi) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..500 {
        let f = chi2_cdf(df, x) - alpha;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let pdf = chi2_ln_pdf(df, x).exp();
        let newton = if pdf > 0.0 && pdf.is_finite() { x - f / pdf } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        if step < 1e-13 * x.max(1.0) || hi - lo < 1e-12 {
            break;
        }
    }
    Ok(x)
}

/// Number of singular values above `tol_scale * max(rows, cols) * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>, tol_scale: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let cutoff = tol_scale * a.nrows().max(a.ncols()) as f64 * smax;
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Default relative cutoff for [`numerical_rank`].
pub const RANK_TOL: f64 = 1e-10;

/// Sorted union of disjoint closed intervals, plus an optional point mass at 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    pub intervals: Vec<[f64; 2]>,
    /// Set when some contribution was the singleton `{0}`.
    pub contains_point_zero: bool,
}

impl IntervalUnion {
    /// Lebesgue measure (the point mass contributes nothing).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|[lo, hi]| hi - lo).sum()
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.contains_point_zero && v == 0.0)
            || self.intervals.iter().any(|&[lo, hi]| lo <= v && v <= hi)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty() && !self.contains_point_zero
    }
}

/// Merges overlapping or touching closed intervals into a sorted disjoint union.
pub fn merge_intervals(raw: &[[f64; 2]]) -> Result<IntervalUnion> {
    for &[lo, hi] in raw {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(invalid("interval endpoints must be finite"));
        }
        if lo > hi {
            return Err(invalid(format!("interval [{lo}, {hi}] has lo > hi")));
        }
    }
    let mut v = raw.to_vec();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => out.push(iv),
        }
    }
    Ok(IntervalUnion {
        intervals: out,
        contains_point_zero: false,
    })
}

/// Mean and sample standard deviation (divisor `n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_reps: usize,
}

/// Mean(sd) cells keyed by (scenario, method, metric), in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn push(&mut self, scenario: &str, method: &str, metric: &str, values: &[f64]) {
        let (mean, std) = mean_std(values);
        self.rows.push(SummaryRow {
            scenario: scenario.to_string(),
            method: method.to_string(),
            metric: metric.to_string(),
            mean,
            std,
            n_reps: values.len(),
        });
    }

    pub fn get(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric)
    }
}
