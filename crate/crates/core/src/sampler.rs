//! Seeded generation of logistic noise, synthetic responses and AR(1)
//! Gaussian covariates.
//!
//! Every random quantity is drawn from an [`RngStream`], a `(seed, stream_id)`
//! pair backed by a ChaCha8 generator. Equal pairs give bit-identical output
//! regardless of which thread consumes them.

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::ThetaPoint;

/// Identifies one reproducible random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream labelled by `tag`; children of distinct tags never share ids
    /// in practice (64-bit mixing).
    pub fn derive(&self, tag: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x51_7c_c1_b7_27_22_0a_95))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inverse CDF of the standard logistic distribution.
pub fn logistic_quantile(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// `n` i.i.d. standard logistic draws.
pub fn draw_logistic(stream: RngStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n)
        .map(|_| logistic_quantile(rng.sample::<f64, _>(Open01)))
        .collect()
}

/// `1{x_tau^T beta_tau + eps > 0}` row by row. Exact zeros map to 0.
pub fn synth_response(x: &DMatrix<f64>, theta: &ThetaPoint, eps: &[f64]) -> Result<Vec<u8>> {
    let n = x.nrows();
    if eps.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} noise values for {} rows",
            eps.len(),
            n
        )));
    }
    if let Some(&j) = theta.support().indices().last() {
        if j >= x.ncols() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: x.ncols(),
            });
        }
    }
    let mut eta = eps.to_vec();
    let data = x.as_slice();
    for (&j, &b) in theta.support().indices().iter().zip(theta.coef()) {
        let col = &data[j * n..(j + 1) * n];
        for (e, v) in eta.iter_mut().zip(col) {
            *e += b * v;
        }
    }
    Ok(eta.into_iter().map(|v| u8::from(v > 0.0)).collect())
}

/// `n` rows from `N(0, Sigma)` with `Sigma_ij = rho^|i-j|`, via the AR(1)
/// recursion `X_j = rho X_{j-1} + sqrt(1 - rho^2) Z_j`.
pub fn draw_ar_gaussian(stream: RngStream, n: usize, p: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(invalid(format!("AR coefficient must satisfy |rho| < 1, got {rho}")));
    }
    let mut rng = stream.rng();
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { z } else { rho * prev + innov * z };
            x[(i, j)] = v;
            prev = v;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SupportSet;
    use proptest::prelude::*;

    fn logistic_cdf(t: f64) -> f64 {
        1.0 / (1.0 + (-t).exp())
    }

    #[test]
    fn inverse_cdf_values() {
        assert_eq!(logistic_quantile(0.5), 0.0);
        assert!((logistic_quantile(0.9) - 9f64.ln()).abs() < 1e-12);
        assert!((logistic_quantile(0.9) - 2.19722).abs() < 1e-5);
    }

    #[test]
    fn logistic_draws_pass_ks() {
        let mut v = draw_logistic(RngStream::new(7, 1), 100_000);
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = logistic_cdf(t);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "ks = {ks}");
    }

    #[test]
    fn streams_are_deterministic_and_independent() {
        let a = draw_logistic(RngStream::new(3, 11), 1000);
        let b = draw_logistic(RngStream::new(3, 11), 1000);
        assert_eq!(a, b);
        let n = 100_000;
        let u = draw_logistic(RngStream::new(3, 11), n);
        let w = draw_logistic(RngStream::new(3, 12), n);
        let corr = correlation(&u, &w);
        assert!(corr.abs() < 0.02, "corr = {corr}");
        let base = RngStream::new(3, 0);
        assert_ne!(base.derive(1), base.derive(2));
        assert_eq!(base.derive(5), base.derive(5));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    fn sample_cov(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
        let n = x.nrows() as f64;
        let ma = x.column(a).sum() / n;
        let mb = x.column(b).sum() / n;
        x.column(a)
            .iter()
            .zip(x.column(b).iter())
            .map(|(u, v)| (u - ma) * (v - mb))
            .sum::<f64>()
            / (n - 1.0)
    }

    #[test]
    fn ar_gaussian_covariances() {
        let x = draw_ar_gaussian(RngStream::new(1, 2), 10_000, 4, 0.0).unwrap();
        for a in 0..4 {
            assert!((sample_cov(&x, a, a) - 1.0).abs() < 0.05);
            for b in (a + 1)..4 {
                assert!(sample_cov(&x, a, b).abs() < 0.05);
            }
        }
        let x = draw_ar_gaussian(RngStream::new(1, 3), 10_000, 3, 0.2).unwrap();
        assert!((sample_cov(&x, 0, 1) - 0.2).abs() < 0.05);
        assert!((sample_cov(&x, 0, 2) - 0.04).abs() < 0.05);
        let x = draw_ar_gaussian(RngStream::new(1, 4), 10_000, 3, 0.3).unwrap();
        assert!((sample_cov(&x, 1, 2) - 0.3).abs() < 0.05);
        assert!(draw_ar_gaussian(RngStream::new(1, 4), 5, 3, 1.0).is_err());
    }

    #[test]
    fn synth_response_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let zero = ThetaPoint::new(SupportSet::empty(), vec![]).unwrap();
        assert_eq!(synth_response(&x, &zero, &[-1.0, 2.0]).unwrap(), vec![0, 1]);
        let x = DMatrix::from_column_slice(1, 1, &[3.0]);
        let th = ThetaPoint::new(SupportSet::new([0]), vec![1.0]).unwrap();
        assert_eq!(synth_response(&x, &th, &[-2.0]).unwrap(), vec![1]);
        assert_eq!(synth_response(&x, &th, &[-3.0]).unwrap(), vec![0]);
        let bad = ThetaPoint::new(SupportSet::new([4]), vec![1.0]).unwrap();
        assert!(synth_response(&x, &bad, &[0.0]).is_err());
    }

    #[test]
    fn synth_response_inverts_generating_model() {
        let x = draw_ar_gaussian(RngStream::new(9, 0), 200, 6, 0.2).unwrap();
        let eps = draw_logistic(RngStream::new(9, 1), 200);
        let theta = ThetaPoint::new(SupportSet::new([0, 3]), vec![2.0, -1.5]).unwrap();
        let y = synth_response(&x, &theta, &eps).unwrap();
        let manual: Vec<u8> = (0..200)
            .map(|i| u8::from(2.0 * x[(i, 0)] - 1.5 * x[(i, 3)] + eps[i] > 0.0))
            .collect();
        assert_eq!(y, manual);
    }

    proptest! {
        #[test]
        fn synth_response_monotone_in_noise(
            xs in proptest::collection::vec(-3.0f64..3.0, 8),
            eps in proptest::collection::vec(-4.0f64..4.0, 8),
            bump in 0.0f64..5.0,
            which in 0usize..8,
        ) {
            let x = DMatrix::from_column_slice(8, 1, &xs);
            let th = ThetaPoint::new(SupportSet::new([0]), vec![1.3]).unwrap();
            let y0 = synth_response(&x, &th, &eps).unwrap();
            let mut e2 = eps.clone();
            e2[which] += bump;
            let y1 = synth_response(&x, &th, &e2).unwrap();
            for (a, b) in y0.iter().zip(&y1) {
                prop_assert!(b >= a);
            }
        }
    }
}
