//! Simulation designs: the four dense-signal models, the weak-signal model
//! and their desk-scale counterparts.

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub d: usize,
    /// Nonzero coefficients; the true support is the first `s` columns.
    pub beta_nonzero: Vec<f64>,
    /// AR(1) correlation of the training design.
    pub rho: f64,
    /// AR(1) correlation of the new cases.
    pub rho_new: f64,
    pub n_new: usize,
    pub replications: usize,
    pub alpha: f64,
}

const DENSE: [f64; 4] = [5.0, 4.0, 3.0, 2.0];
const WEAKER: [f64; 4] = [5.0, 4.0, 3.0, 1.0];
const WEAK: [f64; 6] = [5.0, 4.0, 3.0, 1.0, 0.5, 0.2];

impl Scenario {
    fn build(name: &str, n: usize, p: usize, d: usize, beta: &[f64], replications: usize) -> Self {
        Scenario {
            name: name.to_string(),
            n,
            p,
            s: beta.len(),
            d,
            beta_nonzero: beta.to_vec(),
            rho: 0.2,
            rho_new: 0.3,
            n_new: 2,
            replications,
            alpha: 0.95,
        }
    }

    /// Full-scale designs M1 to M5.
    pub fn full(name: &str) -> CliResult<Self> {
        Ok(match name {
            "M1" => Self::build("M1", 400, 1000, 4000, &DENSE, 100),
            "M2" => Self::build("M2", 500, 1000, 2000, &DENSE, 100),
            "M3" => Self::build("M3", 700, 1000, 10000, &WEAKER, 100),
            "M4" => Self::build("M4", 900, 1000, 10000, &WEAKER, 100),
            "M5" => Self::build("M5", 300, 500, 10000, &WEAK, 100),
            other => return Err(CliError::UnknownScenario(other.to_string())),
        })
    }

    /// Desk-scale presets `M1s` to `M5s` (fewer columns, draws and
    /// replications, same signal shapes) plus a `tiny` smoke design.
    pub fn desk(name: &str) -> CliResult<Self> {
        Ok(match name {
            "M1s" => Self::build("M1s", 240, 150, 100, &DENSE, 50),
            "M2s" => Self::build("M2s", 300, 150, 100, &DENSE, 50),
            "M3s" => Self::build("M3s", 420, 150, 200, &WEAKER, 50),
            "M4s" => Self::build("M4s", 540, 150, 200, &WEAKER, 50),
            "M5s" => Self::build("M5s", 300, 100, 200, &WEAK, 50),
            "tiny" => Self::build("tiny", 80, 20, 5, &[3.0, -2.0], 1),
            other => return Err(CliError::UnknownScenario(other.to_string())),
        })
    }

    /// Looks up a preset; full-scale names need `full_scale`.
    pub fn by_name(name: &str, full_scale: bool) -> CliResult<Self> {
        match Self::desk(name) {
            Ok(s) => Ok(s),
            Err(_) if full_scale => Self::full(name),
            Err(e) => {
                if Self::full(name).is_ok() {
                    Err(CliError::Invalid(format!("scenario `{name}` is full scale; pass --full-scale to run it")))
                } else {
                    Err(e)
                }
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Invalid(format!("scenario {}: {m}", self.name)));
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        if self.s > self.p {
            return bad(format!("s = {} exceeds p = {}", self.s, self.p));
        }
        if self.beta_nonzero.len() != self.s {
            return bad(format!("{} nonzero coefficients for s = {}", self.beta_nonzero.len(), self.s));
        }
        if self.beta_nonzero.iter().any(|b| !b.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        if !(self.rho.abs() < 1.0 && self.rho_new.abs() < 1.0) {
            return bad("AR parameters must lie in (-1, 1)".into());
        }
        if self.d == 0 || self.replications == 0 {
            return bad("d and replications must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        Ok(())
    }

    pub fn beta_dense(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.p];
        b[..self.s].copy_from_slice(&self.beta_nonzero);
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["M1", "M2", "M3", "M4", "M5"] {
            Scenario::full(name).unwrap().validate().unwrap();
            Scenario::desk(&format!("{name}s")).unwrap().validate().unwrap();
        }
        let m2 = Scenario::desk("M2s").unwrap();
        assert_eq!((m2.n, m2.p, m2.s, m2.d), (300, 150, 4, 100));
        assert_eq!(Scenario::full("M5").unwrap().beta_nonzero, WEAK.to_vec());
    }

    #[test]
    fn full_scale_needs_flag() {
        assert!(Scenario::by_name("M3", false).is_err());
        assert_eq!(Scenario::by_name("M3", true).unwrap().n, 700);
        assert!(matches!(Scenario::by_name("M9", true), Err(CliError::UnknownScenario(_))));
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut s = Scenario::desk("tiny").unwrap();
        s.s = 3;
        assert!(s.validate().is_err());
        let mut s = Scenario::desk("tiny").unwrap();
        s.p = 1;
        assert!(s.validate().is_err());
    }
}
