//! Margin losses and their derivatives.

/// `log(1 + e^x)` without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(pi / (1 - pi))`.
pub fn logit(pi: f64) -> f64 {
    (pi / (1.0 - pi)).ln()
}

/// A loss of the margin `t = (2y - 1) * eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarginLoss {
    /// `log(1 + e^{-t})`
    Logistic,
    /// Hinge `max(0, 1 - t)` with a quadratic piece of width `h` below 1.
    SmoothHinge(f64),
}

impl MarginLoss {
    pub fn value(self, t: f64) -> f64 {
        match self {
            MarginLoss::Logistic => log1pexp(-t),
            MarginLoss::SmoothHinge(h) => {
                let u = 1.0 - t;
                if u <= 0.0 {
                    0.0
                } else if u < h {
                    u * u / (2.0 * h)
                } else {
                    u - h / 2.0
                }
            }
        }
    }

    pub fn d1(self, t: f64) -> f64 {
        match self {
            MarginLoss::Logistic => -sigmoid(-t),
            MarginLoss::SmoothHinge(h) => {
                let u = 1.0 - t;
                if u <= 0.0 {
                    0.0
                } else if u < h {
                    -u / h
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn d2(self, t: f64) -> f64 {
        match self {
            MarginLoss::Logistic => {
                let s = sigmoid(t);
                s * (1.0 - s)
            }
            MarginLoss::SmoothHinge(h) => {
                let u = 1.0 - t;
                if u > 0.0 && u < h {
                    1.0 / h
                } else {
                    0.0
                }
            }
        }
    }

    /// Lower bound on the curvature used by quadratic models.
    pub(crate) fn curvature_floor(self) -> f64 {
        match self {
            MarginLoss::Logistic => 1e-5,
            MarginLoss::SmoothHinge(_) => 0.25,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_extremes() {
        assert_eq!(log1pexp(1000.0), 1000.0);
        assert!(log1pexp(-1000.0) >= 0.0);
        assert!((log1pexp(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((logit(sigmoid(1.7)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for loss in [MarginLoss::Logistic, MarginLoss::SmoothHinge(0.3)] {
            for &t in &[-4.0, -0.5, 0.0, 0.8, 0.95, 2.0] {
                let fd = (loss.value(t + h) - loss.value(t - h)) / (2.0 * h);
                assert!((fd - loss.d1(t)).abs() < 1e-6 * (1.0 + fd.abs()), "{loss:?} t={t}");
                let fd2 = (loss.d1(t + h) - loss.d1(t - h)) / (2.0 * h);
                assert!((fd2 - loss.d2(t)).abs() < 1e-5 * (1.0 + fd2.abs()), "{loss:?} t={t}");
            }
        }
    }

    #[test]
    fn smooth_hinge_shape() {
        let l = MarginLoss::SmoothHinge(1e-4);
        assert_eq!(l.value(1.0), 0.0);
        assert_eq!(l.value(3.0), 0.0);
        assert!((l.value(0.0) - (1.0 - 0.5e-4)).abs() < 1e-15);
    }
}
