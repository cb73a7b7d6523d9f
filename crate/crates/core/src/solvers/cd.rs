//! Proximal Newton coordinate descent for
//! `scale * sum_i phi(s_i * (Z w)_i) + sum_j pen_j |w_j|`.
//!
//! Each outer step builds a quadratic model of the loss at the current point,
//! minimizes model plus penalty by cyclic coordinate descent over an active
//! set, and takes an Armijo step along the result. Coordinates outside the
//! active set are admitted when they violate the optimality conditions.
//! A penalty of `f64::INFINITY` pins a coordinate at zero.

use super::loss::MarginLoss;

pub(crate) struct Problem<'a> {
    pub cols: Vec<&'a [f64]>,
    pub signs: &'a [f64],
    pub scale: f64,
    pub loss: MarginLoss,
    pub pen: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub kkt_tol: f64,
    /// Stop when the relative objective decrease of a step falls below this.
    pub obj_tol: f64,
    pub max_newton: usize,
    pub max_rounds: usize,
    /// Coordinate sweeps per quadratic model.
    pub max_sweeps: usize,
}

impl Settings {
    pub fn tight() -> Self {
        Settings {
            kkt_tol: 1e-10,
            obj_tol: 0.0,
            max_newton: 200,
            max_rounds: 100,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub converged: bool,
    pub objective: f64,
    /// Loss gradient at the returned point, every coordinate.
    pub grad: Vec<f64>,
}

/// Current iterate together with its linear predictor `Z w`.
#[derive(Debug, Clone)]
pub(crate) struct Iterate {
    pub w: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Iterate {
    pub fn zeros(n: usize, p: usize) -> Self {
        Iterate {
            w: vec![0.0; p],
            eta: vec![0.0; n],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

impl<'a> Problem<'a> {
    pub fn n(&self) -> usize {
        self.signs.len()
    }

    pub fn loss_value(&self, eta: &[f64]) -> f64 {
        self.scale
            * eta
                .iter()
                .zip(self.signs)
                .map(|(e, s)| self.loss.value(s * e))
                .sum::<f64>()
    }

    pub fn penalty_value(&self, w: &[f64]) -> f64 {
        w.iter()
            .zip(&self.pen)
            .filter(|(v, _)| **v != 0.0)
            .map(|(v, p)| p * v.abs())
            .sum()
    }

    pub fn objective(&self, it: &Iterate) -> f64 {
        self.loss_value(&it.eta) + self.penalty_value(&it.w)
    }

    /// Per-observation gradient weights `g` and curvatures `h`.
    fn sample_terms(&self, eta: &[f64], g: &mut [f64], h: &mut [f64]) {
        let floor = self.loss.curvature_floor();
        for i in 0..eta.len() {
            let s = self.signs[i];
            let m = s * eta[i];
            g[i] = self.scale * self.loss.d1(m) * s;
            h[i] = self.scale * self.loss.d2(m).max(floor);
        }
    }

    fn kkt(&self, j: usize, wj: f64, gj: f64) -> f64 {
        let pen = self.pen[j];
        if wj != 0.0 {
            (gj + pen * wj.signum()).abs()
        } else if pen.is_infinite() {
            0.0
        } else {
            (gj.abs() - pen).max(0.0)
        }
    }

    /// Full loss gradient at `eta`.
    pub fn gradient(&self, eta: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        self.sample_terms(eta, &mut g, &mut h);
        self.cols.iter().map(|c| dot(&g, c)).collect()
    }

    /// Minimizes from `it` in place. `active` marks coordinates optimized in
    /// the first round; it is updated with every admitted coordinate.
    pub fn solve(&self, it: &mut Iterate, active: &mut [bool], st: &Settings) -> Outcome {
        let n = self.n();
        let p = self.cols.len();
        for j in 0..p {
            if it.w[j] != 0.0 {
                active[j] = true;
            }
            if self.pen[j].is_infinite() {
                active[j] = false;
            }
        }
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut f = self.objective(it);
        let mut converged = false;

        for _round in 0..st.max_rounds {
            let act: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
            let mut grads = vec![0.0; act.len()];
            let mut diag = vec![0.0; act.len()];
            // target values of the model step; the direction is wt - w
            let mut wt = vec![0.0; act.len()];
            let mut inner_ok = act.is_empty();

            for _ in 0..st.max_newton {
                if act.is_empty() {
                    break;
                }
                self.sample_terms(&it.eta, &mut g, &mut h);
                let mut viol: f64 = 0.0;
                for (k, &j) in act.iter().enumerate() {
                    grads[k] = dot(&g, self.cols[j]);
                    viol = viol.max(self.kkt(j, it.w[j], grads[k]));
                }
                if viol <= st.kkt_tol {
                    inner_ok = true;
                    break;
                }
                let mut amax: f64 = 0.0;
                for (k, &j) in act.iter().enumerate() {
                    diag[k] = self.cols[j].iter().zip(&h).map(|(z, hh)| hh * z * z).sum();
                    amax = amax.max(diag[k]);
                }
                let inner_tol = ((1e-3 * viol).powi(2) / amax.max(f64::MIN_POSITIVE)).max(1e-300);
                for (k, &j) in act.iter().enumerate() {
                    wt[k] = it.w[j];
                }
                r.iter_mut().for_each(|v| *v = 0.0);
                for _sweep in 0..st.max_sweeps {
                    let mut maxchg: f64 = 0.0;
                    for (k, &j) in act.iter().enumerate() {
                        let a = diag[k];
                        if a <= 0.0 {
                            continue;
                        }
                        let col = self.cols[j];
                        let mut gq = grads[k];
                        for i in 0..n {
                            gq += h[i] * r[i] * col[i];
                        }
                        let u = wt[k];
                        let new = soft(u - gq / a, self.pen[j] / a);
                        let delta = new - u;
                        if delta != 0.0 {
                            wt[k] = new;
                            for i in 0..n {
                                r[i] += delta * col[i];
                            }
                            maxchg = maxchg.max(a * delta * delta);
                        }
                    }
                    if maxchg <= inner_tol {
                        break;
                    }
                }
                let mut descent = 0.0;
                for (k, &j) in act.iter().enumerate() {
                    descent += grads[k] * (wt[k] - it.w[j]);
                    let old = it.w[j].abs();
                    let new = wt[k].abs();
                    if self.pen[j] != 0.0 && old != new {
                        descent += self.pen[j] * (new - old);
                    }
                }
                if !(descent < 0.0) {
                    inner_ok = viol <= st.kkt_tol.max(1e-8);
                    break;
                }
                let pen_old = self.penalty_value(&it.w);
                let mut t = 1.0;
                let mut accepted = None;
                for _ in 0..40 {
                    for i in 0..n {
                        trial[i] = it.eta[i] + t * r[i];
                    }
                    let mut pen_new = pen_old;
                    for (k, &j) in act.iter().enumerate() {
                        if self.pen[j] != 0.0 {
                            let v = it.w[j] + t * (wt[k] - it.w[j]);
                            pen_new += self.pen[j] * (v.abs() - it.w[j].abs());
                        }
                    }
                    let f_new = self.loss_value(&trial) + pen_new;
                    if f_new <= f + 1e-2 * t * descent {
                        accepted = Some(f_new);
                        break;
                    }
                    t *= 0.5;
                }
                let Some(f_new) = accepted else {
                    inner_ok = viol <= st.kkt_tol.max(1e-8);
                    break;
                };
                for (k, &j) in act.iter().enumerate() {
                    it.w[j] = if t == 1.0 { wt[k] } else { it.w[j] + t * (wt[k] - it.w[j]) };
                }
                std::mem::swap(&mut it.eta, &mut trial);
                let rel = (f - f_new) / f_new.abs().max(1.0);
                f = f_new;
                if rel <= st.obj_tol {
                    inner_ok = true;
                    break;
                }
            }

            self.sample_terms(&it.eta, &mut g, &mut h);
            let mut added = false;
            for j in 0..p {
                if active[j] || self.pen[j].is_infinite() {
                    continue;
                }
                let gj = dot(&g, self.cols[j]);
                if self.kkt(j, 0.0, gj) > st.kkt_tol {
                    active[j] = true;
                    added = true;
                }
            }
            if !added {
                converged = inner_ok;
                break;
            }
        }
        let grad = self.gradient(&it.eta);
        Outcome {
            converged,
            objective: self.objective(it),
            grad,
        }
    }
}
