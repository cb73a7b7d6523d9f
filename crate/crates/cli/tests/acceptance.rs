//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion ids given as arguments restrict the run to those criteria.
//! Set `REPRO_ACCEPTANCE_OUT` to keep the scaled simulation records in a
//! directory (and resume from them on the next run).

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;
use repro_logit::coef_inference::region_abeta;
use repro_logit::model_confidence::{model_selector_tilde_tau, nuclear_stat};
use repro_logit::sampler::{draw_ar_gaussian, draw_logistic, synth_response};
use repro_logit::solvers::loss::MarginLoss;
use repro_logit::solvers::{lasso_kkt_violation, lasso_path_xy, mle_logistic, mle_logistic_constrained, LassoOptions};
use repro_logit::stats_util::chi2_quantile;
use repro_logit::{CandidateSet, Dataset, InferenceConfig, LinearTarget, Loss, RngStream, SupportSet, ThetaPoint};
use repro_logit_cli::harness::{run_scenario, RunOptions, RunSummary};
use repro_logit_cli::Scenario;
use statrs::distribution::{ContinuousCDF, Normal};

const SEED: u64 = 1;

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, title: &'static str, checks: &[(bool, String)]) -> Verdict {
    Verdict {
        id,
        title,
        pass: checks.iter().all(|c| c.0),
        detail: checks
            .iter()
            .map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "!" }))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn main() {
    let start = Instant::now();
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| wanted.is_empty() || wanted.contains(&id);
    let mut out = Vec::new();
    if (1..=5).any(want) {
        let runs = scaled_m2();
        let scaled: [(usize, fn(&[ScaledRun]) -> Verdict); 5] = [
            (1, candidate_coverage),
            (2, confidence_set),
            (3, coefficient_intervals),
            (4, joint_region),
            (5, case_probabilities),
        ];
        out.extend(scaled.iter().filter(|c| want(c.0)).map(|c| c.1(&runs)));
    }
    let rest: [(usize, fn() -> Verdict); 6] = [
        (6, oracle_calibration),
        (7, solver_certification),
        (8, nuclear_brute_force),
        (9, oracle_recovery),
        (10, distributions),
        (11, determinism),
    ];
    out.extend(rest.iter().filter(|c| want(c.0)).map(|c| c.1()));
    out.sort_by_key(|v| v.id);
    println!();
    for v in &out {
        println!(
            "criterion {:>2} {} {}: {}",
            v.id,
            if v.pass { "PASS" } else { "FAIL" },
            v.title,
            v.detail
        );
    }
    let failed = out.iter().filter(|v| !v.pass).count();
    println!(
        "acceptance: {} of {} passed in {:.1} min",
        out.len() - failed,
        out.len(),
        start.elapsed().as_secs_f64() / 60.0
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

struct ScaledRun {
    loss: Loss,
    run: RunSummary,
    elapsed: Duration,
}

fn scaled_m2() -> Vec<ScaledRun> {
    let (_keep, dir) = match std::env::var_os("REPRO_ACCEPTANCE_OUT") {
        Some(d) => (None, PathBuf::from(d)),
        None => {
            let t = tempfile::tempdir().expect("tempdir");
            let p = t.path().to_path_buf();
            (Some(t), p)
        }
    };
    let sc = Scenario::desk("M2s").expect("preset");
    [Loss::Logistic, Loss::Hinge]
        .into_iter()
        .map(|loss| {
            let cfg = InferenceConfig {
                d: sc.d,
                m: 100,
                loss,
                seed: SEED,
                alpha: sc.alpha,
                ..InferenceConfig::default()
            };
            let t = Instant::now();
            let run = run_scenario(&sc, &cfg, &dir, &RunOptions::default()).expect("scaled run");
            let elapsed = t.elapsed();
            eprintln!("scaled M2 {loss}: {} replications in {:.1} min", run.records.len(), elapsed.as_secs_f64() / 60.0);
            ScaledRun { loss, run, elapsed }
        })
        .collect()
}

fn metric(r: &ScaledRun, method: &str, name: &str) -> f64 {
    r.run
        .summary
        .get(method, name)
        .unwrap_or_else(|| panic!("missing {method}/{name}"))
        .mean
}

fn candidate_coverage(runs: &[ScaledRun]) -> Verdict {
    let mut checks = Vec::new();
    for r in runs {
        let m = r.loss.method_name();
        let cov = metric(r, m, "candidate_coverage");
        let size = metric(r, m, "candidate_size");
        checks.push((cov >= 0.90, format!("{} coverage {cov:.2} (>= 0.90)", r.loss)));
        checks.push((size <= 15.0, format!("{} mean size {size:.2} (<= 15)", r.loss)));
    }
    let total: f64 = runs.iter().map(|r| r.elapsed.as_secs_f64()).sum();
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    checks.push((
        true,
        format!("runtime {:.1} min on {cores} core(s), target 20 min on 8", total / 60.0),
    ));
    verdict(1, "candidate set", &checks)
}

fn confidence_set(runs: &[ScaledRun]) -> Verdict {
    let mut checks = Vec::new();
    for r in runs {
        let m = r.loss.method_name();
        let cov = metric(r, m, "confidence_coverage");
        let size = metric(r, m, "confidence_size");
        let cand = metric(r, m, "candidate_size");
        let nested = r
            .run
            .records
            .iter()
            .all(|rec| rec.confidence_models.iter().all(|g| rec.candidates.contains(g)));
        checks.push((cov >= 0.85, format!("{} coverage {cov:.2} (>= 0.85)", r.loss)));
        checks.push((size <= cand, format!("{} mean size {size:.2} vs candidates {cand:.2}", r.loss)));
        checks.push((nested, format!("{} subset of candidates in every replication", r.loss)));
    }
    verdict(2, "model confidence set", &checks)
}

fn coefficient_intervals(runs: &[ScaledRun]) -> Verdict {
    let mut checks = Vec::new();
    for r in runs {
        let m = r.loss.method_name();
        let sup = metric(r, m, "coef_coverage_support");
        let noise = metric(r, m, "coef_coverage_noise");
        let len = metric(r, m, "coef_length_support");
        let oracle = metric(r, "Oracle", "coef_length_support");
        checks.push(((0.88..=1.0).contains(&sup), format!("{} support coverage {sup:.3} in [0.88, 1]", r.loss)));
        checks.push((noise >= 0.97, format!("{} noise coverage {noise:.3} (>= 0.97)", r.loss)));
        checks.push((
            len <= 2.5 * oracle,
            format!("{} support length {len:.2} vs oracle {oracle:.2} (ratio {:.2} <= 2.5)", r.loss, len / oracle),
        ));
    }
    verdict(3, "single-coefficient intervals", &checks)
}

fn joint_region(runs: &[ScaledRun]) -> Verdict {
    let checks: Vec<_> = runs
        .iter()
        .map(|r| {
            let c = metric(r, r.loss.method_name(), "joint_coverage");
            ((0.85..=1.0).contains(&c), format!("{} coverage {c:.2} in [0.85, 1]", r.loss))
        })
        .collect();
    verdict(4, "joint region for beta", &checks)
}

fn case_probabilities(runs: &[ScaledRun]) -> Verdict {
    let mut checks = Vec::new();
    for r in runs {
        let c = metric(r, r.loss.method_name(), "case_prob_coverage");
        checks.push(((0.85..=1.0).contains(&c), format!("{} coverage {c:.2} in [0.85, 1]", r.loss)));
        let fr: Vec<_> = r.run.records.iter().filter_map(|rec| rec.full_rank.as_ref()).collect();
        let agree = fr.iter().filter(|f| f.case_region == f.joint_region).count();
        checks.push((
            agree == fr.len() && fr.len() == r.run.records.len(),
            format!("{} full-rank agreement {agree}/{}", r.loss, r.run.records.len()),
        ));
    }
    verdict(5, "case probabilities", &checks)
}

fn oracle_calibration() -> Verdict {
    const REPS: usize = 500;
    let (n, p, s) = (500, 10, 4);
    let beta: Vec<f64> = [5.0, 4.0, 3.0, 2.0].into_iter().chain(std::iter::repeat_n(0.0, p - s)).collect();
    let tau0 = SupportSet::first(s);
    let oracle = CandidateSet::from_models([tau0]);
    let mut rng = RngStream::new(SEED, 0x0c6).rng();
    let random = DMatrix::from_fn(2, p, |_, j| if j < s { rng.sample(rand_distr::StandardNormal) } else { 0.0 });
    let mut block = DMatrix::zeros(s, p);
    for i in 0..s {
        block[(i, i)] = 1.0;
    }
    let targets = [
        ("e1", LinearTarget::coordinate(p, 0).unwrap()),
        ("I_s", LinearTarget::new(block).unwrap()),
        ("random 2xp", LinearTarget::new(random).unwrap()),
    ];
    let rejections: Vec<[bool; 3]> = (0..REPS)
        .into_par_iter()
        .map(|r| {
            let base = RngStream::new(SEED, 0x0c7).derive(r as u64);
            let x = draw_ar_gaussian(base.derive(0), n, p, 0.2).unwrap();
            let eps = draw_logistic(base.derive(1), n);
            let y = synth_response(&x, &ThetaPoint::from_dense(&beta).unwrap(), &eps).unwrap();
            let data = Dataset::new(x, y).unwrap();
            let mut out = [false; 3];
            for (k, (_, a)) in targets.iter().enumerate() {
                let region = region_abeta(&data, &oracle, a, 0.95).unwrap();
                out[k] = !region.contains(&a.apply(&beta)).unwrap();
            }
            out
        })
        .collect();
    let checks: Vec<_> = targets
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let rate = rejections.iter().filter(|r| r[k]).count() as f64 / REPS as f64;
            ((rate - 0.05).abs() <= 0.025, format!("{name} rejection {rate:.3} in [0.025, 0.075]"))
        })
        .collect();
    verdict(6, "oracle chi-squared calibration", &checks)
}

fn solver_certification() -> Verdict {
    let results: Vec<(f64, f64, f64)> = (0..100)
        .into_par_iter()
        .map(|i| {
            let base = RngStream::new(SEED, 0x5e7).derive(i);
            let mut rng = base.rng();
            let n = rng.random_range(20..=60);
            let p = rng.random_range(2..=15);
            let x = draw_ar_gaussian(base.derive(0), n, p, 0.3).unwrap();
            let beta: Vec<f64> = (0..p).map(|j| if j < 3 { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
            let eps = draw_logistic(base.derive(1), n);
            let y = synth_response(&x, &ThetaPoint::from_dense(&beta).unwrap(), &eps).unwrap();
            if y.iter().all(|&v| v == y[0]) {
                return (0.0, 0.0, f64::NEG_INFINITY);
            }

            let path = lasso_path_xy(&x, &y, &LassoOptions::default()).unwrap();
            let kkt = path
                .lambdas
                .iter()
                .zip(&path.betas)
                .map(|(&l, b)| lasso_kkt_violation(&x, &y, b, l, None))
                .fold(0.0, f64::max);

            let mut grad_err: f64 = 0.0;
            for loss in [MarginLoss::Logistic, MarginLoss::SmoothHinge(0.5)] {
                for _ in 0..20 {
                    let t: f64 = rng.random_range(-6.0..6.0);
                    if let MarginLoss::SmoothHinge(w) = loss {
                        // skip the kinks of the piecewise loss
                        if (t - 1.0).abs() < 1e-3 || (t - (1.0 - w)).abs() < 1e-3 {
                            continue;
                        }
                    }
                    let h = 1e-6;
                    let fd1 = (loss.value(t + h) - loss.value(t - h)) / (2.0 * h);
                    let fd2 = (loss.d1(t + h) - loss.d1(t - h)) / (2.0 * h);
                    grad_err = grad_err
                        .max((loss.d1(t) - fd1).abs() / loss.d1(t).abs().max(1.0))
                        .max((loss.d2(t) - fd2).abs() / loss.d2(t).abs().max(1.0));
                }
            }

            let data = Dataset::new(x, y).unwrap();
            let k = p.min(4);
            let tau = SupportSet::first(k);
            let free = mle_logistic(&data, &tau).unwrap();
            let sup = if free.separated { 0.0 } else { free.loglik };
            let rows = rng.random_range(1..=k);
            let a = DMatrix::from_fn(rows, k, |_, _| rng.random_range(-1.0..1.0));
            let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (&a * nalgebra::DVector::from_vec(b)).iter().copied().collect();
            let excess = match mle_logistic_constrained(&data, &tau, &a, &t) {
                Ok(fit) => fit.loglik - sup,
                Err(_) => f64::NEG_INFINITY,
            };
            (kkt, grad_err, excess)
        })
        .collect();
    let kkt = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let grad = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let excess = results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        7,
        "solver certification",
        &[
            (kkt <= 1e-6, format!("max lasso KKT violation {kkt:.1e} (<= 1e-6)")),
            (grad <= 1e-6, format!("max derivative error {grad:.1e} (<= 1e-6)")),
            (excess <= 1e-8, format!("max constrained excess loglik {excess:.1e} (<= 1e-8)")),
        ],
    )
}

/// Tail fraction recomputed from scratch: own noise draws, own responses,
/// pairwise frequency counts.
fn brute_force_t_hat(data: &Dataset, theta: &ThetaPoint, m: usize, stream: RngStream) -> f64 {
    let (n, k) = (data.n(), theta.support().len());
    let beta = theta.dense(data.p());
    let selected: Vec<SupportSet> = (0..m)
        .map(|j| {
            let mut rng = stream.derive(j as u64).rng();
            let y: Vec<u8> = (0..n)
                .map(|i| {
                    let u: f64 = rng.sample(Open01);
                    let e = (u / (1.0 - u)).ln();
                    let eta: f64 = (0..data.p()).map(|c| data.x()[(i, c)] * beta[c]).sum();
                    u8::from(eta + e > 0.0)
                })
                .collect();
            model_selector_tilde_tau(data.x(), &y, k).unwrap()
        })
        .collect();
    let obs = model_selector_tilde_tau(data.x(), data.y(), k).unwrap();
    let freq = |s: &SupportSet| selected.iter().filter(|t| *t == s).count();
    let obs_freq = freq(&obs);
    selected.iter().filter(|s| freq(s) > obs_freq).count() as f64 / m as f64
}

fn nuclear_brute_force() -> Verdict {
    let mismatches: Vec<String> = (0..20u64)
        .into_par_iter()
        .filter_map(|i| {
            let base = RngStream::new(SEED, 0x8b).derive(i);
            let x = draw_ar_gaussian(base.derive(0), 30, 3, 0.2).unwrap();
            let beta = [1.5, -1.0, 0.0];
            let eps = draw_logistic(base.derive(1), 30);
            let y = synth_response(&x, &ThetaPoint::from_dense(&beta).unwrap(), &eps).unwrap();
            let data = Dataset::new(x, y).ok()?;
            let support = SupportSet::first(1 + (i as usize % 3));
            let coef: Vec<f64> = support.indices().iter().map(|&j| [1.2, -0.8, 0.5][j]).collect();
            let theta = ThetaPoint::new(support, coef).unwrap();
            let stream = base.derive(2);
            let lib = nuclear_stat(&data, &theta, 50, stream).unwrap().t_hat;
            let brute = brute_force_t_hat(&data, &theta, 50, stream);
            (lib != brute).then(|| format!("instance {i}: {lib} vs {brute}"))
        })
        .collect();
    verdict(
        8,
        "nuclear statistic vs brute force",
        &[(mismatches.is_empty(), format!("{} of 20 instances differ {:?}", mismatches.len(), mismatches))],
    )
}

/// Zero-one loss `#{i : y_i != 1{x_i'b + e_i > 0}}`.
fn zero_one(x: &DMatrix<f64>, y: &[u8], e: &[f64], cols: &[usize], b: &[f64]) -> usize {
    (0..x.nrows())
        .filter(|&i| {
            let eta: f64 = cols.iter().zip(b).map(|(&c, v)| x[(i, c)] * v).sum::<f64>() + e[i];
            u8::from(eta > 0.0) != y[i]
        })
        .count()
}

/// Exact minimum of the zero-one loss over coefficients on at most two
/// columns: the loss is constant on the cells of the line arrangement
/// `x_i'b + e_i = 0`, and every cell touches a vertex or a breakpoint.
fn min_zero_one(x: &DMatrix<f64>, y: &[u8], e: &[f64], cols: &[usize]) -> usize {
    let n = x.nrows();
    match cols.len() {
        0 => zero_one(x, y, e, cols, &[]),
        1 => {
            let c = cols[0];
            let mut pts: Vec<f64> = (0..n).filter(|&i| x[(i, c)] != 0.0).map(|i| -e[i] / x[(i, c)]).collect();
            pts.sort_by(f64::total_cmp);
            let mut probes = vec![pts[0] - 1.0, pts[pts.len() - 1] + 1.0];
            probes.extend(pts.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            probes.iter().map(|&b| zero_one(x, y, e, cols, &[b])).min().unwrap()
        }
        2 => {
            let (c1, c2) = (cols[0], cols[1]);
            let mut best = usize::MAX;
            for i in 0..n {
                for j in i + 1..n {
                    let (a1, a2, r1) = (x[(i, c1)], x[(i, c2)], -e[i]);
                    let (b1, b2, r2) = (x[(j, c1)], x[(j, c2)], -e[j]);
                    let det = a1 * b2 - a2 * b1;
                    if det.abs() < 1e-12 {
                        continue;
                    }
                    let v = [(r1 * b2 - a2 * r2) / det, (a1 * r2 - r1 * b1) / det];
                    // directions along the two lines through the vertex
                    let d1 = [a2, -a1];
                    let d2 = [b2, -b1];
                    let nrm = |d: [f64; 2]| (d[0] * d[0] + d[1] * d[1]).sqrt();
                    let (u1, u2) = (nrm(d1), nrm(d2));
                    let delta = 1e-7 * (1.0 + v[0].abs() + v[1].abs());
                    for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let b = [
                            v[0] + delta * (s1 * d1[0] / u1 + s2 * d2[0] / u2),
                            v[1] + delta * (s1 * d1[1] / u1 + s2 * d2[1] / u2),
                        ];
                        best = best.min(zero_one(x, y, e, cols, &b));
                        if best == 0 {
                            return 0;
                        }
                    }
                }
            }
            best
        }
        _ => unreachable!("at most two columns"),
    }
}

fn oracle_recovery() -> Verdict {
    const REPS: usize = 50;
    let (n, p, s) = (100, 8, 2);
    let beta: Vec<f64> = [4.0, -3.0].into_iter().chain(std::iter::repeat_n(0.0, p - s)).collect();
    let tau0 = SupportSet::first(s);
    let hits = (0..REPS)
        .into_par_iter()
        .filter(|&r| {
            let base = RngStream::new(SEED, 0x9e1).derive(r as u64);
            let x = draw_ar_gaussian(base.derive(0), n, p, 0.2).unwrap();
            let e = draw_logistic(base.derive(1), n);
            let y = synth_response(&x, &ThetaPoint::from_dense(&beta).unwrap(), &e).unwrap();
            // the true coefficients reach loss 0, so no support of size 3
            // can beat tau0 once ties go to the smaller model
            let mut best: Option<(usize, usize, SupportSet)> = None;
            let mut supports = vec![SupportSet::empty()];
            for a in 0..p {
                supports.push(SupportSet::new([a]));
                for b in a + 1..p {
                    supports.push(SupportSet::new([a, b]));
                }
            }
            for tau in supports {
                let loss = min_zero_one(&x, &y, &e, tau.indices());
                let key = (loss, tau.len());
                if best.as_ref().is_none_or(|b| key < (b.0, b.1)) {
                    best = Some((loss, tau.len(), tau));
                }
            }
            best.is_some_and(|b| b.2 == tau0 && b.0 == 0)
        })
        .count();
    let rate = hits as f64 / REPS as f64;
    verdict(
        9,
        "oracle support recovery",
        &[(rate >= 0.9, format!("recovered {hits}/{REPS} = {rate:.2} (>= 0.90)"))],
    )
}

fn distributions() -> Verdict {
    let n = 100_000;
    let mut v = draw_logistic(RngStream::new(SEED, 0xd15), n);
    v.sort_by(f64::total_cmp);
    let cdf = |x: f64| 1.0 / (1.0 + (-x).exp());
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    let normal = Normal::standard();
    let mut worst2: f64 = 0.0;
    let mut worst1: f64 = 0.0;
    for &a in &[0.5, 0.8, 0.9, 0.95, 0.975, 0.99, 0.999] {
        let q2 = chi2_quantile(2, a).unwrap();
        worst2 = worst2.max((q2 + 2.0 * (1.0 - a).ln()).abs());
        let z = normal.inverse_cdf(0.5 + a / 2.0);
        worst1 = worst1.max((chi2_quantile(1, a).unwrap() - z * z).abs());
    }
    verdict(
        10,
        "distributional checks",
        &[
            (ks < 0.01, format!("logistic KS {ks:.4} (< 0.01) at 1e5 draws")),
            (worst2 <= 1e-8, format!("df=2 quantile error {worst2:.1e}")),
            (worst1 <= 1e-8, format!("df=1 quantile error {worst1:.1e}")),
        ],
    )
}

fn determinism() -> Verdict {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_repro-logit"))
            .args(["--threads", threads, "--seed", "7", "--d", "8", "--m", "20", "--out"])
            .arg(dir.path())
            .args(["simulate", "--scenario", "tiny", "--reps", "3", "--noise-coefs", "5", "--format", "csv"])
            .output()
            .expect("spawn cli");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(dir.path().join("tiny-logistic.jsonl")).unwrap()
    };
    let one = run("1");
    let eight = run("8");
    verdict(
        11,
        "determinism across thread counts",
        &[(one == eight && !one.is_empty(), format!("{} bytes, identical: {}", one.len(), one == eight))],
    )
}
