use repro_logit::candidate::{build_candidate_set, EbicConfig};
use repro_logit::coef_inference::{ci_single_coef, region_abeta};
use repro_logit::model_confidence::model_confidence_set;
use repro_logit::sampler::{draw_ar_gaussian, draw_logistic, synth_response};
use repro_logit::{CandidateSet, Dataset, InferenceConfig, LinearTarget, Loss, RngStream, SupportSet, ThetaPoint};

fn simulate(seed: u64, n: usize, p: usize, beta: &[f64]) -> Dataset {
    let x = draw_ar_gaussian(RngStream::new(seed, 1), n, p, 0.2).unwrap();
    let eps = draw_logistic(RngStream::new(seed, 2), n);
    let theta = ThetaPoint::new(SupportSet::first(beta.len()), beta.to_vec()).unwrap();
    let y = synth_response(&x, &theta, &eps).unwrap();
    Dataset::new(x, y).unwrap()
}

fn config(seed: u64) -> InferenceConfig {
    InferenceConfig {
        d: 20,
        m: 40,
        seed,
        ..InferenceConfig::default()
    }
}

#[test]
fn end_to_end_small_problem() {
    let data = simulate(5, 200, 30, &[4.0, -3.0, 2.5]);
    let cfg = config(9);
    let cands = build_candidate_set(&data, &cfg, &EbicConfig::default()).unwrap();
    let tau0 = SupportSet::first(3);
    assert!(cands.contains(&tau0), "candidates {:?}", cands.models());

    let conf = model_confidence_set(&data, &cands, &cfg).unwrap();
    assert!(conf.models.iter().all(|m| cands.contains(m)));
    assert_eq!(conf.reports.len(), cands.len());

    for (j, truth) in [(0, 4.0), (1, -3.0), (2, 2.5)] {
        let iv = ci_single_coef(&data, &cands, j, 0.95, false).unwrap();
        assert!(!iv.is_empty());
        assert!(iv.measure() < 10.0, "j={j} {iv:?}");
        // a loose sanity window, not a coverage claim
        assert!(iv.intervals.iter().any(|[lo, hi]| lo - 3.0 <= truth && truth <= hi + 3.0));
    }
    let mut beta = vec![0.0; 30];
    beta[..3].copy_from_slice(&[4.0, -3.0, 2.5]);
    let joint = region_abeta(&data, &cands, &LinearTarget::identity(30).unwrap(), 0.95).unwrap();
    let far: Vec<f64> = beta.iter().map(|b| b + 5.0).collect();
    assert!(!joint.contains(&far).unwrap());
}

#[test]
fn hinge_loss_runs_end_to_end() {
    let data = simulate(6, 150, 20, &[4.0, 3.0]);
    let cfg = InferenceConfig {
        loss: Loss::Hinge,
        ..config(2)
    };
    let cands = build_candidate_set(&data, &cfg, &EbicConfig::default()).unwrap();
    assert!(!cands.is_empty());
    let conf = model_confidence_set(&data, &cands, &cfg).unwrap();
    assert!(conf.models.len() <= cands.len());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let data = simulate(7, 120, 25, &[3.0, 2.0]);
    let cfg = config(4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let c = build_candidate_set(&data, &cfg, &EbicConfig::default()).unwrap();
            let m = model_confidence_set(&data, &c, &cfg).unwrap();
            let iv = ci_single_coef(&data, &c, 0, 0.95, true).unwrap();
            (c, m.reports, iv)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn candidate_set_json_shape() {
    let data = simulate(8, 100, 10, &[3.0]);
    let cands = build_candidate_set(&data, &config(1), &EbicConfig::default()).unwrap();
    let v: serde_json::Value = serde_json::to_value(&cands).unwrap();
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), cands.len());
    assert!(models.iter().all(|m| m.is_array()));
    let prov = v["provenance"].as_array().unwrap();
    assert_eq!(prov.len(), cands.len());
    assert!(prov[0][0].get("draw").is_some() && prov[0][0].get("xi").is_some());

    let back: CandidateSet = serde_json::from_value(v).unwrap();
    assert_eq!(back.models(), cands.models());
    let mut back = back;
    assert!(!back.insert_model(cands.models()[0].clone()));
}
