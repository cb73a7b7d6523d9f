//! Replicated simulation runs: data generation, the full inference pipeline
//! per replication, JSON-lines output with resume, and summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use repro_logit::candidate::{build_candidate_set_with, CandidateOptions, EbicConfig};
use repro_logit::coef_inference::{ci_single_coef, region_abeta, region_case_probs};
use repro_logit::model_confidence::model_confidence_set;
use repro_logit::sampler::{draw_ar_gaussian, draw_logistic, synth_response};
use repro_logit::solvers::loss::sigmoid;
use repro_logit::stats_util::{IntervalUnion, SummaryTable};
use repro_logit::{CandidateSet, Dataset, InferenceConfig, LinearTarget, Loss, RngStream, SupportSet, ThetaPoint};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::report::{report_tables, ReportFormat};
use crate::scenario::Scenario;

/// Stream family of the simulated data; the inference streams hang off it.
pub const DATA_STREAM: u64 = 0xda7a;

/// Which coefficients get confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefSelection {
    /// The true support plus this many seeded noise coordinates.
    Sampled(usize),
    All,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub coefs: CoefSelection,
    /// Also compare the case-probability region at `p + 10` new cases with
    /// the joint region.
    pub full_rank_check: bool,
    pub resume: bool,
    pub ebic: EbicConfig,
    pub candidate: CandidateOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            coefs: CoefSelection::Sampled(20),
            full_rank_check: true,
            resume: true,
            ebic: EbicConfig::default(),
            candidate: CandidateOptions::default(),
        }
    }
}

/// Everything random in one replication.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub data: Dataset,
    pub beta0: Vec<f64>,
    pub x_new: DMatrix<f64>,
    pub x_full: DMatrix<f64>,
    pub noise_coords: Vec<usize>,
    pub inference_seed: u64,
}

pub fn replication_stream(seed: u64, rep: usize) -> RngStream {
    RngStream::new(seed, DATA_STREAM).derive(rep as u64)
}

pub fn simulate_replication(sc: &Scenario, seed: u64, rep: usize, coefs: CoefSelection) -> CliResult<ReplicationData> {
    sc.validate()?;
    let base = replication_stream(seed, rep);
    let beta0 = sc.beta_dense();
    let x = draw_ar_gaussian(base.derive(0), sc.n, sc.p, sc.rho)?;
    let eps = draw_logistic(base.derive(1), sc.n);
    let theta = ThetaPoint::from_dense(&beta0)?;
    let y = synth_response(&x, &theta, &eps)?;
    let data = Dataset::new(x, y)?;
    let x_new = draw_ar_gaussian(base.derive(2), sc.n_new, sc.p, sc.rho_new)?;
    let x_full = draw_ar_gaussian(base.derive(3), sc.p + 10, sc.p, sc.rho_new)?;
    let noise_coords = match coefs {
        CoefSelection::All => (sc.s..sc.p).collect(),
        CoefSelection::Sampled(k) => {
            let mut rng = base.derive(4).rng();
            let pool = sc.p - sc.s;
            let mut v: Vec<usize> = sample(&mut rng, pool, k.min(pool)).into_iter().map(|i| i + sc.s).collect();
            v.sort_unstable();
            v
        }
    };
    Ok(ReplicationData {
        data,
        beta0,
        x_new,
        x_full,
        noise_coords,
        inference_seed: base.derive(5).stream_id,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalOutcome {
    pub covers: bool,
    pub length: f64,
}

impl IntervalOutcome {
    fn of(iv: &IntervalUnion, truth: f64) -> Self {
        IntervalOutcome {
            covers: iv.contains(truth),
            length: iv.measure(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefOutcome {
    pub j: usize,
    pub truth: f64,
    pub in_support: bool,
    pub repro: IntervalOutcome,
    pub augmented: IntervalOutcome,
    pub oracle: IntervalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRankCheck {
    pub case_region: bool,
    pub joint_region: bool,
}

/// One line of the JSON-lines output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub seed: u64,
    pub rep: usize,
    pub loss: Loss,
    pub candidates: Vec<SupportSet>,
    pub candidate_covers: bool,
    pub failed_draws: usize,
    pub confidence_models: Vec<SupportSet>,
    pub confidence_covers: bool,
    pub coefficients: Vec<CoefOutcome>,
    pub joint_repro: bool,
    pub joint_oracle: bool,
    pub case_repro: bool,
    pub case_oracle: bool,
    pub full_rank: Option<FullRankCheck>,
}

fn probability_cover(region: &repro_logit::coef_inference::RegionHandle<'_>, t: &[f64]) -> CliResult<bool> {
    let pi: Vec<f64> = t.iter().map(|&v| sigmoid(v)).collect();
    // saturated probabilities have no finite logit; test the linear predictor
    if pi.iter().all(|v| *v > 0.0 && *v < 1.0) {
        Ok(region.contains_probabilities(&pi)?)
    } else {
        Ok(region.contains(t)?)
    }
}

pub fn run_replication(
    sc: &Scenario,
    config: &InferenceConfig,
    rep: usize,
    opts: &RunOptions,
) -> CliResult<ReplicationRecord> {
    let rd = simulate_replication(sc, config.seed, rep, opts.coefs)?;
    let cfg = InferenceConfig {
        seed: rd.inference_seed,
        ..config.clone()
    };
    let data = &rd.data;
    let alpha = cfg.alpha;
    let tau0 = SupportSet::first(sc.s);
    let oracle = CandidateSet::from_models([tau0.clone()]);

    let outcome = build_candidate_set_with(data, &cfg, &opts.ebic, &opts.candidate)?;
    let cands = outcome.set;
    let conf = model_confidence_set(data, &cands, &cfg)?;

    let coords: Vec<usize> = (0..sc.s).chain(rd.noise_coords.iter().copied()).collect();
    let coefficients = coords
        .par_iter()
        .map(|&j| -> CliResult<CoefOutcome> {
            let truth = rd.beta0[j];
            let in_support = j < sc.s;
            let repro = ci_single_coef(data, &cands, j, alpha, false)?;
            let augmented = ci_single_coef(data, &cands, j, alpha, true)?;
            let orc = ci_single_coef(data, &oracle, j, alpha, !in_support)?;
            Ok(CoefOutcome {
                j,
                truth,
                in_support,
                repro: IntervalOutcome::of(&repro, truth),
                augmented: IntervalOutcome::of(&augmented, truth),
                oracle: IntervalOutcome::of(&orc, truth),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let ident = LinearTarget::identity(sc.p)?;
    let joint = region_abeta(data, &cands, &ident, alpha)?;
    let joint_repro = joint.contains(&rd.beta0)?;
    let joint_oracle = region_abeta(data, &oracle, &ident, alpha)?.contains(&rd.beta0)?;

    let b0 = DVector::from_column_slice(&rd.beta0);
    let t_new: Vec<f64> = (&rd.x_new * &b0).iter().copied().collect();
    let case_repro = probability_cover(&region_case_probs(data, &cands, &rd.x_new, alpha)?, &t_new)?;
    let case_oracle = probability_cover(&region_case_probs(data, &oracle, &rd.x_new, alpha)?, &t_new)?;

    let full_rank = if opts.full_rank_check {
        let t_full: Vec<f64> = (&rd.x_full * &b0).iter().copied().collect();
        let region = region_case_probs(data, &cands, &rd.x_full, alpha)?;
        Some(FullRankCheck {
            case_region: region.contains(&t_full)?,
            joint_region: joint_repro,
        })
    } else {
        None
    };

    Ok(ReplicationRecord {
        scenario: sc.name.clone(),
        seed: config.seed,
        rep,
        loss: cfg.loss,
        candidate_covers: cands.contains(&tau0),
        candidates: cands.models().to_vec(),
        failed_draws: outcome.failed_draws,
        confidence_covers: conf.models.contains(&tau0),
        confidence_models: conf.models,
        coefficients,
        joint_repro,
        joint_oracle,
        case_repro,
        case_oracle,
        full_rank,
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<ReplicationRecord>,
    pub summary: SummaryTable,
    pub jsonl: PathBuf,
    pub summary_csv: PathBuf,
    /// Replications found complete on disk and skipped.
    pub resumed: usize,
}

pub fn output_paths(out_dir: &Path, scenario: &str, loss: Loss) -> (PathBuf, PathBuf) {
    (
        out_dir.join(format!("{scenario}-{loss}.jsonl")),
        out_dir.join(format!("{scenario}-{loss}-summary.csv")),
    )
}

/// Runs every replication of `sc` not already on disk, appending records in
/// replication order whatever the thread count.
pub fn run_scenario(sc: &Scenario, config: &InferenceConfig, out_dir: &Path, opts: &RunOptions) -> CliResult<RunSummary> {
    sc.validate()?;
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let (jsonl, summary_csv) = output_paths(out_dir, &sc.name, config.loss);

    let mut existing = if opts.resume {
        load_completed(&jsonl, sc, config)?
    } else {
        File::create(&jsonl).map_err(|e| CliError::io(&jsonl, e))?;
        Vec::new()
    };
    let resumed = existing.len();
    let done: BTreeSet<usize> = existing.iter().map(|r| r.rep).collect();
    let pending: Vec<usize> = (0..sc.replications).filter(|r| !done.contains(r)).collect();

    let file = OpenOptions::new()
        .append(true)
        .open(&jsonl)
        .map_err(|e| CliError::io(&jsonl, e))?;
    let writer = Mutex::new(Reorder {
        next: 0,
        buffer: BTreeMap::new(),
        out: BufWriter::new(file),
    });
    let fresh: Vec<ReplicationRecord> = pending
        .par_iter()
        .enumerate()
        .map(|(slot, &rep)| {
            let rec = run_replication(sc, config, rep, opts)?;
            let line = serde_json::to_string(&rec).map_err(|e| CliError::Invalid(e.to_string()))?;
            writer
                .lock()
                .expect("writer lock")
                .offer(slot, line)
                .map_err(|e| CliError::io(&jsonl, e))?;
            Ok(rec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    writer
        .into_inner()
        .expect("writer lock")
        .out
        .flush()
        .map_err(|e| CliError::io(&jsonl, e))?;

    existing.extend(fresh);
    existing.sort_by_key(|r| r.rep);
    let summary = summarize(&existing);
    let text = report_tables(&summary, ReportFormat::Csv)?;
    std::fs::write(&summary_csv, text).map_err(|e| CliError::io(&summary_csv, e))?;
    Ok(RunSummary {
        records: existing,
        summary,
        jsonl,
        summary_csv,
        resumed,
    })
}

/// Holds finished lines until every earlier slot has been written.
struct Reorder {
    next: usize,
    buffer: BTreeMap<usize, String>,
    out: BufWriter<File>,
}

impl Reorder {
    fn offer(&mut self, slot: usize, line: String) -> std::io::Result<()> {
        self.buffer.insert(slot, line);
        while let Some(line) = self.buffer.remove(&self.next) {
            self.out.write_all(line.as_bytes())?;
            self.out.write_all(b"\n")?;
            self.next += 1;
        }
        self.out.flush()
    }
}

/// Complete, matching records already in `path`. Anything after the last
/// good line (a write cut short by a crash) is truncated away.
fn load_completed(path: &Path, sc: &Scenario, config: &InferenceConfig) -> CliResult<Vec<ReplicationRecord>> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            File::create(path).map_err(|e| CliError::io(path, e))?;
            return Ok(Vec::new());
        }
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|e| CliError::io(path, e))?;
    let mut good = 0usize;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for chunk in text.split_inclusive('\n') {
        if !chunk.ends_with('\n') {
            break;
        }
        let Ok(rec) = serde_json::from_str::<ReplicationRecord>(chunk.trim_end()) else {
            break;
        };
        if rec.scenario != sc.name || rec.seed != config.seed || rec.loss != config.loss {
            return Err(CliError::Invalid(format!(
                "{} holds records for another run (scenario {}, seed {}, loss {})",
                path.display(),
                rec.scenario,
                rec.seed,
                rec.loss
            )));
        }
        good += chunk.len();
        if rec.rep < sc.replications && seen.insert(rec.rep) {
            out.push(rec);
        }
    }
    if good < text.len() {
        file.set_len(good as u64).map_err(|e| CliError::io(path, e))?;
        file.seek(SeekFrom::End(0)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> CliResult<Vec<ReplicationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Parse(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn group_means(coefs: &[CoefOutcome], support: bool, pick: impl Fn(&CoefOutcome) -> &IntervalOutcome) -> Option<(f64, f64)> {
    let g: Vec<&CoefOutcome> = coefs.iter().filter(|c| c.in_support == support).collect();
    if g.is_empty() {
        return None;
    }
    let k = g.len() as f64;
    let cov = g.iter().map(|c| flag(pick(c).covers)).sum::<f64>() / k;
    let len = g.iter().map(|c| pick(c).length).sum::<f64>() / k;
    Some((cov, len))
}

fn push_coef_metrics(
    table: &mut SummaryTable,
    scenario: &str,
    method: &str,
    recs: &[&ReplicationRecord],
    pick: &dyn Fn(&CoefOutcome) -> &IntervalOutcome,
) {
    for (support, tag) in [(true, "support"), (false, "noise")] {
        let per: Vec<(f64, f64)> = recs
            .iter()
            .filter_map(|r| group_means(&r.coefficients, support, pick))
            .collect();
        if per.is_empty() {
            continue;
        }
        let cov: Vec<f64> = per.iter().map(|v| v.0).collect();
        let len: Vec<f64> = per.iter().map(|v| v.1).collect();
        table.push(scenario, method, &format!("coef_coverage_{tag}"), &cov);
        table.push(scenario, method, &format!("coef_length_{tag}"), &len);
    }
}

/// Per-(scenario, method, metric) mean and standard deviation across
/// replications.
pub fn summarize(records: &[ReplicationRecord]) -> SummaryTable {
    let mut groups: Vec<((String, Loss), Vec<&ReplicationRecord>)> = Vec::new();
    for r in records {
        let key = (r.scenario.clone(), r.loss);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut t = SummaryTable::default();
    for ((sc, loss), recs) in &groups {
        let m = loss.method_name();
        let col = |f: &dyn Fn(&ReplicationRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
        t.push(sc, m, "candidate_coverage", &col(&|r| flag(r.candidate_covers)));
        t.push(sc, m, "candidate_size", &col(&|r| r.candidates.len() as f64));
        t.push(sc, m, "confidence_coverage", &col(&|r| flag(r.confidence_covers)));
        t.push(sc, m, "confidence_size", &col(&|r| r.confidence_models.len() as f64));
        push_coef_metrics(&mut t, sc, m, recs, &|c| &c.repro);
        t.push(sc, m, "joint_coverage", &col(&|r| flag(r.joint_repro)));
        t.push(sc, m, "case_prob_coverage", &col(&|r| flag(r.case_repro)));
        let fr: Vec<f64> = recs
            .iter()
            .filter_map(|r| r.full_rank.as_ref())
            .map(|f| flag(f.case_region == f.joint_region))
            .collect();
        if !fr.is_empty() {
            t.push(sc, m, "full_rank_agreement", &fr);
        }
        let aug = format!("Aug-{m}");
        push_coef_metrics(&mut t, sc, &aug, recs, &|c| &c.augmented);
        push_coef_metrics(&mut t, sc, "Oracle", recs, &|c| &c.oracle);
        t.push(sc, "Oracle", "joint_coverage", &col(&|r| flag(r.joint_oracle)));
        t.push(sc, "Oracle", "case_prob_coverage", &col(&|r| flag(r.case_oracle)));
    }
    t
}
