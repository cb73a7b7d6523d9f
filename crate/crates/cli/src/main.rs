use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use repro_logit::candidate::{build_candidate_set_with, CandidateOptions, EbicConfig};
use repro_logit::coef_inference::{ci_linear, ci_single_coef, region_case_probs};
use repro_logit::model_confidence::model_confidence_set;
use repro_logit::solvers::loss::sigmoid;
use repro_logit::solvers::PenaltyWeights;
use repro_logit::{BetaMode, CandidateSet, InferenceConfig, Loss};
use repro_logit_cli::harness::{run_scenario, CoefSelection, RunOptions};
use repro_logit_cli::ingest::{ingest_csv, IngestOptions, Ingested};
use repro_logit_cli::report::{report_tables, ReportFormat};
use repro_logit_cli::{CliError, CliResult, Scenario};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "repro-logit", version, about = "Repro-samples inference for sparse logistic regression")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Confidence level.
    #[arg(long, global = true, default_value_t = 0.95)]
    alpha: f64,
    /// Candidate-set loss: logistic or hinge.
    #[arg(long, global = true, default_value = "logistic")]
    loss: String,
    /// Repro draws for the candidate set.
    #[arg(long, global = true, default_value_t = 100)]
    d: usize,
    /// Monte Carlo draws for the model confidence test.
    #[arg(long, global = true, default_value_t = 100)]
    m: usize,
    /// mle or profile.
    #[arg(long = "beta-mode", global = true, default_value = "mle")]
    beta_mode: String,
    /// Penalty factors of the adaptive path: coordinate or global.
    #[arg(long, global = true, default_value = "coordinate")]
    weights: String,
    #[arg(long = "max-support", global = true)]
    max_support: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the 0/1 label column.
    #[arg(long, default_value = "label")]
    label: String,
    /// Drop mostly-zero columns and keep the top 10% by variance.
    #[arg(long)]
    expression: bool,
    /// Standardize columns (implied by --expression).
    #[arg(long)]
    standardize: bool,
    /// Previously computed candidate set (JSON); built from the data when absent.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation scenario and write per-replication records.
    Simulate {
        /// Preset name: M1s..M5s, tiny, or M1..M5 with --full-scale.
        #[arg(long, default_value = "M2s")]
        scenario: String,
        #[arg(long = "full-scale")]
        full_scale: bool,
        /// Override the number of replications.
        #[arg(long)]
        reps: Option<usize>,
        /// Noise coordinates sampled for intervals.
        #[arg(long = "noise-coefs", default_value_t = 20)]
        noise_coefs: usize,
        /// Intervals for every coordinate.
        #[arg(long = "all-coefs")]
        all_coefs: bool,
        #[arg(long = "no-full-rank")]
        no_full_rank: bool,
        /// Start over instead of resuming from existing records.
        #[arg(long = "no-resume")]
        no_resume: bool,
        /// Summary printed to stdout: csv, json or markdown.
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Build the candidate set of a data file.
    Candidates {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Model confidence set.
    ModelCi {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Confidence sets for single coefficients.
    CoefCi {
        #[command(flatten)]
        data: DataArgs,
        /// Column name or 0-based index; repeatable. Default: all columns.
        #[arg(long = "coef")]
        coefs: Vec<String>,
        /// Add the coefficient to every candidate model.
        #[arg(long)]
        augmented: bool,
    },
    /// Confidence sets for case probabilities of new rows.
    CaseProb {
        #[command(flatten)]
        data: DataArgs,
        /// CSV of new covariate rows with the same column names.
        #[arg(long)]
        new: PathBuf,
        /// Comma-separated probabilities, one per new row, to test jointly.
        #[arg(long, value_delimiter = ',')]
        probs: Vec<f64>,
    },
    /// Parse and filter a CSV and write the processed design.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(CliError::Invalid("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    let config = inference_config(g)?;
    let cand_opts = CandidateOptions {
        weights: match g.weights.as_str() {
            "coordinate" => PenaltyWeights::PerCoordinate,
            "global" => PenaltyWeights::Global,
            other => return Err(CliError::Invalid(format!("unknown weights `{other}`"))),
        },
        ..CandidateOptions::default()
    };
    match cli.command {
        Command::Simulate {
            scenario,
            full_scale,
            reps,
            noise_coefs,
            all_coefs,
            no_full_rank,
            no_resume,
            format,
        } => {
            let format: ReportFormat = format.parse()?;
            let mut sc = Scenario::by_name(&scenario, full_scale)?;
            sc.alpha = config.alpha;
            if let Some(r) = reps {
                sc.replications = r;
            }
            let opts = RunOptions {
                coefs: if all_coefs { CoefSelection::All } else { CoefSelection::Sampled(noise_coefs) },
                full_rank_check: !no_full_rank,
                resume: !no_resume,
                ebic: EbicConfig::default(),
                candidate: cand_opts,
            };
            let run = run_scenario(&sc, &config, &g.out, &opts)?;
            print!("{}", report_tables(&run.summary, format)?);
            eprintln!(
                "{} replications ({} resumed); records in {}, summary in {}",
                run.records.len(),
                run.resumed,
                run.jsonl.display(),
                run.summary_csv.display()
            );
            Ok(())
        }
        Command::Candidates { data } => {
            let ing = load(&data)?;
            let outcome = build_candidate_set_with(&ing.dataset, &config, &EbicConfig::default(), &cand_opts)?;
            let text = to_json(&outcome.set)?;
            write_output(&g.out, "candidates.json", &text)?;
            println!("{text}");
            if outcome.failed_draws > 0 {
                eprintln!("{} of {} draws failed", outcome.failed_draws, config.d);
            }
            Ok(())
        }
        Command::ModelCi { data } => {
            let ing = load(&data)?;
            let cands = candidates(&data, &ing, &config, &cand_opts)?;
            let cs = model_confidence_set(&ing.dataset, &cands, &config)?;
            let out = json!({
                "models": named_models(&cs.models, &ing.names),
                "reports": cs.reports,
            });
            let text = to_json(&out)?;
            write_output(&g.out, "model_ci.json", &text)?;
            println!("{text}");
            Ok(())
        }
        Command::CoefCi { data, coefs, augmented } => {
            let ing = load(&data)?;
            let cands = candidates(&data, &ing, &config, &cand_opts)?;
            let idx = if coefs.is_empty() {
                (0..ing.dataset.p()).collect()
            } else {
                coefs.iter().map(|c| column_index(c, &ing.names)).collect::<CliResult<Vec<_>>>()?
            };
            let mut rows = Vec::new();
            for j in idx {
                let iv = ci_single_coef(&ing.dataset, &cands, j, config.alpha, augmented)?;
                rows.push(json!({"j": j, "name": ing.names[j], "set": iv}));
            }
            let text = to_json(&rows)?;
            write_output(&g.out, "coef_ci.json", &text)?;
            println!("{text}");
            Ok(())
        }
        Command::CaseProb { data, new, probs } => {
            let ing = load(&data)?;
            let cands = candidates(&data, &ing, &config, &cand_opts)?;
            let x_new = new_rows(&new, &ing)?;
            if !probs.is_empty() && probs.len() != x_new.nrows() {
                return Err(CliError::Invalid(format!(
                    "{} probabilities for {} new rows",
                    probs.len(),
                    x_new.nrows()
                )));
            }
            let mut rows = Vec::new();
            for i in 0..x_new.nrows() {
                let a: Vec<f64> = x_new.row(i).iter().copied().collect();
                let iv = ci_linear(&ing.dataset, &cands, &a, config.alpha)?;
                let mut prob: Vec<[f64; 2]> = iv.intervals.iter().map(|[lo, hi]| [sigmoid(*lo), sigmoid(*hi)]).collect();
                if iv.contains_point_zero {
                    prob.push([0.5, 0.5]);
                }
                rows.push(json!({"row": i, "linear_predictor": iv, "probability": prob}));
            }
            let mut out = json!({"rows": rows});
            if !probs.is_empty() {
                let region = region_case_probs(&ing.dataset, &cands, &x_new, config.alpha)?;
                out["joint_membership"] = json!(region.contains_probabilities(&probs)?);
            }
            let text = to_json(&out)?;
            write_output(&g.out, "case_prob.json", &text)?;
            println!("{text}");
            Ok(())
        }
        Command::Ingest { data } => {
            let ing = load(&data)?;
            let path = g.out.join("ingested.csv");
            std::fs::create_dir_all(&g.out).map_err(|e| CliError::io(&g.out, e))?;
            write_dataset(&path, &ing)?;
            println!("{}", to_json(&ing)?);
            eprintln!("{} rows, {} columns written to {}", ing.dataset.n(), ing.dataset.p(), path.display());
            Ok(())
        }
    }
}

fn inference_config(g: &Global) -> CliResult<InferenceConfig> {
    let loss: Loss = g.loss.parse()?;
    let beta_mode = match g.beta_mode.as_str() {
        "mle" => BetaMode::Mle,
        "profile" => BetaMode::Profile,
        other => return Err(CliError::Invalid(format!("unknown beta mode `{other}`"))),
    };
    let cfg = InferenceConfig {
        alpha: g.alpha,
        d: g.d,
        m: g.m,
        loss,
        seed: g.seed,
        max_support: g.max_support,
        beta_mode,
        unpenalized: Vec::new(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load(args: &DataArgs) -> CliResult<Ingested> {
    let mut opts = if args.expression {
        IngestOptions::expression(&args.label)
    } else {
        IngestOptions::raw(&args.label)
    };
    opts.standardize |= args.standardize;
    ingest_csv(&args.data, &opts)
}

fn candidates(args: &DataArgs, ing: &Ingested, config: &InferenceConfig, opts: &CandidateOptions) -> CliResult<CandidateSet> {
    match &args.candidates {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let set: CandidateSet =
                serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
            let p = ing.dataset.p();
            if let Some(&j) = set.models().iter().flat_map(|m| m.indices()).find(|&&j| j >= p) {
                return Err(repro_logit::Error::IndexOutOfRange { index: j, len: p }.into());
            }
            Ok(set)
        }
        None => Ok(build_candidate_set_with(&ing.dataset, config, &EbicConfig::default(), opts)?.set),
    }
}

fn column_index(key: &str, names: &[String]) -> CliResult<usize> {
    if let Some(j) = names.iter().position(|n| n == key) {
        return Ok(j);
    }
    match key.parse::<usize>() {
        Ok(j) if j < names.len() => Ok(j),
        _ => Err(CliError::MissingColumn(key.to_string())),
    }
}

fn named_models(models: &[repro_logit::SupportSet], names: &[String]) -> Vec<serde_json::Value> {
    models
        .iter()
        .map(|m| {
            json!({
                "indices": m.indices(),
                "names": m.indices().iter().map(|&j| names[j].as_str()).collect::<Vec<_>>(),
            })
        })
        .collect()
}

/// New rows, aligned by column name and put on the training scale.
fn new_rows(path: &Path, ing: &Ingested) -> CliResult<nalgebra::DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::Parse(e.to_string()))?.clone();
    let pos: Vec<usize> = ing
        .names
        .iter()
        .map(|n| headers.iter().position(|h| h == n).ok_or_else(|| CliError::MissingColumn(n.clone())))
        .collect::<CliResult<_>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(e.to_string()))?;
        let mut row = Vec::with_capacity(pos.len());
        for (k, &c) in pos.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            let mut v: f64 = cell
                .parse()
                .map_err(|_| CliError::Parse(format!("{} line {}: cannot parse `{cell}`", path.display(), r + 2)))?;
            if let Some(s) = &ing.standardization {
                v = (v - s.mean[k]) / s.scale[k];
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Parse(format!("{}: no rows", path.display())));
    }
    Ok(nalgebra::DMatrix::from_fn(rows.len(), pos.len(), |i, j| rows[i][j]))
}

fn write_dataset(path: &Path, ing: &Ingested) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Parse(e.to_string()))?;
    let mut header: Vec<&str> = ing.names.iter().map(String::as_str).collect();
    header.push("label");
    let io = |e: csv::Error| CliError::Parse(e.to_string());
    w.write_record(&header).map_err(io)?;
    let x = ing.dataset.x();
    for i in 0..ing.dataset.n() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ing.dataset.y()[i].to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Invalid(e.to_string()))
}

fn write_output(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}
