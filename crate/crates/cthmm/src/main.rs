//! Command-line surface: dataset simulation, sampler execution with trace
//! and manifest persistence, and posterior summarization into plot-ready
//! CSV tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use cthmm::emission::EmissionFamily;
use cthmm::error::{Error, Result};
use cthmm::experiments::{generate_scenario, SamplerKind, ScenarioConfig};
use cthmm::hmm::Subject;
use cthmm::prior::PriorConfig;
use cthmm::runner::{
    retained, run_fit, summarize_cluster_run, summarize_model_run, FitConfig, TraceRecord,
};

#[derive(Parser)]
#[command(name = "cthmm", version, about = "Bayesian continuous-time hidden Markov models with unknown state and cluster counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a preset or scenario config.
    Simulate(SimulateArgs),
    /// Fit one model with the reversible-jump or birth-death sampler.
    Fit(FitArgs),
    /// Fit a mixture of models with the clustering sampler.
    ClusterFit(FitArgs),
    /// Summarize a trace file into posterior tables.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Name of a bundled scenario preset.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a scenario config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rescale the scenario to this many subjects in total.
    #[arg(long)]
    subjects: Option<usize>,
    /// RNG seed (required for reproducibility).
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input dataset CSV (subject_id,time,outcome,z1,...).
    #[arg(long)]
    data: PathBuf,
    /// Model config JSON (family, prior, initial dimensions).
    #[arg(long)]
    model_config: PathBuf,
    /// Sampler over the number of states: rj or bd.
    #[arg(long, default_value = "rj")]
    sampler: String,
    #[arg(long)]
    iterations: usize,
    #[arg(long)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// RNG seed (required for reproducibility).
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace JSONL produced by fit or cluster-fit.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

/// Model-level settings read from `--model-config`.
#[derive(Serialize, Deserialize)]
struct ModelConfigFile {
    family: EmissionFamily,
    #[serde(default)]
    prior: PriorConfig,
    #[serde(default = "default_one")]
    init_k: usize,
    #[serde(default = "default_one")]
    init_m: usize,
}

fn default_one() -> usize {
    1
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args, false),
        Command::ClusterFit(args) => fit(args, true),
        Command::Summarize(args) => summarize(args),
    };
    if let Err(err) = result {
        let payload = serde_json::json!({
            "error": err.to_string(),
            "kind": error_kind(&err),
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Config(_) => "config",
        Error::Structure(_) => "structure",
        Error::Numeric(_) => "numeric",
        Error::LikelihoodImpossible { .. } => "likelihood_impossible",
        Error::SubjectImpossible(_) => "subject_impossible",
        Error::MoveUnavailable(_) => "move_unavailable",
        _ => "other",
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), None) => ScenarioConfig::preset(name)?,
        (None, Some(path)) => {
            let json = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            ScenarioConfig::from_json(&json)?
        }
        _ => return Err(Error::Config("provide exactly one of --preset or --config".into())),
    };
    if let Some(n) = args.subjects {
        cfg = cfg.with_total_subjects(n)?;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let data = generate_scenario(&cfg, &mut rng)?;
    fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;

    let csv_path = args.output.join("data.csv");
    write_subjects_csv(&csv_path, &data.subjects, cfg.covariates.len())?;

    let truth = serde_json::json!({
        "scenario": cfg,
        "seed": args.seed,
        "cluster_of": data.cluster_of,
        "states_at_visits": data.states,
        "paths": data.paths.iter().map(|p| serde_json::json!({
            "jump_times": p.jump_times,
            "states": p.states,
        })).collect::<Vec<_>>(),
    });
    let truth_path = args.output.join("truth.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth).unwrap())
        .map_err(|e| io_err(&truth_path, e))?;
    println!(
        "wrote {} subjects to {} (ground truth in truth.json)",
        data.subjects.len(),
        csv_path.display()
    );
    Ok(())
}

fn fit(args: FitArgs, clustering: bool) -> Result<()> {
    let sampler = if clustering {
        SamplerKind::Clustering
    } else {
        match args.sampler.as_str() {
            "rj" => SamplerKind::Rj,
            "bd" => SamplerKind::Bd,
            other => {
                return Err(Error::Config(format!("unknown sampler {other}; expected rj or bd")))
            }
        }
    };
    let json = fs::read_to_string(&args.model_config).map_err(|e| io_err(&args.model_config, e))?;
    let model_cfg: ModelConfigFile = serde_json::from_str(&json)
        .map_err(|e| Error::Config(format!("{}: {e}", args.model_config.display())))?;
    let cfg = FitConfig {
        sampler,
        iterations: args.iterations,
        burn_in: args.burn_in,
        thin: args.thin,
        family: model_cfg.family,
        prior: model_cfg.prior,
        init_k: model_cfg.init_k,
        init_m: model_cfg.init_m,
    };
    let data = read_subjects_csv(&args.data)?;
    let subjects: Vec<&Subject> = data.iter().collect();
    let result = run_fit(&subjects, &cfg, args.seed)?;

    fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;
    let trace_path = args.output.join("trace.jsonl");
    let mut trace = fs::File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?;
    for record in &result.records {
        let line = serde_json::to_string(record).unwrap();
        writeln!(trace, "{line}").map_err(|e| io_err(&trace_path, e))?;
    }
    let manifest_path = args.output.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&result.manifest).unwrap(),
    )
    .map_err(|e| io_err(&manifest_path, e))?;

    write_summaries(&result.records, args.burn_in, &args.output, clustering)?;
    println!(
        "wrote {} trace records to {}",
        result.records.len(),
        trace_path.display()
    );
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let text = fs::read_to_string(&args.trace).map_err(|e| io_err(&args.trace, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Config(format!("{} line {}: {e}", args.trace.display(), i + 1)))?;
        record.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Config(format!("{} holds no trace records", args.trace.display())));
    }
    let clustering = records[0].m.is_some();
    fs::create_dir_all(&args.output).map_err(|e| io_err(&args.output, e))?;
    write_summaries(&records, args.burn_in, &args.output, clustering)?;

    // Plot-ready trace series.
    let series_path = args.output.join("trace_series.csv");
    let mut out = String::from("iteration,dimension,log_marginal\n");
    for r in retained(&records, args.burn_in)? {
        let dim = if clustering { r.m.unwrap() } else { r.k.unwrap() };
        out.push_str(&format!("{},{},{}\n", r.iteration, dim, r.log_marginal));
    }
    fs::write(&series_path, out).map_err(|e| io_err(&series_path, e))?;
    println!("wrote summaries to {}", args.output.display());
    Ok(())
}

fn write_summaries(
    records: &[TraceRecord],
    burn_in: usize,
    output: &Path,
    clustering: bool,
) -> Result<()> {
    if clustering {
        let summary = summarize_cluster_run(records, burn_in)?;
        write_table(
            &output.join("m_posterior.csv"),
            "m,posterior_probability",
            summary.m_posterior.iter().map(|(m, p)| format!("{m},{p}")),
        )?;
        write_table(
            &output.join("filled_clusters_posterior.csv"),
            "clusters,posterior_probability",
            summary
                .filled_posterior
                .iter()
                .map(|(m, p)| format!("{m},{p}")),
        )?;
        let mut rows = Vec::new();
        for (c, table) in summary.state_posteriors.iter().enumerate() {
            for (k, p) in table {
                rows.push(format!("{},{k},{p}", c + 1));
            }
        }
        write_table(
            &output.join("conditional_states.csv"),
            "component,k,posterior_probability",
            rows.into_iter(),
        )?;
        write_table(
            &output.join("memberships.csv"),
            "component,mean_member_count",
            summary
                .mean_member_counts
                .iter()
                .enumerate()
                .map(|(c, n)| format!("{},{n}", c + 1)),
        )?;
    } else {
        let summary = summarize_model_run(records, burn_in)?;
        write_table(
            &output.join("k_posterior.csv"),
            "k,posterior_probability",
            summary.k_posterior.iter().map(|(k, p)| format!("{k},{p}")),
        )?;
        write_table(
            &output.join("params.csv"),
            "parameter,mean,lower_95,upper_95",
            summary
                .params
                .iter()
                .map(|p| format!("{},{},{},{}", p.name, p.mean, p.lower, p.upper)),
        )?;
    }
    Ok(())
}

fn write_table(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn write_subjects_csv(path: &Path, subjects: &[Subject], num_covariates: usize) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["subject_id".to_string(), "time".to_string(), "outcome".to_string()];
    for d in 1..=num_covariates {
        header.push(format!("z{d}"));
    }
    writer.write_record(&header).map_err(|e| io_err(path, e))?;
    for s in subjects {
        for (i, &t) in s.times.iter().enumerate() {
            let mut row = vec![s.id.clone(), t.to_string(), s.outcomes[i].to_string()];
            for &z in &s.covariates[i] {
                row.push(z.to_string());
            }
            writer.write_record(&row).map_err(|e| io_err(path, e))?;
        }
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read_subjects_csv(path: &Path) -> Result<Vec<Subject>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| io_err(path, e))?.clone();
    let expected = ["subject_id", "time", "outcome"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(Error::Config(format!(
            "{}: header must start with subject_id,time,outcome",
            path.display()
        )));
    }
    let num_covariates = headers.len() - 3;
    let mut order: Vec<String> = Vec::new();
    let mut by_id: std::collections::HashMap<String, Subject> = Default::default();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| io_err(path, e))?;
        let line = i + 2;
        if row.len() != headers.len() {
            return Err(Error::Config(format!(
                "{} line {line}: {} fields, expected {}",
                path.display(),
                row.len(),
                headers.len()
            )));
        }
        let id = row[0].to_string();
        let parse = |field: usize| -> Result<f64> {
            row[field].trim().parse::<f64>().map_err(|_| {
                Error::Config(format!(
                    "{} line {line}: field {} ({}) is not a number",
                    path.display(),
                    &headers[field],
                    &row[field]
                ))
            })
        };
        let time = parse(1)?;
        let outcome = parse(2)?;
        let covs: Vec<f64> = (3..headers.len()).map(parse).collect::<Result<_>>()?;
        let subject = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Subject {
                id,
                times: Vec::new(),
                outcomes: Vec::new(),
                covariates: Vec::new(),
            }
        });
        subject.times.push(time);
        subject.outcomes.push(outcome);
        subject.covariates.push(covs);
    }
    if order.is_empty() {
        return Err(Error::Config(format!("{} holds no data rows", path.display())));
    }
    let subjects: Vec<Subject> = order
        .into_iter()
        .map(|id| by_id.remove(&id).unwrap())
        .collect();
    for (d, s) in subjects.iter().enumerate() {
        s.validate()?;
        if s.covariates[0].len() != num_covariates {
            return Err(Error::Config(format!(
                "subject {} (position {d}) has inconsistent covariates",
                s.id
            )));
        }
    }
    Ok(subjects)
}
