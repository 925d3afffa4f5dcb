use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use smc_calibrate::io::config::{load_config, Mode, RunConfig};
use smc_calibrate::io::snapshot::{self, Manifest};
use smc_calibrate::io::summary::{self, MarginalComparison, Summary};
use smc_calibrate::mcmc::run_mcmc_target;
use smc_calibrate::parallel::{resolve_workers, Executor};
use smc_calibrate::param_space::ParameterVector;
use smc_calibrate::problem::Target;
use smc_calibrate::smc::{self, calibrate_stop_threshold, Particle, ThresholdSpec};
use smc_calibrate::{Error, Result};

#[derive(Parser)]
#[command(name = "smc-calibrate", version, about = "Adaptive SMC calibration of forward models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode selected in a configuration file (smc, mcmc or
    /// threshold_calibration).
    Run(RunArgs),
    /// Calibrate the mutation stopping threshold.
    CalibrateThreshold(ThresholdArgs),
    /// Summarize columns of a particle or chain table.
    Summarize(SummarizeArgs),
    /// Compare two particle or chain tables column by column.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; overrides SMC_WORKERS and the configuration.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
    /// Continue from the latest snapshot in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Survey the metric over a prior swarm defined by this configuration.
    #[arg(long, conflicts_with = "survey")]
    config: Option<PathBuf>,
    /// CSV file holding survey values of the metric.
    #[arg(long, requires = "column")]
    survey: Option<PathBuf>,
    #[arg(long)]
    column: Option<String>,
    /// Sample-set size; defaults to the particle count (2000).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,
}

#[derive(Args)]
struct SummarizeArgs {
    input: PathBuf,
    /// Columns to summarize; defaults to every column except bookkeeping ones.
    #[arg(long = "column")]
    columns: Vec<String>,
    /// Leading fraction of rows to drop.
    #[arg(long, default_value_t = 0.0)]
    burn_in: f64,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long = "column")]
    columns: Vec<String>,
    #[arg(long, default_value_t = 200)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    burn_in_a: f64,
    #[arg(long, default_value_t = 0.0)]
    burn_in_b: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::CalibrateThreshold(a) => cmd_threshold(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("cannot serialize output: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn executor(cfg: &RunConfig, cli_workers: Option<u64>) -> Result<Executor> {
    let workers = match cli_workers {
        Some(w) => w as usize,
        None => std::env::var(smc_calibrate::parallel::WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .filter(|&w: &usize| w > 0)
            .or(cfg.workers)
            .unwrap_or_else(|| resolve_workers(None)),
    };
    Executor::new(workers)
}

fn run_id(cfg: &RunConfig) -> String {
    cfg.output_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("run-{}", cfg.master_seed))
}

/// Natural-space summaries of every parameter column.
fn swarm_summaries(space_names: &[String], natural: &[Vec<f64>]) -> Result<BTreeMap<String, Summary>> {
    space_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = natural.iter().map(|r| r[j]).collect();
            Ok((name.clone(), summary::summarize(&col, &summary::DEFAULT_LEVELS)?))
        })
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let exec = executor(&cfg, args.workers)?;
    let problem = cfg.build_problem(&run_id(&cfg))?;
    let space = problem.space().clone();
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if let Some(data) = cfg.toy_data()? {
        smc_calibrate::io::config::write_toy_data(&out.join("data.csv"), &data)?;
    }
    match cfg.mode {
        Mode::Smc => {
            let settings = cfg.smc_settings()?;
            let seed = cfg.master_seed;
            let observer = |state: &smc::SmcState| -> Result<()> {
                snapshot::write_cycle_snapshot(&out, &space, state, seed)?;
                Ok(())
            };
            let result = if args.resume {
                let state = snapshot::load_state(&out, &space, seed)?;
                log::info!("resuming after cycle {}", state.cycle);
                smc::run_smc_from(&problem, &settings, &exec, state, observer)?
            } else {
                smc::run_smc(&problem, &settings, &exec, observer)?
            };
            snapshot::write_manifest(&out, &Manifest::for_smc(&result, &space, seed, exec.workers()))?;
            let natural: Vec<Vec<f64>> = result
                .final_swarm
                .iter()
                .map(|p| space.to_natural(&p.theta))
                .collect();
            let summaries = swarm_summaries(&space.names(), &natural)?;
            write_json(&out.join("summary.json"), &summaries)?;
            println!(
                "completed {} cycles; increments {:?}; {} model evaluations; {} sequential updates",
                result.cycle_count(),
                result.temper.increments,
                result.counters.model_evaluations,
                result.counters.sequential_updates
            );
            for (name, s) in &summaries {
                let iv = &s.intervals[0];
                println!("{name}: mean {:.4}, 95% interval ({:.4}, {:.4})", s.mean, iv.lower, iv.upper);
            }
        }
        Mode::Mcmc => {
            let m = cfg.mcmc.clone().expect("validated");
            let chain = run_mcmc_target(&problem, &m.start, &m.scales, m.iterations, cfg.master_seed)?;
            let len = chain.states.len();
            let rows: Vec<Particle> = chain
                .states
                .iter()
                .zip(&chain.payloads)
                .map(|(theta, p)| {
                    Ok(Particle {
                        theta: ParameterVector::new(theta.clone())?,
                        log_lik: p.log_lik,
                        weight: 1.0 / len as f64,
                        metric: f64::NAN,
                    })
                })
                .collect::<Result<_>>()?;
            snapshot::write_particle_table(&out.join("chain.csv"), &space, &rows)?;
            let kept = chain.after_burn_in(m.burn_in_fraction);
            let natural: Vec<Vec<f64>> = kept.iter().map(|t| space.to_natural(t)).collect();
            let summaries = swarm_summaries(&space.names(), &natural)?;
            write_json(&out.join("summary.json"), &summaries)?;
            #[derive(Serialize)]
            struct ChainManifest {
                mode: &'static str,
                master_seed: u64,
                iterations: u64,
                model_evaluations: u64,
                acceptance_rate: f64,
                burn_in_fraction: f64,
                scales: Vec<f64>,
            }
            snapshot::write_manifest(
                &out,
                &ChainManifest {
                    mode: "mcmc",
                    master_seed: cfg.master_seed,
                    iterations: m.iterations,
                    model_evaluations: chain.evaluations + 1,
                    acceptance_rate: chain.acceptance_rate(),
                    burn_in_fraction: m.burn_in_fraction,
                    scales: m.scales.clone(),
                },
            )?;
            println!(
                "{} iterations, acceptance rate {:.3}",
                m.iterations,
                chain.acceptance_rate()
            );
            for (name, s) in &summaries {
                let iv = &s.intervals[0];
                println!("{name}: mean {:.4}, 95% interval ({:.4}, {:.4})", s.mean, iv.lower, iv.upper);
            }
        }
        Mode::ThresholdCalibration => {
            let threshold = threshold_from_config(&cfg, &problem, &exec, None)?;
            write_json(&out.join("threshold.json"), &threshold)?;
            println!("{:.12}", threshold.epsilon);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ThresholdReport {
    epsilon: f64,
    survey_size: usize,
    n: usize,
    bins: usize,
    samples: usize,
    quantile: f64,
    seed: u64,
}

fn threshold_from_config(
    cfg: &RunConfig,
    problem: &smc_calibrate::problem::Problem,
    exec: &Executor,
    overrides: Option<&ThresholdArgs>,
) -> Result<ThresholdReport> {
    let mut settings = cfg.smc_settings()?;
    settings.epsilon = None;
    if let Some(o) = overrides {
        settings.bins = o.bins.unwrap_or(settings.bins);
        settings.threshold_samples = o.samples.unwrap_or(settings.threshold_samples);
        settings.threshold_quantile = o.quantile.unwrap_or(settings.threshold_quantile);
        settings.master_seed = o.seed.unwrap_or(settings.master_seed);
    }
    let state = smc::initialize(problem, &settings, exec)?;
    let survey: Vec<f64> = state
        .swarm
        .iter()
        .map(|p| p.metric)
        .filter(|m| m.is_finite())
        .collect();
    let spec = ThresholdSpec {
        samples: settings.threshold_samples,
        n: overrides.and_then(|o| o.n).unwrap_or(settings.particles),
        bins: settings.bins,
        quantile: settings.threshold_quantile,
    };
    let epsilon = calibrate_stop_threshold(&survey, &spec, settings.master_seed)?;
    Ok(ThresholdReport {
        epsilon,
        survey_size: survey.len(),
        n: spec.n,
        bins: spec.bins,
        samples: spec.samples,
        quantile: spec.quantile,
        seed: settings.master_seed,
    })
}

fn cmd_threshold(args: ThresholdArgs) -> Result<()> {
    let report = if let Some(path) = &args.config {
        let cfg = load_config(path)?;
        let exec = executor(&cfg, args.workers)?;
        let problem = cfg.build_problem(&run_id(&cfg))?;
        threshold_from_config(&cfg, &problem, &exec, Some(&args))?
    } else if let (Some(path), Some(column)) = (&args.survey, &args.column) {
        let survey = read_columns(path, std::slice::from_ref(column), 0.0)?
            .pop()
            .expect("one column")
            .1;
        let spec = ThresholdSpec {
            samples: args.samples.unwrap_or(1000),
            n: args.n.unwrap_or(2000),
            bins: args.bins.unwrap_or(200),
            quantile: args.quantile.unwrap_or(0.975),
        };
        let seed = args.seed.unwrap_or(0);
        let epsilon = calibrate_stop_threshold(&survey, &spec, seed)?;
        ThresholdReport {
            epsilon,
            survey_size: survey.len(),
            n: spec.n,
            bins: spec.bins,
            samples: spec.samples,
            quantile: spec.quantile,
            seed,
        }
    } else {
        return Err(Error::Config(
            "calibrate-threshold needs --config, or --survey with --column".into(),
        ));
    };
    print_json(&report)
}

const BOOKKEEPING: [&str; 4] = ["particle", "log_lik", "weight", "metric"];

/// Reads the named numeric columns of a CSV file (all non-bookkeeping
/// columns when `columns` is empty), dropping the leading `burn_in`
/// fraction of rows.
fn read_columns(path: &Path, columns: &[String], burn_in: f64) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let wanted: Vec<String> = if columns.is_empty() {
        header
            .iter()
            .filter(|h| !BOOKKEEPING.contains(&h.as_str()))
            .cloned()
            .collect()
    } else {
        columns.to_vec()
    };
    let idx = wanted
        .iter()
        .map(|c| {
            header.iter().position(|h| h == c).ok_or_else(|| {
                Error::Config(format!("{}: no column `{c}`", path.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); wanted.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (col, &j) in cols.iter_mut().zip(&idx) {
            let v: f64 = rec[j].parse().map_err(|e| {
                Error::Config(format!("{}: column `{}`: {e}", path.display(), header[j]))
            })?;
            col.push(v);
        }
    }
    let skip = ((cols.first().map_or(0, Vec::len) as f64) * burn_in.clamp(0.0, 1.0)) as usize;
    Ok(wanted
        .into_iter()
        .zip(cols)
        .map(|(n, c)| (n, c[skip..].to_vec()))
        .collect())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let cols = read_columns(&args.input, &args.columns, args.burn_in)?;
    let out = cols
        .into_iter()
        .map(|(name, c)| Ok((name, summary::summarize(&c, &summary::DEFAULT_LEVELS)?)))
        .collect::<Result<BTreeMap<String, Summary>>>()?;
    print_json(&out)
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let a = read_columns(&args.a, &args.columns, args.burn_in_a)?;
    let b = read_columns(&args.b, &args.columns, args.burn_in_b)?;
    let mut out: BTreeMap<String, MarginalComparison> = BTreeMap::new();
    for (name, ca) in &a {
        let Some((_, cb)) = b.iter().find(|(n, _)| n == name) else {
            return Err(Error::Contract(format!("`{name}` missing from {}", args.b.display())));
        };
        out.insert(name.clone(), summary::compare_marginal(ca, cb, args.bins)?);
    }
    print_json(&out)
}
