use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use sectorboost_core::committee::LearnerKind;
use sectorboost_core::export::{
    write_dataset_csv, write_forward_csv, write_grid_csv, write_k_curve_csv, write_oob_csv, write_relief_csv,
};
use sectorboost_core::knn::KSelection;
use sectorboost_core::pipeline::{backtest_forward, run_pipeline, EvaluationReport, ForwardReport, Mode, RunConfig};
use sectorboost_core::relief::SelectionPolicy;
use sectorboost_core::synth::{generate, SyntheticSpec};
use sectorboost_core::{Error, Quarter, Sector};

#[derive(Parser)]
#[command(name = "sectorboost", version, about = "Sector-partitioned boosted committee for quarterly return direction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic quarterly dataset with planted informative features.
    Generate(GenerateArgs),
    /// Train and evaluate per sector (or on the aggregated market).
    Train(TrainArgs),
    /// Fit once on a training quarter and score frozen models forward.
    Backtest(BacktestArgs),
    /// Summarize a report and optionally re-emit its CSV extracts.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    sectors: usize,
    /// Records per sector, spread evenly over the quarter range.
    #[arg(long, default_value_t = 300)]
    records: usize,
    #[arg(long, default_value_t = 5)]
    informative: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Probability of flipping each teacher label.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value = "2009Q1")]
    start: Quarter,
    #[arg(long, default_value = "2009Q1")]
    end: Quarter,
    /// First quarter whose labels are inverted.
    #[arg(long)]
    shift: Option<Quarter>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON run configuration; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Comma-separated RBF widths.
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Option<Vec<f64>>,
    /// Per-sector RVM threshold, e.g. `35=0.5` or `Financials=0.5`.
    #[arg(long = "rvm-threshold", value_parser = parse_threshold)]
    rvm_threshold: Vec<(Sector, f64)>,
    /// Default RVM threshold for sectors without an override.
    #[arg(long)]
    default_threshold: Option<f64>,
    /// Keep the M features with the largest Relief-F weight.
    #[arg(long, conflicts_with = "relief_threshold")]
    top_m: Option<usize>,
    /// Keep features whose normalized Relief-F weight reaches this value.
    #[arg(long)]
    relief_threshold: Option<f64>,
    #[arg(long)]
    max_trees: Option<usize>,
    #[arg(long)]
    knn_members: Option<usize>,
    #[arg(long)]
    min_sector_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel sector workers; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Skip writing the CSV extracts next to the report.
    #[arg(long)]
    no_extracts: bool,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    train_quarter: Quarter,
    #[arg(long)]
    horizon_end: Quarter,
}

#[derive(Args)]
struct ReportArgs {
    report: PathBuf,
    /// Directory for CSV extracts of the report.
    #[arg(long)]
    extracts: Option<PathBuf>,
}

fn parse_threshold(s: &str) -> Result<(Sector, f64), String> {
    let (sector, value) = s.split_once('=').ok_or("expected SECTOR=VALUE")?;
    let sector: Sector = sector.parse()?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad threshold `{value}`: {e}"))?;
    Ok((sector, value))
}

/// Exit status: 1 for unreadable or malformed input, 2 for bad configuration.
enum Failure {
    Input(anyhow::Error),
    Config(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::InvalidK { .. } | Error::UnsupportedModel(_) => {
                Failure::Config(e.into())
            }
            other => Failure::Input(other.into()),
        }
    }
}

fn input_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Input(e.into())
}

fn build_config(args: RunArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(Failure::Config)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(Failure::Config)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = args.input {
        config.input = Some(v);
    }
    if let Some(v) = args.out_dir {
        config.output = Some(v);
    }
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.train_fraction {
        config.train_fraction = v;
    }
    if let Some(v) = args.gamma_grid {
        config.gamma_grid = v;
    }
    if let Some(v) = args.default_threshold {
        config.rvm_threshold = v;
    }
    config.rvm_thresholds.extend(args.rvm_threshold);
    if let Some(m) = args.top_m {
        config.relief_policy = SelectionPolicy::TopM(m);
    }
    if let Some(t) = args.relief_threshold {
        config.relief_policy = SelectionPolicy::Threshold(t);
    }
    if let Some(v) = args.max_trees {
        config.max_trees = v;
    }
    if let Some(v) = args.knn_members {
        config.knn.members = v;
    }
    if let Some(v) = args.min_sector_size {
        config.min_sector_size = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.workers {
        config.workers = v;
    }
    config.validate()?;
    if config.input.is_none() {
        return Err(Failure::Config(anyhow!("no input file given (--input or config `input`)")));
    }
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(input_err)?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(input_err)?;
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(input_err)
}

fn sector_tag(sector: Sector) -> String {
    match sector {
        Sector::Aggregated => "aggregated".into(),
        s => s.code().to_string(),
    }
}

fn write_extracts(report: &EvaluationReport, dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(input_err)?;
    for s in &report.sectors {
        let tag = sector_tag(s.sector);
        write_relief_csv(&s.relief, dir.join(format!("relief_{tag}.csv")))?;
        write_oob_csv(&s.oob_curve, dir.join(format!("oob_{tag}.csv")))?;
        let k = KSelection {
            k_star: s.k_star,
            curve: s.k_curve.clone(),
        };
        write_k_curve_csv(&k, dir.join(format!("kcurve_{tag}.csv")))?;
        write_grid_csv(&s.svm_grid, dir.join(format!("gamma_svm_{tag}.csv")))?;
        write_grid_csv(&s.rvm_grid, dir.join(format!("gamma_rvm_{tag}.csv")))?;
    }
    if let Some(forward) = &report.forward {
        write_forward_extracts(forward, dir)?;
    }
    Ok(())
}

fn write_forward_extracts(forward: &ForwardReport, dir: &Path) -> Result<(), Failure> {
    for s in &forward.sectors {
        write_forward_csv(&s.series, dir.join(format!("forward_{}.csv", sector_tag(s.sector))))?;
    }
    Ok(())
}

fn summarize(report: &EvaluationReport) {
    println!("mode: {:?}  sectors: {}  skipped: {}", report.mode, report.sectors.len(), report.skipped.len());
    println!(
        "{:<28} {:>8} {:>8} {:>8} {:>8} {:>10} {:>8}",
        "sector", "forest", "svm", "rvm", "knn", "committee", "seconds"
    );
    for s in &report.sectors {
        let err = |k| s.learner(k).map_or(f64::NAN, |l| l.test_error);
        println!(
            "{:<28} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>8.2}{}",
            s.sector.name(),
            err(LearnerKind::Forest),
            err(LearnerKind::Svm),
            err(LearnerKind::Rvm),
            err(LearnerKind::Knn),
            s.committee.test_error,
            s.seconds,
            if s.overfit_warning { "  overfit?" } else { "" }
        );
    }
    for s in &report.skipped {
        println!("skipped {}: {}", s.sector.name(), s.reason);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                sectors: a.sectors,
                records_per_sector: a.records,
                informative: a.informative,
                noise: a.noise,
                label_noise: a.label_noise,
                start: a.start,
                end: a.end,
                shift: a.shift,
                seed: a.seed,
            };
            let data = generate(&spec)?;
            if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(input_err)?;
            }
            write_dataset_csv(&data.dataset, &a.out)?;
            let planted = a.out.with_extension("planted.json");
            let informative: std::collections::BTreeMap<String, Vec<&str>> = data
                .informative
                .iter()
                .map(|(s, cols)| {
                    let names = cols.iter().map(|&j| data.dataset.schema[j].as_str()).collect();
                    (s.code().to_string(), names)
                })
                .collect();
            write_json(&informative, &planted)?;
            info!("wrote {} records to {}", data.dataset.len(), a.out.display());
        }
        Command::Train(a) => {
            let config = build_config(a.run)?;
            let dir = out_dir(&config)?;
            let report = run_pipeline(&config)?;
            write_json(&report, &dir.join("report.json"))?;
            if !a.no_extracts {
                write_extracts(&report, &dir)?;
            }
            summarize(&report);
        }
        Command::Backtest(a) => {
            let config = build_config(a.run)?;
            let dir = out_dir(&config)?;
            let forward = backtest_forward(&config, a.train_quarter, a.horizon_end)?;
            write_json(&forward, &dir.join("backtest.json"))?;
            write_forward_extracts(&forward, &dir)?;
            for s in &forward.sectors {
                let series: Vec<String> = s
                    .series
                    .iter()
                    .map(|e| match e.error {
                        Some(v) => format!("{}={v:.4}", e.quarter),
                        None => format!("{}=absent", e.quarter),
                    })
                    .collect();
                println!("{}: {}", s.sector.name(), series.join(" "));
            }
        }
        Command::Report(a) => {
            let text = fs::read_to_string(&a.report)
                .with_context(|| format!("reading {}", a.report.display()))
                .map_err(input_err)?;
            let report: EvaluationReport = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", a.report.display()))
                .map_err(input_err)?;
            summarize(&report);
            if let Some(dir) = a.extracts {
                write_extracts(&report, &dir)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("invalid configuration: {e:#}");
            ExitCode::from(2)
        }
    }
}
