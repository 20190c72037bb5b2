use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smartim::error::{Error, Result};
use smartim::io::{read_records, write_records, write_records_to, IngestOptions, Ingested, TimeUnit};
use smartim::report::{self, config_digest, emit, to_json, Format, MonitorReport, Report};
use smartim::workflow::{self, BoundaryRequest, CovChoice};
use smartim::parallel;
use smartim_core::boundaries::{BoundaryMethod, BoundarySet};
use smartim_core::linalg::DEFAULT_RANK_TOL;
use smartim_core::monitor::monitor;
use smartim_core::sim::{calibrate_censoring, generate_trial, preset, ScenarioConfig, CALIBRATION_SIZE};
use smartim_core::{find_interim_time, DesignKind, FlatRecord, SmartDesign, StatKind};

#[derive(Parser)]
#[command(name = "smartim", version, about = "Interim monitoring for SMART trials with survival outcomes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trial and write it as patient CSV.
    Simulate(SimulateArgs),
    /// Find the censoring bound that gives a target censoring fraction.
    Calibrate(CalibrateArgs),
    /// Derive efficacy boundaries.
    Boundaries(BoundaryArgs),
    /// Wald test at one calendar time.
    Analyze(AnalyzeArgs),
    /// Apply boundaries to a dataset analysis by analysis.
    Monitor(MonitorArgs),
    /// Operating characteristics by simulation.
    Oc(OcArgs),
    /// Weighted product-limit survival curves per regime.
    Curves(CurvesArgs),
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    /// Patient CSV file.
    #[arg(long)]
    data: PathBuf,
    /// `smart1`, `smart2`, or a design JSON file.
    #[arg(long)]
    design: String,
    #[arg(long, value_enum, default_value_t = TimeUnit::Years)]
    time_unit: TimeUnit,
    /// Ignore enrollment times and spread enrollment uniformly over this window, in file order.
    #[arg(long, value_name = "WINDOW")]
    assume_uniform_accrual: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset name or scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 0.2)]
    target: f64,
    #[arg(long, default_value_t = CALIBRATION_SIZE)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BoundaryOptions {
    #[arg(long, value_parser = parse_method)]
    method: BoundaryMethod,
    #[arg(long, value_parser = parse_stat, default_value = "lr")]
    stat: StatKind,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Event fractions of the interim looks, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    info: Vec<f64>,
    /// Covariance across analyses; defaults to `approx` for pocock/obf and `oracle` for error spending.
    #[arg(long, value_enum)]
    cov: Option<CovChoice>,
    /// Shorthand for `--cov oracle`.
    #[arg(long, conflicts_with = "cov")]
    oracle: bool,
    #[arg(long, default_value_t = smartim_core::boundaries::DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = smartim_core::covariance::DEFAULT_BOOTSTRAP_REPLICATES)]
    bootstrap_reps: usize,
}

impl BoundaryOptions {
    fn request(&self, seed: u64) -> BoundaryRequest {
        let mut req = BoundaryRequest::new(self.stat, self.method);
        req.alpha = self.alpha;
        req.info = self.info.clone();
        req.draws = self.draws;
        req.seed = seed;
        req.bootstrap_replicates = self.bootstrap_reps;
        req.cov = if self.oracle { CovChoice::Oracle } else { self.cov.unwrap_or(req.cov) };
        req
    }
}

#[derive(Args)]
struct BoundaryArgs {
    #[command(flatten)]
    opts: BoundaryOptions,
    /// Null scenario to simulate a large reference trial from.
    #[arg(long, conflicts_with = "data")]
    scenario: Option<String>,
    /// Size of the simulated reference trial.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Trial data instead of a scenario.
    #[arg(long, requires = "design")]
    data: Option<PathBuf>,
    #[arg(long)]
    design: Option<String>,
    /// Treat `--data` as the interim data and plan these later sample sizes (comma separated).
    #[arg(long, value_delimiter = ',', requires = "data")]
    planned_n: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = TimeUnit::Years)]
    time_unit: TimeUnit,
    #[arg(long, value_name = "WINDOW")]
    assume_uniform_accrual: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_stat, default_value = "lr")]
    stat: StatKind,
    /// Calendar time of the analysis (default: all data).
    #[arg(long, conflicts_with = "info")]
    at: Option<f64>,
    /// Analyse when this fraction of the file's events has been observed.
    #[arg(long)]
    info: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_stat, default_value = "lr")]
    stat: StatKind,
    /// Boundary report or boundary set JSON.
    #[arg(long)]
    boundaries: PathBuf,
    /// Calendar times of all analyses, comma separated; `inf` for the complete data.
    #[arg(long, value_delimiter = ',', conflicts_with = "info")]
    times: Option<Vec<f64>>,
    /// Event fractions of the interim looks; the final analysis uses all data.
    #[arg(long, value_delimiter = ',')]
    info: Option<Vec<f64>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OcArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_parser = parse_stat, default_value = "lr")]
    stat: StatKind,
    /// Boundary report or boundary set JSON; derived from the matching null scenario when absent.
    #[arg(long)]
    boundaries: Option<PathBuf>,
    #[arg(long, value_parser = parse_method, default_value = "obf")]
    method: BoundaryMethod,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    info: Vec<f64>,
    /// Null scenario for derived boundaries (default: the null preset of the same design).
    #[arg(long)]
    null_scenario: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    null_n: usize,
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = smartim_core::boundaries::DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    at: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_stat(s: &str) -> std::result::Result<StatKind, String> {
    s.parse().map_err(|e: smartim_core::Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<BoundaryMethod, String> {
    s.parse().map_err(|e: smartim_core::Error| e.to_string())
}

fn load_design(spec: &str) -> Result<SmartDesign> {
    let design = match spec {
        "smart1" => SmartDesign::smart1_balanced(),
        "smart2" => SmartDesign::smart2_balanced(),
        path if Path::new(path).is_file() => report::read_json(Path::new(path))?,
        other => {
            return Err(Error::Usage(format!(
                "unknown design `{other}`: expected smart1, smart2 or a JSON file"
            )))
        }
    };
    design.validate()?;
    Ok(design)
}

fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    let config: ScenarioConfig = if path.is_file() { report::read_json(path)? } else { preset(spec)? };
    config.validate()?;
    Ok(config)
}

fn load_data(args: &DataArgs) -> Result<(SmartDesign, Ingested)> {
    let design = load_design(&args.design)?;
    let opts = IngestOptions {
        kind: design.kind,
        time_unit: args.time_unit,
        uniform_accrual: args.assume_uniform_accrual,
    };
    let data = read_records(&args.data, opts)?;
    Ok((design, data))
}

fn load_boundaries(path: &Path) -> Result<BoundarySet> {
    let value: serde_json::Value = report::read_json(path)?;
    let inner = value.get("result").unwrap_or(&value);
    let inner = inner.get("boundaries").unwrap_or(inner);
    serde_json::from_value(inner.clone())
        .map_err(|e| Error::Format { path: path.display().to_string(), message: e.to_string() })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let mut config = load_scenario(&a.scenario)?;
            if let Some(n) = a.n {
                config.n = n;
            }
            let records = generate_trial(&config, a.seed)?;
            match (a.format, &a.out) {
                (Format::Csv, Some(p)) => write_records(p, &records),
                (Format::Csv, None) => write_records_to(std::io::stdout().lock(), &records),
                (Format::Json, out) => {
                    let flat: Vec<FlatRecord> = records.iter().map(FlatRecord::from).collect();
                    let r = Report::new("simulate", flat)
                        .seed(a.seed)
                        .scenario(&config.label)
                        .digest("scenario", config_digest(&config));
                    emit(out.as_deref(), &to_json(&r))
                }
            }
        }
        Command::Calibrate(a) => {
            let mut config = load_scenario(&a.scenario)?;
            config.nu_cens = calibrate_censoring(&config, a.target, a.size, a.seed)?;
            let text = match a.output.format {
                Format::Json => to_json(&Report::new("calibrate", &config).seed(a.seed).scenario(&config.label)),
                Format::Csv => format!("scenario,target,nu_cens\n{},{},{}\n", config.label, a.target, config.nu_cens),
            };
            emit(a.output.out.as_deref(), &text)
        }
        Command::Boundaries(a) => {
            let req = a.opts.request(a.seed);
            let mut digests = Vec::new();
            let mut label = None;
            let derived = match (&a.scenario, &a.data) {
                (Some(s), None) => {
                    let config = load_scenario(s)?;
                    digests.push(("scenario", config_digest(&config)));
                    label = Some(config.label.clone());
                    workflow::null_boundaries(&config, a.n, &req)?
                }
                (None, Some(path)) => {
                    let design = load_design(a.design.as_deref().unwrap_or_default())?;
                    let opts = IngestOptions {
                        kind: design.kind,
                        time_unit: a.time_unit,
                        uniform_accrual: a.assume_uniform_accrual,
                    };
                    let data = read_records(path, opts)?;
                    digests.push(("data", data.digest.clone()));
                    match &a.planned_n {
                        Some(later) => workflow::boundaries_from_interim(&data.records, &design, later, &req)?,
                        None => workflow::boundaries_from_trial(&data.records, &design, &req)?,
                    }
                }
                _ => return Err(Error::Usage("give either --scenario or --data".into())),
            };
            let rep = derived.report();
            let text = match a.output.format {
                Format::Csv => report::boundaries_csv(&rep.boundaries),
                Format::Json => {
                    let mut r = Report::new("boundaries", rep).seed(a.seed);
                    if let Some(l) = label {
                        r = r.scenario(l);
                    }
                    let psi = r.result.psi_digest.clone();
                    for (k, v) in digests {
                        r = r.digest(k, v);
                    }
                    to_json(&r.digest("psi", psi))
                }
            };
            emit(a.output.out.as_deref(), &text)
        }
        Command::Analyze(a) => {
            let (design, data) = load_data(&a.data)?;
            let cutoff = match (a.at, a.info) {
                (Some(t), _) => t,
                (None, Some(f)) => find_interim_time(&data.records, f)?,
                (None, None) => f64::INFINITY,
            };
            let rep = workflow::analyze(&data.records, &design, a.stat, cutoff, DEFAULT_RANK_TOL)?;
            let text = match a.output.format {
                Format::Csv => report::analysis_csv(&rep),
                Format::Json => to_json(&Report::new("analyze", rep).digest("data", data.digest)),
            };
            emit(a.output.out.as_deref(), &text)
        }
        Command::Monitor(a) => {
            let (design, data) = load_data(&a.data)?;
            let b = load_boundaries(&a.boundaries)?;
            let times = match (a.times, a.info) {
                (Some(t), _) => t,
                (None, info) => {
                    let info = info.unwrap_or_else(|| vec![0.5; b.thresholds.len().saturating_sub(1)]);
                    let mut t = info
                        .iter()
                        .map(|&f| find_interim_time(&data.records, f))
                        .collect::<smartim_core::Result<Vec<_>>>()?;
                    t.push(f64::INFINITY);
                    t
                }
            };
            let decisions = monitor(&data.records, &design, a.stat, &b.thresholds, &times, DEFAULT_RANK_TOL)?;
            let text = match a.output.format {
                Format::Csv => report::decisions_csv(&decisions),
                Format::Json => to_json(
                    &Report::new("monitor", MonitorReport { kind: a.stat, decisions }).digest("data", data.digest),
                ),
            };
            emit(a.output.out.as_deref(), &text)
        }
        Command::Oc(a) => {
            let config = load_scenario(&a.scenario)?;
            let b = match &a.boundaries {
                Some(p) => load_boundaries(p)?,
                None => {
                    let null_name = a.null_scenario.clone().unwrap_or_else(|| {
                        match config.design.kind {
                            DesignKind::Smart1 => "null-smart1",
                            DesignKind::Smart2 => "null-smart2",
                        }
                        .to_string()
                    });
                    let null = load_scenario(&null_name)?;
                    let mut req = BoundaryRequest::new(a.stat, a.method);
                    req.alpha = a.alpha;
                    req.info = a.info.clone();
                    req.draws = a.draws;
                    req.seed = a.seed;
                    if a.oracle {
                        req.cov = CovChoice::Oracle;
                    }
                    workflow::null_boundaries(&null, a.null_n, &req)?.boundaries
                }
            };
            let oc = parallel::operating_characteristics(&config, &b, a.stat, &a.info, a.reps, a.seed, DEFAULT_RANK_TOL)?;
            let text = match a.output.format {
                Format::Csv => report::oc_csv(&oc),
                Format::Json => to_json(
                    &Report::new("oc", oc)
                        .seed(a.seed)
                        .scenario(&config.label)
                        .digest("scenario", config_digest(&config)),
                ),
            };
            emit(a.output.out.as_deref(), &text)
        }
        Command::Curves(a) => {
            let (design, data) = load_data(&a.data)?;
            let rep = workflow::curves(&data.records, &design, a.at.unwrap_or(f64::INFINITY))?;
            let text = match a.output.format {
                Format::Csv => report::curves_csv(&rep.curves),
                Format::Json => to_json(&Report::new("curves", rep).digest("data", data.digest)),
            };
            emit(a.output.out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
