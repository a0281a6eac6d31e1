//! The `fraccusum` command-line front end.
//!
//! Exit codes: 0 success or alarm, 2 usage or configuration error, 3 no
//! alarm, 4 strict-bound breach, 5 validation failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cusum::{
    calibrate_threshold, cusum_run, cusum_run_bridged, theoretical_characteristics,
    FalseAlarmBudget, Threshold,
};
use crate::error::{Error, Result};
use crate::fbm::{inject_drift, sample_fbm, Grid, HurstIndex, SamplePath, Seed};
use crate::harness::{
    replicates_csv, run_experiment, to_json, write_report, ExperimentConfig, ExperimentReport,
    Monitoring, ReportFormat,
};
use crate::likelihood::{llr_trace, q_process_numeric_with, DriftSpec};
use crate::rng::{RngStream, StreamPurpose};
use crate::transform::{KernelConvolver, VolatilitySpec};
use crate::validate::{run_validation, ValidationOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NO_ALARM: i32 = 3;
pub const EXIT_STRICT: i32 = 4;
pub const EXIT_VALIDATION: i32 = 5;

const SEED_ENV: &str = "FRACCUSUM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "fraccusum",
    version,
    about = "CUSUM change detection for fractional Brownian motion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a path and write it as CSV (`time,value`).
    Generate(GenerateArgs),
    /// Solve h(c) = gamma and print c, g(c), h(c) as JSON.
    Calibrate(CalibrateArgs),
    /// Run the detector offline on a path file.
    Detect(DetectArgs),
    /// Run a Monte Carlo batch from a TOML config.
    Experiment(ExperimentArgs),
    /// Run the built-in property suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DriftFamily {
    Polynomial,
    Affine,
    BoundedPower,
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long, value_enum, default_value = "polynomial")]
    pub drift_family: DriftFamily,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub c0: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub c1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub a: f64,
}

impl DriftArgs {
    fn spec(&self) -> DriftSpec {
        match self.drift_family {
            DriftFamily::Polynomial => DriftSpec::Polynomial {
                theta: self.theta,
                alpha: self.alpha,
            },
            DriftFamily::Affine => DriftSpec::Affine {
                c0: self.c0,
                c1: self.c1,
            },
            DriftFamily::BoundedPower => DriftSpec::BoundedPower {
                c0: self.c0,
                c1: self.c1,
                a: self.a,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub hurst: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub dt: f64,
    #[arg(long, env = SEED_ENV)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
    /// Change point: `inf` (pure noise) or `0` (drift from the start).
    #[arg(long, default_value = "inf")]
    pub tau: f64,
    #[command(flatten)]
    pub drift: DriftArgs,
    /// Constant volatility applied to the noise.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("detector").required(true).args(["threshold", "gamma"]))]
pub struct DetectArgs {
    /// CSV file with header `time,value` on a uniform grid starting at 0.
    pub path: PathBuf,
    #[arg(long)]
    pub hurst: f64,
    #[command(flatten)]
    pub drift: DriftArgs,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "grid")]
    pub monitoring: MonitoringArg,
    /// Seed for the bridge-corrected monitor.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MonitoringArg {
    Grid,
    Bridge,
}

impl From<MonitoringArg> for Monitoring {
    fn from(m: MonitoringArg) -> Self {
        match m {
            MonitoringArg::Grid => Monitoring::Grid,
            MonitoringArg::Bridge => Monitoring::Bridge,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    PreChange,
    PostChangeAtZero,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub master_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub monitoring: Option<MonitoringArg>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long)]
    pub grid_count: Option<usize>,
    #[arg(long, conflicts_with = "gamma")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Directory for report.json, report.csv and replicates.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Exit 4 when any estimand with a closed form has |z| above this bound.
    #[arg(long)]
    pub strict: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_delimiter = ',')]
    pub hurst_list: Option<Vec<f64>>,
    #[arg(long)]
    pub fast: bool,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn path_csv(path: &SamplePath) -> String {
    let mut out = String::from("time,value\n");
    for (j, x) in path.values.iter().enumerate() {
        let _ = writeln!(out, "{:.16e},{:.16e}", path.grid.time(j), x);
    }
    out
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let hurst = HurstIndex::new(args.hurst)?;
    let grid = Grid::new(args.dt, args.steps)?;
    let sigma = VolatilitySpec::Constant { value: args.sigma };
    sigma.validate(grid)?;
    let noise = sigma.modulate(&sample_fbm(
        hurst,
        grid,
        Seed::new(args.seed, args.replicate),
    )?);
    let path = inject_drift(&noise, &args.drift.spec(), args.tau)?;
    let text = path_csv(&path);
    match &args.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CalibrationOutput {
    gamma: f64,
    c: f64,
    g: f64,
    h: f64,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<i32> {
    let budget = FalseAlarmBudget::new(args.gamma)?;
    let c = calibrate_threshold(budget);
    let (g, h) = theoretical_characteristics(c);
    print!(
        "{}",
        to_json(&CalibrationOutput {
            gamma: args.gamma,
            c: c.value(),
            g,
            h,
        })?
    );
    Ok(EXIT_OK)
}

/// Reads a `time,value` CSV on a uniform grid starting at 0.
pub fn read_path_csv(file: &Path) -> Result<SamplePath> {
    let text = std::fs::read_to_string(file)?;
    let malformed =
        |line: usize, msg: &str| Error::Config(format!("{}:{line}: {msg}", file.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "time,value" => {}
        _ => return Err(malformed(1, "expected header `time,value`")),
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 {
            return Err(malformed(lineno, "expected two columns"));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(lineno, &format!("not a finite number: {s:?}")))
        };
        times.push(parse(cells[0])?);
        values.push(parse(cells[1])?);
    }
    if times.len() < 2 {
        return Err(malformed(
            text.lines().count().max(1),
            "need at least two rows",
        ));
    }
    let step = times[1] - times[0];
    let grid = Grid::new(step, times.len() - 1).map_err(|e| malformed(2, &e.to_string()))?;
    for (j, &t) in times.iter().enumerate() {
        if (t - grid.time(j)).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(malformed(
                j + 2,
                "times must form a uniform grid starting at 0",
            ));
        }
    }
    SamplePath::new(grid, values).map_err(|e| malformed(2, &e.to_string()))
}

#[derive(Serialize)]
struct DetectOutput {
    path: String,
    hurst: f64,
    drift: DriftSpec,
    sigma: f64,
    threshold: f64,
    monitoring: Monitoring,
    seed: u64,
    stopped: bool,
    stop_index: Option<usize>,
    stop_time: Option<f64>,
    overshoot: Option<f64>,
    u_at_stop: Option<f64>,
    qv_at_stop: Option<f64>,
    final_statistic: f64,
}

pub fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let hurst = HurstIndex::new(args.hurst)?;
    let drift = args.drift.spec();
    drift.validate()?;
    let threshold = match (args.threshold, args.gamma) {
        (Some(c), _) => Threshold::new(c)?,
        (None, Some(g)) => calibrate_threshold(FalseAlarmBudget::new(g)?),
        (None, None) => return Err(Error::Config("need --threshold or --gamma".into())),
    };
    let path = read_path_csv(&args.path)?;
    let sigma = VolatilitySpec::Constant { value: args.sigma };
    let conv = KernelConvolver::new(hurst, path.grid);
    let m = conv.transform(&path, &sigma)?;
    let q = q_process_numeric_with(&conv, &drift, &path, &sigma)?;
    let llr = llr_trace(&q, &m)?;
    let monitoring = Monitoring::from(args.monitoring);
    let result = match monitoring {
        Monitoring::Grid => cusum_run(&llr, threshold),
        Monitoring::Bridge => {
            let mut s = RngStream::new(args.seed, 0, StreamPurpose::Bridge);
            cusum_run_bridged(&llr, threshold, s.rng())
        }
    };
    let out = DetectOutput {
        path: args.path.display().to_string(),
        hurst: args.hurst,
        drift,
        sigma: args.sigma,
        threshold: threshold.value(),
        monitoring,
        seed: args.seed,
        stopped: result.stopped,
        stop_index: result.stop_index,
        stop_time: result.stop_time,
        overshoot: result.overshoot,
        u_at_stop: result.u_at_stop,
        qv_at_stop: result.qv_at_stop,
        final_statistic: *result.y.last().unwrap_or(&0.0),
    };
    print!("{}", to_json(&out)?);
    Ok(if result.stopped {
        EXIT_OK
    } else {
        EXIT_NO_ALARM
    })
}

/// Loads a TOML experiment config and applies flag overrides.
///
/// The master seed falls back to `FRACCUSUM_SEED` when neither the file nor
/// the flags set it.
pub fn load_experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;

    let mut set = |key: &str, value: toml::Value| {
        table.insert(key.to_string(), value);
    };
    if let Some(h) = args.hurst {
        set("hurst", h.into());
    }
    if let Some(r) = args.regime {
        let name = match r {
            RegimeArg::PreChange => "pre_change",
            RegimeArg::PostChangeAtZero => "post_change_at_zero",
        };
        set("regime", name.into());
    }
    if let Some(n) = args.replicates {
        set("replicates", toml::Value::Integer(to_toml_int(n as u64)?));
    }
    if let Some(s) = args.master_seed {
        set("master_seed", toml::Value::Integer(to_toml_int(s)?));
    }
    if let Some(m) = args.monitoring {
        let name = match m {
            MonitoringArg::Grid => "grid",
            MonitoringArg::Bridge => "bridge",
        };
        set("monitoring", name.into());
    }
    if let Some(h) = args.horizon {
        set("horizon", h.into());
    }
    if let Some(w) = args.workers {
        set("workers", toml::Value::Integer(to_toml_int(w as u64)?));
    }
    if let Some(c) = args.threshold {
        set(
            "detector",
            toml::Value::Table(toml::Table::from_iter([(
                "threshold".to_string(),
                c.into(),
            )])),
        );
    }
    if let Some(g) = args.gamma {
        set(
            "detector",
            toml::Value::Table(toml::Table::from_iter([("gamma".to_string(), g.into())])),
        );
    }
    if args.grid_step.is_some() || args.grid_count.is_some() {
        let grid = table
            .entry("grid")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let grid = grid
            .as_table_mut()
            .ok_or_else(|| Error::Config("`grid` must be a table".into()))?;
        if let Some(s) = args.grid_step {
            grid.insert("step".into(), s.into());
        }
        if let Some(n) = args.grid_count {
            grid.insert("count".into(), toml::Value::Integer(to_toml_int(n as u64)?));
        }
        if args.horizon.is_none() {
            table.remove("horizon");
        }
    }
    if !table.contains_key("master_seed") {
        if let Ok(env) = std::env::var(SEED_ENV) {
            let seed: u64 = env
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={env:?} is not a u64 seed")))?;
            table.insert(
                "master_seed".into(),
                toml::Value::Integer(to_toml_int(seed)?),
            );
        }
    }

    let config: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", args.config.display())))?;
    config.validate()?;
    Ok(config)
}

fn to_toml_int(x: u64) -> Result<i64> {
    i64::try_from(x).map_err(|_| Error::Config(format!("{x} does not fit a TOML integer")))
}

/// Fixed-width summary of the estimands.
pub fn z_table(report: &ExperimentReport) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "c = {:.6}  g(c) = {:.6}  h(c) = {:.6}  stopped {}/{}  failed {}  censor rate {:.4}\n",
        report.threshold,
        report.theory_g,
        report.theory_h,
        report.n_stopped,
        report.n_replicates,
        report.n_failed,
        report.censor_rate
    );
    let _ = writeln!(
        out,
        "{:<16} {:>12} {:>12} {:>12} {:>9} {:>7}",
        "estimand", "estimate", "std_error", "theory", "z", "n"
    );
    for e in &report.estimands {
        let _ = writeln!(
            out,
            "{:<16} {:>12} {:>12} {:>12} {:>9} {:>7}",
            e.name,
            cell(e.estimate),
            cell(e.std_error),
            cell(e.theory),
            e.z_score
                .map(|z| format!("{z:.2}"))
                .unwrap_or_else(|| "-".into()),
            e.n
        );
    }
    out
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<i32> {
    let config = load_experiment_config(args)?;
    let report = run_experiment(&config)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_report(
        &report,
        &args.out_dir.join("report.json"),
        ReportFormat::Json,
    )?;
    write_report(&report, &args.out_dir.join("report.csv"), ReportFormat::Csv)?;
    std::fs::write(args.out_dir.join("replicates.csv"), replicates_csv(&report))?;
    print!("{}", z_table(&report));

    if let Some(bound) = args.strict {
        let breaches: Vec<&str> = report
            .estimands
            .iter()
            .filter(|e| e.z_score.is_some_and(|z| z.abs() > bound))
            .map(|e| e.name.as_str())
            .collect();
        if !breaches.is_empty() {
            eprintln!("strict bound {bound} exceeded by: {}", breaches.join(", "));
            return Ok(EXIT_STRICT);
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let mut options = ValidationOptions {
        fast: args.fast,
        ..Default::default()
    };
    if let Some(list) = &args.hurst_list {
        options.hurst_list = list
            .iter()
            .map(|&h| HurstIndex::new(h))
            .collect::<Result<_>>()?;
    }
    if let Some(seed) = args.seed {
        options.master_seed = seed;
    }
    let report = run_validation(&options)?;
    for c in &report.checks {
        println!(
            "{} {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    })
}
