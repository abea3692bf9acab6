//! `qfi` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 calibration guard tripped
//! (some `G <= 1/2`), 1 any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfi_core::calibration::{CalibrationOptions, CalibrationTable, Method, PairSelection};
use qfi_core::harness::{
    headline, run_experiment, BudgetScanConfig, CalibCompareConfig, EstimatorSettings, Experiment,
    GhzConfig, GscanConfig, LocalityConfig, RunConfig, TfimConfig,
};
use qfi_core::noise::NoiseModel;
use qfi_core::sampling::{
    calibration_state, read_records, run_protocol, write_records, ExperimentPlan, PreparedState, Purpose,
};
use qfi_core::states::{ghz, PureState};
use qfi_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "qfi", version, about = "Quantum Fisher information from noisy randomized measurements")]
struct Cli {
    /// Experiment configuration (JSON); used by the experiment subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seed in `--config`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for experiment outputs.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate calibration and estimation records for a named state.
    Simulate(SimulateArgs),
    /// Build a calibration table from calibration records.
    Calibrate(CalibrateArgs),
    /// Evaluate lower-bound estimators on estimation records.
    Estimate(EstimateArgs),
    /// GHZ lower bounds versus system size.
    Ghz(SizesArgs),
    /// Critical transverse-field Ising chain versus circuit depth.
    Tfim(TfimArgs),
    /// Survival probability versus number of unitary layers.
    EtaScan,
    /// Unitaries needed for a 10% error on F_2 versus system size.
    BudgetScan(SizesArgs),
    /// Survival-probability estimate versus number of unitaries.
    Gscan,
    /// Cross-talk diagnostics from pairwise calibration.
    Locality,
    /// Per-iteration versus upfront calibration under drift.
    CalibCompare(SizesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StateKind {
    Ghz,
    Zeros,
    Plus,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "ghz")]
    state: StateKind,
    #[arg(long)]
    n: usize,
    /// White-noise weight mixed into the prepared state.
    #[arg(long, default_value_t = 0.0)]
    mixing: f64,
    /// Readout flip probability on every qubit.
    #[arg(long, default_value_t = 0.0)]
    p_meas: f64,
    /// Number of iterations; with `--unitaries` replaces the automatic budget.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    unitaries: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    shots: usize,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    /// Output prefix; writes `<prefix>.cal.jsonl` and `<prefix>.est.jsonl`.
    #[arg(long, default_value = "records")]
    prefix: String,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "enhanced")]
    method: String,
    /// `none`, `all`, or a list such as `0-1,3-4`.
    #[arg(long, default_value = "none")]
    pairs: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    records: PathBuf,
    /// Calibration table; without it only raw estimates are reported.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    batches: usize,
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    orders: Vec<usize>,
    #[arg(long, default_value = "collective-z")]
    observable: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SizesArgs {
    /// Qubit counts, e.g. `4,6,8`.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    p_meas: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct TfimArgs {
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    depths: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    depth_noise: f64,
}

fn parse_pairs(s: &str) -> Result<PairSelection, Error> {
    match s {
        "none" => Ok(PairSelection::None),
        "all" => Ok(PairSelection::All),
        list => list
            .split(',')
            .map(|p| {
                let (a, b) = p
                    .split_once('-')
                    .ok_or_else(|| Error::InvalidConfig(format!("bad pair {p:?}")))?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidConfig(format!("bad qubit index {x:?}")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(PairSelection::List),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), Error> {
    let seed = cli.seed.unwrap_or(0);
    let plan = match (a.iterations, a.unitaries) {
        (Some(i), Some(u)) => ExperimentPlan::new(a.n, i, u, a.shots, seed)?,
        (None, None) => {
            let mut p = ExperimentPlan::auto_budget_for_batches(a.n, a.batches, seed)?;
            p.shots_per_unitary = a.shots;
            p
        }
        _ => return Err(Error::InvalidConfig("give both --iterations and --unitaries or neither".into())),
    };
    let psi = match a.state {
        StateKind::Ghz => ghz(a.n)?,
        StateKind::Zeros => PureState::zeros(a.n)?,
        StateKind::Plus => PureState::plus(a.n)?,
    };
    let state = PreparedState::with_white_noise(&psi, a.mixing)?;
    let model = NoiseModel::readout(a.n, a.p_meas);
    let cal = run_protocol(&calibration_state(a.n)?, &plan, &model, Purpose::Calibration)?;
    let est = run_protocol(&state, &plan, &model, Purpose::Estimation)?;
    let cal_path = cli.out_dir.join(format!("{}.cal.jsonl", a.prefix));
    let est_path = cli.out_dir.join(format!("{}.est.jsonl", a.prefix));
    write_records(&cal_path, &cal)?;
    write_records(&est_path, &est)?;
    println!("{}", cal_path.display());
    println!("{}", est_path.display());
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> Result<(), Error> {
    let records = read_records(&a.records)?;
    let table = CalibrationTable::from_records(
        &records,
        &CalibrationOptions {
            method: a.method.parse::<Method>()?,
            pairs: parse_pairs(&a.pairs)?,
        },
    )?;
    table.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn estimate(a: &EstimateArgs) -> Result<(), Error> {
    if a.observable != "collective-z" {
        return Err(Error::InvalidConfig(format!("unsupported observable {:?}", a.observable)));
    }
    let records = read_records(&a.records)?;
    let settings = EstimatorSettings {
        n_batches: a.batches,
        orders: a.orders.clone(),
        method: Method::Enhanced,
        purity: true,
    };
    let raw = qfi_core::harness::estimate_from_records(&records, None, &settings)?;
    let robust = match &a.calibration {
        Some(p) => {
            let table = CalibrationTable::load(p)?;
            table.check_mitigation()?;
            Some(qfi_core::harness::estimate_from_records(&records, Some(&table), &settings)?)
        }
        None => None,
    };
    let n_iterations = records.iter().map(|r| r.iteration).collect::<std::collections::BTreeSet<_>>().len();
    let out = json!({
        "records": a.records,
        "n_qubits": records[0].n_qubits(),
        "observable": a.observable,
        "n_batches": a.batches,
        "error_method": "jackknife",
        "budget": {
            "n_iterations": n_iterations,
            "n_unitaries": records.len(),
            "total_shots": records.iter().map(|r| r.shots).sum::<u64>(),
        },
        "robust": robust,
        "raw": raw,
    });
    write_json(&a.out, &out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Loads `--config` when given, otherwise builds a configuration from flags.
fn experiment_config(cli: &Cli) -> Result<RunConfig, Error> {
    if let Some(path) = &cli.config {
        let mut cfg = RunConfig::load(path)?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        return Ok(cfg);
    }
    let seed = cli
        .seed
        .ok_or_else(|| Error::InvalidConfig("a seed is required (--seed or --config)".into()))?;
    let need = |n: &[usize]| -> Result<Vec<usize>, Error> {
        if n.is_empty() {
            Err(Error::InvalidConfig("--n is required without --config".into()))
        } else {
            Ok(n.to_vec())
        }
    };
    let experiment = match &cli.command {
        Command::Ghz(a) => Experiment::Ghz(GhzConfig {
            n_values: need(&a.n)?,
            p_meas: a.p_meas.unwrap_or(0.0),
            runs: a.runs.unwrap_or(1),
            plan: None,
        }),
        Command::Tfim(a) => Experiment::Tfim(TfimConfig {
            n_values: need(&a.n)?,
            depths: (!a.depths.is_empty()).then(|| a.depths.clone()),
            depth_noise: a.depth_noise,
            p_meas: 0.0,
            h: 1.0,
            restarts: qfi_core::states::DEFAULT_RESTARTS,
            plan: None,
        }),
        Command::EtaScan => Experiment::EtaScan(serde_json::from_value(json!({}))?),
        Command::BudgetScan(a) => {
            let mut c: BudgetScanConfig = serde_json::from_value(json!({}))?;
            if !a.n.is_empty() {
                c.n_values = a.n.clone();
            }
            if let Some(r) = a.runs {
                c.runs = r;
            }
            Experiment::BudgetScan(c)
        }
        Command::Gscan => Experiment::Gscan(serde_json::from_value::<GscanConfig>(json!({}))?),
        Command::Locality => Experiment::Locality(serde_json::from_value::<LocalityConfig>(json!({}))?),
        Command::CalibCompare(a) => {
            let mut c: CalibCompareConfig = serde_json::from_value(json!({}))?;
            if !a.n.is_empty() {
                c.n_values = a.n.clone();
            }
            if let Some(p) = a.p_meas {
                c.p_meas = p;
            }
            if let Some(r) = a.runs {
                c.runs = r;
            }
            Experiment::CalibCompare(c)
        }
        _ => unreachable!("not an experiment subcommand"),
    };
    let cfg = RunConfig::new(seed, experiment);
    cfg.validate()?;
    Ok(cfg)
}

fn run_named(cli: &Cli, expected: &str) -> Result<(), Error> {
    let cfg = experiment_config(cli)?;
    if cfg.experiment.name() != expected {
        return Err(Error::InvalidConfig(format!(
            "config describes a {} experiment, subcommand is {expected}",
            cfg.experiment.name()
        )));
    }
    let out = run_experiment(&cfg)?;
    for path in out.write(&cli.out_dir)? {
        println!("{}", path.display());
    }
    for (k, v) in headline(&out) {
        println!("{k} = {v:.6}");
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical_guard() {
        return 3;
    }
    match e {
        Error::Dimension(_)
        | Error::CapExceeded { .. }
        | Error::NotHermitian { .. }
        | Error::NotPositive { .. }
        | Error::BadTrace { .. }
        | Error::InvalidProbability { .. }
        | Error::InvalidPlan(_)
        | Error::InvalidConfig(_)
        | Error::EmptyRecords(_)
        | Error::MissingCalibration(_)
        | Error::TooFewBatches { .. }
        | Error::Record(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Calibrate(a) => calibrate(a),
        Command::Estimate(a) => estimate(a),
        Command::Ghz(_) => run_named(&cli, "ghz"),
        Command::Tfim(_) => run_named(&cli, "tfim"),
        Command::EtaScan => run_named(&cli, "eta-scan"),
        Command::BudgetScan(_) => run_named(&cli, "budget-scan"),
        Command::Gscan => run_named(&cli, "gscan"),
        Command::Locality => run_named(&cli, "locality"),
        Command::CalibCompare(_) => run_named(&cli, "calib-compare"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
