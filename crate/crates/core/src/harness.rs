//! Experiment orchestration: configuration, the simulate/calibrate/estimate
//! pipeline, one driver per experiment and tabular output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{
    detect_changepoint, g_contributions, locality_report, CalibrationOptions, CalibrationTable, LocalityReport,
    Method, PairSelection,
};
use crate::error::{Error, Result};
use crate::metrology::{lower_bounds_spectral, qfi_exact, Generator, WitnessThresholds};
use crate::noise::{depolarize, DriftSchedule, NoiseModel, StepEvent};
use crate::qmath::{check_cap, DiagonalOperator};
use crate::sampling::{calibration_state, run_protocol, ExperimentPlan, MeasurementRecord, PreparedState, Purpose};
use crate::seeds::derive_seed;
use crate::shadows::{build_batch_shadows, build_raw_batch_shadows, Estimate, UStatEngine, DEFAULT_BATCHES};
use crate::states::{
    ghz, optimize_angles_with, tfim_ground_state, variational_state, DensityMatrix, PureState, TfimSpec,
    DEFAULT_RESTARTS,
};

const TAG_GHZ: u64 = 0x6842;
const TAG_TFIM: u64 = 0x7F1A;
const TAG_ETA: u64 = 0xE7A0;
const TAG_BUDGET: u64 = 0xB0D6;
const TAG_GSCAN: u64 = 0x65CA;
const TAG_LOCALITY: u64 = 0x10CA;
const TAG_COMPARE: u64 = 0xC0C0;

fn default_batches() -> usize {
    DEFAULT_BATCHES
}
fn default_orders() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_one() -> usize {
    1
}
fn default_h() -> f64 {
    1.0
}
fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn default_two() -> usize {
    2
}
fn default_etas() -> Vec<usize> {
    (1..=10).collect()
}
fn default_eta_unitaries() -> usize {
    800
}
fn default_shots() -> usize {
    1000
}
fn default_budget_ns() -> Vec<usize> {
    (2..=6).collect()
}
fn default_runs_100() -> usize {
    100
}
fn default_target() -> f64 {
    0.1
}
fn default_epsilons() -> Vec<f64> {
    vec![0.0, 0.05]
}
fn default_gscan_grid() -> Vec<usize> {
    vec![25, 50, 100, 200, 400, 800]
}
fn default_six() -> usize {
    6
}
fn default_pair() -> (usize, usize) {
    (3, 4)
}
fn default_p_l() -> f64 {
    0.02
}
fn default_p_nl() -> f64 {
    0.002
}
fn default_locality_iterations() -> usize {
    135
}
fn default_per_iteration() -> usize {
    200
}
fn default_compare_ns() -> Vec<usize> {
    vec![6]
}
fn default_compare_p() -> f64 {
    0.014
}
fn default_step() -> f64 {
    0.02
}
fn default_compare_runs() -> usize {
    10
}

/// Replaces the automatic budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOverride {
    pub n_iterations: usize,
    pub unitaries_per_iteration: usize,
    #[serde(default = "default_shots")]
    pub shots_per_unitary: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhzConfig {
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub p_meas: f64,
    #[serde(default = "default_one")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfimConfig {
    pub n_values: Vec<usize>,
    /// Circuit depths; defaults to `1..=N/2` for each `N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<usize>>,
    /// Local depolarising strength per circuit layer applied to the
    /// prepared state.
    #[serde(default)]
    pub depth_noise: f64,
    #[serde(default)]
    pub p_meas: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaScanConfig {
    #[serde(default = "default_two")]
    pub n_qubits: usize,
    #[serde(default = "default_etas")]
    pub etas: Vec<usize>,
    #[serde(default)]
    pub p_u: f64,
    #[serde(default)]
    pub p_meas: f64,
    #[serde(default = "default_eta_unitaries")]
    pub unitaries: usize,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetScanConfig {
    #[serde(default = "default_budget_ns")]
    pub n_values: Vec<usize>,
    /// Total unitary counts to try, ascending; a geometric grid when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(default = "default_runs_100")]
    pub runs: usize,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default = "default_target")]
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GscanConfig {
    #[serde(default = "default_two")]
    pub n_qubits: usize,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_gscan_grid")]
    pub grid: Vec<usize>,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityConfig {
    #[serde(default = "default_six")]
    pub n_qubits: usize,
    #[serde(default = "default_pair")]
    pub pair: (usize, usize),
    #[serde(default = "default_p_l")]
    pub p_l: f64,
    #[serde(default = "default_p_nl")]
    pub p_nl: f64,
    #[serde(default = "default_locality_iterations")]
    pub iterations: usize,
    #[serde(default = "default_per_iteration")]
    pub unitaries: usize,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibCompareConfig {
    #[serde(default = "default_compare_ns")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_compare_p")]
    pub p_meas: f64,
    /// Added to every flip probability from `step_at` on.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Iteration of the step; half the iterations when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_at: Option<usize>,
    #[serde(default = "default_compare_runs")]
    pub runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanOverride>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Ghz(GhzConfig),
    Tfim(TfimConfig),
    EtaScan(EtaScanConfig),
    BudgetScan(BudgetScanConfig),
    Gscan(GscanConfig),
    Locality(LocalityConfig),
    CalibCompare(CalibCompareConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ghz(_) => "ghz",
            Self::Tfim(_) => "tfim",
            Self::EtaScan(_) => "eta-scan",
            Self::BudgetScan(_) => "budget-scan",
            Self::Gscan(_) => "gscan",
            Self::Locality(_) => "locality",
            Self::CalibCompare(_) => "calib-compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// White-noise weight `w` in `(1 - w)|psi><psi| + w 1/2^N`.
    #[serde(default)]
    pub mixing: f64,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    #[serde(default)]
    pub method: Method,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl RunConfig {
    pub fn new(seed: u64, experiment: Experiment) -> Self {
        Self {
            seed,
            mixing: 0.0,
            n_batches: DEFAULT_BATCHES,
            orders: default_orders(),
            method: Method::Enhanced,
            experiment,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::InvalidProbability {
                name: "mixing".into(),
                value: self.mixing,
                reason: "must lie in [0, 1]".into(),
            });
        }
        if self.n_batches < 2 {
            return Err(Error::InvalidConfig("need at least two batches".into()));
        }
        if let Some(&o) = self.orders.iter().find(|&&o| o > 3) {
            return Err(Error::InvalidConfig(format!("order {o} not supported (max 3)")));
        }
        let check_ns = |ns: &[usize]| -> Result<()> {
            if ns.is_empty() {
                return Err(Error::InvalidConfig("empty qubit list".into()));
            }
            ns.iter().try_for_each(|&n| {
                if n == 0 {
                    Err(Error::InvalidConfig("zero qubits".into()))
                } else {
                    check_cap(n)
                }
            })
        };
        match &self.experiment {
            Experiment::Ghz(c) => check_ns(&c.n_values)?,
            Experiment::Tfim(c) => {
                check_ns(&c.n_values)?;
                if c.n_values.iter().any(|&n| n < 2) {
                    return Err(Error::InvalidConfig("TFIM needs at least two qubits".into()));
                }
                if !(0.0..1.0).contains(&c.depth_noise) {
                    return Err(Error::InvalidConfig("depth_noise must lie in [0, 1)".into()));
                }
            }
            Experiment::EtaScan(c) => {
                check_ns(&[c.n_qubits])?;
                if c.etas.is_empty() || c.etas.contains(&0) {
                    return Err(Error::InvalidConfig("eta values must be positive".into()));
                }
            }
            Experiment::BudgetScan(c) => {
                check_ns(&c.n_values)?;
                if c.runs == 0 {
                    return Err(Error::InvalidConfig("zero runs".into()));
                }
            }
            Experiment::Gscan(c) => check_ns(&[c.n_qubits])?,
            Experiment::Locality(c) => {
                check_ns(&[c.n_qubits])?;
                let (a, b) = c.pair;
                if a == b || a >= c.n_qubits || b >= c.n_qubits {
                    return Err(Error::InvalidConfig(format!("bad pair ({a}, {b})")));
                }
            }
            Experiment::CalibCompare(c) => {
                check_ns(&c.n_values)?;
                if c.runs == 0 {
                    return Err(Error::InvalidConfig("zero runs".into()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.experiment.name(), &self.config_hash()[..12])
    }

    fn estimator_settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            n_batches: self.n_batches,
            orders: self.orders.clone(),
            method: self.method,
            purity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub series: String,
    pub n_qubits: usize,
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureTable {
    pub experiment: String,
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<FigureRow>,
}

impl FigureTable {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            experiment: cfg.experiment.name().into(),
            run_id: cfg.run_id(),
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, series: impl Into<String>, n_qubits: usize, x: f64, value: f64, stderr: f64) {
        self.rows.push(FigureRow {
            run_id: self.run_id.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            series: series.into(),
            n_qubits,
            x,
            value,
            stderr,
        });
    }

    pub fn series(&self, name: &str) -> Vec<&FigureRow> {
        self.rows.iter().filter(|r| r.series == name).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub n_batches: usize,
    pub orders: Vec<usize>,
    pub method: Method,
    pub purity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    pub order: usize,
    pub estimate: Estimate,
}

/// Estimates from one set of batch shadows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub bounds: Vec<OrderEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity: Option<Estimate>,
}

impl EstimatorSet {
    pub fn get(&self, order: usize) -> Option<&Estimate> {
        self.bounds.iter().find(|b| b.order == order).map(|b| &b.estimate)
    }

    /// Highest order present.
    pub fn top(&self) -> Option<&OrderEstimate> {
        self.bounds.iter().max_by_key(|b| b.order)
    }
}

/// Simulated calibration and estimation records sharing unitaries.
pub struct SimulatedRecords {
    pub calibration: Vec<MeasurementRecord>,
    pub estimation: Vec<MeasurementRecord>,
}

pub fn simulate_records(state: &PreparedState, model: &NoiseModel, plan: &ExperimentPlan) -> Result<SimulatedRecords> {
    let n = state.n_qubits();
    let calibration = run_protocol(&calibration_state(n)?, plan, model, Purpose::Calibration)?;
    let estimation = run_protocol(state, plan, model, Purpose::Estimation)?;
    Ok(SimulatedRecords {
        calibration,
        estimation,
    })
}

/// Evaluates the requested estimators; `table = None` gives raw shadows.
pub fn estimate_from_records(
    records: &[MeasurementRecord],
    table: Option<&CalibrationTable>,
    settings: &EstimatorSettings,
) -> Result<EstimatorSet> {
    let shadows = match table {
        Some(t) => build_batch_shadows(records, t, settings.n_batches)?,
        None => build_raw_batch_shadows(records, settings.n_batches)?,
    };
    let n = records[0].n_qubits();
    let a = DiagonalOperator::collective_z(n)?;
    let engine = UStatEngine::new(&shadows, &a)?;
    let bounds = settings
        .orders
        .iter()
        .map(|&o| Ok(OrderEstimate { order: o, estimate: engine.f(o)? }))
        .collect::<Result<_>>()?;
    let purity = if settings.purity { Some(engine.purity()?) } else { None };
    Ok(EstimatorSet { bounds, purity })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub robust: EstimatorSet,
    pub raw: EstimatorSet,
    /// Mean calibrated survival probability per qubit.
    pub mean_g: Vec<f64>,
}

/// Calibrate, build robust and raw shadows and evaluate both.
pub fn run_pipeline(
    state: &PreparedState,
    model: &NoiseModel,
    plan: &ExperimentPlan,
    settings: &EstimatorSettings,
) -> Result<PipelineResult> {
    let recs = simulate_records(state, model, plan)?;
    let table = CalibrationTable::from_records(
        &recs.calibration,
        &CalibrationOptions {
            method: settings.method,
            pairs: PairSelection::None,
        },
    )?;
    let robust = estimate_from_records(&recs.estimation, Some(&table), settings)?;
    let raw = estimate_from_records(&recs.estimation, None, settings)?;
    Ok(PipelineResult {
        robust,
        raw,
        mean_g: (0..state.n_qubits()).map(|j| table.mean_g(j)).collect(),
    })
}

fn plan_for(n: usize, n_batches: usize, seed: u64, over: &Option<PlanOverride>) -> Result<ExperimentPlan> {
    match over {
        Some(p) => ExperimentPlan::new(n, p.n_iterations, p.unitaries_per_iteration, p.shots_per_unitary, seed),
        None => ExperimentPlan::auto_budget_for_batches(n, n_batches, seed),
    }
}

/// Exact `F_0..F_max` and `F_Q` of a density matrix for the collective spin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub bounds: Vec<f64>,
    pub qfi: f64,
    pub purity: f64,
}

impl ExactValues {
    pub fn of(rho: &DensityMatrix, max_order: usize) -> Result<Self> {
        let a = Generator::collective_z(rho.n_qubits())?;
        Ok(Self {
            bounds: lower_bounds_spectral(rho.matrix(), &a, max_order)?,
            qfi: qfi_exact(rho.matrix(), &a)?,
            purity: crate::metrology::purity(rho.matrix()),
        })
    }
}

/// Entanglement certified by one estimate, judged on `value - stderr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessFlags {
    pub order: usize,
    pub gme_robust: bool,
    pub gme_raw: bool,
    pub depth_robust: usize,
    pub depth_raw: usize,
}

fn witness_flags(th: &WitnessThresholds, order: usize, robust: &Estimate, raw: &Estimate) -> WitnessFlags {
    let lo = |e: &Estimate| e.value - e.stderr;
    WitnessFlags {
        order,
        gme_robust: lo(robust) > th.gme_formula(),
        gme_raw: lo(raw) > th.gme_formula(),
        depth_robust: th.certified_depth(lo(robust)),
        depth_raw: th.certified_depth(lo(raw)),
    }
}

fn flags_for(th: &WitnessThresholds, p: &PipelineResult) -> Vec<WitnessFlags> {
    p.robust
        .bounds
        .iter()
        .filter_map(|b| p.raw.get(b.order).map(|r| witness_flags(th, b.order, &b.estimate, r)))
        .collect()
}

fn max_order(orders: &[usize]) -> usize {
    orders.iter().copied().max().unwrap_or(0).max(2)
}

fn push_estimates(table: &mut FigureTable, prefix: &str, n: usize, x: f64, set: &EstimatorSet) {
    for b in &set.bounds {
        table.push(format!("{prefix}_F{}", b.order), n, x, b.estimate.value, b.estimate.stderr);
    }
    if let Some(p) = &set.purity {
        table.push(format!("{prefix}_purity"), n, x, p.value, p.stderr);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhzPoint {
    pub n_qubits: usize,
    pub run: usize,
    pub seed: u64,
    pub n_unitaries: usize,
    pub pipeline: PipelineResult,
    pub exact: ExactValues,
    pub heisenberg: f64,
    pub thresholds: WitnessThresholds,
    pub witness: Vec<WitnessFlags>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhzResult {
    pub points: Vec<GhzPoint>,
}

pub fn run_ghz_experiment(cfg: &RunConfig) -> Result<(GhzResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::Ghz(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a ghz experiment".into()));
    };
    let settings = cfg.estimator_settings();
    let jobs: Vec<(usize, usize)> = c
        .n_values
        .iter()
        .flat_map(|&n| (0..c.runs).map(move |r| (n, r)))
        .collect();
    let points: Vec<GhzPoint> = jobs
        .par_iter()
        .map(|&(n, run)| {
            let seed = derive_seed(cfg.seed, &[TAG_GHZ, n as u64, run as u64]);
            let psi = ghz(n)?;
            let state = PreparedState::with_white_noise(&psi, cfg.mixing)?;
            let plan = plan_for(n, cfg.n_batches, seed, &c.plan)?;
            let pipeline = run_pipeline(&state, &NoiseModel::readout(n, c.p_meas), &plan, &settings)?;
            let thresholds = WitnessThresholds::new(n)?;
            Ok(GhzPoint {
                n_qubits: n,
                run,
                seed,
                n_unitaries: plan.total(),
                witness: flags_for(&thresholds, &pipeline),
                exact: ExactValues::of(&DensityMatrix::with_white_noise(&psi, cfg.mixing)?, max_order(&cfg.orders))?,
                heisenberg: (n * n) as f64,
                thresholds,
                pipeline,
            })
        })
        .collect::<Result<_>>()?;
    let mut table = FigureTable::new(cfg);
    for p in &points {
        let x = p.n_qubits as f64;
        push_estimates(&mut table, "robust", p.n_qubits, x, &p.pipeline.robust);
        push_estimates(&mut table, "raw", p.n_qubits, x, &p.pipeline.raw);
        if p.run == 0 {
            table.push("heisenberg", p.n_qubits, x, p.heisenberg, 0.0);
            table.push("gme_formula", p.n_qubits, x, p.thresholds.gme_formula(), 0.0);
            table.push("gme_caption", p.n_qubits, x, p.thresholds.gme_caption(), 0.0);
            for (k, g) in p.thresholds.gamma.iter().enumerate() {
                table.push(format!("gamma_k{}", k + 1), p.n_qubits, x, *g, 0.0);
            }
            for (o, v) in p.exact.bounds.iter().enumerate() {
                table.push(format!("exact_F{o}"), p.n_qubits, x, *v, 0.0);
            }
        }
    }
    Ok((GhzResult { points }, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfimPoint {
    pub n_qubits: usize,
    pub depth: usize,
    pub seed: u64,
    pub energy: f64,
    pub ground_energy: f64,
    pub fidelity: f64,
    /// Per-qubit depolarising probability applied after preparation.
    pub depolarizing: f64,
    pub pipeline: PipelineResult,
    pub exact_prepared: ExactValues,
    pub witness: Vec<WitnessFlags>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfimSummary {
    pub n_qubits: usize,
    pub ground_qfi: f64,
    pub gamma_2: f64,
    /// Depth with the largest estimated `F_1`.
    pub best_depth_estimated: Option<usize>,
    pub best_depth_exact: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfimResult {
    pub points: Vec<TfimPoint>,
    pub summaries: Vec<TfimSummary>,
}

/// Prepared variational state with depth-scaled local depolarising noise.
pub fn noisy_variational_state(
    spec: &TfimSpec,
    depth: usize,
    depth_noise: f64,
    mixing: f64,
    seed: u64,
    restarts: usize,
) -> Result<(DensityMatrix, crate::states::OptimizedAngles, f64)> {
    let opt = optimize_angles_with(spec, depth, seed, restarts)?;
    let plus = PureState::plus(spec.n_qubits)?;
    let psi = match &opt.angles {
        Some(a) => variational_state(spec, a, &plus)?,
        None => plus,
    };
    let mut rho = DensityMatrix::with_white_noise(&psi, mixing)?.into_matrix();
    let p = (depth_noise * depth as f64).min(0.75);
    if p > 0.0 {
        for q in 0..spec.n_qubits {
            rho = depolarize(&rho, q, p)?;
        }
    }
    Ok((DensityMatrix::new(rho.hermitize())?, opt, p))
}

fn argmax_depth<'a>(pts: impl Iterator<Item = (usize, f64)> + 'a) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (d, v) in pts {
        if best.is_none_or(|b| v > b.1) {
            best = Some((d, v));
        }
    }
    best.map(|b| b.0)
}

pub fn run_tfim_experiment(cfg: &RunConfig) -> Result<(TfimResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::Tfim(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a tfim experiment".into()));
    };
    let settings = cfg.estimator_settings();
    let jobs: Vec<(usize, usize)> = c
        .n_values
        .iter()
        .flat_map(|&n| {
            let depths = c.depths.clone().unwrap_or_else(|| (1..=n / 2).collect());
            depths.into_iter().map(move |p| (n, p))
        })
        .collect();
    let points: Vec<TfimPoint> = jobs
        .par_iter()
        .map(|&(n, depth)| {
            let spec = TfimSpec { h: c.h, ..TfimSpec::critical(n) };
            let seed = derive_seed(cfg.seed, &[TAG_TFIM, n as u64, depth as u64]);
            let (rho, opt, p) = noisy_variational_state(&spec, depth, c.depth_noise, cfg.mixing, seed, c.restarts)?;
            let state = PreparedState::from_density(&rho)?;
            let plan = plan_for(n, cfg.n_batches, seed, &c.plan)?;
            let pipeline = run_pipeline(&state, &NoiseModel::readout(n, c.p_meas), &plan, &settings)?;
            let thresholds = WitnessThresholds::new(n)?;
            Ok(TfimPoint {
                n_qubits: n,
                depth,
                seed,
                energy: opt.energy,
                ground_energy: opt.ground_energy,
                fidelity: opt.fidelity,
                depolarizing: p,
                witness: flags_for(&thresholds, &pipeline),
                exact_prepared: ExactValues::of(&rho, max_order(&cfg.orders))?,
                pipeline,
            })
        })
        .collect::<Result<_>>()?;

    let mut ns: Vec<usize> = c.n_values.clone();
    ns.dedup();
    let mut summaries = Vec::new();
    let mut table = FigureTable::new(cfg);
    for &n in &ns {
        let spec = TfimSpec { h: c.h, ..TfimSpec::critical(n) };
        let ground = tfim_ground_state(&spec)?;
        let ground_qfi = crate::metrology::pure_state_qfi(ground.state.amplitudes(), &Generator::collective_z(n)?)?;
        let mine: Vec<&TfimPoint> = points.iter().filter(|p| p.n_qubits == n).collect();
        let est_f1 = |p: &TfimPoint| p.pipeline.robust.get(1).map(|e| e.value);
        summaries.push(TfimSummary {
            n_qubits: n,
            ground_qfi,
            gamma_2: WitnessThresholds::new(n)?.gamma(2),
            best_depth_estimated: argmax_depth(mine.iter().filter_map(|p| est_f1(p).map(|v| (p.depth, v)))),
            best_depth_exact: argmax_depth(
                mine.iter()
                    .filter_map(|p| p.exact_prepared.bounds.get(1).map(|v| (p.depth, *v))),
            ),
        });
        for p in &mine {
            let x = p.depth as f64;
            push_estimates(&mut table, "robust", n, x, &p.pipeline.robust);
            push_estimates(&mut table, "raw", n, x, &p.pipeline.raw);
            table.push("exact_qfi_prepared", n, x, p.exact_prepared.qfi, 0.0);
            if let Some(f1) = p.exact_prepared.bounds.get(1) {
                table.push("exact_F1_prepared", n, x, *f1, 0.0);
            }
            table.push("exact_qfi_ground", n, x, ground_qfi, 0.0);
            table.push("gamma_k2", n, x, WitnessThresholds::new(n)?.gamma(2), 0.0);
            table.push("separable", n, x, n as f64, 0.0);
        }
    }
    Ok((TfimResult { points, summaries }, table))
}

/// Ordinary least squares `y = intercept + slope x` with standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InvalidConfig("linear fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_stderr, intercept_stderr) = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let s2 = rss / (nf - 2.0);
        ((s2 / sxx).sqrt(), (s2 * (1.0 / nf + mx * mx / sxx)).sqrt())
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        intercept_stderr,
    })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::INFINITY);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Survival-probability estimate for every qubit from one calibration run.
fn g_estimates(records: &[MeasurementRecord], method: Method) -> Vec<(f64, f64)> {
    let refs: Vec<&MeasurementRecord> = records.iter().collect();
    (0..records[0].n_qubits())
        .map(|j| mean_se(&g_contributions(&refs, j, method)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub eta: usize,
    /// `(G, stderr)` per qubit.
    pub g: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaScanResult {
    pub points: Vec<EtaPoint>,
    pub fits: Vec<LinearFit>,
    /// Fit to the qubit-averaged series.
    pub mean_fit: LinearFit,
    pub model_slope: f64,
    pub model_intercept: f64,
}

pub fn run_eta_scan(cfg: &RunConfig) -> Result<(EtaScanResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::EtaScan(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected an eta-scan experiment".into()));
    };
    let n = c.n_qubits;
    let model = NoiseModel::uniform(n, c.p_meas, c.p_u);
    let points: Vec<EtaPoint> = c
        .etas
        .par_iter()
        .map(|&eta| {
            let mut plan = ExperimentPlan::new(
                n,
                1,
                c.unitaries,
                c.shots,
                derive_seed(cfg.seed, &[TAG_ETA, eta as u64]),
            )?;
            plan.eta = eta;
            let recs = run_protocol(&calibration_state(n)?, &plan, &model, Purpose::Calibration)?;
            Ok(EtaPoint {
                eta,
                g: g_estimates(&recs, cfg.method),
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = points.iter().map(|p| p.eta as f64).collect();
    let fits = (0..n)
        .map(|j| linear_fit(&xs, &points.iter().map(|p| p.g[j].0).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let mean_fit = linear_fit(
        &xs,
        &points
            .iter()
            .map(|p| p.g.iter().map(|g| g.0).sum::<f64>() / n as f64)
            .collect::<Vec<_>>(),
    )?;
    let mut table = FigureTable::new(cfg);
    for p in &points {
        for (j, (g, se)) in p.g.iter().enumerate() {
            table.push(format!("G_q{j}"), n, p.eta as f64, *g, *se);
        }
        let model_g = 1.0 - 2.0 * c.p_u / 3.0 * p.eta as f64 - c.p_meas;
        table.push("model", n, p.eta as f64, model_g, 0.0);
    }
    Ok((
        EtaScanResult {
            points,
            fits,
            mean_fit,
            model_slope: -2.0 * c.p_u / 3.0,
            model_intercept: 1.0 - c.p_meas,
        },
        table,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub n_qubits: usize,
    pub n_unitaries: usize,
    pub mean_error: f64,
    pub mean_error_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRequirement {
    pub n_qubits: usize,
    /// Interpolated unitary count reaching the target; `None` when the grid
    /// does not bracket it.
    pub required: Option<f64>,
    pub grid_too_coarse: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetScanResult {
    pub points: Vec<BudgetPoint>,
    pub requirements: Vec<BudgetRequirement>,
    /// `log2(N_U) = intercept + slope N`.
    pub fit: Option<LinearFit>,
}

/// Geometric grid `20 * 2^(k/2)` rounded to multiples of `step`.
pub fn geometric_grid(step: usize, max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for k in 0.. {
        let v = 20.0 * 2f64.powf(k as f64 / 2.0);
        let r = ((v / step as f64).round() as usize).max(1) * step;
        if r > max {
            break;
        }
        if out.last() != Some(&r) {
            out.push(r);
        }
    }
    out
}

/// Mean relative error of the noiseless GHZ `F_2` estimate over `runs`
/// repetitions with `n_unitaries` split evenly across `n_batches`
/// iterations. Shadows are built with `G = 1`.
pub fn budget_point(
    n: usize,
    n_unitaries: usize,
    shots: usize,
    runs: usize,
    n_batches: usize,
    seed: u64,
) -> Result<BudgetPoint> {
    let psi = ghz(n)?;
    let state = PreparedState::pure(&psi);
    let exact = (n * n) as f64;
    let settings = EstimatorSettings {
        n_batches,
        orders: vec![2],
        method: Method::Enhanced,
        purity: false,
    };
    let per = n_unitaries.div_ceil(n_batches);
    let errors: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let plan = ExperimentPlan::new(
                n,
                n_batches,
                per,
                shots,
                derive_seed(seed, &[TAG_BUDGET, n as u64, n_unitaries as u64, shots as u64, r as u64]),
            )?;
            let recs = run_protocol(&state, &plan, &NoiseModel::noiseless(n), Purpose::Estimation)?;
            let est = estimate_from_records(&recs, None, &settings)?;
            Ok((est.get(2).unwrap().value - exact).abs() / exact)
        })
        .collect::<Result<_>>()?;
    let (m, se) = mean_se(&errors);
    Ok(BudgetPoint {
        n_qubits: n,
        n_unitaries: per * n_batches,
        mean_error: m,
        mean_error_stderr: se,
    })
}

pub fn run_budget_scan(cfg: &RunConfig) -> Result<(BudgetScanResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::BudgetScan(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a budget-scan experiment".into()));
    };
    let grid = c
        .grid
        .clone()
        .unwrap_or_else(|| geometric_grid(cfg.n_batches, 40_960));
    let mut points = Vec::new();
    let mut requirements = Vec::new();
    for &n in &c.n_values {
        let mut prev: Option<BudgetPoint> = None;
        let mut req = BudgetRequirement {
            n_qubits: n,
            required: None,
            grid_too_coarse: true,
        };
        for &nu in &grid {
            let pt = budget_point(n, nu, c.shots, c.runs, cfg.n_batches, cfg.seed)?;
            let done = pt.mean_error <= c.target;
            if done {
                if let Some(p) = &prev {
                    // linear interpolation between the bracketing points
                    let (x0, y0, x1, y1) = (
                        p.n_unitaries as f64,
                        p.mean_error,
                        pt.n_unitaries as f64,
                        pt.mean_error,
                    );
                    req.required = Some(x0 + (c.target - y0) * (x1 - x0) / (y1 - y0));
                    req.grid_too_coarse = false;
                }
            }
            points.push(pt.clone());
            prev = Some(pt);
            if done {
                break;
            }
        }
        requirements.push(req);
    }
    let ok: Vec<&BudgetRequirement> = requirements.iter().filter(|r| r.required.is_some()).collect();
    let fit = if ok.len() >= 2 {
        Some(linear_fit(
            &ok.iter().map(|r| r.n_qubits as f64).collect::<Vec<_>>(),
            &ok.iter().map(|r| r.required.unwrap().log2()).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let mut table = FigureTable::new(cfg);
    for p in &points {
        table.push("mean_error", p.n_qubits, p.n_unitaries as f64, p.mean_error, p.mean_error_stderr);
    }
    for r in &requirements {
        if let Some(v) = r.required {
            table.push("required_unitaries", r.n_qubits, r.n_qubits as f64, v, 0.0);
        }
    }
    Ok((
        BudgetScanResult {
            points,
            requirements,
            fit,
        },
        table,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GscanPoint {
    pub epsilon: f64,
    pub n_unitaries: usize,
    pub g: Vec<(f64, f64)>,
    /// `|G - (1 - epsilon)| <= 3 stderr` for every qubit.
    pub compatible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GscanResult {
    pub points: Vec<GscanPoint>,
    /// Fit of `log(stderr)` against `log(N_U)` pooled over qubits and noise
    /// levels; the slope is the scaling exponent.
    pub stderr_scaling: LinearFit,
}

pub fn run_gscan(cfg: &RunConfig) -> Result<(GscanResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::Gscan(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a gscan experiment".into()));
    };
    let n = c.n_qubits;
    let jobs: Vec<(usize, usize)> = (0..c.epsilons.len())
        .flat_map(|e| c.grid.iter().map(move |&u| (e, u)))
        .collect();
    let points: Vec<GscanPoint> = jobs
        .par_iter()
        .map(|&(e, nu)| {
            let eps = c.epsilons[e];
            let plan = ExperimentPlan::new(n, 1, nu, c.shots, derive_seed(cfg.seed, &[TAG_GSCAN, e as u64, nu as u64]))?;
            let recs = run_protocol(&calibration_state(n)?, &plan, &NoiseModel::readout(n, eps), Purpose::Calibration)?;
            let g = g_estimates(&recs, cfg.method);
            let compatible = g.iter().all(|(v, se)| (v - (1.0 - eps)).abs() <= 3.0 * se);
            Ok(GscanPoint {
                epsilon: eps,
                n_unitaries: nu,
                g,
                compatible,
            })
        })
        .collect::<Result<_>>()?;
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for p in &points {
        for (_, se) in &p.g {
            if *se > 0.0 && se.is_finite() {
                lx.push((p.n_unitaries as f64).ln());
                ly.push(se.ln());
            }
        }
    }
    let stderr_scaling = linear_fit(&lx, &ly)?;
    let mut table = FigureTable::new(cfg);
    for p in &points {
        for (j, (g, se)) in p.g.iter().enumerate() {
            table.push(format!("G_q{j}_eps{}", p.epsilon), n, p.n_unitaries as f64, *g, *se);
        }
    }
    Ok((GscanResult { points, stderr_scaling }, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityResult {
    pub report: LocalityReport,
    /// First-order expectations for the simulated channel.
    pub expected_p_nl: f64,
    pub expected_p_l: f64,
    /// `p_NL / mean(p_L(j), p_L(j'))`
    pub ratio: f64,
}

pub fn run_locality(cfg: &RunConfig) -> Result<(LocalityResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::Locality(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a locality experiment".into()));
    };
    let n = c.n_qubits;
    let model = NoiseModel::readout(n, c.p_l).with_cross_talk(c.pair, c.p_nl);
    let plan = ExperimentPlan::new(n, c.iterations, c.unitaries, c.shots, derive_seed(cfg.seed, &[TAG_LOCALITY]))?;
    let recs = run_protocol(&calibration_state(n)?, &plan, &model, Purpose::Calibration)?;
    let table = CalibrationTable::from_records(
        &recs,
        &CalibrationOptions {
            method: cfg.method,
            pairs: PairSelection::List(vec![c.pair]),
        },
    )?;
    let report = locality_report(&table)?;
    let p = &report.pairs[0];
    let ratio = p.p_nl.value / (0.5 * (p.p_l_j.value + p.p_l_jp.value));
    let mut fig = FigureTable::new(cfg);
    for (name, m) in [
        ("G_j", p.g_j),
        ("G_jp", p.g_jp),
        ("G_pair", p.g_pair),
        ("R", p.r_tilde),
        ("p_NL", p.p_nl),
        ("p_L_j", p.p_l_j),
        ("p_L_jp", p.p_l_jp),
    ] {
        fig.push(name, n, 0.0, m.value, m.stderr.unwrap_or(f64::NAN));
    }
    Ok((
        LocalityResult {
            report,
            expected_p_nl: c.p_nl,
            expected_p_l: c.p_l,
            ratio,
        },
        fig,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparePoint {
    pub n_qubits: usize,
    pub run: usize,
    pub seed: u64,
    pub step_at: usize,
    pub upfront: EstimatorSet,
    pub per_iteration: EstimatorSet,
    pub exact: ExactValues,
    /// Changepoint found in the qubit-averaged survival series.
    pub detected_step: Option<usize>,
    pub detected_shift: Option<f64>,
    pub g_series: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub n_qubits: usize,
    pub order: usize,
    pub mean_abs_bias_upfront: f64,
    pub mean_abs_bias_per_iteration: f64,
    /// Paired difference `|bias_upfront| - |bias_per_iteration|` across runs.
    pub advantage: f64,
    pub advantage_stderr: f64,
    pub mean_jackknife_stderr: f64,
    pub changepoint_hits: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareResult {
    pub points: Vec<ComparePoint>,
    pub summaries: Vec<CompareSummary>,
}

pub fn run_calibration_comparison(cfg: &RunConfig) -> Result<(CompareResult, FigureTable)> {
    cfg.validate()?;
    let Experiment::CalibCompare(c) = &cfg.experiment else {
        return Err(Error::InvalidConfig("expected a calib-compare experiment".into()));
    };
    let settings = EstimatorSettings {
        purity: false,
        ..cfg.estimator_settings()
    };
    let jobs: Vec<(usize, usize)> = c
        .n_values
        .iter()
        .flat_map(|&n| (0..c.runs).map(move |r| (n, r)))
        .collect();
    let points: Vec<ComparePoint> = jobs
        .par_iter()
        .map(|&(n, run)| {
            let seed = derive_seed(cfg.seed, &[TAG_COMPARE, n as u64, run as u64]);
            let plan = plan_for(n, cfg.n_batches, seed, &c.plan)?;
            let step_at = c.step_at.unwrap_or(plan.n_iterations / 2);
            let model = NoiseModel::readout(n, c.p_meas).with_drift(DriftSchedule::Steps {
                events: vec![StepEvent {
                    iteration: step_at,
                    scale: 1.0,
                    meas_offset: c.step,
                }],
            });
            let psi = ghz(n)?;
            let state = PreparedState::with_white_noise(&psi, cfg.mixing)?;
            let recs = simulate_records(&state, &model, &plan)?;
            let per = CalibrationTable::from_records(
                &recs.calibration,
                &CalibrationOptions {
                    method: cfg.method,
                    pairs: PairSelection::None,
                },
            )?;
            let up = per.upfront()?;
            let g_series: Vec<f64> = per
                .iterations
                .values()
                .map(|e| e.g.iter().sum::<f64>() / n as f64)
                .collect();
            let cp = detect_changepoint(&g_series);
            let iters: Vec<usize> = per.iterations.keys().copied().collect();
            Ok(ComparePoint {
                n_qubits: n,
                run,
                seed,
                step_at,
                upfront: estimate_from_records(&recs.estimation, Some(&up), &settings)?,
                per_iteration: estimate_from_records(&recs.estimation, Some(&per), &settings)?,
                exact: ExactValues::of(&DensityMatrix::with_white_noise(&psi, cfg.mixing)?, max_order(&cfg.orders))?,
                detected_step: cp.map(|(k, _)| iters[k]),
                detected_shift: cp.map(|(_, s)| s),
                g_series,
            })
        })
        .collect::<Result<_>>()?;

    let mut summaries = Vec::new();
    let mut table = FigureTable::new(cfg);
    let mut ns = c.n_values.clone();
    ns.dedup();
    for &n in &ns {
        let mine: Vec<&ComparePoint> = points.iter().filter(|p| p.n_qubits == n).collect();
        for &order in &cfg.orders {
            let exact = mine[0].exact.bounds[order];
            let bias = |s: &EstimatorSet| (s.get(order).unwrap().value - exact).abs();
            let up: Vec<f64> = mine.iter().map(|p| bias(&p.upfront)).collect();
            let per: Vec<f64> = mine.iter().map(|p| bias(&p.per_iteration)).collect();
            let diff: Vec<f64> = up.iter().zip(&per).map(|(a, b)| a - b).collect();
            let (adv, adv_se) = mean_se(&diff);
            let jk: Vec<f64> = mine
                .iter()
                .map(|p| p.per_iteration.get(order).unwrap().stderr)
                .collect();
            summaries.push(CompareSummary {
                n_qubits: n,
                order,
                mean_abs_bias_upfront: mean_se(&up).0,
                mean_abs_bias_per_iteration: mean_se(&per).0,
                advantage: adv,
                advantage_stderr: adv_se,
                mean_jackknife_stderr: mean_se(&jk).0,
                changepoint_hits: mine.iter().filter(|p| p.detected_step == Some(p.step_at)).count(),
                runs: mine.len(),
            });
        }
        for p in &mine {
            let x = p.run as f64;
            push_estimates(&mut table, "upfront", n, x, &p.upfront);
            push_estimates(&mut table, "per_iteration", n, x, &p.per_iteration);
            for (o, v) in p.exact.bounds.iter().enumerate() {
                table.push(format!("exact_F{o}"), n, x, *v, 0.0);
            }
        }
    }
    Ok((CompareResult { points, summaries }, table))
}

/// Result of any experiment, tagged by kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", content = "data", rename_all = "kebab-case")]
pub enum ExperimentResult {
    Ghz(GhzResult),
    Tfim(TfimResult),
    EtaScan(EtaScanResult),
    BudgetScan(BudgetScanResult),
    Gscan(GscanResult),
    Locality(LocalityResult),
    CalibCompare(CompareResult),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub run_id: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub result: ExperimentResult,
    pub table: FigureTable,
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput> {
    let (result, table) = match &cfg.experiment {
        Experiment::Ghz(_) => run_ghz_experiment(cfg).map(|(r, t)| (ExperimentResult::Ghz(r), t))?,
        Experiment::Tfim(_) => run_tfim_experiment(cfg).map(|(r, t)| (ExperimentResult::Tfim(r), t))?,
        Experiment::EtaScan(_) => run_eta_scan(cfg).map(|(r, t)| (ExperimentResult::EtaScan(r), t))?,
        Experiment::BudgetScan(_) => run_budget_scan(cfg).map(|(r, t)| (ExperimentResult::BudgetScan(r), t))?,
        Experiment::Gscan(_) => run_gscan(cfg).map(|(r, t)| (ExperimentResult::Gscan(r), t))?,
        Experiment::Locality(_) => run_locality(cfg).map(|(r, t)| (ExperimentResult::Locality(r), t))?,
        Experiment::CalibCompare(_) => {
            run_calibration_comparison(cfg).map(|(r, t)| (ExperimentResult::CalibCompare(r), t))?
        }
    };
    Ok(RunOutput {
        run_id: cfg.run_id(),
        config_hash: cfg.config_hash(),
        config: cfg.clone(),
        result,
        table,
    })
}

impl RunOutput {
    /// Writes `<run_id>.json`, `<run_id>.figure.json` and `<run_id>.csv`;
    /// returns the paths written.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(out_dir)?;
        let results = out_dir.join(format!("{}.json", self.run_id));
        let figure = out_dir.join(format!("{}.figure.json", self.run_id));
        let csv = out_dir.join(format!("{}.csv", self.run_id));
        std::fs::write(&results, serde_json::to_string_pretty(self)?)?;
        std::fs::write(&figure, serde_json::to_string_pretty(&self.table)?)?;
        self.table.write_csv(&csv)?;
        Ok(vec![results, figure, csv])
    }
}

/// Summary statistics keyed by name, used by the CLI for terse output.
pub fn headline(output: &RunOutput) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    match &output.result {
        ExperimentResult::EtaScan(r) => {
            m.insert("slope".into(), r.mean_fit.slope);
            m.insert("intercept".into(), r.mean_fit.intercept);
            m.insert("model_slope".into(), r.model_slope);
        }
        ExperimentResult::BudgetScan(r) => {
            if let Some(f) = r.fit {
                m.insert("exponent".into(), f.slope);
                m.insert("exponent_stderr".into(), f.slope_stderr);
            }
        }
        ExperimentResult::Gscan(r) => {
            m.insert("stderr_exponent".into(), r.stderr_scaling.slope);
        }
        ExperimentResult::Locality(r) => {
            let p = &r.report.pairs[0];
            m.insert("p_nl".into(), p.p_nl.value);
            m.insert("p_l_j".into(), p.p_l_j.value);
            m.insert("ratio".into(), r.ratio);
        }
        ExperimentResult::CalibCompare(r) => {
            for s in &r.summaries {
                m.insert(format!("N{}_F{}_advantage", s.n_qubits, s.order), s.advantage);
            }
        }
        ExperimentResult::Ghz(r) => {
            for p in &r.points {
                if let Some(t) = p.pipeline.robust.top() {
                    m.insert(format!("N{}_run{}_robust_F{}", p.n_qubits, p.run, t.order), t.estimate.value);
                }
            }
        }
        ExperimentResult::Tfim(r) => {
            for s in &r.summaries {
                if let Some(d) = s.best_depth_estimated {
                    m.insert(format!("N{}_best_depth", s.n_qubits), d as f64);
                }
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let text = r#"{"seed": 7, "experiment": "ghz", "n_values": [3]}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.n_batches, 10);
        assert_eq!(cfg.orders, vec![0, 1, 2]);
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.run_id().starts_with("ghz-"));
        assert!(RunConfig::from_json(r#"{"experiment": "ghz", "n_values": [3]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"seed": 1, "mixing": 2.0, "experiment": "ghz", "n_values": [3]}"#).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_is_increasing_multiples() {
        let g = geometric_grid(10, 1000);
        assert_eq!(g[0], 20);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g.iter().all(|v| v % 10 == 0));
    }

    #[test]
    fn small_ghz_run_is_deterministic() {
        let mut cfg = RunConfig::new(
            3,
            Experiment::Ghz(GhzConfig {
                n_values: vec![2],
                p_meas: 0.02,
                runs: 1,
                plan: Some(PlanOverride {
                    n_iterations: 10,
                    unitaries_per_iteration: 20,
                    shots_per_unitary: 200,
                }),
            }),
        );
        cfg.orders = vec![0, 1];
        let a = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let out = run_experiment(&cfg).unwrap();
        assert!(out.table.rows.iter().all(|r| r.run_id == out.run_id && r.seed == 3));
        let dir = tempfile::tempdir().unwrap();
        let paths = out.write(dir.path()).unwrap();
        assert!(paths.iter().all(|p| p.exists()));
    }

    #[test]
    fn witness_flags_use_lower_edge() {
        let th = WitnessThresholds::new(4).unwrap();
        let e = |v: f64, s: f64| Estimate {
            value: v,
            stderr: s,
            imaginary: 0.0,
            n_batches: 10,
            n_unitaries: 0,
            shots: 0,
            error_method: "jackknife".into(),
        };
        let f = witness_flags(&th, 1, &e(11.0, 0.5), &e(11.0, 1.5));
        assert!(f.gme_robust && !f.gme_raw);
        assert_eq!(f.depth_robust, 4);
    }
}
