//! Survival-probability estimation from calibration records.
//!
//! For qubit `j` and unitary `r` the per-unitary correlation is
//! `c_r = sum_s Phat(s|U) P(s|U)` with `P(s|U) = |<s|U|0>|^2`, and
//! `b_r = sum_s P(s|U)^2` is the control variate with known mean `2/3`.
//! `Ghat = 3 mean(c) - 1` is the plain estimator and
//! `Ghat_cr = 3 (mean(c) - mean(b) + 2/3) - 1` the common-random-number one.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::Mat2;
use crate::sampling::{group_by_iteration, MeasurementRecord};

/// Mean of `sum_s P(s|U)^2` over Haar-random single-qubit `U`.
pub const SINGLE_CONTROL_MEAN: f64 = 2.0 / 3.0;
/// Mean of the two-qubit product control variate.
pub const PAIR_CONTROL_MEAN: f64 = 4.0 / 9.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plain,
    #[default]
    Enhanced,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "enhanced" => Ok(Self::Enhanced),
            other => Err(Error::InvalidConfig(format!("unknown calibration method {other:?}"))),
        }
    }
}

/// Which qubit pairs receive the two-qubit analysis.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSelection {
    #[default]
    None,
    All,
    List(Vec<(usize, usize)>),
}

impl PairSelection {
    pub fn pairs(&self, n_qubits: usize) -> Result<Vec<(usize, usize)>> {
        match self {
            Self::None => Ok(Vec::new()),
            Self::All => Ok((0..n_qubits)
                .flat_map(|a| (a + 1..n_qubits).map(move |b| (a, b)))
                .collect()),
            Self::List(v) => {
                for &(a, b) in v {
                    if a == b || a >= n_qubits || b >= n_qubits {
                        return Err(Error::InvalidConfig(format!("bad pair ({a}, {b})")));
                    }
                }
                Ok(v.clone())
            }
        }
    }
}

/// `|<s|U|0>|^2` for `s = 0, 1`.
fn ideal_marginal(u: &Mat2) -> [f64; 2] {
    [u[0].norm_sqr(), u[2].norm_sqr()]
}

fn empirical_marginal(rec: &MeasurementRecord, j: usize) -> [f64; 2] {
    let n = rec.n_qubits();
    let shift = n - 1 - j;
    let mut m = [0.0; 2];
    for &(k, c) in &rec.counts {
        m[(k >> shift) & 1] += c as f64;
    }
    let s = rec.shots as f64;
    [m[0] / s, m[1] / s]
}

fn empirical_pair_marginal(rec: &MeasurementRecord, j: usize, jp: usize) -> [f64; 4] {
    let n = rec.n_qubits();
    let (sa, sb) = (n - 1 - j, n - 1 - jp);
    let mut m = [0.0; 4];
    for &(k, c) in &rec.counts {
        m[(((k >> sa) & 1) << 1) | ((k >> sb) & 1)] += c as f64;
    }
    let s = rec.shots as f64;
    m.map(|x| x / s)
}

/// Per-unitary `(c_r, b_r)` for qubit `j`.
pub fn single_terms(rec: &MeasurementRecord, j: usize) -> (f64, f64) {
    let p = ideal_marginal(&rec.unitaries[j]);
    let ph = empirical_marginal(rec, j);
    (ph[0] * p[0] + ph[1] * p[1], p[0] * p[0] + p[1] * p[1])
}

/// Per-unitary `(d_r, b_j b_j')` for the pair.
pub fn pair_terms(rec: &MeasurementRecord, j: usize, jp: usize) -> (f64, f64) {
    let pa = ideal_marginal(&rec.unitaries[j]);
    let pb = ideal_marginal(&rec.unitaries[jp]);
    let ph = empirical_pair_marginal(rec, j, jp);
    let mut d = 0.0;
    for sa in 0..2 {
        for sb in 0..2 {
            d += ph[(sa << 1) | sb] * pa[sa] * pb[sb];
        }
    }
    let ba = pa[0] * pa[0] + pa[1] * pa[1];
    let bb = pb[0] * pb[0] + pb[1] * pb[1];
    (d, ba * bb)
}

fn check_records(records: &[&MeasurementRecord], what: &str) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::EmptyRecords(what.to_string()))?;
    let n = first.n_qubits();
    if records.iter().any(|r| r.n_qubits() != n) {
        return Err(Error::Record("records disagree on qubit count".into()));
    }
    Ok(n)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// `C_j = (1/N_U) sum_r sum_s Phat(s|U_r) P(s|U_r)`
pub fn estimate_c_j(records: &[&MeasurementRecord], j: usize) -> Result<f64> {
    let n = check_records(records, "C_j")?;
    if j >= n {
        return Err(Error::Dimension(format!("qubit {j} of {n}")));
    }
    Ok(mean(records.iter().map(|r| single_terms(r, j).0)))
}

pub fn estimate_b_j(records: &[&MeasurementRecord], j: usize) -> Result<f64> {
    let n = check_records(records, "B_j")?;
    if j >= n {
        return Err(Error::Dimension(format!("qubit {j} of {n}")));
    }
    Ok(mean(records.iter().map(|r| single_terms(r, j).1)))
}

pub fn estimate_g_plain(records: &[&MeasurementRecord], j: usize) -> Result<f64> {
    Ok(3.0 * estimate_c_j(records, j)? - 1.0)
}

pub fn estimate_g_enhanced(records: &[&MeasurementRecord], j: usize) -> Result<f64> {
    let c = estimate_c_j(records, j)?;
    let b = estimate_b_j(records, j)?;
    Ok(3.0 * (c - b + SINGLE_CONTROL_MEAN) - 1.0)
}

pub fn estimate_g(records: &[&MeasurementRecord], j: usize, method: Method) -> Result<f64> {
    match method {
        Method::Plain => estimate_g_plain(records, j),
        Method::Enhanced => estimate_g_enhanced(records, j),
    }
}

/// Per-unitary contributions whose mean is the estimator.
pub fn g_contributions(records: &[&MeasurementRecord], j: usize, method: Method) -> Vec<f64> {
    records
        .iter()
        .map(|r| {
            let (c, b) = single_terms(r, j);
            match method {
                Method::Plain => 3.0 * c - 1.0,
                Method::Enhanced => 3.0 * (c - b + SINGLE_CONTROL_MEAN) - 1.0,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub pair: (usize, usize),
    pub g_j: f64,
    pub g_jp: f64,
    pub g_pair: f64,
}

impl PairEstimate {
    pub fn r_tilde(&self) -> f64 {
        self.g_pair - self.g_j * self.g_jp
    }
}

/// `D = (1 + G_j + G_j' + G_jj') / 9`, solved for `G_jj'`.
pub fn estimate_pair(
    records: &[&MeasurementRecord],
    pair: (usize, usize),
    method: Method,
) -> Result<PairEstimate> {
    let n = check_records(records, "pair calibration")?;
    let (j, jp) = pair;
    if j == jp || j >= n || jp >= n {
        return Err(Error::Dimension(format!("pair ({j}, {jp}) on {n} qubits")));
    }
    let g_j = estimate_g(records, j, method)?;
    let g_jp = estimate_g(records, jp, method)?;
    let d_hat = mean(records.iter().map(|r| pair_terms(r, j, jp).0));
    let d = match method {
        Method::Plain => d_hat,
        Method::Enhanced => {
            d_hat - mean(records.iter().map(|r| pair_terms(r, j, jp).1)) + PAIR_CONTROL_MEAN
        }
    };
    Ok(PairEstimate {
        pair,
        g_j,
        g_jp,
        g_pair: 9.0 * d - 1.0 - g_j - g_jp,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationCalibration {
    pub g: Vec<f64>,
    /// Spread of the per-unitary contributions divided by `sqrt(N_U)`.
    pub g_stderr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairEstimate>,
    pub n_unitaries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub method: Method,
    pub n_qubits: usize,
    pub iterations: BTreeMap<usize, IterationCalibration>,
}

#[derive(Clone, Debug, Default)]
pub struct CalibrationOptions {
    pub method: Method,
    pub pairs: PairSelection,
}

fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn calibrate_iteration(
    recs: &[&MeasurementRecord],
    n: usize,
    method: Method,
    pairs: &[(usize, usize)],
) -> Result<IterationCalibration> {
    let mut g = Vec::with_capacity(n);
    let mut g_stderr = Vec::with_capacity(n);
    for j in 0..n {
        let contrib = g_contributions(recs, j, method);
        g.push(contrib.iter().sum::<f64>() / contrib.len() as f64);
        g_stderr.push(std_error(&contrib));
    }
    let pairs = pairs
        .iter()
        .map(|&p| estimate_pair(recs, p, method))
        .collect::<Result<_>>()?;
    Ok(IterationCalibration {
        g,
        g_stderr,
        pairs,
        n_unitaries: recs.len(),
    })
}

impl CalibrationTable {
    /// Builds one entry per iteration found in `records`.
    pub fn from_records(records: &[MeasurementRecord], options: &CalibrationOptions) -> Result<Self> {
        let n = records
            .first()
            .ok_or_else(|| Error::EmptyRecords("calibration".into()))?
            .n_qubits();
        let pairs = options.pairs.pairs(n)?;
        let grouped = group_by_iteration(records);
        let groups: Vec<(usize, Vec<&MeasurementRecord>)> = grouped.into_iter().collect();
        let entries: Vec<(usize, IterationCalibration)> = groups
            .par_iter()
            .map(|(i, recs)| {
                check_records(recs, "calibration")?;
                if recs[0].n_qubits() != n {
                    return Err(Error::Record("records disagree on qubit count".into()));
                }
                Ok((*i, calibrate_iteration(recs, n, options.method, &pairs)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            method: options.method,
            n_qubits: n,
            iterations: entries.into_iter().collect(),
        })
    }

    /// Every qubit treated as noiseless.
    pub fn ideal(n_qubits: usize, iterations: impl IntoIterator<Item = usize>) -> Self {
        Self {
            method: Method::Enhanced,
            n_qubits,
            iterations: iterations
                .into_iter()
                .map(|i| {
                    (
                        i,
                        IterationCalibration {
                            g: vec![1.0; n_qubits],
                            g_stderr: vec![0.0; n_qubits],
                            pairs: Vec::new(),
                            n_unitaries: 0,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn get(&self, iteration: usize) -> Result<&IterationCalibration> {
        self.iterations
            .get(&iteration)
            .ok_or(Error::MissingCalibration(iteration))
    }

    /// Copies the first iteration's values to every iteration, as when the
    /// device is calibrated only once at the start.
    pub fn upfront(&self) -> Result<Self> {
        let (_, first) = self
            .iterations
            .iter()
            .next()
            .ok_or_else(|| Error::EmptyRecords("calibration table".into()))?;
        Ok(Self {
            method: self.method,
            n_qubits: self.n_qubits,
            iterations: self.iterations.keys().map(|&i| (i, first.clone())).collect(),
        })
    }

    /// Refuses mitigation when any survival probability is at or below 1/2.
    pub fn check_mitigation(&self) -> Result<()> {
        for (&i, entry) in &self.iterations {
            for (j, &g) in entry.g.iter().enumerate() {
                if g.is_nan() || g <= 0.5 {
                    return Err(Error::CalibrationGuard {
                        iteration: i,
                        qubit: j,
                        g,
                    });
                }
            }
        }
        Ok(())
    }

    /// `G_j` as a time series over iterations.
    pub fn series(&self, qubit: usize) -> Vec<(usize, f64)> {
        self.iterations.iter().map(|(&i, e)| (i, e.g[qubit])).collect()
    }

    pub fn mean_g(&self, qubit: usize) -> f64 {
        let s = self.series(qubit);
        s.iter().map(|x| x.1).sum::<f64>() / s.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Mean and standard deviation of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanWithError {
    pub value: f64,
    /// `None` with fewer than two samples.
    pub stderr: Option<f64>,
}

impl MeanWithError {
    pub fn of(xs: &[f64]) -> Self {
        let value = xs.iter().sum::<f64>() / xs.len() as f64;
        let se = std_error(xs);
        Self {
            value,
            stderr: se.is_finite().then_some(se),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLocality {
    pub pair: (usize, usize),
    pub g_j: MeanWithError,
    pub g_jp: MeanWithError,
    pub g_pair: MeanWithError,
    pub r_tilde: MeanWithError,
    pub p_nl: MeanWithError,
    pub p_l_j: MeanWithError,
    pub p_l_jp: MeanWithError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub pairs: Vec<PairLocality>,
    pub n_iterations: usize,
    /// Set when fewer than two iterations are available.
    pub no_error_bars: bool,
    /// A vanishing `R` does not certify locality: some non-local channels
    /// also give zero.
    pub note: String,
}

/// First-order inversion: `p_NL ~ R`, `p_L(j) ~ G_j' - G_jj'`,
/// `p_L(j') ~ G_j - G_jj'`, with errors from the spread across iterations.
pub fn locality_report(table: &CalibrationTable) -> Result<LocalityReport> {
    let mut by_pair: BTreeMap<(usize, usize), Vec<PairEstimate>> = BTreeMap::new();
    for entry in table.iterations.values() {
        for p in &entry.pairs {
            by_pair.entry(p.pair).or_default().push(*p);
        }
    }
    if by_pair.is_empty() {
        return Err(Error::EmptyRecords("pairwise calibration entries".into()));
    }
    let pairs = by_pair
        .into_iter()
        .map(|(pair, v)| {
            let col = |f: &dyn Fn(&PairEstimate) -> f64| MeanWithError::of(&v.iter().map(f).collect::<Vec<_>>());
            PairLocality {
                pair,
                g_j: col(&|p| p.g_j),
                g_jp: col(&|p| p.g_jp),
                g_pair: col(&|p| p.g_pair),
                r_tilde: col(&|p| p.r_tilde()),
                p_nl: col(&|p| p.r_tilde()),
                p_l_j: col(&|p| p.g_jp - p.g_pair),
                p_l_jp: col(&|p| p.g_j - p.g_pair),
            }
        })
        .collect();
    let n_iterations = table.iterations.len();
    Ok(LocalityReport {
        pairs,
        n_iterations,
        no_error_bars: n_iterations < 2,
        note: "R = 0 is compatible with some non-local channels; a nonzero R certifies \
               non-local noise, a vanishing R does not certify locality"
            .into(),
    })
}

/// Single mean-shift changepoint: the split minimising the pooled sum of
/// squares. Returns the first index of the second segment and the shift.
pub fn detect_changepoint(series: &[f64]) -> Option<(usize, f64)> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let total: f64 = series.iter().sum();
    let total_sq: f64 = series.iter().map(|x| x * x).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    let mut left = 0.0;
    let mut left_sq = 0.0;
    for k in 1..n {
        left += series[k - 1];
        left_sq += series[k - 1].powi(2);
        let (nl, nr) = (k as f64, (n - k) as f64);
        let right = total - left;
        let sse = (left_sq - left * left / nl) + (total_sq - left_sq - right * right / nr);
        if best.is_none_or(|b| sse < b.1) {
            best = Some((k, sse, right / nr - left / nl));
        }
    }
    best.map(|(k, _, shift)| (k, shift))
}
