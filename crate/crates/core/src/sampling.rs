//! Randomized-measurement engine: Haar-random local unitaries, Born
//! probabilities, noisy bitstring sampling and JSON Lines record files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise::{apply_effective, NoiseModel, ReadoutSampler};
use crate::qmath::{
    apply_single_qubit_to_vector, check_cap, conjugate_single_qubit, hermitian_eig, mat2_mul,
    ComplexMatrix, Mat2, C64, ZERO,
};
use crate::seeds::stream;
use crate::states::{DensityMatrix, PureState};

/// Unitaries drawn per iteration in the experiment.
pub const DEFAULT_UNITARIES_PER_ITERATION: usize = 200;
pub const DEFAULT_SHOTS: usize = 1000;
/// Weights below this are dropped when a density matrix is split into an
/// ensemble of pure states.
const ENSEMBLE_CUTOFF: f64 = 1e-14;

const TAG_UNITARY: u64 = 0x0A17;
const TAG_SHOTS: u64 = 0x5407;

/// Haar-random single-qubit unitary from the QR decomposition of a complex
/// Ginibre matrix, with the phases of `R`'s diagonal moved into `Q`.
pub fn sample_cue_unitary<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let mut g = [ZERO; 4];
    for z in &mut g {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z = C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    }
    // Gram-Schmidt on columns (g0, g2) and (g1, g3)
    let n0 = (g[0].norm_sqr() + g[2].norm_sqr()).sqrt();
    let q0 = [g[0] / n0, g[2] / n0];
    let proj = q0[0].conj() * g[1] + q0[1].conj() * g[3];
    let v = [g[1] - proj * q0[0], g[3] - proj * q0[1]];
    let n1 = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let q1 = [v[0] / n1, v[1] / n1];
    // R_00 = n0 and R_11 = n1 are real positive, so no further phase fix is
    // needed for this construction.
    [q0[0], q1[0], q0[1], q1[1]]
}

/// Haar-random `dim x dim` unitary (Mezzadri's construction).
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    ComplexMatrix::from_nalgebra(&q)
}

pub fn is_unitary2(u: &Mat2, tol: f64) -> bool {
    let p = mat2_mul(&crate::qmath::mat2_adjoint(u), u);
    (p[0] - 1.0).norm() <= tol && p[1].norm() <= tol && p[2].norm() <= tol && (p[3] - 1.0).norm() <= tol
}

/// Product layer `U_1 (x) ... (x) U_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUnitaryLayer {
    pub factors: Vec<Mat2>,
    pub unitary_index: usize,
    pub iteration: usize,
}

impl LocalUnitaryLayer {
    pub fn new(factors: Vec<Mat2>, iteration: usize, unitary_index: usize) -> Result<Self> {
        for (j, f) in factors.iter().enumerate() {
            if !is_unitary2(f, 1e-10) {
                return Err(Error::Record(format!("factor {j} is not unitary")));
            }
        }
        Ok(Self {
            factors,
            unitary_index,
            iteration,
        })
    }

    pub fn identity(n_qubits: usize) -> Self {
        let id = [C64::new(1.0, 0.0), ZERO, ZERO, C64::new(1.0, 0.0)];
        Self {
            factors: vec![id; n_qubits],
            unitary_index: 0,
            iteration: 0,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    /// `eta` independent layers multiplied qubit by qubit, later layers on
    /// the left.
    pub fn sample<R: Rng + ?Sized>(n_qubits: usize, eta: usize, rng: &mut R) -> Vec<Mat2> {
        (0..n_qubits)
            .map(|_| {
                let mut u = sample_cue_unitary(rng);
                for _ in 1..eta {
                    u = mat2_mul(&sample_cue_unitary(rng), &u);
                }
                u
            })
            .collect()
    }

    pub fn apply_to_vector(&self, psi: &mut [C64]) {
        let n = self.n_qubits();
        for (q, f) in self.factors.iter().enumerate() {
            apply_single_qubit_to_vector(psi, n, q, f);
        }
    }

    pub fn conjugate(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let n = self.n_qubits();
        let mut out = rho.clone();
        for (q, f) in self.factors.iter().enumerate() {
            out = conjugate_single_qubit(&out, n, q, f);
        }
        out
    }

    pub fn to_dense(&self) -> Result<ComplexMatrix> {
        let mats: Vec<ComplexMatrix> = self.factors.iter().map(crate::qmath::mat2_to_matrix).collect();
        crate::qmath::tensor_product(&mats)
    }
}

/// Prepared state as a convex mixture of pure states.
#[derive(Clone, Debug)]
pub struct PreparedState {
    n_qubits: usize,
    weights: Vec<f64>,
    vectors: Vec<Vec<C64>>,
}

impl PreparedState {
    pub fn pure(psi: &PureState) -> Self {
        Self {
            n_qubits: psi.n_qubits(),
            weights: vec![1.0],
            vectors: vec![psi.amplitudes().to_vec()],
        }
    }

    /// `(1 - w) |psi><psi| + w 1/d`, kept as `|psi>` plus the basis states.
    pub fn with_white_noise(psi: &PureState, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidProbability {
                name: "mixing".into(),
                value: w,
                reason: "must lie in [0, 1]".into(),
            });
        }
        let mut s = Self::pure(psi);
        if w > 0.0 {
            let d = psi.dim();
            s.weights[0] = 1.0 - w;
            for k in 0..d {
                let mut v = vec![ZERO; d];
                v[k] = C64::new(1.0, 0.0);
                s.weights.push(w / d as f64);
                s.vectors.push(v);
            }
        }
        Ok(s)
    }

    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        let eig = hermitian_eig(rho.matrix())?;
        let mut weights = Vec::new();
        let mut vectors = Vec::new();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l < -1e-8 {
                return Err(Error::NotPositive { eigenvalue: l });
            }
            if l > ENSEMBLE_CUTOFF {
                weights.push(l);
                vectors.push(eig.eigenvector(k));
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self {
            n_qubits: rho.n_qubits(),
            weights,
            vectors,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        let d = self.dim();
        let mut m = ComplexMatrix::zeros(d);
        for (w, v) in self.weights.iter().zip(&self.vectors) {
            m.add_scaled(&ComplexMatrix::outer(v), *w);
        }
        DensityMatrix::new(m.hermitize())
    }

    fn is_all_zeros(&self) -> bool {
        self.rank() == 1 && (self.vectors[0][0].norm_sqr() - 1.0).abs() < 1e-12
    }
}

/// `P(s|U) = <s|U rho U^dagger|s>`
pub fn born_probabilities(state: &PreparedState, layer: &LocalUnitaryLayer) -> Result<Vec<f64>> {
    if state.n_qubits() != layer.n_qubits() {
        return Err(Error::Dimension(format!(
            "layer on {} qubits, state on {}",
            layer.n_qubits(),
            state.n_qubits()
        )));
    }
    let mut probs = vec![0.0; state.dim()];
    let mut buf = vec![ZERO; state.dim()];
    for (w, v) in state.weights.iter().zip(&state.vectors) {
        buf.copy_from_slice(v);
        layer.apply_to_vector(&mut buf);
        for (p, a) in probs.iter_mut().zip(&buf) {
            *p += w * a.norm_sqr();
        }
    }
    Ok(probs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Purpose {
    #[serde(rename = "cal")]
    Calibration,
    #[serde(rename = "est")]
    Estimation,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Calibration => 1,
            Purpose::Estimation => 2,
        }
    }
}

/// Outcome index with qubit 0 as the leftmost character.
pub fn format_bitstring(index: usize, n_qubits: usize) -> String {
    (0..n_qubits)
        .map(|q| if (index >> (n_qubits - 1 - q)) & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub fn parse_bitstring(bits: &str) -> Result<usize> {
    if bits.is_empty() || bits.len() > crate::qmath::MAX_QUBITS {
        return Err(Error::Record(format!("bitstring length {}", bits.len())));
    }
    bits.chars().try_fold(0usize, |acc, c| match c {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::Record(format!("invalid character {c:?} in bitstring"))),
    })
}

/// Histogram of outcomes for one `(iteration, unitary)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordJson", into = "RecordJson")]
pub struct MeasurementRecord {
    pub iteration: usize,
    pub unitary_index: usize,
    pub purpose: Purpose,
    pub unitaries: Vec<Mat2>,
    /// `(outcome index, count)` sorted by index, zero counts omitted.
    pub counts: Vec<(usize, u64)>,
    pub shots: u64,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    iter: usize,
    r: usize,
    purpose: Purpose,
    unitaries: Vec<[[f64; 2]; 4]>,
    counts: BTreeMap<String, u64>,
    shots: u64,
}

impl From<MeasurementRecord> for RecordJson {
    fn from(m: MeasurementRecord) -> Self {
        let n = m.n_qubits();
        Self {
            iter: m.iteration,
            r: m.unitary_index,
            purpose: m.purpose,
            unitaries: m
                .unitaries
                .iter()
                .map(|u| [0, 1, 2, 3].map(|k| [u[k].re, u[k].im]))
                .collect(),
            counts: m
                .counts
                .iter()
                .map(|&(k, c)| (format_bitstring(k, n), c))
                .collect(),
            shots: m.shots,
        }
    }
}

impl TryFrom<RecordJson> for MeasurementRecord {
    type Error = Error;

    fn try_from(j: RecordJson) -> Result<Self> {
        let n = j.unitaries.len();
        if n == 0 {
            return Err(Error::Record("record without unitaries".into()));
        }
        let unitaries: Vec<Mat2> = j
            .unitaries
            .iter()
            .map(|u| u.map(|[re, im]| C64::new(re, im)))
            .collect();
        for (q, u) in unitaries.iter().enumerate() {
            if !is_unitary2(u, 1e-9) {
                return Err(Error::Record(format!("unitary for qubit {q} is not unitary")));
            }
        }
        let mut counts = Vec::with_capacity(j.counts.len());
        for (bits, c) in &j.counts {
            if bits.len() != n {
                return Err(Error::Record(format!(
                    "bitstring {bits} has length {}, expected {n}",
                    bits.len()
                )));
            }
            if *c > 0 {
                counts.push((parse_bitstring(bits)?, *c));
            }
        }
        counts.sort_unstable();
        let total: u64 = counts.iter().map(|c| c.1).sum();
        if total != j.shots {
            return Err(Error::Record(format!(
                "counts sum to {total} but shots = {}",
                j.shots
            )));
        }
        Ok(Self {
            iteration: j.iter,
            unitary_index: j.r,
            purpose: j.purpose,
            unitaries,
            counts,
            shots: j.shots,
        })
    }
}

impl MeasurementRecord {
    pub fn n_qubits(&self) -> usize {
        self.unitaries.len()
    }

    /// SHA-256 over the raw unitary entries, for reuse checks.
    pub fn unitary_checksum(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.unitaries {
            for z in u {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; 1 << self.n_qubits()];
        for &(k, c) in &self.counts {
            f[k] = c as f64 / self.shots as f64;
        }
        f
    }

    pub fn layer(&self) -> LocalUnitaryLayer {
        LocalUnitaryLayer {
            factors: self.unitaries.clone(),
            unitary_index: self.unitary_index,
            iteration: self.iteration,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub n_qubits: usize,
    pub n_iterations: usize,
    pub unitaries_per_iteration: usize,
    pub shots_per_unitary: usize,
    #[serde(default = "default_eta")]
    pub eta: usize,
    #[serde(default = "default_true")]
    pub share_unitaries: bool,
    pub master_seed: u64,
    /// When set, the final iteration is truncated so the plan holds exactly
    /// this many unitaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_unitaries: Option<usize>,
}

fn default_eta() -> usize {
    1
}

fn default_true() -> bool {
    true
}

/// `ceil(300 * 2^(N/2))`
pub fn budget_total_unitaries(n_qubits: usize) -> usize {
    (300.0 * 2f64.powf(0.5 * n_qubits as f64) - 1e-9).ceil() as usize
}

impl ExperimentPlan {
    pub fn new(
        n_qubits: usize,
        n_iterations: usize,
        unitaries_per_iteration: usize,
        shots_per_unitary: usize,
        master_seed: u64,
    ) -> Result<Self> {
        let p = Self {
            n_qubits,
            n_iterations,
            unitaries_per_iteration,
            shots_per_unitary,
            eta: 1,
            share_unitaries: true,
            master_seed,
            total_unitaries: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Splits `ceil(300 * 2^(N/2))` unitaries into iterations of 200 with
    /// 1000 shots each; the last iteration may be short.
    pub fn auto_budget(n_qubits: usize, master_seed: u64) -> Result<Self> {
        check_cap(n_qubits)?;
        let total = budget_total_unitaries(n_qubits);
        let per = DEFAULT_UNITARIES_PER_ITERATION;
        let p = Self {
            n_qubits,
            n_iterations: total.div_ceil(per),
            unitaries_per_iteration: per,
            shots_per_unitary: DEFAULT_SHOTS,
            eta: 1,
            share_unitaries: true,
            master_seed,
            total_unitaries: Some(total),
        };
        p.validate()?;
        Ok(p)
    }

    /// Same total budget as [`Self::auto_budget`], reshaped so the number of
    /// iterations is a multiple of `n_batches` and every iteration has the
    /// same size (the total may round up slightly).
    pub fn auto_budget_for_batches(n_qubits: usize, n_batches: usize, master_seed: u64) -> Result<Self> {
        if n_batches == 0 {
            return Err(Error::InvalidPlan("zero batches".into()));
        }
        let total = budget_total_unitaries(n_qubits);
        let per = DEFAULT_UNITARIES_PER_ITERATION;
        let rounds = ((total as f64 / (n_batches * per) as f64).round() as usize).max(1);
        let n_iterations = n_batches * rounds;
        Self::new(
            n_qubits,
            n_iterations,
            total.div_ceil(n_iterations),
            DEFAULT_SHOTS,
            master_seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        check_cap(self.n_qubits)?;
        if self.n_qubits == 0
            || self.n_iterations == 0
            || self.unitaries_per_iteration == 0
            || self.shots_per_unitary == 0
            || self.eta == 0
        {
            return Err(Error::InvalidPlan("all counts must be positive".into()));
        }
        if let Some(t) = self.total_unitaries {
            let cap = self.n_iterations * self.unitaries_per_iteration;
            if t == 0 || t > cap || t + self.unitaries_per_iteration <= cap {
                return Err(Error::InvalidPlan(format!(
                    "total {t} inconsistent with {} iterations of {}",
                    self.n_iterations, self.unitaries_per_iteration
                )));
            }
        }
        Ok(())
    }

    pub fn unitaries_in_iteration(&self, i: usize) -> usize {
        match self.total_unitaries {
            Some(t) if i + 1 == self.n_iterations => t - i * self.unitaries_per_iteration,
            _ => self.unitaries_per_iteration,
        }
    }

    pub fn total(&self) -> usize {
        (0..self.n_iterations).map(|i| self.unitaries_in_iteration(i)).sum()
    }

    fn unitary_stream_path(&self, i: usize, r: usize, purpose: Purpose) -> [u64; 4] {
        let p = if self.share_unitaries { 0 } else { purpose.tag() };
        [i as u64, r as u64, TAG_UNITARY, p]
    }

    /// The layer used for `(iteration, unitary)` under `purpose`.
    pub fn layer(&self, i: usize, r: usize, purpose: Purpose) -> LocalUnitaryLayer {
        let mut rng = stream(self.master_seed, &self.unitary_stream_path(i, r, purpose));
        LocalUnitaryLayer {
            factors: LocalUnitaryLayer::sample(self.n_qubits, self.eta, &mut rng),
            unitary_index: r,
            iteration: i,
        }
    }
}

/// Draws `shots` outcomes from `probs` (inverse-CDF sampling), passing each
/// through `readout` when given.
fn draw_counts<R: Rng + ?Sized>(
    probs: &[f64],
    shots: usize,
    readout: Option<&ReadoutSampler>,
    rng: &mut R,
) -> Vec<(usize, u64)> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let total = acc;
    let mut hist = vec![0u64; probs.len()];
    for _ in 0..shots {
        let u = rng.random::<f64>() * total;
        let mut k = cdf.partition_point(|&c| c <= u);
        if k >= probs.len() {
            k = probs.len() - 1;
        }
        if let Some(s) = readout {
            k = s.apply(k, rng);
        }
        hist[k] += 1;
    }
    hist.into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect()
}

/// Outcome distribution after the noise of iteration `i`.
fn noisy_probabilities(
    state: &PreparedState,
    layer: &LocalUnitaryLayer,
    eff: &crate::noise::EffectiveNoise,
    eta: usize,
) -> Result<Vec<f64>> {
    if eff.has_depolarizing() {
        let rho = state.to_density()?;
        let rotated = layer.conjugate(rho.matrix());
        Ok(apply_effective(&rotated, eff, eta)?.diagonal_real())
    } else {
        born_probabilities(state, layer)
    }
}

/// Simulates the protocol and returns records ordered by `(iteration, r)`.
///
/// Flip-type noise is applied to sampled outcomes; depolarising noise takes
/// the density-matrix path.
pub fn run_protocol(
    state: &PreparedState,
    plan: &ExperimentPlan,
    model: &NoiseModel,
    purpose: Purpose,
) -> Result<Vec<MeasurementRecord>> {
    plan.validate()?;
    if state.n_qubits() != plan.n_qubits || model.n_qubits() != plan.n_qubits {
        return Err(Error::InvalidPlan(format!(
            "plan for {} qubits, state on {}, noise on {}",
            plan.n_qubits,
            state.n_qubits(),
            model.n_qubits()
        )));
    }
    if purpose == Purpose::Calibration && !state.is_all_zeros() {
        return Err(Error::InvalidPlan("calibration requires the all-zeros state".into()));
    }
    let effective: Vec<_> = (0..plan.n_iterations)
        .map(|i| model.effective(i))
        .collect::<Result<_>>()?;
    let samplers: Vec<Option<ReadoutSampler>> = effective
        .iter()
        .map(|e| {
            if e.has_depolarizing() {
                None
            } else {
                ReadoutSampler::from_effective(e).ok()
            }
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..plan.n_iterations)
        .flat_map(|i| (0..plan.unitaries_in_iteration(i)).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let layer = plan.layer(i, r, purpose);
            let probs = noisy_probabilities(state, &layer, &effective[i], plan.eta)?;
            let mut rng = stream(
                plan.master_seed,
                &[i as u64, r as u64, TAG_SHOTS, purpose.tag()],
            );
            let counts = draw_counts(&probs, plan.shots_per_unitary, samplers[i].as_ref(), &mut rng);
            Ok(MeasurementRecord {
                iteration: i,
                unitary_index: r,
                purpose,
                unitaries: layer.factors,
                counts,
                shots: plan.shots_per_unitary as u64,
            })
        })
        .collect()
}

pub fn calibration_state(n_qubits: usize) -> Result<PreparedState> {
    Ok(PreparedState::pure(&PureState::zeros(n_qubits)?))
}

pub fn write_records(path: &Path, records: &[MeasurementRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MeasurementRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Record(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Records grouped by iteration, each group ordered by unitary index.
pub fn group_by_iteration(records: &[MeasurementRecord]) -> BTreeMap<usize, Vec<&MeasurementRecord>> {
    let mut map: BTreeMap<usize, Vec<&MeasurementRecord>> = BTreeMap::new();
    for r in records {
        map.entry(r.iteration).or_default().push(r);
    }
    for v in map.values_mut() {
        v.sort_by_key(|r| r.unitary_index);
    }
    map
}
