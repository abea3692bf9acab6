//! Robust batch shadows and U-statistics estimators.
//!
//! Each measured outcome `s` under local unitaries `U_j` gives the factorised
//! estimate `prod_j (alpha_j U_j^dag |s_j><s_j| U_j + beta_j 1)` with
//! `alpha = 3/(2G - 1)` and `beta = (G - 2)/(2G - 1)`. Shadows are averaged
//! within iterations, iterations within batches, and the resulting batch
//! estimates feed unbiased polynomial estimators over distinct batch indices.
//!
//! Sums over index tuples are taken in sorted order so that estimates are
//! bit-identical under any relabelling of the batches.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationTable;
use crate::error::{Error, Result};
use crate::metrology::trace_polynomial_terms;
use crate::qmath::{ComplexMatrix, DiagonalOperator, Mat2, C64, ZERO};
use crate::sampling::{group_by_iteration, MeasurementRecord};

/// Default number of batches.
pub const DEFAULT_BATCHES: usize = 10;

/// Upper bound on the number of partial accumulators per batch, fixed so the
/// reduction tree does not depend on the thread count.
const MAX_CHUNKS: usize = 16;

/// `(alpha, beta)` for survival probability `g`.
pub fn inversion_coefficients(g: f64) -> (f64, f64) {
    let d = 2.0 * g - 1.0;
    (3.0 / d, (g - 2.0) / d)
}

/// One qubit's factor `alpha U^dag |s><s| U + beta 1` for `s = 0, 1`.
pub fn shadow_factor(u: &Mat2, s: usize, g: f64) -> Mat2 {
    let (alpha, beta) = inversion_coefficients(g);
    // (U^dag |s>)_r = conj(U[s, r])
    let v = [u[2 * s].conj(), u[2 * s + 1].conj()];
    let mut f = [ZERO; 4];
    for r in 0..2 {
        for c in 0..2 {
            f[2 * r + c] = v[r] * v[c].conj() * alpha;
        }
    }
    f[0] += beta;
    f[3] += beta;
    f
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchShadow {
    pub matrix: ComplexMatrix,
    pub index: usize,
    /// Iteration labels that contributed, in ascending order.
    pub iterations: Vec<usize>,
    pub n_unitaries: usize,
    pub shots: u64,
}

impl BatchShadow {
    /// `n_batches` copies of a fixed matrix; collapses every estimator to
    /// its plug-in value.
    pub fn plug_in(matrix: &ComplexMatrix, n_batches: usize) -> Vec<Self> {
        (0..n_batches)
            .map(|b| Self {
                matrix: matrix.clone(),
                index: b,
                iterations: Vec::new(),
                n_unitaries: 0,
                shots: 0,
            })
            .collect()
    }
}

/// Adds `weight * sum_s f(s) prod_j F_j(s_j)` into `acc`, which is laid out
/// with two bits `(r_j, c_j)` per qubit, qubit 0 most significant.
fn accumulate_record(
    rec: &MeasurementRecord,
    g: &[f64],
    weight: f64,
    acc: &mut [C64],
    cur: &mut Vec<C64>,
    next: &mut Vec<C64>,
) {
    let n = rec.n_qubits();
    cur.clear();
    cur.resize(1 << n, ZERO);
    let shots = rec.shots as f64;
    for &(k, c) in &rec.counts {
        cur[k] = C64::new(c as f64 / shots, 0.0);
    }
    for j in (0..n).rev() {
        let f0 = shadow_factor(&rec.unitaries[j], 0, g[j]);
        let f1 = shadow_factor(&rec.unitaries[j], 1, g[j]);
        let lo = 1usize << (2 * (n - 1 - j));
        let hi = 1usize << j;
        next.clear();
        next.resize(hi * 4 * lo, ZERO);
        for h in 0..hi {
            let src0 = &cur[(2 * h) * lo..(2 * h + 1) * lo];
            let src1 = &cur[(2 * h + 1) * lo..(2 * h + 2) * lo];
            for rc in 0..4 {
                let dst = &mut next[(4 * h + rc) * lo..(4 * h + rc + 1) * lo];
                let (a, b) = (f0[rc], f1[rc]);
                for ((d, x), y) in dst.iter_mut().zip(src0).zip(src1) {
                    *d = x * a + y * b;
                }
            }
        }
        std::mem::swap(cur, next);
    }
    for (a, x) in acc.iter_mut().zip(cur.iter()) {
        *a += x * weight;
    }
}

/// Splits the interleaved index into (row, column).
fn deinterleave(idx: usize, n: usize) -> (usize, usize) {
    let (mut r, mut c) = (0, 0);
    for j in 0..n {
        c |= ((idx >> (2 * j)) & 1) << j;
        r |= ((idx >> (2 * j + 1)) & 1) << j;
    }
    (r, c)
}

fn interleaved_to_matrix(acc: &[C64], n: usize) -> ComplexMatrix {
    let dim = 1usize << n;
    let mut m = ComplexMatrix::zeros(dim);
    let data = m.data_mut();
    for (idx, &v) in acc.iter().enumerate() {
        let (r, c) = deinterleave(idx, n);
        data[r * dim + c] = v;
    }
    m.hermitize()
}

/// Robust batch shadows using the per-iteration survival probabilities.
pub fn build_batch_shadows(
    records: &[MeasurementRecord],
    table: &CalibrationTable,
    n_batches: usize,
) -> Result<Vec<BatchShadow>> {
    build(records, Some(table), n_batches)
}

/// Batch shadows with every `G` set to one, i.e. no noise correction.
pub fn build_raw_batch_shadows(records: &[MeasurementRecord], n_batches: usize) -> Result<Vec<BatchShadow>> {
    build(records, None, n_batches)
}

fn build(
    records: &[MeasurementRecord],
    table: Option<&CalibrationTable>,
    n_batches: usize,
) -> Result<Vec<BatchShadow>> {
    let n = records
        .first()
        .ok_or_else(|| Error::EmptyRecords("batch shadows".into()))?
        .n_qubits();
    crate::qmath::check_cap(n)?;
    if records.iter().any(|r| r.n_qubits() != n) {
        return Err(Error::Record("records disagree on qubit count".into()));
    }
    if let Some(t) = table {
        if t.n_qubits != n {
            return Err(Error::Dimension(format!(
                "calibration for {} qubits, records on {n}",
                t.n_qubits
            )));
        }
    }
    let grouped: Vec<(usize, Vec<&MeasurementRecord>)> = group_by_iteration(records).into_iter().collect();
    let n_iter = grouped.len();
    if n_batches == 0 || !n_iter.is_multiple_of(n_batches) {
        return Err(Error::InvalidPlan(format!(
            "{n_batches} batches must divide {n_iter} iterations"
        )));
    }
    // survival probabilities per iteration, guarded
    let mut gs = Vec::with_capacity(n_iter);
    for (i, _) in &grouped {
        let g = match table {
            Some(t) => {
                let g = t.get(*i)?.g.clone();
                for (j, &gj) in g.iter().enumerate() {
                    if gj.is_nan() || gj <= 0.5 {
                        return Err(Error::CalibrationGuard {
                            iteration: *i,
                            qubit: j,
                            g: gj,
                        });
                    }
                }
                g
            }
            None => vec![1.0; n],
        };
        gs.push(g);
    }

    let per_batch = n_iter / n_batches;
    let len = 1usize << (2 * n);
    (0..n_batches)
        .map(|b| {
            let block = b * per_batch..(b + 1) * per_batch;
            let mut jobs: Vec<(&MeasurementRecord, &[f64], f64)> = Vec::new();
            for k in block.clone() {
                let recs = &grouped[k].1;
                let w = 1.0 / (recs.len() as f64 * per_batch as f64);
                jobs.extend(recs.iter().map(|r| (*r, gs[k].as_slice(), w)));
            }
            let chunk = jobs.len().div_ceil(MAX_CHUNKS).max(1);
            let partials: Vec<Vec<C64>> = jobs
                .par_chunks(chunk)
                .map(|part| {
                    let mut acc = vec![ZERO; len];
                    let (mut cur, mut next) = (Vec::with_capacity(len), Vec::with_capacity(len));
                    for (rec, g, w) in part {
                        accumulate_record(rec, g, *w, &mut acc, &mut cur, &mut next);
                    }
                    acc
                })
                .collect();
            let mut total = vec![ZERO; len];
            for p in &partials {
                for (t, x) in total.iter_mut().zip(p) {
                    *t += x;
                }
            }
            Ok(BatchShadow {
                matrix: interleaved_to_matrix(&total, n),
                index: b,
                iterations: block.clone().map(|k| grouped[k].0).collect(),
                n_unitaries: jobs.len(),
                shots: jobs.iter().map(|j| j.0.shots).sum(),
            })
        })
        .collect()
}

/// Point estimate with a delete-one-batch jackknife standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Infinite when too few batches remain after deleting one.
    pub stderr: f64,
    /// Imaginary part discarded in the final cast.
    pub imaginary: f64,
    pub n_batches: usize,
    pub n_unitaries: usize,
    pub shots: u64,
    pub error_method: String,
}

fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.into_iter().sum()
}

/// Ordered tuples of `d` distinct labels from `0..nb`, lexicographic.
fn distinct_tuples(nb: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(nb: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for b in 0..nb {
            if !cur.contains(&b) {
                cur.push(b);
                rec(nb, d, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(nb, d, &mut Vec::with_capacity(d), &mut out);
    out
}

/// `nb! / (nb - d)!`
fn falling(nb: usize, d: usize) -> f64 {
    if d > nb {
        return 0.0;
    }
    ((nb - d + 1)..=nb).map(|x| x as f64).product()
}

/// Mean of a kernel over distinct ordered tuples, with leave-one-out means.
struct Component {
    mean: f64,
    imag: f64,
    loo: Option<Vec<f64>>,
}

fn component<F>(nb: usize, d: usize, kernel: F) -> Component
where
    F: Fn(&[usize]) -> C64 + Sync,
{
    let tuples = distinct_tuples(nb, d);
    let values: Vec<C64> = tuples.par_iter().map(|t| kernel(t)).collect();
    let count = falling(nb, d);
    let mean = sorted_sum(values.iter().map(|v| v.re).collect()) / count;
    let imag = sorted_sum(values.iter().map(|v| v.im).collect()) / count;
    let loo = (nb > d).then(|| {
        let c = falling(nb - 1, d);
        (0..nb)
            .map(|k| {
                let kept = tuples
                    .iter()
                    .zip(&values)
                    .filter(|(t, _)| !t.contains(&k))
                    .map(|(_, v)| v.re)
                    .collect();
                sorted_sum(kept) / c
            })
            .collect()
    });
    Component { mean, imag, loo }
}

/// Linear combination of components with jackknife error.
fn combine(parts: &[(f64, &Component)], nb: usize) -> (f64, f64, f64) {
    let value = parts.iter().map(|(c, p)| c * p.mean).sum();
    let imag = parts.iter().map(|(c, p)| c * p.imag).sum();
    let stderr = if parts.iter().all(|(_, p)| p.loo.is_some()) {
        let theta: Vec<f64> = (0..nb)
            .map(|k| parts.iter().map(|(c, p)| c * p.loo.as_ref().unwrap()[k]).sum())
            .collect();
        let mean = sorted_sum(theta.clone()) / nb as f64;
        let ss = sorted_sum(theta.iter().map(|t| (t - mean).powi(2)).collect());
        ((nb as f64 - 1.0) / nb as f64 * ss).sqrt()
    } else {
        f64::INFINITY
    };
    (value, imag, stderr)
}

/// `sum_kl X_kl conj(Y_kl) w_kl`
fn weighted_overlap(x: &[C64], y: &[C64], w: &[f64]) -> C64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), &w)| a * b.conj() * w)
        .sum()
}

fn overlap(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// Shared state for evaluating several estimators on one set of batches.
pub struct UStatEngine<'a> {
    shadows: &'a [BatchShadow],
    diag: Vec<f64>,
    /// `w_kl = a_k (a_k - a_l)`, so `Tr(X [Y, A] A) = sum_kl X_kl Y_lk w_kl`.
    weights: Vec<f64>,
    products: OnceLock<Vec<Option<ComplexMatrix>>>,
}

impl<'a> UStatEngine<'a> {
    pub fn new(shadows: &'a [BatchShadow], a: &DiagonalOperator) -> Result<Self> {
        let first = shadows
            .first()
            .ok_or_else(|| Error::EmptyRecords("batch shadows".into()))?;
        let dim = first.matrix.dim();
        if shadows.iter().any(|s| s.matrix.dim() != dim) || a.dim() != dim {
            return Err(Error::Dimension(format!(
                "generator dim {} and shadow dims must agree",
                a.dim()
            )));
        }
        let diag = a.diagonal().to_vec();
        let mut weights = vec![0.0; dim * dim];
        for k in 0..dim {
            for l in 0..dim {
                weights[k * dim + l] = diag[k] * (diag[k] - diag[l]);
            }
        }
        Ok(Self {
            shadows,
            diag,
            weights,
            products: OnceLock::new(),
        })
    }

    pub fn n_batches(&self) -> usize {
        self.shadows.len()
    }

    fn rho(&self, b: usize) -> &[C64] {
        self.shadows[b].matrix.data()
    }

    /// `P_{b1 b2} = rho_b1 rho_b2` for all ordered distinct pairs. Both
    /// orders are multiplied out so results do not depend on labels.
    fn products(&self) -> &[Option<ComplexMatrix>] {
        self.products.get_or_init(|| {
            let nb = self.n_batches();
            (0..nb * nb)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / nb, idx % nb);
                    (i != j).then(|| self.shadows[i].matrix.matmul(&self.shadows[j].matrix))
                })
                .collect()
        })
    }

    fn pair(&self, i: usize, j: usize) -> &ComplexMatrix {
        self.products()[i * self.n_batches() + j].as_ref().unwrap()
    }

    fn estimate(&self, value: f64, imag: f64, stderr: f64) -> Estimate {
        Estimate {
            value,
            stderr,
            imaginary: imag,
            n_batches: self.n_batches(),
            n_unitaries: self.shadows.iter().map(|s| s.n_unitaries).sum(),
            shots: self.shadows.iter().map(|s| s.shots).sum(),
            error_method: "jackknife".into(),
        }
    }

    fn require(&self, required: usize) -> Result<()> {
        if self.n_batches() < required {
            return Err(Error::TooFewBatches {
                required,
                available: self.n_batches(),
            });
        }
        Ok(())
    }

    /// `4 Tr(rho_1 [rho_2, A] A)`
    fn c0(&self) -> Component {
        component(self.n_batches(), 2, |t| {
            // Y = rho_2 is Hermitian, so Y_lk = conj(Y_kl)
            weighted_overlap(self.rho(t[0]), self.rho(t[1]), &self.weights) * 4.0
        })
    }

    /// `4 Tr(rho_1 rho_2 [rho_3, A] A)`
    fn c1(&self) -> Component {
        self.products();
        component(self.n_batches(), 3, |t| {
            weighted_overlap(self.pair(t[0], t[1]).data(), self.rho(t[2]), &self.weights) * 4.0
        })
    }

    /// `4 Tr(rho_1 rho_2 [rho_3 rho_4, A] A)`; `(rho_3 rho_4)^T = conj(rho_4 rho_3)`.
    fn c2(&self) -> Component {
        self.products();
        component(self.n_batches(), 4, |t| {
            weighted_overlap(self.pair(t[0], t[1]).data(), self.pair(t[3], t[2]).data(), &self.weights)
                * 4.0
        })
    }

    /// Estimator of `F_n` for `n <= 2` using only pairwise products.
    pub fn f(&self, n: usize) -> Result<Estimate> {
        if n > 2 {
            return self.f_generic(n);
        }
        self.require(n + 3)?;
        let nb = self.n_batches();
        let c0 = self.c0();
        let (v, im, se) = match n {
            0 => combine(&[(1.0, &c0)], nb),
            1 => {
                let c1 = self.c1();
                combine(&[(2.0, &c0), (-1.0, &c1)], nb)
            }
            _ => {
                // F_2 = 3(F_1 - F_0) + T_2 with F_1 = 2F_0 - T_1
                let c1 = self.c1();
                let c2 = self.c2();
                combine(&[(3.0, &c0), (-3.0, &c1), (1.0, &c2)], nb)
            }
        };
        Ok(self.estimate(v, im, se))
    }

    /// Mean of `Tr(rho_1 rho_2)` over ordered distinct pairs.
    pub fn purity(&self) -> Result<Estimate> {
        self.require(2)?;
        let c = component(self.n_batches(), 2, |t| overlap(self.rho(t[0]), self.rho(t[1])));
        let (v, im, se) = combine(&[(1.0, &c)], self.n_batches());
        Ok(self.estimate(v, im, se))
    }

    /// `Tr(L A R A)` for dense `L`, `R`; `None` stands for the identity.
    fn trace_lara(&self, l: Option<&ComplexMatrix>, r: Option<&ComplexMatrix>) -> C64 {
        let a = &self.diag;
        let dim = a.len();
        match (l, r) {
            (Some(l), Some(r)) => {
                let (ld, rd) = (l.data(), r.data());
                let mut acc = ZERO;
                for k in 0..dim {
                    for m in 0..dim {
                        acc += ld[k * dim + m] * rd[m * dim + k] * (a[m] * a[k]);
                    }
                }
                acc
            }
            (Some(x), None) | (None, Some(x)) => {
                (0..dim).map(|k| x.data()[k * dim + k] * (a[k] * a[k])).sum()
            }
            (None, None) => C64::new(a.iter().map(|x| x * x).sum(), 0.0),
        }
    }

    /// Product of the shadows labelled by `labels`, reusing pair products.
    fn chain(&self, labels: &[usize]) -> Option<ComplexMatrix> {
        match labels.len() {
            0 => None,
            1 => Some(self.shadows[labels[0]].matrix.clone()),
            _ => {
                let mut m = self.pair(labels[0], labels[1]).clone();
                let mut rest = &labels[2..];
                while rest.len() >= 2 {
                    m = m.matmul(self.pair(rest[0], rest[1]));
                    rest = &rest[2..];
                }
                if let Some(&b) = rest.first() {
                    m = m.matmul(&self.shadows[b].matrix);
                }
                Some(m)
            }
        }
    }

    /// Unbiased estimator of `F_n` from the full trace polynomial, each power
    /// `rho^{q+2-m} A rho^m A` replaced by distinct batch labels.
    pub fn f_generic(&self, n: usize) -> Result<Estimate> {
        self.require(n + 3)?;
        self.products();
        let nb = self.n_batches();
        let terms = trace_polynomial_terms(n);
        let comps: Vec<(f64, Component)> = (2..=n + 2)
            .map(|d| {
                let deg: Vec<(usize, f64)> = terms
                    .iter()
                    .filter(|(q, _, _)| q + 2 == d)
                    .map(|&(_, m, c)| (m, c))
                    .collect();
                let comp = component(nb, d, |t| {
                    deg.iter()
                        .map(|&(m, c)| {
                            let (l, r) = t.split_at(d - m);
                            self.trace_lara(self.chain(l).as_ref(), self.chain(r).as_ref()) * c
                        })
                        .sum()
                });
                (1.0, comp)
            })
            .collect();
        let parts: Vec<(f64, &Component)> = comps.iter().map(|(c, p)| (*c, p)).collect();
        let (v, im, se) = combine(&parts, nb);
        Ok(self.estimate(v, im, se))
    }
}

/// U-statistics estimator of `F_n`, `n` in `0..=2`.
pub fn ustat_f(shadows: &[BatchShadow], a: &DiagonalOperator, n: usize) -> Result<Estimate> {
    if n > 2 {
        return Err(Error::InvalidConfig(format!(
            "ustat_f covers orders 0..=2, got {n}; use ustat_f3"
        )));
    }
    UStatEngine::new(shadows, a)?.f(n)
}

pub fn ustat_purity(shadows: &[BatchShadow]) -> Result<Estimate> {
    let dim = shadows
        .first()
        .ok_or_else(|| Error::EmptyRecords("batch shadows".into()))?
        .matrix
        .dim();
    UStatEngine::new(shadows, &DiagonalOperator::new(vec![0.0; dim])?)?.purity()
}

/// Degree-five estimator of `F_3`; needs at least six batches.
pub fn ustat_f3(shadows: &[BatchShadow], a: &DiagonalOperator) -> Result<Estimate> {
    UStatEngine::new(shadows, a)?.f_generic(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{CalibrationOptions, CalibrationTable};
    use crate::metrology::{lower_bound_trace_polynomial, purity, Generator};
    use crate::noise::NoiseModel;
    use crate::sampling::{calibration_state, run_protocol, ExperimentPlan, PreparedState, Purpose};
    use crate::states::{ghz, random_mixed_state, PureState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rho(n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_mixed_state(n, 1 << n, &mut rng).unwrap().into_matrix()
    }

    #[test]
    fn factor_has_unit_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in [1.0, 0.9, 0.6] {
            let u = crate::sampling::sample_cue_unitary(&mut rng);
            for s in 0..2 {
                let f = shadow_factor(&u, s, g);
                assert!(((f[0] + f[3]).re - 1.0).abs() < 1e-12);
                assert!((f[1] - f[2].conj()).norm() < 1e-12);
            }
        }
        // G = 1 reduces to 3 U^dag|s><s|U - 1
        let (a, b) = inversion_coefficients(1.0);
        assert_eq!((a, b), (3.0, -1.0));
    }

    #[test]
    fn expansion_matches_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3;
        let unitaries: Vec<Mat2> = (0..n).map(|_| crate::sampling::sample_cue_unitary(&mut rng)).collect();
        let g = [0.9, 0.95, 1.0];
        let rec = MeasurementRecord {
            iteration: 0,
            unitary_index: 0,
            purpose: Purpose::Estimation,
            unitaries: unitaries.clone(),
            counts: vec![(1, 3), (5, 7)],
            shots: 10,
        };
        let len = 1 << (2 * n);
        let mut acc = vec![ZERO; len];
        accumulate_record(&rec, &g, 1.0, &mut acc, &mut Vec::new(), &mut Vec::new());
        let got = interleaved_to_matrix(&acc, n);
        let mut want = ComplexMatrix::zeros(1 << n);
        for &(k, c) in &rec.counts {
            let factors: Vec<ComplexMatrix> = (0..n)
                .map(|j| {
                    let s = (k >> (n - 1 - j)) & 1;
                    crate::qmath::mat2_to_matrix(&shadow_factor(&unitaries[j], s, g[j]))
                })
                .collect();
            want.add_scaled(&crate::qmath::tensor_product(&factors).unwrap(), c as f64 / 10.0);
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn plug_in_collapse() {
        for (n, seed) in [(2, 3), (3, 4)] {
            let rho = random_rho(n, seed);
            let a = DiagonalOperator::collective_z(n).unwrap();
            let gen = Generator::Diagonal(a.clone());
            let batches = BatchShadow::plug_in(&rho, 6);
            let eng = UStatEngine::new(&batches, &a).unwrap();
            for order in 0..=3 {
                let exact = lower_bound_trace_polynomial(&rho, &gen, order).unwrap();
                let est = eng.f(order).unwrap();
                assert!((est.value - exact).abs() < 1e-9, "n={n} order={order}");
                assert!(est.stderr < 1e-9);
                assert!(est.imaginary.abs() < 1e-10);
            }
            let p = eng.purity().unwrap();
            assert!((p.value - purity(&rho)).abs() < 1e-12);
        }
    }

    #[test]
    fn generic_matches_pairwise_form() {
        let a = DiagonalOperator::collective_z(2).unwrap();
        let batches: Vec<BatchShadow> = (0..6)
            .map(|b| BatchShadow {
                matrix: random_rho(2, 10 + b as u64),
                index: b,
                iterations: vec![],
                n_unitaries: 0,
                shots: 0,
            })
            .collect();
        let eng = UStatEngine::new(&batches, &a).unwrap();
        for n in 0..=2 {
            let x = eng.f(n).unwrap();
            let y = eng.f_generic(n).unwrap();
            assert!((x.value - y.value).abs() < 1e-10, "n={n}");
            assert!((x.stderr - y.stderr).abs() < 1e-10);
            assert!(x.imaginary.abs() < 1e-10);
        }
    }

    #[test]
    fn permutation_invariance_is_exact() {
        let a = DiagonalOperator::collective_z(2).unwrap();
        let batches: Vec<BatchShadow> = (0..6)
            .map(|b| BatchShadow {
                matrix: random_rho(2, 20 + b as u64),
                index: b,
                iterations: vec![],
                n_unitaries: 0,
                shots: 0,
            })
            .collect();
        let mut perm = batches.clone();
        perm.reverse();
        perm.swap(0, 3);
        let e1 = UStatEngine::new(&batches, &a).unwrap();
        let e2 = UStatEngine::new(&perm, &a).unwrap();
        for n in 0..=3 {
            assert_eq!(e1.f(n).unwrap(), e2.f(n).unwrap());
        }
        assert_eq!(e1.purity().unwrap(), e2.purity().unwrap());
    }

    #[test]
    fn too_few_batches() {
        let rho = random_rho(1, 5);
        let a = DiagonalOperator::collective_z(1).unwrap();
        let b = BatchShadow::plug_in(&rho, 4);
        assert!(ustat_f(&b, &a, 1).is_ok());
        assert!(matches!(
            ustat_f(&b, &a, 2),
            Err(Error::TooFewBatches { required: 5, available: 4 })
        ));
        assert!(matches!(ustat_f3(&b, &a), Err(Error::TooFewBatches { .. })));
        let two = BatchShadow::plug_in(&rho, 2);
        assert!(ustat_purity(&two).unwrap().stderr.is_infinite());
    }

    #[test]
    fn single_qubit_converges_to_zero_state() {
        let n = 1;
        let plan = ExperimentPlan::new(n, 10, 2000, 100, 7).unwrap();
        let state = calibration_state(n).unwrap();
        let recs = run_protocol(&state, &plan, &NoiseModel::noiseless(n), Purpose::Estimation).unwrap();
        let shadows = build_raw_batch_shadows(&recs, 10).unwrap();
        let mut avg = ComplexMatrix::zeros(2);
        for s in &shadows {
            assert!(s.matrix.hermiticity_defect() < 1e-12);
            assert!((s.matrix.trace().re - 1.0).abs() < 1e-10);
            avg.add_scaled(&s.matrix, 0.1);
        }
        let target = ComplexMatrix::from_diagonal(&[1.0, 0.0]);
        // unitaries dominate the variance, not shots
        let budget = plan.total() as f64;
        assert!(avg.max_abs_diff(&target) < 5.0 / budget.sqrt());
    }

    #[test]
    fn robust_restores_ghz_fidelity() {
        let n = 3;
        let model = NoiseModel::readout(n, 0.05);
        let plan = ExperimentPlan::new(n, 10, 100, 200, 11).unwrap();
        let cal = run_protocol(&calibration_state(n).unwrap(), &plan, &model, Purpose::Calibration).unwrap();
        let table = CalibrationTable::from_records(&cal, &CalibrationOptions::default()).unwrap();
        let psi = ghz(n).unwrap();
        let est = run_protocol(&PreparedState::pure(&psi), &plan, &model, Purpose::Estimation).unwrap();
        let target = psi.to_density().into_matrix();
        let fid = |sh: &[BatchShadow]| -> f64 {
            sh.iter().map(|s| s.matrix.trace_product(&target).re).sum::<f64>() / sh.len() as f64
        };
        let robust = fid(&build_batch_shadows(&est, &table, 10).unwrap());
        let raw = fid(&build_raw_batch_shadows(&est, 10).unwrap());
        assert!(raw < robust, "raw {raw} robust {robust}");
        assert!((robust - 1.0).abs() < 0.05);
    }

    #[test]
    fn guard_and_divisibility() {
        let n = 2;
        let plan = ExperimentPlan::new(n, 4, 5, 10, 1).unwrap();
        let psi = PureState::plus(n).unwrap();
        let recs = run_protocol(&PreparedState::pure(&psi), &plan, &NoiseModel::noiseless(n), Purpose::Estimation).unwrap();
        assert!(matches!(build_raw_batch_shadows(&recs, 3), Err(Error::InvalidPlan(_))));
        let mut table = CalibrationTable::ideal(n, 0..4);
        table.iterations.get_mut(&2).unwrap().g[0] = 0.4;
        assert!(build_batch_shadows(&recs, &table, 2).unwrap_err().is_numerical_guard());
        let short = CalibrationTable::ideal(n, 0..3);
        assert!(matches!(build_batch_shadows(&recs, &short, 2), Err(Error::MissingCalibration(3))));
    }
}
