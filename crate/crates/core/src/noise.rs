//! Noise applied between the random unitary layer and readout: local
//! depolarising gate error, local bit-flip readout error, correlated two-qubit
//! flips (cross-talk) and per-iteration drift.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{ComplexMatrix, Mat2, C64, I, ONE, ZERO};
use crate::seeds::stream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QubitNoise {
    /// Readout flip probability.
    #[serde(default)]
    pub p_meas: f64,
    /// Depolarising probability per unitary layer.
    #[serde(default)]
    pub p_u: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTalk {
    pub pair: (usize, usize),
    pub p_nl: f64,
}

/// A sudden change taking effect at `iteration` and persisting until the
/// next event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub iteration: usize,
    /// Multiplies every probability.
    #[serde(default = "one")]
    pub scale: f64,
    /// Added to every readout flip probability after scaling.
    #[serde(default)]
    pub meas_offset: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriftSchedule {
    #[default]
    None,
    /// Piecewise-constant schedule.
    Steps { events: Vec<StepEvent> },
    /// Independent multiplicative jitter `1 + amplitude * u`, `u ~ U(-1, 1)`,
    /// drawn per iteration from a stream seeded by `(seed, iteration)`.
    Jitter { amplitude: f64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftFactors {
    pub scale: f64,
    pub meas_offset: f64,
}

impl DriftSchedule {
    pub fn at(&self, iteration: usize) -> DriftFactors {
        match self {
            Self::None => DriftFactors {
                scale: 1.0,
                meas_offset: 0.0,
            },
            Self::Steps { events } => {
                let mut sorted: Vec<&StepEvent> = events.iter().collect();
                sorted.sort_by_key(|e| e.iteration);
                let mut f = DriftFactors {
                    scale: 1.0,
                    meas_offset: 0.0,
                };
                for e in sorted.into_iter().take_while(|e| e.iteration <= iteration) {
                    f = DriftFactors {
                        scale: e.scale,
                        meas_offset: e.meas_offset,
                    };
                }
                f
            }
            Self::Jitter { amplitude, seed } => {
                let u: f64 = stream(*seed, &[iteration as u64, 0xD51F]).random_range(-1.0..1.0);
                DriftFactors {
                    scale: 1.0 + amplitude * u,
                    meas_offset: 0.0,
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub per_qubit: Vec<QubitNoise>,
    #[serde(default)]
    pub cross_talk: Vec<CrossTalk>,
    #[serde(default)]
    pub drift: DriftSchedule,
}

/// Probabilities in force during one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveNoise {
    pub p_meas: Vec<f64>,
    pub p_u: Vec<f64>,
    pub cross_talk: Vec<CrossTalk>,
}

impl EffectiveNoise {
    pub fn n_qubits(&self) -> usize {
        self.p_meas.len()
    }

    pub fn has_depolarizing(&self) -> bool {
        self.p_u.iter().any(|&p| p > 0.0)
    }
}

fn check_prob(name: &str, value: f64, upper: f64, inclusive_upper: bool) -> Result<()> {
    let ok = value.is_finite()
        && value >= 0.0
        && if inclusive_upper { value <= upper } else { value < upper };
    if ok {
        Ok(())
    } else {
        let bracket = if inclusive_upper { "]" } else { ")" };
        Err(Error::InvalidProbability {
            name: name.into(),
            value,
            reason: format!("must lie in [0, {upper}{bracket}"),
        })
    }
}

impl NoiseModel {
    pub fn noiseless(n_qubits: usize) -> Self {
        Self {
            per_qubit: vec![QubitNoise::default(); n_qubits],
            ..Self::default()
        }
    }

    pub fn readout(n_qubits: usize, p_meas: f64) -> Self {
        Self {
            per_qubit: vec![
                QubitNoise {
                    p_meas,
                    p_u: 0.0
                };
                n_qubits
            ],
            ..Self::default()
        }
    }

    pub fn uniform(n_qubits: usize, p_meas: f64, p_u: f64) -> Self {
        Self {
            per_qubit: vec![QubitNoise { p_meas, p_u }; n_qubits],
            ..Self::default()
        }
    }

    pub fn with_cross_talk(mut self, pair: (usize, usize), p_nl: f64) -> Self {
        self.cross_talk.push(CrossTalk { pair, p_nl });
        self
    }

    pub fn with_drift(mut self, drift: DriftSchedule) -> Self {
        self.drift = drift;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.per_qubit.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (j, q) in self.per_qubit.iter().enumerate() {
            check_prob(&format!("p_meas[{j}]"), q.p_meas, 0.5, false)?;
            check_prob(&format!("p_u[{j}]"), q.p_u, 1.0, false)?;
        }
        for c in &self.cross_talk {
            let (a, b) = c.pair;
            if a == b || a >= self.n_qubits() || b >= self.n_qubits() {
                return Err(Error::InvalidConfig(format!(
                    "cross-talk pair ({a}, {b}) is not two distinct qubits"
                )));
            }
            check_prob("p_nl", c.p_nl, 0.5, false)?;
        }
        Ok(())
    }

    /// Applies the drift for `iteration` and checks the resulting ranges.
    pub fn effective(&self, iteration: usize) -> Result<EffectiveNoise> {
        self.validate()?;
        let f = self.drift.at(iteration);
        let mut p_meas = Vec::with_capacity(self.n_qubits());
        let mut p_u = Vec::with_capacity(self.n_qubits());
        for (j, q) in self.per_qubit.iter().enumerate() {
            let pm = q.p_meas * f.scale + f.meas_offset;
            let pu = q.p_u * f.scale;
            check_prob(&format!("p_meas[{j}] at iteration {iteration}"), pm, 0.5, false)?;
            check_prob(&format!("p_u[{j}] at iteration {iteration}"), pu, 1.0, false)?;
            p_meas.push(pm);
            p_u.push(pu);
        }
        let cross_talk = self
            .cross_talk
            .iter()
            .map(|c| {
                let p = c.p_nl * f.scale;
                check_prob(&format!("p_nl at iteration {iteration}"), p, 0.5, false)?;
                Ok(CrossTalk { pair: c.pair, p_nl: p })
            })
            .collect::<Result<_>>()?;
        Ok(EffectiveNoise {
            p_meas,
            p_u,
            cross_talk,
        })
    }
}

/// Kraus operators of a single-qubit channel.
#[derive(Clone, Debug)]
pub struct ChannelAction {
    pub kraus: Vec<Mat2>,
}

impl ChannelAction {
    pub fn depolarizing(p: f64) -> Self {
        let a = C64::new((1.0 - p).sqrt(), 0.0);
        let b = (p / 3.0).sqrt();
        Self {
            kraus: vec![
                [a, ZERO, ZERO, a],
                [ZERO, ONE * b, ONE * b, ZERO],
                [ZERO, -I * b, I * b, ZERO],
                [ONE * b, ZERO, ZERO, -ONE * b],
            ],
        }
    }

    pub fn bit_flip(p: f64) -> Self {
        let a = (1.0 - p).sqrt();
        let b = p.sqrt();
        Self {
            kraus: vec![
                [ONE * a, ZERO, ZERO, ONE * a],
                [ZERO, ONE * b, ONE * b, ZERO],
            ],
        }
    }

    /// `sum_k K^dagger K`
    pub fn completeness(&self) -> Mat2 {
        let mut acc = [ZERO; 4];
        for k in &self.kraus {
            let kd = crate::qmath::mat2_adjoint(k);
            let p = crate::qmath::mat2_mul(&kd, k);
            for (a, b) in acc.iter_mut().zip(p) {
                *a += b;
            }
        }
        acc
    }

    pub fn apply(&self, rho: &ComplexMatrix, n_qubits: usize, qubit: usize) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(rho.dim());
        for k in &self.kraus {
            out.add_scaled(&crate::qmath::conjugate_single_qubit(rho, n_qubits, qubit, k), 1.0);
        }
        out
    }
}

fn n_qubits_of(rho: &ComplexMatrix) -> Result<usize> {
    rho.n_qubits()
        .ok_or_else(|| Error::Dimension(format!("dim {} is not 2^N", rho.dim())))
}

/// `rho -> (1 - p) rho + (p/3) sum_a s_a rho s_a` on `qubit`, written as a
/// blockwise update: the qubit's coherences shrink by `1 - 4p/3` and its
/// populations mix with weight `2p/3`.
pub fn depolarize(rho: &ComplexMatrix, qubit: usize, p: f64) -> Result<ComplexMatrix> {
    let n = n_qubits_of(rho)?;
    let d = rho.dim();
    let mask = 1usize << (n - 1 - qubit);
    let shrink = 1.0 - 4.0 * p / 3.0;
    let mix = 2.0 * p / 3.0;
    let src = rho.data();
    let mut out = rho.clone();
    let dst = out.data_mut();
    for i in 0..d {
        for j in 0..d {
            let idx = i * d + j;
            if (i & mask) == (j & mask) {
                dst[idx] = src[idx] * (1.0 - mix) + src[(i ^ mask) * d + (j ^ mask)] * mix;
            } else {
                dst[idx] = src[idx] * shrink;
            }
        }
    }
    Ok(out)
}

/// `rho -> (1 - p) rho + p F rho F` with `F` the product of X on the bits in
/// `mask`.
fn flip_mixture(rho: &ComplexMatrix, mask: usize, p: f64) -> ComplexMatrix {
    let d = rho.dim();
    let src = rho.data();
    let mut out = rho.clone();
    let dst = out.data_mut();
    for i in 0..d {
        for j in 0..d {
            dst[i * d + j] = src[i * d + j] * (1.0 - p) + src[(i ^ mask) * d + (j ^ mask)] * p;
        }
    }
    out
}

pub fn bit_flip(rho: &ComplexMatrix, qubit: usize, p: f64) -> Result<ComplexMatrix> {
    let n = n_qubits_of(rho)?;
    Ok(flip_mixture(rho, 1usize << (n - 1 - qubit), p))
}

pub fn correlated_flip(rho: &ComplexMatrix, pair: (usize, usize), p: f64) -> Result<ComplexMatrix> {
    let n = n_qubits_of(rho)?;
    let mask = (1usize << (n - 1 - pair.0)) | (1usize << (n - 1 - pair.1));
    Ok(flip_mixture(rho, mask, p))
}

/// `Lambda_meas o (Lambda_U)^eta` per qubit, then the cross-talk flips, with
/// probabilities taken at `iteration`.
pub fn apply_channel(
    rho_rotated: &ComplexMatrix,
    model: &NoiseModel,
    iteration: usize,
    eta: usize,
) -> Result<ComplexMatrix> {
    if eta == 0 {
        return Err(Error::InvalidPlan("eta must be at least 1".into()));
    }
    let n = n_qubits_of(rho_rotated)?;
    if model.n_qubits() != n {
        return Err(Error::Dimension(format!(
            "noise model for {} qubits applied to {n}",
            model.n_qubits()
        )));
    }
    let eff = model.effective(iteration)?;
    apply_effective(rho_rotated, &eff, eta)
}

pub fn apply_effective(rho: &ComplexMatrix, eff: &EffectiveNoise, eta: usize) -> Result<ComplexMatrix> {
    let mut out = rho.clone();
    for q in 0..eff.n_qubits() {
        if eff.p_u[q] > 0.0 {
            for _ in 0..eta {
                out = depolarize(&out, q, eff.p_u[q])?;
            }
        }
        if eff.p_meas[q] > 0.0 {
            out = bit_flip(&out, q, eff.p_meas[q])?;
        }
    }
    for c in &eff.cross_talk {
        if c.p_nl > 0.0 {
            out = correlated_flip(&out, c.pair, c.p_nl)?;
        }
    }
    Ok(out)
}

/// Acts on sampled basis-state indices instead of density matrices. Valid
/// because flip channels are diagonal in the measurement basis.
#[derive(Clone, Debug)]
pub struct ReadoutSampler {
    n_qubits: usize,
    /// `(mask, probability)` for every nonzero flip event.
    events: Vec<(usize, f64)>,
}

impl ReadoutSampler {
    pub fn new(model: &NoiseModel, iteration: usize) -> Result<Self> {
        Self::from_effective(&model.effective(iteration)?)
    }

    pub fn from_effective(eff: &EffectiveNoise) -> Result<Self> {
        if eff.has_depolarizing() {
            return Err(Error::FastPathRefused(
                "depolarising noise does not commute with readout in the sampled representation"
                    .into(),
            ));
        }
        let n = eff.n_qubits();
        let mut events = Vec::new();
        for (q, &p) in eff.p_meas.iter().enumerate() {
            if p > 0.0 {
                events.push((1usize << (n - 1 - q), p));
            }
        }
        for c in &eff.cross_talk {
            if c.p_nl > 0.0 {
                let mask = (1usize << (n - 1 - c.pair.0)) | (1usize << (n - 1 - c.pair.1));
                events.push((mask, c.p_nl));
            }
        }
        Ok(Self {
            n_qubits: n,
            events,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn is_trivial(&self) -> bool {
        self.events.is_empty()
    }

    pub fn apply<R: Rng + ?Sized>(&self, outcome: usize, rng: &mut R) -> usize {
        let mut out = outcome;
        for &(mask, p) in &self.events {
            if rng.random::<f64>() < p {
                out ^= mask;
            }
        }
        out
    }
}

/// Bitstring form of [`ReadoutSampler::apply`].
pub fn classical_readout_sampler<R: Rng + ?Sized>(
    bits: &str,
    model: &NoiseModel,
    iteration: usize,
    rng: &mut R,
) -> Result<String> {
    let sampler = ReadoutSampler::new(model, iteration)?;
    if bits.len() != sampler.n_qubits() {
        return Err(Error::Record(format!(
            "bitstring of length {} for {} qubits",
            bits.len(),
            sampler.n_qubits()
        )));
    }
    let idx = crate::sampling::parse_bitstring(bits)?;
    Ok(crate::sampling::format_bitstring(
        sampler.apply(idx, rng),
        sampler.n_qubits(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{mat2_to_matrix, pauli_x, pauli_y, pauli_z};
    use crate::states::random_mixed_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_qubit_zero() -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&[1.0, 0.0])
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_mixed_state(3, 4, &mut rng).unwrap();
        let out = apply_channel(rho.matrix(), &NoiseModel::noiseless(3), 0, 1).unwrap();
        assert_eq!(&out, rho.matrix());
    }

    #[test]
    fn bit_flip_on_zero() {
        let out = apply_channel(&single_qubit_zero(), &NoiseModel::readout(1, 0.1), 0, 1).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::from_diagonal(&[0.9, 0.1])) < 1e-15);
    }

    #[test]
    fn layered_depolarizing_plus_readout_survival() {
        // G = 1 - 2 P(flip) for |0>; compare with the first-order model
        let (pu, pm, eta) = (0.01, 0.014, 5);
        let out = apply_channel(&single_qubit_zero(), &NoiseModel::uniform(1, pm, pu), 0, eta).unwrap();
        // survival of |0>
        let g = out[(0, 0)].re;
        let model = 1.0 - (2.0 * pu / 3.0) * eta as f64 - pm;
        assert!((g - model).abs() < 5e-3, "{g} vs {model}");
        // exact: (1 - 4pu/3)^eta (1 - 2pm) for populations contrast
        let exact = (1.0 - 4.0 * pu / 3.0_f64).powi(eta as i32) * (1.0 - 2.0 * pm);
        assert!((out[(0, 0)].re - out[(1, 1)].re - exact).abs() < 1e-14);
    }

    #[test]
    fn blockwise_depolarizing_matches_kraus() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_mixed_state(3, 8, &mut rng).unwrap();
        for q in 0..3 {
            let fast = depolarize(rho.matrix(), q, 0.3).unwrap();
            let kraus = ChannelAction::depolarizing(0.3).apply(rho.matrix(), 3, q);
            assert!(fast.max_abs_diff(&kraus) < 1e-14);
            // explicit Pauli sum
            let mut pauli = rho.matrix().scale_real(0.7);
            for s in [pauli_x(), pauli_y(), pauli_z()] {
                let k: Mat2 = [s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]];
                pauli.add_scaled(&crate::qmath::conjugate_single_qubit(rho.matrix(), 3, q, &k), 0.1);
            }
            assert!(fast.max_abs_diff(&pauli) < 1e-14);
        }
    }

    #[test]
    fn flip_channels_match_kraus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_mixed_state(2, 4, &mut rng).unwrap();
        let fast = bit_flip(rho.matrix(), 1, 0.2).unwrap();
        let kraus = ChannelAction::bit_flip(0.2).apply(rho.matrix(), 2, 1);
        assert!(fast.max_abs_diff(&kraus) < 1e-14);

        let xx = crate::qmath::kron(&pauli_x(), &pauli_x());
        let mut expect = rho.matrix().scale_real(0.9);
        expect.add_scaled(&xx.matmul(rho.matrix()).matmul(&xx), 0.1);
        let fast = correlated_flip(rho.matrix(), (0, 1), 0.1).unwrap();
        assert!(fast.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn kraus_sets_are_complete() {
        for p in [0.0, 0.1, 0.49] {
            for ch in [ChannelAction::depolarizing(p), ChannelAction::bit_flip(p)] {
                let c = mat2_to_matrix(&ch.completeness());
                assert!(c.max_abs_diff(&ComplexMatrix::identity(2)) < 1e-12);
            }
        }
    }

    #[test]
    fn drift_out_of_range_is_rejected() {
        let m = NoiseModel::readout(2, 0.3).with_drift(DriftSchedule::Steps {
            events: vec![StepEvent {
                iteration: 2,
                scale: 2.0,
                meas_offset: 0.0,
            }],
        });
        assert!(m.effective(1).is_ok());
        assert!(matches!(
            m.effective(2),
            Err(Error::InvalidProbability { .. })
        ));
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(NoiseModel::readout(2, 0.5).validate().is_err());
        assert!(NoiseModel::uniform(2, 0.0, 1.0).validate().is_err());
        assert!(NoiseModel::noiseless(2).with_cross_talk((1, 1), 0.1).validate().is_err());
        assert!(NoiseModel::noiseless(2).with_cross_talk((0, 2), 0.1).validate().is_err());
    }

    #[test]
    fn step_schedule_is_piecewise_constant() {
        let d = DriftSchedule::Steps {
            events: vec![
                StepEvent {
                    iteration: 5,
                    scale: 1.0,
                    meas_offset: 0.02,
                },
                StepEvent {
                    iteration: 2,
                    scale: 1.5,
                    meas_offset: 0.0,
                },
            ],
        };
        assert_eq!(d.at(0).scale, 1.0);
        assert_eq!(d.at(3).scale, 1.5);
        assert_eq!(d.at(7).meas_offset, 0.02);
        assert_eq!(d.at(7).scale, 1.0);
    }

    #[test]
    fn jitter_is_a_pure_function_of_seed_and_iteration() {
        let d = DriftSchedule::Jitter {
            amplitude: 0.3,
            seed: 9,
        };
        assert_eq!(d.at(4), d.at(4));
        assert_ne!(d.at(4), d.at(5));
        for i in 0..50 {
            let s = d.at(i).scale;
            assert!((0.7..=1.3).contains(&s));
        }
    }

    #[test]
    fn fast_path_refuses_depolarizing() {
        assert!(matches!(
            ReadoutSampler::new(&NoiseModel::uniform(2, 0.0, 0.01), 0),
            Err(Error::FastPathRefused(_))
        ));
    }

    #[test]
    fn sampler_identity_and_flip_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let quiet = NoiseModel::noiseless(3);
        assert_eq!(classical_readout_sampler("101", &quiet, 0, &mut rng).unwrap(), "101");

        let model = NoiseModel::readout(1, 0.49);
        let s = ReadoutSampler::new(&model, 0).unwrap();
        let n = 100_000;
        let flips = (0..n).filter(|_| s.apply(0, &mut rng) == 1).count() as f64;
        let sigma = (0.49 * 0.51 / n as f64).sqrt();
        assert!((flips / n as f64 - 0.49).abs() < 3.0 * sigma);
    }

    #[test]
    fn correlated_flip_event_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = NoiseModel::noiseless(6).with_cross_talk((3, 4), 0.002);
        let s = ReadoutSampler::new(&model, 0).unwrap();
        let n = 1_000_000;
        let joint = 0b000110;
        let hits = (0..n).filter(|_| s.apply(0, &mut rng) == joint).count() as f64;
        let sigma = (0.002 * 0.998 / n as f64).sqrt();
        assert!((hits / n as f64 - 0.002).abs() < 3.0 * sigma);
    }

    #[test]
    fn sampler_matches_density_matrix_path() {
        let model = NoiseModel {
            per_qubit: vec![
                QubitNoise {
                    p_meas: 0.1,
                    p_u: 0.0,
                },
                QubitNoise {
                    p_meas: 0.25,
                    p_u: 0.0,
                },
            ],
            ..NoiseModel::default()
        }
        .with_cross_talk((0, 1), 0.05);
        let rho = ComplexMatrix::from_diagonal(&[0.5, 0.2, 0.2, 0.1]);
        let exact = apply_channel(&rho, &model, 0, 1).unwrap().diagonal_real();
        let sampler = ReadoutSampler::new(&model, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let samples = 200_000;
        let cdf = [0.5, 0.7, 0.9, 1.0];
        let mut counts = [0usize; 4];
        for _ in 0..samples {
            let u: f64 = rng.random();
            let ideal = cdf.iter().position(|&c| u < c).unwrap();
            counts[sampler.apply(ideal, &mut rng)] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(&c, &p)| (c as f64 / samples as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 5.0 / (samples as f64).sqrt(), "tv {tv}");
    }

    #[test]
    fn model_json_round_trip() {
        let m = NoiseModel::readout(2, 0.01)
            .with_cross_talk((0, 1), 0.002)
            .with_drift(DriftSchedule::Jitter {
                amplitude: 0.1,
                seed: 3,
            });
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"kind\":\"jitter\""));
        let back: NoiseModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn prop_channels_preserve_trace(seed in any::<u64>(), pm in 0.0f64..0.49, pu in 0.0f64..0.99,
                                        pnl in 0.0f64..0.49, eta in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_mixed_state(3, 3, &mut rng).unwrap();
            let m = NoiseModel::uniform(3, pm, pu).with_cross_talk((0, 2), pnl);
            let out = apply_channel(rho.matrix(), &m, 0, eta).unwrap();
            prop_assert!((out.trace() - rho.matrix().trace()).norm() < 1e-12);
            prop_assert!(out.is_hermitian(1e-12));
        }
    }
}
