//! Target states: GHZ, the transverse-field Ising chain and its ground state,
//! and the layered variational circuit with classically optimised angles.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use argmin::core::{CostFunction, Executor, State, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{
    apply_single_qubit_to_vector, check_cap, hermitian_eig, qubits_for_dim, ComplexMatrix, Mat2,
    C64, ONE, ZERO,
};
use crate::seeds::derive_seed;

const NORM_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Validates the length and the unit norm.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n_qubits = qubits_for_dim(amplitudes.len())
            .ok_or_else(|| Error::Dimension(format!("{} amplitudes", amplitudes.len())))?;
        check_cap(n_qubits)?;
        let norm = norm_sqr(&amplitudes).sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Dimension(format!("state norm {norm} is not 1")));
        }
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm = norm_sqr(&amplitudes).sqrt();
        if norm == 0.0 {
            return Err(Error::Dimension("zero vector".into()));
        }
        for a in &mut amplitudes {
            *a /= norm;
        }
        Self::new(amplitudes)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_cap(n_qubits)?;
        let mut amps = vec![ZERO; 1 << n_qubits];
        *amps
            .get_mut(index)
            .ok_or_else(|| Error::Dimension(format!("basis index {index}")))? = ONE;
        Self::new(amps)
    }

    pub fn zeros(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// `|+>^N`
    pub fn plus(n_qubits: usize) -> Result<Self> {
        check_cap(n_qubits)?;
        let dim = 1usize << n_qubits;
        let a = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self::new(vec![a; dim])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amplitudes).sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            n_qubits: self.n_qubits,
            matrix: ComplexMatrix::outer(&self.amplitudes),
        }
    }

    /// Rotates the global phase so the first amplitude with modulus above
    /// `1e-12` is real and positive.
    fn fix_phase(&mut self) {
        if let Some(first) = self.amplitudes.iter().find(|a| a.norm() > 1e-12) {
            let phase = first.conj() / first.norm();
            for a in &mut self.amplitudes {
                *a *= phase;
            }
        }
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

/// Dense density matrix on `n_qubits`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Checks Hermiticity (1e-10) and unit trace (1e-8). Positivity is left
    /// to consumers that need it.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let n_qubits = matrix
            .n_qubits()
            .ok_or_else(|| Error::Dimension(format!("dim {} is not 2^N", matrix.dim())))?;
        check_cap(n_qubits)?;
        let defect = matrix.hermiticity_defect();
        if defect > 1e-10 {
            return Err(Error::NotHermitian { deviation: defect });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > 1e-8 {
            return Err(Error::BadTrace { trace });
        }
        Ok(Self { n_qubits, matrix })
    }

    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        check_cap(n_qubits)?;
        let dim = 1usize << n_qubits;
        Self::new(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    /// `(1 - w) |psi><psi| + w 1/2^N`
    pub fn with_white_noise(psi: &PureState, w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidProbability {
                name: "mixing".into(),
                value: w,
                reason: "must lie in [0, 1]".into(),
            });
        }
        let dim = psi.dim();
        let mut m = ComplexMatrix::outer(psi.amplitudes()).scale_real(1.0 - w);
        for i in 0..dim {
            m[(i, i)] += C64::new(w / dim as f64, 0.0);
        }
        Self::new(m)
    }

    /// Mixing weight `w` that gives purity `target` when applied to a pure
    /// state on `n_qubits`.
    pub fn mixing_for_purity(n_qubits: usize, target: f64) -> Result<f64> {
        let d = (1usize << n_qubits) as f64;
        // Tr rho^2 = (1-w)^2 + (2w(1-w) + w^2) / d
        //          = 1 - 2w(1 - 1/d) + w^2 (1 - 1/d)
        let c = 1.0 - 1.0 / d;
        if !(1.0 / d..=1.0).contains(&target) {
            return Err(Error::InvalidConfig(format!(
                "purity {target} outside [1/d, 1]"
            )));
        }
        // c w^2 - 2 c w + (1 - target) = 0
        let disc = (c * c - c * (1.0 - target)).max(0.0);
        Ok((c - disc.sqrt()) / c)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }
}

/// Random mixed state `G G^dagger / Tr(G G^dagger)` from a `2^N x rank`
/// complex Ginibre matrix.
pub fn random_mixed_state<R: Rng + ?Sized>(n_qubits: usize, rank: usize, rng: &mut R) -> Result<DensityMatrix> {
    check_cap(n_qubits)?;
    let dim = 1usize << n_qubits;
    let rank = rank.clamp(1, dim);
    let normal = rand_distr::StandardNormal;
    let g: Vec<C64> = (0..dim * rank)
        .map(|_| C64::new(rng.sample(normal), rng.sample(normal)))
        .collect();
    let mut m = ComplexMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = (0..rank).map(|k| g[i * rank + k] * g[j * rank + k].conj()).sum();
        }
    }
    let t = m.trace().re;
    DensityMatrix::new(m.scale_real(1.0 / t).hermitize())
}

pub fn ghz(n_qubits: usize) -> Result<PureState> {
    if n_qubits == 0 {
        return Err(Error::Dimension("GHZ needs at least one qubit".into()));
    }
    check_cap(n_qubits)?;
    let dim = 1usize << n_qubits;
    let mut amps = vec![ZERO; dim];
    let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    amps[0] = a;
    amps[dim - 1] = a;
    PureState::new(amps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Open => "open",
            Boundary::Periodic => "periodic",
        })
    }
}

/// `H = -J sum_j Z_j Z_{j+1} - h sum_j X_j`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfimSpec {
    pub n_qubits: usize,
    #[serde(default = "default_coupling")]
    pub j: f64,
    pub h: f64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_coupling() -> f64 {
    1.0
}

/// Periodic chains admit exact preparation at depth `N/2`, which the
/// experiments rely on.
pub fn default_boundary() -> Boundary {
    Boundary::Periodic
}

impl TfimSpec {
    pub fn critical(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            j: 1.0,
            h: 1.0,
            boundary: default_boundary(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits < 2 {
            return Err(Error::InvalidConfig("TFIM needs at least two qubits".into()));
        }
        check_cap(self.n_qubits)?;
        if !self.j.is_finite() || !self.h.is_finite() {
            return Err(Error::InvalidConfig("non-finite TFIM parameter".into()));
        }
        Ok(())
    }

    /// Nearest-neighbour bonds. A two-site ring has a single bond.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let n = self.n_qubits;
        let mut bonds: Vec<(usize, usize)> = (0..n - 1).map(|j| (j, j + 1)).collect();
        if self.boundary == Boundary::Periodic && n > 2 {
            bonds.push((n - 1, 0));
        }
        bonds
    }

    /// Diagonal of the Ising part `-J sum Z Z`.
    pub fn ising_diagonal(&self) -> Vec<f64> {
        let n = self.n_qubits;
        let bonds = self.bonds();
        (0..1usize << n)
            .map(|k| {
                let zz: f64 = bonds
                    .iter()
                    .map(|&(a, b)| {
                        let za = bit(k, n, a);
                        let zb = bit(k, n, b);
                        if za == zb {
                            1.0
                        } else {
                            -1.0
                        }
                    })
                    .sum();
                -self.j * zz
            })
            .collect()
    }

    /// `<psi|H|psi>` without forming `H`.
    pub fn energy(&self, psi: &[C64]) -> f64 {
        let n = self.n_qubits;
        let diag = self.ising_diagonal();
        let mut e: f64 = psi.iter().zip(&diag).map(|(a, d)| a.norm_sqr() * d).sum();
        for q in 0..n {
            let mask = 1usize << (n - 1 - q);
            let x: f64 = psi
                .iter()
                .enumerate()
                .map(|(k, a)| (a.conj() * psi[k ^ mask]).re)
                .sum();
            e -= self.h * x;
        }
        e
    }
}

fn bit(k: usize, n: usize, qubit: usize) -> usize {
    (k >> (n - 1 - qubit)) & 1
}

pub fn tfim_hamiltonian(spec: &TfimSpec) -> Result<ComplexMatrix> {
    spec.validate()?;
    let n = spec.n_qubits;
    let dim = 1usize << n;
    let mut h = ComplexMatrix::from_diagonal(&spec.ising_diagonal());
    for q in 0..n {
        let mask = 1usize << (n - 1 - q);
        for k in 0..dim {
            h[(k ^ mask, k)] -= C64::new(spec.h, 0.0);
        }
    }
    Ok(h)
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub state: PureState,
    pub energy: f64,
    /// Dimension of the lowest eigenspace (eigenvalues within 1e-9).
    pub degeneracy: usize,
}

pub fn tfim_ground_state(spec: &TfimSpec) -> Result<GroundState> {
    let h = tfim_hamiltonian(spec)?;
    let eig = hermitian_eig(&h)?;
    let dim = h.dim();
    let e0 = eig.eigenvalues[dim - 1];
    let ground: Vec<usize> = (0..dim)
        .filter(|&k| (eig.eigenvalues[k] - e0).abs() <= 1e-9)
        .collect();
    let amps = if ground.len() == 1 {
        eig.eigenvector(ground[0])
    } else {
        // Project computational basis vectors onto the ground space and keep
        // the first with a non-negligible overlap.
        let vecs: Vec<Vec<C64>> = ground.iter().map(|&k| eig.eigenvector(k)).collect();
        let mut chosen = None;
        for b in 0..dim {
            let mut proj = vec![ZERO; dim];
            for v in &vecs {
                let c = v[b].conj();
                for (p, x) in proj.iter_mut().zip(v) {
                    *p += c * x;
                }
            }
            if norm_sqr(&proj) > 1e-6 {
                chosen = Some(proj);
                break;
            }
        }
        chosen.ok_or_else(|| Error::Eigen("empty ground space projection".into()))?
    };
    let mut state = PureState::normalized(amps)?;
    state.fix_phase();
    Ok(GroundState {
        state,
        energy: e0,
        degeneracy: ground.len(),
    })
}

/// Layer angles; layer `l` applies `exp(-i gamma_l H_A)` then
/// `exp(-i delta_l H_B)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalAngles {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
}

impl VariationalAngles {
    pub fn new(gamma: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let a = Self { gamma, delta };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.delta.len() {
            return Err(Error::InvalidConfig("gamma and delta lengths differ".into()));
        }
        if self.gamma.is_empty() {
            return Err(Error::InvalidConfig("at least one layer required".into()));
        }
        if self.gamma.iter().chain(&self.delta).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite angle".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    fn from_flat(x: &[f64]) -> Self {
        let p = x.len() / 2;
        Self {
            gamma: x[..p].to_vec(),
            delta: x[p..].to_vec(),
        }
    }
}

fn evolve_in_place(spec: &TfimSpec, diag: &[f64], gamma: &[f64], delta: &[f64], psi: &mut [C64]) {
    let n = spec.n_qubits;
    for (&g, &d) in gamma.iter().zip(delta) {
        for (a, &e) in psi.iter_mut().zip(diag) {
            *a *= C64::from_polar(1.0, -g * e);
        }
        // exp(-i d (-h X)) = cos(d h) 1 + i sin(d h) X
        let (s, c) = (d * spec.h).sin_cos();
        let rx: Mat2 = [
            C64::new(c, 0.0),
            C64::new(0.0, s),
            C64::new(0.0, s),
            C64::new(c, 0.0),
        ];
        for q in 0..n {
            apply_single_qubit_to_vector(psi, n, q, &rx);
        }
    }
}

pub fn variational_state(
    spec: &TfimSpec,
    angles: &VariationalAngles,
    initial: &PureState,
) -> Result<PureState> {
    spec.validate()?;
    angles.validate()?;
    if initial.n_qubits() != spec.n_qubits {
        return Err(Error::Dimension(format!(
            "initial state has {} qubits, spec has {}",
            initial.n_qubits(),
            spec.n_qubits
        )));
    }
    let mut psi = initial.amplitudes().to_vec();
    evolve_in_place(spec, &spec.ising_diagonal(), &angles.gamma, &angles.delta, &mut psi);
    PureState::new(psi)
}

/// Applies the circuit for `angles` in reverse with negated angles, undoing
/// [`variational_state`].
pub fn inverse_variational_state(
    spec: &TfimSpec,
    angles: &VariationalAngles,
    state: &PureState,
) -> Result<PureState> {
    spec.validate()?;
    angles.validate()?;
    let n = spec.n_qubits;
    let diag = spec.ising_diagonal();
    let mut psi = state.amplitudes().to_vec();
    for (&g, &d) in angles.gamma.iter().zip(&angles.delta).rev() {
        let (s, c) = (-d * spec.h).sin_cos();
        let rx: Mat2 = [
            C64::new(c, 0.0),
            C64::new(0.0, s),
            C64::new(0.0, s),
            C64::new(c, 0.0),
        ];
        for q in 0..n {
            apply_single_qubit_to_vector(&mut psi, n, q, &rx);
        }
        for (a, &e) in psi.iter_mut().zip(&diag) {
            *a *= C64::from_polar(1.0, g * e);
        }
    }
    PureState::new(psi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedAngles {
    /// `None` for depth zero, where the circuit is the identity.
    pub angles: Option<VariationalAngles>,
    pub energy: f64,
    pub ground_energy: f64,
    pub fidelity: f64,
    pub converged: bool,
    /// Best energy after each restart, in restart order.
    pub restart_energies: Vec<f64>,
}

impl OptimizedAngles {
    pub fn residual_energy(&self) -> f64 {
        self.energy - self.ground_energy
    }

    /// Running minimum of the restart energies.
    pub fn best_of_k(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.restart_energies
            .iter()
            .map(|&e| {
                best = best.min(e);
                best
            })
            .collect()
    }
}

pub const DEFAULT_RESTARTS: usize = 16;

struct CircuitEnergy<'a> {
    spec: &'a TfimSpec,
    diag: &'a [f64],
    initial: &'a [C64],
}

impl CircuitEnergy<'_> {
    fn eval(&self, x: &[f64]) -> f64 {
        let p = x.len() / 2;
        let mut psi = self.initial.to_vec();
        evolve_in_place(self.spec, self.diag, &x[..p], &x[p..], &mut psi);
        self.spec.energy(&psi)
    }
}

impl CostFunction for CircuitEnergy<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(x))
    }
}

/// Wraps into `(-pi, pi]`.
fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

fn nelder_mead(cost: &CircuitEnergy<'_>, start: Vec<f64>, step: f64) -> (Vec<f64>, f64, bool) {
    let dim = start.len();
    let mut simplex = vec![start.clone()];
    for k in 0..dim {
        let mut v = start.clone();
        v[k] += step;
        simplex.push(v);
    }
    let solver = match NelderMead::new(simplex).with_sd_tolerance(1e-13) {
        Ok(s) => s,
        Err(_) => return (start.clone(), cost.eval(&start), false),
    };
    let max_iters = 4000 * dim as u64;
    match Executor::new(
        CircuitEnergy {
            spec: cost.spec,
            diag: cost.diag,
            initial: cost.initial,
        },
        solver,
    )
    .configure(|s| s.max_iters(max_iters))
    .run()
    {
        Ok(res) => {
            let st = res.state();
            let converged = matches!(
                st.get_termination_status(),
                TerminationStatus::Terminated(argmin::core::TerminationReason::SolverConverged)
            );
            let x = st.get_best_param().cloned().unwrap_or(start);
            let e = st.get_best_cost();
            (x, e, converged)
        }
        Err(_) => (start.clone(), cost.eval(&start), false),
    }
}

/// Multi-start simplex minimisation of the circuit energy from `|+>^N`.
///
/// Each restart draws its starting point uniformly from `(-pi, pi]^{2p}`
/// with a stream derived from `(seed, restart)` and is refined by a second
/// simplex pass from its own optimum. The best restart wins; ties go to the
/// lowest restart index.
pub fn optimize_angles(spec: &TfimSpec, p: usize, seed: u64) -> Result<OptimizedAngles> {
    optimize_angles_with(spec, p, seed, DEFAULT_RESTARTS)
}

pub fn optimize_angles_with(
    spec: &TfimSpec,
    p: usize,
    seed: u64,
    restarts: usize,
) -> Result<OptimizedAngles> {
    spec.validate()?;
    let ground = tfim_ground_state(spec)?;
    let initial = PureState::plus(spec.n_qubits)?;
    if p == 0 {
        let energy = spec.energy(initial.amplitudes());
        return Ok(OptimizedAngles {
            angles: None,
            energy,
            ground_energy: ground.energy,
            fidelity: initial.fidelity(&ground.state),
            converged: true,
            restart_energies: vec![energy],
        });
    }
    if restarts == 0 {
        return Err(Error::InvalidConfig("at least one restart required".into()));
    }
    let diag = spec.ising_diagonal();
    let cost = CircuitEnergy {
        spec,
        diag: &diag,
        initial: initial.amplitudes(),
    };
    let results: Vec<(Vec<f64>, f64, bool)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64, 0x0A46]));
            let start: Vec<f64> = (0..2 * p)
                .map(|_| wrap_angle(rng.random_range(-PI..PI)))
                .collect();
            let (x1, _, _) = nelder_mead(&cost, start, 0.4);
            let (x2, e2, c2) = nelder_mead(&cost, x1, 0.05);
            (x2, e2, c2)
        })
        .collect();
    let mut best = 0;
    for (k, r) in results.iter().enumerate() {
        if r.1 < results[best].1 {
            best = k;
        }
    }
    let (x, energy, converged) = results[best].clone();
    let angles = VariationalAngles::from_flat(&x.iter().map(|&a| wrap_angle(a)).collect::<Vec<_>>());
    let state = variational_state(spec, &angles, &initial)?;
    Ok(OptimizedAngles {
        angles: Some(angles),
        energy,
        ground_energy: ground.energy,
        fidelity: state.fidelity(&ground.state),
        converged,
        restart_energies: results.iter().map(|r| r.1).collect(),
    })
}

/// On-disk cache of optimised angles keyed by `(N, p, J, h, boundary, seed)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AngleCache {
    entries: BTreeMap<String, OptimizedAngles>,
}

impl AngleCache {
    pub fn key(spec: &TfimSpec, p: usize, seed: u64) -> String {
        format!(
            "N={};p={};J={:?};h={:?};boundary={};seed={}",
            spec.n_qubits, p, spec.j, spec.h, spec.boundary, seed
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
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

    pub fn get(&self, spec: &TfimSpec, p: usize, seed: u64) -> Option<&OptimizedAngles> {
        self.entries.get(&Self::key(spec, p, seed))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_or_optimize(
        &mut self,
        spec: &TfimSpec,
        p: usize,
        seed: u64,
    ) -> Result<OptimizedAngles> {
        let key = Self::key(spec, p, seed);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(hit.clone());
        }
        let fresh = optimize_angles(spec, p, seed)?;
        self.entries.insert(key, fresh.clone());
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::{kron, pauli_x, pauli_z};

    fn open(n: usize, j: f64, h: f64) -> TfimSpec {
        TfimSpec {
            n_qubits: n,
            j,
            h,
            boundary: Boundary::Open,
        }
    }

    #[test]
    fn ghz_small_cases() {
        let g1 = ghz(1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((g1.amplitudes()[0].re - r).abs() < 1e-15);
        assert!((g1.amplitudes()[1].re - r).abs() < 1e-15);
        let g3 = ghz(3).unwrap();
        for (k, a) in g3.amplitudes().iter().enumerate() {
            let expect = if k == 0 || k == 7 { r } else { 0.0 };
            assert!((a.re - expect).abs() < 1e-15 && a.im == 0.0);
        }
        assert!(ghz(13).is_err());
    }

    #[test]
    fn classical_ising_hamiltonian() {
        let h = tfim_hamiltonian(&open(2, 1.0, 0.0)).unwrap();
        assert_eq!(h, ComplexMatrix::from_diagonal(&[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn free_spin_hamiltonian() {
        let h = tfim_hamiltonian(&open(2, 0.0, 1.0)).unwrap();
        let id = ComplexMatrix::identity(2);
        let expect = (&kron(&pauli_x(), &id) + &kron(&id, &pauli_x())).scale_real(-1.0);
        assert!(h.max_abs_diff(&expect) < 1e-15);
        let g = tfim_ground_state(&open(2, 0.0, 1.0)).unwrap();
        assert!((g.energy + 2.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_matches_kron_construction() {
        for boundary in [Boundary::Open, Boundary::Periodic] {
            let spec = TfimSpec {
                n_qubits: 4,
                j: 0.7,
                h: 1.3,
                boundary,
            };
            let n = spec.n_qubits;
            let single = |op: &ComplexMatrix, q: usize| {
                let id = ComplexMatrix::identity(2);
                let mut m = ComplexMatrix::identity(1);
                for k in 0..n {
                    m = kron(&m, if k == q { op } else { &id });
                }
                m
            };
            let mut h = ComplexMatrix::zeros(16);
            for (a, b) in spec.bonds() {
                h.add_scaled(&single(&pauli_z(), a).matmul(&single(&pauli_z(), b)), -spec.j);
            }
            for q in 0..n {
                h.add_scaled(&single(&pauli_x(), q), -spec.h);
            }
            assert!(tfim_hamiltonian(&spec).unwrap().max_abs_diff(&h) < 1e-14);
        }
    }

    #[test]
    fn ground_state_limits() {
        let para = tfim_ground_state(&open(2, 1.0, 1e3)).unwrap();
        assert!(para.state.fidelity(&PureState::plus(2).unwrap()) > 1.0 - 1e-3);

        let ferro = tfim_ground_state(&open(2, 1.0, 0.0)).unwrap();
        assert_eq!(ferro.degeneracy, 2);
        let a = ferro.state.amplitudes();
        assert!(a[1].norm() < 1e-12 && a[2].norm() < 1e-12);
        // deterministic choice: projection of |00>
        assert!((a[0].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ground_state_phase_is_fixed() {
        let g = tfim_ground_state(&TfimSpec::critical(4)).unwrap();
        let first = g.state.amplitudes().iter().find(|a| a.norm() > 1e-12).unwrap();
        assert!(first.im.abs() < 1e-14 && first.re > 0.0);
        assert_eq!(g.degeneracy, 1);
    }

    #[test]
    fn energy_matches_dense_expectation() {
        let spec = TfimSpec::critical(5);
        let h = tfim_hamiltonian(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<C64> = (0..32)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let psi = PureState::normalized(v).unwrap();
        let a = psi.amplitudes();
        let mut e = ZERO;
        for i in 0..32 {
            for j in 0..32 {
                e += a[i].conj() * h[(i, j)] * a[j];
            }
        }
        assert!((spec.energy(a) - e.re).abs() < 1e-12);
    }

    #[test]
    fn zero_angles_are_identity() {
        let spec = TfimSpec::critical(3);
        let init = PureState::plus(3).unwrap();
        let a = VariationalAngles::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        let out = variational_state(&spec, &a, &init).unwrap();
        assert!((out.fidelity(&init) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn one_layer_matches_dense_exponentials() {
        let spec = open(2, 1.0, 1.0);
        let init = PureState::plus(2).unwrap();
        let a = VariationalAngles::new(vec![0.3], vec![0.3]).unwrap();
        let out = variational_state(&spec, &a, &init).unwrap();

        let expm = |h: &ComplexMatrix, t: f64| {
            let e = hermitian_eig(h).unwrap();
            let d = h.dim();
            let mut u = ComplexMatrix::zeros(d);
            for k in 0..d {
                let ph = C64::from_polar(1.0, -t * e.eigenvalues[k]);
                for i in 0..d {
                    for j in 0..d {
                        u[(i, j)] += e.eigenvectors[(i, k)] * ph * e.eigenvectors[(j, k)].conj();
                    }
                }
            }
            u
        };
        let ha = kron(&pauli_z(), &pauli_z()).scale_real(-1.0);
        let id = ComplexMatrix::identity(2);
        let hb = (&kron(&pauli_x(), &id) + &kron(&id, &pauli_x())).scale_real(-1.0);
        let u = expm(&hb, 0.3).matmul(&expm(&ha, 0.3));
        let psi0 = init.amplitudes();
        let expect: Vec<C64> = (0..4)
            .map(|i| (0..4).map(|j| u[(i, j)] * psi0[j]).sum())
            .collect();
        for (x, y) in out.amplitudes().iter().zip(&expect) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn depth_zero_energy_is_minus_hn() {
        let spec = TfimSpec::critical(4);
        let r = optimize_angles(&spec, 0, 1).unwrap();
        assert!((r.energy + 4.0).abs() < 1e-12);
        assert!(r.angles.is_none());
    }

    #[test]
    fn exact_preparation_at_half_depth() {
        let spec = TfimSpec::critical(4);
        let r = optimize_angles(&spec, 2, 7).unwrap();
        assert!(r.residual_energy() <= 1e-6, "residual {}", r.residual_energy());
        assert!(r.fidelity >= 0.999);
        let p1 = optimize_angles(&spec, 1, 7).unwrap();
        assert!(p1.residual_energy() > r.residual_energy());
    }

    #[test]
    fn shallow_optimum_matches_grid_search() {
        let spec = TfimSpec::critical(4);
        let init = PureState::plus(4).unwrap();
        let mut grid_best = f64::INFINITY;
        let steps = 120;
        for a in 0..steps {
            for b in 0..steps {
                let g = -PI + 2.0 * PI * a as f64 / steps as f64;
                let d = -PI + 2.0 * PI * b as f64 / steps as f64;
                let ang = VariationalAngles::new(vec![g], vec![d]).unwrap();
                let psi = variational_state(&spec, &ang, &init).unwrap();
                grid_best = grid_best.min(spec.energy(psi.amplitudes()));
            }
        }
        let r = optimize_angles(&spec, 1, 3).unwrap();
        // the simplex optimum is at least as good as the grid, up to grid resolution
        assert!(r.energy <= grid_best + 1e-9);
        assert!(r.energy > grid_best - 0.05);
        assert!(r.residual_energy() > 1e-3);
    }

    #[test]
    fn restart_best_is_monotone() {
        let r = optimize_angles(&TfimSpec::critical(4), 1, 11).unwrap();
        let best = r.best_of_k();
        assert_eq!(best.len(), DEFAULT_RESTARTS);
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*best.last().unwrap(), r.energy);
    }

    #[test]
    fn optimisation_is_deterministic() {
        let spec = TfimSpec::critical(4);
        let a = optimize_angles(&spec, 1, 5).unwrap();
        let b = optimize_angles(&spec, 1, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn angle_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("angles.json");
        let spec = TfimSpec::critical(4);
        let mut cache = AngleCache::load(&path).unwrap();
        assert!(cache.is_empty());
        let r = cache.get_or_optimize(&spec, 1, 2).unwrap();
        cache.save(&path).unwrap();
        let loaded = AngleCache::load(&path).unwrap();
        assert_eq!(loaded.get(&spec, 1, 2), Some(&r));
        assert!(loaded.get(&spec, 1, 3).is_none());
    }

    #[test]
    fn mixing_weight_hits_target_purity() {
        let w = DensityMatrix::mixing_for_purity(3, 0.8).unwrap();
        let rho = DensityMatrix::with_white_noise(&ghz(3).unwrap(), w).unwrap();
        let m = rho.matrix();
        let p = m.trace_product(m).re;
        assert!((p - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
