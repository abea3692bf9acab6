//! Exact oracles: quantum Fisher information, its polynomial lower-bound
//! series in spectral and trace-polynomial form, purity, and the
//! k-producibility thresholds `Gamma(N, k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qmath::{hermitian_eig, ComplexMatrix, DiagonalOperator, SpectralDecomposition, C64};

/// Pairs with `lambda_mu + lambda_nu` at or below this are skipped.
pub const PAIR_CUTOFF: f64 = 1e-12;
/// Eigenvalues in `[-NEGATIVE_CLAMP, 0)` are clipped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-8;
pub const TRACE_TOL: f64 = 1e-8;

/// Generator of the phase rotation.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Diagonal(DiagonalOperator),
    Dense(ComplexMatrix),
}

impl Generator {
    pub fn collective_z(n_qubits: usize) -> Result<Self> {
        Ok(Self::Diagonal(DiagonalOperator::collective_z(n_qubits)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.dim(),
            Self::Dense(m) => m.dim(),
        }
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        match self {
            Self::Diagonal(d) => d.to_dense(),
            Self::Dense(m) => m.clone(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::Dimension(format!(
                "generator dim {} vs state dim {dim}",
                self.dim()
            )));
        }
        if let Self::Dense(m) = self {
            let defect = m.hermiticity_defect();
            if defect > 1e-10 {
                return Err(Error::NotHermitian { deviation: defect });
            }
        }
        Ok(())
    }

    /// `A X` for a dense `X`.
    fn left_mul(&self, x: &ComplexMatrix) -> ComplexMatrix {
        match self {
            Self::Diagonal(d) => {
                let n = x.dim();
                let mut out = x.clone();
                for (i, &a) in d.diagonal().iter().enumerate() {
                    for v in &mut out.data_mut()[i * n..(i + 1) * n] {
                        *v *= a;
                    }
                }
                out
            }
            Self::Dense(m) => m.matmul(x),
        }
    }

    /// `Tr(X A Y A)`
    pub fn trace_xaya(&self, x: &ComplexMatrix, y: &ComplexMatrix) -> C64 {
        match self {
            Self::Diagonal(d) => {
                let a = d.diagonal();
                let n = x.dim();
                let xd = x.data();
                let yd = y.data();
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    for l in 0..n {
                        acc += xd[k * n + l] * yd[l * n + k] * (a[l] * a[k]);
                    }
                }
                acc
            }
            Self::Dense(m) => x.matmul(m).trace_product(&y.matmul(m)),
        }
    }
}

/// Eigendecomposition of a density matrix with the negative-eigenvalue
/// clamp applied and the spectrum renormalised.
pub fn checked_spectrum(rho: &ComplexMatrix) -> Result<SpectralDecomposition> {
    let trace = rho.trace().re;
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(Error::BadTrace { trace });
    }
    let mut eig = hermitian_eig(rho)?;
    if let Some(&min) = eig.eigenvalues.last() {
        if min < -NEGATIVE_CLAMP {
            return Err(Error::NotPositive { eigenvalue: min });
        }
    }
    for l in &mut eig.eigenvalues {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let total: f64 = eig.eigenvalues.iter().sum();
    for l in &mut eig.eigenvalues {
        *l /= total;
    }
    Ok(eig)
}

/// `|<mu|A|nu>|^2` for all eigenvector pairs.
fn generator_in_eigenbasis(eig: &SpectralDecomposition, a: &Generator) -> ComplexMatrix {
    let v = &eig.eigenvectors;
    v.adjoint().matmul(&a.left_mul(v))
}

fn pair_sum(rho: &ComplexMatrix, a: &Generator, weight: impl Fn(f64, f64) -> f64) -> Result<f64> {
    a.check(rho.dim())?;
    let eig = checked_spectrum(rho)?;
    let am = generator_in_eigenbasis(&eig, a);
    let lam = &eig.eigenvalues;
    let d = lam.len();
    let mut total = 0.0;
    for mu in 0..d {
        for nu in 0..d {
            let s = lam[mu] + lam[nu];
            if s <= PAIR_CUTOFF {
                continue;
            }
            total += weight(lam[mu], lam[nu]) * am[(mu, nu)].norm_sqr();
        }
    }
    Ok(2.0 * total)
}

/// `F_Q = 2 sum_{mu,nu} (l_mu - l_nu)^2 / (l_mu + l_nu) |A_{mu nu}|^2`
pub fn qfi_exact(rho: &ComplexMatrix, a: &Generator) -> Result<f64> {
    pair_sum(rho, a, |x, y| (x - y).powi(2) / (x + y))
}

/// `F_n = 2 sum_{l<=n} sum_{mu,nu} (l_mu - l_nu)^2 (1 - l_mu - l_nu)^l |A_{mu nu}|^2`
pub fn lower_bound_spectral(rho: &ComplexMatrix, a: &Generator, n: usize) -> Result<f64> {
    pair_sum(rho, a, |x, y| {
        let r = 1.0 - x - y;
        let geom: f64 = (0..=n).map(|l| r.powi(l as i32)).sum();
        (x - y).powi(2) * geom
    })
}

/// All of `F_0 ..= F_n` from one decomposition.
pub fn lower_bounds_spectral(rho: &ComplexMatrix, a: &Generator, n: usize) -> Result<Vec<f64>> {
    a.check(rho.dim())?;
    let eig = checked_spectrum(rho)?;
    let am = generator_in_eigenbasis(&eig, a);
    let lam = &eig.eigenvalues;
    let d = lam.len();
    let mut per_order = vec![0.0; n + 1];
    for mu in 0..d {
        for nu in 0..d {
            let s = lam[mu] + lam[nu];
            if s <= PAIR_CUTOFF {
                continue;
            }
            let base = (lam[mu] - lam[nu]).powi(2) * am[(mu, nu)].norm_sqr();
            let r = 1.0 - s;
            let mut rl = 1.0;
            for term in per_order.iter_mut() {
                *term += base * rl;
                rl *= r;
            }
        }
    }
    let mut acc = 0.0;
    Ok(per_order
        .into_iter()
        .map(|t| {
            acc += 2.0 * t;
            acc
        })
        .collect())
}

pub fn binomial(n: i64, k: i64) -> f64 {
    if k < 0 || n < 0 || k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// `C_m^(q) = binom(q, m) - 2 binom(q, m-1) + binom(q, m-2)` for `m = 0..=q+2`.
pub fn series_coefficients(q: usize) -> Vec<f64> {
    let q = q as i64;
    (0..=q + 2)
        .map(|m| binomial(q, m) - 2.0 * binomial(q, m - 1) + binomial(q, m - 2))
        .collect()
}

/// Weight of `Tr(rho^{q+2-m} A rho^m A)` in `F_n` as a flat list of
/// `(q, m, coefficient)` with the outer prefactor folded in.
pub fn trace_polynomial_terms(n: usize) -> Vec<(usize, usize, f64)> {
    let mut terms = Vec::new();
    for q in 0..=n {
        let outer = 2.0 * binomial(n as i64 + 1, q as i64 + 1) * if q % 2 == 0 { 1.0 } else { -1.0 };
        for (m, c) in series_coefficients(q).into_iter().enumerate() {
            if c != 0.0 {
                terms.push((q, m, outer * c));
            }
        }
    }
    terms
}

/// Trace-polynomial evaluation without positivity checks; usable on
/// Hermitian estimates that are not density matrices.
pub fn trace_polynomial_unchecked(rho: &ComplexMatrix, a: &Generator, n: usize) -> Result<f64> {
    a.check(rho.dim())?;
    let mut powers = vec![ComplexMatrix::identity(rho.dim()), rho.clone()];
    while powers.len() < n + 3 {
        let next = powers.last().unwrap().matmul(rho);
        powers.push(next);
    }
    let mut total = C64::new(0.0, 0.0);
    for (q, m, c) in trace_polynomial_terms(n) {
        total += a.trace_xaya(&powers[q + 2 - m], &powers[m]) * c;
    }
    Ok(total.re)
}

/// `F_n = 2 sum_q binom(n+1, q+1) (-1)^q sum_m C_m^(q) Tr(rho^{q+2-m} A rho^m A)`
pub fn lower_bound_trace_polynomial(rho: &ComplexMatrix, a: &Generator, n: usize) -> Result<f64> {
    let defect = rho.hermiticity_defect();
    if defect > 1e-10 {
        return Err(Error::NotHermitian { deviation: defect });
    }
    let trace = rho.trace().re;
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(Error::BadTrace { trace });
    }
    trace_polynomial_unchecked(rho, a, n)
}

/// `4 Tr(rho [rho, A] A)`, the leading term written out.
pub fn f0_commutator_form(rho: &ComplexMatrix, a: &Generator) -> Result<f64> {
    a.check(rho.dim())?;
    let ad = a.to_dense();
    let comm = &rho.matmul(&ad) - &ad.matmul(rho);
    Ok(4.0 * rho.matmul(&comm).trace_product(&ad).re)
}

pub fn purity(rho: &ComplexMatrix) -> f64 {
    rho.trace_product(rho).re
}

/// `4 (<A^2> - <A>^2)` for a pure state.
pub fn pure_state_qfi(psi: &[C64], a: &Generator) -> Result<f64> {
    a.check(psi.len())?;
    let ad = a.to_dense();
    let apsi: Vec<C64> = (0..psi.len())
        .map(|i| ad.row(i).iter().zip(psi).map(|(x, y)| x * y).sum())
        .collect();
    let mean: f64 = psi.iter().zip(&apsi).map(|(p, q)| (p.conj() * q).re).sum();
    let second: f64 = apsi.iter().map(|q| q.norm_sqr()).sum();
    Ok(4.0 * (second - mean * mean))
}

/// `floor(N/k) k^2 + (N - floor(N/k) k)^2`
pub fn witness_gamma(n_qubits: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n_qubits {
        return Err(Error::InvalidConfig(format!(
            "witness needs 1 <= k <= N, got k={k}, N={n_qubits}"
        )));
    }
    let full = n_qubits / k;
    let rest = n_qubits - full * k;
    Ok((full * k * k + rest * rest) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessThresholds {
    pub n_qubits: usize,
    /// `gamma[k - 1] = Gamma(N, k)`
    pub gamma: Vec<f64>,
}

impl WitnessThresholds {
    pub fn new(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidConfig("need at least one qubit".into()));
        }
        let gamma = (1..=n_qubits)
            .map(|k| witness_gamma(n_qubits, k))
            .collect::<Result<_>>()?;
        Ok(Self { n_qubits, gamma })
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma[k - 1]
    }

    /// Threshold for genuine multipartite entanglement from the formula,
    /// `Gamma(N, N-1)`, which equals `(N-1)^2 + 1` for `N >= 3`.
    pub fn gme_formula(&self) -> f64 {
        self.gamma(self.n_qubits.saturating_sub(1).max(1))
    }

    /// The alternative value `(N-1)^2` quoted alongside figures.
    pub fn gme_caption(&self) -> f64 {
        ((self.n_qubits - 1) * (self.n_qubits - 1)) as f64
    }

    /// Largest entanglement depth certified by a value that exceeds the
    /// thresholds: `1 + max{k : value > Gamma(N, k)}`, or 1 if none.
    pub fn certified_depth(&self, value: f64) -> usize {
        (1..=self.n_qubits)
            .filter(|&k| value > self.gamma(k))
            .max()
            .map_or(1, |k| (k + 1).min(self.n_qubits))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiReport {
    pub f_q: f64,
    /// `bounds[n] = F_n`
    pub bounds: Vec<f64>,
    pub n_max: usize,
}

impl QfiReport {
    pub fn compute(rho: &ComplexMatrix, a: &Generator, n_max: usize) -> Result<Self> {
        Ok(Self {
            f_q: qfi_exact(rho, a)?,
            bounds: lower_bounds_spectral(rho, a, n_max)?,
            n_max,
        })
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.bounds.windows(2).all(|w| w[0] <= w[1] + slack)
            && self.bounds.last().is_none_or(|&f| f <= self.f_q + slack)
    }
}
