//! Dense complex linear algebra on qubit registers.
//!
//! Basis-state index convention: qubit 0 is the most significant bit of the
//! index, so the bitstring `s_0 s_1 ... s_{N-1}` read left to right is the
//! binary expansion of the index.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest register an operator may act on.
pub const MAX_QUBITS: usize = 12;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Returns `log2(dim)` when `dim` is a power of two.
pub fn qubits_for_dim(dim: usize) -> Option<usize> {
    if dim.is_power_of_two() {
        Some(dim.trailing_zeros() as usize)
    } else {
        None
    }
}

pub fn check_cap(n_qubits: usize) -> Result<()> {
    if n_qubits > MAX_QUBITS {
        Err(Error::CapExceeded {
            n_qubits,
            cap: MAX_QUBITS,
        })
    } else {
        Ok(())
    }
}

/// Square complex matrix in row-major layout.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim, self.dim)?;
        if self.dim <= 8 {
            for i in 0..self.dim {
                let row: Vec<String> = (0..self.dim)
                    .map(|j| {
                        let z = self[(i, j)];
                        format!("{:+.4}{:+.4}i", z.re, z.im)
                    })
                    .collect();
                writeln!(f, "  [{}]", row.join(", "))?;
            }
        }
        Ok(())
    }
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(dim, data)
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// `|psi><psi|`
    pub fn outer(psi: &[C64]) -> Self {
        let dim = psi.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = psi[i] * psi[j].conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_qubits(&self) -> Option<usize> {
        qubits_for_dim(self.dim)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.data[i * d + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn diagonal_real(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.data[i * self.dim + i].re).collect()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest elementwise deviation `|M_ij - conj(M_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                let dev = (self.data[i * d + j] - self.data[j * d + i].conj()).norm();
                worst = worst.max(dev);
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    /// `(M + M^dagger) / 2`
    pub fn hermitize(&self) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for i in 0..d {
            for j in i..d {
                let avg = (self.data[i * d + j] + self.data[j * d + i].conj()) * 0.5;
                out.data[i * d + j] = avg;
                out.data[j * d + i] = avg.conj();
            }
        }
        out
    }

    /// Dense product. Uses the i-k-j ordering so the inner loop runs over
    /// contiguous rows of both `other` and the output.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let d = self.dim;
        let mut out = vec![ZERO; d * d];
        for i in 0..d {
            let out_row = &mut out[i * d..(i + 1) * d];
            for k in 0..d {
                let a = self.data[i * d + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * d..(k + 1) * d];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    o.re += a.re * b.re - a.im * b.im;
                    o.im += a.re * b.im + a.im * b.re;
                }
            }
        }
        Self { dim: d, data: out }
    }

    /// `Tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut acc = ZERO;
        for k in 0..d {
            for l in 0..d {
                acc += self.data[k * d + l] * other.data[l * d + k];
            }
        }
        acc
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let d = m.nrows();
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[i * d + j] = m[(i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim);
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ZERO, -I, I, ZERO]).unwrap()
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, vec![ONE, ZERO, ZERO, -ONE]).unwrap()
}

/// Swap operator on two copies of one qubit.
pub fn swap_two_qubit() -> ComplexMatrix {
    let mut s = ComplexMatrix::zeros(4);
    for a in 0..2 {
        for b in 0..2 {
            // |a b> -> |b a>
            s[((b << 1) | a, (a << 1) | b)] = ONE;
        }
    }
    s
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (da, db) = (a.dim, b.dim);
    let d = da * db;
    let mut out = ComplexMatrix::zeros(d);
    for i in 0..da {
        for j in 0..da {
            let x = a.data[i * da + j];
            if x == ZERO {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    out.data[(i * db + k) * d + j * db + l] = x * b.data[k * db + l];
                }
            }
        }
    }
    out
}

/// Kronecker product in register order: the first factor acts on the most
/// significant qubits.
pub fn tensor_product(factors: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let Some((first, rest)) = factors.split_first() else {
        return Err(Error::Dimension("empty tensor product".into()));
    };
    let mut total_dim: usize = 1;
    for f in factors {
        total_dim = total_dim
            .checked_mul(f.dim)
            .ok_or_else(|| Error::Dimension("tensor product dimension overflow".into()))?;
        if total_dim > (1usize << MAX_QUBITS) {
            return Err(Error::CapExceeded {
                n_qubits: qubits_for_dim(total_dim.next_power_of_two()).unwrap_or(usize::MAX),
                cap: MAX_QUBITS,
            });
        }
    }
    Ok(rest.iter().fold(first.clone(), |acc, f| kron(&acc, f)))
}

/// Real operator that is diagonal in the computational basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalOperator {
    diagonal: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::Dimension("empty diagonal".into()));
        }
        Ok(Self { diagonal })
    }

    /// `A = 1/2 * sum_j sigma^z_j`; the entry for basis index `k` is
    /// `(N - 2 * popcount(k)) / 2`.
    pub fn collective_z(n_qubits: usize) -> Result<Self> {
        check_cap(n_qubits)?;
        let dim = 1usize << n_qubits;
        let diagonal = (0..dim)
            .map(|k| (n_qubits as f64 - 2.0 * (k.count_ones() as f64)) / 2.0)
            .collect();
        Ok(Self { diagonal })
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&self.diagonal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// `D * M` (row scaling) or `M * D` (column scaling).
pub fn apply_diagonal(m: &ComplexMatrix, d: &DiagonalOperator, side: Side) -> Result<ComplexMatrix> {
    if m.dim != d.dim() {
        return Err(Error::Dimension(format!(
            "matrix dim {} vs diagonal dim {}",
            m.dim,
            d.dim()
        )));
    }
    let n = m.dim;
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            let s = match side {
                Side::Left => d.diagonal[i],
                Side::Right => d.diagonal[j],
            };
            out.data[i * n + j] *= s;
        }
    }
    Ok(out)
}

/// `[M, D] = M D - D M`, entrywise `M_ij (d_j - d_i)`.
pub fn commutator_with_diagonal(m: &ComplexMatrix, d: &DiagonalOperator) -> Result<ComplexMatrix> {
    let right = apply_diagonal(m, d, Side::Right)?;
    let left = apply_diagonal(m, d, Side::Left)?;
    Ok(&right - &left)
}

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Sorted in descending order.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: ComplexMatrix,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = self.eigenvectors.dim;
        let mut out = ComplexMatrix::zeros(d);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            for i in 0..d {
                let vi = self.eigenvectors[(i, k)] * lam;
                for j in 0..d {
                    out.data[i * d + j] += vi * self.eigenvectors[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn eigenvector(&self, k: usize) -> Vec<C64> {
        let d = self.eigenvectors.dim;
        (0..d).map(|i| self.eigenvectors[(i, k)]).collect()
    }
}

pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigendecomposition of a Hermitian matrix. The input is symmetrized before
/// decomposition; inputs further than `1e-10` from Hermitian are rejected.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<SpectralDecomposition> {
    let defect = m.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotHermitian { deviation: defect });
    }
    let h = m.hermitize().to_nalgebra();
    let eig = nalgebra::linalg::SymmetricEigen::try_new(h, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let d = m.dim;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = ComplexMatrix::zeros(d);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..d {
            vecs[(i, col)] = eig.eigenvectors[(i, k)];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors: vecs,
    })
}

/// Haar average of `(U^dagger)^{(x)2} Q U^{(x)2}` over single-qubit unitaries:
/// `1/3 [(Tr Q - Tr(SQ)/2) 1 + (Tr(SQ) - Tr Q/2) S]`.
pub fn twirl_two_copy(q: &ComplexMatrix) -> Result<ComplexMatrix> {
    if q.dim != 4 {
        return Err(Error::Dimension(format!(
            "two-copy twirl expects a 4x4 operator, got {}x{}",
            q.dim, q.dim
        )));
    }
    let swap = swap_two_qubit();
    let tr_q = q.trace();
    let tr_sq = swap.trace_product(q);
    let id_coeff = (tr_q - tr_sq * 0.5) / 3.0;
    let swap_coeff = (tr_sq - tr_q * 0.5) / 3.0;
    let mut out = ComplexMatrix::identity(4).scale(id_coeff);
    out = &out + &swap.scale(swap_coeff);
    Ok(out)
}

/// Single-qubit operator as a row-major 2x2 array.
pub type Mat2 = [C64; 4];

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub fn mat2_adjoint(a: &Mat2) -> Mat2 {
    [a[0].conj(), a[2].conj(), a[1].conj(), a[3].conj()]
}

pub fn mat2_to_matrix(a: &Mat2) -> ComplexMatrix {
    ComplexMatrix::from_vec(2, a.to_vec()).unwrap()
}

/// Applies a single-qubit operator to `qubit` of a state vector in place.
pub fn apply_single_qubit_to_vector(psi: &mut [C64], n_qubits: usize, qubit: usize, op: &Mat2) {
    let stride = 1usize << (n_qubits - 1 - qubit);
    let dim = psi.len();
    let mut base = 0;
    while base < dim {
        for k in base..base + stride {
            let a = psi[k];
            let b = psi[k + stride];
            psi[k] = op[0] * a + op[1] * b;
            psi[k + stride] = op[2] * a + op[3] * b;
        }
        base += 2 * stride;
    }
}

/// `rho -> K rho K^dagger` with `K` acting on `qubit`.
pub fn conjugate_single_qubit(rho: &ComplexMatrix, n_qubits: usize, qubit: usize, k: &Mat2) -> ComplexMatrix {
    let d = rho.dim;
    let stride = 1usize << (n_qubits - 1 - qubit);
    let mut tmp = rho.clone();
    // rows: K * rho
    for col in 0..d {
        let mut base = 0;
        while base < d {
            for r in base..base + stride {
                let a = rho.data[r * d + col];
                let b = rho.data[(r + stride) * d + col];
                tmp.data[r * d + col] = k[0] * a + k[1] * b;
                tmp.data[(r + stride) * d + col] = k[2] * a + k[3] * b;
            }
            base += 2 * stride;
        }
    }
    // columns: (K rho) * K^dagger
    let kd = mat2_adjoint(k);
    let mut out = tmp.clone();
    for row in 0..d {
        let off = row * d;
        let mut base = 0;
        while base < d {
            for c in base..base + stride {
                let a = tmp.data[off + c];
                let b = tmp.data[off + c + stride];
                out.data[off + c] = a * kd[0] + b * kd[2];
                out.data[off + c + stride] = a * kd[1] + b * kd[3];
            }
            base += 2 * stride;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
        let data = (0..dim * dim)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        ComplexMatrix::from_vec(dim, data).unwrap()
    }

    fn random_hermitian(dim: usize, rng: &mut impl Rng) -> ComplexMatrix {
        random_matrix(dim, rng).hermitize()
    }

    fn random_unitary2(rng: &mut impl Rng) -> ComplexMatrix {
        // exp(i H) for a random Hermitian H via its eigendecomposition
        let h = random_hermitian(2, rng);
        let eig = hermitian_eig(&h).unwrap();
        let mut u = ComplexMatrix::zeros(2);
        for k in 0..2 {
            let phase = C64::from_polar(1.0, 3.0 * eig.eigenvalues[k]);
            for i in 0..2 {
                for j in 0..2 {
                    u[(i, j)] += eig.eigenvectors[(i, k)] * phase * eig.eigenvectors[(j, k)].conj();
                }
            }
        }
        u
    }

    fn dense_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        let d = a.dim();
        let mut out = ComplexMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    out[(i, j)] += a[(i, k)] * b[(k, j)];
                }
            }
        }
        out
    }

    #[test]
    fn tensor_of_identities_is_identity() {
        let id = ComplexMatrix::identity(2);
        let t = tensor_product(&[id.clone(), id]).unwrap();
        assert_eq!(t, ComplexMatrix::identity(4));
    }

    #[test]
    fn tensor_of_z_is_parity_diagonal() {
        let t = tensor_product(&[pauli_z(), pauli_z()]).unwrap();
        assert_eq!(t, ComplexMatrix::from_diagonal(&[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn tensor_of_unitaries_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unitary2(&mut rng);
        let v = random_unitary2(&mut rng);
        let uv = tensor_product(&[u, v]).unwrap();
        let prod = dense_product(&uv, &uv.adjoint());
        assert!(prod.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-12);
    }

    #[test]
    fn tensor_qubit_order_is_msb_first() {
        // X on qubit 0 of |00> gives |10>, index 2
        let x_first = tensor_product(&[pauli_x(), ComplexMatrix::identity(2)]).unwrap();
        assert_eq!(x_first[(2, 0)], ONE);
    }

    #[test]
    fn tensor_cap_is_enforced() {
        let factors = vec![ComplexMatrix::identity(2); MAX_QUBITS + 1];
        assert!(matches!(
            tensor_product(&factors),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn kron_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(2, &mut rng);
        let b = random_matrix(2, &mut rng);
        let c = random_matrix(4, &mut rng);
        let left = kron(&kron(&a, &b), &c);
        let right = kron(&a, &kron(&b, &c));
        assert!(left.max_abs_diff(&right) < 1e-12);
    }

    #[test]
    fn eig_of_diagonal() {
        let m = ComplexMatrix::from_diagonal(&[0.3, 0.7]);
        let e = hermitian_eig(&m).unwrap();
        assert!((e.eigenvalues[0] - 0.7).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn eig_of_maximally_mixed() {
        let m = ComplexMatrix::identity(4).scale_real(0.25);
        let e = hermitian_eig(&m).unwrap();
        for l in e.eigenvalues {
            assert!((l - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_random_hermitian_reconstructs_with_unitary_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2, 4, 8, 16] {
            let m = random_hermitian(dim, &mut rng);
            let e = hermitian_eig(&m).unwrap();
            let v = &e.eigenvectors;
            let vv = dense_product(&v.adjoint(), v);
            assert!(vv.max_abs_diff(&ComplexMatrix::identity(dim)) < 1e-10);
            assert!(e.reconstruct().max_abs_diff(&m) < 1e-10);
            assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = ComplexMatrix::from_real_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(hermitian_eig(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eig_density_matrix_eigenvalues_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_matrix(8, &mut rng);
        let mut rho = g.matmul(&g.adjoint());
        let t = rho.trace().re;
        rho = rho.scale_real(1.0 / t);
        let e = hermitian_eig(&rho).unwrap();
        assert!((e.eigenvalues.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn apply_diagonal_cases() {
        let d = DiagonalOperator::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let left = apply_diagonal(&ComplexMatrix::identity(4), &d, Side::Left).unwrap();
        assert_eq!(left, d.to_dense());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_matrix(4, &mut rng);
        let ones = DiagonalOperator::new(vec![1.0; 4]).unwrap();
        assert_eq!(apply_diagonal(&m, &ones, Side::Right).unwrap(), m);

        let bad = DiagonalOperator::new(vec![1.0; 3]).unwrap();
        assert!(apply_diagonal(&m, &bad, Side::Left).is_err());
    }

    #[test]
    fn commutator_by_scaling_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = DiagonalOperator::new((0..8).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .unwrap();
        for _ in 0..10 {
            let m = random_matrix(8, &mut rng);
            let fast = commutator_with_diagonal(&m, &d).unwrap();
            let dense = &dense_product(&m, &d.to_dense()) - &dense_product(&d.to_dense(), &m);
            assert!(fast.max_abs_diff(&dense) < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(16, &mut rng);
        let b = random_matrix(16, &mut rng);
        assert!(a.matmul(&b).max_abs_diff(&dense_product(&a, &b)) < 1e-12);
        let t = a.trace_product(&b) - dense_product(&a, &b).trace();
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn twirl_fixed_points() {
        let s = swap_two_qubit();
        assert!(twirl_two_copy(&s).unwrap().max_abs_diff(&s) < 1e-14);
        let id = ComplexMatrix::identity(4);
        assert!(twirl_two_copy(&id).unwrap().max_abs_diff(&id) < 1e-14);
        assert!(twirl_two_copy(&ComplexMatrix::identity(2)).is_err());
    }

    #[test]
    fn twirl_preserves_trace_and_hermiticity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let q = random_hermitian(4, &mut rng);
            let t = twirl_two_copy(&q).unwrap();
            assert!((t.trace() - q.trace()).norm() < 1e-12);
            assert!(t.is_hermitian(1e-14));
        }
    }

    #[test]
    fn conjugation_matches_dense_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_hermitian(8, &mut rng);
        let k = random_unitary2(&mut rng);
        let k2: Mat2 = [k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]];
        let id = ComplexMatrix::identity(2);
        let full = tensor_product(&[id.clone(), k.clone(), id]).unwrap();
        let dense = dense_product(&dense_product(&full, &rho), &full.adjoint());
        let fast = conjugate_single_qubit(&rho, 3, 1, &k2);
        assert!(fast.max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn collective_z_entries() {
        let a = DiagonalOperator::collective_z(3).unwrap();
        assert_eq!(a.diagonal()[0], 1.5);
        assert_eq!(a.diagonal()[7], -1.5);
        assert_eq!(a.diagonal()[0b011], -0.5);
    }
}
