//! Dense complex linear algebra and the quantum primitives built on it.
//!
//! Everything downstream (link operators, testers, subspace identification,
//! the SDP) works with the two value types defined here: [`ComplexMatrix`]
//! (row-major dense storage) and [`PureState`]. Objects are immutable after
//! construction and safe to share across threads.

mod lapack;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Dimension above which matrix products are routed to BLAS.
const GEMM_CUTOFF: usize = 32 * 32 * 32;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not Hermitian (max |H - H^dag| = {0:.3e})")]
    NotHermitian(f64),
    #[error("state norm {0} differs from 1 by more than 1e-12")]
    NotNormalized(f64),
    #[error("eigendecomposition failed to converge ({unresolved} off-diagonal elements unresolved)")]
    EigenNonConvergence { unresolved: i32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        if m * k * n >= GEMM_CUTOFF {
            return Self {
                rows: m,
                cols: n,
                data: lapack::zgemm_rowmajor(&self.data, &other.data, m, k, n),
            };
        }
        let mut out = vec![ZERO; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = self.data[i * k + p];
                if aip == ZERO {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let crow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += aip * brow[j];
                }
            }
        }
        Self {
            rows: m,
            cols: n,
            data: out,
        }
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        let mut out = vec![ZERO; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = ZERO;
            for (a, x) in row.iter().zip(v) {
                acc += a * x;
            }
            out[i] = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    /// Transpose in the computational basis (no conjugation).
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-norm deviation from unitarity, ||U^dag U - I||_max.
    pub fn unitarity_defect(&self) -> f64 {
        let p = self.adjoint().mul(self);
        p.sub(&Self::identity(self.cols)).max_abs()
    }
}

/// Kronecker product; index of A is the most significant.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = ComplexMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a.get(i, j);
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out.set(i * br + k, j * bc + l, aij * b.get(k, l));
                }
            }
        }
    }
    out
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    /// Accepts a vector already normalized to 1 within 1e-12.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n = vec_norm(&amplitudes);
        if (n - 1.0).abs() > 1e-12 {
            return Err(LinalgError::NotNormalized(n));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes an arbitrary non-zero vector. Unnormalized data stays a
    /// plain `Vec<C64>` ("branch vector") everywhere else in the crate.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let n = vec_norm(&amplitudes);
        if n == 0.0 || !n.is_finite() {
            return Err(LinalgError::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        for a in amplitudes.iter_mut() {
            *a /= n;
        }
        Ok(Self { amplitudes })
    }

    pub fn basis_state(dim: usize, index: usize) -> Self {
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Self { amplitudes }
    }

    /// Haar-random state of the given dimension.
    pub fn haar(dim: usize, rng: &mut impl Rng) -> Self {
        loop {
            let v = gaussian_vector(dim, rng);
            if let Ok(s) = Self::normalized(v) {
                return s;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }
}

/// Hermitian matrix, validated to ||H - H^dag||_max < 1e-12 on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    mat: ComplexMatrix,
}

impl HermitianMatrix {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if mat.rows != mat.cols {
            return Err(LinalgError::ShapeMismatch(format!(
                "Hermitian matrix must be square, got {}x{}",
                mat.rows, mat.cols
            )));
        }
        let defect = mat.sub(&mat.adjoint()).max_abs();
        if defect >= 1e-12 {
            return Err(LinalgError::NotHermitian(defect));
        }
        Ok(Self { mat })
    }

    /// Symmetrizes (H + H^dag)/2; for inputs that are Hermitian up to noise.
    pub fn symmetrized(mat: &ComplexMatrix) -> Self {
        assert_eq!(mat.rows, mat.cols);
        let h = mat.add(&mat.adjoint()).scale(C64::new(0.5, 0.0));
        Self { mat: h }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: ComplexMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the unitary of eigenvectors
/// (columns). Exactly diagonal input short-circuits to a sort, so diagonal
/// spectra are reproduced without floating-point drift.
pub fn eigh(h: &HermitianMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    let n = h.dim();
    let m = h.matrix();
    let mut diagonal = true;
    'scan: for i in 0..n {
        for j in 0..n {
            if i != j && m.get(i, j) != ZERO {
                diagonal = false;
                break 'scan;
            }
        }
    }
    if diagonal {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| m.get(a, a).re.partial_cmp(&m.get(b, b).re).unwrap());
        let vals: Vec<f64> = order.iter().map(|&i| m.get(i, i).re).collect();
        let mut vecs = ComplexMatrix::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            vecs.set(i, col, ONE);
        }
        return Ok((vals, vecs));
    }
    let (w, v) = lapack::zheevd_rowmajor(m.data(), n)
        .map_err(|info| LinalgError::EigenNonConvergence { unresolved: info })?;
    Ok((
        w,
        ComplexMatrix {
            rows: n,
            cols: n,
            data: v,
        },
    ))
}

/// e^{-i H t} by spectral decomposition; exact in structure for Hermitian H.
pub fn expm_i(h: &HermitianMatrix, t: f64) -> Result<ComplexMatrix> {
    let (w, v) = eigh(h)?;
    let n = h.dim();
    // V diag(e^{-i w t}) V^dag
    let mut scaled = v.clone();
    for j in 0..n {
        let phase = C64::new(0.0, -w[j] * t).exp();
        for i in 0..n {
            let x = scaled.get(i, j) * phase;
            scaled.set(i, j, x);
        }
    }
    Ok(scaled.mul(&v.adjoint()))
}

/// Haar-random unitary: Ginibre matrix, QR factorization, R-diagonal phases
/// normalized to positive reals.
pub fn haar_unitary(d: usize, rng: &mut impl Rng) -> ComplexMatrix {
    assert!(d >= 1, "haar_unitary needs d >= 1");
    let g = ComplexMatrix {
        rows: d,
        cols: d,
        data: gaussian_vector(d * d, rng)
            .into_iter()
            .map(|z| z / 2f64.sqrt())
            .collect(),
    };
    let mut q = ComplexMatrix::zeros(d, d);
    for j in 0..d {
        let mut col: Vec<C64> = (0..d).map(|i| g.get(i, j)).collect();
        // two Gram-Schmidt passes against the finished columns
        for _ in 0..2 {
            for jj in 0..j {
                let mut ip = ZERO;
                for i in 0..d {
                    ip += q.get(i, jj).conj() * col[i];
                }
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= ip * q.get(i, jj);
                }
            }
        }
        let norm = vec_norm(&col);
        // R_jj = <q_j | g_j>; rotate the column so it lands on the positive real axis
        let mut r_jj = ZERO;
        for i in 0..d {
            r_jj += (col[i] / norm).conj() * g.get(i, j);
        }
        let phase = r_jj / r_jj.norm();
        for (i, c) in col.iter().enumerate() {
            q.set(i, j, c / norm * phase);
        }
    }
    q
}

/// Gram-Schmidt step: the component of `v` orthogonal to `basis`, normalized,
/// or `None` when `v` lies in the span (residual below `tol * ||v||`).
///
/// Orthogonalizes twice for numerical stability.
pub fn orthonormal_extend(basis: &[Vec<C64>], v: &[C64], tol: f64) -> Option<Vec<C64>> {
    let norm0 = vec_norm(v);
    if norm0 == 0.0 {
        return None;
    }
    let mut r = v.to_vec();
    for _ in 0..2 {
        for b in basis {
            debug_assert_eq!(b.len(), r.len());
            let ip = vec_inner(b, &r);
            for (x, y) in r.iter_mut().zip(b) {
                *x -= ip * y;
            }
        }
    }
    let norm = vec_norm(&r);
    if norm <= tol * norm0 {
        return None;
    }
    for x in r.iter_mut() {
        *x /= norm;
    }
    Some(r)
}

/// <a|b> with the first argument conjugated.
pub fn vec_inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn gaussian_vector(n: usize, rng: &mut impl Rng) -> Vec<C64> {
    (0..n)
        .map(|_| {
            C64::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect()
}

/// Standard Pauli matrices (qubit operators used throughout protocol setup).
pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::new(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::new(
        2,
        2,
        vec![ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO],
    )
    .unwrap()
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::new(2, 2, vec![ONE, ZERO, ZERO, C64::new(-1.0, 0.0)]).unwrap()
}
